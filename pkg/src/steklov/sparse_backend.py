"""Sparse direct solver seam and the dense full-system reference solve.

The interface system only ever needs two things from a backend: factor once,
solve many times.  The default backend wraps SuperLU (scipy.sparse.linalg.splu)
with threshold partial pivoting and a choice between natural ordering and
COLAMD-style fill reduction; a different solver can be dropped in by
registering another factory under a new backend name.

The dense reference solve assembles the full collocation system explicitly
(PDE rows at interior nodes, summed normal-derivative rows at interfaces,
identity rows at Dirichlet nodes) and solves it with a dense pivoted LU.  It
exists for tests and the ``--oracle`` mode only; the production path never
materializes that matrix.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (ConfigError, NumericallySingularError, OracleCapExceededError,
                     StructurallySingularError)
from .geometry import Discretization
from .local_ops import CoefficientField, LeafTemplate

NATURAL = "natural"
FILL_REDUCING = "fill_reducing"
# T has a structurally symmetric pattern, so minimum degree on A^T + A.
_PERMC = {NATURAL: "NATURAL", FILL_REDUCING: "MMD_AT_PLUS_A"}

DEFAULT_PIVOT_THRESHOLD = 0.1
DEFAULT_ORACLE_CAP = 20_000


class SparseMatrix:
    """Square coordinate-form accumulator; duplicates sum on finalize."""

    def __init__(self, n: int):
        if n < 0:
            raise ConfigError("matrix dimension must be nonnegative")
        self.n = int(n)
        self._rows = []
        self._cols = []
        self._vals = []
        self._csr = None

    def add(self, rows, cols, vals) -> None:
        if self._csr is not None:
            raise ConfigError("matrix already finalized")
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        if not (rows.size == cols.size == vals.size):
            raise ConfigError("triplet arrays must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= self.n
                          or cols.min() < 0 or cols.max() >= self.n):
            raise ConfigError("triplet index out of range")
        self._rows.append(rows)
        self._cols.append(cols)
        self._vals.append(vals)

    def add_block(self, row_ids, col_ids, block) -> None:
        block = np.asarray(block, dtype=float)
        r = np.repeat(np.asarray(row_ids, dtype=np.int64), len(col_ids))
        c = np.tile(np.asarray(col_ids, dtype=np.int64), len(row_ids))
        self.add(r, c, block.ravel())

    def finalize(self) -> sp.csr_matrix:
        if self._csr is None:
            if self._rows:
                rows = np.concatenate(self._rows)
                cols = np.concatenate(self._cols)
                vals = np.concatenate(self._vals)
            else:
                rows = cols = np.empty(0, dtype=np.int64)
                vals = np.empty(0)
            coo = sp.coo_matrix((vals, (rows, cols)), shape=(self.n, self.n))
            csr = coo.tocsr()
            csr.sum_duplicates()
            self._csr = csr
            self._rows = self._cols = self._vals = None
        return self._csr

    @property
    def csr(self) -> sp.csr_matrix:
        return self.finalize()


@dataclass
class Factorization:
    """Reusable LU factorization handle with pivot diagnostics."""

    n: int
    ordering: str
    pivot_threshold: float
    backend: str
    smallest_pivot: float = np.inf
    growth_factor: float = 0.0
    factor_nnz: int = 0
    perm_r: Optional[np.ndarray] = None
    perm_c: Optional[np.ndarray] = None
    _solve: Callable = field(default=None, repr=False)
    _lu = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._solve(rhs)


def _superlu_factor(matrix: sp.csr_matrix, ordering: str,
                    pivot_threshold: float) -> Factorization:
    n = matrix.shape[0]
    csc = matrix.tocsc()
    amax = np.abs(csc.data).max() if csc.nnz else 0.0
    try:
        lu = spla.splu(csc, permc_spec=_PERMC[ordering],
                       diag_pivot_thresh=pivot_threshold,
                       options={"SymmetricMode": False})
    except RuntimeError as exc:
        msg = str(exc)
        if "singular" in msg.lower():
            raise NumericallySingularError(step=-1, msg=msg) from exc
        raise
    udiag = np.abs(lu.U.diagonal())
    if udiag.size and udiag.min() == 0.0:
        raise NumericallySingularError(step=int(np.argmin(udiag)))
    fact = Factorization(
        n=n, ordering=ordering, pivot_threshold=pivot_threshold, backend="superlu",
        smallest_pivot=float(udiag.min()) if udiag.size else np.inf,
        growth_factor=float(np.abs(lu.U.data).max() / amax) if amax else 0.0,
        factor_nnz=int(lu.L.nnz + lu.U.nnz),
        perm_r=lu.perm_r.copy(), perm_c=lu.perm_c.copy())
    fact._lu = lu
    fact._solve = lambda rhs: lu.solve(np.asarray(rhs, dtype=float))
    return fact


def _empty_factor(ordering: str, pivot_threshold: float) -> Factorization:
    def solve_empty(rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != 0:
            raise ConfigError("rhs dimension mismatch for empty system")
        return rhs.copy()

    return Factorization(n=0, ordering=ordering, pivot_threshold=pivot_threshold,
                         backend="empty", smallest_pivot=np.inf, growth_factor=0.0,
                         factor_nnz=0, _solve=solve_empty)


_BACKENDS = {"superlu": _superlu_factor}


def register_backend(name: str, factory) -> None:
    """Install an alternative factorization backend under ``name``."""
    _BACKENDS[name] = factory


def analyze_and_factor(matrix, ordering: str = FILL_REDUCING,
                       pivot_threshold: float = DEFAULT_PIVOT_THRESHOLD,
                       backend: str = "superlu") -> Factorization:
    """Order, factor, and wrap a square sparse matrix for repeated solves.

    Raises StructurallySingularError for an empty row or column and
    NumericallySingularError when elimination finds no acceptable pivot.
    """
    if isinstance(matrix, SparseMatrix):
        matrix = matrix.finalize()
    matrix = sp.csr_matrix(matrix)
    if matrix.shape[0] != matrix.shape[1]:
        raise ConfigError("matrix must be square")
    if ordering not in _PERMC:
        raise ConfigError(f"unknown ordering {ordering!r}")
    if matrix.shape[0] == 0:
        return _empty_factor(ordering, pivot_threshold)
    row_nnz = np.diff(matrix.indptr)
    col_nnz = np.diff(matrix.tocsc().indptr)
    if (row_nnz == 0).any() or (col_nnz == 0).any():
        empty_rows = np.flatnonzero(row_nnz == 0)
        empty_cols = np.flatnonzero(col_nnz == 0)
        raise StructurallySingularError(
            f"empty rows {empty_rows[:5].tolist()} / columns {empty_cols[:5].tolist()}")
    return _BACKENDS[backend](matrix, ordering, pivot_threshold)


def solve(factorization: Factorization, rhs: np.ndarray) -> np.ndarray:
    """Triangular solves against a prepared factorization; multi-RHS capable."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != factorization.n:
        raise ConfigError(
            f"rhs has leading dimension {rhs.shape[0]}, expected {factorization.n}")
    return factorization.solve(rhs)


def dump_coo(matrix, stream=None) -> str:
    """Write 'row col value' triplets (0-based, shortest round-trip decimals)."""
    if isinstance(matrix, SparseMatrix):
        matrix = matrix.finalize()
    coo = sp.coo_matrix(matrix)
    out = stream or io.StringIO()
    for r, c, v in zip(coo.row, coo.col, coo.data):
        out.write(f"{int(r)} {int(c)} {float(v)!r}\n")
    return out.getvalue() if stream is None else ""


# ---------------------------------------------------------------------------
# Dense full-system reference solve
# ---------------------------------------------------------------------------

def dense_full_system_oracle(disc: Discretization, coeffs: CoefficientField,
                             f: Callable, g: Callable,
                             cap: int = DEFAULT_ORACLE_CAP) -> np.ndarray:
    """Solve the assembled global collocation system densely.

    Test-only reference for the condensation pipeline: one big matrix over all
    retained nodes, pivoted dense LU, no Schur complement anywhere.
    """
    n = disc.n_total
    if n > cap:
        raise OracleCapExceededError(f"{n} retained DOFs exceed oracle cap {cap}")
    template = LeafTemplate(disc.leaf_widths, disc.p, disc.corner_mode,
                            coeffs.has_cross_terms)
    M = np.zeros((n, n))
    rhs = np.zeros(n)

    for leaf in disc.leaves:
        grid = template.leaf_grid(disc.leaf_grid1d(leaf))
        a_ii, a_ib = template.interior_blocks(coeffs, grid)
        rows = leaf.interior_ids
        M[np.ix_(rows, rows)] = a_ii
        M[np.ix_(rows, leaf.boundary_ids)] += a_ib
        rhs[rows] = f(disc.nodes[rows])

    # Interface rows: outward normal derivatives of both adjacent leaves sum.
    for leaf_id, leaf in enumerate(disc.leaves):
        for k, key in enumerate(leaf.face_keys):
            face = disc.faces[key]
            if face.kind != "interface":
                continue
            rows = face.node_ids
            block = template.face_slices[k]
            M[np.ix_(rows, leaf.interior_ids)] += template.a_bi[block]
            M[np.ix_(rows, leaf.boundary_ids)] += template.a_bb[block]

    dir_ids = disc.index_dirichlet
    M[dir_ids, dir_ids] = 1.0
    rhs[dir_ids] = g(disc.nodes[dir_ids])

    lu, piv = scipy.linalg.lu_factor(M)
    return scipy.linalg.lu_solve((lu, piv), rhs)
