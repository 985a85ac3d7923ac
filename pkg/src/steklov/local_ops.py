"""Dense per-leaf operators for tensor-product Chebyshev collocation.

Everything a single leaf box contributes to the global solve is built here:
the 1D spectral primitives (nodes, differentiation, interpolation), the
collocation matrix restricted to interior rows, the one-sided normal
derivative blocks, the interior solution operator, and the map from
Dirichlet boundary values to outward normal derivatives on the boundary.

All leaves of one mesh share the same widths and order, so the index
bookkeeping, differentiation matrices, and the operator-independent normal
derivative blocks are computed once in a :class:`LeafTemplate` and shared
read-only across workers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import CrossTermError, LeafSingularError

DROP_CORNERS = "drop"
LEGENDRE_FACES = "legendre"
CORNER_MODES = (DROP_CORNERS, LEGENDRE_FACES)

# Relative pivot floor below which the interior block is reported singular.
_PIVOT_FLOOR = 1e-14


# ---------------------------------------------------------------------------
# 1D spectral primitives
# ---------------------------------------------------------------------------

def cheb_nodes(p: int, interval: Sequence[float] = (-1.0, 1.0)) -> np.ndarray:
    """Chebyshev–Lobatto points of a degree-(p-1) grid, ascending on [a, b].

    The reference points are computed as sin(pi*(2j-n)/(2n)), which is exactly
    antisymmetric in floating point, so the mapped grid is symmetric about the
    interval midpoint.  Endpoints are pinned to a and b exactly.
    """
    if p < 2:
        raise ValueError(f"need at least 2 nodes per dimension, got p={p}")
    a, b = float(interval[0]), float(interval[1])
    n = p - 1
    j = np.arange(p)
    ref = np.sin(np.pi * (2 * j - n) / (2 * n))
    x = 0.5 * (a + b) + 0.5 * (b - a) * ref
    x[0] = a
    x[-1] = b
    return x


def cheb_diff_matrix(p: int) -> np.ndarray:
    """Differentiation matrix on the p-point Chebyshev–Lobatto grid on [-1, 1].

    Exact on polynomials of degree < p.  Built from barycentric weights; the
    diagonal uses the negated row sum so rows sum to zero exactly.
    """
    if p < 2:
        raise ValueError(f"need at least 2 nodes, got p={p}")
    x = cheb_nodes(p)
    w = _lobatto_bary_weights(p)
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    D = (w[None, :] / w[:, None]) / dx
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def legendre_nodes(n: int, interval: Sequence[float] = (-1.0, 1.0)) -> np.ndarray:
    """Gauss–Legendre points mapped to [a, b] (strictly interior, ascending)."""
    if n < 1:
        raise ValueError(f"need at least 1 node, got n={n}")
    a, b = float(interval[0]), float(interval[1])
    ref, _ = np.polynomial.legendre.leggauss(n)
    return 0.5 * (a + b) + 0.5 * (b - a) * ref


def _lobatto_bary_weights(p: int) -> np.ndarray:
    w = np.ones(p)
    w[1::2] = -1.0
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _bary_weights(x: np.ndarray) -> np.ndarray:
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    w = 1.0 / diff.prod(axis=1)
    return w / np.abs(w).max()


def interp_matrix(src: np.ndarray, dst: np.ndarray,
                  weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Barycentric Lagrange interpolation matrix from nodes src to points dst."""
    w = _bary_weights(src) if weights is None else weights
    M = np.empty((dst.size, src.size))
    for i, t in enumerate(dst):
        hit = np.flatnonzero(t == src)
        if hit.size:
            row = np.zeros(src.size)
            row[hit[0]] = 1.0
        else:
            c = w / (t - src)
            row = c / c.sum()
        M[i] = row
    return M


def face_interp_cheb_to_legendre(p: int, face_dim: int = 1):
    """Interpolation between Chebyshev and Gauss–Legendre face grids.

    Returns (forward, reverse): forward evaluates the tensor interpolant of
    p^face_dim Chebyshev face data at the (p-1)^face_dim Gauss points; reverse
    interpolates Gauss data back to the Chebyshev grid.  forward @ reverse is
    the identity because the reverse interpolant has per-dimension degree
    p-2 < p and is therefore reproduced exactly by the forward pass.
    """
    if p < 4:
        raise ValueError(f"face reinterpolation needs p >= 4, got p={p}")
    xc = cheb_nodes(p)
    xg = legendre_nodes(p - 1)
    f1 = interp_matrix(xc, xg, weights=_lobatto_bary_weights(p))
    r1 = interp_matrix(xg, xc)
    forward, reverse = f1, r1
    for _ in range(face_dim - 1):
        forward = np.kron(forward, f1)
        reverse = np.kron(reverse, r1)
    return forward, reverse


# ---------------------------------------------------------------------------
# Coefficient fields
# ---------------------------------------------------------------------------

@dataclass
class CoefficientField:
    """Variable coefficients of a second-order linear operator.

    The operator acting on u is

        -sum_ij  second_order[i,j](x) d2u/dxi dxj
        +sum_i   first_order[i](x)    du/dxi
        +        zeroth_order(x)      u

    so an identity ``second_order`` with everything else zero is -Laplace,
    and the constant-coefficient Helmholtz operator -Lap - k^2 carries
    ``zeroth_order = -k^2``.  Callables take an (n, d) array of points and
    return (n, d, d), (n, d) and (n,) arrays respectively; ``first_order``
    and ``zeroth_order`` may be None.
    """

    second_order: Callable[[np.ndarray], np.ndarray]
    first_order: Optional[Callable[[np.ndarray], np.ndarray]] = None
    zeroth_order: Optional[Callable[[np.ndarray], np.ndarray]] = None
    has_cross_terms: bool = False

    def validate_cross_flag(self, points: np.ndarray) -> None:
        """Sample-check the declared cross-term flag against second_order."""
        a2 = np.asarray(self.second_order(points))
        d = points.shape[1]
        off = a2 - a2 * np.eye(d)[None, :, :]
        has_off = bool(np.any(np.abs(off) > 0.0))
        if has_off and not self.has_cross_terms:
            raise CrossTermError(
                "second_order has off-diagonal entries but has_cross_terms is False")


def isotropic_field(d: int, diffusion: float = 1.0,
                    zeroth: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                    first: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                    ) -> CoefficientField:
    """Convenience constructor: diffusion * (-Laplace) plus lower-order terms."""
    eye = diffusion * np.eye(d)

    def a2(x):
        return np.broadcast_to(eye, (x.shape[0], d, d))

    return CoefficientField(second_order=a2, first_order=first, zeroth_order=zeroth)


def laplace_field(d: int) -> CoefficientField:
    return isotropic_field(d)


# ---------------------------------------------------------------------------
# Leaf index bookkeeping and shared operator skeleton
# ---------------------------------------------------------------------------

def _kron_chain(p: int, d: int, slots: dict) -> sp.csr_matrix:
    mat = None
    for axis in range(d):
        block = slots.get(axis)
        block = sp.identity(p, format="csr") if block is None else sp.csr_matrix(block)
        mat = block if mat is None else sp.kron(mat, block, format="csr")
    return mat


class LeafTemplate:
    """Operator-independent machinery shared by all leaves of one mesh.

    Holds the scaled differentiation matrices, the flat-index partition of the
    p^d grid into interior / face / corner-edge nodes, the sparse tensor
    differentiation templates restricted to interior rows, and the normal
    derivative blocks a_bi / a_bb.  Those last two discretize only the outward
    normal derivative, so they are identical for every leaf and are exposed as
    shared arrays.

    corner_mode selects where boundary degrees of freedom live:

    * ``drop``: face-interior Chebyshev nodes; corner/edge nodes are excluded
      from the discretization entirely (legal only without cross terms).
    * ``legendre``: (p-1)^(d-1) Gauss–Legendre nodes per face; every Chebyshev
      boundary node is internal to the interpolation operators.
    """

    def __init__(self, widths: Sequence[float], p: int, corner_mode: str,
                 cross_terms: bool):
        if corner_mode not in CORNER_MODES:
            raise ValueError(f"unknown corner mode {corner_mode!r}")
        if cross_terms and corner_mode == DROP_CORNERS:
            raise CrossTermError(
                "cross-derivative terms require Legendre face grids; "
                "corner nodes cannot simply be dropped")
        self.widths = tuple(float(w) for w in widths)
        self.d = len(self.widths)
        self.p = int(p)
        self.corner_mode = corner_mode
        self.cross_terms = bool(cross_terms)

        d, n_total = self.d, p ** self.d
        self.n_grid = n_total
        self.ref_offsets = 0.5 * (cheb_nodes(p) + 1.0)  # nodes of [0, 1]
        self.ref_offsets[0], self.ref_offsets[-1] = 0.0, 1.0
        self.diff = [cheb_diff_matrix(p) * (2.0 / w) for w in self.widths]

        multi = np.indices((p,) * d).reshape(d, -1)
        end_count = ((multi == 0) | (multi == p - 1)).sum(axis=0)
        self.interior_idx = np.flatnonzero(end_count == 0)
        self.n_interior = self.interior_idx.size

        # Fixed face order: -x, +x, -y, +y[, -z, +z]; nodes lexicographic.
        self.face_node_idx = []      # face-interior Chebyshev nodes per face
        self.face_full_idx = []      # full Chebyshev face grid per face
        self._face_axes = []
        for axis in range(d):
            others_ok = np.ones(n_total, dtype=bool)
            for other in range(d):
                if other != axis:
                    others_ok &= (multi[other] > 0) & (multi[other] < p - 1)
            for side in (0, 1):
                on_plane = multi[axis] == side * (p - 1)
                self.face_node_idx.append(np.flatnonzero(on_plane & others_ok))
                self.face_full_idx.append(np.flatnonzero(on_plane))
                self._face_axes.append((axis, side))
        self.boundary_all_idx = np.flatnonzero(end_count >= 1)

        if corner_mode == DROP_CORNERS:
            self.face_dofs = (p - 2) ** (d - 1)
        else:
            self.face_dofs = (p - 1) ** (d - 1)
        self.n_boundary = 2 * d * self.face_dofs
        self.face_slices = [slice(k * self.face_dofs, (k + 1) * self.face_dofs)
                            for k in range(2 * d)]

        # Sparse tensor differentiation templates, interior rows only.
        self._k_second = [
            _kron_chain(p, d, {axis: self.diff[axis] @ self.diff[axis]})[self.interior_idx]
            for axis in range(d)]
        self._k_first = [
            _kron_chain(p, d, {axis: self.diff[axis]})[self.interior_idx]
            for axis in range(d)]
        self._k_cross = {}
        if cross_terms:
            for a in range(d):
                for b in range(a + 1, d):
                    chain = _kron_chain(p, d, {a: self.diff[a], b: self.diff[b]})
                    self._k_cross[(a, b)] = chain[self.interior_idx]
        eye = sp.identity(n_total, format="csr")
        self._k_zero = eye[self.interior_idx]

        if corner_mode == LEGENDRE_FACES:
            self._fwd1, self._rev1 = None, None
            xc, xg = cheb_nodes(p), legendre_nodes(p - 1)
            self._fwd1 = interp_matrix(xc, xg, weights=_lobatto_bary_weights(p))
            self._rev1 = interp_matrix(xg, xc)
            self.gauss_offsets = 0.5 * (xg + 1.0)
            self._boundary_injection = self._build_injection(multi, end_count)
            normal = self._build_normal_legendre()
            self.a_bi = np.ascontiguousarray(normal[:, self.interior_idx])
            self.a_bb = normal[:, self.boundary_all_idx] @ self._boundary_injection
        else:
            self.gauss_offsets = None
            self._boundary_injection = None
            normal = self._build_normal_drop()
            self.a_bi = np.ascontiguousarray(normal[:, self.interior_idx].toarray())
            bcols = np.concatenate(self.face_node_idx)
            self.a_bb = np.ascontiguousarray(normal[:, bcols].toarray())
            self._bcols = bcols

    # -- normal derivative blocks -------------------------------------------

    def _build_normal_drop(self) -> sp.csr_matrix:
        rows = []
        for k, (axis, side) in enumerate(self._face_axes):
            sign = 1.0 if side == 1 else -1.0
            rows.append(sign * self._k_full_first(axis)[self.face_node_idx[k]])
        return sp.vstack(rows, format="csr")

    def _k_full_first(self, axis: int) -> sp.csr_matrix:
        return _kron_chain(self.p, self.d, {axis: self.diff[axis]})

    def _build_normal_legendre(self) -> np.ndarray:
        p, d = self.p, self.d
        blocks = []
        for axis, side in self._face_axes:
            sign = 1.0 if side == 1 else -1.0
            edge_row = (p - 1) if side == 1 else 0
            mat = None
            for dim in range(d):
                part = (sign * self.diff[axis][edge_row:edge_row + 1, :]
                        if dim == axis else self._fwd1)
                mat = part if mat is None else np.kron(mat, part)
            blocks.append(mat)
        return np.vstack(blocks)

    def _build_injection(self, multi: np.ndarray, end_count: np.ndarray) -> np.ndarray:
        """Map Gauss face data to all Chebyshev boundary nodes.

        Each face interpolates its Gauss data to its full p^(d-1) Chebyshev
        grid; edge and corner nodes shared by several faces average the
        adjacent faces' interpolants (weight 1/#faces).
        """
        p, d = self.p, self.d
        n_bnd = self.boundary_all_idx.size
        pos = np.full(self.n_grid, -1)
        pos[self.boundary_all_idx] = np.arange(n_bnd)
        Q = np.zeros((n_bnd, self.n_boundary))
        rev_face = self._rev1
        for _ in range(d - 2):
            rev_face = np.kron(rev_face, self._rev1)
        for k, (axis, side) in enumerate(self._face_axes):
            full = self.face_full_idx[k]
            w = 1.0 / end_count[full]
            Q[pos[full], self.face_slices[k]] += w[:, None] * rev_face
        return Q

    # -- per-leaf operator assembly -----------------------------------------

    def leaf_grid(self, nodes1d: Sequence[np.ndarray]) -> np.ndarray:
        """Full (p^d, d) coordinate array of the leaf's tensor grid."""
        grids = np.meshgrid(*nodes1d, indexing="ij")
        return np.column_stack([g.reshape(-1) for g in grids])

    def collocation_rows(self, coeffs: CoefficientField,
                         grid: np.ndarray) -> sp.csr_matrix:
        """PDE rows of the leaf collocation matrix at interior nodes.

        Returns an (n_interior, p^d) sparse matrix over the full Chebyshev
        grid; coefficients are evaluated pointwise at the row's node.
        """
        x_int = grid[self.interior_idx]
        a2 = np.asarray(coeffs.second_order(x_int), dtype=float)
        rows = None
        for axis in range(self.d):
            term = sp.diags(-a2[:, axis, axis]) @ self._k_second[axis]
            rows = term if rows is None else rows + term
        for (a, b), k_ab in self._k_cross.items():
            c = -(a2[:, a, b] + a2[:, b, a])
            if np.any(c):
                rows = rows + sp.diags(c) @ k_ab
        if coeffs.first_order is not None:
            a1 = np.asarray(coeffs.first_order(x_int), dtype=float)
            for axis in range(self.d):
                if np.any(a1[:, axis]):
                    rows = rows + sp.diags(a1[:, axis]) @ self._k_first[axis]
        if coeffs.zeroth_order is not None:
            a0 = np.asarray(coeffs.zeroth_order(x_int), dtype=float)
            if np.any(a0):
                rows = rows + sp.diags(a0) @ self._k_zero
        return rows.tocsr()

    def interior_blocks(self, coeffs: CoefficientField, grid: np.ndarray):
        """(A_ii, A_ib) with boundary columns on this template's face DOFs."""
        rows = self.collocation_rows(coeffs, grid)
        a_ii = np.ascontiguousarray(rows[:, self.interior_idx].toarray())
        if self.corner_mode == DROP_CORNERS:
            a_ib = np.ascontiguousarray(rows[:, self._bcols].toarray())
        else:
            a_ib = rows[:, self.boundary_all_idx] @ self._boundary_injection
        return a_ii, a_ib


@dataclass
class LeafFactors:
    """Factorized local blocks of one leaf.

    ``s`` maps boundary values to the interior correction -A_ii^{-1} A_ib u_b;
    ``dtn`` maps boundary values to outward normal derivatives,
    dtn = a_bb + a_bi @ s.  ``a_bi`` and ``a_bb`` are shared template arrays,
    identical across equal-size leaves.
    """

    a_ii_factor: tuple
    a_ib: np.ndarray
    a_bi: np.ndarray
    a_bb: np.ndarray
    s: np.ndarray
    dtn: np.ndarray

    def solve_interior(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(self.a_ii_factor, rhs)


def factor_interior(a_ii: np.ndarray, leaf_index=None) -> tuple:
    """Pivoted dense LU of the interior block, with a singularity guard."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(a_ii)
    except scipy.linalg.LinAlgError as exc:  # exact zero pivot
        raise LeafSingularError(leaf_index, str(exc)) from exc
    diag = np.abs(np.diag(lu))
    dmax = diag.max() if diag.size else 0.0
    if diag.size and dmax == 0.0:
        raise LeafSingularError(leaf_index, "interior block is zero")
    if diag.size and diag.min() <= _PIVOT_FLOOR * dmax:
        raise LeafSingularError(leaf_index, f"pivot ratio {diag.min() / dmax:.2e}")
    return lu, piv


def build_leaf_factors(template: LeafTemplate, coeffs: CoefficientField,
                       grid: np.ndarray, leaf_index=None) -> LeafFactors:
    a_ii, a_ib = template.interior_blocks(coeffs, grid)
    factor = factor_interior(a_ii, leaf_index)
    s = -scipy.linalg.lu_solve(factor, a_ib)
    dtn = template.a_bb + template.a_bi @ s
    return LeafFactors(a_ii_factor=factor, a_ib=a_ib, a_bi=template.a_bi,
                       a_bb=template.a_bb, s=s, dtn=dtn)


def build_leaf_operator(bounds, p: int, coeffs: CoefficientField,
                        corner_mode: str = DROP_CORNERS) -> LeafFactors:
    """Standalone leaf build from physical bounds (lo, hi) vectors."""
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    widths = hi - lo
    template = LeafTemplate(widths, p, corner_mode, coeffs.has_cross_terms)
    nodes1d = []
    for k in range(len(widths)):
        x = lo[k] + widths[k] * template.ref_offsets
        x[0], x[-1] = lo[k], hi[k]
        nodes1d.append(x)
    grid = template.leaf_grid(nodes1d)
    coeffs.validate_cross_flag(grid[template.interior_idx])
    return build_leaf_factors(template, coeffs, grid, leaf_index=None)
