"""Two-level build and solve stages.

Build: every leaf is reduced to its boundary map, the maps are scattered into
one block-sparse interface matrix with SUM accumulation on shared faces, and
that matrix is factorized once.  Solve: the body load is reduced leaf by leaf,
the interface system is solved with the stored factorization, and leaf
interiors are reconstructed.  Leaf blocks are recomputed on the fly during the
solve stage rather than stored (an optional cache keeps them for small
problems).

Leaf work runs on a worker pool under a memory budget: an inner level bounds
how many leaves are factorized concurrently, an outer level bounds how many
finished boundary maps sit in the staging buffer before being flushed into
the sparse matrix.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import ConfigError
from .geometry import Discretization
from .local_ops import (DROP_CORNERS, LEGENDRE_FACES, CoefficientField,
                        LeafFactors, LeafTemplate, build_leaf_factors,
                        factor_interior)
from . import sparse_backend

PHASES = ("dtn_assembly", "t_assembly", "factorize",
          "load_reduction", "interface_solve", "interior_solve")


def estimate_workspace(p: int, d: int, corner_mode: str = DROP_CORNERS) -> int:
    """Transient bytes one leaf needs: dense interior factor + S + boundary map."""
    if p < 4:
        raise ConfigError(f"p must be >= 4, got {p}")
    n_i = (p - 2) ** d
    face = (p - 1) ** (d - 1) if corner_mode == LEGENDRE_FACES else (p - 2) ** (d - 1)
    n_b = 2 * d * face
    return 8 * (n_i * n_i + n_i * n_b + n_b * n_b)


@dataclass
class BatchSchedule:
    """Worker-pool knobs for leaf-level work.

    batch_size bounds leaves in flight at once, resident_limit bounds finished
    boundary maps staged before a flush; both are derived from memory_budget
    when unset and shrunk if the explicit values would overrun it.
    """

    memory_budget: int = 1 << 30
    batch_size: Optional[int] = None
    resident_limit: Optional[int] = None
    workers: int = 1
    cache_leaf_factors: bool = False

    def resolve(self, p: int, d: int, corner_mode: str) -> "ResolvedSchedule":
        if self.memory_budget <= 0:
            raise ConfigError("memory budget must be positive")
        if self.workers < 1:
            raise ConfigError("worker count must be >= 1")
        ws = estimate_workspace(p, d, corner_mode)
        face = ((p - 1) ** (d - 1) if corner_mode == LEGENDRE_FACES
                else (p - 2) ** (d - 1))
        tb = 8 * (2 * d * face) ** 2
        if ws + tb > self.memory_budget:
            raise ConfigError(
                f"memory budget {self.memory_budget} cannot hold one leaf "
                f"workspace ({ws} B) plus one staged boundary map ({tb} B)")
        batch = self.batch_size or max(1, self.workers)
        batch = max(1, min(batch, (self.memory_budget - tb) // ws))
        resident = self.resident_limit or 2 * batch
        resident = max(1, min(resident, (self.memory_budget - batch * ws) // tb))
        return ResolvedSchedule(batch_size=int(batch), resident_limit=int(resident),
                                workers=self.workers, workspace_bytes=ws,
                                block_bytes=tb, memory_budget=self.memory_budget,
                                cache_leaf_factors=self.cache_leaf_factors)


@dataclass
class ResolvedSchedule:
    batch_size: int
    resident_limit: int
    workers: int
    workspace_bytes: int
    block_bytes: int
    memory_budget: int
    cache_leaf_factors: bool


@dataclass
class LeafDofs:
    """Where one leaf's boundary DOFs land in the global system."""

    boundary_ids: np.ndarray      # global ids, template face order
    interface_mask: np.ndarray    # which of them are interface unknowns
    t_rows: np.ndarray            # interface positions (0-based rows of t)
    dirichlet_cols: np.ndarray    # Dirichlet positions of the non-interface rest


@dataclass
class DofMap:
    """Interface DOF <-> (leaf, face, face-node) correspondence."""

    per_leaf: List[LeafDofs]
    face_keys: List[tuple]
    face_starts: np.ndarray       # start of each interface face's DOF block
    face_dofs: int

    def locate(self, interface_dof: int):
        """Return (face key, node position within the face) for one t row."""
        k = np.searchsorted(self.face_starts, interface_dof, side="right") - 1
        return self.face_keys[k], interface_dof - int(self.face_starts[k])


@dataclass
class InterfaceSystem:
    """Assembled and factorized interface operator plus everything a solve needs."""

    t: "np.ndarray"
    dirichlet_coupling: "np.ndarray"
    factorization: sparse_backend.Factorization
    dof_map: DofMap
    disc: Discretization
    coeffs: CoefficientField
    template: LeafTemplate
    schedule: ResolvedSchedule
    build_times: dict
    peak_workspace_bytes: int
    cached_factors: Optional[List[LeafFactors]] = None
    _fresh_build: bool = True

    @property
    def n(self) -> int:
        return self.t.shape[0]

    def take_build_times(self) -> dict:
        """Build-phase timings, reported once; later solves see zeros."""
        if self._fresh_build:
            self._fresh_build = False
            return dict(self.build_times)
        return {k: 0.0 for k in self.build_times}


@dataclass
class SolveReport:
    """Solution values at every retained node plus run diagnostics."""

    u: np.ndarray
    wall_times: dict
    residual: float

    @property
    def total_seconds(self) -> float:
        return sum(self.wall_times.values())


def _make_dof_map(disc: Discretization, template: LeafTemplate) -> DofMap:
    ioff, doff = disc.interface_offset, disc.dirichlet_offset
    per_leaf = []
    for leaf in disc.leaves:
        ids = leaf.boundary_ids
        mask = (ids >= ioff) & (ids < doff)
        per_leaf.append(LeafDofs(
            boundary_ids=ids, interface_mask=mask, t_rows=ids[mask] - ioff,
            dirichlet_cols=ids[~mask] - doff))
    keys, starts = [], []
    for key, face in disc.faces.items():
        if face.kind == "interface":
            keys.append(key)
            starts.append(face.node_ids[0] - ioff)
    order = np.argsort(starts) if starts else []
    return DofMap(per_leaf=per_leaf,
                  face_keys=[keys[i] for i in order],
                  face_starts=np.asarray([starts[i] for i in order], dtype=np.int64),
                  face_dofs=template.face_dofs)


def _leaf_batches(n_leaves: int, batch: int):
    for start in range(0, n_leaves, batch):
        yield range(start, min(start + batch, n_leaves))


def _map_leaves(pool: Optional[ThreadPoolExecutor], fn, ids):
    if pool is None or len(ids) == 1:
        return [fn(i) for i in ids]
    return list(pool.map(fn, ids))


def build(disc: Discretization, coeffs: CoefficientField,
          schedule: Optional[BatchSchedule] = None) -> InterfaceSystem:
    """Assemble and factorize the interface system (the build stage).

    Boundary maps are scattered with sum accumulation into the interface
    matrix; their columns hitting Dirichlet nodes accumulate into the
    coupling operator instead.  Leaf factors are discarded after scattering
    unless the schedule's cache toggle is set.
    """
    schedule = schedule or BatchSchedule()
    resolved = schedule.resolve(disc.p, disc.d, disc.corner_mode)
    template = LeafTemplate(disc.leaf_widths, disc.p, disc.corner_mode,
                            coeffs.has_cross_terms)
    sample = disc.nodes[disc.leaves[0].interior_ids[:8]]
    coeffs.validate_cross_flag(sample)

    n_int = disc.n_interface
    n_dir = disc.n_dirichlet
    dof_map = _make_dof_map(disc, template)
    t_builder = sparse_backend.SparseMatrix(n_int)
    c_rows, c_cols, c_vals = [], [], []
    cache = [] if resolved.cache_leaf_factors else None

    def leaf_task(leaf_id: int) -> LeafFactors:
        leaf = disc.leaves[leaf_id]
        grid = template.leaf_grid(disc.leaf_grid1d(leaf))
        return build_leaf_factors(template, coeffs, grid, leaf_index=leaf.index)

    staged: List[tuple] = []
    peak = 0
    dtn_seconds = 0.0
    scatter_seconds = 0.0

    def flush():
        nonlocal scatter_seconds
        tic = time.perf_counter()
        for leaf_id, dtn in staged:
            dofs = dof_map.per_leaf[leaf_id]
            m = dofs.interface_mask
            rows = dtn[m]
            t_builder.add_block(dofs.t_rows, dofs.t_rows, rows[:, m])
            if dofs.dirichlet_cols.size:
                block = rows[:, ~m]
                r = np.repeat(dofs.t_rows, dofs.dirichlet_cols.size)
                c = np.tile(dofs.dirichlet_cols, dofs.t_rows.size)
                c_rows.append(r)
                c_cols.append(c)
                c_vals.append(block.ravel())
        staged.clear()
        scatter_seconds += time.perf_counter() - tic

    pool = (ThreadPoolExecutor(max_workers=resolved.workers)
            if resolved.workers > 1 else None)
    try:
        for batch in _leaf_batches(len(disc.leaves), resolved.batch_size):
            tic = time.perf_counter()
            results = _map_leaves(pool, leaf_task, list(batch))
            dtn_seconds += time.perf_counter() - tic
            peak = max(peak, len(batch) * resolved.workspace_bytes
                       + len(staged) * resolved.block_bytes)
            for leaf_id, factors in zip(batch, results):
                staged.append((leaf_id, factors.dtn))
                if cache is not None:
                    cache.append(factors)
                if len(staged) >= resolved.resident_limit:
                    flush()
            peak = max(peak, len(staged) * resolved.block_bytes)
        flush()
    finally:
        if pool is not None:
            pool.shutdown()

    tic = time.perf_counter()
    t_matrix = t_builder.finalize()
    if c_rows:
        coupling = sp.coo_matrix(
            (np.concatenate(c_vals),
             (np.concatenate(c_rows), np.concatenate(c_cols))),
            shape=(n_int, n_dir)).tocsr()
        coupling.sum_duplicates()
    else:
        coupling = sp.csr_matrix((n_int, n_dir))
    scatter_seconds += time.perf_counter() - tic

    tic = time.perf_counter()
    factorization = sparse_backend.analyze_and_factor(t_matrix)
    factor_seconds = time.perf_counter() - tic

    return InterfaceSystem(
        t=t_matrix, dirichlet_coupling=coupling, factorization=factorization,
        dof_map=dof_map, disc=disc, coeffs=coeffs, template=template,
        schedule=resolved,
        build_times={"dtn_assembly": dtn_seconds, "t_assembly": scatter_seconds,
                     "factorize": factor_seconds},
        peak_workspace_bytes=peak, cached_factors=cache)


def _values_at(data, disc: Discretization, ids: np.ndarray) -> np.ndarray:
    """Evaluate a callable at node coordinates, or gather from a nodal array."""
    if callable(data):
        return np.asarray(data(disc.nodes[ids]), dtype=float)
    return np.asarray(data, dtype=float)[ids]


def reduce_load(disc: Discretization, coeffs: CoefficientField,
                f, g, sys: InterfaceSystem):
    """Reduce the body load to the interface: v_i per leaf and the RHS g_b.

    v_i = A_ii^{-1} f at interior nodes; g_b collects -A_bi v_i at interface
    rows (continuity equations carry no natural RHS) minus the Dirichlet
    coupling applied to the boundary data.  Leaf blocks are recomputed here
    unless the build cached them.  f and g may be callables of position or
    nodal arrays over all retained nodes.
    """
    template, resolved = sys.template, sys.schedule
    g_b = np.zeros(disc.n_interface)

    def leaf_task(leaf_id: int):
        leaf = disc.leaves[leaf_id]
        f_int = _values_at(f, disc, leaf.interior_ids)
        if sys.cached_factors is not None:
            v = sys.cached_factors[leaf_id].solve_interior(f_int)
        else:
            grid = template.leaf_grid(disc.leaf_grid1d(leaf))
            a_ii, _ = template.interior_blocks(coeffs, grid)
            v = scipy.linalg.lu_solve(factor_interior(a_ii, leaf.index), f_int)
        return v, template.a_bi @ v

    pool = (ThreadPoolExecutor(max_workers=resolved.workers)
            if resolved.workers > 1 else None)
    try:
        results = []
        for batch in _leaf_batches(len(disc.leaves), resolved.batch_size):
            results.extend(_map_leaves(pool, leaf_task, list(batch)))
    finally:
        if pool is not None:
            pool.shutdown()

    v_list = []
    for leaf_id, (v, flux) in enumerate(results):
        dofs = sys.dof_map.per_leaf[leaf_id]
        g_b[dofs.t_rows] -= flux[dofs.interface_mask]
        v_list.append(v)

    if disc.n_dirichlet:
        g_vals = _values_at(g, disc, disc.index_dirichlet)
        g_b -= sys.dirichlet_coupling @ g_vals
    return v_list, g_b


def solve(sys: InterfaceSystem, v_list, g_b: np.ndarray, g,
          load_seconds: float = 0.0) -> SolveReport:
    """Interface solve and interior reconstruction (the solve stage)."""
    disc = sys.disc
    if g_b.shape[0] != sys.n:
        raise ConfigError(f"g_b has length {g_b.shape[0]}, expected {sys.n}")
    if len(v_list) != len(disc.leaves):
        raise ConfigError("one interior vector per leaf required")

    tic = time.perf_counter()
    u_b = sparse_backend.solve(sys.factorization, g_b)
    interface_seconds = time.perf_counter() - tic

    norm_g = float(np.linalg.norm(g_b))
    residual = (float(np.linalg.norm(sys.t @ u_b - g_b)) / norm_g
                if norm_g > 0.0 else 0.0)

    u = np.empty(disc.n_total)
    u[disc.index_interface] = u_b
    if disc.n_dirichlet:
        u[disc.index_dirichlet] = _values_at(g, disc, disc.index_dirichlet)

    template, coeffs, resolved = sys.template, sys.coeffs, sys.schedule
    tic = time.perf_counter()

    def leaf_task(leaf_id: int):
        leaf = disc.leaves[leaf_id]
        ub_leaf = u[leaf.boundary_ids]
        if sys.cached_factors is not None:
            s = sys.cached_factors[leaf_id].s
            u[leaf.interior_ids] = v_list[leaf_id] + s @ ub_leaf
        else:
            grid = template.leaf_grid(disc.leaf_grid1d(leaf))
            a_ii, a_ib = template.interior_blocks(coeffs, grid)
            factor = factor_interior(a_ii, leaf.index)
            u[leaf.interior_ids] = v_list[leaf_id] - scipy.linalg.lu_solve(
                factor, a_ib @ ub_leaf)

    pool = (ThreadPoolExecutor(max_workers=resolved.workers)
            if resolved.workers > 1 else None)
    try:
        for batch in _leaf_batches(len(disc.leaves), resolved.batch_size):
            _map_leaves(pool, leaf_task, list(batch))
    finally:
        if pool is not None:
            pool.shutdown()
    interior_seconds = time.perf_counter() - tic

    wall = sys.take_build_times()
    wall.update({"load_reduction": load_seconds,
                 "interface_solve": interface_seconds,
                 "interior_solve": interior_seconds})
    return SolveReport(u=u, wall_times=wall, residual=residual)


def run_solve_stage(sys: InterfaceSystem, f, g) -> SolveReport:
    """Timed load reduction + solve against an existing factorization."""
    tic = time.perf_counter()
    v_list, g_b = reduce_load(sys.disc, sys.coeffs, f, g, sys)
    load_seconds = time.perf_counter() - tic
    return solve(sys, v_list, g_b, g, load_seconds=load_seconds)


def solve_bvp(disc: Discretization, coeffs: CoefficientField, f, g,
              schedule: Optional[BatchSchedule] = None,
              sys: Optional[InterfaceSystem] = None):
    """Build (once) and solve; returns (report, system) for factorization reuse."""
    if sys is None:
        sys = build(disc, coeffs, schedule)
    report = run_solve_stage(sys, f, g)
    return report, sys
