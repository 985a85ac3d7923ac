"""Run orchestration: single solves, convergence sweeps, scaling benchmarks,
and time-stepping runs, returned as JSON-ready dictionaries.

This layer owns configuration resolution (problem parameters, mesh defaults,
corner-mode selection) and the statistics the experiment modes report; it does
no file IO and no HTTP.
"""

from __future__ import annotations

import inspect
import statistics
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import condensation, problems, sparse_backend
from .condensation import BatchSchedule
from .errors import ConfigError
from .geometry import DomainBox, MeshConfig, build_discretization
from .local_ops import DROP_CORNERS, LEGENDRE_FACES
from .problems import (ProblemSpec, TimeStepConfig, evaluate_interior_interpolant,
                       make_parabolic, make_problem, plane_mass_center,
                       relative_l2_error, unwrap_angles)
from .reports import SCHEMA_VERSION

MODES = ("solve", "sweep", "bench", "timestep", "oracle-check")
AUTO = "auto"

SWEEP_HEADER = ["p", "boxes", "n_total", "n_interface", "rel_error",
                "dtn_assembly", "t_assembly", "factorize", "load_reduction",
                "interface_solve", "interior_solve", "observed_order"]
BENCH_HEADER = ["N", "p", "dtn_assembly_time", "t_assembly_time",
                "factorize_time", "interface_solve_time", "interior_solve_time"]


@dataclass
class RunConfig:
    """One CLI/service run: problem selection, mesh, scheduler, mode knobs."""

    problem: str
    mode: str = "solve"
    d: int = 3
    domain: Optional[Tuple[Tuple[float, ...], Tuple[float, ...]]] = None
    boxes: Optional[Tuple[int, ...]] = None
    p: Optional[int] = None
    p_list: Optional[Tuple[int, ...]] = None
    boxes_list: Optional[Tuple[int, ...]] = None
    corner_mode: str = AUTO
    params: dict = field(default_factory=dict)
    workers: int = 1
    batch_size: Optional[int] = None
    memory_budget: int = 1 << 30
    resident_limit: Optional[int] = None
    cache_leaf_factors: bool = False
    oracle: bool = False
    oracle_cap: int = sparse_backend.DEFAULT_ORACLE_CAP
    include_nodes: bool = False
    trials: int = 3
    dt: Optional[float] = None
    dt_list: Optional[Tuple[float, ...]] = None
    steps: Optional[int] = None
    snapshot_stride: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; known: {MODES}")
        for name in ("p_list", "boxes_list", "dt_list"):
            values = getattr(self, name)
            if values is not None:
                if len(values) == 0:
                    raise ConfigError(f"{name} must be nonempty")
                if any(b <= a for a, b in zip(values, values[1:])):
                    raise ConfigError(f"{name} must be strictly increasing")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")

    def schedule(self) -> BatchSchedule:
        return BatchSchedule(memory_budget=self.memory_budget,
                             batch_size=self.batch_size,
                             resident_limit=self.resident_limit,
                             workers=self.workers,
                             cache_leaf_factors=self.cache_leaf_factors)


def _problem_kwargs(factory, cfg: RunConfig) -> dict:
    accepted = inspect.signature(factory).parameters
    kwargs = {k: v for k, v in cfg.params.items() if k in accepted}
    unknown = set(cfg.params) - set(kwargs)
    if unknown:
        raise ConfigError(
            f"problem {cfg.problem!r} does not take parameters {sorted(unknown)}")
    if cfg.domain is not None and "domain" in accepted:
        kwargs["domain"] = DomainBox(tuple(cfg.domain[0]), tuple(cfg.domain[1]))
    return kwargs


def resolve_problem(cfg: RunConfig) -> ProblemSpec:
    if cfg.problem not in problems.ELLIPTIC_REGISTRY:
        raise ConfigError(f"unknown problem {cfg.problem!r}; known: "
                          f"{sorted(problems.ELLIPTIC_REGISTRY)}")
    factory = problems.ELLIPTIC_REGISTRY[cfg.problem]
    return factory(d=cfg.d, **_problem_kwargs(factory, cfg))


def resolve_corner_mode(cfg: RunConfig, prob: ProblemSpec) -> str:
    if cfg.corner_mode == AUTO:
        return LEGENDRE_FACES if prob.requires_legendre_faces else DROP_CORNERS
    if cfg.corner_mode not in (DROP_CORNERS, LEGENDRE_FACES):
        raise ConfigError(f"unknown corner mode {cfg.corner_mode!r}")
    return cfg.corner_mode


def _mesh(cfg: RunConfig, prob: ProblemSpec, boxes=None, p=None) -> MeshConfig:
    boxes = boxes if boxes is not None else (cfg.boxes or (2,) * prob.domain.d)
    if isinstance(boxes, int):
        boxes = (boxes,) * prob.domain.d
    if len(boxes) != prob.domain.d:
        raise ConfigError("boxes must match the problem dimension")
    p = p if p is not None else (cfg.p or 6)
    return MeshConfig(tuple(int(b) for b in boxes), int(p),
                      resolve_corner_mode(cfg, prob))


def _mesh_summary(prob: ProblemSpec, mesh: MeshConfig, disc) -> dict:
    return {"domain_lo": list(prob.domain.lo), "domain_hi": list(prob.domain.hi),
            "boxes": list(mesh.boxes_per_dim), "p": mesh.p,
            "corner_mode": mesh.corner_mode, "n_total": disc.n_total,
            "n_interface": disc.n_interface, "n_dirichlet": disc.n_dirichlet}


def _execute(prob: ProblemSpec, mesh: MeshConfig, schedule: BatchSchedule):
    disc = build_discretization(prob.domain, mesh)
    sys = condensation.build(disc, prob.coeffs, schedule)
    report = condensation.run_solve_stage(sys, prob.f, prob.g)
    rel_error = None
    if prob.exact is not None:
        rel_error = relative_l2_error(report.u, prob.exact(disc.nodes))
    return disc, sys, report, rel_error


def run_solve(cfg: RunConfig) -> dict:
    """Single build+solve; optional dense-oracle cross-check and node table."""
    prob = resolve_problem(cfg)
    mesh = _mesh(cfg, prob)
    disc, sys, report, rel_error = _execute(prob, mesh, cfg.schedule())
    out = {"schema_version": SCHEMA_VERSION, "problem": prob.name, "mode": cfg.mode,
           "mesh": _mesh_summary(prob, mesh, disc),
           "wall_times": {k: float(v) for k, v in report.wall_times.items()},
           "residual": float(report.residual)}
    if rel_error is not None:
        out["rel_error"] = float(rel_error)
    if cfg.oracle or cfg.mode == "oracle-check":
        reference = sparse_backend.dense_full_system_oracle(
            disc, prob.coeffs, prob.f, prob.g, cap=cfg.oracle_cap)
        out["oracle_rel_diff"] = float(np.linalg.norm(report.u - reference)
                                       / max(np.linalg.norm(reference), 1e-300))
    if cfg.include_nodes:
        out["nodes"] = {"columns": [f"x{k + 1}" for k in range(disc.d)] + ["u"],
                        "rows": np.column_stack([disc.nodes, report.u]).tolist()}
    return out


def _observed_orders(errors, spacings) -> List[Optional[float]]:
    """Consecutive-pair orders: log error ratio over log resolution ratio.

    Each pair is oriented coarse-to-fine by its spacing, so orders come out
    positive for converging sweeps regardless of the list's direction.
    """
    orders: List[Optional[float]] = [None]
    for k in range(1, len(errors)):
        e0, e1 = errors[k - 1], errors[k]
        s0, s1 = spacings[k - 1], spacings[k]
        if e0 is None or e1 is None or e0 <= 0 or e1 <= 0 or s0 == s1:
            orders.append(None)
            continue
        if s0 < s1:  # list runs fine-to-coarse; flip the pair
            e0, e1, s0, s1 = e1, e0, s1, s0
        orders.append(float(np.log(e0 / e1) / np.log(s0 / s1)))
    return orders


def run_sweep(cfg: RunConfig) -> dict:
    """h- or p-refinement study with observed convergence orders appended.

    Problems without an exact solution fall back to self-convergence: every
    run is compared against the same solver at order p+6 on the finest mesh,
    evaluated at the run's interior nodes through leaf interpolation.
    """
    prob = resolve_problem(cfg)
    if cfg.p_list is not None and cfg.boxes_list is not None:
        raise ConfigError("sweep one of p or boxes, not both")
    if cfg.p_list is None and cfg.boxes_list is None:
        raise ConfigError("sweep mode needs p_list or boxes_list")

    if cfg.p_list is not None:
        cases = [(None, p) for p in cfg.p_list]
        spacings = [1.0 / p for p in cfg.p_list]
        sweep_var = "p"
    else:
        cases = [(n, None) for n in cfg.boxes_list]
        spacings = [1.0 / n for n in cfg.boxes_list]
        sweep_var = "boxes"

    reference = None
    if prob.exact is None:
        ref_boxes, ref_p = cases[-1]
        ref_mesh = _mesh(cfg, prob, boxes=ref_boxes,
                         p=(ref_p or cfg.p or 6) + 6)
        ref_disc, _, ref_report, _ = _execute(prob, ref_mesh, cfg.schedule())
        reference = (ref_disc, ref_report.u)

    rows = []
    errors = []
    for boxes, p in cases:
        mesh = _mesh(cfg, prob, boxes=boxes, p=p)
        disc, sys, report, rel_error = _execute(prob, mesh, cfg.schedule())
        if rel_error is None and reference is not None:
            ref_disc, ref_u = reference
            probe_ids = np.concatenate(disc.index_interior)
            ref_vals = evaluate_interior_interpolant(ref_disc, ref_u,
                                                     disc.nodes[probe_ids])
            rel_error = relative_l2_error(report.u[probe_ids], ref_vals)
        errors.append(rel_error)
        wt = report.wall_times
        rows.append([mesh.p, max(mesh.boxes_per_dim), disc.n_total,
                     disc.n_interface, rel_error,
                     wt["dtn_assembly"], wt["t_assembly"], wt["factorize"],
                     wt["load_reduction"], wt["interface_solve"],
                     wt["interior_solve"], None])
    orders = _observed_orders(errors, spacings)
    for row, order in zip(rows, orders):
        row[-1] = order
    return {"schema_version": SCHEMA_VERSION, "problem": prob.name,
            "sweep_var": sweep_var, "header": list(SWEEP_HEADER),
            "rows": rows}


def run_bench(cfg: RunConfig) -> dict:
    """Timing table over mesh sizes; medians over repeated trials."""
    prob = resolve_problem(cfg)
    sizes = cfg.boxes_list or [max(cfg.boxes or (2,) * prob.domain.d)]
    rows = []
    for n in sizes:
        mesh = _mesh(cfg, prob, boxes=n)
        samples = {k: [] for k in condensation.PHASES}
        n_total = None
        for _ in range(cfg.trials):
            disc, sys, report, _ = _execute(prob, mesh, cfg.schedule())
            n_total = disc.n_total
            for k in condensation.PHASES:
                samples[k].append(report.wall_times[k])
        med = {k: statistics.median(v) for k, v in samples.items()}
        rows.append([n_total, mesh.p, med["dtn_assembly"], med["t_assembly"],
                     med["factorize"], med["interface_solve"],
                     med["interior_solve"]])
    return {"schema_version": SCHEMA_VERSION, "problem": prob.name,
            "trials": cfg.trials, "header": list(BENCH_HEADER), "rows": rows}


def run_timestep(cfg: RunConfig) -> dict:
    """Crank–Nicolson run(s); dt_list produces a temporal convergence study."""
    if cfg.problem not in problems.PARABOLIC_REGISTRY:
        raise ConfigError(f"unknown parabolic problem {cfg.problem!r}; known: "
                          f"{sorted(problems.PARABOLIC_REGISTRY)}")
    factory = problems.PARABOLIC_REGISTRY[cfg.problem]
    prob = factory(d=cfg.d, **_problem_kwargs(factory, cfg))
    if cfg.steps is None:
        raise ConfigError("timestep mode needs --steps")
    dts = cfg.dt_list or ((cfg.dt,) if cfg.dt is not None else None)
    if dts is None:
        raise ConfigError("timestep mode needs --dt")

    base_mesh = MeshConfig(tuple(cfg.boxes or (2,) * prob.domain.d),
                           cfg.p or 8, DROP_CORNERS)
    disc = build_discretization(prob.domain, base_mesh)
    # one final time for every run: cfg.steps counts steps of the coarsest dt
    t_end = max(dts) * cfg.steps
    runs = []
    errors = []
    for dt in dts:
        ts = TimeStepConfig(dt=float(dt), t_end=t_end, u0=prob.u0)
        schedule = cfg.schedule()
        traj = problems.crank_nicolson_run(disc, prob, ts, schedule=schedule,
                                           snapshot_stride=cfg.snapshot_stride)
        entry = {"dt": float(dt), "steps": ts.steps,
                 "factorization_events": traj.factorization_events,
                 "step_seconds": [float(s) for s in traj.step_seconds],
                 "times": [float(t) for t in traj.times]}
        if prob.exact is not None:
            err = relative_l2_error(traj.final, prob.exact(disc.nodes, ts.t_end))
            entry["final_rel_error"] = float(err)
            errors.append(err)
        else:
            errors.append(None)
        if prob.domain.d == 3:
            centers = [plane_mass_center(state, disc.nodes)
                       for state in traj.states]
            angles = unwrap_angles(centers)
            entry["mass_center_angles"] = [float(a) for a in angles]
        entry["snapshots"] = [{"t": float(t), "values": state.tolist()}
                              for t, state in zip(traj.times, traj.states)]
        runs.append(entry)

    out = {"schema_version": SCHEMA_VERSION, "problem": prob.name,
           "mesh": {"boxes": list(base_mesh.boxes_per_dim), "p": base_mesh.p,
                    "n_total": disc.n_total},
           "nodes": disc.nodes.tolist(), "runs": runs}
    if len(dts) > 1 and all(e is not None for e in errors):
        out["temporal_orders"] = _observed_orders(errors, list(dts))[1:]
    return out


def run(cfg: RunConfig) -> dict:
    if cfg.mode in ("solve", "oracle-check"):
        return run_solve(cfg)
    if cfg.mode == "sweep":
        return run_sweep(cfg)
    if cfg.mode == "bench":
        return run_bench(cfg)
    if cfg.mode == "timestep":
        return run_timestep(cfg)
    raise ConfigError(f"unknown mode {cfg.mode!r}")
