"""HTTP service exposing the solver.

The run endpoints are stateless wrappers over :mod:`steklov.runs`.  The
``/systems`` endpoints hold built interface factorizations in memory so that
repeated right-hand sides reuse one factorization across requests, which is
the whole point of the build/solve split.
"""

from __future__ import annotations

import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException

from . import __version__, condensation, problems, runs
from .errors import ConfigError, SolverError
from .geometry import build_discretization
from .models import (BenchRequest, BuildRequest, BuildResponse, ProblemModel,
                     SolveRequest, SolveResponse, SweepRequest,
                     SystemSolveRequest, SystemSolveResponse, TableResponse,
                     TimestepRequest)
from .problems import relative_l2_error
from .reports import SCHEMA_VERSION


def _run_config(problem: ProblemModel, mesh, schedule, **extra) -> runs.RunConfig:
    return runs.RunConfig(
        problem=problem.name, d=problem.d, params=dict(problem.params),
        domain=mesh.domain, boxes=tuple(mesh.boxes) if mesh.boxes else None,
        p=mesh.p, corner_mode=mesh.corner_mode,
        workers=schedule.workers, batch_size=schedule.batch_size,
        memory_budget=schedule.memory_budget,
        resident_limit=schedule.resident_limit,
        cache_leaf_factors=schedule.cache_leaf_factors, **extra)


def _guard(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    except SolverError as exc:
        raise HTTPException(status_code=500, detail=str(exc)) from exc


def create_app() -> FastAPI:
    app = FastAPI(title="steklov solver service", version=__version__)
    app.state.systems = {}
    app.state.lock = threading.Lock()

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__,
                "schema_version": SCHEMA_VERSION}

    @app.get("/problems")
    def list_problems():
        return {"elliptic": sorted(problems.ELLIPTIC_REGISTRY),
                "parabolic": sorted(problems.PARABOLIC_REGISTRY)}

    @app.post("/runs/solve", response_model=SolveResponse,
              response_model_exclude_none=True)
    def solve_run(req: SolveRequest):
        cfg = _run_config(req.problem, req.mesh, req.schedule,
                          mode="solve", oracle=req.oracle,
                          include_nodes=req.include_nodes)
        return _guard(runs.run_solve, cfg)

    @app.post("/runs/sweep", response_model=TableResponse)
    def sweep_run(req: SweepRequest):
        cfg = _run_config(req.problem, req.mesh, req.schedule, mode="sweep",
                          p_list=tuple(req.p_list) if req.p_list else None,
                          boxes_list=tuple(req.boxes_list) if req.boxes_list else None)
        out = _guard(runs.run_sweep, cfg)
        return {"schema_version": out["schema_version"], "problem": out["problem"],
                "header": out["header"], "rows": out["rows"]}

    @app.post("/runs/bench", response_model=TableResponse)
    def bench_run(req: BenchRequest):
        cfg = _run_config(req.problem, req.mesh, req.schedule, mode="bench",
                          boxes_list=tuple(req.boxes_list) if req.boxes_list else None,
                          trials=req.trials)
        out = _guard(runs.run_bench, cfg)
        return {"schema_version": out["schema_version"], "problem": out["problem"],
                "header": out["header"], "rows": out["rows"]}

    @app.post("/runs/timestep")
    def timestep_run(req: TimestepRequest):
        cfg = _run_config(req.problem, req.mesh, req.schedule, mode="timestep",
                          dt=req.dt,
                          dt_list=tuple(req.dt_list) if req.dt_list else None,
                          steps=req.steps, snapshot_stride=req.snapshot_stride)
        out = _guard(runs.run_timestep, cfg)
        if not req.include_snapshots:
            for entry in out["runs"]:
                entry.pop("snapshots", None)
        return out

    @app.post("/systems", response_model=BuildResponse)
    def build_system(req: BuildRequest):
        cfg = _run_config(req.problem, req.mesh, req.schedule, mode="solve")

        def do_build():
            prob = runs.resolve_problem(cfg)
            mesh = runs._mesh(cfg, prob)
            disc = build_discretization(prob.domain, mesh)
            return prob, condensation.build(disc, prob.coeffs, cfg.schedule())

        prob, sys = _guard(do_build)
        system_id = uuid.uuid4().hex[:12]
        with app.state.lock:
            app.state.systems[system_id] = (prob, sys)
        return {"system_id": system_id, "problem": prob.name,
                "n_total": sys.disc.n_total, "n_interface": sys.n,
                "wall_times": {k: float(v) for k, v in sys.build_times.items()}}

    def _get_system(system_id: str):
        with app.state.lock:
            entry = app.state.systems.get(system_id)
        if entry is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown system {system_id!r}")
        return entry

    @app.post("/systems/{system_id}/solve", response_model=SystemSolveResponse,
              response_model_exclude_none=True)
    def solve_system(system_id: str, req: SystemSolveRequest):
        prob, sys = _get_system(system_id)
        loads = {"problem": prob.f, "zero": lambda x: np.zeros(x.shape[0]),
                 "one": lambda x: np.ones(x.shape[0])}
        boundaries = {"problem": prob.g, "zero": lambda x: np.zeros(x.shape[0])}
        f, g = loads[req.body_load], boundaries[req.dirichlet]
        report = _guard(condensation.run_solve_stage, sys, f, g)
        out = {"system_id": system_id,
               "wall_times": {k: float(v) for k, v in report.wall_times.items()},
               "residual": float(report.residual)}
        if (prob.exact is not None and req.body_load == "problem"
                and req.dirichlet == "problem"):
            out["rel_error"] = float(relative_l2_error(
                report.u, prob.exact(sys.disc.nodes)))
        return out

    @app.delete("/systems/{system_id}")
    def delete_system(system_id: str):
        with app.state.lock:
            if system_id not in app.state.systems:
                raise HTTPException(status_code=404,
                                    detail=f"unknown system {system_id!r}")
            del app.state.systems[system_id]
        return {"deleted": system_id}

    return app


app = create_app()
