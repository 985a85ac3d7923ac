"""Command-line client for the solver service.

By default the CLI talks to an in-process instance of the service (no socket
involved); pass ``--server URL`` to target a running one, or ``--mode serve``
to start one.  All numerical work happens service-side; the client turns
flags and config files into requests and writes the returned results as
JSON/CSV files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_SIZE_SUFFIX = {"k": 1 << 10, "m": 1 << 20, "g": 1 << 30}


def parse_size(text: str) -> int:
    text = text.strip().lower()
    if text and text[-1] in _SIZE_SUFFIX:
        return int(float(text[:-1]) * _SIZE_SUFFIX[text[-1]])
    return int(text)


def parse_boxes(text: str):
    """'2x2x1' -> per-dimension counts; '2,4,6' -> sweep list; '4' -> uniform."""
    text = text.strip().lower()
    if "x" in text:
        return ("dims", tuple(int(t) for t in text.split("x")))
    if "," in text:
        return ("list", tuple(int(t) for t in text.split(",")))
    return ("dims", (int(text),))


def parse_int_list(text: str):
    return tuple(int(t) for t in text.split(","))


def parse_float_list(text: str):
    return tuple(float(t) for t in text.split(","))


def read_config_file(path: Path) -> dict:
    """Flat 'key = value' file; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(
                f"config parse error at {path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise SystemExit(f"config parse error at {path}:{lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="steklov",
        description="Elliptic solves, convergence sweeps, benchmarks, and "
                    "time stepping on box meshes")
    parser.add_argument("--config", type=Path, help="flat key=value config file")
    parser.add_argument("--problem", help="registry problem name")
    parser.add_argument("--mode", choices=["solve", "sweep", "bench", "timestep",
                                           "oracle-check", "serve"],
                        default=None)
    parser.add_argument("--d", type=int, choices=[2, 3], default=None,
                        help="spatial dimension (default 3)")
    parser.add_argument("--boxes", help="per-dim 'NxMxK', uniform 'N', "
                                        "or sweep list 'N1,N2,...'")
    parser.add_argument("--p", help="polynomial order, or sweep list 'p1,p2,...'")
    parser.add_argument("--corner-mode", choices=["auto", "drop", "legendre"],
                        default=None)
    parser.add_argument("--domain", help="bounds 'lo1,hi1,lo2,hi2[,lo3,hi3]'")
    parser.add_argument("--kappa", type=float, help="wavenumber parameter")
    parser.add_argument("--amplitude", type=float, help="parameter-map amplitude")
    parser.add_argument("--frequency", type=float, help="parameter-map frequency")
    parser.add_argument("--diffusivity", type=float)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--memory-budget", type=parse_size, default=None,
                        help="bytes, with optional K/M/G suffix")
    parser.add_argument("--oracle", action="store_true",
                        help="cross-check against the dense reference solve")
    parser.add_argument("--nodes", action="store_true",
                        help="also write the node-value table")
    parser.add_argument("--dt", help="time step, or list 'dt1,dt2,...'")
    parser.add_argument("--steps", type=int, help="number of time steps")
    parser.add_argument("--stride", type=int, default=None,
                        help="snapshot stride in timestep mode")
    parser.add_argument("--trials", type=int, default=None,
                        help="bench repetitions (median reported)")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--server", help="service URL (default: in-process)")
    parser.add_argument("--port", type=int, default=8000, help="serve mode port")
    return parser


def merge_config(args: argparse.Namespace) -> dict:
    """Config file values with flag overrides on top."""
    merged = {}
    if args.config:
        if not args.config.exists():
            raise SystemExit(f"config file not found: {args.config}")
        merged.update(read_config_file(args.config))
    for key, value in vars(args).items():
        if key in ("config",) or value in (None, False):
            continue
        merged[key] = value
    merged.setdefault("mode", "solve")
    return merged


def _as_bool(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    return bool(value)


def _as_problem_params(cfg: dict) -> dict:
    params = {}
    for key in ("kappa", "amplitude", "frequency", "diffusivity"):
        if key in cfg:
            params[key] = float(cfg[key])
    return params


def build_request(cfg: dict):
    """Translate merged config into (endpoint, payload)."""
    mode = cfg["mode"]
    if "problem" not in cfg:
        raise SystemExit("--problem is required")
    problem = {"name": str(cfg["problem"]), "d": int(cfg.get("d", 3)),
               "params": _as_problem_params(cfg)}

    mesh = {"corner_mode": str(cfg.get("corner_mode", "auto"))}
    boxes_list = None
    if "boxes" in cfg:
        kind, value = (parse_boxes(cfg["boxes"]) if isinstance(cfg["boxes"], str)
                       else ("dims", tuple(cfg["boxes"])))
        if kind == "list":
            boxes_list = value
        else:
            mesh["boxes"] = list(value if len(value) > 1
                                 else value * problem["d"])
    p_list = None
    if "p" in cfg:
        values = (parse_int_list(cfg["p"]) if isinstance(cfg["p"], str)
                  else (int(cfg["p"]),))
        if len(values) > 1:
            p_list = values
        else:
            mesh["p"] = values[0]
    if "domain" in cfg:
        flat = (parse_float_list(cfg["domain"]) if isinstance(cfg["domain"], str)
                else tuple(cfg["domain"]))
        if len(flat) not in (4, 6):
            raise SystemExit("domain needs lo,hi per dimension")
        mesh["domain"] = [list(flat[0::2]), list(flat[1::2])]

    schedule = {}
    for key in ("workers", "batch_size", "memory_budget"):
        if key in cfg:
            value = cfg[key]
            schedule[key] = parse_size(value) if isinstance(value, str) else int(value)

    base = {"problem": problem, "mesh": mesh, "schedule": schedule}
    if mode in ("solve", "oracle-check"):
        base["oracle"] = _as_bool(cfg.get("oracle", False)) or mode == "oracle-check"
        base["include_nodes"] = _as_bool(cfg.get("nodes", False))
        return "/runs/solve", base
    if mode == "sweep":
        if p_list:
            base["p_list"] = list(p_list)
        if boxes_list:
            base["boxes_list"] = list(boxes_list)
        return "/runs/sweep", base
    if mode == "bench":
        if boxes_list:
            base["boxes_list"] = list(boxes_list)
        base["trials"] = int(cfg.get("trials", 3))
        return "/runs/bench", base
    if mode == "timestep":
        if "dt" not in cfg:
            raise SystemExit("timestep mode requires --dt")
        dts = (parse_float_list(cfg["dt"]) if isinstance(cfg["dt"], str)
               else (float(cfg["dt"]),))
        if len(dts) > 1:
            base["dt_list"] = sorted(dts)
        else:
            base["dt"] = dts[0]
        if "steps" not in cfg:
            raise SystemExit("timestep mode requires --steps")
        base["steps"] = int(cfg["steps"])
        base["snapshot_stride"] = int(cfg.get("stride", 1))
        return "/runs/timestep", base
    raise SystemExit(f"unsupported mode {mode!r}")


def make_client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def write_outputs(mode: str, payload: dict, out_dir: Path) -> list:
    from . import reports

    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def emit_json(name, data):
        path = out_dir / name
        reports.write_json_report(data, path)
        written.append(path)

    def emit_csv(name, header, rows):
        path = out_dir / name
        reports.write_csv(path, header, rows)
        written.append(path)

    if mode in ("solve", "oracle-check"):
        nodes = payload.pop("nodes", None)
        emit_json("report.json", payload)
        if nodes:
            emit_csv("solution.csv", nodes["columns"], nodes["rows"])
    elif mode == "sweep":
        emit_csv("sweep.csv", payload["header"], payload["rows"])
    elif mode == "bench":
        emit_csv("bench.csv", payload["header"], payload["rows"])
    elif mode == "timestep":
        nodes = payload.pop("nodes", [])
        snap_dir = out_dir / "snapshots"
        columns = [f"x{k + 1}" for k in range(len(nodes[0]))] + ["u"] if nodes else []
        for run_index, entry in enumerate(payload["runs"]):
            for snap_index, snap in enumerate(entry.pop("snapshots", [])):
                snap_dir.mkdir(exist_ok=True)
                rows = [pt + [v] for pt, v in zip(nodes, snap["values"])]
                emit_csv(f"snapshots/run{run_index}_step{snap_index:04d}.csv",
                         columns, rows)
        emit_json("timestep.json", payload)
    return written


def summarize(mode: str, payload: dict) -> str:
    if mode in ("solve", "oracle-check"):
        bits = [f"problem={payload['problem']}",
                f"N={payload['mesh']['n_total']}",
                f"residual={payload['residual']:.3e}"]
        if "rel_error" in payload and payload["rel_error"] is not None:
            bits.append(f"rel_error={payload['rel_error']:.3e}")
        if "oracle_rel_diff" in payload and payload["oracle_rel_diff"] is not None:
            bits.append(f"oracle_rel_diff={payload['oracle_rel_diff']:.3e}")
        return "  ".join(bits)
    if mode in ("sweep", "bench"):
        return f"{len(payload['rows'])} rows"
    if mode == "timestep":
        runs = payload["runs"]
        bits = [f"{len(runs)} run(s)",
                f"factorizations={sum(r['factorization_events'] for r in runs)}"]
        if "temporal_orders" in payload:
            orders = ", ".join(f"{o:.2f}" for o in payload["temporal_orders"] if o)
            bits.append(f"temporal orders: {orders}")
        return "  ".join(bits)
    return "done"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.mode == "serve":
        import uvicorn

        from .service import app

        uvicorn.run(app, host="127.0.0.1", port=args.port)
        return EXIT_OK

    try:
        cfg = merge_config(args)
        endpoint, request = build_request(cfg)
    except SystemExit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    client = make_client(args.server)
    try:
        response = client.post(endpoint, json=request)
    finally:
        if args.server:
            client.close()

    if response.status_code in (400, 404, 422):
        detail = response.json().get("detail", response.text)
        print(f"error: {detail}", file=sys.stderr)
        return EXIT_CONFIG
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except json.JSONDecodeError:
            detail = response.text
        print(f"solver failure: {detail}", file=sys.stderr)
        return EXIT_NUMERIC

    payload = response.json()
    mode = cfg["mode"]
    if args.out:
        written = write_outputs(mode, payload, args.out)
        for path in written:
            print(f"wrote {path}")
    print(summarize(mode, payload))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
