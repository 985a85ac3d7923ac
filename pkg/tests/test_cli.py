import json
from pathlib import Path

import numpy as np
import pytest

from steklov import reports
from steklov.cli import (build_request, main, merge_config, parse_boxes,
                         parse_size, read_config_file)


def run_cli(args):
    return main(args)


def test_parse_size_suffixes():
    assert parse_size("512") == 512
    assert parse_size("2K") == 2048
    assert parse_size("1.5m") == int(1.5 * (1 << 20))
    assert parse_size("2g") == 2 << 30


def test_parse_boxes_forms():
    assert parse_boxes("2x3x1") == ("dims", (2, 3, 1))
    assert parse_boxes("2,4,6") == ("list", (2, 4, 6))
    assert parse_boxes("4") == ("dims", (4,))


def test_config_file_round_trip(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("problem = poisson_green\n"
                   "# comment line\n"
                   "boxes = 2x2\n"
                   "p = 6\n"
                   "memory-budget = 256M\n")
    parsed = read_config_file(cfg)
    assert parsed["problem"] == "poisson_green"
    assert parsed["memory_budget"] == "256M"


def test_config_file_error_reports_line(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("problem poisson_green\n")
    with pytest.raises(SystemExit) as err:
        read_config_file(cfg)
    assert "bad.cfg:1" in str(err.value)


def test_solve_writes_report_and_nodes(tmp_path):
    out = tmp_path / "run"
    code = run_cli(["--problem", "poisson_green", "--d", "2", "--boxes", "2x2",
                    "--p", "6", "--out", str(out), "--nodes", "--oracle"])
    assert code == 0
    report = reports.read_json_report(out / "report.json")
    assert report["schema_version"] == 1
    assert report["rel_error"] < 1e-4
    assert report["oracle_rel_diff"] <= 1e-10
    assert len(report["wall_times"]) == 6
    header, rows = reports.read_csv(out / "solution.csv")
    assert header == ["x1", "x2", "u"]
    assert len(rows) == report["mesh"]["n_total"]


def test_unknown_problem_usage_error_no_files(tmp_path):
    out = tmp_path / "nope"
    code = run_cli(["--problem", "not_a_problem", "--out", str(out)])
    assert code == 2
    assert not out.exists()


def test_sweep_csv_round_trip(tmp_path):
    out = tmp_path / "sweep"
    code = run_cli(["--problem", "poisson_green", "--d", "2", "--mode", "sweep",
                    "--boxes", "1,2", "--p", "5", "--out", str(out)])
    assert code == 0
    header, rows = reports.read_csv(out / "sweep.csv")
    assert header[:5] == ["p", "boxes", "n_total", "n_interface", "rel_error"]
    assert len(rows) == 2
    assert rows[0][-1] is None
    assert isinstance(rows[1][-1], float)


def test_bench_csv(tmp_path):
    out = tmp_path / "bench"
    code = run_cli(["--problem", "poisson_green", "--d", "2", "--mode", "bench",
                    "--boxes", "1,2", "--p", "5", "--trials", "2",
                    "--out", str(out)])
    assert code == 0
    header, rows = reports.read_csv(out / "bench.csv")
    assert header == ["N", "p", "dtn_assembly_time", "t_assembly_time",
                      "factorize_time", "interface_solve_time",
                      "interior_solve_time"]
    assert len(rows) == 2


def test_timestep_outputs(tmp_path):
    out = tmp_path / "ts"
    code = run_cli(["--problem", "heat_manufactured", "--d", "2",
                    "--mode", "timestep", "--boxes", "2x2", "--p", "6",
                    "--dt", "0.01", "--steps", "2", "--out", str(out)])
    assert code == 0
    log = reports.read_json_report(out / "timestep.json")
    assert log["runs"][0]["factorization_events"] == 1
    snaps = sorted((out / "snapshots").glob("*.csv"))
    assert len(snaps) == 3  # initial state plus two steps
    header, rows = reports.read_csv(snaps[0])
    assert header == ["x1", "x2", "u"]
    assert len(rows) == log["mesh"]["n_total"]


def test_timestep_dt_list_reports_orders(tmp_path):
    out = tmp_path / "orders"
    code = run_cli(["--problem", "heat_manufactured", "--d", "2",
                    "--mode", "timestep", "--boxes", "2x2", "--p", "8",
                    "--dt", "0.01,0.005", "--steps", "4", "--stride", "4",
                    "--out", str(out)])
    assert code == 0
    log = reports.read_json_report(out / "timestep.json")
    assert len(log["runs"]) == 2
    assert len(log["temporal_orders"]) == 1
    assert log["temporal_orders"][0] == pytest.approx(2.0, abs=0.5)


def test_flag_overrides_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("problem = poisson_green\nd = 2\nboxes = 1x1\np = 5\n")
    merged = merge_config(_FakeArgs(config=cfg, p="6"))
    endpoint, payload = build_request(merged)
    assert endpoint == "/runs/solve"
    assert payload["mesh"]["p"] == 6
    assert payload["mesh"]["boxes"] == [1, 1]


class _FakeArgs:
    """argparse.Namespace stand-in with everything unset except overrides."""

    def __init__(self, **overrides):
        defaults = dict(config=None, problem=None, mode=None, d=None, boxes=None,
                        p=None, corner_mode=None, domain=None, kappa=None,
                        amplitude=None, frequency=None, diffusivity=None,
                        workers=None, batch_size=None, memory_budget=None,
                        oracle=False, nodes=False, dt=None, steps=None,
                        stride=None, trials=None, out=None, server=None,
                        port=8000)
        defaults.update(overrides)
        self.__dict__.update(defaults)

    def __iter__(self):
        return iter(self.__dict__)


def test_missing_problem_is_usage_error():
    assert run_cli(["--mode", "solve"]) == 2


def test_sweep_requires_list():
    # single p and single boxes: server rejects sweep without a list
    code = run_cli(["--problem", "poisson_green", "--d", "2", "--mode", "sweep",
                    "--boxes", "2x2", "--p", "5"])
    assert code == 2
