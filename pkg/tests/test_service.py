import pytest
from fastapi.testclient import TestClient

from steklov.service import create_app


@pytest.fixture()
def client():
    return TestClient(create_app())


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok"
    assert "version" in body


def test_problem_listing(client):
    r = client.get("/problems")
    assert r.status_code == 200
    body = r.json()
    assert "poisson_green" in body["elliptic"]
    assert "heat_manufactured" in body["parabolic"]


def test_solve_endpoint_reports_error_and_timings(client):
    req = {"problem": {"name": "poisson_green", "d": 2},
           "mesh": {"boxes": [2, 2], "p": 6}, "oracle": True}
    r = client.post("/runs/solve", json=req)
    assert r.status_code == 200
    body = r.json()
    assert body["problem"] == "poisson_green"
    assert set(body["wall_times"]) == {"dtn_assembly", "t_assembly", "factorize",
                                       "load_reduction", "interface_solve",
                                       "interior_solve"}
    assert body["rel_error"] < 1e-4
    assert body["oracle_rel_diff"] <= 1e-10
    assert "nodes" not in body


def test_solve_endpoint_node_table(client):
    req = {"problem": {"name": "poisson_green", "d": 2},
           "mesh": {"boxes": [1, 1], "p": 5}, "include_nodes": True}
    r = client.post("/runs/solve", json=req)
    assert r.status_code == 200
    nodes = r.json()["nodes"]
    assert nodes["columns"] == ["x1", "x2", "u"]
    assert len(nodes["rows"]) == r.json()["mesh"]["n_total"]


def test_unknown_problem_is_400(client):
    r = client.post("/runs/solve", json={"problem": {"name": "bogus"}})
    assert r.status_code == 400
    assert "bogus" in r.json()["detail"]


def test_malformed_request_is_422(client):
    r = client.post("/runs/solve", json={"problem": {"d": 2}})
    assert r.status_code == 422


def test_sweep_endpoint(client):
    req = {"problem": {"name": "poisson_green", "d": 2},
           "mesh": {"p": 5}, "boxes_list": [1, 2]}
    r = client.post("/runs/sweep", json=req)
    assert r.status_code == 200
    body = r.json()
    assert body["header"][0] == "p"
    assert len(body["rows"]) == 2
    assert body["rows"][0][-1] is None       # first row carries no order
    assert body["rows"][1][-1] is not None


def test_bench_endpoint(client):
    req = {"problem": {"name": "poisson_green", "d": 2},
           "mesh": {"p": 5}, "boxes_list": [1, 2], "trials": 2}
    r = client.post("/runs/bench", json=req)
    assert r.status_code == 200
    body = r.json()
    assert body["header"] == ["N", "p", "dtn_assembly_time", "t_assembly_time",
                              "factorize_time", "interface_solve_time",
                              "interior_solve_time"]
    assert len(body["rows"]) == 2


def test_timestep_endpoint(client):
    req = {"problem": {"name": "heat_manufactured", "d": 2},
           "mesh": {"boxes": [2, 2], "p": 6}, "dt": 0.01, "steps": 3,
           "include_snapshots": False}
    r = client.post("/runs/timestep", json=req)
    assert r.status_code == 200
    body = r.json()
    run = body["runs"][0]
    assert run["factorization_events"] == 1
    assert "snapshots" not in run
    assert run["final_rel_error"] < 1e-2


def test_system_reuse_factorizes_once(client):
    build = client.post("/systems", json={
        "problem": {"name": "poisson_green", "d": 2},
        "mesh": {"boxes": [2, 2], "p": 6}})
    assert build.status_code == 200
    sid = build.json()["system_id"]
    assert build.json()["wall_times"]["factorize"] > 0.0

    first = client.post(f"/systems/{sid}/solve", json={})
    assert first.status_code == 200
    assert first.json()["rel_error"] < 1e-4

    second = client.post(f"/systems/{sid}/solve",
                         json={"body_load": "one", "dirichlet": "zero"})
    assert second.status_code == 200
    assert second.json()["wall_times"]["factorize"] == 0.0

    gone = client.delete(f"/systems/{sid}")
    assert gone.status_code == 200
    missing = client.post(f"/systems/{sid}/solve", json={})
    assert missing.status_code == 404
