"""Pydantic request/response models for the solver service."""

from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field


class ProblemModel(BaseModel):
    name: str
    d: int = Field(default=3, ge=2, le=3)
    params: Dict[str, float] = Field(default_factory=dict)


class MeshModel(BaseModel):
    boxes: Optional[List[int]] = None
    p: Optional[int] = None
    corner_mode: Literal["auto", "drop", "legendre"] = "auto"
    domain: Optional[Tuple[List[float], List[float]]] = None


class ScheduleModel(BaseModel):
    workers: int = Field(default=1, ge=1)
    batch_size: Optional[int] = Field(default=None, ge=1)
    memory_budget: int = Field(default=1 << 30, gt=0)
    resident_limit: Optional[int] = Field(default=None, ge=1)
    cache_leaf_factors: bool = False


class SolveRequest(BaseModel):
    problem: ProblemModel
    mesh: MeshModel = MeshModel()
    schedule: ScheduleModel = ScheduleModel()
    oracle: bool = False
    include_nodes: bool = False


class NodeTable(BaseModel):
    columns: List[str]
    rows: List[List[float]]


class SolveResponse(BaseModel):
    schema_version: int
    problem: str
    mode: str
    mesh: dict
    wall_times: Dict[str, float]
    residual: float
    rel_error: Optional[float] = None
    oracle_rel_diff: Optional[float] = None
    nodes: Optional[NodeTable] = None


class SweepRequest(BaseModel):
    problem: ProblemModel
    mesh: MeshModel = MeshModel()
    schedule: ScheduleModel = ScheduleModel()
    p_list: Optional[List[int]] = None
    boxes_list: Optional[List[int]] = None


class TableResponse(BaseModel):
    schema_version: int
    problem: str
    header: List[str]
    rows: List[List[Optional[float]]]


class BenchRequest(BaseModel):
    problem: ProblemModel
    mesh: MeshModel = MeshModel()
    schedule: ScheduleModel = ScheduleModel()
    boxes_list: Optional[List[int]] = None
    trials: int = Field(default=3, ge=1)


class TimestepRequest(BaseModel):
    problem: ProblemModel
    mesh: MeshModel = MeshModel()
    schedule: ScheduleModel = ScheduleModel()
    dt: Optional[float] = Field(default=None, gt=0)
    dt_list: Optional[List[float]] = None
    steps: int = Field(ge=1)
    snapshot_stride: int = Field(default=1, ge=1)
    include_snapshots: bool = True


class BuildRequest(BaseModel):
    problem: ProblemModel
    mesh: MeshModel = MeshModel()
    schedule: ScheduleModel = ScheduleModel()


class BuildResponse(BaseModel):
    system_id: str
    problem: str
    n_total: int
    n_interface: int
    wall_times: Dict[str, float]


class SystemSolveRequest(BaseModel):
    """Re-solve against a stored factorization with named data choices."""

    body_load: Literal["problem", "zero", "one"] = "problem"
    dirichlet: Literal["problem", "zero"] = "problem"


class SystemSolveResponse(BaseModel):
    system_id: str
    wall_times: Dict[str, float]
    residual: float
    rel_error: Optional[float] = None
