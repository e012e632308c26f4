"""Request/response models for the HTTP service.

Theories, evidence and targets travel as source text; the service is
stateless and every request is a complete batch job.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class LimitsModel(BaseModel):
    max_depth: int = 64
    max_nodes: int = 20000
    max_parent_product: int = 1_000_000


class ValidateRequest(BaseModel):
    theory: str
    evidence: Optional[str] = None
    depth_bound: int = 1000


class ViolationModel(BaseModel):
    tag: str
    witnesses: list[str]
    message: str


class ValidateResponse(BaseModel):
    ok: bool
    violations: list[ViolationModel] = Field(default_factory=list)
    max_depth: Optional[int] = None


class QueryRequest(BaseModel):
    theory: str
    evidence: Optional[str] = None
    targets: list[str]
    limits: LimitsModel = Field(default_factory=LimitsModel)
    oracle: bool = False
    prune: bool = True
    include_dot: bool = False


class PosteriorModel(BaseModel):
    target: str
    states: list[str]
    probs: list[float]
    evidence_probability: float
    ssbn_nodes: int
    elapsed_ms: float


class QueryResponse(BaseModel):
    results: list[PosteriorModel]
    ssbn_nodes_unpruned: int
    dot: Optional[str] = None


class GroundRequest(BaseModel):
    theory: str
    evidence: Optional[str] = None
    targets: list[str]
    limits: LimitsModel = Field(default_factory=LimitsModel)
    prune: bool = True


class GroundResponse(BaseModel):
    ssbn: dict
    dot: str


class ScenarioModel(BaseModel):
    name: str
    targets: list[str]


class CorpusRunRow(BaseModel):
    scenario: str
    status: str
    max_abs_diff: float
    detail: str


class CorpusRunResponse(BaseModel):
    rows: list[CorpusRunRow]
    ok: bool


class ErrorModel(BaseModel):
    stage: str
    error: str
    detail: str
