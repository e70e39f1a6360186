"""Pydantic request/response models for the HTTP service and the CLI client."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class CovariateTable(BaseModel):
    """Wire form of a covariate set: parallel ids and value rows."""

    unit_ids: list[str]
    values: list[list[float]]


class GaParams(BaseModel):
    population: int = 100
    elites: int = 20
    iterations: int = 300
    stall_window: Optional[int] = None


class PcaParams(BaseModel):
    """Exactly one of ``components`` / ``variance_fraction`` must be set."""

    components: Optional[int] = None
    variance_fraction: Optional[float] = None


class AssignmentRow(BaseModel):
    unit_id: str
    group: int
    treatment: int


class DesignRequest(BaseModel):
    covariates: CovariateTable
    groups: int = Field(ge=2)
    seed: int = 0
    ga: Optional[GaParams] = None
    pca: Optional[PcaParams] = None
    shrinkage_weight: Optional[float] = None


class DesignReport(BaseModel):
    criterion: float
    mahalanobis_mean: Optional[float] = None
    seed: int
    groups: int
    ga: GaParams
    pca_components: Optional[int] = None
    generations_run: int


class DesignResponse(BaseModel):
    assignments: list[AssignmentRow]
    report: DesignReport


class OnlineInitRequest(BaseModel):
    covariates: CovariateTable
    groups: int = Field(ge=2)
    seed: int = 0
    ga: Optional[GaParams] = None
    pca: Optional[PcaParams] = None
    freeze_bandwidth: bool = False
    balance: Literal["strict", "batch"] = "strict"
    shrinkage_weight: Optional[float] = None


class OnlineAssignRequest(BaseModel):
    state: dict
    batch: CovariateTable


class OnlineResponse(BaseModel):
    state: dict
    assignments: list[AssignmentRow]
    criterion: float
    group_sizes: list[int]


class SimulateRequest(BaseModel):
    scenario: Literal["case1", "case2", "logistic", "highdim"]
    groups: int = Field(default=2, ge=2)
    sample_size: int = 200
    replicates: int = 30
    noise_sd: float = 1.0
    seed: int = 0
    ga: Optional[GaParams] = None
    initial_size: Optional[int] = None
    batch_size: Optional[int] = None


class SimulateResponse(BaseModel):
    schema_version: int
    config: dict
    rows: list[dict]
    summary: dict
