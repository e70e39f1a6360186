"""FastAPI service wrapping the design, online-assignment and simulation APIs.

Endpoints are stateless: the online state travels as a checksummed document
in the request and response, so any replica can serve any call and the CLI
can keep the document in a local file.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__
from ..bandwidth import BandwidthState
from ..data import CovariateSet
from ..errors import CovbalanceError, StateError
from ..ga import GaConfig, optimize
from ..kernel import compute_gram, criterion
from ..metrics import mahalanobis_balance
from ..online import assign_batch, init_online
from ..pca import PcaTarget, fit_pca, transform
from ..simlab import OnlineOptions, ScenarioConfig, run_comparison
from ..stateio import state_from_document, state_to_document
from .schemas import (
    AssignmentRow,
    CovariateTable,
    DesignReport,
    DesignRequest,
    DesignResponse,
    GaParams,
    OnlineAssignRequest,
    OnlineInitRequest,
    OnlineResponse,
    PcaParams,
    SimulateRequest,
    SimulateResponse,
)


def _covariates(table: CovariateTable) -> CovariateSet:
    return CovariateSet(tuple(table.unit_ids), np.array(table.values, dtype=np.float64))


def _ga_config(params: GaParams | None, seed: int) -> GaConfig:
    if params is None:
        return GaConfig(seed=seed)
    return GaConfig(
        population_size=params.population,
        elite_count=params.elites,
        max_generations=params.iterations,
        seed=seed,
        stall_window=params.stall_window,
    )


def _pca_target(params: PcaParams | None) -> PcaTarget | None:
    if params is None:
        return None
    if (params.components is None) == (params.variance_fraction is None):
        raise HTTPException(
            status_code=422,
            detail="set exactly one of pca components / variance_fraction",
        )
    if params.components is not None:
        return PcaTarget.count(params.components)
    return PcaTarget.fraction(params.variance_fraction)


def _assignment_rows(
    unit_ids, groups, treatment_map: dict[int, int]
) -> list[AssignmentRow]:
    return [
        AssignmentRow(unit_id=uid, group=int(g), treatment=treatment_map[int(g)])
        for uid, g in zip(unit_ids, groups)
    ]


def create_app() -> FastAPI:
    app = FastAPI(title="covbalance", version=__version__)

    @app.exception_handler(CovbalanceError)
    async def _domain_error(_, exc: CovbalanceError):
        status = 409 if isinstance(exc, StateError) else 400
        return JSONResponse(
            status_code=status,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": __version__}

    @app.post("/design", response_model=DesignResponse)
    def design(request: DesignRequest) -> DesignResponse:
        return run_design(request)

    @app.post("/online/init", response_model=OnlineResponse)
    def online_init(request: OnlineInitRequest) -> OnlineResponse:
        return run_online_init(request)

    @app.post("/online/assign", response_model=OnlineResponse)
    def online_assign(request: OnlineAssignRequest) -> OnlineResponse:
        return run_online_assign(request)

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(request: SimulateRequest) -> SimulateResponse:
        return run_simulate(request)

    return app


def run_design(request: DesignRequest) -> DesignResponse:
    """Offline design: optimize the partition, then randomize treatments."""
    covariates = _covariates(request.covariates)
    if covariates.n < request.groups:
        raise HTTPException(
            status_code=400,
            detail=f"{covariates.n} units cannot fill {request.groups} groups",
        )
    rng = np.random.default_rng(request.seed)
    target = _pca_target(request.pca)
    reducer = fit_pca(covariates, target) if target is not None else None
    coords = transform(reducer, covariates) if reducer is not None else covariates
    bandwidth = BandwidthState.from_data(coords, request.shrinkage_weight)
    gram = compute_gram(coords, bandwidth)
    config = _ga_config(request.ga, request.seed)
    result = optimize(gram, request.groups, config, rng=rng)
    treatment_map = {
        l + 1: int(t) for l, t in enumerate(rng.permutation(request.groups) + 1)
    }
    balance = None
    try:
        balance = mahalanobis_balance(covariates, result.partition).mean
    except CovbalanceError:
        pass  # singular pooled covariance: report criterion only
    report = DesignReport(
        criterion=result.value,
        mahalanobis_mean=balance,
        seed=request.seed,
        groups=request.groups,
        ga=GaParams(
            population=config.population_size,
            elites=config.elite_count,
            iterations=config.max_generations,
            stall_window=config.stall_window,
        ),
        pca_components=None if reducer is None else reducer.n_components,
        generations_run=len(result.trace) - 1,
    )
    rows = _assignment_rows(covariates.unit_ids, result.partition.groups, treatment_map)
    return DesignResponse(assignments=rows, report=report)


def run_online_init(request: OnlineInitRequest) -> OnlineResponse:
    first = _covariates(request.covariates)
    state, assignments = init_online(
        first,
        request.groups,
        _ga_config(request.ga, request.seed),
        np.random.default_rng(request.seed),
        pca_target=_pca_target(request.pca),
        freeze_bandwidth=request.freeze_bandwidth,
        balance=request.balance,
        weight_override=request.shrinkage_weight,
    )
    rows = [
        AssignmentRow(
            unit_id=uid,
            group=int(g),
            treatment=assignments[uid],
        )
        for uid, g in zip(first.unit_ids, state.groups)
    ]
    return OnlineResponse(
        state=state_to_document(state),
        assignments=rows,
        criterion=criterion(state.gram, state.partition),
        group_sizes=list(state.group_sizes),
    )


def run_online_assign(request: OnlineAssignRequest) -> OnlineResponse:
    state = state_from_document(request.state)
    batch = _covariates(request.batch)
    old_n = state.covariates.n
    state, assignments = assign_batch(state, batch)
    rows = [
        AssignmentRow(
            unit_id=uid,
            group=int(state.groups[old_n + k]),
            treatment=assignments[uid],
        )
        for k, uid in enumerate(batch.unit_ids)
    ]
    return OnlineResponse(
        state=state_to_document(state),
        assignments=rows,
        criterion=criterion(state.gram, state.partition),
        group_sizes=list(state.group_sizes),
    )


def run_simulate(request: SimulateRequest) -> SimulateResponse:
    online = None
    if request.initial_size is not None or request.batch_size is not None:
        if request.initial_size is None or request.batch_size is None:
            raise HTTPException(
                status_code=422,
                detail="online simulation needs both initial_size and batch_size",
            )
        online = OnlineOptions(request.initial_size, request.batch_size)
    ga = None
    if request.ga is not None:
        ga = _ga_config(request.ga, request.seed)
    config = ScenarioConfig(
        scenario=request.scenario,
        group_count=request.groups,
        sample_size=request.sample_size,
        replicates=request.replicates,
        noise_sd=request.noise_sd,
        seed=request.seed,
        ga=ga,
        online=online,
    )
    report = run_comparison(config)
    return SimulateResponse(
        schema_version=report.schema_version,
        config=report.config,
        rows=[dataclasses.asdict(row) for row in report.rows],
        summary=report.summary(),
    )


app = create_app()
