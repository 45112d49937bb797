"""
FastAPI service wrapping the analysis/simulation core.

The service owns the fading-average cache: expensive eps_w estimates are
computed once and shared across requests (and persisted when a cache path
is configured), so repeated sweeps over overlapping grids are cheap.

Run with the bundled CLI (`dharq serve`) or any ASGI server:

    uvicorn --factory dharq.service.app:create_app
"""

from __future__ import annotations

import os

from fastapi import FastAPI

from .. import experiments
from ..fbl import AveragingConfig, CodeSpec, EpsilonCache
from .schemas import (
    AnalyzeRequest,
    CdfRequest,
    ExperimentResponse,
    HealthResponse,
    RateSweepRequest,
    SimulateRequest,
)

CACHE_ENV_VAR = "DHARQ_CACHE"


def _respond(result: experiments.ExperimentResult) -> ExperimentResponse:
    return ExperimentResponse(
        fingerprint=result.fingerprint,
        columns=result.columns,
        rows=result.rows,
        failures=result.failures,
    )


def create_app(cache_path: str | None = None) -> FastAPI:
    """Build the service; cache_path defaults to $DHARQ_CACHE if set."""
    if cache_path is None:
        cache_path = os.environ.get(CACHE_ENV_VAR) or None
    app = FastAPI(title="dharq", version="0.1.0")
    app.state.cache = EpsilonCache(cache_path)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(
            status="ok",
            cache_path=app.state.cache.path,
            cache_entries=len(app.state.cache),
        )

    @app.post("/analyze", response_model=ExperimentResponse)
    def analyze(req: AnalyzeRequest) -> ExperimentResponse:
        result = experiments.analyze_grid(
            spec=CodeSpec(req.k, req.n),
            L=req.L,
            m_list=req.m,
            snr_db_grid=req.snr_db,
            protocols=req.protocols,
            scheme=req.scheme,
            mode=req.mode,
            avg=AveragingConfig(req.avg_samples, req.avg_seed),
            cache=app.state.cache,
            workers=req.workers,
        )
        return _respond(result)

    @app.post("/simulate", response_model=ExperimentResponse)
    def simulate(req: SimulateRequest) -> ExperimentResponse:
        result = experiments.simulate_grid(
            spec=CodeSpec(req.k, req.n),
            L=req.L,
            m_list=req.m,
            snr_db_grid=req.snr_db,
            protocols=req.protocols,
            scheme=req.scheme,
            mode=req.mode,
            avg=AveragingConfig(req.avg_samples, req.avg_seed),
            packet_count=req.packets,
            seed=req.seed,
            warmup_packets=req.warmup,
            replicas=req.replicas,
            cache=app.state.cache,
            workers=req.workers,
        )
        return _respond(result)

    @app.post("/sweep-rate", response_model=ExperimentResponse)
    def sweep_rate(req: RateSweepRequest) -> ExperimentResponse:
        result = experiments.rate_sweep(
            spec_n=req.n,
            k_list=req.k_list,
            L=req.L,
            m_list=req.m,
            snr_db=req.snr_db,
            protocols=req.protocols,
            scheme=req.scheme,
            mode=req.mode,
            avg=AveragingConfig(req.avg_samples, req.avg_seed),
            cache=app.state.cache,
            workers=req.workers,
        )
        return _respond(result)

    @app.post("/cdf", response_model=ExperimentResponse)
    def cdf(req: CdfRequest) -> ExperimentResponse:
        result = experiments.cdf_quantiles(
            spec=CodeSpec(req.k, req.n),
            L=req.L,
            m_list=req.m,
            snr_db_list=req.snr_db,
            protocols=req.protocols,
            scheme=req.scheme,
            mode=req.mode,
            realizations=req.realizations,
            seed=req.seed,
            warmup_packets=req.warmup,
            cdf_stat=req.stat,
            max_points=req.max_points,
            workers=req.workers,
        )
        return _respond(result)

    return app
