"""Pydantic request/response models for the experiment service."""

from __future__ import annotations

from pydantic import BaseModel, Field, field_validator, model_validator

from ..fbl import ApproximationMode, CombiningScheme
from ..simulate import CdfStat, Protocol

DEFAULT_AVG_SEED = 123456789


class ExperimentRequest(BaseModel):
    """Fields shared by every experiment endpoint."""

    k: int = Field(32, ge=1)
    n: int = Field(32, ge=1)
    L: int = Field(2, ge=1)
    m: list[int] = [1]
    protocols: list[Protocol] = [Protocol.DHARQ, Protocol.HARQ, Protocol.FIXED]
    scheme: CombiningScheme = CombiningScheme.CHASE
    mode: ApproximationMode = ApproximationMode.NORMAL
    avg_samples: int = Field(1_000_000, ge=1)
    avg_seed: int = Field(DEFAULT_AVG_SEED, ge=0, lt=2**64)
    workers: int = Field(1, ge=1, le=64)

    @field_validator("protocols")
    @classmethod
    def protocols_nonempty(cls, v: list[Protocol]) -> list[Protocol]:
        if not v:
            raise ValueError("at least one protocol is required")
        return v

    @field_validator("m")
    @classmethod
    def m_nonempty(cls, v: list[int]) -> list[int]:
        if not v:
            raise ValueError("at least one credit cap m is required")
        return v

    @model_validator(mode="after")
    def credit_below_deadline(self) -> "ExperimentRequest":
        for m in self.m:
            if not (0 <= m < self.L):
                raise ValueError(f"credit cap must satisfy 0 <= m < L, got m={m}, L={self.L}")
        return self


class AnalyzeRequest(ExperimentRequest):
    snr_db: list[float] = Field(..., min_length=1)


class SimulateRequest(ExperimentRequest):
    snr_db: list[float] = Field(..., min_length=1)
    packets: int = Field(100_000, ge=2)
    warmup: int = Field(1_000, ge=0)
    seed: int = Field(1, ge=0, lt=2**64)
    replicas: int = Field(1, ge=1, le=1024)

    @model_validator(mode="after")
    def warmup_leaves_packets(self) -> "SimulateRequest":
        if self.warmup >= self.packets:
            raise ValueError("warmup must be smaller than the packet count")
        return self


class RateSweepRequest(ExperimentRequest):
    k_list: list[int] = Field(..., min_length=1)
    snr_db: float = 10.0


class CdfRequest(ExperimentRequest):
    snr_db: list[float] = Field(..., min_length=1)
    realizations: int = Field(10_000, ge=1)
    seed: int = Field(1, ge=0, lt=2**64)
    warmup: int = Field(1_000, ge=0)
    stat: CdfStat = CdfStat.CAP
    max_points: int = Field(10_000, ge=1, le=10_000)


class ExperimentResponse(BaseModel):
    fingerprint: str
    columns: list[str]
    rows: list[dict]
    failures: list[dict]


class HealthResponse(BaseModel):
    status: str
    cache_path: str | None
    cache_entries: int
