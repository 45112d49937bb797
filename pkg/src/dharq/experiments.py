"""
Experiment grids: analytic curves, simulation sweeps, rate sweeps, and
conditional-error CDFs, all emitted as ordered row dicts.

Every run is stamped with a config fingerprint so any number in an output
file can be reproduced from the file alone. Rows that hit a degenerate
chain (error probabilities pinned at 0 or 1 at extreme SNR) carry a
sentinel status instead of aborting the run.

Throughput columns: `throughput` counts expected actual transmissions;
`throughput_charged` uses the Markov bookkeeping that charges transitions
their full slot budget (conservative at high SNR). The two coincide for
open-loop transmission.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .channel import FadingSource, snr_from_db
from .fbl import (
    ApproximationMode,
    AveragingConfig,
    CodeSpec,
    CombiningScheme,
    EpsilonCache,
    averaged_error,
)
from .markov import (
    DegenerateChainError,
    ProtocolParams,
    TxCounting,
    dharq_per,
    dharq_per_stderr,
    dharq_throughput,
    fixed_tx_per,
    fixed_tx_throughput,
    harq_error_table,
    harq_per_from_table,
    harq_throughput_from_table,
)
from .simulate import CdfStat, Protocol, SimConfig, conditional_per_cdf, run_replicated

ANALYZE_COLUMNS = ["snr_db", "protocol", "m", "per", "throughput", "throughput_charged", "status"]
SIMULATE_COLUMNS = [
    "snr_db", "protocol", "m",
    "per_sim", "per_stderr", "throughput_sim", "mean_tx_sim", "occupancy",
    "per_analytic", "per_analytic_stderr", "throughput_analytic",
    "agree_3sigma", "status",
]
RATE_SWEEP_COLUMNS = ["k", "protocol", "m", "rate", "per", "throughput", "throughput_charged", "status"]
CDF_COLUMNS = ["protocol", "snr_db", "quantile", "value"]


@dataclass
class ExperimentResult:
    fingerprint: str
    columns: list[str]
    rows: list[dict]

    @property
    def failures(self) -> list[dict]:
        return [r for r in self.rows if r.get("status", "ok") != "ok"]


def fingerprint(command: str, fields: dict) -> str:
    parts = [f"command={command}"]
    for key, value in fields.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        parts.append(f"{key}={value}")
    return " ".join(parts)


def _run_tasks(tasks: Sequence[Callable[[], list[dict]]], workers: int) -> list[dict]:
    # Tasks are independent; output order follows task order regardless of
    # completion order.
    if workers <= 1 or len(tasks) <= 1:
        chunks = [task() for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda t: t(), tasks))
    return [row for chunk in chunks for row in chunk]


def _protocol_points(protocols: Sequence[Protocol], m_list: Sequence[int]) -> list[tuple[Protocol, int | None]]:
    points: list[tuple[Protocol, int | None]] = []
    for proto in protocols:
        if proto is Protocol.DHARQ:
            points.extend((proto, m) for m in m_list)
        else:
            points.append((proto, None))
    return points


def _analytic_point(
    proto: Protocol,
    spec: CodeSpec,
    L: int,
    m: int | None,
    gamma0: float,
    scheme: CombiningScheme,
    mode: ApproximationMode,
    avg: AveragingConfig,
    cache: EpsilonCache | None,
) -> dict:
    """per / throughput (actual) / throughput (charged) for one grid point."""
    if proto is Protocol.FIXED:
        params = ProtocolParams(L, 0)
        zeta = fixed_tx_per(spec, params, gamma0, mode, scheme, avg, cache)
        eta = fixed_tx_throughput(spec, params, gamma0, mode, scheme, avg, cache)
        se = averaged_error(
            L, spec, spec.timeslot_symbols, gamma0, scheme, mode, avg, cache, nested=False
        ).stderr
        return {"per": zeta, "throughput": eta, "throughput_charged": eta, "per_stderr": se}
    if proto is Protocol.HARQ:
        params = ProtocolParams(L, 0)
        table = harq_error_table(spec, params, gamma0, scheme, mode, avg, cache)
        zeta = harq_per_from_table(table, L)
        eta = harq_throughput_from_table(spec, table, L)
        charged = spec.k * (1.0 - zeta) / (2.0 * spec.n * L)
        return {
            "per": zeta,
            "throughput": eta,
            "throughput_charged": charged,
            "per_stderr": table.stderr(L),
            "table": table,
        }
    params = ProtocolParams(L, int(m))
    table = harq_error_table(spec, params, gamma0, scheme, mode, avg, cache)
    zeta = dharq_per(params, table)
    return {
        "per": zeta,
        "throughput": dharq_throughput(params, table, spec, TxCounting.ACTUAL),
        "throughput_charged": dharq_throughput(params, table, spec, TxCounting.CHARGED),
        "per_stderr": dharq_per_stderr(params, table),
        "table": table,
    }


def analyze_grid(
    spec: CodeSpec,
    L: int,
    m_list: Sequence[int],
    snr_db_grid: Sequence[float],
    protocols: Sequence[Protocol],
    scheme: CombiningScheme,
    mode: ApproximationMode,
    avg: AveragingConfig,
    cache: EpsilonCache | None = None,
    workers: int = 1,
) -> ExperimentResult:
    """Analytic error rate and throughput over an SNR grid."""
    fp = fingerprint("analyze", {
        "k": spec.k, "n": spec.n, "L": L, "m": list(m_list),
        "snr_db": [f"{s:g}" for s in snr_db_grid],
        "protocols": [p.value for p in protocols],
        "scheme": scheme.value, "mode": mode.value,
        "avg_samples": avg.sample_count, "avg_seed": avg.seed,
    })
    points = _protocol_points(protocols, m_list)

    def task_for(db: float, proto: Protocol, m: int | None) -> Callable[[], list[dict]]:
        def task() -> list[dict]:
            row = {"snr_db": db, "protocol": proto.value, "m": "" if m is None else m}
            try:
                point = _analytic_point(
                    proto, spec, L, m, snr_from_db(db), scheme, mode, avg, cache
                )
                row.update(
                    per=point["per"],
                    throughput=point["throughput"],
                    throughput_charged=point["throughput_charged"],
                    status="ok",
                )
            except DegenerateChainError as exc:
                row.update(per="", throughput="", throughput_charged="", status=f"degenerate: {exc}")
            return [row]
        return task

    tasks = [task_for(db, proto, m) for db in snr_db_grid for proto, m in points]
    return ExperimentResult(fp, ANALYZE_COLUMNS, _run_tasks(tasks, workers))


def simulate_grid(
    spec: CodeSpec,
    L: int,
    m_list: Sequence[int],
    snr_db_grid: Sequence[float],
    protocols: Sequence[Protocol],
    scheme: CombiningScheme,
    mode: ApproximationMode,
    avg: AveragingConfig,
    packet_count: int,
    seed: int,
    warmup_packets: int = 1_000,
    replicas: int = 1,
    cache: EpsilonCache | None = None,
    workers: int = 1,
) -> ExperimentResult:
    """Monte Carlo sweep with analytic columns side by side."""
    fp = fingerprint("simulate", {
        "k": spec.k, "n": spec.n, "L": L, "m": list(m_list),
        "snr_db": [f"{s:g}" for s in snr_db_grid],
        "protocols": [p.value for p in protocols],
        "scheme": scheme.value, "mode": mode.value,
        "avg_samples": avg.sample_count, "avg_seed": avg.seed,
        "packets": packet_count, "warmup": warmup_packets,
        "sim_seed": seed, "replicas": replicas,
    })
    points = _protocol_points(protocols, m_list)

    def task_for(db: float, proto: Protocol, m: int | None) -> Callable[[], list[dict]]:
        def task() -> list[dict]:
            row = {"snr_db": db, "protocol": proto.value, "m": "" if m is None else m}
            gamma0 = snr_from_db(db)
            params = ProtocolParams(L, int(m) if m is not None else 0)
            config = SimConfig(
                protocol=proto, params=params, spec=spec, gamma0=gamma0,
                scheme=scheme, mode=mode, packet_count=packet_count,
                seed=seed, warmup_packets=warmup_packets,
            )
            result = run_replicated(config, replicas=replicas)
            row.update(
                per_sim=result.per_estimate,
                per_stderr=result.per_stderr,
                throughput_sim=result.throughput_measured,
                mean_tx_sim=result.mean_transmissions,
                occupancy=";".join(repr(float(v)) for v in result.state_occupancy),
            )
            try:
                point = _analytic_point(proto, spec, L, m, gamma0, scheme, mode, avg, cache)
                combined = math.sqrt(result.per_stderr**2 + point["per_stderr"] ** 2)
                agree = abs(result.per_estimate - point["per"]) <= 3.0 * combined
                row.update(
                    per_analytic=point["per"],
                    per_analytic_stderr=point["per_stderr"],
                    throughput_analytic=point["throughput"],
                    agree_3sigma="pass" if agree else "fail",
                    status="ok",
                )
            except DegenerateChainError as exc:
                row.update(
                    per_analytic="", per_analytic_stderr="", throughput_analytic="",
                    agree_3sigma="", status=f"degenerate: {exc}",
                )
            return [row]
        return task

    tasks = [task_for(db, proto, m) for db in snr_db_grid for proto, m in points]
    return ExperimentResult(fp, SIMULATE_COLUMNS, _run_tasks(tasks, workers))


def rate_sweep(
    spec_n: int,
    k_list: Sequence[int],
    L: int,
    m_list: Sequence[int],
    snr_db: float,
    protocols: Sequence[Protocol],
    scheme: CombiningScheme,
    mode: ApproximationMode,
    avg: AveragingConfig,
    cache: EpsilonCache | None = None,
    workers: int = 1,
) -> ExperimentResult:
    """Error-rate / throughput frontier over information lengths k at fixed SNR."""
    fp = fingerprint("sweep-rate", {
        "n": spec_n, "k": list(k_list), "L": L, "m": list(m_list),
        "snr_db": f"{snr_db:g}",
        "protocols": [p.value for p in protocols],
        "scheme": scheme.value, "mode": mode.value,
        "avg_samples": avg.sample_count, "avg_seed": avg.seed,
    })
    gamma0 = snr_from_db(snr_db)
    points = _protocol_points(protocols, m_list)

    def task_for(k: int, proto: Protocol, m: int | None) -> Callable[[], list[dict]]:
        def task() -> list[dict]:
            row = {"k": k, "protocol": proto.value, "m": "" if m is None else m}
            if k < 1 or k > 2 * spec_n:
                row.update(rate="", per="", throughput="", throughput_charged="",
                           status=f"error: k={k} outside (0, {2 * spec_n}] (rate above 1)")
                return [row]
            spec = CodeSpec(k, spec_n)
            rate = spec.fixed_rate if proto is Protocol.FIXED else spec.harq_rate
            row["rate"] = rate
            try:
                point = _analytic_point(proto, spec, L, m, gamma0, scheme, mode, avg, cache)
                row.update(
                    per=point["per"],
                    throughput=point["throughput"],
                    throughput_charged=point["throughput_charged"],
                    status="ok",
                )
            except DegenerateChainError as exc:
                row.update(per="", throughput="", throughput_charged="", status=f"degenerate: {exc}")
            return [row]
        return task

    tasks = [task_for(k, proto, m) for k in k_list for proto, m in points]
    return ExperimentResult(fp, RATE_SWEEP_COLUMNS, _run_tasks(tasks, workers))


def cdf_quantiles(
    spec: CodeSpec,
    L: int,
    m_list: Sequence[int],
    snr_db_list: Sequence[float],
    protocols: Sequence[Protocol],
    scheme: CombiningScheme,
    mode: ApproximationMode,
    realizations: int,
    seed: int,
    warmup_packets: int = 1_000,
    cdf_stat: CdfStat = CdfStat.CAP,
    max_points: int = 10_000,
    workers: int = 1,
) -> ExperimentResult:
    """Empirical CDF of per-packet conditional error at the transmission cap."""
    fp = fingerprint("cdf", {
        "k": spec.k, "n": spec.n, "L": L, "m": list(m_list),
        "snr_db": [f"{s:g}" for s in snr_db_list],
        "protocols": [p.value for p in protocols],
        "scheme": scheme.value, "mode": mode.value,
        "realizations": realizations, "sim_seed": seed,
        "warmup": warmup_packets, "stat": cdf_stat.value,
    })
    points = _protocol_points(protocols, m_list)

    def task_for(db: float, proto: Protocol, m: int | None) -> Callable[[], list[dict]]:
        def task() -> list[dict]:
            params = ProtocolParams(L, int(m) if m is not None else 0)
            gamma0 = snr_from_db(db)
            config = SimConfig(
                protocol=proto, params=params, spec=spec, gamma0=gamma0,
                scheme=scheme, mode=mode,
                packet_count=warmup_packets + realizations,
                seed=seed, warmup_packets=warmup_packets,
            )
            samples = conditional_per_cdf(
                config, FadingSource(gamma0, seed, stream_id=0), realizations, cdf_stat
            )
            if samples.size > max_points:
                q = np.linspace(0.0, 1.0, max_points)
                values = np.quantile(samples, q)
            else:
                q = (np.arange(samples.size) + 1.0) / samples.size
                values = samples
            label = proto.value if m is None else f"{proto.value}(m={m})"
            return [
                {"protocol": label, "snr_db": db, "quantile": float(qq), "value": float(v)}
                for qq, v in zip(q, values)
            ]
        return task

    tasks = [task_for(db, proto, m) for db in snr_db_list for proto, m in points]
    return ExperimentResult(fp, CDF_COLUMNS, _run_tasks(tasks, workers))
