"""
Monte Carlo packet-stream simulation of the retransmission schemes.

Each packet draws one fading realization per transmission attempt and a
single uniform variate U that decides the whole attempt sequence: decoding
succeeds at the first attempt w whose (running-minimum) conditional error
profile drops below U. This monotone coupling makes "failed at w" imply
"failed at every attempt before w", matching the nested failure events the
analytical chain assumes, so the simulator is an exact realization of that
chain and validates it directly.

The per-attempt error profiles are computed in vectorized batches; only
the credit recursion (which couples consecutive packets in the dynamic
scheme) runs packet by packet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .channel import FadingSource
from .fbl import (
    ApproximationMode,
    CodeSpec,
    CombiningScheme,
    attempt_error_profile,
)
from .markov import ProtocolParams

_CHUNK = 1 << 17


class Protocol(str, Enum):
    FIXED = "fixed"
    HARQ = "harq"
    DHARQ = "dharq"


class CdfStat(str, Enum):
    """Which conditional error a packet contributes to the CDF output."""

    CAP = "cap"                  # error profile at the packet's full budget
    TERMINATION = "termination"  # error profile at the attempt it stopped on


@dataclass(frozen=True)
class SimConfig:
    protocol: Protocol
    params: ProtocolParams
    spec: CodeSpec
    gamma0: float
    scheme: CombiningScheme = CombiningScheme.CHASE
    mode: ApproximationMode = ApproximationMode.NORMAL
    packet_count: int = 1_000_000
    seed: int = 1
    warmup_packets: int = 1_000

    def __post_init__(self) -> None:
        if self.packet_count < 1:
            raise ValueError("packet_count must be positive")
        if self.warmup_packets < 0:
            raise ValueError("warmup_packets must be nonnegative")
        if self.warmup_packets >= self.packet_count:
            raise ValueError("warmup must leave at least one counted packet")
        if not (self.gamma0 > 0) or not math.isfinite(self.gamma0):
            raise ValueError(f"mean SNR must be positive and finite, got {self.gamma0}")

    @property
    def block_length(self) -> int:
        return self.spec.timeslot_symbols if self.protocol is Protocol.FIXED else self.spec.n


@dataclass(frozen=True)
class PacketOutcome:
    """Per-packet record (collected only on request; the bulk path is array-based)."""

    credit_on_entry: int
    transmissions_used: int
    success: bool
    conditional_error_at_cap: float


@dataclass
class SimResult:
    per_estimate: float
    per_stderr: float
    throughput_measured: float
    mean_transmissions: float
    mean_transmissions_stderr: float
    state_occupancy: np.ndarray
    cdf_samples: np.ndarray
    packets_counted: int
    successes: int
    total_transmissions: int
    outcomes: list[PacketOutcome] = field(default_factory=list)


def _decode_uniforms(config: SimConfig, stream_id: int) -> np.random.Generator:
    # Decode randomness is separated from the fading stream: PCG64 seeded
    # by (config seed, tag 1, stream id).
    return np.random.default_rng(np.random.SeedSequence([config.seed, 1, stream_id]))


def _first_crossing(eps_profile: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """First attempt w with U > eps (1-based); w_max+1 when none."""
    success = uniforms[:, np.newaxis] > eps_profile
    any_success = success.any(axis=1)
    first = np.where(any_success, success.argmax(axis=1) + 1, eps_profile.shape[1] + 1)
    return first.astype(np.int64)


def _finalize(
    config: SimConfig,
    drops: int,
    counted: int,
    successes: int,
    total_tx: int,
    sum_tx_sq: float,
    occupancy_counts: np.ndarray,
    cdf: list[float] | None,
    outcomes: list[PacketOutcome],
) -> SimResult:
    per = drops / counted
    per_stderr = math.sqrt(per * (1.0 - per) / counted)
    mean_tx = total_tx / counted
    var_tx = max(sum_tx_sq / counted - mean_tx**2, 0.0)
    spec = config.spec
    throughput = spec.k * successes / (2.0 * spec.n * total_tx)
    samples = np.sort(np.asarray(cdf, dtype=float)) if cdf is not None else np.empty(0)
    return SimResult(
        per_estimate=per,
        per_stderr=per_stderr,
        throughput_measured=throughput,
        mean_transmissions=mean_tx,
        mean_transmissions_stderr=math.sqrt(var_tx / counted),
        state_occupancy=occupancy_counts / counted,
        cdf_samples=samples,
        packets_counted=counted,
        successes=successes,
        total_transmissions=total_tx,
        outcomes=outcomes,
    )


def run_dharq(
    config: SimConfig,
    fading: FadingSource,
    collect_cdf: bool = False,
    cdf_limit: int | None = None,
    cdf_stat: CdfStat = CdfStat.CAP,
    return_outcomes: bool = False,
) -> SimResult:
    """Simulate the credit-banking scheme.

    State is the banked credit j in [0, m], starting at m (the warmup
    discards any influence of that choice). A packet entering with credit j
    may send up to B = L + j times; success at attempt w banks
    min(B - w, m) for the successor, exhaustion drops the packet and the
    successor starts with credit 0 (a drop ends exactly at the deadline).
    Occupancy is tallied over the outcome states [0..m, e].
    """
    if config.protocol is not Protocol.DHARQ:
        raise ValueError(f"config.protocol must be dharq, got {config.protocol}")
    spec, params = config.spec, config.params
    L, m = params.L, params.m
    w_max = L + m
    uniform_rng = _decode_uniforms(config, fading.stream_id)

    credit = m
    drops = counted = successes = total_tx = 0
    sum_tx_sq = 0.0
    occupancy = np.zeros(m + 2)
    cdf: list[float] | None = [] if collect_cdf else None
    outcomes: list[PacketOutcome] = []

    done = 0
    while done < config.packet_count:
        count = min(_CHUNK, config.packet_count - done)
        draws = fading.draw((count, w_max))
        eps = attempt_error_profile(
            draws, spec.k, config.block_length, config.scheme, config.mode, nested=True
        )
        # Monotone coupling invariant: profiles are nonincreasing per packet.
        assert np.all(np.diff(eps, axis=1) <= 0.0)
        uniforms = uniform_rng.random(count)
        crossing = _first_crossing(eps, uniforms).tolist()
        eps_rows = eps.tolist()
        for idx in range(count):
            packet_index = done + idx
            budget = L + credit
            w = crossing[idx]
            entry_credit = credit
            if w <= budget:
                tx = w
                success = True
                credit = min(budget - w, m)
                state = credit
            else:
                tx = budget
                success = False
                credit = 0
                state = m + 1
            assert tx <= L + entry_credit and credit <= m
            if packet_index < config.warmup_packets:
                continue
            counted += 1
            successes += success
            drops += not success
            total_tx += tx
            sum_tx_sq += tx * tx
            occupancy[state] += 1.0
            if cdf is not None and (cdf_limit is None or len(cdf) < cdf_limit):
                if cdf_stat is CdfStat.CAP:
                    cdf.append(eps_rows[idx][budget - 1])
                else:
                    cdf.append(eps_rows[idx][tx - 1])
            if return_outcomes:
                outcomes.append(
                    PacketOutcome(entry_credit, tx, success, eps_rows[idx][budget - 1])
                )
        done += count

    return _finalize(config, drops, counted, successes, total_tx, sum_tx_sq, occupancy, cdf, outcomes)


def run_harq(
    config: SimConfig,
    fading: FadingSource,
    collect_cdf: bool = False,
    cdf_limit: int | None = None,
    cdf_stat: CdfStat = CdfStat.CAP,
    return_outcomes: bool = False,
) -> SimResult:
    """Conventional feedback scheme: every packet has the fixed budget L."""
    if config.protocol is not Protocol.HARQ:
        raise ValueError(f"config.protocol must be harq, got {config.protocol}")
    spec, L = config.spec, config.params.L
    uniform_rng = _decode_uniforms(config, fading.stream_id)

    drops = counted = successes = total_tx = 0
    sum_tx_sq = 0.0
    occupancy = np.zeros(2)
    cdf: list[float] | None = [] if collect_cdf else None
    outcomes: list[PacketOutcome] = []

    done = 0
    while done < config.packet_count:
        count = min(_CHUNK, config.packet_count - done)
        draws = fading.draw((count, L))
        eps = attempt_error_profile(
            draws, spec.k, config.block_length, config.scheme, config.mode, nested=True
        )
        assert np.all(np.diff(eps, axis=1) <= 0.0)
        uniforms = uniform_rng.random(count)
        crossing = _first_crossing(eps, uniforms)
        success = crossing <= L
        tx = np.minimum(crossing, L)

        lo = max(config.warmup_packets - done, 0)
        if lo < count:
            s = success[lo:]
            t = tx[lo:]
            counted += s.size
            successes += int(s.sum())
            drops += int((~s).sum())
            total_tx += int(t.sum())
            sum_tx_sq += float((t.astype(float) ** 2).sum())
            occupancy[0] += int(s.sum())
            occupancy[1] += int((~s).sum())
            if cdf is not None:
                col = eps[lo:, L - 1] if cdf_stat is CdfStat.CAP else eps[lo:, :][np.arange(s.size), t - 1]
                room = None if cdf_limit is None else max(cdf_limit - len(cdf), 0)
                cdf.extend(col[:room].tolist() if room is not None else col.tolist())
            if return_outcomes:
                for i in range(s.size):
                    outcomes.append(PacketOutcome(0, int(t[i]), bool(s[i]), float(eps[lo + i, L - 1])))
        done += count

    return _finalize(config, drops, counted, successes, total_tx, sum_tx_sq, occupancy, cdf, outcomes)


def run_fixed(
    config: SimConfig,
    fading: FadingSource,
    collect_cdf: bool = False,
    cdf_limit: int | None = None,
    cdf_stat: CdfStat = CdfStat.CAP,
    return_outcomes: bool = False,
) -> SimResult:
    """Open-loop transmission: L copies of a 2n-symbol packet, one decode."""
    if config.protocol is not Protocol.FIXED:
        raise ValueError(f"config.protocol must be fixed, got {config.protocol}")
    spec, L = config.spec, config.params.L
    uniform_rng = _decode_uniforms(config, fading.stream_id)

    drops = counted = successes = total_tx = 0
    sum_tx_sq = 0.0
    occupancy = np.zeros(2)
    cdf: list[float] | None = [] if collect_cdf else None
    outcomes: list[PacketOutcome] = []

    done = 0
    while done < config.packet_count:
        count = min(_CHUNK, config.packet_count - done)
        draws = fading.draw((count, L))
        # One decode on all accumulated branches; no per-attempt nesting.
        eps_full = attempt_error_profile(
            draws, spec.k, config.block_length, config.scheme, config.mode, nested=False
        )[:, L - 1]
        uniforms = uniform_rng.random(count)
        success = uniforms > eps_full

        lo = max(config.warmup_packets - done, 0)
        if lo < count:
            s = success[lo:]
            counted += s.size
            successes += int(s.sum())
            drops += int((~s).sum())
            total_tx += L * s.size
            sum_tx_sq += float(L * L * s.size)
            occupancy[0] += int(s.sum())
            occupancy[1] += int((~s).sum())
            if cdf is not None:
                col = eps_full[lo:]
                room = None if cdf_limit is None else max(cdf_limit - len(cdf), 0)
                cdf.extend(col[:room].tolist() if room is not None else col.tolist())
            if return_outcomes:
                for i in range(s.size):
                    outcomes.append(PacketOutcome(0, L, bool(s[i]), float(eps_full[lo + i])))
        done += count

    return _finalize(config, drops, counted, successes, total_tx, sum_tx_sq, occupancy, cdf, outcomes)


_RUNNERS = {
    Protocol.DHARQ: run_dharq,
    Protocol.HARQ: run_harq,
    Protocol.FIXED: run_fixed,
}


def run(config: SimConfig, fading: FadingSource, **kwargs) -> SimResult:
    """Dispatch to the protocol's runner."""
    return _RUNNERS[config.protocol](config, fading, **kwargs)


def conditional_per_cdf(
    config: SimConfig,
    fading: FadingSource,
    realizations: int,
    cdf_stat: CdfStat = CdfStat.CAP,
) -> np.ndarray:
    """Sorted per-packet conditional error probabilities for CDF plots.

    Each post-warmup packet contributes the error profile at its full
    transmission budget (CAP) or at the attempt it actually stopped on
    (TERMINATION).
    """
    if realizations < 1:
        raise ValueError("realizations must be positive")
    total = config.warmup_packets + realizations
    cfg = SimConfig(
        protocol=config.protocol,
        params=config.params,
        spec=config.spec,
        gamma0=config.gamma0,
        scheme=config.scheme,
        mode=config.mode,
        packet_count=total,
        seed=config.seed,
        warmup_packets=config.warmup_packets,
    )
    result = run(cfg, fading, collect_cdf=True, cdf_limit=realizations, cdf_stat=cdf_stat)
    return result.cdf_samples


def merge_results(config: SimConfig, results: list[SimResult]) -> SimResult:
    """Pool replica tallies (fixed order, weighted by counted packets)."""
    if not results:
        raise ValueError("no results to merge")
    if len(results) == 1:
        return results[0]
    counted = sum(r.packets_counted for r in results)
    successes = sum(r.successes for r in results)
    total_tx = sum(r.total_transmissions for r in results)
    drops = counted - successes
    sum_tx_sq = sum(
        (r.mean_transmissions_stderr**2 * r.packets_counted + r.mean_transmissions**2)
        * r.packets_counted
        for r in results
    )
    occupancy = sum(r.state_occupancy * r.packets_counted for r in results)
    cdf = np.sort(np.concatenate([r.cdf_samples for r in results]))
    per = drops / counted
    spec = config.spec
    mean_tx = total_tx / counted
    return SimResult(
        per_estimate=per,
        per_stderr=math.sqrt(per * (1.0 - per) / counted),
        throughput_measured=spec.k * successes / (2.0 * spec.n * total_tx),
        mean_transmissions=mean_tx,
        mean_transmissions_stderr=math.sqrt(
            max(sum_tx_sq / counted - mean_tx**2, 0.0) / counted
        ),
        state_occupancy=occupancy / counted,
        cdf_samples=cdf,
        packets_counted=counted,
        successes=successes,
        total_transmissions=total_tx,
    )


def run_replicated(
    config: SimConfig,
    fading_seed: int | None = None,
    replicas: int = 1,
    workers: int = 1,
    **kwargs,
) -> SimResult:
    """Run independent replicas on distinct fading streams and merge.

    Replica r uses FadingSource(stream_id=r) and its own decode stream;
    each replica performs its own warmup. Results are merged in replica
    order, so the outcome is independent of the worker count.
    """
    if replicas < 1:
        raise ValueError("replicas must be positive")
    seed = config.seed if fading_seed is None else fading_seed
    per_replica = _split_packets(config.packet_count, replicas)

    def one(r: int) -> SimResult:
        cfg = SimConfig(
            protocol=config.protocol,
            params=config.params,
            spec=config.spec,
            gamma0=config.gamma0,
            scheme=config.scheme,
            mode=config.mode,
            packet_count=per_replica[r] + config.warmup_packets,
            seed=config.seed,
            warmup_packets=config.warmup_packets,
        )
        return run(cfg, FadingSource(config.gamma0, seed, stream_id=r), **kwargs)

    if workers <= 1 or replicas == 1:
        results = [one(r) for r in range(replicas)]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(replicas)))
    return merge_results(config, results)


def _split_packets(total: int, replicas: int) -> list[int]:
    base, extra = divmod(total, replicas)
    counts = [base + (1 if r < extra else 0) for r in range(replicas)]
    if any(c < 1 for c in counts):
        raise ValueError("packet_count too small for the replica count")
    return counts
