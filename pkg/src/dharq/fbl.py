"""
Finite-blocklength channel-coding math.

Error probabilities follow the normal approximation for short packets
(Polyanskiy-Poor-Verdu): a packet of N symbols carrying k information bits,
received over one or more fading branches and decoded jointly, fails with
probability

    eps ~ Q( (N*C - penalty) / sqrt(N*V) )

where C is the capacity of the combined channel, V the channel dispersion
V(g) = g(g+2)/(g+1)^2 * log2(e)^2, and Q the Gaussian tail function.

Two combining rules are supported:

  - Chase combining (identical retransmissions, maximum ratio combining):
    the branch SNRs add, C = log2(1 + sum g_i), V = V(sum g_i).
  - Incremental redundancy (fresh coded symbols per round): capacity and
    dispersion accumulate per branch, C-term = sum log2(1 + g_i),
    V-term = sum V(g_i), and the penalty grows with the round count.

Two penalty conventions are exposed because the literature is not uniform
about the finite-length rate back-off:

  - VERBATIM:  penalty = k * log2(w * N)   (w = 1 for Chase combining)
  - NORMAL:    penalty = k - 0.5 * log2(w * N), the standard
               normal-approximation correction.

NORMAL is the default; every result records which mode produced it.

Fading-averaged error probabilities eps_w (the chance that decoding still
fails after w transmissions, averaged over i.i.d. Rayleigh branch fading)
are estimated by seeded Monte Carlo and memoized in an on-disk JSON cache.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import erfc

LOG2E = math.log2(math.e)

#: Upper bound of V(g): approached as g -> inf.
DISPERSION_LIMIT = LOG2E**2

_SQRT2 = math.sqrt(2.0)

# Chunk size for the fading-averaging passes. Fixed so that chunked
# accumulation is bit-identical for a given (seed, sample_count).
_AVG_CHUNK = 1 << 18


class ApproximationMode(str, Enum):
    """Placement of the finite-length rate penalty in the Q argument."""

    VERBATIM = "verbatim"  # penalty = k * log2(w*N)
    NORMAL = "normal"      # penalty = k - 0.5 * log2(w*N)


class CombiningScheme(str, Enum):
    """Receiver combining rule across retransmissions."""

    CHASE = "cc"
    INCREMENTAL = "ir"


@dataclass(frozen=True)
class CodeSpec:
    """Code geometry: k information bits in mini-slots of n symbols.

    A timeslot holds 2n symbols. Feedback-based schemes transmit over one
    mini-slot (N = n, rate k/n) and use the second mini-slot for the
    ACK/NACK; open-loop transmission uses the whole timeslot (N = 2n,
    rate k/(2n)).
    """

    k: int
    n: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")

    @property
    def timeslot_symbols(self) -> int:
        return 2 * self.n

    @property
    def harq_rate(self) -> float:
        return self.k / self.n

    @property
    def fixed_rate(self) -> float:
        return self.k / (2 * self.n)


@dataclass(frozen=True)
class AveragingConfig:
    """Controls the Monte Carlo fading average for eps_w.

    Identical (sample_count, seed) plus identical error-model arguments
    yield bit-identical estimates.
    """

    sample_count: int = 1_000_000
    seed: int = 123456789
    cache_enabled: bool = True

    def __post_init__(self) -> None:
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class AveragedError:
    """Fading-averaged error probability and the standard error of its mean."""

    epsilon: float
    stderr: float


def q_function(x):
    """Gaussian upper-tail probability Q(x) = 0.5 * erfc(x / sqrt(2)).

    Accepts a scalar or array; erfc keeps deep-tail values meaningful
    (no 1 - CDF cancellation), so probabilities below 1e-15 are exact to
    relative precision.
    """
    if np.isscalar(x):
        return float(0.5 * erfc(float(x) / _SQRT2))
    return 0.5 * erfc(np.asarray(x, dtype=float) / _SQRT2)


def channel_dispersion(gamma: float) -> float:
    """Channel dispersion V(g) = g(g+2)/(g+1)^2 * log2(e)^2 in bits^2.

    Nonnegative, nondecreasing, bounded by log2(e)^2. Raises ValueError
    for negative SNR.
    """
    if gamma < 0:
        raise ValueError(f"SNR must be nonnegative, got {gamma}")
    return gamma * (gamma + 2.0) / (gamma + 1.0) ** 2 * DISPERSION_LIMIT


def _dispersion_array(gamma: np.ndarray) -> np.ndarray:
    return gamma * (gamma + 2.0) / (gamma + 1.0) ** 2 * DISPERSION_LIMIT


def _penalty(k: int, block: float, mode: ApproximationMode) -> float:
    # `block` is w*N for incremental redundancy, N for Chase combining.
    if mode is ApproximationMode.VERBATIM:
        return k * math.log2(block)
    return k - 0.5 * math.log2(block)


def _validate_snrs(snrs: Sequence[float]) -> np.ndarray:
    arr = np.asarray(snrs, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("SNR list must be a nonempty 1-D sequence")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("branch SNRs must be finite and nonnegative")
    return arr


def conditional_error_cc(
    spec: CodeSpec,
    N: int,
    snrs: Sequence[float],
    mode: ApproximationMode = ApproximationMode.NORMAL,
) -> float:
    """Decoding error probability after Chase combining the given branches.

    The receiver MRC-combines all received copies, so only the total SNR
    matters. Returns 1 when the total SNR is zero (no information received;
    the dispersion would vanish too).
    """
    if N < 1:
        raise ValueError(f"block length must be >= 1, got {N}")
    arr = _validate_snrs(snrs)
    total = float(arr.sum())
    if total == 0.0:
        return 1.0
    num = N * math.log2(1.0 + total) - _penalty(spec.k, N, mode)
    den = math.sqrt(N * channel_dispersion(total))
    return q_function(num / den)


def conditional_error_ir(
    spec: CodeSpec,
    N: int,
    snrs: Sequence[float],
    mode: ApproximationMode = ApproximationMode.NORMAL,
) -> float:
    """Decoding error probability with incremental redundancy.

    Each round contributes its own capacity and dispersion; the rate
    penalty is taken on the accumulated blocklength w*N. With a single
    branch this coincides with Chase combining.
    """
    if N < 1:
        raise ValueError(f"block length must be >= 1, got {N}")
    arr = _validate_snrs(snrs)
    w = arr.size
    cum_v = float(_dispersion_array(arr).sum())
    if cum_v == 0.0:
        # all branches at zero SNR: nothing accumulated
        return 1.0
    cum_c = float(np.log2(1.0 + arr).sum())
    num = N * cum_c - _penalty(spec.k, w * N, mode)
    den = math.sqrt(N * cum_v)
    return q_function(num / den)


def conditional_error(
    spec: CodeSpec,
    N: int,
    snrs: Sequence[float],
    scheme: CombiningScheme,
    mode: ApproximationMode = ApproximationMode.NORMAL,
) -> float:
    """Dispatch on the combining scheme."""
    if scheme is CombiningScheme.CHASE:
        return conditional_error_cc(spec, N, snrs, mode)
    return conditional_error_ir(spec, N, snrs, mode)


# ---------------------------------------------------------------------------
# Vectorized per-attempt error profiles (shared by the fading average and the
# packet simulator).
# ---------------------------------------------------------------------------

def attempt_error_profile(
    draws: np.ndarray,
    k: int,
    N: int,
    scheme: CombiningScheme,
    mode: ApproximationMode,
    nested: bool = True,
) -> np.ndarray:
    """Per-attempt conditional error for a batch of branch SNR draws.

    draws has shape (samples, w_max); column w-1 is the SNR of transmission
    w. Returns an array of the same shape whose [s, w-1] entry is the error
    probability of decoding sample s after its first w transmissions.

    With nested=True the profile is clamped to its running minimum, so a
    failure at attempt w implies failure at every earlier attempt. This is
    the law the retransmission protocols realize (one uniform draw decides
    the whole attempt sequence); the clamp only binds in the rare corners
    where the dispersion denominator outgrows the capacity numerator.
    """
    samples, wmax = draws.shape
    if scheme is CombiningScheme.CHASE:
        totals = np.cumsum(draws, axis=1)
        num = N * np.log2(1.0 + totals)
        num -= _penalty(k, N, mode)
        den = np.sqrt(N * _dispersion_array(totals))
        with np.errstate(divide="ignore", invalid="ignore"):
            eps = q_function(np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0))
        eps = np.where(totals > 0, eps, 1.0)
    else:
        cum_c = np.cumsum(np.log2(1.0 + draws), axis=1)
        cum_v = np.cumsum(_dispersion_array(draws), axis=1)
        pens = np.array([_penalty(k, w * N, mode) for w in range(1, wmax + 1)])
        num = N * cum_c - pens[np.newaxis, :]
        den = np.sqrt(N * cum_v)
        with np.errstate(divide="ignore", invalid="ignore"):
            eps = q_function(np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0))
        eps = np.where(cum_v > 0, eps, 1.0)
    if nested:
        eps = np.minimum.accumulate(eps, axis=1)
    return eps


# ---------------------------------------------------------------------------
# Fading-averaged error probabilities
# ---------------------------------------------------------------------------

class EpsilonCache:
    """Memo for fading-averaged error probabilities.

    Backed by a single JSON document mapping the composite key
    "scheme|mode|w|k|N|gamma0|samples|seed" to {"epsilon": ..., "stderr": ...}.
    Safe for concurrent use; all writers compute identical values, so
    last-writer-wins is harmless. File writes are atomic (temp + rename).
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = os.fspath(path) if path is not None else None
        self._lock = threading.Lock()
        self._entries: dict[str, dict[str, float]] = {}
        if self.path is not None and os.path.exists(self.path):
            with open(self.path, "r", encoding="utf-8") as fh:
                self._entries = json.load(fh)

    @staticmethod
    def key(
        scheme: CombiningScheme,
        mode: ApproximationMode,
        w: int,
        k: int,
        N: int,
        gamma0: float,
        samples: int,
        seed: int,
        nested: bool = True,
    ) -> str:
        scheme_tag = scheme.value if nested else f"{scheme.value}-raw"
        return f"{scheme_tag}|{mode.value}|{w}|{k}|{N}|{gamma0!r}|{samples}|{seed}"

    def get(self, key: str) -> AveragedError | None:
        with self._lock:
            entry = self._entries.get(key)
        if entry is None:
            return None
        return AveragedError(entry["epsilon"], entry["stderr"])

    def put(self, key: str, value: AveragedError) -> None:
        with self._lock:
            self._entries[key] = {"epsilon": value.epsilon, "stderr": value.stderr}
            if self.path is not None:
                self._flush_locked()

    def _flush_locked(self) -> None:
        directory = os.path.dirname(os.path.abspath(self.path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(self._entries, fh, sort_keys=True)
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def _fading_average_pass(
    wmax: int,
    k: int,
    N: int,
    gamma0: float,
    scheme: CombiningScheme,
    mode: ApproximationMode,
    sample_count: int,
    seed: int,
    nested: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """One Monte Carlo pass producing eps_w and its stderr for w = 1..wmax.

    Branch w's draws come from a Philox stream keyed (seed, w-1), so the
    same draws underlie every estimate regardless of wmax (common random
    numbers across transmission counts).
    """
    rngs = [
        np.random.Generator(np.random.Philox(key=[seed, branch]))
        for branch in range(wmax)
    ]
    sums = np.zeros(wmax)
    sumsq = np.zeros(wmax)
    done = 0
    while done < sample_count:
        count = min(_AVG_CHUNK, sample_count - done)
        draws = np.empty((count, wmax))
        for b, rng in enumerate(rngs):
            draws[:, b] = rng.standard_exponential(count)
        draws *= gamma0
        eps = attempt_error_profile(draws, k, N, scheme, mode, nested=nested)
        for b in range(wmax):
            # contiguous copy so the summation order depends only on the
            # chunk length, keeping single-w and ranged calls bit-identical
            col = np.ascontiguousarray(eps[:, b])
            sums[b] += col.sum()
            sumsq[b] += np.square(col).sum()
        done += count
    mean = sums / sample_count
    if sample_count > 1:
        var = np.maximum((sumsq - sample_count * mean**2) / (sample_count - 1), 0.0)
        stderr = np.sqrt(var / sample_count)
    else:
        stderr = np.zeros(wmax)
    return mean, stderr


def averaged_error(
    w: int,
    spec: CodeSpec,
    N: int,
    gamma0: float,
    scheme: CombiningScheme = CombiningScheme.CHASE,
    mode: ApproximationMode = ApproximationMode.NORMAL,
    avg: AveragingConfig = AveragingConfig(),
    cache: EpsilonCache | None = None,
    nested: bool = True,
) -> AveragedError:
    """Fading-averaged probability eps_w that decoding fails after w sends.

    Averages the conditional error over w i.i.d. exponential branch SNRs
    with mean gamma0 (Rayleigh power fading). nested=True (default) averages
    the coupled failure event -- failure after w sends implies failure after
    fewer -- which matches the sequential-decode protocols and makes eps_w
    exactly nonincreasing in w. nested=False averages the one-shot decode at
    exactly w branches (open-loop transmission).

    Deterministic and cacheable for fixed (sample_count, seed).
    """
    if w < 1:
        raise ValueError(f"transmission count must be >= 1, got {w}")
    if not (gamma0 > 0) or not math.isfinite(gamma0):
        raise ValueError(f"mean SNR must be positive and finite, got {gamma0}")
    key = EpsilonCache.key(
        scheme, mode, w, spec.k, N, gamma0, avg.sample_count, avg.seed, nested
    )
    if cache is not None and avg.cache_enabled:
        hit = cache.get(key)
        if hit is not None:
            return hit
    mean, stderr = _fading_average_pass(
        w, spec.k, N, gamma0, scheme, mode, avg.sample_count, avg.seed, nested
    )
    result = AveragedError(float(mean[w - 1]), float(stderr[w - 1]))
    if cache is not None and avg.cache_enabled:
        cache.put(key, result)
    return result


def averaged_error_range(
    w_max: int,
    spec: CodeSpec,
    N: int,
    gamma0: float,
    scheme: CombiningScheme = CombiningScheme.CHASE,
    mode: ApproximationMode = ApproximationMode.NORMAL,
    avg: AveragingConfig = AveragingConfig(),
    cache: EpsilonCache | None = None,
    nested: bool = True,
) -> dict[int, AveragedError]:
    """eps_w for every w in [1, w_max] from one shared-draw pass.

    Each value is bit-identical to the corresponding single-w
    averaged_error call (same per-branch streams, same chunking).
    """
    if w_max < 1:
        raise ValueError("w_max must be >= 1")
    keys = {
        w: EpsilonCache.key(
            scheme, mode, w, spec.k, N, gamma0, avg.sample_count, avg.seed, nested
        )
        for w in range(1, w_max + 1)
    }
    out: dict[int, AveragedError] = {}
    if cache is not None and avg.cache_enabled:
        for w, key in keys.items():
            hit = cache.get(key)
            if hit is not None:
                out[w] = hit
        if len(out) == w_max:
            return out
    mean, stderr = _fading_average_pass(
        w_max, spec.k, N, gamma0, scheme, mode, avg.sample_count, avg.seed, nested
    )
    for w in range(1, w_max + 1):
        if w not in out:
            out[w] = AveragedError(float(mean[w - 1]), float(stderr[w - 1]))
            if cache is not None and avg.cache_enabled:
                cache.put(keys[w], out[w])
    return out
