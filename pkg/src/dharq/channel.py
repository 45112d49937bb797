"""
Seeded Rayleigh block-fading SNR source.

Each transmission attempt sees an independent fading realization
h ~ CN(0,1), so the received SNR is gamma0*|h|^2: exponential with mean
gamma0. Streams are generated by the counter-based Philox engine keyed on
(seed, stream_id); distinct stream_ids give statistically independent
streams for parallel replicas, and identical keys reproduce bit-identical
sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def snr_from_db(db: float) -> float:
    """dB -> linear power ratio."""
    return 10.0 ** (db / 10.0)


def snr_to_db(gamma: float) -> float:
    """Linear power ratio -> dB."""
    if gamma <= 0:
        raise ValueError(f"linear SNR must be positive, got {gamma}")
    return 10.0 * math.log10(gamma)


@dataclass
class FadingSource:
    """Single-owner stream of per-transmission branch SNRs.

    Not safe to share between threads; build one source per replica with a
    distinct stream_id instead.
    """

    gamma0: float
    seed: int
    stream_id: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not (self.gamma0 > 0) or not math.isfinite(self.gamma0):
            raise ValueError(f"mean SNR must be positive and finite, got {self.gamma0}")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.stream_id < 0:
            raise ValueError("stream_id must be nonnegative")
        self._rng = np.random.Generator(np.random.Philox(key=[self.seed, self.stream_id]))

    def draw(self, shape) -> np.ndarray:
        """Draw a batch of branch SNRs, advancing the stream."""
        return self.gamma0 * self._rng.standard_exponential(shape)


def sample_snr(source: FadingSource) -> float:
    """One branch SNR gamma = gamma0*|h|^2, h ~ CN(0,1); advances the stream."""
    return float(source.draw(()))
