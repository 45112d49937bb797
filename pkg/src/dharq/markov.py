"""
Markov-chain reliability and throughput analysis of deadline-constrained
retransmission schemes.

The dynamic scheme banks unused transmission slots: packet deadlines are L
slots apart, and a packet whose predecessor finished j slots early may use
up to L+j transmissions, with the banked credit capped at m (0 <= m < L).
The credit J in [0, m] plus an error state form an (m+2)-state chain whose
transition probabilities are differences of the fading-averaged error
probabilities eps_w. The long-run packet error rate is the stationary
probability of the error state, and throughput follows from the stationary
expected transmission count.

Baselines: open-loop transmission (exactly L copies of a 2n-symbol packet,
no feedback) and conventional feedback retransmission (fixed budget L,
n-symbol packets), both expressed through the same eps_w tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .fbl import (
    ApproximationMode,
    AveragingConfig,
    CodeSpec,
    CombiningScheme,
    EpsilonCache,
    averaged_error,
    averaged_error_range,
)

ROW_SUM_TOL = 1e-12
STATIONARY_RESIDUAL_TOL = 1e-10


class DegenerateChainError(Exception):
    """Chain has deterministic or non-unique structure; no meaningful solve.

    Raised when error probabilities sit exactly at 0 or 1 (offending states
    recorded) or when the stationary system is singular.
    """

    def __init__(self, message: str, states: tuple = ()):  # noqa: D107
        super().__init__(message)
        self.states = states


@dataclass(frozen=True)
class ProtocolParams:
    """Deadline interval L (slots) and maximum banked credit m, 0 <= m < L."""

    L: int
    m: int = 0

    def __post_init__(self) -> None:
        if self.L < 1:
            raise ValueError(f"deadline interval L must be >= 1, got {self.L}")
        if not (0 <= self.m < self.L):
            raise ValueError(f"credit cap must satisfy 0 <= m < L, got m={self.m}, L={self.L}")


class ErrorTable:
    """Error probabilities eps_w for a contiguous range of send counts w.

    eps_0 = 1 by convention (decoding with nothing received always fails).
    Values must be nonincreasing in w; violations are rejected unless
    validate=False (internal use only, e.g. sensitivity perturbations).
    """

    def __init__(
        self,
        eps: dict[int, float],
        stderr: dict[int, float] | None = None,
        validate: bool = True,
    ):
        if not eps:
            raise ValueError("error table must not be empty")
        ws = sorted(eps)
        if ws[0] < 1:
            raise ValueError("error table houses w >= 1 only (eps_0 = 1 is implicit)")
        if ws != list(range(ws[0], ws[-1] + 1)):
            raise ValueError("error table must cover a contiguous range of w")
        self._eps = {w: float(eps[w]) for w in ws}
        self._stderr = {w: float(stderr[w]) for w in ws} if stderr else {}
        self.w_min = ws[0]
        self.w_max = ws[-1]
        if validate:
            prev = 1.0
            for w in ws:
                v = self._eps[w]
                if not (0.0 <= v <= 1.0):
                    raise ValueError(f"eps_{w}={v} outside [0, 1]")
                if v > prev:
                    raise ValueError(
                        f"error table not monotone: eps_{w}={v} exceeds eps_{w - 1}={prev}"
                    )
                prev = v

    @classmethod
    def from_values(cls, values, w_start: int = 1, stderr=None) -> "ErrorTable":
        eps = {w_start + i: float(v) for i, v in enumerate(values)}
        se = {w_start + i: float(v) for i, v in enumerate(stderr)} if stderr is not None else None
        return cls(eps, se)

    def covers(self, w_lo: int, w_hi: int) -> bool:
        return self.w_min <= max(w_lo, 1) and self.w_max >= w_hi

    def value(self, w: int) -> float:
        if w == 0:
            return 1.0
        try:
            return self._eps[w]
        except KeyError:
            raise ValueError(f"error table covers w in [{self.w_min}, {self.w_max}], not {w}") from None

    def stderr(self, w: int) -> float:
        return self._stderr.get(w, 0.0)

    def items(self):
        return self._eps.items()

    def __repr__(self) -> str:
        return f"ErrorTable({self._eps!r})"


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic transition matrix over states [J=0, ..., J=m, J=e]."""

    matrix: np.ndarray
    params: ProtocolParams

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


class TxCounting(str, Enum):
    """Transmission accounting for the throughput denominator.

    CHARGED charges every transition its full slot count L+i-j, so a packet
    that decodes earlier than the credit cap allows is still charged as if
    it had used the capped count. ACTUAL uses the expected number of actual
    sends. CHARGED is conservative at high SNR; only ACTUAL reduces exactly
    to the conventional-feedback throughput when m = 0.
    """

    CHARGED = "charged"
    ACTUAL = "actual"


def required_range(params: ProtocolParams, counting: TxCounting = TxCounting.CHARGED) -> tuple[int, int]:
    """Table coverage needed by the chain (and throughput accounting)."""
    lo = 1 if counting is TxCounting.ACTUAL else params.L - params.m
    return max(lo, 1), params.L + params.m


def build_transition_matrix(params: ProtocolParams, table: ErrorTable) -> TransitionMatrix:
    """Credit-chain transition matrix from an error table.

    Row i (credit i, budget L+i): decoding ends with exactly L+i-j sends
    with probability eps_{L+i-j-1} - eps_{L+i-j} (banking credit j < m),
    reaches the cap j = m with probability 1 - eps_{L+i-m}, and exhausts
    the budget (error state) with probability eps_{L+i}. A dropped packet
    ends at its deadline, so the error row equals row 0.
    """
    L, m = params.L, params.m
    if not table.covers(L - m, L + m):
        raise ValueError(
            f"table must cover w in [{max(L - m, 1)}, {L + m}] for L={L}, m={m}"
        )
    size = m + 2
    pi = np.zeros((size, size))
    for i in range(m + 1):
        for j in range(m):
            pi[i, j] = table.value(L - j + i - 1) - table.value(L - j + i)
        pi[i, m] = 1.0 - table.value(L + i - m)
        pi[i, m + 1] = table.value(L + i)
    pi[m + 1, :] = pi[0, :]
    if pi.min() < 0.0:
        raise ValueError("non-monotone error table produced negative transition probabilities")
    row_sums = pi.sum(axis=1)
    if np.max(np.abs(row_sums - 1.0)) > ROW_SUM_TOL:
        raise ValueError(f"transition rows not stochastic: sums {row_sums}")
    return TransitionMatrix(pi, params)


def build_lambda(params: ProtocolParams) -> np.ndarray:
    """Slot-count matrix paired entrywise with the transition matrix.

    Entry (i, j) is the sends charged when moving from credit i to credit
    j: L+i-j for j in [0, m] and L+i into the error state; the error row
    repeats row 0.
    """
    L, m = params.L, params.m
    lam = np.zeros((m + 2, m + 2), dtype=int)
    for i in range(m + 1):
        for j in range(m + 1):
            lam[i, j] = L + i - j
        lam[i, m + 1] = L + i
    lam[m + 1, :] = lam[0, :]
    return lam


def stationary_distribution(pi) -> np.ndarray:
    """Left fixed point p of a row-stochastic matrix, normalized to sum 1.

    Solves p^T Pi = p^T by replacing the last balance equation with the
    normalization constraint. Raises DegenerateChainError when the system
    is singular or the solution is not a clean probability vector.
    """
    matrix = pi.matrix if isinstance(pi, TransitionMatrix) else np.asarray(pi, dtype=float)
    n = matrix.shape[0]
    a = matrix.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        p = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateChainError(f"stationary system is singular: {exc}") from exc
    if not np.all(np.isfinite(p)):
        raise DegenerateChainError("stationary solve produced non-finite entries")
    if p.min() < -1e-12:
        bad = tuple(int(i) for i in np.nonzero(p < -1e-12)[0])
        raise DegenerateChainError(
            f"stationary solve produced negative probabilities at states {bad}", states=bad
        )
    p = np.clip(p, 0.0, None)
    p /= p.sum()
    residual = float(np.max(np.abs(p @ matrix - p)))
    if residual > STATIONARY_RESIDUAL_TOL:
        raise DegenerateChainError(
            f"stationary residual {residual:.3e} exceeds {STATIONARY_RESIDUAL_TOL}"
        )
    return p


def _check_not_degenerate(params: ProtocolParams, table: ErrorTable) -> None:
    L, m = params.L, params.m
    pinned = [w for w in range(max(L - m, 1), L + m + 1) if table.value(w) in (0.0, 1.0)]
    if pinned:
        states = []
        for w in pinned:
            states.extend(i for i in range(m + 1) if L + i - m <= w <= L + i)
        labels = tuple(sorted(set(states))) + ("e",)
        raise DegenerateChainError(
            f"error probabilities pinned at 0 or 1 for w={pinned}; "
            f"chain is degenerate at states {labels}",
            states=labels,
        )


def dharq_per(params: ProtocolParams, table: ErrorTable) -> float:
    """Long-run packet error rate: stationary probability of the error state."""
    _check_not_degenerate(params, table)
    p = stationary_distribution(build_transition_matrix(params, table))
    return float(p[-1])


def dharq_per_m1_closed_form(eps_lm1: float, eps_l: float, eps_lp1: float) -> float:
    """Closed-form error rate for credit cap m = 1.

    With A = eps_{L-1}, B = eps_L, C = eps_{L+1}:
        (C - A*C + B^2) / (1 - A + B)
    Must agree with the general stationary solve to 1e-12.
    """
    if not (eps_lm1 >= eps_l >= eps_lp1):
        raise ValueError(
            f"inputs must be nonincreasing, got {eps_lm1}, {eps_l}, {eps_lp1}"
        )
    return (eps_lp1 - eps_lm1 * eps_lp1 + eps_l**2) / (1.0 - eps_lm1 + eps_l)


def _expected_sends(table: ErrorTable, budget: int) -> float:
    """Expected actual sends for one packet with a fixed budget.

    budget*eps_budget + sum_w w*(eps_{w-1} - eps_w); telescopes to
    1 + sum_{w<budget} eps_w but is computed in the literal form so the
    conventional-scheme denominator matches term for term.
    """
    total = budget * table.value(budget)
    for w in range(1, budget + 1):
        total += w * (table.value(w - 1) - table.value(w))
    return total


def dharq_expected_transmissions(
    params: ProtocolParams,
    table: ErrorTable,
    counting: TxCounting = TxCounting.CHARGED,
) -> float:
    """Stationary mean sends per packet under the chosen accounting."""
    _check_not_degenerate(params, table)
    tm = build_transition_matrix(params, table)
    p = stationary_distribution(tm)
    if counting is TxCounting.CHARGED:
        lam = build_lambda(params)
        return float(p @ (tm.matrix * lam).sum(axis=1))
    L, m = params.L, params.m
    per_state = [_expected_sends(table, L + i) for i in range(m + 1)]
    per_state.append(per_state[0])  # error state restarts with budget L
    return float(p @ np.asarray(per_state))


def dharq_throughput(
    params: ProtocolParams,
    table: ErrorTable,
    spec: CodeSpec,
    counting: TxCounting = TxCounting.CHARGED,
) -> float:
    """Delivered information bits per transmitted symbol.

    Counts both the data mini-slot and the feedback mini-slot of every
    charged transmission, hence the 2n per send.
    """
    zeta = dharq_per(params, table)
    denom = dharq_expected_transmissions(params, table, counting)
    return spec.k * (1.0 - zeta) / (2.0 * spec.n * denom)


def dharq_analysis(
    params: ProtocolParams, table: ErrorTable, spec: CodeSpec
) -> dict:
    """Full analysis record, JSON-serializable."""
    _check_not_degenerate(params, table)
    tm = build_transition_matrix(params, table)
    p = stationary_distribution(tm)
    lam = build_lambda(params)
    return {
        "L": params.L,
        "m": params.m,
        "per": float(p[-1]),
        "throughput_charged": dharq_throughput(params, table, spec, TxCounting.CHARGED),
        "throughput_actual": dharq_throughput(params, table, spec, TxCounting.ACTUAL),
        "stationary": p.tolist(),
        "transition_matrix": tm.matrix.tolist(),
        "lambda_matrix": lam.tolist(),
    }


def _build_matrix_unchecked(params: ProtocolParams, table: ErrorTable) -> TransitionMatrix:
    # Skips the stochasticity checks; used for sensitivity perturbations
    # that may transiently break table monotonicity.
    L, m = params.L, params.m
    size = m + 2
    pi = np.zeros((size, size))
    for i in range(m + 1):
        for j in range(m):
            pi[i, j] = table.value(L - j + i - 1) - table.value(L - j + i)
        pi[i, m] = 1.0 - table.value(L + i - m)
        pi[i, m + 1] = table.value(L + i)
    pi[m + 1, :] = pi[0, :]
    return TransitionMatrix(pi, params)


def dharq_stationary_sensitivity(
    params: ProtocolParams, table: ErrorTable, step: float = 1e-6
) -> dict[int, np.ndarray]:
    """d(stationary vector)/d(eps_w) by forward differences.

    Used to propagate Monte Carlo uncertainty of the error table into the
    analytic error rate and occupancy.
    """
    lo, hi = required_range(params)
    base_eps = {w: table.value(w) for w in range(lo, hi + 1)}
    base_p = stationary_distribution(_build_matrix_unchecked(params, ErrorTable(base_eps, validate=False)))
    grads: dict[int, np.ndarray] = {}
    for w in range(lo, hi + 1):
        bumped = dict(base_eps)
        bumped[w] += step
        p = stationary_distribution(_build_matrix_unchecked(params, ErrorTable(bumped, validate=False)))
        grads[w] = (p - base_p) / step
    return grads


def dharq_per_stderr(params: ProtocolParams, table: ErrorTable, step: float = 1e-6) -> float:
    """Propagated standard error of the analytic packet error rate."""
    grads = dharq_stationary_sensitivity(params, table, step)
    var = sum((g[-1] * table.stderr(w)) ** 2 for w, g in grads.items())
    return math.sqrt(var)


# ---------------------------------------------------------------------------
# Baselines over the same error tables
# ---------------------------------------------------------------------------

def harq_per_from_table(table: ErrorTable, L: int) -> float:
    """Conventional feedback scheme: fail iff all L sends fail."""
    return table.value(L)


def harq_mean_transmissions(table: ErrorTable, L: int) -> float:
    """L*eps_L + sum_i i*(eps_{i-1} - eps_i): expected sends with budget L."""
    return _expected_sends(table, L)


def harq_throughput_from_table(spec: CodeSpec, table: ErrorTable, L: int) -> float:
    eps_l = table.value(L)
    return spec.k * (1.0 - eps_l) / (2.0 * spec.n * _expected_sends(table, L))


# ---------------------------------------------------------------------------
# SNR-level wrappers: build the fading-averaged tables and evaluate
# ---------------------------------------------------------------------------

def harq_error_table(
    spec: CodeSpec,
    params: ProtocolParams,
    gamma0: float,
    scheme: CombiningScheme = CombiningScheme.CHASE,
    mode: ApproximationMode = ApproximationMode.NORMAL,
    avg: AveragingConfig = AveragingConfig(),
    cache: EpsilonCache | None = None,
) -> ErrorTable:
    """Fading-averaged eps_w table for w in [1, L+m] at blocklength n."""
    values = averaged_error_range(
        params.L + params.m, spec, spec.n, gamma0, scheme, mode, avg, cache
    )
    eps = {w: v.epsilon for w, v in values.items()}
    stderr = {w: v.stderr for w, v in values.items()}
    return ErrorTable(eps, stderr)


def dharq_per_at_snr(
    spec: CodeSpec,
    params: ProtocolParams,
    gamma0: float,
    scheme: CombiningScheme = CombiningScheme.CHASE,
    mode: ApproximationMode = ApproximationMode.NORMAL,
    avg: AveragingConfig = AveragingConfig(),
    cache: EpsilonCache | None = None,
) -> float:
    return dharq_per(params, harq_error_table(spec, params, gamma0, scheme, mode, avg, cache))


def harq_per(
    spec: CodeSpec,
    params: ProtocolParams,
    gamma0: float,
    scheme: CombiningScheme = CombiningScheme.CHASE,
    mode: ApproximationMode = ApproximationMode.NORMAL,
    avg: AveragingConfig = AveragingConfig(),
    cache: EpsilonCache | None = None,
) -> float:
    """eps_L(k, n): fail iff decoding fails after the full budget of L sends."""
    return averaged_error(params.L, spec, spec.n, gamma0, scheme, mode, avg, cache).epsilon


def harq_throughput(
    spec: CodeSpec,
    params: ProtocolParams,
    gamma0: float,
    scheme: CombiningScheme = CombiningScheme.CHASE,
    mode: ApproximationMode = ApproximationMode.NORMAL,
    avg: AveragingConfig = AveragingConfig(),
    cache: EpsilonCache | None = None,
) -> float:
    table = harq_error_table(spec, ProtocolParams(params.L, 0), gamma0, scheme, mode, avg, cache)
    return harq_throughput_from_table(spec, table, params.L)


def fixed_tx_per(
    spec: CodeSpec,
    params: ProtocolParams,
    gamma0: float,
    mode: ApproximationMode = ApproximationMode.NORMAL,
    scheme: CombiningScheme = CombiningScheme.CHASE,
    avg: AveragingConfig = AveragingConfig(),
    cache: EpsilonCache | None = None,
) -> float:
    """eps_L(k, 2n): open loop, one decode on all L timeslot-length copies."""
    return averaged_error(
        params.L, spec, spec.timeslot_symbols, gamma0, scheme, mode, avg, cache, nested=False
    ).epsilon


def fixed_tx_throughput(
    spec: CodeSpec,
    params: ProtocolParams,
    gamma0: float,
    mode: ApproximationMode = ApproximationMode.NORMAL,
    scheme: CombiningScheme = CombiningScheme.CHASE,
    avg: AveragingConfig = AveragingConfig(),
    cache: EpsilonCache | None = None,
) -> float:
    zeta = fixed_tx_per(spec, params, gamma0, mode, scheme, avg, cache)
    return spec.k * (1.0 - zeta) / (2.0 * spec.n * params.L)
