import json
import math

import numpy as np
import pytest

from dharq.fbl import AveragingConfig, CodeSpec
from dharq.markov import (
    DegenerateChainError,
    ErrorTable,
    ProtocolParams,
    TxCounting,
    build_lambda,
    build_transition_matrix,
    dharq_analysis,
    dharq_expected_transmissions,
    dharq_per,
    dharq_per_m1_closed_form,
    dharq_per_stderr,
    dharq_throughput,
    fixed_tx_per,
    fixed_tx_throughput,
    harq_error_table,
    harq_mean_transmissions,
    harq_per,
    harq_per_from_table,
    harq_throughput_from_table,
    stationary_distribution,
)

from oracles import quad_fading_average_erlang

SPEC = CodeSpec(32, 32)
FAST_AVG = AveragingConfig(sample_count=50_000, seed=11)

L2M1 = ProtocolParams(2, 1)
TABLE_L2M1 = ErrorTable({1: 0.2, 2: 0.05, 3: 0.01})


def random_monotone_table(rng, w_lo: int, w_hi: int) -> ErrorTable:
    values = np.sort(rng.uniform(1e-9, 1.0 - 1e-9, size=w_hi - w_lo + 1))[::-1]
    return ErrorTable({w_lo + i: float(v) for i, v in enumerate(values)})


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

def test_protocol_params_validation():
    with pytest.raises(ValueError):
        ProtocolParams(0, 0)
    with pytest.raises(ValueError):
        ProtocolParams(2, 2)
    with pytest.raises(ValueError):
        ProtocolParams(2, -1)
    ProtocolParams(1, 0)


def test_error_table_validation():
    with pytest.raises(ValueError):
        ErrorTable({})
    with pytest.raises(ValueError):
        ErrorTable({0: 1.0, 1: 0.5})
    with pytest.raises(ValueError):
        ErrorTable({1: 0.5, 3: 0.1})  # gap
    with pytest.raises(ValueError):
        ErrorTable({1: 0.1, 2: 0.5})  # increasing
    with pytest.raises(ValueError):
        ErrorTable({1: 1.5})
    table = ErrorTable({2: 0.5, 3: 0.25})
    assert table.value(0) == 1.0
    assert table.value(3) == 0.25
    with pytest.raises(ValueError):
        table.value(1)
    assert table.covers(2, 3) and not table.covers(1, 3)


def test_error_table_unvalidated_escape_hatch():
    # sensitivity perturbations may transiently violate monotonicity
    ErrorTable({1: 0.1, 2: 0.2}, validate=False)


# ---------------------------------------------------------------------------
# Transition matrix
# ---------------------------------------------------------------------------

def test_matrix_m0_two_state():
    table = ErrorTable({3: 0.125})
    tm = build_transition_matrix(ProtocolParams(3, 0), table)
    expected = np.array([[0.875, 0.125], [0.875, 0.125]])
    assert np.array_equal(tm.matrix, expected)


def test_matrix_l2_m1_rows():
    tm = build_transition_matrix(L2M1, TABLE_L2M1)
    expected = np.array([
        [0.15, 0.80, 0.05],
        [0.04, 0.95, 0.01],
        [0.15, 0.80, 0.05],
    ])
    assert np.allclose(tm.matrix, expected, rtol=0, atol=1e-15)
    assert np.allclose(tm.matrix.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_matrix_perfect_channel_always_reaches_cap():
    table = ErrorTable({w: 0.0 for w in range(1, 5)})
    tm = build_transition_matrix(ProtocolParams(3, 1), table)
    assert np.array_equal(tm.matrix[:, 1], np.ones(3))
    assert np.array_equal(tm.matrix[:, [0, 2]], np.zeros((3, 2)))


def test_matrix_requires_coverage():
    with pytest.raises(ValueError):
        build_transition_matrix(ProtocolParams(4, 2), ErrorTable({2: 0.5, 3: 0.4, 4: 0.3}))


def test_matrix_row_sums_random_tables():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        L = int(rng.integers(1, 7))
        m = int(rng.integers(0, L))
        table = random_monotone_table(rng, max(L - m, 1), L + m)
        tm = build_transition_matrix(ProtocolParams(L, m), table)
        assert np.max(np.abs(tm.matrix.sum(axis=1) - 1.0)) <= 1e-12
        assert tm.matrix.min() >= 0.0


def test_error_row_equals_first_row():
    rng = np.random.default_rng(3)
    for _ in range(50):
        L = int(rng.integers(2, 6))
        m = int(rng.integers(1, L))
        table = random_monotone_table(rng, max(L - m, 1), L + m)
        tm = build_transition_matrix(ProtocolParams(L, m), table)
        assert np.array_equal(tm.matrix[-1], tm.matrix[0])


# ---------------------------------------------------------------------------
# Stationary distribution
# ---------------------------------------------------------------------------

def test_stationary_uniform_chain():
    p = stationary_distribution(np.array([[0.5, 0.5], [0.5, 0.5]]))
    assert np.allclose(p, [0.5, 0.5], rtol=0, atol=1e-14)


def test_stationary_periodic_chain():
    p = stationary_distribution(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.allclose(p, [0.5, 0.5], rtol=0, atol=1e-14)


def test_stationary_residual_bound():
    rng = np.random.default_rng(4)
    for _ in range(200):
        L = int(rng.integers(1, 6))
        m = int(rng.integers(0, L))
        table = random_monotone_table(rng, max(L - m, 1), L + m)
        tm = build_transition_matrix(ProtocolParams(L, m), table)
        p = stationary_distribution(tm)
        assert p.min() >= 0.0
        assert abs(p.sum() - 1.0) <= 1e-12
        assert np.max(np.abs(p @ tm.matrix - p)) <= 1e-10


def test_stationary_singular_raises():
    with pytest.raises(DegenerateChainError):
        stationary_distribution(np.eye(2))  # two absorbing states


# ---------------------------------------------------------------------------
# Packet error rate
# ---------------------------------------------------------------------------

def test_per_equals_closed_form_example():
    # closed form (C - AC + B^2)/(1 - A + B) = 0.0105/0.85 by hand
    per = dharq_per(L2M1, TABLE_L2M1)
    assert per == pytest.approx(21.0 / 1700.0, abs=1e-12)
    closed = dharq_per_m1_closed_form(0.2, 0.05, 0.01)
    assert per == pytest.approx(closed, abs=1e-12)


def test_closed_form_degenerate_cases():
    eps = 0.37
    assert dharq_per_m1_closed_form(eps, eps, eps) == pytest.approx(eps, rel=1e-15)
    assert dharq_per_m1_closed_form(0.0, 0.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        dharq_per_m1_closed_form(0.1, 0.2, 0.05)


def test_per_m0_equals_table_value():
    rng = np.random.default_rng(6)
    for _ in range(200):
        L = int(rng.integers(1, 6))
        table = random_monotone_table(rng, 1, L)
        per = dharq_per(ProtocolParams(L, 0), table)
        assert per == pytest.approx(table.value(L), abs=1e-12)


def test_per_perfect_channel_limit():
    table = ErrorTable({1: 1e-13, 2: 1e-14, 3: 1e-15})
    assert dharq_per(L2M1, table) < 1e-12


def test_per_degenerate_guard():
    with pytest.raises(DegenerateChainError) as exc:
        dharq_per(L2M1, ErrorTable({1: 0.5, 2: 0.1, 3: 0.0}))
    assert "e" in exc.value.states
    with pytest.raises(DegenerateChainError):
        dharq_per(L2M1, ErrorTable({1: 1.0, 2: 0.5, 3: 0.1}))


def test_per_monotone_in_credit():
    # more banked credit never hurts; a counterexample is build-stopping
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        L = int(rng.integers(3, 6))
        table = random_monotone_table(rng, 1, L + 2)
        pers = [dharq_per(ProtocolParams(L, m), table) for m in (0, 1, 2)]
        assert pers[1] <= pers[0] + 1e-12
        assert pers[2] <= pers[1] + 1e-12


# ---------------------------------------------------------------------------
# Slot-count matrix and throughput
# ---------------------------------------------------------------------------

def test_lambda_l2_m1():
    lam = build_lambda(L2M1)
    assert np.array_equal(lam, np.array([[2, 1, 2], [3, 2, 3], [2, 1, 2]]))


def test_lambda_m0():
    assert np.array_equal(build_lambda(ProtocolParams(3, 0)), np.full((2, 2), 3))


def test_lambda_first_row_pattern():
    lam = build_lambda(ProtocolParams(3, 2))
    assert lam[0].tolist() == [3, 2, 1, 3]
    assert np.array_equal(lam[-1], lam[0])
    assert lam.min() >= 1


def test_throughput_regression_l2_m1():
    # hand-evaluated with exact fractions: stationary (0.79, 16, 0.21)/17
    charged = dharq_throughput(L2M1, TABLE_L2M1, SPEC, TxCounting.CHARGED)
    assert charged == pytest.approx(1679.0 / 6800.0, abs=1e-12)
    actual = dharq_throughput(L2M1, TABLE_L2M1, SPEC, TxCounting.ACTUAL)
    assert actual == pytest.approx(1679.0 / 4240.0, abs=1e-12)
    assert actual > charged  # cap-charging is conservative


def test_throughput_m0_reduces_to_conventional():
    rng = np.random.default_rng(8)
    for _ in range(500):
        L = int(rng.integers(1, 6))
        table = random_monotone_table(rng, 1, L)
        params = ProtocolParams(L, 0)
        eta_d = dharq_throughput(params, table, SPEC, TxCounting.ACTUAL)
        eta_h = harq_throughput_from_table(SPEC, table, L)
        assert eta_d == pytest.approx(eta_h, abs=1e-12)
        assert dharq_expected_transmissions(params, table, TxCounting.ACTUAL) == pytest.approx(
            harq_mean_transmissions(table, L), abs=1e-12
        )


def test_throughput_perfect_channel_charged():
    # budget-charged accounting bills L sends even for instant decodes
    table = ErrorTable({1: 1e-13, 2: 1e-14, 3: 1e-15})
    eta = dharq_throughput(L2M1, table, SPEC, TxCounting.CHARGED)
    assert eta == pytest.approx(32.0 / (64.0 * 2.0), rel=1e-9)
    # actual accounting converges to one send per packet
    eta_actual = dharq_throughput(L2M1, table, SPEC, TxCounting.ACTUAL)
    assert eta_actual == pytest.approx(32.0 / 64.0, rel=1e-9)


def test_analysis_record_serializable():
    record = dharq_analysis(L2M1, TABLE_L2M1, SPEC)
    assert record["per"] == pytest.approx(21.0 / 1700.0, abs=1e-12)
    assert record["throughput_charged"] == pytest.approx(1679.0 / 6800.0, abs=1e-12)
    assert len(record["stationary"]) == 3
    json.dumps(record)


def test_per_stderr_propagation():
    table = ErrorTable({1: 0.2, 2: 0.05, 3: 0.01}, stderr={1: 1e-4, 2: 5e-5, 3: 1e-5})
    se = dharq_per_stderr(L2M1, table)
    assert 0.0 < se < 1e-3
    assert dharq_per_stderr(L2M1, TABLE_L2M1) == 0.0


# ---------------------------------------------------------------------------
# Conventional-scheme baselines
# ---------------------------------------------------------------------------

def test_harq_bracket_example():
    table = ErrorTable({1: 0.1, 2: 0.01})
    bracket = harq_mean_transmissions(table, 2)
    assert bracket == pytest.approx(2 * 0.01 + 1 * 0.9 + 2 * 0.09, abs=1e-15)
    eta = harq_throughput_from_table(SPEC, table, 2)
    assert eta == pytest.approx(32.0 * 0.99 / (64.0 * 1.1), rel=1e-12)


def test_harq_l1_bracket_is_one():
    table = ErrorTable({1: 0.3})
    assert harq_mean_transmissions(table, 1) == pytest.approx(1.0, abs=1e-15)
    eta = harq_throughput_from_table(SPEC, table, 1)
    assert eta == pytest.approx(32.0 * 0.7 / 64.0, rel=1e-12)


def test_harq_perfect_channel():
    table = ErrorTable({1: 0.0, 2: 0.0})
    assert harq_mean_transmissions(table, 2) == pytest.approx(1.0, abs=1e-15)
    assert harq_throughput_from_table(SPEC, table, 2) == pytest.approx(0.5, rel=1e-12)


def test_harq_per_at_snr_matches_table():
    params = ProtocolParams(2, 0)
    per = harq_per(SPEC, params, 10.0, avg=FAST_AVG)
    table = harq_error_table(SPEC, params, 10.0, avg=FAST_AVG)
    assert per == harq_per_from_table(table, 2)


def test_fixed_tx_per_matches_erlang_quadrature():
    params = ProtocolParams(2, 0)
    avg = AveragingConfig(sample_count=200_000, seed=5)
    zeta = fixed_tx_per(SPEC, params, 10.0, avg=avg)
    oracle = quad_fading_average_erlang(32, 64, 10.0, w=2)
    # MC standard error of the one-shot 2-branch average at this point
    from dharq.fbl import averaged_error

    est = averaged_error(2, SPEC, 64, 10.0, avg=avg, nested=False)
    assert zeta == est.epsilon
    assert abs(zeta - oracle) <= 4.0 * est.stderr


def test_fixed_tx_throughput_limits():
    params = ProtocolParams(2, 0)
    high = fixed_tx_throughput(SPEC, params, 1e9, avg=FAST_AVG)
    assert high == pytest.approx(32.0 / (64.0 * 2.0), rel=1e-4)
    low = fixed_tx_throughput(SPEC, params, 1e-6, avg=FAST_AVG)
    assert low == pytest.approx(0.0, abs=1e-9)
