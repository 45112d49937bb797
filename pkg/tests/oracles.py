"""
Independent oracles used to fix expected values.

These deliberately avoid the package's own computation paths: tail
probabilities come from mpmath at 50 digits, and fading averages from
adaptive quadrature of the conditional error against the analytic branch
SNR density (exponential for one branch, Erlang for the sum of several).
"""

import math

import mpmath as mp
from scipy import integrate

mp.mp.dps = 50


def mp_q(x) -> mp.mpf:
    return mp.erfc(mp.mpf(x) / mp.sqrt(2)) / 2


def mp_q_integral(x) -> mp.mpf:
    """Q(x) straight from the defining Gaussian integral."""
    return mp.quad(lambda u: mp.exp(-u * u / 2), [mp.mpf(x), mp.inf]) / mp.sqrt(2 * mp.pi)


def mp_dispersion(g) -> mp.mpf:
    g = mp.mpf(g)
    return g * (g + 2) / (g + 1) ** 2 * mp.log(mp.e, 2) ** 2


def mp_conditional_cc(k, N, snrs, mode="normal") -> mp.mpf:
    total = mp.fsum(mp.mpf(g) for g in snrs)
    if total == 0:
        return mp.mpf(1)
    if mode == "normal":
        num = N * mp.log(1 + total, 2) - k + mp.mpf("0.5") * mp.log(N, 2)
    else:
        num = N * mp.log(1 + total, 2) - k * mp.log(N, 2)
    return mp_q(num / mp.sqrt(N * mp_dispersion(total)))


def mp_conditional_ir(k, N, snrs, mode="normal") -> mp.mpf:
    w = len(snrs)
    cap = mp.fsum(mp.log(1 + mp.mpf(g), 2) for g in snrs)
    disp = mp.fsum(mp_dispersion(g) for g in snrs)
    if disp == 0:
        return mp.mpf(1)
    if mode == "normal":
        num = N * cap - k + mp.mpf("0.5") * mp.log(w * N, 2)
    else:
        num = N * cap - k * mp.log(w * N, 2)
    return mp_q(num / mp.sqrt(N * disp))


def _conditional_cc_float(k: int, N: int, total: float, mode: str) -> float:
    # Plain-float evaluation for the quadrature integrand; independent of
    # the package (erfc via math).
    if total <= 0.0:
        return 1.0
    if mode == "normal":
        pen = k - 0.5 * math.log2(N)
    else:
        pen = k * math.log2(N)
    v = total * (total + 2.0) / (total + 1.0) ** 2 * math.log2(math.e) ** 2
    arg = (N * math.log2(1.0 + total) - pen) / math.sqrt(N * v)
    return 0.5 * math.erfc(arg / math.sqrt(2.0))


def _decode_threshold(k: int, N: int, mode: str) -> float:
    """Total SNR at which the Q argument crosses zero (eps = 1/2)."""
    if mode == "normal":
        pen = k - 0.5 * math.log2(N)
    else:
        pen = k * math.log2(N)
    return 2.0 ** (pen / N) - 1.0


def _threshold_points(k: int, N: int, gamma0: float, mode: str, upper: float) -> list[float]:
    # The integrand is a near-step at the decoding threshold; without
    # breakpoints there, adaptive quadrature can miss the plateau entirely
    # when gamma0 is large.
    u_star = _decode_threshold(k, N, mode) / gamma0
    candidates = [u_star / 5.0, u_star, 5.0 * u_star, 25.0 * u_star, 1.0]
    return sorted({u for u in candidates if 0.0 < u < upper})


def quad_fading_average_w1(k: int, N: int, gamma0: float, mode: str = "normal") -> float:
    """E[eps(gamma)] with gamma ~ Exp(gamma0), by adaptive quadrature."""

    def integrand(u: float) -> float:
        return _conditional_cc_float(k, N, gamma0 * u, mode) * math.exp(-u)

    upper = 60.0
    value, _ = integrate.quad(
        integrand, 0.0, upper, limit=400, epsabs=1e-13, epsrel=1e-11,
        points=_threshold_points(k, N, gamma0, mode, upper),
    )
    return value


def quad_fading_average_erlang(
    k: int, N: int, gamma0: float, w: int, mode: str = "normal"
) -> float:
    """E[eps(sum of w branches)] for Chase combining, one-shot decode.

    The sum of w i.i.d. Exp(gamma0) branches is Erlang(w, gamma0); in
    normalized units u = total/gamma0 the density is u^{w-1} e^{-u}/(w-1)!.
    """
    norm = math.factorial(w - 1)

    def integrand(u: float) -> float:
        return _conditional_cc_float(k, N, gamma0 * u, mode) * u ** (w - 1) * math.exp(-u) / norm

    upper = 80.0
    value, _ = integrate.quad(
        integrand, 0.0, upper, limit=400, epsabs=1e-13, epsrel=1e-11,
        points=_threshold_points(k, N, gamma0, mode, upper),
    )
    return value
