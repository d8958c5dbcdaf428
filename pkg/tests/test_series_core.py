"""Unit tests for the series/jet/hypergeometric substrate."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowup_forge.series_core import (
    DJet,
    HypParams,
    InvalidGamma,
    LogPowerSeries,
    NonConvergent,
    hyp2f1,
    logpow_combine,
    pochhammer,
    wiener_norm,
)


# ---------------------------------------------------------------------------
# LogPowerSeries
# ---------------------------------------------------------------------------


def test_logpow_eval_matches_direct_sum():
    coeffs = np.array([[1.0, -2.0, 0.5], [0.25, 0.0, -1.0]])
    s = LogPowerSeries(0.0, 0.5, coeffs, 2.0)
    z = 0.37
    direct = z**0.5 * sum(
        coeffs[k, n] * z**n * math.log(z) ** k for k in range(2) for n in range(3)
    )
    assert s(z) == pytest.approx(direct, rel=1e-14)


def test_logpow_derivatives_match_finite_differences():
    coeffs = np.array([[0.3, 1.0, -0.7, 0.2], [0.0, 0.5, 0.1, 0.0]])
    s = LogPowerSeries(0.0, 1.5, coeffs, 2.0)
    z = np.asarray([0.4])
    v, d1, d2 = s.eval_with_derivatives(z)
    h = 1e-6
    fd1 = (s(z + h) - s(z - h)) / (2 * h)
    fd2 = (s(z + h) - 2 * s(z) + s(z - h)) / h**2
    assert d1[0] == pytest.approx(fd1[0], rel=1e-8)
    assert d2[0] == pytest.approx(fd2[0], rel=1e-4)


@given(
    beta=st.floats(-2, 2),
    z=st.floats(0.05, 0.5),
    c1=st.floats(-3, 3),
    c2=st.floats(-3, 3),
)
@settings(max_examples=50, deadline=None)
def test_logpow_add_is_pointwise_sum(beta, z, c1, c2):
    a = LogPowerSeries(0.0, beta, np.array([[c1, 0.5]]), 1.0)
    b = LogPowerSeries(0.0, beta, np.array([[c2, -0.25]]), 1.0)
    s = logpow_combine(a, b, "add")
    assert s(z) == pytest.approx(a(z) + b(z), rel=1e-12, abs=1e-12)


@given(
    ba=st.floats(-1, 1),
    bb=st.floats(-1, 1),
    z=st.floats(0.05, 0.4),
)
@settings(max_examples=50, deadline=None)
def test_logpow_mul_is_pointwise_product(ba, bb, z):
    a = LogPowerSeries(0.0, ba, np.array([[1.0, 0.5, 0.25]]), 1.0)
    b = LogPowerSeries(0.0, bb, np.array([[2.0, -1.0, 0.0]]), 1.0)
    m = logpow_combine(a, b, "mul")
    # truncation to the common order: compare against the truncated convolution
    conv = np.convolve([1.0, 0.5, 0.25], [2.0, -1.0, 0.0])[:3]
    direct = z ** (ba + bb) * sum(c * z**n for n, c in enumerate(conv))
    assert m(z) == pytest.approx(direct, rel=1e-12, abs=1e-13)


def test_logpow_mul_adds_log_degrees():
    a = LogPowerSeries(0.0, 0.0, np.array([[1.0, 0.0], [1.0, 0.0]]), 1.0)
    b = LogPowerSeries(0.0, 0.0, np.array([[1.0, 0.0], [2.0, 0.0]]), 1.0)
    assert logpow_combine(a, b, "mul").log_degree == 2


def test_wiener_norm_is_coefficient_sum():
    s = LogPowerSeries(0.0, 0.0, np.array([[1.0, -2.0, 3.0]]), 2.0)
    assert wiener_norm(s, 0, 0.5) == pytest.approx(1 + 2 * 0.5 + 3 * 0.25)


def test_wiener_norm_rejects_radius_violation():
    s = LogPowerSeries(0.0, 0.0, np.array([[1.0]]), 0.5)
    with pytest.raises(Exception):
        wiener_norm(s, 0, 1.0)


# ---------------------------------------------------------------------------
# DJet
# ---------------------------------------------------------------------------


def test_djet_composite_expression():
    x = DJet.variable(0.7)
    y = (x * x + 1.0).sqrt().log() * x.arctan()
    f = lambda t: math.log(math.sqrt(t * t + 1)) * math.atan(t)
    h = 1e-6
    assert y.f == pytest.approx(f(0.7), rel=1e-14)
    assert y.d == pytest.approx((f(0.7 + h) - f(0.7 - h)) / (2 * h), rel=1e-7)
    assert y.dd == pytest.approx((f(0.7 + h) - 2 * f(0.7) + f(0.7 - h)) / h**2, rel=1e-3)


def test_djet_preserves_longdouble():
    x = DJet.variable(np.longdouble(2.0))
    y = (x**3 / (1.0 + x)).log1p()
    assert y.f.dtype == np.longdouble


def test_djet_division_consistency():
    x = DJet.variable(1.3)
    one = (x / x)
    assert one.f == pytest.approx(1.0) and abs(one.d) < 1e-15 and abs(one.dd) < 1e-15


# ---------------------------------------------------------------------------
# pochhammer / hyp2f1
# ---------------------------------------------------------------------------


def test_pochhammer_small_cases():
    assert pochhammer(3.0, 0) == 1.0
    assert pochhammer(3.0, 3) == 3 * 4 * 5
    assert pochhammer(-2.0, 4) == 0.0  # terminates through zero


def test_hyp2f1_frozen_reference_values():
    # Reference values computed once with 30-digit arithmetic and frozen.
    cases = [
        ((-0.75, -0.25, 2.5), 0.5, 1.03805004323264298),
        ((-0.75, -0.25, 2.5), 0.95, 1.07346745754604583),
        ((0.3, 1.7, 2.2), 0.9, 1.55733972956210367),
    ]
    for (a, b, g), z, want in cases:
        got = hyp2f1(HypParams(a, b, g), z)
        assert got == pytest.approx(want, rel=1e-12)


def test_hyp2f1_at_unity_gauss_value():
    # F(a,b;c;1) = Gamma(c)Gamma(c-a-b) / (Gamma(c-a)Gamma(c-b))
    p = HypParams(-0.75, -0.25, 2.5)
    want = (
        math.gamma(2.5) * math.gamma(3.5) / (math.gamma(3.25) * math.gamma(2.75))
    )
    assert hyp2f1(p, 1.0) == pytest.approx(want, rel=1e-13)


def test_hyp2f1_terminating_polynomial():
    # beta = -1 gives the degree-one polynomial 1 - alpha z / gamma
    p = HypParams(-1.5, -1.0, 2.5)
    for z in (0.2, 0.8, 0.99):
        assert hyp2f1(p, z) == pytest.approx(1 + 0.6 * z, rel=1e-14)


def test_hyp2f1_divergent_at_unity_raises():
    p = HypParams(2.0, 1.5, 2.5)  # gamma - alpha - beta = -1 < 0
    with pytest.raises(NonConvergent):
        hyp2f1(p, 1.0)


def test_hyp2f1_rejects_bad_gamma():
    with pytest.raises(InvalidGamma):
        HypParams(0.5, 0.5, -1.0)


@given(z=st.floats(0.0, 0.999))
@settings(max_examples=60, deadline=None)
def test_hyp2f1_monotone_when_product_positive(z):
    # alpha*beta > 0 with positive gamma: all series terms are positive,
    # so F is increasing in z and F(z) >= 1.
    p = HypParams(0.5, 1.25, 2.5)
    assert hyp2f1(p, z) >= 1.0 - 1e-14


def test_hyp2f1_split_branches_agree():
    # direct series and connection formula must agree where both converge
    from blowup_forge.series_core import _series_2f1

    p = HypParams(-0.75, -0.25, 2.5)
    for z in (0.81, 0.85, 0.9):
        assert hyp2f1(p, z) == pytest.approx(_series_2f1(p.alpha, p.beta, p.gamma, z, 1e-15), rel=1e-12)
