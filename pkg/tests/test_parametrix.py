"""Tests for the Fourier-side inversion and the contraction estimate.

Strategy: the time maps and kernels are pinned against closed forms, the
threshold channel is checked against an exactly solvable source
(f0 = tau^{-8} with nu = 6 gives x_0 = tau^{-6}/35), the continuous channel
against adaptive quadrature of the oscillatory integral, and the whole
inversion against the defining second-order equation by high-order spline
differentiation.  The operator-norm measurements only assert the trends the
construction needs (1/N gain, decay of kappa in tau0).
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from blowup_forge import parametrix as P
from blowup_forge.profiles import BlowupConstants


C5 = BlowupConstants(5, 6.0)
C4 = BlowupConstants(4, 6.0)


def _power_field(c, taus, xis, N=8.0, prof=None):
    g = 1.0 / (1.0 + xis) if prof is None else prof
    vals = np.outer(taus ** -N, g)
    fd = taus ** -N
    f0 = taus ** -N if c.d == 5 else None
    return P.FourierField(c.d, taus, xis, vals, fd, f0, alpha=0.0, N=N)


# ---------------------------------------------------------------------------
# time maps
# ---------------------------------------------------------------------------


def test_time_maps_pinned():
    tau, lam, beta, beta_dot = P.time_maps(C5, t=0.1)
    assert tau == pytest.approx(1e6 / 6.0, rel=1e-14)
    _, _, beta100, _ = P.time_maps(C5, tau=100.0)
    assert beta100 == pytest.approx(7.0 / 600.0, rel=1e-14)
    assert beta_dot < 0.0


def test_time_maps_round_trip():
    for t in (0.01, 0.2, 0.9):
        tau, _, _, _ = P.time_maps(C5, t=t)
        assert P.tau_to_t(C5, tau) == pytest.approx(t, rel=1e-12)


def test_time_maps_argument_validation():
    with pytest.raises(ValueError):
        P.time_maps(C5)
    with pytest.raises(ValueError):
        P.time_maps(C5, t=0.1, tau=100.0)
    with pytest.raises(ValueError):
        P.time_maps(C5, t=-1.0)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def test_h0_vanishes_on_the_diagonal():
    assert P.kernels(C5, 100.0, 100.0, 0.5)[2] == 0.0


def test_kernels_preconditions():
    with pytest.raises(ValueError):
        P.kernels(C5, 99.0, 100.0, 0.5)
    with pytest.raises(ValueError):
        P.kernels(C5, 150.0, 100.0, -0.5)


def test_h_small_xi_limit_is_the_phase_increment():
    H0_lim = P.kernels(C5, 150.0, 100.0, 0.0)[0]
    H_tiny = P.kernels(C5, 150.0, 100.0, 1e-14)[0]
    assert H_tiny == pytest.approx(H0_lim, rel=1e-10)
    # and the limit is u(tau) - u(sigma) itself
    inc = (6.0 * 100.0) ** (-1 / 6) - (6.0 * 150.0) ** (-1 / 6)
    assert H0_lim == pytest.approx(inc, rel=1e-14)


@pytest.mark.parametrize("c", [C4, C5], ids=["d4", "d5"])
def test_kernel_sign_and_envelopes(c):
    # H_d strictly negative (bounded separations: the exponential underflows
    # to -0.0 beyond ~ 500 kappa^{-1}), |dH| <= 1, |H| <= C tau <xi>^{-1/2}
    rng = np.random.default_rng(3)
    worst_env = 0.0
    for _ in range(200):
        tau = 10.0 ** rng.uniform(1.0, 4.0)
        sigma = tau * 10.0 ** rng.uniform(0.0, 2.0)
        xi = 10.0 ** rng.uniform(-4.0, 3.0)
        H, dH, H0, dH0, Hd = P.kernels(c, sigma, tau, xi)
        if abs(tau - sigma) < 200.0:
            assert Hd < 0.0
        assert abs(dH) <= 1.0 / P.time_maps(c, tau=tau)[1] + 1e-15
        worst_env = max(worst_env, abs(H) / (tau * (1.0 + xi) ** -0.5))
    assert worst_env < 1.0


def test_h0_closed_form_spot_value():
    # nu sigma^{(1+nu)/nu} (tau^{-1/nu} - sigma^{-1/nu})
    nu = 6.0
    tau, sigma = 100.0, 150.0
    want = nu * sigma ** ((1 + nu) / nu) * (tau ** (-1 / nu) - sigma ** (-1 / nu))
    assert P.kernels(C5, sigma, tau, 0.3)[2] == pytest.approx(want, rel=1e-14)


# ---------------------------------------------------------------------------
# field container validation
# ---------------------------------------------------------------------------


def test_field_rejects_unsorted_nodes():
    taus = np.array([100.0, 90.0, 120.0])
    xis = np.array([0.1, 1.0])
    with pytest.raises(ValueError):
        P.FourierField(4, taus, xis, np.zeros((3, 2)), np.zeros(3), None,
                       alpha=0.0, N=8.0)


def test_field_rejects_shape_mismatch():
    taus = np.geomspace(100.0, 200.0, 4)
    xis = np.array([0.1, 1.0])
    with pytest.raises(ValueError):
        P.FourierField(4, taus, xis, np.zeros((4, 3)), np.zeros(4), None,
                       alpha=0.0, N=8.0)


def test_field_threshold_channel_rules():
    taus = np.geomspace(100.0, 200.0, 4)
    xis = np.array([0.1, 1.0])
    with pytest.raises(ValueError):
        P.FourierField(4, taus, xis, np.zeros((4, 2)), np.zeros(4),
                       np.zeros(4), alpha=0.0, N=8.0)
    with pytest.raises(ValueError):
        P.FourierField(5, taus, xis, np.zeros((4, 2)), np.zeros(4), None,
                       alpha=0.0, N=8.0)


def test_field_rejects_non_finite():
    taus = np.geomspace(100.0, 200.0, 4)
    xis = np.array([0.1, 1.0])
    vals = np.zeros((4, 2))
    vals[1, 1] = np.nan
    with pytest.raises(ValueError):
        P.FourierField(4, taus, xis, vals, np.zeros(4), None,
                       alpha=0.0, N=8.0)


# ---------------------------------------------------------------------------
# the inversion
# ---------------------------------------------------------------------------


def test_zero_source_gives_zero():
    taus = np.geomspace(100.0, 400.0, 10)
    xis = np.geomspace(1e-3, 10.0, 6)
    f = P.FourierField(5, taus, xis, np.zeros((10, 6)), np.zeros(10),
                       np.zeros(10), alpha=0.0, N=8.0)
    x, dx = P.apply_inversion(f, C5)
    assert np.all(x.values == 0.0) and np.all(dx.values == 0.0)
    assert np.all(x.x_d == 0.0) and np.all(x.x_0 == 0.0)


def test_threshold_channel_closed_form():
    # x0'' + beta x0' = tau^{-8} with nu = 6 has the power solution
    # tau^{-6} / (6*7 - 7*6/6) = tau^{-6}/35, so D x0 = -(6/35) tau^{-7}
    taus = np.geomspace(100.0, 400.0, 12)
    xis = np.geomspace(1e-3, 10.0, 8)
    f = _power_field(C5, taus, xis)
    x, dx = P.apply_inversion(f, C5)
    assert np.max(np.abs(x.x_0 * 35.0 * taus ** 6 - 1.0)) < 1e-4
    assert np.max(np.abs(dx.x_0 * taus ** 7 * 35.0 / 6.0 + 1.0)) < 1e-4


def test_continuous_channel_against_adaptive_quadrature():
    nu, N = 6.0, 8.0
    taus = np.geomspace(100.0, 400.0, 12)
    xis = np.geomspace(1e-3, 10.0, 8)
    f = _power_field(C5, taus, xis)
    x, dx = P.apply_inversion(f, C5)
    for (i, j) in ((1, 4), (6, 2), (9, 6)):
        tau, xi = taus[i], xis[j]
        lam_t = (nu * tau) ** ((1 + nu) / nu)
        zeta = lam_t ** 2 * xi
        u_t = (nu * tau) ** (-1 / nu)
        sq = math.sqrt(zeta)

        def g(u):
            lam2 = u ** (-2 * (nu + 1))
            sig_pow = nu ** N * u ** (nu * N)          # sigma^{-N}
            xi_mov = zeta * u ** (2 * (1 + nu))        # rescaled frequency
            return lam2 * sig_pow / (1.0 + xi_mov)

        want = quad(lambda u: g(u) * np.sin(sq * (u_t - u)) / sq, 0.0, u_t,
                    limit=3000, epsabs=1e-25, epsrel=1e-11)[0]
        want_d = -quad(lambda u: g(u) * np.cos(sq * (u_t - u)), 0.0, u_t,
                       limit=3000, epsabs=1e-25, epsrel=1e-11)[0] / lam_t
        assert x.values[i, j] == pytest.approx(want, rel=2e-4)
        assert dx.values[i, j] == pytest.approx(want_d, rel=2e-3)


def test_inversion_is_linear_in_the_source():
    taus = np.geomspace(100.0, 400.0, 10)
    xis = np.geomspace(1e-2, 10.0, 6)
    f = _power_field(C5, taus, xis)
    x1, _ = P.apply_inversion(f, C5)
    f3 = P.FourierField(5, taus, xis, 3.0 * f.values, 3.0 * f.x_d,
                        3.0 * f.x_0, alpha=0.0, N=8.0)
    x3, _ = P.apply_inversion(f3, C5)
    assert np.allclose(x3.values, 3.0 * x1.values, rtol=1e-12, atol=0.0)
    assert np.allclose(x3.x_d, 3.0 * x1.x_d, rtol=1e-12)


def test_out_of_grid_raises_without_extension():
    taus = np.geomspace(100.0, 400.0, 10)
    xis = np.geomspace(1e-2, 10.0, 6)
    f = _power_field(C5, taus, xis)
    with pytest.raises(P.InterpolationRange):
        P.apply_inversion(f, C5, extend=False)


def test_dimension_mismatch_rejected():
    taus = np.geomspace(100.0, 400.0, 6)
    xis = np.geomspace(1e-2, 10.0, 4)
    f = _power_field(C4, taus, xis)
    with pytest.raises(ValueError):
        P.apply_inversion(f, C5)


@pytest.mark.parametrize("c", [C4, C5], ids=["d4", "d5"])
def test_inversion_defect(c):
    assert P.inversion_defect(c) <= 1e-4


def test_d_tau_grid_on_power_law():
    # D(tau^{-N} g) = tau^{-N-1} (-N g - 2 (1+nu)/nu xi g')
    nu, N = 6.0, 8.0
    taus = np.geomspace(100.0, 400.0, 32)
    xis = np.geomspace(1e-2, 10.0, 32)
    g = 1.0 / (1.0 + xis)
    f = _power_field(C5, taus, xis, N=N, prof=g)
    df = P.d_tau_grid(f, C5)
    gp = -1.0 / (1.0 + xis) ** 2                        # g'(xi)
    want = np.outer(taus ** -(N + 1),
                    -N * g - 2.0 * (1.0 + nu) / nu * xis * gp)
    core = (slice(2, -2), slice(2, -2))
    scale = np.max(np.abs(want), axis=1)[:, None]       # per-slice magnitude
    assert np.max((np.abs(df.values - want) / scale)[core]) < 1e-3


# ---------------------------------------------------------------------------
# rescaling of the weighted slice norms
# ---------------------------------------------------------------------------


def test_rescaled_slice_norm_grows_at_most_polynomially():
    # || f(sigma, (lam_tau/lam_sigma)^2 .) <.>^{1/2} || <= (sigma/tau)^C ||f||
    # with a finite fitted C: the rescaling compresses toward xi = 0 where
    # the weight and the measure only gain a bounded factor
    nu = 6.0
    xis = np.geomspace(1e-4, 10.0, 40)
    rho = P._grid_rho(5, xis)
    w = P._trapz_weights(xis)
    g = 1.0 / (1.0 + xis)
    base = np.sqrt(np.sum(w * rho * g ** 2))
    tau = 100.0
    ratios = []
    sigmas = tau * np.array([2.0, 4.0, 8.0, 16.0])
    for sigma in sigmas:
        scale = (sigma / tau) ** (-2 * (1 + nu) / nu)
        g_resc = 1.0 / (1.0 + xis * scale)             # f at the moved nodes
        val = np.sqrt(np.sum(w * rho * (1 + xis ** 2) ** 0.5 * g_resc ** 2))
        ratios.append(val / base)
    fit = np.polyfit(np.log(sigmas / tau), np.log(ratios), 1)
    assert np.isfinite(fit[0]) and fit[0] < 3.0


# ---------------------------------------------------------------------------
# the transference matrix and the contraction factor
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("d", [4, 5])
def test_delta_coefficient_finite_and_smooth(d):
    xi = np.geomspace(1e-2, 1e2, 33)
    dc = P.delta_coefficient(d, xi)
    assert np.all(np.isfinite(dc))
    assert np.max(np.abs(np.diff(dc, 2))) < 0.5
    # known limits: -(3/2 - 1/2) at small xi, -(3/2 + (d-2)/... ) read off
    # the density's power laws
    assert dc[0] == pytest.approx(-1.0, abs=0.3)
    assert dc[-2] == pytest.approx(-1.5 - (d / 2.0 - 1.0), abs=0.4)


def test_commutator_annihilates_constants_on_the_continuous_block():
    # [xi d/dxi, K] applied to a field constant in xi only sees K's own
    # xi-dependence; the diagonal discrete entries drop out exactly
    xis = np.geomspace(1e-1, 1e1, 8)
    K, com = P.transference_matrix(5, xis, tol=1e-4)
    n_disc = K.shape[0] - len(xis)
    assert n_disc == 2
    # discrete-discrete corner of the commutator vanishes: Dx acts only on
    # the continuous block
    assert np.max(np.abs(com[:n_disc, :n_disc])) < 1e-12


def test_contraction_factor_small_grid_trends():
    ks = [P.linear_contraction_factor(C5, tau0=t0, n_xi=8,
                                      xi_span=(1e-1, 1e1))
          for t0 in (1e2, 1e3, 1e4)]
    assert ks[0] > ks[1] > ks[2]
    assert ks[2] < 1.0
    k80 = P.linear_contraction_factor(C5, N=80.0, n_xi=8,
                                      xi_span=(1e-1, 1e1))
    assert k80 <= ks[2]


def test_norm_ratio_scales_like_one_over_n():
    rn = [P.norm_ratio(C5, float(N)) * N for N in (10.0, 20.0, 40.0)]
    assert (max(rn) - min(rn)) / min(rn) < 0.25


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=0.005, max_value=0.95))
def test_time_maps_round_trip_property(t):
    tau, lam, beta, beta_dot = P.time_maps(C4, t=t)
    assert P.tau_to_t(C4, tau) == pytest.approx(t, rel=1e-12)
    assert lam > 0.0 and beta > 0.0 and beta_dot < 0.0


@settings(max_examples=15, deadline=None)
@given(st.floats(min_value=1.0, max_value=1e4),
       st.floats(min_value=0.0, max_value=50.0),
       st.floats(min_value=0.0, max_value=100.0))
def test_h_solves_the_oscillator_in_the_phase_variable(tau, dsig, xi):
    # d^2H/du_tau^2 + xi H = 0 with the u-substitution; checked by finite
    # differences on H(sigma, tau(u), xi)
    sigma = tau * (1.0 + 0.1) + dsig
    nu = C5.nu

    def H_of_u(u):
        t = u ** -nu / nu
        return P.kernels(C5, sigma, t, xi)[0]

    u0 = (nu * tau) ** (-1 / nu)
    h = 1e-4 * u0
    d2 = (H_of_u(u0 + h) - 2.0 * H_of_u(u0) + H_of_u(u0 - h)) / h ** 2
    assert d2 + xi * H_of_u(u0) == pytest.approx(0.0, abs=5e-3 * (1.0 + xi))
