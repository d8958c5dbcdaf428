"""Fourier-side machinery for the rescaled evolution.

After conjugating the cone evolution into the similarity time
tau = nu^{-1} t^{-nu} and applying the generalized Fourier transform of the
half-line operator (see ``spectral``), the equation for the remainder takes
the form

    (D_tau^2 + beta(tau) D_tau + xi) x = f,   D_tau = d/dtau - 2 beta xi d/dxi

with beta(tau) = (1+nu)/(nu tau) and the comoving frequency zeta =
lambda(tau)^2 xi, lambda(tau) = (nu tau)^{(1+nu)/nu}.  This module provides

* the time maps t <-> tau and the kernels H, H0, H_d inverting the left side,
* ``apply_inversion`` evaluating the inversion on sampled fields (with the
  oscillatory sigma-integrals done by a Filon-type rule, so the cost is
  independent of how fast the phase spins),
* the transference operator K as a dense matrix on a log-xi grid, including
  the discrete spectral components, and its commutator with xi d/dxi,
* ``linear_contraction_factor`` measuring the operator norm of
  inversion o T, where T collects the beta-weighted terms of the transformed
  equation.

A note on the kernel normalization used here: in the phase variable
u(sigma) = (nu sigma)^{-1/nu} one has du = -lambda(sigma)^{-1} dsigma, so the
Duhamel solution of the left side is

    x(tau, xi) = int_tau^infty H(sigma, tau, zeta) lambda(sigma)
                 f(sigma, zeta / lambda(sigma)^2) dsigma

with H(sigma,tau,zeta) = zeta^{-1/2} sin[zeta^{1/2}(u(tau)-u(sigma))].  The
weight lambda(sigma) is forced by the chain rule (substituting u as time
turns the operator into d^2/du^2 + zeta acting on x, with source
lambda(sigma)^2 f); its zeta -> 0 limit reproduces the closed-form kernel
H0(tau,sigma) = nu sigma^{(1+nu)/nu} (tau^{-1/nu} - sigma^{-1/nu}) exactly,
which fixes the convention.  Similarly the discrete channel solves
x_d'' - |xi_d| x_d = f_d - beta x_d' with the two-sided Green function
-(1/(2k)) e^{-k|tau-sigma|}, k = |xi_d|^{1/2}; the first-order term is moved
to the right-hand side and absorbed by a short fixed-point loop.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import (CubicSpline, RectBivariateSpline,
                               make_interp_spline)

from .profiles import BlowupConstants
from . import spectral


class InterpolationRange(Exception):
    """A rescaled frequency left the sampled grid and extension was disabled."""


# ---------------------------------------------------------------------------
# time maps and kernels
# ---------------------------------------------------------------------------


def time_maps(c: BlowupConstants, t: float | None = None,
              tau: float | None = None):
    """(tau, lambda, beta, beta_dot) from either t or tau.

    tau = nu^{-1} t^{-nu}, lambda(tau) = (nu tau)^{(1+nu)/nu},
    beta = (1+nu)/(tau nu), beta_dot = -(1+nu)/(tau^2 nu).
    """
    nu = c.nu
    if (t is None) == (tau is None):
        raise ValueError("pass exactly one of t, tau")
    if tau is None:
        if not 0.0 < t:
            raise ValueError("t must be positive")
        tau = t ** (-nu) / nu
    lam = (nu * tau) ** ((1.0 + nu) / nu)
    beta = (1.0 + nu) / (tau * nu)
    beta_dot = -(1.0 + nu) / (tau * tau * nu)
    return tau, lam, beta, beta_dot


def tau_to_t(c: BlowupConstants, tau):
    return (c.nu * np.asarray(tau)) ** (-1.0 / c.nu)


def _lam(c: BlowupConstants, tau):
    return (c.nu * np.asarray(tau)) ** ((1.0 + c.nu) / c.nu)


def _u_phase(c: BlowupConstants, tau):
    """u(tau) = (nu tau)^{-1/nu} = int_tau^infty lambda(s)^{-1} ds."""
    return (c.nu * np.asarray(tau)) ** (-1.0 / c.nu)


@functools.lru_cache(maxsize=None)
def _xi_d(d: int) -> float:
    return spectral.ground_eigenvalue(d)


def kernels(c: BlowupConstants, sigma: float, tau: float, xi: float):
    """(H, dH/dtau, H0, dH0/dtau, Hd) at (sigma, tau, xi); sigma >= tau.

    H solves the homogeneous equation in tau with a unit-impulse
    normalization in the phase variable; the xi -> 0 limit of H is the
    phase increment u(tau) - u(sigma) itself.
    """
    if sigma < tau:
        raise ValueError("need sigma >= tau")
    if xi < 0:
        raise ValueError("xi must be >= 0")
    nu = c.nu
    inc = _u_phase(c, tau) - _u_phase(c, sigma)  # >= 0
    if xi == 0.0:
        H = float(inc)
        dH = -float(_lam(c, tau) ** -1.0)
    else:
        sq = math.sqrt(xi)
        H = math.sin(sq * inc) / sq
        dH = -math.cos(sq * inc) / float(_lam(c, tau))
    H0 = nu * sigma ** ((1.0 + nu) / nu) * (tau ** (-1.0 / nu) - sigma ** (-1.0 / nu))
    dH0 = -((sigma / tau) ** ((1.0 + nu) / nu))
    kap = math.sqrt(-_xi_d(c.d))
    Hd = -0.5 / kap * math.exp(-kap * abs(tau - sigma))
    return H, dH, H0, dH0, Hd


# ---------------------------------------------------------------------------
# sampled Fourier-side fields
# ---------------------------------------------------------------------------


@dataclass
class FourierField:
    """Samples x(tau, xi) on a grid plus the discrete components.

    x_0 is carried only in dimension 5 (the threshold resonance channel);
    it must be None in dimension 4.
    """

    d: int
    tau_nodes: np.ndarray          # sorted, >= tau0
    xi_nodes: np.ndarray           # sorted positive, log-spaced
    values: np.ndarray             # (n_tau, n_xi)
    x_d: np.ndarray                # (n_tau,)
    x_0: Optional[np.ndarray]      # (n_tau,) iff d == 5
    alpha: float
    N: float

    def __post_init__(self):
        t = np.asarray(self.tau_nodes, dtype=float)
        x = np.asarray(self.xi_nodes, dtype=float)
        if np.any(np.diff(t) <= 0) or np.any(t <= 0):
            raise ValueError("tau_nodes must be sorted positive")
        if np.any(np.diff(x) <= 0) or np.any(x <= 0):
            raise ValueError("xi_nodes must be sorted positive")
        if self.values.shape != (len(t), len(x)):
            raise ValueError("values shape mismatch")
        if self.x_d.shape != (len(t),):
            raise ValueError("x_d shape mismatch")
        if (self.d == 5) != (self.x_0 is not None):
            raise ValueError("x_0 must be present exactly when d = 5")
        if not (np.all(np.isfinite(self.values)) and np.all(np.isfinite(self.x_d))):
            raise ValueError("non-finite samples")


@functools.lru_cache(maxsize=8)
def _rho_on(d: int, xi_key: tuple) -> np.ndarray:
    return np.array([spectral.spectral_density(d, x)[1] for x in xi_key])


def _grid_rho(d: int, xi_nodes: np.ndarray) -> np.ndarray:
    return _rho_on(d, tuple(float(x) for x in xi_nodes))


def _trapz_weights(x: np.ndarray) -> np.ndarray:
    w = np.zeros_like(x)
    w[:-1] += 0.5 * np.diff(x)
    w[1:] += 0.5 * np.diff(x)
    return w


def slice_norm(field: FourierField, i: int, alpha: float | None = None) -> float:
    """L^{2,alpha}_rho norm of the tau_nodes[i] slice (trapezoid in xi)."""
    a = field.alpha if alpha is None else alpha
    xi = field.xi_nodes
    rho = _grid_rho(field.d, xi)
    w = _trapz_weights(xi)
    s = float(np.sum(w * (1.0 + xi * xi) ** a * rho * field.values[i] ** 2))
    s += float(field.x_d[i] ** 2)
    if field.x_0 is not None:
        s += float(field.x_0[i] ** 2)
    return math.sqrt(s)


def weighted_norm(field: FourierField, alpha: float | None = None,
                  N: float | None = None) -> float:
    """sup_tau tau^N || x(tau, .) ||_{L^{2,alpha}_rho}."""
    return math.exp(_log_weighted_norm(field, alpha, N))


def _log_weighted_norm(field: FourierField, alpha=None, N=None) -> float:
    """log of weighted_norm; steep weights overflow the plain product."""
    n = field.N if N is None else N
    best = -math.inf
    for i in range(len(field.tau_nodes)):
        s = slice_norm(field, i, alpha)
        if s > 0.0:
            best = max(best, n * math.log(field.tau_nodes[i]) + math.log(s))
    return best


# ---------------------------------------------------------------------------
# field interpolation with decay extension
# ---------------------------------------------------------------------------


def _tail_exponent(tau: np.ndarray, vals: np.ndarray, fallback: float) -> float:
    """Log-log slope of |vals| over the last few tau nodes (decay order)."""
    k = min(5, len(tau))
    v = np.abs(vals[-k:])
    if np.any(v <= 0):
        return fallback
    sl = np.polyfit(np.log(tau[-k:]), np.log(v), 1)[0]
    return -sl if np.isfinite(sl) else fallback


class _FieldInterp:
    """Evaluates a FourierField at arbitrary (sigma, xi).

    The known tau^{-N} decay is divided out before fitting the splines: for
    steep fields (N ~ 40) the raw samples span dozens of orders of magnitude
    across the grid, and a spline through them floods the small-value end
    with coupling error from the large end.  The flattened field tau^N x is
    O(1) across the grid, splined in (log tau, log xi), and the factor
    sigma^{-N} is restored on evaluation.

    xi outside the grid is clamped to the edge value (the rescaling
    sigma >> tau sends xi' -> 0, where the slices of the fields we invert
    settle to their edge value); tau beyond the last node is extended by the
    measured residual power law of the flattened field.  With extend=False
    an out-of-grid request raises InterpolationRange instead.
    """

    def __init__(self, field: FourierField, extend: bool = True):
        self.f = field
        self.extend = extend
        self.N = float(field.N)
        self.lt = np.log(field.tau_nodes)
        self.lx = np.log(field.xi_nodes)
        self.lref = self.lt[0]                  # anchor against overflow
        kx = min(3, len(self.lt) - 1)
        ky = min(5, len(self.lx) - 1)
        gain = np.exp(self.N * (self.lt - self.lref))
        flat = field.values * gain[:, None]
        self.spl = RectBivariateSpline(self.lt, self.lx, flat, kx=kx, ky=ky)
        self.p_c = _tail_exponent(field.tau_nodes,
                                  np.sqrt(np.mean(flat ** 2, axis=1)), 0.0)
        self.sp_d = CubicSpline(self.lt, field.x_d * gain)
        self.p_d = _tail_exponent(field.tau_nodes, field.x_d * gain, 0.0)
        if field.x_0 is not None:
            self.sp_0 = CubicSpline(self.lt, field.x_0 * gain)
            self.p_0 = _tail_exponent(field.tau_nodes, field.x_0 * gain, 0.0)

    def _tau_clip(self, ls):
        hi = self.lt[-1]
        lo = self.lt[0]
        if not self.extend and (np.any(ls > hi + 1e-12) or np.any(ls < lo - 1e-12)):
            raise InterpolationRange("tau outside the sampled grid")
        return np.clip(ls, lo, hi), np.where(ls > hi, ls - hi, 0.0), \
            np.where(ls < lo, lo - ls, 0.0)

    def cont(self, sigma, xi):
        sigma = np.asarray(sigma, dtype=float)
        xi = np.asarray(xi, dtype=float)
        ls = np.log(sigma)
        lxq = np.log(xi)
        if not self.extend and (np.any(lxq < self.lx[0] - 1e-12)
                                or np.any(lxq > self.lx[-1] + 1e-12)):
            raise InterpolationRange("xi outside the sampled grid")
        lxq = np.clip(lxq, self.lx[0], self.lx[-1])
        lsc, over, under = self._tau_clip(ls)
        vals = self.spl(lsc, lxq, grid=False)
        return vals * np.exp(-self.p_c * over + self.p_c * under
                             - self.N * (ls - self.lref))

    def _disc(self, sigma, spl, p):
        ls = np.log(np.asarray(sigma, dtype=float))
        lsc, over, under = self._tau_clip(ls)
        return spl(lsc) * np.exp(-p * over + p * under
                                 - self.N * (ls - self.lref))

    def disc_d(self, sigma):
        return self._disc(sigma, self.sp_d, self.p_d)

    def disc_0(self, sigma):
        return self._disc(sigma, self.sp_0, self.p_0)


# ---------------------------------------------------------------------------
# Filon quadrature for the oscillatory sigma-integrals
# ---------------------------------------------------------------------------

_FIL_T, _FIL_W = np.polynomial.legendre.leggauss(4)
_FIL_VINV = np.linalg.inv(np.vander(_FIL_T, 4, increasing=True))


def _moments(om: np.ndarray) -> np.ndarray:
    """M_k(om) = int_{-1}^{1} t^k e^{-i om t} dt for k = 0..3, vectorized.

    Closed forms for om >= 1/2; a truncated exponential series below (the
    closed forms cancel catastrophically as om -> 0).
    """
    om = np.asarray(om, dtype=float)
    out = np.empty((4,) + om.shape, dtype=complex)
    big = om >= 0.5
    ob = np.where(big, om, 1.0)
    s, co = np.sin(ob), np.cos(ob)
    out[0] = 2 * s / ob
    out[1] = 2j * (ob * co - s) / ob**2
    out[2] = 2 * (ob**2 * s + 2 * ob * co - 2 * s) / ob**3
    out[3] = -1j * 2 * (-(ob**3) * co + 3 * ob**2 * s + 6 * ob * co - 6 * s) / ob**4
    # series branch
    osm = np.where(big, 0.0, om)
    ser = np.zeros((4,) + om.shape, dtype=complex)
    term = np.ones_like(om, dtype=complex)  # (-i om)^n / n!
    for n in range(0, 22):
        for k in range(4):
            if (n + k) % 2 == 0:
                ser[k] += term * (2.0 / (n + k + 1))
        term = term * (-1j * osm) / (n + 1)
    for k in range(4):
        out[k] = np.where(big, out[k], ser[k])
    return out


def _osc_integrals(edges: np.ndarray, g: Callable[[np.ndarray], np.ndarray],
                   omega: float, c_phase: float):
    """(int g(u) sin(omega (c - u)) du, int g(u) cos(omega (c - u)) du)
    over [edges[0], edges[-1]], Filon-exact per cubic panel."""
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = mid[:, None] + half[:, None] * _FIL_T[None, :]
    gv = g(nodes.ravel()).reshape(nodes.shape)
    coef = gv @ _FIL_VINV.T                    # (n_panel, 4) monomial coeffs
    if omega == 0.0:
        # sin -> 0 handled by caller; cos(0) = 1: plain integral of g
        plain = np.sum(half[:, None] * _FIL_W[None, :] * gv, axis=None)
        return 0.0, float(plain)
    M = _moments(omega * half)                 # (4, n_panel)
    inner = np.einsum("pk,kp->p", coef, M)     # int p(t) e^{-i om h t} dt
    phase = np.exp(1j * omega * (c_phase - mid))
    total = np.sum(half * phase * inner)
    return float(np.imag(total)), float(np.real(total))


def _sigma_edges(tau: float, N: float, sigma_factor: float = 1e3,
                 per_e: float | None = None) -> np.ndarray:
    """Log-spaced sigma panel edges on [tau, tau * sigma_factor] resolving
    the integrand's power-law steepness ~ sigma^{-N}."""
    step = min(0.06, 0.35 / (N + 3.0)) if per_e is None else per_e
    n = max(8, int(math.ceil(math.log(sigma_factor) / step)))
    return tau * np.exp(np.linspace(0.0, math.log(sigma_factor), n + 1))


# ---------------------------------------------------------------------------
# the inversion
# ---------------------------------------------------------------------------


def apply_inversion(field: FourierField, c: BlowupConstants,
                    sigma_factor: float = 1e3, extend: bool = True,
                    fp_iters: int = 6):
    """Solve (D_tau^2 + beta D_tau + xi) x = f on the field's grid.

    Returns (x, Dx) as FourierFields (Dx holds D_tau x; its discrete rows
    hold the plain tau-derivatives of x_d, x_0).  The sigma-integrals run to
    sigma_factor * tau; rescaled frequencies and times beyond the grid are
    obtained from the extension rules of the interpolant (see _FieldInterp).
    """
    if field.d != c.d:
        raise ValueError("dimension mismatch between field and constants")
    interp = _FieldInterp(field, extend=extend)
    nu = c.nu
    taus = field.tau_nodes
    xis = field.xi_nodes
    n_t, n_x = len(taus), len(xis)
    x = np.zeros((n_t, n_x))
    dx = np.zeros((n_t, n_x))
    e = (1.0 + nu) / nu

    for i, tau in enumerate(taus):
        lam_t = float(_lam(c, tau))
        u_t = float(_u_phase(c, tau))
        sig_edges = _sigma_edges(tau, field.N, sigma_factor)
        u_edges = _u_phase(c, sig_edges)[::-1]          # increasing, up to u_t
        for j, xi in enumerate(xis):
            zeta = lam_t * lam_t * xi
            omega = math.sqrt(zeta)

            def g(u):
                # u = (nu sigma)^{-1/nu}; lambda(sigma) dsigma = -u^{-2(nu+1)} du
                sigma = u ** (-nu) / nu
                # lambda(sigma) = u^{-(1+nu)}, so (lam_tau/lam_sigma)^2
                # = (u/u_tau)^{2(1+nu)}
                xi_resc = xi * (u / u_t) ** (2.0 * (nu + 1.0))
                return u ** (-2.0 * (nu + 1.0)) * interp.cont(sigma, xi_resc)

            s_int, c_int = _osc_integrals(u_edges, g, omega, u_t)
            if omega > 0.0:
                x[i, j] = s_int / omega
                dx[i, j] = -c_int / lam_t
            else:
                # zeta = 0: H -> (u_t - u), dH -> -1/lambda(tau)
                half = 0.5 * np.diff(u_edges)
                mid = 0.5 * (u_edges[:-1] + u_edges[1:])
                nodes = (mid[:, None] + half[:, None] * _FIL_T[None, :]).ravel()
                gv = g(nodes).reshape(-1, 4)
                x[i, j] = float(np.sum(half[:, None] * _FIL_W[None, :]
                                       * gv * (u_t - nodes.reshape(-1, 4))))
                dx[i, j] = -c_int / lam_t

    # threshold channel (d = 5): plain quadrature against H0
    x0 = None
    dx0 = None
    if field.x_0 is not None:
        x0 = np.zeros(n_t)
        dx0 = np.zeros(n_t)
        for i, tau in enumerate(taus):
            edges = _sigma_edges(tau, field.N, sigma_factor)
            half = 0.5 * np.diff(edges)
            mid = 0.5 * (edges[:-1] + edges[1:])
            s_nodes = (mid[:, None] + half[:, None] * _FIL_T[None, :]).ravel()
            w = (half[:, None] * _FIL_W[None, :]).ravel()
            f0 = interp.disc_0(s_nodes)
            H0 = nu * s_nodes ** e * (tau ** (-1.0 / nu) - s_nodes ** (-1.0 / nu))
            x0[i] = float(np.sum(w * H0 * f0))
            dx0[i] = float(np.sum(w * -((s_nodes / tau) ** e) * f0))

    # ground-state channel: x'' - |xi_d| x = f_d - beta x', two-sided kernel
    kap = math.sqrt(-_xi_d(c.d))
    width = 40.0 / kap
    xd = np.zeros(n_t)

    # Below the first node the source is continued by its power law when that
    # stays dominated by the kernel decay (the exponent N log(tau0/sigma)
    # never beats kappa (tau0 - sigma) for N <= kappa tau0 / 2); the
    # continuation keeps the solution smooth at the left edge.  For steeper
    # sources the integral is truncated instead -- the dropped piece is
    # exactly a decaying homogeneous solution, at the price of a thin
    # boundary layer.
    if field.N <= 0.5 * kap * taus[0]:
        conv_floor = 0.25 * taus[0]
    else:
        conv_floor = taus[0]

    def _conv(src: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        out = np.empty(n_t)
        for i, tau in enumerate(taus):
            lo = max(tau - width, conv_floor)
            hi = tau + width
            n_p = 96
            edges = np.linspace(lo, hi, n_p + 1)
            half = 0.5 * np.diff(edges)
            mid = 0.5 * (edges[:-1] + edges[1:])
            s_nodes = (mid[:, None] + half[:, None] * _FIL_T[None, :]).ravel()
            w = (half[:, None] * _FIL_W[None, :]).ravel()
            G = -0.5 / kap * np.exp(-kap * np.abs(tau - s_nodes))
            out[i] = float(np.sum(w * G * src(s_nodes)))
        return out

    # the same dynamic-range flattening as in _FieldInterp: spline
    # tau^{N-2} x_d and differentiate the product analytically
    n_p = max(field.N - 2.0, 0.0)
    lt = np.log(taus)
    lref = lt[0]
    gain = np.exp(n_p * (lt - lref))

    def _dxd_eval(sp_w, s):
        ls = np.log(s)
        lsc = np.clip(ls, lt[0], lt[-1])
        w = sp_w(lsc)
        dw = np.where((ls < lt[0]) | (ls > lt[-1]), 0.0, sp_w(lsc, 1))
        return (dw - n_p * w) * np.exp(-n_p * (ls - lref) - ls)

    xd = _conv(interp.disc_d)
    for _ in range(fp_iters):
        sp_w = CubicSpline(lt, xd * gain)

        def src(s):
            beta = (1.0 + nu) / (s * nu)
            return interp.disc_d(s) - beta * _dxd_eval(sp_w, s)

        xd_new = _conv(src)
        if np.max(np.abs(xd_new - xd)) <= 1e-13 * (1.0 + np.max(np.abs(xd_new))):
            xd = xd_new
            break
        xd = xd_new
    sp_w = CubicSpline(lt, xd * gain)
    dxd = (sp_w(lt, 1) - n_p * sp_w(lt)) * np.exp(-n_p * (lt - lref) - lt)

    x_f = FourierField(field.d, taus, xis, x, xd, x0,
                       alpha=field.alpha + 0.5, N=field.N - 2)
    dx_f = FourierField(field.d, taus, xis, dx, dxd,
                        dx0, alpha=field.alpha, N=field.N - 1)
    return x_f, dx_f


# ---------------------------------------------------------------------------
# grid derivatives and the defect of the inversion
# ---------------------------------------------------------------------------


def _log_deriv(vals: np.ndarray, lg: np.ndarray, axis: int) -> np.ndarray:
    """d(vals)/d(log coordinate), 4th-order central inside, one-sided edges."""
    v = np.moveaxis(np.asarray(vals, dtype=float), axis, 0)
    h = lg[1] - lg[0]
    if not np.allclose(np.diff(lg), h, rtol=1e-9):
        raise ValueError("log grid must be uniform")
    out = np.gradient(v, h, axis=0, edge_order=2)
    if len(lg) >= 5:
        core = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * h)
        out[2:-2] = core
    return np.moveaxis(out, 0, axis)


def d_tau_grid(field: FourierField, c: BlowupConstants) -> FourierField:
    """D_tau = d/dtau - 2 beta xi d/dxi by high-order stencils on the grid."""
    lt = np.log(field.tau_nodes)
    lx = np.log(field.xi_nodes)
    beta = (1.0 + c.nu) / (field.tau_nodes * c.nu)
    dt = _log_deriv(field.values, lt, 0) / field.tau_nodes[:, None]
    dxi = _log_deriv(field.values, lx, 1)      # = xi d/dxi
    vals = dt - 2.0 * beta[:, None] * dxi
    xd = _log_deriv(field.x_d, lt, 0) / field.tau_nodes
    x0 = None
    if field.x_0 is not None:
        x0 = _log_deriv(field.x_0, lt, 0) / field.tau_nodes
    return FourierField(field.d, field.tau_nodes, field.xi_nodes, vals,
                        xd, x0, alpha=field.alpha, N=field.N + 1)


def inversion_defect(c: BlowupConstants, tau0: float = 100.0, N: float = 8.0,
                     n_tau: int = 96, n_xi: int = 36,
                     xi_span=(1e-6, 10.0)) -> float:
    """Max relative residual of (D_tau^2 + beta D_tau + xi) x - f on interior
    nodes, for the synthetic source f = tau^{-N} / (1 + xi).

    The tau-derivatives of the returned fields are taken with quintic
    splines on the log grid (fourth-order accurate second derivatives), so
    the residual probes the quadrature, the interpolation and the kernel
    normalization rather than the differencing noise of a low-order stencil.
    """
    taus = np.geomspace(tau0, 4.0 * tau0, n_tau)
    xis = np.geomspace(xi_span[0], xi_span[1], n_xi)
    vals = np.outer(taus ** -N, 1.0 / (1.0 + xis))
    fd = taus ** -N
    f0 = taus ** -N if c.d == 5 else None
    f = FourierField(c.d, taus, xis, vals, fd, f0, alpha=0.0, N=N)
    x, dx = apply_inversion(f, c)
    lt = np.log(taus)
    beta = (1.0 + c.nu) / (taus * c.nu)

    def derivs(y):
        sp = make_interp_spline(lt, y, k=5)
        d1 = sp(lt, 1) / taus
        d2 = (sp(lt, 2) - sp(lt, 1)) / taus ** 2
        return d1, d2

    # continuous channel: D(Dx) + beta Dx + xi x = f, with D x taken from
    # the analytically differentiated kernel and one spline application of
    # D = d/dtau - 2 beta xi d/dxi on top
    lxs = np.log(xis)
    ddx = np.empty_like(dx.values)
    for j in range(len(xis)):
        ddx[:, j] = derivs(dx.values[:, j])[0]
    for i in range(len(taus)):
        spx = make_interp_spline(lxs, dx.values[i], k=5)
        ddx[i] -= 2.0 * beta[i] * spx(lxs, 1)       # xi d/dxi in log xi
    res = ddx + beta[:, None] * dx.values + xis[None, :] * x.values - vals
    scale = np.max(np.abs(vals), axis=1)        # per-slice source magnitude
    rel = np.abs(res) / scale[:, None]
    core = rel[2:-2, 2:-2]
    # discrete channels
    d1, d2 = derivs(x.x_d)
    res_d = d2 + beta * d1 + _xi_d(c.d) * x.x_d - fd
    worst = float(np.max(core))
    worst = max(worst, float(np.max(np.abs(res_d[2:-2]) / np.abs(fd[2:-2]))))
    if c.d == 5:
        e1, e2 = derivs(x.x_0)
        res_0 = e2 + beta * e1 - f0
        worst = max(worst, float(np.max(np.abs(res_0[2:-2]) / np.abs(f0[2:-2]))))
    return worst


# ---------------------------------------------------------------------------
# the transference operator as a grid matrix
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=4)
def _k_matrix_data(d: int, xi_key: tuple, tol: float):
    """Dense matrix of K on [x_d, (x_0,) x_c(grid)] plus helpers.

    Continuous block: the delta part -(3/2 + eta rho'/rho) on the diagonal
    plus the principal value of rho(xi) F(xi,eta)/(eta - xi), discretized by
    singularity subtraction (the subtracted constant integrates to a
    closed-form logarithm).  Discrete rows/columns follow the vector
    representation of the operator: K_dd = K_00 = -1/2,
    K_0c(eta) = F(0,eta)/eta, K_dc from the normalized ground state, and the
    c->discrete entries are the negated rho-weighted pairings.
    """
    xi = np.array(xi_key)
    n = len(xi)
    rho = _grid_rho(d, xi)
    w = _trapz_weights(xi)
    lx = np.log(xi)
    # rho'/rho by stencil on the log grid
    drho = _log_deriv(rho, lx, 0) / xi

    # symmetric F table and the diagonal derivative
    F = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            F[i, j] = F[j, i] = spectral.F_kernel(d, float(xi[i]), float(xi[j]),
                                                  tol=tol)
    dF_diag = np.empty(n)
    for i in range(n):
        m = float(xi[i])
        h = 0.005 * max(m, 0.05)
        d1 = (spectral.F_kernel(d, m, m + h, tol=tol)
              - spectral.F_kernel(d, m, m - h, tol=tol)) / (2 * h)
        d2 = (spectral.F_kernel(d, m, m + h / 2, tol=tol)
              - spectral.F_kernel(d, m, m - h / 2, tol=tol)) / h
        dF_diag[i] = (4.0 * d2 - d1) / 3.0

    # d/dxi stencil on the log grid (used twice below)
    h = lx[1] - lx[0]
    m = np.zeros((n, n))
    for i in range(n):
        if 2 <= i < n - 2:
            m[i, i - 2:i + 3] = np.array([1, -8, 0, 8, -1]) / (12 * h)
        elif i == 0:
            m[i, :3] = np.array([-3, 4, -1]) / (2 * h)
        elif i == 1:
            m[i, :3] = np.array([-1, 0, 1]) / (2 * h)
        elif i == n - 2:
            m[i, -3:] = np.array([-1, 0, 1]) / (2 * h)
        else:
            m[i, -3:] = np.array([1, -4, 3]) / (2 * h)

    # continuous block: PV by singularity subtraction.  With g = rho F f,
    # PV int g/(eta-xi) = int (g(xi)-g(eta))/(eta-xi) + g(eta) log(...),
    # and the subtracted integrand equals -g'(eta) at the node itself.
    Kc = np.zeros((n, n))
    for i in range(n):
        eta = xi[i]
        L = math.log((eta - xi[0] + 1e-300) / max(xi[-1] - eta, 1e-300)) \
            if (xi[0] < eta < xi[-1]) else 0.0
        off = np.arange(n) != i
        Kc[i, off] = w[off] * rho[off] * F[i, off] / (eta - xi[off])
        Kc[i, i] = rho[i] * F[i, i] * (L - float(np.sum(w[off] / (eta - xi[off]))))
        # -g'(eta) at the diagonal node: -(rho' F + rho dF) f - rho F f'
        Kc[i, i] -= w[i] * (drho[i] * F[i, i] + rho[i] * dF_diag[i])
        Kc[i, :] -= w[i] * rho[i] * F[i, i] * m[i, :] / eta
        Kc[i, i] += -(1.5 + eta * drho[i] / rho[i])  # the delta coefficient

    # discrete couplings
    xi_d = _xi_d(d)
    Rg = np.geomspace(1e-3, 80.0, 3000)
    eig = spectral.eigenfunction_samples(d, xi_d, Rg)
    from scipy.integrate import simpson
    eig_n = math.sqrt(float(simpson(eig ** 2, x=Rg)))
    phi_d = eig / eig_n

    w0 = spectral.w0_potential(d, Rg).u
    K_dc = np.empty(n)
    for j in range(n):
        u_eta = spectral._phi_eval(d, float(xi[j]), Rg)[0]
        K_dc[j] = float(simpson(w0 * phi_d * u_eta, x=Rg)) / (xi[j] - xi_d)
    size = n + (2 if d == 5 else 1)
    K = np.zeros((size, size))
    off = size - n
    K[off:, off:] = Kc
    K[0, 0] = -0.5
    K[off:, 0] = K_dc
    K[0, off:] = -w * rho * K_dc
    if d == 5:
        K[1, 1] = -0.5
        Rg0 = np.geomspace(1e-3, 200.0, 4000)
        phi0_v = spectral.phi0(d, Rg0)
        Rg0w = np.geomspace(1e-3, 1e5, 6000)
        phi0_n = math.sqrt(float(simpson(spectral.phi0(d, Rg0w).u ** 2, x=Rg0w))
                           + 1.0 / Rg0w[-1])
        eig0 = spectral.eigenfunction_samples(d, xi_d, Rg0) / eig_n
        k_0d = float(simpson(Rg0 * phi0_v.u_R * eig0, x=Rg0)) / phi0_n
        ip = float(simpson(phi0_v.u * eig0, x=Rg0)) / phi0_n
        K[1, 0] = k_0d            # row 0, column d: K_0d
        K[0, 1] = -k_0d - ip      # row d, column 0: K_d0 = -K_0d - <phi_d, phi_0>
        K_0c = np.array([spectral.F_kernel(d, 0.0, float(e), tol=tol) / e
                         for e in xi]) / phi0_n
        K[off:, 1] = K_0c
        K[1, off:] = -w * rho * K_0c

    # xi d/dxi acting on the continuous block only
    Dx = np.zeros((size, size))
    Dx[off:, off:] = m        # d/d(log xi) = xi d/dxi
    com = Dx @ K - K @ Dx      # [xi d/dxi, K]
    return K, com, rho, w, off


def transference_matrix(d: int, xi_nodes: np.ndarray, tol: float = 1e-5):
    """(K, [xi d/dxi, K]) as dense matrices on [x_d, (x_0,) x_c(xi_nodes)]."""
    K, com, _, _, _ = _k_matrix_data(d, tuple(float(x) for x in xi_nodes), tol)
    return K, com


def delta_coefficient(d: int, xi_nodes: np.ndarray) -> np.ndarray:
    """-(3/2 + eta rho'(eta)/rho(eta)) on the node set."""
    xi = np.asarray(xi_nodes, dtype=float)
    rho = _grid_rho(d, xi)
    drho = _log_deriv(rho, np.log(xi), 0) / xi
    return -(1.5 + xi * drho / rho)


# ---------------------------------------------------------------------------
# the linear part of the fixed-point operator and its contraction factor
# ---------------------------------------------------------------------------


def _apply_T(field: FourierField, c: BlowupConstants, K: np.ndarray,
             com: np.ndarray) -> FourierField:
    """T x = (d-1) b Dx + [(d-2) - 1] b^2 Kx - 2 b K Dx + 2 b^2 [xi dxi, K] x
             - bdot K x + c_nu bdot x, with b = beta(tau)."""
    d, nu = c.d, c.nu
    taus = field.tau_nodes
    beta = (1.0 + nu) / (taus * nu)
    beta_dot = -(1.0 + nu) / (taus ** 2 * nu)
    c_nu = (d - 1) * (d - 3 + d * nu - nu) / (4.0 * nu)
    dxf = d_tau_grid(field, c)

    def stack(f: FourierField) -> np.ndarray:
        cols = [f.x_d[:, None]]
        if f.x_0 is not None:
            cols.append(f.x_0[:, None])
        cols.append(f.values)
        return np.hstack(cols)

    X = stack(field)
    DX = stack(dxf)
    out = ((d - 1) * beta[:, None] * DX
           + (d - 3) * beta[:, None] ** 2 * (X @ K.T)
           - 2.0 * beta[:, None] * (DX @ K.T)
           + 2.0 * beta[:, None] ** 2 * (X @ com.T)
           - beta_dot[:, None] * (X @ K.T)
           + c_nu * beta_dot[:, None] * X)
    off = 2 if field.x_0 is not None else 1
    x0 = out[:, 1] if field.x_0 is not None else None
    return FourierField(field.d, taus, field.xi_nodes, out[:, off:],
                        out[:, 0], x0, alpha=field.alpha, N=field.N + 1)


def pair_norm(x: FourierField, dx: FourierField, alpha: float, N: float) -> float:
    """||x||_{N-2, alpha+1/2} + ||Dx||_{N-1, alpha} (the contraction norm)."""
    return math.exp(_log_pair_norm(x, dx, alpha, N))


def _log_pair_norm(x: FourierField, dx: FourierField,
                   alpha: float, N: float) -> float:
    return float(np.logaddexp(_log_weighted_norm(x, alpha + 0.5, N - 2),
                              _log_weighted_norm(dx, alpha, N - 1)))


def norm_ratio(c: BlowupConstants, N: float, alpha: float = 0.0,
               tau0: float = 1e3, n_tau: int = 24, n_xi: int = 24,
               xi_span=(1e-8, 1e-2)) -> float:
    """(||x||_{N-2,alpha+1/2} + ||Dx||_{N-1,alpha}) / ||f||_{N,alpha} for the
    synthetic source f = tau^{-N}/(1+xi); the bound predicts ~ 1/N.

    The 1/N gain comes from the tau-integration against the decaying source
    and is visible where the accumulated phase lam(tau)^2 xi (u-span)^2 stays
    moderate; the default window keeps the comoving frequencies in that
    regime (for xi far above (N/tau)^2 the inversion instead gains a full
    power of xi and the ratio saturates at an N-independent floor).
    """
    taus = np.geomspace(tau0, 4.0 * tau0, n_tau)
    xis = np.geomspace(xi_span[0], xi_span[1], n_xi)
    vals = np.outer(taus ** -N, 1.0 / (1.0 + xis))
    fd = taus ** -N
    f0 = taus ** -N if c.d == 5 else None
    f = FourierField(c.d, taus, xis, vals, fd, f0, alpha=alpha, N=N)
    x, dx = apply_inversion(f, c)
    return pair_norm(x, dx, alpha, N) / weighted_norm(f)


def linear_contraction_factor(c: BlowupConstants, alpha: float = 0.0,
                              N: float = 40.0, tau0: float = 1e4,
                              n_tau: int = 16, n_xi: int = 14,
                              xi_span=(1e-2, 1e2), n_samples: int = 4,
                              seed: int = 0, tol: float = 1e-5) -> float:
    """Maximal measured norm ratio of inversion o T over random fields.

    Random fields are smooth in log xi with tau^{-(N-2)} decay (members of
    the contraction ball); the returned kappa bounds the linear part of the
    fixed-point operator on the sample set.
    """
    rng = np.random.default_rng(seed)
    taus = np.geomspace(tau0, 4.0 * tau0, n_tau)
    xis = np.geomspace(xi_span[0], xi_span[1], n_xi)
    K, com = transference_matrix(c.d, xis, tol=tol)
    worst = 0.0
    lx = np.log(xis)
    for _ in range(n_samples):
        coef = rng.standard_normal(4)
        prof = sum(coef[k] * np.cos(k * (lx - lx[0]) / (lx[-1] - lx[0]) * math.pi)
                   for k in range(4))
        decay = (taus / tau0) ** -(N - 2.0)     # anchored at tau0
        vals = np.outer(decay, prof)
        xd = rng.standard_normal() * decay
        x0 = (rng.standard_normal() * decay) if c.d == 5 else None
        xfield = FourierField(c.d, taus, xis, vals, xd, x0, alpha=alpha, N=N - 2)
        dxfield = d_tau_grid(xfield, c)
        log_denom = _log_pair_norm(xfield, dxfield, alpha, N)
        tf = _apply_T(xfield, c, K, com)
        tf = FourierField(c.d, taus, xis, tf.values, tf.x_d, tf.x_0,
                          alpha=alpha, N=N)
        y, dy = apply_inversion(tf, c)
        worst = max(worst,
                    math.exp(_log_pair_norm(y, dy, alpha, N) - log_denom))
    return worst
