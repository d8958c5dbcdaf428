"""Half-line Schroedinger reduction of the linearized operator.

Conjugating the radial linearization -Delta - p W^{p-1} by R^{(d-1)/2}
turns it into L = -d^2/dR^2 + V(R) on (0, +inf) with

    V(R) = (d-1)(d-3) / (4 R^2) - p W(R)^{p-1}.

This module provides the explicit zero-energy pair (phi, theta), the
generalized eigenfunctions phi(R, xi), the Jost solution at +infinity,
the scattering coefficient a(xi) and spectral density rho(xi), the
commutator potential W0, the kernel F(xi, eta), and the off-diagonal
transference kernel rho(xi) F(xi, eta) / (eta - xi).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, quad, solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .series_core import DJet, Jet2

__all__ = [
    "SpectralTable",
    "NearZeroCrossing",
    "IterationDivergence",
    "MatchingFailure",
    "QuadratureFailure",
    "phi0",
    "theta0",
    "phi_xi",
    "phi_xi_jet",
    "jost",
    "jost_jet",
    "spectral_density",
    "w0_potential",
    "schroedinger_potential",
    "F_kernel",
    "transference_kernel",
    "ground_eigenvalue",
    "eigenfunction_samples",
    "parseval_defect",
    "build_spectral_table",
]


class NearZeroCrossing(Exception):
    """theta0 requested inside the guard band around phi's zero.

    The attribute ``limit`` carries the jet obtained by the limit formula
    theta(R0) = -1/phi'(R0), theta'(R0) = 0, theta''(R0) = V(R0) theta(R0).
    """

    def __init__(self, msg: str, limit: Jet2):
        super().__init__(msg)
        self.limit = limit


class IterationDivergence(Exception):
    """Picard iteration for the Jost solution failed to settle."""


class MatchingFailure(Exception):
    """Wronskian of phi and psi+ not constant across the matching window."""


class QuadratureFailure(Exception):
    """Truncation/tail budget for an oscillatory integral not met."""


def _check_dim(d: int) -> None:
    if d not in (4, 5):
        raise ValueError(f"dimension must be 4 or 5, got {d}")


def _kd(d: int) -> float:
    return float(d * (d - 2))


def _inv_square_coef(d: int) -> float:
    return (d - 1) * (d - 3) / 4.0


# ---------------------------------------------------------------------------
# closed-form objects: V, phi, W0
# ---------------------------------------------------------------------------


def _potential_djet(d: int, R):
    """DJet of V(R) = (d-1)(d-3)/(4R^2) - p k^2/(k + R^2)^2, k = d(d-2)."""
    k = _kd(d)
    p = (d + 2) / (d - 2)
    x = DJet.variable(np.asarray(R, dtype=float))
    return _inv_square_coef(d) / (x * x) - (p * k * k) / ((x * x + k) ** 2)


def schroedinger_potential(d: int, R) -> Jet2:
    """Jet of the half-line potential V(R); R > 0."""
    _check_dim(d)
    j = _potential_djet(d, R)
    return Jet2(j.f, j.d, j.dd)


def _V_value(d: int, R):
    k = _kd(d)
    p = (d + 2) / (d - 2)
    R = np.asarray(R, dtype=float)
    return _inv_square_coef(d) / (R * R) - p * k * k / ((R * R + k) ** 2)


def _phi_djet(d: int, R):
    k = _kd(d)
    x = DJet.variable(np.asarray(R, dtype=float))
    return x ** ((d - 1) / 2.0) * (x * x - k) / ((x * x + k) ** (d / 2.0))


def _phi_djet_long(d: int, R):
    k = np.longdouble(_kd(d))
    x = DJet.variable(np.asarray(R, dtype=np.longdouble))
    return x ** ((d - 1) / 2.0) * (x * x - k) / ((x * x + k) ** (d / 2.0))


def phi0(d: int, R) -> Jet2:
    """The explicit zero-energy solution R^{(d-1)/2}(R^2-k)/(R^2+k)^{d/2}.

    Generated by the scaling symmetry of the ground state; it vanishes at
    R = sqrt(d(d-2)) and decays like R^{(3-d)/2}.
    """
    _check_dim(d)
    arr = np.asarray(R, dtype=float)
    if np.any(arr < 0):
        raise ValueError("R must be >= 0")
    pos = np.where(arr > 0, arr, 1.0)
    j = _phi_djet(d, pos)
    u = np.where(arr > 0, j.f, 0.0)
    du = np.where(arr > 0, j.d, 0.0)
    if d == 5:
        k = _kd(d)
        ddu = np.where(arr > 0, j.dd, -2.0 / k**1.5)
    else:
        ddu = np.where(arr > 0, j.dd, np.inf)
    if np.isscalar(R) or np.ndim(R) == 0:
        return Jet2(float(u), float(du), float(ddu))
    return Jet2(u, du, ddu)


def w0_potential(d: int, R) -> Jet2:
    """Commutator potential W0 = -2V - R V' = 2d^2(d^2-4)(k-R^2)/(k+R^2)^3."""
    _check_dim(d)
    k = _kd(d)
    c = 2.0 * d * d * (d * d - 4.0)
    x = DJet.variable(np.asarray(R, dtype=float))
    j = c * (k - x * x) / ((x * x + k) ** 3)
    return Jet2(j.f, j.d, j.dd)


# ---------------------------------------------------------------------------
# theta: reduction of order across phi's zero
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _zero_crossing_data(d: int):
    """(R0, phi'(R0), phi'''(R0)) at phi's zero R0 = sqrt(d(d-2))."""
    R0 = math.sqrt(_kd(d))
    dphi0 = float(phi0(d, R0).u_R)
    h = 1e-5
    d3 = (phi0(d, R0 + h).u_RR - phi0(d, R0 - h).u_RR) / (2 * h)
    return R0, dphi0, float(d3)


def _h_reg(d: int, s):
    """1/phi^2 minus its double pole at R0, evaluated in extended precision.

    phi''(R0) = V(R0) phi(R0) = 0, so the Laurent expansion of 1/phi^2 at
    the simple zero R0 has no 1/(s-R0) term and the subtraction leaves a
    continuous function.
    """
    _, dphi0, d3 = _zero_crossing_data(d)
    R0L = np.sqrt(np.longdouble(_kd(d)))
    s = np.asarray(s, dtype=np.longdouble)
    near = np.abs(s - R0L) < 3e-6
    safe = np.where(near, R0L + 1e-2, s)
    j = _phi_djet_long(d, safe)
    val = 1.0 / (j.f * j.f) - 1.0 / (np.longdouble(dphi0) ** 2 * (safe - R0L) ** 2)
    lim = -d3 / (3.0 * dphi0**3)
    out = np.where(near, np.longdouble(lim), val)
    return np.asarray(out, dtype=float)


def theta0(d: int, R: float, guard: float = 1e-6) -> Jet2:
    """Second zero-energy solution with W(theta, phi) = theta' phi - theta phi' = 1.

    Built as theta = phi * C with C(R) = -1/(phi'(R0)^2 (R-R0)) plus the
    quadrature of the regularized integrand from R0; the integration
    constant is fixed so the regular part vanishes at R0.
    """
    _check_dim(d)
    R = float(R)
    if R <= 0:
        raise ValueError("R must be > 0")
    R0, dphi0, _ = _zero_crossing_data(d)
    V0 = float(_V_value(d, R0))
    if abs(R - R0) < guard:
        limit = Jet2(-1.0 / dphi0, 0.0, -V0 / dphi0)
        raise NearZeroCrossing(
            f"R={R} within guard band {guard} of the zero at {R0}", limit
        )
    H, _ = quad(lambda s: _h_reg(d, s), R0, R, limit=400, epsabs=1e-12, epsrel=1e-11)
    u_off = float(np.longdouble(R) - np.sqrt(np.longdouble(_kd(d))))
    C = -1.0 / (dphi0**2 * u_off) + H
    pj = phi0(d, R)
    th = pj.u * C
    return Jet2(th, pj.u_R * C + 1.0 / pj.u, float(_V_value(d, R)) * th)


# ---------------------------------------------------------------------------
# generalized eigenfunctions phi(R, xi)
# ---------------------------------------------------------------------------

_SERIES_TERMS = 12
_SERIES_RMAX = 30.0


@functools.lru_cache(maxsize=None)
def _phi_series_data(d: int):
    """Grid construction of the power-series coefficients g_j of phi(R, xi).

    phi(R, xi) = sum_j xi^j g_j(R) with g_0 = phi and L g_j = g_{j-1},
    solved by the (phi, theta) Green kernel:
        g_j(R) = phi(R) A_j(R) - theta(R) B_j(R),
        A_j = int_0^R theta g_{j-1},  B_j = int_0^R phi g_{j-1}.
    Returns cubic splines of (g_j, g_j') for j = 1..J.
    """
    R0, _, _ = _zero_crossing_data(d)
    grid = np.concatenate(
        [
            np.geomspace(1e-4, 1.0, 500, endpoint=False),
            np.geomspace(1.0, _SERIES_RMAX * 1.2, 6000),
        ]
    )
    grid = np.sort(np.append(grid, R0))

    pj = phi0(d, grid)
    phi_g, dphi_g = pj.u, pj.u_R

    # theta on the grid: anchor at R = 1 by quadrature, then propagate the
    # ODE theta'' = V theta densely in both directions (the origin-singular
    # branch grows inward, so inward integration is the stable one).
    th1 = theta0(d, 1.0)
    theta_g = np.empty_like(grid)
    dtheta_g = np.empty_like(grid)

    def rhs(r, y):
        return [y[1], float(_V_value(d, r)) * y[0]]

    i1 = int(np.searchsorted(grid, 1.0))
    lo = grid[: i1 + 1][::-1]
    hi = grid[i1:]
    sol_lo = solve_ivp(rhs, (1.0, lo[-1]), [th1.u, th1.u_R], method="DOP853",
                       t_eval=lo, rtol=1e-13, atol=1e-14)
    sol_hi = solve_ivp(rhs, (1.0, hi[-1]), [th1.u, th1.u_R], method="DOP853",
                       t_eval=hi, rtol=1e-13, atol=1e-14)
    if not (sol_lo.success and sol_hi.success):
        raise RuntimeError("theta propagation failed")
    theta_g[: i1 + 1] = sol_lo.y[0][::-1]
    dtheta_g[: i1 + 1] = sol_lo.y[1][::-1]
    theta_g[i1:] = sol_hi.y[0]
    dtheta_g[i1:] = sol_hi.y[1]

    splines = []
    g = phi_g.copy()
    for _ in range(_SERIES_TERMS):
        A = cumulative_simpson(theta_g * g, x=grid, initial=0.0)
        B = cumulative_simpson(phi_g * g, x=grid, initial=0.0)
        g = phi_g * A - theta_g * B
        dg = dphi_g * A - dtheta_g * B
        splines.append((CubicSpline(grid, g), CubicSpline(grid, dg)))
    return splines


def _phi_series(d: int, xi: float, R: np.ndarray):
    """Series evaluation of (phi(R,xi), d/dR phi(R,xi)) for R^2 |xi| small."""
    pj = phi0(d, R)
    u = np.array(pj.u, dtype=float, copy=True)
    du = np.array(pj.u_R, dtype=float, copy=True)
    if xi != 0.0:
        zj = 1.0
        for spl, dspl in _phi_series_data(d):
            zj *= xi
            u += zj * spl(R)
            du += zj * dspl(R)
    return u, du


def _phi_eval(d: int, xi: float, R: np.ndarray):
    """(phi(R,xi), phi_R(R,xi)) on a sorted array of radii.

    Power series below R_b = min(0.9/sqrt|xi|, 30), high-order ODE
    continuation beyond.
    """
    R = np.asarray(R, dtype=float)
    if np.any(np.diff(R) < 0):
        raise ValueError("radii must be sorted ascending")
    if xi == 0.0:
        pj = phi0(d, R)
        return np.asarray(pj.u, float), np.asarray(pj.u_R, float)
    R_b = min(0.9 / math.sqrt(abs(xi)), _SERIES_RMAX)
    inner = R <= R_b
    u = np.empty_like(R)
    du = np.empty_like(R)
    if np.any(inner):
        u[inner], du[inner] = _phi_series(d, xi, R[inner])
    if np.any(~inner):
        u0, du0 = _phi_series(d, xi, np.array([R_b]))
        outer = R[~inner]

        def rhs(r, y):
            return [y[1], (float(_V_value(d, r)) - xi) * y[0]]

        sol = solve_ivp(
            rhs,
            (R_b, float(outer[-1])),
            [float(u0[0]), float(du0[0])],
            method="DOP853",
            t_eval=outer,
            rtol=1e-12,
            atol=1e-14,
        )
        if not sol.success:
            raise RuntimeError(f"continuation failed: {sol.message}")
        u[~inner] = sol.y[0]
        du[~inner] = sol.y[1]
    return u, du


def phi_xi(d: int, R: float, xi: float) -> float:
    """Generalized eigenfunction phi(R, xi) with phi(R, 0) = phi(R) exactly."""
    _check_dim(d)
    return float(_phi_eval(d, float(xi), np.atleast_1d(float(R)))[0][0])


def phi_xi_jet(d: int, R: float, xi: float) -> Jet2:
    """Jet of phi(R, xi); the second derivative uses (V - xi) u."""
    _check_dim(d)
    u, du = _phi_eval(d, float(xi), np.atleast_1d(float(R)))
    u, du = float(u[0]), float(du[0])
    return Jet2(u, du, (float(_V_value(d, R)) - xi) * u)


# ---------------------------------------------------------------------------
# Jost solution via Picard/Volterra iteration
# ---------------------------------------------------------------------------

_GL_N = 8


@functools.lru_cache(maxsize=None)
def _gl_partial(n: int = _GL_N):
    """Reference Gauss-Legendre rule plus node-to-endpoint partial weights.

    M[i, j] = integral from t_i to 1 of the j-th Lagrange basis polynomial,
    so that h * M @ g(nodes) gives the integral from each node to the
    panel's right edge.
    """
    t, w = np.polynomial.legendre.leggauss(n)
    V = np.vander(t, n, increasing=True)
    A = np.linalg.inv(V)  # columns: monomial coefficients of Lagrange basis
    powers = np.arange(1, n + 1, dtype=float)
    prim = (1.0 - t[:, None] ** powers[None, :]) / powers[None, :]
    M = prim @ A
    return t, w, M


def _jost_panels(sqxi: float, marks: np.ndarray, R_cut: float):
    """Panel edges from marks[0] to R_cut; every mark is an edge.

    Panel length resolves both the potential (scale ~ R) and the
    oscillation (scale 1/sqrt(xi)).
    """
    edges = []
    R = float(marks[0])
    pending = list(marks[1:]) + [R_cut]
    nxt = pending.pop(0)
    edges.append(R)
    while R < R_cut - 1e-12:
        step = min(0.4 * (1.0 + R / 8.0), 0.5 / sqxi)
        R_new = R + step
        if R_new >= nxt - 1e-9 * max(1.0, nxt):
            R_new = nxt
            if pending:
                nxt = pending.pop(0)
        edges.append(R_new)
        R = R_new
    return np.asarray(edges)


def _jost_eval(d: int, xi: float, R_eval: np.ndarray, tail_tol: float = 1e-4,
               tol: float = 1e-10, max_iter: int = 50):
    """(f+, f+') at the sorted radii R_eval by Volterra iteration.

    The fixed-point equation
        f(R) = e^{iR sqrt(xi)}
               - int_R^inf sin(sqrt(xi)(R-R')) / sqrt(xi) * V(R') f(R') dR'
    is truncated at R_cut where the remaining inverse-square tail
    contributes less than tail_tol, and iterated on composite
    Gauss-Legendre panels until successive sups differ by < tol.
    """
    _check_dim(d)
    if xi <= 0:
        raise ValueError("xi must be > 0")
    sqxi = math.sqrt(xi)
    R_eval = np.asarray(R_eval, dtype=float)
    c2 = _inv_square_coef(d)
    R_cut = max(c2 / (sqxi * tail_tol), 1.3 * R_eval[-1] + 10.0, 4.0 * math.sqrt(_kd(d)))
    edges = _jost_panels(sqxi, R_eval, R_cut)
    t, w, M = _gl_partial()
    half = 0.5 * np.diff(edges)  # (P,)
    mid = 0.5 * (edges[:-1] + edges[1:])
    Rn = mid[:, None] + half[:, None] * t[None, :]  # (P, n)
    q = sqxi * Rn
    cosq, sinq = np.cos(q), np.sin(q)
    Vn = _V_value(d, Rn)
    f = np.exp(1j * q)
    prev_sup = None
    for _ in range(max_iter):
        g = Vn * f
        gc = cosq * g
        gs = sinq * g
        full_c = half * (gc @ w)
        full_s = half * (gs @ w)
        # suffix sums over panels strictly to the right
        suf_c = np.concatenate([np.cumsum(full_c[::-1])[::-1][1:], [0.0 + 0.0j]])
        suf_s = np.concatenate([np.cumsum(full_s[::-1])[::-1][1:], [0.0 + 0.0j]])
        Ic = half[:, None] * (gc @ M.T) + suf_c[:, None]
        Is = half[:, None] * (gs @ M.T) + suf_s[:, None]
        f_new = np.exp(1j * q) - (sinq * Ic - cosq * Is) / sqxi
        diff = float(np.max(np.abs(f_new - f)))
        f = f_new
        if diff < tol:
            break
        if prev_sup is not None and diff > 4.0 * prev_sup and diff > 1.0:
            raise IterationDivergence(
                f"Picard iteration growing: sup difference {diff:.3e}"
            )
        prev_sup = diff
    else:
        raise IterationDivergence(
            f"no convergence after {max_iter} iterations (last sup {diff:.3e})"
        )
    # totals from each panel's left edge to R_cut
    g = Vn * f
    full_c = half * ((cosq * g) @ w)
    full_s = half * ((sinq * g) @ w)
    from_edge_c = np.cumsum(full_c[::-1])[::-1]
    from_edge_s = np.cumsum(full_s[::-1])[::-1]
    idx = np.searchsorted(edges, R_eval)
    idx = np.minimum(idx, len(edges) - 2)
    qe = sqxi * R_eval
    Ctot = from_edge_c[idx]
    Stot = from_edge_s[idx]
    fe = np.exp(1j * qe) - (np.sin(qe) * Ctot - np.cos(qe) * Stot) / sqxi
    dfe = 1j * sqxi * np.exp(1j * qe) - (np.cos(qe) * Ctot + np.sin(qe) * Stot)
    return fe, dfe


def jost(d: int, R: float, xi: float, q_min: float = 0.5) -> complex:
    """Jost fixed point f+(R, xi); psi+ = xi^{-1/4} f+."""
    _check_dim(d)
    if R * math.sqrt(xi) < q_min:
        raise ValueError(f"R sqrt(xi) = {R * math.sqrt(xi):.3g} below q_min={q_min}")
    f, _ = _jost_eval(d, xi, np.atleast_1d(float(R)))
    return complex(f[0])


def jost_jet(d: int, R: float, xi: float, q_min: float = 0.5):
    """(f+, f+', f+'') with f+'' = (V - xi) f+."""
    _check_dim(d)
    if R * math.sqrt(xi) < q_min:
        raise ValueError(f"R sqrt(xi) = {R * math.sqrt(xi):.3g} below q_min={q_min}")
    f, df = _jost_eval(d, xi, np.atleast_1d(float(R)))
    f, df = complex(f[0]), complex(df[0])
    return f, df, (float(_V_value(d, R)) - xi) * f


# ---------------------------------------------------------------------------
# scattering coefficient and spectral density
# ---------------------------------------------------------------------------


def spectral_density(d: int, xi: float, gate: float = 1e-6):
    """(a, rho) with a = -i W(phi(., xi), psi+(., xi)), rho = 1/(pi |a|^2).

    The normalization of a is fixed so that rho is the unitary density of
    the generalized Fourier transform built on phi(R, xi): for the free
    operator the Weyl m-function gives Im m = |W(phi, psi+)|^{-2}, hence
    rho = Im m / pi = 1/(pi |a|^2) exactly with this a.  (The amplitude
    relation reads phi = (a/2) psi+ + conj.)

    The Wronskian is sampled on a short window above the matching radius
    R* = max(10, 8/sqrt(xi)); non-constancy beyond `gate` (relative)
    raises MatchingFailure.
    """
    _check_dim(d)
    if xi <= 0:
        raise ValueError("xi must be > 0")
    sqxi = math.sqrt(xi)
    R_star = max(10.0, 8.0 / sqxi)
    window = R_star * (1.0 + 0.03 * np.arange(6))
    pu, pdu = _phi_eval(d, xi, window)
    f, df = _jost_eval(d, xi, window)
    psi = xi ** (-0.25) * f
    dpsi = xi ** (-0.25) * df
    wr = pu * dpsi - pdu * psi
    mean = np.mean(wr)
    spread = float(np.max(np.abs(wr - mean)) / abs(mean))
    if spread > gate:
        raise MatchingFailure(
            f"Wronskian varies by {spread:.3e} (rel) across window at xi={xi}"
        )
    a = -1j * mean
    rho = 1.0 / (math.pi * abs(a) ** 2)
    return complex(a), float(rho)


# ---------------------------------------------------------------------------
# discrete spectrum
# ---------------------------------------------------------------------------


def _decay_series_coeffs(d: int, kappa: float, n_terms: int = 6):
    """1/R coefficients of the decaying solution e^{-kappa R} h(R) at infinity.

    h'' - 2 kappa h' - V h = 0 with V = c2/R^2 + c4/R^4 + c6/R^6 + ...
    """
    k = _kd(d)
    p = (d + 2) / (d - 2)
    cm = {2: _inv_square_coef(d), 4: -p * k * k, 6: 2 * p * k**3, 8: -3 * p * k**4}
    h = [1.0] + [0.0] * n_terms
    for j in range(n_terms):
        s = j * (j + 1) * h[j]
        for m, c in cm.items():
            if 0 <= j + 2 - m <= j:
                s -= c * h[j + 2 - m]
        h[j + 1] = s / (2.0 * kappa * (j + 1))
    return h


def _decay_eval(d: int, xi: float, R_eval: np.ndarray):
    """Decaying solution (u, u') at sorted radii for xi < 0, normalized
    to e^{-kappa R} at infinity (up to an inverse-power series)."""
    kappa = math.sqrt(-xi)
    R_eval = np.asarray(R_eval, dtype=float)
    R_far = max(40.0, 30.0 / kappa, 1.5 * R_eval[-1])
    h = _decay_series_coeffs(d, kappa)
    hv = sum(c * R_far ** (-j) for j, c in enumerate(h))
    hd = sum(-j * c * R_far ** (-j - 1) for j, c in enumerate(h))
    scale = math.exp(-kappa * R_far)
    y0 = [scale * hv, scale * (hd - kappa * hv)]

    def rhs(r, y):
        return [y[1], (float(_V_value(d, r)) - xi) * y[0]]

    sol = solve_ivp(
        rhs,
        (R_far, float(R_eval[0])),
        y0,
        method="DOP853",
        t_eval=R_eval[::-1],
        rtol=1e-12,
        atol=1e-300,
    )
    if not sol.success:
        raise RuntimeError(f"inward integration failed: {sol.message}")
    return sol.y[0][::-1], sol.y[1][::-1]


def _matching_wronskian(d: int, xi: float, R_m: float = 4.0) -> float:
    Rm = np.array([R_m])
    pu, pdu = _phi_eval(d, xi, Rm)
    uu, udu = _decay_eval(d, xi, Rm)
    return float(pu[0] * udu[0] - pdu[0] * uu[0])


def ground_eigenvalue(d: int, xi_lo: float = -20.0, xi_hi: float = -1e-3) -> float:
    """Negative eigenvalue located by a sign change of the matching Wronskian."""
    _check_dim(d)
    grid = -np.geomspace(-xi_lo, -xi_hi, 40)
    vals = [_matching_wronskian(d, x) for x in grid]
    for i in range(len(grid) - 1):
        if vals[i] == 0.0:
            return float(grid[i])
        if vals[i] * vals[i + 1] < 0:
            return float(
                brentq(lambda x: _matching_wronskian(d, x), grid[i], grid[i + 1],
                       xtol=1e-12, rtol=1e-12)
            )
    raise RuntimeError("no sign change of the matching Wronskian in the bracket")


def eigenfunction_samples(d: int, xi_d: float, R: np.ndarray, R_match: float = 4.0):
    """Eigenfunction at sorted radii: series/continuation below R_match,
    the decaying branch (scaled to match) above."""
    R = np.asarray(R, dtype=float)
    lo = R[R <= R_match]
    hi = R[R > R_match]
    Rm = np.array([R_match])
    pm, _ = _phi_eval(d, xi_d, Rm)
    um, _ = _decay_eval(d, xi_d, Rm)
    scale = pm[0] / um[0]
    out = np.empty_like(R)
    if lo.size:
        out[: lo.size], _ = _phi_eval(d, xi_d, lo)
    if hi.size:
        out[lo.size:] = scale * _decay_eval(d, xi_d, hi)[0]
    return out


# ---------------------------------------------------------------------------
# the kernel F(xi, eta) and the transference kernel
# ---------------------------------------------------------------------------

_GL12 = np.polynomial.legendre.leggauss(12)


def _f_grid(d: int, xi: float, eta: float, R_max: float):
    """Composite GL-12 nodes/weights on (0, R_max] resolving both the
    potential scale and the faster of the two oscillations."""
    osc = max(1.0, math.sqrt(abs(xi)), math.sqrt(abs(eta)))
    edges = [0.0]
    R = 0.0
    while R < R_max:
        step = min(0.3 * (1.0 + R / 6.0), 0.45 / osc)
        R = min(R + step, R_max)
        edges.append(R)
    edges = np.asarray(edges)
    t, w = _GL12
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def F_kernel(d: int, xi: float, eta: float, tol: float = 1e-7,
              separation: float = 0.25) -> float:
    """F(xi, eta) = <W0 phi(., xi), phi(., eta)>.

    Plain quadrature for xi + eta < 1 or nearly coincident arguments
    (symmetric in the two arguments by construction); for separated
    arguments with xi + eta >= 1 the once-integrated-by-parts form
        (eta - xi) F = -<(2 W0' d/dR + W0'') phi(xi), phi(eta)>,
    from [L, W0] = -(2 W0' d/dR + W0''), gains an extra power of decay
    before truncation.
    """
    _check_dim(d)
    if xi < 0 or eta < 0:
        raise ValueError("xi, eta must be >= 0")
    lo, hi = (xi, eta) if xi <= eta else (eta, xi)
    use_ibp = (lo + hi >= 1.0) and (math.sqrt(hi) - math.sqrt(lo) >= separation)
    c_w = 2.0 * d * d * (d * d - 4.0)
    if use_ibp:
        R_max = (6.0 * c_w / tol) ** 0.25
    else:
        R_max = (2.0 * c_w / (3.0 * tol)) ** (1.0 / 3.0)
    nodes, weights = _f_grid(d, lo, hi, R_max)
    u_lo, du_lo = _phi_eval(d, lo, nodes)
    u_hi, _ = _phi_eval(d, hi, nodes) if hi != lo else (u_lo, du_lo)
    amp = float(np.max(np.abs(u_lo[-24:])) * np.max(np.abs(u_hi[-24:])))
    if use_ibp:
        w0 = w0_potential(d, nodes)
        integrand = (2.0 * w0.u_R * du_lo + w0.u_RR * u_lo) * u_hi
        tail = 10.0 * c_w / R_max**4 * amp * (1.0 + math.sqrt(hi))
        val = -float(np.sum(weights * integrand)) / (hi - lo)
        tail /= abs(hi - lo)
    else:
        w0 = w0_potential(d, nodes)
        integrand = w0.u * u_lo * u_hi
        tail = c_w / R_max**3 * amp
        val = float(np.sum(weights * integrand))
    if tail > 20.0 * tol:
        raise QuadratureFailure(
            f"truncation tail estimate {tail:.3e} exceeds budget at "
            f"(xi, eta) = ({xi}, {eta})"
        )
    return val


def transference_kernel(d: int, eta: float, xi: float, h_min: float = 1e-4) -> float:
    """Off-diagonal kernel rho(xi) F(xi, eta) / (eta - xi).

    Within |eta - xi| < h_min * max(1, |xi|) the removable finite part
    rho(xi) dF/deta along the diagonal is returned (the delta and
    principal-value pieces belong to the caller).
    """
    _check_dim(d)
    _, rho = spectral_density(d, xi)
    if abs(eta - xi) >= h_min * max(1.0, abs(xi)):
        return rho * F_kernel(d, xi, eta) / (eta - xi)
    m = 0.5 * (xi + eta)
    h = 0.005 * max(m, 0.05)
    # Richardson-extrapolated central difference of F in its second slot
    d1 = (F_kernel(d, m, m + h) - F_kernel(d, m, m - h)) / (2 * h)
    d2 = (F_kernel(d, m, m + h / 2) - F_kernel(d, m, m - h / 2)) / h
    return rho * (4.0 * d2 - d1) / 3.0


# ---------------------------------------------------------------------------
# Parseval check
# ---------------------------------------------------------------------------


def _bump(R):
    """Smooth compactly supported test function on (1, 5)."""
    R = np.asarray(R, dtype=float)
    s = (R - 3.0) / 2.0
    out = np.zeros_like(R)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def _fourier_coeff(d: int, xi: float, nodes: np.ndarray, weights: np.ndarray,
                   fvals: np.ndarray) -> float:
    u, _ = _phi_eval(d, xi, nodes)
    return float(np.sum(weights * u * fvals))


def parseval_defect(d: int, n_sigma: int = 140, sigma_max: float = 9.0) -> dict:
    """Relative mismatch of ||f||^2 against its spectral-side decomposition
    for a smooth bump supported in (1, 5).

    Returns a dict with the physical norm, the continuous and discrete
    contributions, and the relative defect.
    """
    _check_dim(d)
    # physical side
    t, w = _GL12
    edges = np.linspace(1.0, 5.0, 41)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    fvals = _bump(nodes)
    norm2 = float(np.sum(weights * fvals**2))

    # continuous part, integrated in sigma = sqrt(xi)
    sigma = np.linspace(1e-3, sigma_max, n_sigma)
    dens = np.empty_like(sigma)
    for i, s in enumerate(sigma):
        xi = s * s
        fh = _fourier_coeff(d, xi, nodes, weights, fvals)
        _, rho = spectral_density(d, xi)
        dens[i] = fh * fh * rho * 2.0 * s
    from scipy.integrate import simpson

    cont = float(simpson(dens, x=sigma))
    # small-xi tail below the first sigma node
    fh0 = _fourier_coeff(d, sigma[0] ** 2, nodes, weights, fvals)
    _, rho0 = spectral_density(d, sigma[0] ** 2)
    if d == 5:
        # rho ~ c xi^{-1/2}: integral_0^{xi_0} = 2 c sqrt(xi_0)
        tail = fh0 * fh0 * rho0 * sigma[0] * 2.0 * sigma[0]
    else:
        # rho ~ A/(xi log^2 xi): integral_0^{xi_0} = A / |log xi_0|
        xi0 = sigma[0] ** 2
        A = rho0 * xi0 * math.log(xi0) ** 2
        tail = fh0 * fh0 * A / abs(math.log(xi0))
    cont += tail

    # discrete part
    xi_d = ground_eigenvalue(d)
    Rg = np.geomspace(1e-3, 60.0, 4000)
    eig = eigenfunction_samples(d, xi_d, Rg)
    from scipy.integrate import simpson as _simp

    eig_norm2 = float(_simp(eig**2, x=Rg))
    u_eig = eigenfunction_samples(d, xi_d, nodes)
    fh_d = float(np.sum(weights * u_eig * fvals))
    discrete = fh_d * fh_d / eig_norm2
    if d == 5:
        phi_vals = phi0(d, nodes).u
        fh_0 = float(np.sum(weights * phi_vals * fvals))
        Rg2 = np.geomspace(1e-3, 1e5, 6000)
        p2 = phi0(d, Rg2).u ** 2
        phi_norm2 = float(_simp(p2, x=Rg2)) + 1.0 / Rg2[-1]
        discrete += fh_0 * fh_0 / phi_norm2

    spectral_side = cont + discrete
    return {
        "norm2": norm2,
        "continuous": cont,
        "discrete": discrete,
        "xi_d": xi_d,
        "defect": abs(spectral_side - norm2) / norm2,
    }


# ---------------------------------------------------------------------------
# assembled table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralTable:
    """Sampled spectral data: density, scattering coefficient, and
    eigenfunction values on an (R, xi) grid."""

    d: int
    xi_nodes: np.ndarray
    rho: np.ndarray
    a_coef: np.ndarray
    R_nodes: np.ndarray
    phi_samples: np.ndarray  # (len(R_nodes), len(xi_nodes))

    def __post_init__(self):
        xi = np.asarray(self.xi_nodes, dtype=float)
        if xi.ndim != 1 or np.any(xi <= 0) or np.any(np.diff(xi) <= 0):
            raise ValueError("xi_nodes must be sorted positive reals")
        a = np.asarray(self.a_coef)
        if np.any(a == 0):
            raise ValueError("a(xi) must be non-zero on all nodes")
        rho = np.asarray(self.rho, dtype=float)
        if np.any(rho <= 0):
            raise ValueError("rho must be positive")
        if not np.allclose(rho * math.pi * np.abs(a) ** 2, 1.0, rtol=1e-12, atol=0):
            raise ValueError("rho and a violate rho = 1/(pi |a|^2)")
        if np.asarray(self.phi_samples).shape != (len(self.R_nodes), len(xi)):
            raise ValueError("phi_samples shape mismatch")


def build_spectral_table(d: int, xi_nodes=None, R_nodes=None) -> SpectralTable:
    """Assemble rho, a, and phi samples on log-spaced nodes."""
    _check_dim(d)
    if xi_nodes is None:
        xi_nodes = np.geomspace(1e-3, 1e3, 25)
    if R_nodes is None:
        R_nodes = np.geomspace(0.1, 50.0, 40)
    xi_nodes = np.asarray(xi_nodes, dtype=float)
    R_nodes = np.asarray(R_nodes, dtype=float)
    a_arr = np.empty(len(xi_nodes), dtype=complex)
    rho_arr = np.empty(len(xi_nodes))
    phi_arr = np.empty((len(R_nodes), len(xi_nodes)))
    for j, xi in enumerate(xi_nodes):
        a_arr[j], rho_arr[j] = spectral_density(d, float(xi))
        phi_arr[:, j] = _phi_eval(d, float(xi), R_nodes)[0]
    return SpectralTable(d, xi_nodes, rho_arr, a_arr, R_nodes, phi_arr)
