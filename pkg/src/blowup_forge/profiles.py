"""Closed-form blow-up profile objects.

The approximate blow-up solution is built on the ground state
``W(R) = (1 + R^2/(d(d-2)))^{-(d-2)/2}`` rescaled by ``lambda(t) = t^{-1-nu}``:
``u0 = lambda^{(d-2)/2} W(R)``, ``R = r lambda``. This module provides

* the constants bundle :class:`BlowupConstants`,
* the ground state and the zeroth residual ``t^2 e0 = lambda^{(d-2)/2} E0(R)``
  (closed form for d=5, exact jet assembly for both dimensions),
* the first correction profile ``V1`` solving ``L V1 = E0`` with
  ``L = -d^2/dR^2 - ((d-1)/R) d/dR - p W^{p-1}`` and zero Cauchy data at the
  origin (printed closed form in d=5; series + continuation + far-field
  matching in d=4),
* the a-variable profile ``H(z)`` built from the Gauss hypergeometric sum,
* smooth transition (cut-off) functions and the outside-cone extension.

Derivative channels are carried everywhere as jets; no finite differencing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .series_core import DJet, HypParams, Jet2, LogPowerSeries, hyp2f1
from . import frobenius as frob

__all__ = [
    "BlowupConstants",
    "ground_state",
    "w_derivs",
    "u0_e0",
    "e0_closed_form",
    "e0_jets",
    "v1",
    "v1_closed_form",
    "v1_taylor_coeffs",
    "capital_H",
    "boundary_exponent",
    "far_field_ode",
    "chi_transition",
    "chi_jet",
    "apply_linearized",
    "extend_outside_cone",
    "OriginSingular",
]


class OriginSingular(Exception):
    """Linearized operator applied at R=0 without an even-expansion jet."""


@dataclass(frozen=True)
class BlowupConstants:
    """Dimension, blow-up rate, and the derived constants used throughout.

    ``lambda(t) = t^{-1-nu}``; ``s`` is the exponent of the first correction's
    prefactor ``lambda^{(d-2)/2} (t lambda)^{-2} = t^s``; (alpha, beta, gamma)
    are the hypergeometric parameters of the a-variable step.
    """

    d: int
    nu: float
    t0: float = 0.25
    N0: int = 6
    eps: float = 0.1

    def __post_init__(self):
        if self.d not in (4, 5):
            raise ValueError("dimension must be 4 or 5")
        if self.d == 5 and not self.nu > 3:
            raise ValueError("d=5 requires nu > 3")
        if self.d == 4 and not self.nu > 1:
            raise ValueError("d=4 requires nu > 1")
        if not (0 < self.eps < 1 / 3):
            raise ValueError("eps must lie in (0, 1/3)")

    @property
    def p(self) -> float:
        return (self.d + 2) / (self.d - 2)

    @property
    def c_exp(self) -> float:
        """Scaling exponent (d-2)/2 of the profile prefactor."""
        return (self.d - 2) / 2

    @property
    def s(self) -> float:
        return self.c_exp * (-1 - self.nu) + 2 * self.nu

    @property
    def C1(self) -> float:
        if self.d != 5:
            raise ValueError("printed C1 constant exists only for d = 5")
        return 105.0 / 128.0 * math.pi * self.nu * (1 + self.nu)

    @property
    def C2(self) -> float:
        return 0.25 * (self.nu - 3) * (self.nu - 5) * self.C1

    @property
    def hyp(self) -> HypParams:
        s = self.s
        return HypParams(-s / 2, (1 - s) / 2, self.d / 2)

    def lam(self, t):
        return t ** (-1.0 - self.nu)

    def tlam(self, t):
        return t ** (-self.nu)


# ---------------------------------------------------------------------------
# Ground state and zeroth residual
# ---------------------------------------------------------------------------


def w_derivs(d: int, R, n: int = 2):
    """Derivatives [W, W', ..., W^(n)] of the ground state at R.

    Uses the exact recursion obtained from (k + R^2) W' = -2 m R W with
    k = d(d-2), m = (d-2)/2: every entry is closed-form accurate.
    """
    R = np.asarray(R, dtype=np.result_type(R, float))
    k = d * (d - 2)
    m = (d - 2) / 2
    out = [np.power(1.0 + R * R / k, -m)]
    den = k + R * R
    out.append(-2 * m * R * out[0] / den)
    for j in range(1, n):
        nxt = (-(2 * j + 2 * m) * R * out[j] - (j * (j - 1) + 2 * m * j) * out[j - 1]) / den
        out.append(nxt)
    return out


def ground_state(d: int, r) -> Jet2:
    """Ground-state jet (t channels zero)."""
    W, W1, W2 = w_derivs(d, r, 2)
    z = np.zeros_like(np.asarray(r, dtype=float))
    return Jet2(W, W1, W2, z, z)


def e0_jets(c: BlowupConstants, R):
    """(E0, E0', E0'') where t^2 e0 = lambda^{(d-2)/2} E0(R).

    Assembled from the identity t^2 e0 = -t^2 d^2/dt^2 [lambda^{c} W(r lambda)]
    (the elliptic part cancels exactly since W is a static solution), which
    reduces to ground-state derivatives only.
    """
    nu, ce = c.nu, c.c_exp
    W = w_derivs(c.d, R, 4)
    R = np.asarray(R, dtype=np.result_type(R, float))
    # A^(i) = (ce + i) W^(i) + R W^(i+1);  B^(i) = R A^(i+1) + i A^(i)
    A = [(ce + i) * W[i] + R * W[i + 1] for i in range(4)]
    B = [R * A[i + 1] + i * A[i] for i in range(3)]
    k1 = ce * (1 + nu) + 1
    return tuple(-(1 + nu) * (k1 * A[i] + (1 + nu) * B[i]) for i in range(3))


def e0_closed_form(nu: float, R):
    """Printed d=5 closed form of E0 (used as a cross-check oracle)."""
    R = np.asarray(R, dtype=np.result_type(R, float))
    num = 225.0 * (3 * nu + 5) + (3 * nu + 1) * R**4 - 210.0 * (nu + 1) * R**2
    return -45.0 * math.sqrt(15.0) * (nu + 1) * num / (4.0 * (R**2 + 15.0) ** 3.5)


def u0_e0(c: BlowupConstants, R, t):
    """Jets of u0 and of t^2 e0 at (R, t).

    Channel convention used across the package: ``u_R, u_RR`` are derivatives
    in R at fixed t; ``u_t, u_tt`` are derivatives in t at fixed r (so the
    rescaling chain rule through R = r lambda(t) is already applied).
    """
    nu, ce = c.nu, c.c_exp
    lam = c.lam(t)
    W, W1, W2 = w_derivs(c.d, R, 2)
    R = np.asarray(R, dtype=np.result_type(R, float))
    lc = lam**ce
    A = ce * W + R * W1
    A1 = (ce + 1) * W1 + R * W2
    u0 = Jet2(
        lc * W,
        lc * W1,
        lc * W2,
        -(1 + nu) * lc * A / t,
        (1 + nu) * lc / t**2 * ((ce * (1 + nu) + 1) * A + (1 + nu) * R * A1),
    )
    E0, E1, E2 = e0_jets(c, R)
    # t^2 e0 = lam^ce E0(R) is separable; t channels follow from the power law.
    e = _separable_jet(c, lc, E0, E1, E2, R, t, b_power=0)
    return u0, e


def _separable_jet(c: BlowupConstants, pref, F0, F1, F2, R, t, b_power: int):
    """Jet of pref(t) * F(R) with pref = lam^{c_exp} (t lam)^{-2 b_power}.

    The t channels use t d/dt lam^a = -a(1+nu) lam^a, t d/dt (t lam) =
    -nu (t lam), and t d/dt R|_r = -(1+nu) R.
    """
    nu = c.nu
    a_exp = -c.c_exp * (1 + nu) + 2 * b_power * nu  # t-exponent of the prefactor
    # value and R-derivatives
    g0 = pref * F0
    g1 = pref * F1
    g2 = pref * F2
    # t (total) derivative: t d/dt [pref F(R)] = a_exp pref F - (1+nu) pref R F'
    tF = a_exp * F0 - (1 + nu) * R * F1
    # second: t d/dt of (a_exp F - (1+nu) R F') then the (t d/dt)^2 -> t^2 d/dt^2
    t2F = a_exp * tF - (1 + nu) * R * (a_exp * F1 - (1 + nu) * (F1 + R * F2))
    u_t = pref * tF / t
    u_tt = pref * (t2F - tF) / t**2  # t^2 u_tt = (t d/dt)^2 u - t d/dt u
    return Jet2(g0, g1, g2, u_t, u_tt)


# ---------------------------------------------------------------------------
# V1
# ---------------------------------------------------------------------------


def v1_closed_form(nu: float, R):
    """Printed d=5 closed form of V1 with jets, evaluated in extended
    precision (the formula cancels heavily near R = 0 and at large R)."""
    Rl = np.asarray(R, dtype=np.longdouble)
    x = DJet.variable(Rl)
    s15 = np.sqrt(np.longdouble(15.0))
    x2 = x * x
    # arccoth(1 + 30/R^2) = (1/2) log(1 + R^2/15)
    acoth = (x2 / 15.0).log1p() * 0.5
    atan = (x / s15).arctan()
    t1 = (x2 - 15.0) * x2 * x2 * x * (-360.0)
    t2 = (x2 - 15.0) * x2 * x * acoth * (-100800.0 * nu)
    t3 = (
        ((x2 * 13.0 - 1397.0) * x2 + 6195.0) * x2 + 4725.0
    ) * x * (-75.0 * nu)
    poly = (((x2 + 300.0) * x2 - 20250.0) * x2 + 67500.0) * x2 + 50625.0
    t4 = poly * atan * (7.0 * s15 * nu)
    num = (t1 + t2 + t3 + t4) * (s15 * (nu + 1.0))
    den = x2 * x * ((x2 + 15.0) ** 2.5) * 64.0
    out = num / den
    return Jet2(
        np.asarray(out.f, dtype=float),
        np.asarray(out.d, dtype=float),
        np.asarray(out.dd, dtype=float),
        0.0,
        0.0,
    )


@lru_cache(maxsize=32)
def v1_taylor_coeffs(d: int, nu: float, n_terms: int = 48) -> np.ndarray:
    """Even Taylor coefficients a_n of V1 = sum a_n R^{2n} (a_0 = 0).

    Recursion in u = R^2 for -4u V_uu - 2d V_u - g(u) V = E0(u) with
    g = p (1 + u/k)^{-2}; the vanishing constant term pins the analytic
    solution uniquely.
    """
    k = d * (d - 2)
    p = (d + 2) / (d - 2)
    N = n_terms
    n_arr = np.arange(N + 2, dtype=np.longdouble)
    g = p * (n_arr[: N + 1] + 1) * (-1.0 / k) ** n_arr[: N + 1]
    E = _e0_u_series(d, nu, N + 1)
    a = np.zeros(N + 2, dtype=np.longdouble)
    a[0] = 0.0
    for n in range(N + 1):
        conv = np.dot(g[: n + 1][::-1], a[: n + 1])
        a[n + 1] = -(E[n] + conv) / (2.0 * (n + 1) * (2 * n + d))
    return a


def _e0_u_series(d: int, nu: float, N: int) -> np.ndarray:
    """Taylor coefficients of E0 as a function of u = R^2."""
    k = np.longdouble(d * (d - 2))
    m = np.longdouble((d - 2) / 2)
    ce = m
    # W(u) = (1 + u/k)^{-m}
    n = np.arange(N + 1, dtype=np.longdouble)
    W = np.ones(N + 1, dtype=np.longdouble)
    for i in range(1, N + 1):
        W[i] = W[i - 1] * (-(m + i - 1)) / i / k
    # operator D = R d/dR = 2 u d/du : (D h)_n = 2 n h_n
    def D(h):
        return 2.0 * n * h

    A = ce * W + D(W)
    k1 = ce * (1 + nu) + 1
    E = -(1 + nu) * (k1 * A + (1 + nu) * D(A))
    return E


def _v1_taylor_jet(d: int, nu: float, R) -> Jet2:
    a = v1_taylor_coeffs(d, nu)
    R = np.asarray(R, dtype=np.longdouble)
    u = R * R
    n = np.arange(a.shape[0], dtype=np.longdouble)
    # V = sum a_n u^n, V_R = 2R sum n a_n u^{n-1}, V_RR = V'' in R
    V = np.polynomial.polynomial.polyval(u, np.asarray(a, dtype=np.longdouble))
    dVdu = np.polynomial.polynomial.polyval(u, np.asarray(a[1:] * n[1:], dtype=np.longdouble))
    d2Vdu2 = np.polynomial.polynomial.polyval(
        u, np.asarray(a[2:] * n[2:] * (n[2:] - 1), dtype=np.longdouble)
    )
    V_R = 2.0 * R * dVdu
    V_RR = 2.0 * dVdu + 4.0 * u * d2Vdu2
    return Jet2(float64(V), float64(V_R), float64(V_RR), 0.0, 0.0)


def float64(x):
    return np.asarray(x, dtype=float)


_TAYLOR_SWITCH = 1e-2


class _V1d4:
    """d=4 first-correction profile: Taylor core, numeric mid-range,
    matched far-field log-power expansion."""

    R_SERIES = 1.8  # Taylor trusted below this radius (convergence radius sqrt(8))
    R_FAR = 40.0  # far-field expansion used beyond this radius
    ORDER_FAR = 40

    def __init__(self, nu: float):
        self.nu = nu
        d = 4
        # mid-range continuation of the Taylor solution
        jet0 = _v1_taylor_jet(d, nu, self.R_SERIES * 0.8)

        def rhs(R, u, du):
            W, _ = w_derivs(d, R, 1)[:2]
            p = 3.0
            E0 = e0_jets(BlowupConstants(4, nu), R)[0]
            return -(d - 1) / R * du - p * W ** (p - 1) * u - E0

        self._traj_out = frob.integrate_ode_numeric(
            rhs, self.R_SERIES * 0.8, (jet0.u, jet0.u_R), self.R_FAR * 1.5, tol=3e-13
        )
        self._far = self._build_far()

    def _build_far(self):
        """Far field: solve in z = 1/R as a regular-singular problem and match
        the two free constants to the continued solution."""
        d, nu = 4, self.nu
        N = self.ORDER_FAR
        ode, sigma, g = far_field_ode(d, nu, N)
        sysf = frob.fundamental_system(ode, order=N)
        wpart = frob.solve_inhomogeneous(ode, float(sigma - 2), g, j=0, order=N)
        # match constants A (on u1 = z^{d-2} h1) and B (on u2 = z^0 h2 + c log z u1)
        zm = 1.0 / self.R_FAR
        vals = []
        for z in (zm, zm * 1.25):
            Rz = 1.0 / z
            jet = self._traj_out(Rz)
            w0, w1d, _ = wpart.eval_with_derivatives(np.asarray([z]))
            h1v, h1d, _ = sysf.h1.eval_with_derivatives(np.asarray([z]))
            h2v, h2d, _ = sysf.h2.eval_with_derivatives(np.asarray([z]))
            r1 = sysf.r1.real
            u1v = z**r1 * h1v
            u1d = r1 * z ** (r1 - 1) * h1v + z**r1 * h1d
            cc = sysf.c.real
            u2v = h2v + cc * math.log(z) * u1v
            u2d = h2d + cc * (u1v / z + math.log(z) * u1d)
            # V1(R) = w(z): dV/dR = -z^2 dw/dz
            target_v = jet.u - w0[0]
            target_d = -jet.u_R / z**2 - w1d[0]
            vals.append((u1v[0], u2v[0], target_v, u1d[0], u2d[0], target_d))
        Mrows = []
        rhs = []
        for u1v, u2v, tv, u1d, u2d, td in vals:
            Mrows.append([u1v, u2v])
            rhs.append(tv)
            Mrows.append([u1d, u2d])
            rhs.append(td)
        AB, *_ = np.linalg.lstsq(np.asarray(Mrows), np.asarray(rhs), rcond=None)
        return (wpart, sysf, float(AB[0]), float(AB[1]))

    def far_eval(self, R):
        wpart, sysf, A, B = self._far
        z = 1.0 / np.asarray(R, dtype=float)
        w0, w1, w2 = wpart.eval_with_derivatives(z)
        h1v, h1d, h1dd = sysf.h1.eval_with_derivatives(z)
        h2v, h2d, h2dd = sysf.h2.eval_with_derivatives(z)
        r1 = sysf.r1.real
        cc = sysf.c.real
        lz = np.log(z)
        u1v = z**r1 * h1v
        u1d = r1 * z ** (r1 - 1) * h1v + z**r1 * h1d
        u1dd = (
            r1 * (r1 - 1) * z ** (r1 - 2) * h1v
            + 2 * r1 * z ** (r1 - 1) * h1d
            + z**r1 * h1dd
        )
        u2v = h2v + cc * lz * u1v
        u2d = h2d + cc * (u1v / z + lz * u1d)
        u2dd = h2dd + cc * (-u1v / z**2 + 2 * u1d / z + lz * u1dd)
        wv = w0 + A * u1v + B * u2v
        wd = w1 + A * u1d + B * u2d
        wdd = w2 + A * u1dd + B * u2dd
        # chain to R: V' = -z^2 w', V'' = z^4 w'' + 2 z^3 w'
        return Jet2(wv, -(z**2) * wd, z**4 * wdd + 2 * z**3 * wd, 0.0, 0.0)

    def __call__(self, R) -> Jet2:
        R = np.atleast_1d(np.asarray(R, dtype=float))
        u = np.empty_like(R)
        d1 = np.empty_like(R)
        d2 = np.empty_like(R)
        near = R <= self.R_SERIES
        far = R >= self.R_FAR
        mid = ~(near | far)
        if near.any():
            j = _v1_taylor_jet(4, self.nu, R[near])
            u[near], d1[near], d2[near] = j.u, j.u_R, j.u_RR
        if mid.any():
            for i in np.nonzero(mid)[0]:
                j = self._traj_out(R[i])
                u[i], d1[i], d2[i] = j.u, j.u_R, j.u_RR
        if far.any():
            j = self.far_eval(R[far])
            u[far], d1[far], d2[far] = j.u, j.u_R, j.u_RR
        return Jet2(u, d1, d2, 0.0, 0.0)


@lru_cache(maxsize=8)
def _v1d4_cached(nu: float) -> _V1d4:
    return _V1d4(nu)


def v1(c: BlowupConstants, R) -> Jet2:
    """First correction profile V1(R) with jets; v1(R,t) = lam^{c}(t lam)^{-2} V1."""
    R = np.atleast_1d(np.asarray(R, dtype=float))
    if c.d == 5:
        out_u = np.empty_like(R)
        out_1 = np.empty_like(R)
        out_2 = np.empty_like(R)
        small = R < _TAYLOR_SWITCH
        if small.any():
            j = _v1_taylor_jet(5, c.nu, R[small])
            out_u[small], out_1[small], out_2[small] = j.u, j.u_R, j.u_RR
        if (~small).any():
            j = v1_closed_form(c.nu, R[~small])
            out_u[~small], out_1[~small], out_2[~small] = j.u, j.u_R, j.u_RR
        return Jet2(out_u, out_1, out_2, 0.0, 0.0)
    return _v1d4_cached(c.nu)(R)


def far_field_ode(d: int, nu: float, N: int):
    """The V1 equation at infinity as a regular-singular problem in z = 1/R.

    Returns (ode, sigma, g): ``w(z) = V1(1/z)`` satisfies
    ``w'' + p(z)/z w' + q(z)/z^2 w = z^{sigma-4} h(z)`` with
    ``p = -(d-3)``, ``q = p_crit k^2 z^2 (1 + k z^2)^{-2}`` (k = d(d-2)) and
    the forcing series h from the zeroth residual's far expansion; ``g`` is the
    forcing packaged so that the operator maps the solution to
    ``z^{(sigma-2)-2} h``.
    """
    k = d * (d - 2)
    p = (d + 2) / (d - 2)
    q = np.zeros(N + 1)
    for i in range(0, N - 1, 2):
        q[i + 2] = p * k**2 * (i // 2 + 1) * (-float(k)) ** (i // 2)
    pser = LogPowerSeries(0.0, 0.0, np.array([[-(d - 3.0)] + [0.0] * N]), 1 / math.sqrt(k))
    qser = LogPowerSeries(0.0, 0.0, q[None, :], 1 / math.sqrt(k))
    ode = frob.ODESpec(pser, qser)
    sigma, h = _e0_far_series(d, nu, N)
    g = LogPowerSeries(0.0, 0.0, h[None, :], 1 / math.sqrt(k))
    return ode, sigma, g


def _e0_far_series(d: int, nu: float, N: int):
    """E0 at infinity: returns (sigma, h) with -z^{-4} E0(1/z) = z^{sigma-4} h(z),
    h analytic, h[0] != 0. Built from the ground-state far expansion."""
    k = d * (d - 2)
    m = (d - 2) / 2
    ce = m
    # W(1/z) = k^m z^{2m} (1 + k z^2)^{-m}
    coef = np.zeros(N + 1)
    acc = 1.0
    coef[0] = 1.0
    for i in range(1, N // 2 + 1):
        acc *= -(m + i - 1) / i * k
        coef[2 * i] = acc
    coef *= k**m
    alpha = 2 * m  # leading exponent

    def Dop(a_exp, h):
        # R d/dR = -z d/dz on z^{a} h(z): -> z^a (-a h - z h')
        nn = np.arange(h.shape[0])
        return -(a_exp + nn) * h

    A = ce * coef + Dop(alpha, coef)
    k1 = ce * (1 + nu) + 1
    E = -(1 + nu) * (k1 * A + (1 + nu) * Dop(alpha, A))
    # E0(1/z) = z^alpha E(z); strip leading zeros to find sigma
    idx = np.argmax(np.abs(E) > 1e-300)
    sigma = alpha + idx
    h = -E[idx:]
    h = np.concatenate([h, np.zeros(N + 1 - h.shape[0])])
    return sigma, h


# ---------------------------------------------------------------------------
# H(z), cut-offs, linearized operator, extension
# ---------------------------------------------------------------------------


def capital_H(c: BlowupConstants, z, tol: float = 1e-14):
    """H(z) = 4 C1 (F(alpha, beta; gamma; z) - 1) on [0, 1)."""
    hp = c.hyp
    zz = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.array([4.0 * c.C1 * (hyp2f1(hp, float(x), tol) - 1.0) for x in zz])
    return out if np.ndim(z) else float(out[0])


def boundary_exponent(c: BlowupConstants, u_lo: float = 1e-7, u_hi: float = 1e-5, n: int = 14):
    """Singular exponent of the a-variable profile at the cone boundary z = 1.

    The profile behaves like ``analytic + const (1-z)^{gamma-alpha-beta}``; the
    analytic part masks the singular power in a direct fit, so the profile is
    differentiated k = ceil(gamma-alpha-beta) times through the parameter
    shift F^(k) = ((alpha)_k (beta)_k / (gamma)_k) F(alpha+k, ...; z), after
    which the singular term dominates and log-log slope + k recovers the
    exponent. Returns ``inf`` when the series terminates below the needed
    degree (no singular part at all).
    """
    from .series_core import pochhammer

    hp = c.hyp
    gab = hp.gamma - hp.alpha - hp.beta
    k = int(math.ceil(gab))
    amp = pochhammer(hp.alpha, k) * pochhammer(hp.beta, k) / pochhammer(hp.gamma, k)
    if amp == 0.0:
        return math.inf
    hpk = HypParams(hp.alpha + k, hp.beta + k, hp.gamma + k)
    u = np.geomspace(u_lo, u_hi, n)
    vals = np.array([abs(amp) * abs(hyp2f1(hpk, float(1.0 - uu))) for uu in u])
    if np.any(vals == 0.0):
        return math.inf
    slope = np.polyfit(np.log(u), np.log(vals), 1)[0]
    return float(slope + k)


def _smooth_f(x):
    """e^{-1/x} for x > 0, 0 otherwise (vectorized, jet-friendly)."""
    x = np.asarray(x, dtype=float)
    pos = x > 0
    out = np.zeros_like(x)
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def chi_transition(a: float, x) -> np.ndarray:
    """Smooth ramp: 0 for x <= a, 1 for x >= 2a, monotone in between."""
    return chi_jet(a, x).f


def chi_jet(a: float, x) -> DJet:
    """Transition function with first and second derivatives in x.

    chi(s) = f(s)/(f(s) + f(1-s)) with f = e^{-1/s}, evaluated at
    s = (x - a)/a.
    """
    if a <= 0:
        raise ValueError("scale parameter must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    s = (x - a) / a
    val = np.zeros_like(x)
    d1 = np.zeros_like(x)
    d2 = np.zeros_like(x)
    inside = (s > 0) & (s < 1)
    val[s >= 1] = 1.0
    if inside.any():
        si = s[inside]
        sj = DJet.variable(si)
        f1 = (-1.0 / sj).exp()
        f2 = (-1.0 / (1.0 - sj)).exp()
        c = f1 / (f1 + f2)
        val[inside] = c.f
        d1[inside] = c.d / a
        d2[inside] = c.dd / a**2
    return DJet(val, d1, d2)


def apply_linearized(c: BlowupConstants, jet: Jet2, R):
    """L u = -u_RR - ((d-1)/R) u_R - p W^{p-1} u from jet channels.

    At R = 0 the first-derivative term is replaced by its even-expansion
    limit (d-1) u_RR; a jet with u_R != 0 at the origin is rejected.
    """
    R = np.atleast_1d(np.asarray(R, dtype=float))
    u, u_R, u_RR = np.atleast_1d(jet.u), np.atleast_1d(jet.u_R), np.atleast_1d(jet.u_RR)
    W = w_derivs(c.d, R, 0)[0]
    pot = c.p * W ** (c.p - 1)
    out = np.empty_like(R)
    orig = R < 1e-13
    if orig.any():
        if np.any(np.abs(u_R[orig]) > 1e-10 * (1 + np.abs(u[orig]))):
            raise OriginSingular("jet at R=0 lacks the even structure")
        out[orig] = -c.d * u_RR[orig] - pot[orig] * u[orig]
    reg = ~orig
    out[reg] = -u_RR[reg] - (c.d - 1) / R[reg] * u_R[reg] - pot[reg] * u[reg]
    return out


# --- outside-cone extension -------------------------------------------------


@lru_cache(maxsize=4)
def _extension_kernel(n_vanishing: int = 4):
    """Kernel phi(y) = (sum_j c_j y^j) e^{-(y-1)^2} on [1, inf) with unit mass
    and vanishing moments int y^n phi dy = 0 for n = 1..n_vanishing (the
    super-exponential tail keeps clamped far samples from polluting the
    reflection)."""
    from scipy.integrate import quad

    M = n_vanishing + 1
    mom = lambda q: quad(lambda y: y**q * math.exp(-((y - 1.0) ** 2)), 1.0, 12.0)[0]
    Mat = np.array([[mom(nn + j) for j in range(M)] for nn in range(M)])
    rhs = np.zeros(M)
    rhs[0] = 1.0
    return np.linalg.solve(Mat, rhs)


def _phi_kernel(y):
    cj = _extension_kernel()
    return np.polynomial.polynomial.polyval(y, cj) * np.exp(-((y - 1.0) ** 2))


def _smooth_ramp(x, lo: float, hi: float):
    """Smooth, 0 for x <= lo, 1 for x >= hi."""
    s = (np.asarray(x, dtype=float) - lo) / (hi - lo)
    f1 = _smooth_f(s)
    f2 = _smooth_f(1.0 - s)
    return f1 / (f1 + f2 + 1e-300)


def extend_outside_cone(a_nodes, values, a_out, support_edge: float = 2.0):
    """Reflection extension of samples on a in [0,1] to a in [0, 2).

    Interior values are returned unchanged. For a > 1 the extension averages
    reflected interior samples f(1 - (a-1) y) against a kernel of unit mass
    and vanishing higher moments; arguments that would leave the sampled
    interval are clamped (so constants extend exactly and the Hoelder class
    is preserved). A smooth support factor vanishes at ``support_edge``.
    """
    a_nodes = np.asarray(a_nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    a_out = np.atleast_1d(np.asarray(a_out, dtype=float))
    from scipy.interpolate import CubicSpline

    spl = CubicSpline(a_nodes, values)

    ynodes, yweights = np.polynomial.legendre.leggauss(24)
    out = np.empty_like(a_out)
    for i, a in enumerate(a_out):
        if a <= a_nodes[-1]:
            out[i] = spl(a) if a >= a_nodes[0] else values[0]
            continue
        if a >= support_edge:
            out[i] = 0.0
            continue
        da = a - 1.0
        acc = 0.0
        for lo, hi in ((1.0, 4.0), (4.0, 12.0), (12.0, 40.0)):
            yy = 0.5 * (hi - lo) * ynodes + 0.5 * (hi + lo)
            ww = 0.5 * (hi - lo) * yweights
            arg = np.clip(1.0 - da * yy, a_nodes[0], a_nodes[-1])
            acc += np.sum(ww * _phi_kernel(yy) * spl(arg))
        # smooth support factor: 1 until 85% of the edge, 0 at the edge
        s_on = 0.85 * support_edge
        sup = 1.0 - _smooth_ramp(a, s_on, support_edge)
        out[i] = acc * sup
    return out
