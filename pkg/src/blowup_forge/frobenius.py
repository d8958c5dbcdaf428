"""Regular-singular-point ODE machinery.

Everything here works with second-order equations

    u''(z) + p(z) u'(z) + q(z) u(z) = 0,      p = P(z)/z,  q = Q(z)/z^2

around a singular center (z is the offset), with P, Q analytic. Provides
indicial roots, Frobenius fundamental systems (including the resonant
log-coupled cases), a particular-solution solver for log-power forcing
z^{beta-2} g(z) log(z)^j, a high-order adaptive numeric integrator used as an
independent oracle / mid-range continuation, and variation of parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .series_core import Jet2, LogPowerSeries, SeriesError

__all__ = [
    "ODESpec",
    "FrobeniusSystem",
    "RecursionBreakdown",
    "ResonanceOverflow",
    "StepFailure",
    "indicial_roots",
    "fundamental_system",
    "solve_inhomogeneous",
    "integrate_ode_numeric",
    "variation_of_parameters",
]

_RES_FLOOR = 1e-12  # denominator floor for resonance detection
_INT_TOL = 1e-9  # nearest-integer tolerance for root gaps


class RecursionBreakdown(SeriesError):
    pass


class ResonanceOverflow(SeriesError):
    pass


class StepFailure(SeriesError):
    pass


@dataclass(frozen=True)
class ODESpec:
    """Coefficient data: p_series = z*p(z), q_series = z^2*q(z), analytic."""

    p_series: LogPowerSeries
    q_series: LogPowerSeries
    center: complex = 0.0

    def __post_init__(self):
        if self.p_series.log_degree or self.q_series.log_degree:
            raise SeriesError("coefficient series must be purely analytic")
        if self.p_series.beta or self.q_series.beta:
            raise SeriesError("coefficient series must have offset exponent 0")

    @property
    def p0(self):
        return complex(self.p_series.coeffs[0, 0])

    @property
    def q0(self):
        return complex(self.q_series.coeffs[0, 0])

    def p_at(self, z):
        w = z - self.center
        return self.p_series(z) / w

    def q_at(self, z):
        w = z - self.center
        return self.q_series(z) / w**2


@dataclass(frozen=True)
class FrobeniusSystem:
    r1: complex
    r2: complex
    h1: LogPowerSeries
    h2: LogPowerSeries
    c: complex  # log-coupling: u2 = z^r2 h2 + c log(z) u1
    wronskian_series: LogPowerSeries
    ode: ODESpec = None

    def u1(self, z):
        w = np.asarray(z) - self.h1.center
        return w**self.r1 * self.h1(z)

    def u2(self, z):
        w = np.asarray(z) - self.h2.center
        out = w**self.r2 * self.h2(z)
        if self.c != 0:
            out = out + self.c * np.log(w) * self.u1(z)
        return out


def indicial_roots(ode: ODESpec):
    """Roots of x^2 + (p0 - 1) x + q0, sorted by descending real part."""
    p0, q0 = ode.p0, ode.q0
    disc = np.sqrt(complex((p0 - 1) ** 2 - 4 * q0))
    r_a = (-(p0 - 1) + disc) / 2
    r_b = (-(p0 - 1) - disc) / 2
    if r_a.real < r_b.real:
        r_a, r_b = r_b, r_a
    return _tidy(r_a), _tidy(r_b)


def _tidy(x: complex) -> complex:
    if abs(x.imag) < 1e-14:
        x = complex(x.real, 0.0)
    return x


def _pq_arrays(ode: ODESpec, order: int):
    P = np.zeros(order + 1, dtype=complex)
    Q = np.zeros(order + 1, dtype=complex)
    pc = ode.p_series.coeffs[0]
    qc = ode.q_series.coeffs[0]
    P[: min(order + 1, pc.shape[0])] = pc[: order + 1]
    Q[: min(order + 1, qc.shape[0])] = qc[: order + 1]
    return P, Q


def _homog_coeff_recursion(ode: ODESpec, r: complex, order: int):
    """Analytic factor h (h[0]=1) of the solution z^r h(z), no log term.

    Works whenever I(r+n) = n(n + r1 - r2) stays away from zero for n >= 1.
    """
    P, Q = _pq_arrays(ode, order)
    p0, q0 = P[0], Q[0]

    def I(x):
        return x * (x - 1) + p0 * x + q0

    h = np.zeros(order + 1, dtype=complex)
    h[0] = 1.0
    for n in range(1, order + 1):
        conv = 0.0
        for m in range(n):
            conv += ((r + m) * P[n - m] + Q[n - m]) * h[m]
        den = I(r + n)
        if abs(den) < _RES_FLOOR:
            raise RecursionBreakdown(f"resonant denominator at order {n}")
        h[n] = -conv / den
    return h


def _log_source_coeff(P, h1, r1, n):
    """Coefficient of z^{r1+n-2} in L[log(z) u1] for u1 = z^{r1} h1."""
    # L[log u] = log L[u] + 2u'/z + (p - 1/z) u ; with L[u1] = 0 the log part
    # drops and the rest is analytic-in-z times z^{r1-2}.
    out = (2 * (r1 + n) - 1) * h1[n]
    for m in range(n + 1):
        out += P[n - m] * h1[m]
    return out


def fundamental_system(ode: ODESpec, order: int = 40) -> FrobeniusSystem:
    """Fundamental pair u1 = z^r1 h1, u2 = z^r2 h2 + c log(z) u1."""
    if order < 2:
        raise ValueError("order must be >= 2")
    r1, r2 = indicial_roots(ode)
    P, Q = _pq_arrays(ode, order)
    p0 = P[0]

    h1 = _homog_coeff_recursion(ode, r1, order)

    gap = r1 - r2
    is_int_gap = abs(gap.imag) < _INT_TOL and abs(gap.real - round(gap.real)) < _INT_TOL
    c = 0.0 + 0.0j
    if not is_int_gap:
        h2 = _homog_coeff_recursion(ode, r2, order)
    else:
        g = int(round(gap.real))

        def I(x):
            return x * (x - 1) + p0 * x + Q[0]

        h2 = np.zeros(order + 1, dtype=complex)
        h2[0] = 1.0
        if g == 0:
            # Double root: the log term is mandatory; normalize c = 1.
            c = 1.0 + 0.0j
            for n in range(1, order + 1):
                conv = 0.0
                for m in range(n):
                    conv += ((r2 + m) * P[n - m] + Q[n - m]) * h2[m]
                conv += c * _log_source_coeff(P, h1, r1, n)
                h2[n] = -conv / I(r2 + n)
        else:
            for n in range(1, order + 1):
                conv = 0.0
                for m in range(n):
                    conv += ((r2 + m) * P[n - m] + Q[n - m]) * h2[m]
                if n > g:
                    conv += c * _log_source_coeff(P, h1, r1, n - g)
                den = I(r2 + n)
                if n == g:
                    # Resonance: the obstruction fixes c; h2[g] is a free
                    # homogeneous admixture, set to zero.
                    c = -conv / ((2 * r1 - 1 + p0) * h1[0])
                    h2[n] = 0.0
                else:
                    h2[n] = -conv / den

    rad = min(ode.p_series.radius, ode.q_series.radius)
    h1s = LogPowerSeries(ode.center, 0.0, _realify(h1)[None, :], rad)
    h2s = LogPowerSeries(ode.center, 0.0, _realify(h2)[None, :], rad)

    # Wronskian: W = C z^{-p0} exp(-sum_n P_n z^n / n); C fixed by the
    # leading behavior W ~ (r1 - r2 or c) z^{r1+r2-1}.
    wexp = np.zeros(order + 1, dtype=complex)
    wexp[1:] = -P[1 : order + 1] / np.arange(1, order + 1)
    wan = _exp_series(wexp)
    # W(u1, u2) = u1 u2' - u1' u2 = Wlead z^{-p0} exp(-sum P_n z^n / n).
    # Leading constant: (r2 - r1) generically; c for a double root (where the
    # log branch carries the independence).
    Wlead = (r2 - r1) if abs(r1 - r2) > _INT_TOL else c
    wcoef = _realify(Wlead * wan)[None, :]
    wser = LogPowerSeries(ode.center, float(-(p0.real)), wcoef, rad)
    return FrobeniusSystem(r1, r2, h1s, h2s, c, wser, ode)


def _exp_series(a: np.ndarray) -> np.ndarray:
    """exp of an analytic series with a[0]=0, by the standard ODE recursion."""
    n = a.shape[0]
    e = np.zeros(n, dtype=complex)
    e[0] = 1.0
    for k in range(1, n):
        s = 0.0
        for m in range(1, k + 1):
            s += m * a[m] * e[k - m]
        e[k] = s / k
    return e


def _realify(v: np.ndarray) -> np.ndarray:
    if np.all(np.abs(v.imag) < 1e-13 * (1 + np.abs(v.real))):
        return v.real.copy()
    return v


def solve_inhomogeneous(
    ode: ODESpec,
    forcing_beta: float,
    g: LogPowerSeries,
    j: int,
    order: int | None = None,
) -> LogPowerSeries:
    """Particular solution of L[w] = z^{beta-2} g(z) log(z)^j.

    Returns w = z^beta sum_{k<=j+2} w_k(z) log(z)^k. The log-degree caps are
    structural: the j+2 column is only populated when both indicial roots are
    hit by beta + n, the j+1 column only when at least one is.
    """
    if g.log_degree != 0:
        raise SeriesError("forcing factor g must be analytic (log degree 0)")
    if j < 0:
        raise ValueError("log power j must be nonnegative")
    N = g.order if order is None else order
    P, Q = _pq_arrays(ode, N)
    p0, q0 = P[0], Q[0]
    G = np.zeros(N + 1, dtype=complex)
    gc = g.coeffs[0]
    G[: min(N + 1, gc.shape[0])] = gc[: N + 1]

    K = j + 2
    w = np.zeros((K + 1, N + 1), dtype=complex)
    beta = forcing_beta

    def I(x):
        return x * (x - 1) + p0 * x + q0

    for n in range(N + 1):
        mu = beta + n
        Iv = I(mu)
        Jv = 2 * mu - 1 + p0
        rhs = np.zeros(K + 1, dtype=complex)
        rhs[j] = G[n]
        for k in range(K + 1):
            conv = 0.0
            for m in range(n):
                conv += ((beta + m) * P[n - m] + Q[n - m]) * w[k, m]
                if k + 1 <= K:
                    conv += (k + 1) * P[n - m] * w[k + 1, m]
            rhs[k] -= conv
        if abs(Iv) > _RES_FLOOR:
            # Regular column: back-substitute downward in log degree.
            for k in range(K, -1, -1):
                t = rhs[k]
                if k + 1 <= K:
                    t -= Jv * (k + 1) * w[k + 1, n]
                if k + 2 <= K:
                    t -= (k + 1) * (k + 2) * w[k + 2, n]
                w[k, n] = t / Iv
        elif abs(Jv) > _RES_FLOOR:
            # Simple resonance beta + n = r_i: the k-th equation now fixes
            # the (k+1)-st log coefficient; the k=0 one stays free (0).
            for k in range(K - 1, -1, -1):
                t = rhs[k]
                if k + 2 <= K:
                    t -= (k + 1) * (k + 2) * w[k + 2, n]
                w[k + 1, n] = t / (Jv * (k + 1))
            if abs(rhs[K]) > 1e-8 * (1 + np.max(np.abs(rhs))):
                raise ResonanceOverflow("log-degree budget exceeded at resonance")
        else:
            # Double resonance (double indicial root hit): bump by two.
            for k in range(K - 1):
                w[k + 2, n] = rhs[k] / ((k + 1) * (k + 2))
    rad = min(ode.p_series.radius, ode.q_series.radius, g.radius)
    return LogPowerSeries(ode.center, float(beta), _realify_2d(w), rad)


def _realify_2d(v: np.ndarray) -> np.ndarray:
    if np.all(np.abs(v.imag) < 1e-12 * (1 + np.abs(v.real))):
        return v.real.copy()
    return v


def apply_operator(ode: ODESpec, w: LogPowerSeries, order: int | None = None) -> LogPowerSeries:
    """L[w] as a log-power series with offset exponent beta - 2.

    Used as the residual oracle: applying the operator to a particular
    solution must reproduce the forcing.
    """
    N = w.order if order is None else order
    P, Q = _pq_arrays(ode, N)
    K = w.log_degree
    beta = w.beta
    out = np.zeros((K + 1, N + 1), dtype=complex)
    for n in range(N + 1):
        for k in range(K + 1):
            acc = 0.0
            for m in range(n + 1):
                mu = beta + m
                if n == m:
                    acc += (mu * (mu - 1) + P[0] * mu + Q[0]) * w.coeffs[k, m]
                    if k + 1 <= K:
                        acc += (2 * mu - 1 + P[0]) * (k + 1) * w.coeffs[k + 1, m]
                    if k + 2 <= K:
                        acc += (k + 1) * (k + 2) * w.coeffs[k + 2, m]
                else:
                    acc += (mu * P[n - m] + Q[n - m]) * w.coeffs[k, m]
                    if k + 1 <= K:
                        acc += (k + 1) * P[n - m] * w.coeffs[k + 1, m]
            out[k, n] = acc
    return LogPowerSeries(w.center, float(beta - 2), _realify_2d(out), w.radius)


# ---------------------------------------------------------------------------
# Numeric integration (oracle / continuation)
# ---------------------------------------------------------------------------


class Trajectory:
    """Dense numeric solution of u'' = rhs(z, u, u'); callable -> Jet2."""

    def __init__(self, sol, rhs):
        self._sol = sol
        self._rhs = rhs

    def __call__(self, z) -> Jet2:
        y = self._sol.sol(z)
        u, du = y[0], y[1]
        return Jet2(u, du, self._rhs(z, u, du))

    @property
    def t_span(self):
        return self._sol.t[0], self._sol.t[-1]


def integrate_ode_numeric(
    ode_or_rhs,
    z0: float,
    jet0,
    z_end: float,
    tol: float = 1e-12,
) -> Trajectory:
    """Adaptive embedded RK (order 8, PI step control) for u'' = f(z, u, u').

    ``ode_or_rhs`` is either an :class:`ODESpec` (integrated as the linear
    homogeneous equation away from its center) or a callable
    ``f(z, u, du) -> u''``. ``jet0`` is ``(u, du)`` or a :class:`Jet2`.
    """
    if isinstance(ode_or_rhs, ODESpec):
        spec = ode_or_rhs

        def rhs(z, u, du):
            return -spec.p_at(z) * du - spec.q_at(z) * u

    else:
        rhs = ode_or_rhs

    if isinstance(jet0, Jet2):
        y0 = [jet0.u, jet0.u_R]
    else:
        y0 = list(jet0)

    def sys(z, y):
        return [y[1], rhs(z, y[0], y[1])]

    sol = solve_ivp(
        sys,
        (z0, z_end),
        y0,
        method="DOP853",
        rtol=tol,
        atol=tol * 1e-2,
        dense_output=True,
    )
    if not sol.success:
        raise StepFailure(sol.message)
    return Trajectory(sol, rhs)


def variation_of_parameters(
    u1,
    u2,
    wronskian,
    forcing,
    span,
    eval_points,
    n_panels: int = 400,
    p_fun=None,
    q_fun=None,
):
    """Particular solution of u'' + p u' + q u = forcing by Green quadrature.

    ``u1, u2`` are callables returning ``(value, derivative)``; ``wronskian``
    is ``W(u1,u2)(z)`` (callable or constant). Integration starts at
    ``span[0]`` with zero Cauchy data there:

        v(z) = u2(z) I1(z) - u1(z) I2(z),
        I1 = int u1 f / W,  I2 = int u2 f / W.

    Returns Jet2 samples at ``eval_points`` (second derivative populated from
    the ODE when ``p_fun``/``q_fun`` are given, else by the integrand form).
    """
    a, b = span
    pts = np.asarray(eval_points, dtype=float)
    # Composite Gauss-Legendre accumulation on a refined partition of [a, b].
    nodes, weights = np.polynomial.legendre.leggauss(12)
    grid = np.unique(np.concatenate([[a, b], pts]))
    grid = np.sort(grid[(grid >= a) & (grid <= b)])
    # refine each cell
    fine = [a]
    for lo, hi in zip(grid[:-1], grid[1:]):
        k = max(1, int(np.ceil((hi - lo) / (b - a) * n_panels)))
        fine.extend(np.linspace(lo, hi, k + 1)[1:])
    fine = np.asarray(fine)

    Wc = wronskian if callable(wronskian) else (lambda z, w=wronskian: w * np.ones_like(z))

    I1 = {a: 0.0}
    I2 = {a: 0.0}
    acc1 = 0.0
    acc2 = 0.0
    for lo, hi in zip(fine[:-1], fine[1:]):
        zz = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        ww = 0.5 * (hi - lo) * weights
        f = forcing(zz)
        u1v = u1(zz)[0]
        u2v = u2(zz)[0]
        Wv = Wc(zz)
        acc1 += np.sum(ww * u1v * f / Wv)
        acc2 += np.sum(ww * u2v * f / Wv)
        I1[hi] = acc1
        I2[hi] = acc2

    out = []
    for z in pts:
        # locate nearest partition point (pts are partition members)
        i1 = I1[min(I1, key=lambda x: abs(x - z))]
        i2 = I2[min(I2, key=lambda x: abs(x - z))]
        v1, d1 = u1(np.asarray([z]))
        v2, d2 = u2(np.asarray([z]))
        v = v2[0] * i1 - v1[0] * i2
        dv = d2[0] * i1 - d1[0] * i2
        if p_fun is not None and q_fun is not None:
            ddv = forcing(np.asarray([z]))[0] - p_fun(z) * dv - q_fun(z) * v
        else:
            ddv = np.nan
        out.append(Jet2(v, dv, ddv))
    return out
