"""Truncated log-power series, Wiener norms, and the Gauss hypergeometric sum.

This module is the arithmetic substrate for everything else in the package:

* :class:`LogPowerSeries` -- a truncated expansion
  ``z^beta * sum_{k<=K} sum_{n<=N} c[k][n] z^n log(z)^k`` around a center,
  the common currency of the regular-singular ODE machinery.
* :class:`Jet2` -- a five-channel packet ``(u, u_R, u_RR, u_t, u_tt)`` so
  that wave-operator residuals are assembled from exact derivative channels
  instead of numerical differentiation.
* :class:`DJet` -- a univariate second-order automatic-differentiation jet
  used to evaluate closed-form profiles together with their first two
  derivatives in one pass (dtype-preserving, so extended precision flows
  through).
* :func:`hyp2f1` -- the Gauss hypergeometric function on [0, 1], by direct
  series for small argument and the 1-z connection formula near 1.

All operations are pure; nothing here mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SeriesError",
    "NonConvergent",
    "InvalidGamma",
    "CenterMismatch",
    "IndexOutOfRange",
    "LogPowerSeries",
    "Jet2",
    "DJet",
    "HypParams",
    "pochhammer",
    "hyp2f1",
    "wiener_norm",
    "logpow_combine",
]


class SeriesError(Exception):
    """Base class for series_core failures."""


class NonConvergent(SeriesError):
    """The requested sum does not converge (boundary-condition violation)."""


class InvalidGamma(SeriesError):
    """Lower hypergeometric parameter is a nonpositive integer."""


class CenterMismatch(SeriesError):
    """Binary series operation with incompatible expansion centers."""


class IndexOutOfRange(SeriesError):
    """Log-power column index exceeds the stored degree."""


# ---------------------------------------------------------------------------
# LogPowerSeries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogPowerSeries:
    """Truncated expansion ``z^beta * sum_{k,n} c[k][n] z^n log(z)^k``.

    Parameters
    ----------
    center:
        Expansion point; ``z`` above is the offset from it.
    beta:
        Leading offset exponent (real).
    coeffs:
        2-D array ``c[k][n]`` with ``k`` the log power (0..K) and ``n`` the
        monomial order (0..N).
    radius:
        Radius of validity (positive).
    """

    center: complex
    beta: float
    coeffs: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        c = np.atleast_2d(np.asarray(self.coeffs))
        object.__setattr__(self, "coeffs", c)
        if not np.all(np.isfinite(c)):
            raise SeriesError("non-finite series coefficient")
        if not (self.radius > 0):
            raise SeriesError("radius must be positive")

    @property
    def log_degree(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def order(self) -> int:
        return self.coeffs.shape[1] - 1

    def __call__(self, z):
        """Evaluate at absolute point(s) ``z`` (Horner in the offset)."""
        w = np.asarray(z, dtype=np.result_type(np.asarray(z), self.coeffs)) - self.center
        if np.iscomplexobj(w) or np.any(np.real(w) <= 0):
            logw = np.log(w.astype(complex)) if self.log_degree else None
        else:
            logw = np.log(w) if self.log_degree else None
        vals = np.zeros_like(w)
        for k in range(self.log_degree, -1, -1):
            col = self.coeffs[k]
            acc = np.zeros_like(w) + col[-1]
            for cn in col[-2::-1]:
                acc = acc * w + cn
            vals = (vals * logw + acc) if self.log_degree else acc
        if self.beta != 0:
            vals = vals * w**self.beta
        return vals

    def eval_with_derivatives(self, z):
        """Return (value, d/dz, d2/dz2) at ``z`` by differentiated Horner."""
        w = np.asarray(z, dtype=self.coeffs.dtype) - self.center
        logw = np.log(w)
        b = self.beta
        val = np.zeros_like(w)
        d1 = np.zeros_like(w)
        d2 = np.zeros_like(w)
        K = self.log_degree
        for k in range(K + 1):
            col = self.coeffs[k]
            s0 = np.zeros_like(w) + col[-1]
            s1 = np.zeros_like(w)
            s2 = np.zeros_like(w)
            for cn in col[-2::-1]:
                s2 = s2 * w + 2.0 * s1
                s1 = s1 * w + s0
                s0 = s0 * w + cn
            # term = w^b * s0(w) * log(w)^k ; differentiate in w.
            lw = logw**k if k else np.ones_like(w)
            lw1 = (k * logw ** (k - 1) / w) if k >= 1 else 0.0
            lw2 = (
                (k * (k - 1) * logw ** (k - 2) - k * logw ** (k - 1)) / w**2
                if k >= 1
                else 0.0
            )
            f0 = s0 * lw
            f1 = s1 * lw + s0 * lw1
            f2 = s2 * lw + 2.0 * s1 * lw1 + s0 * lw2
            if b != 0:
                wb = w**b
                g0 = wb * f0
                g1 = wb * (f1 + b * f0 / w)
                g2 = wb * (f2 + 2.0 * b * f1 / w + b * (b - 1.0) * f0 / w**2)
            else:
                g0, g1, g2 = f0, f1, f2
            val = val + g0
            d1 = d1 + g1
            d2 = d2 + g2
        return val, d1, d2

    def tail_bound(self, r: float) -> float:
        """Geometric extrapolation of the truncation error at offset ``r``.

        The last two non-negligible coefficient magnitudes give a ratio
        estimate q; the bound is ``|c_N| (q r)^? / (1 - q r)`` summed over log
        columns. Heuristic by construction, surfaced so callers can budget.
        """
        total = 0.0
        n = self.order
        for k in range(self.log_degree + 1):
            col = np.abs(self.coeffs[k])
            if not col.any():
                continue
            cN = col[-1]
            prev = col[-2] if col.shape[0] >= 2 else cN
            q = cN / prev if prev > 0 else 1.0 / max(self.radius, 1e-300)
            q = min(max(q, 1e-300), 0.999 / max(r, 1e-300))
            x = q * r
            total += cN * r**n * x / (1.0 - x)
        return float(total)


# ---------------------------------------------------------------------------
# Jets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Jet2:
    """Value and first/second derivatives in R and t at a single point.

    The t channels are zero for purely radial profiles. Entries may be
    numpy arrays (a jet field sampled on a grid).
    """

    u: object
    u_R: object
    u_RR: object
    u_t: object = 0.0
    u_tt: object = 0.0

    def map(self, f) -> "Jet2":
        return Jet2(f(self.u), f(self.u_R), f(self.u_RR), f(self.u_t), f(self.u_tt))

    def __add__(self, other: "Jet2") -> "Jet2":
        return Jet2(
            self.u + other.u,
            self.u_R + other.u_R,
            self.u_RR + other.u_RR,
            self.u_t + other.u_t,
            self.u_tt + other.u_tt,
        )

    def __sub__(self, other: "Jet2") -> "Jet2":
        return Jet2(
            self.u - other.u,
            self.u_R - other.u_R,
            self.u_RR - other.u_RR,
            self.u_t - other.u_t,
            self.u_tt - other.u_tt,
        )

    def scale(self, c) -> "Jet2":
        return self.map(lambda x: c * x)


class DJet:
    """Univariate second-order forward-mode jet: (f, f', f'').

    Entries are scalars or numpy arrays; the dtype of the seed propagates,
    so seeding with ``np.longdouble`` carries extended precision through the
    whole closed-form evaluation.
    """

    __slots__ = ("f", "d", "dd")

    def __init__(self, f, d=0.0, dd=0.0):
        self.f = f
        self.d = d
        self.dd = dd

    @staticmethod
    def variable(x):
        one = x * 0 + 1 if isinstance(x, np.ndarray) else type(x)(1)
        return DJet(x, one, x * 0 if isinstance(x, np.ndarray) else type(x)(0))

    @staticmethod
    def constant(c):
        return DJet(c, 0.0, 0.0)

    def _coerce(self, other) -> "DJet":
        return other if isinstance(other, DJet) else DJet(other, 0.0, 0.0)

    def __add__(self, o):
        o = self._coerce(o)
        return DJet(self.f + o.f, self.d + o.d, self.dd + o.dd)

    __radd__ = __add__

    def __neg__(self):
        return DJet(-self.f, -self.d, -self.dd)

    def __sub__(self, o):
        o = self._coerce(o)
        return DJet(self.f - o.f, self.d - o.d, self.dd - o.dd)

    def __rsub__(self, o):
        return self._coerce(o).__sub__(self)

    def __mul__(self, o):
        o = self._coerce(o)
        return DJet(
            self.f * o.f,
            self.d * o.f + self.f * o.d,
            self.dd * o.f + 2 * self.d * o.d + self.f * o.dd,
        )

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = self._coerce(o)
        q = self.f / o.f
        d = (self.d - q * o.d) / o.f
        dd = (self.dd - 2 * d * o.d - q * o.dd) / o.f
        return DJet(q, d, dd)

    def __rtruediv__(self, o):
        return self._coerce(o).__truediv__(self)

    def _chain(self, g, g1, g2):
        """Compose with scalar function given (g(f), g'(f), g''(f))."""
        return DJet(g, g1 * self.d, g2 * self.d * self.d + g1 * self.dd)

    def __pow__(self, a):
        if isinstance(a, DJet):
            raise TypeError("jet-valued exponents are not supported")
        g = self.f**a
        return self._chain(g, a * self.f ** (a - 1), a * (a - 1) * self.f ** (a - 2))

    def sqrt(self):
        g = np.sqrt(self.f)
        return self._chain(g, 0.5 / g, -0.25 / (g * self.f))

    def log(self):
        return self._chain(np.log(self.f), 1.0 / self.f, -1.0 / (self.f * self.f))

    def log1p(self):
        z = 1.0 + self.f
        return self._chain(np.log1p(self.f), 1.0 / z, -1.0 / (z * z))

    def exp(self):
        g = np.exp(self.f)
        return self._chain(g, g, g)

    def arctan(self):
        z = 1.0 + self.f * self.f
        return self._chain(np.arctan(self.f), 1.0 / z, -2.0 * self.f / (z * z))

    def sin(self):
        s, c = np.sin(self.f), np.cos(self.f)
        return self._chain(s, c, -s)

    def cos(self):
        s, c = np.sin(self.f), np.cos(self.f)
        return self._chain(c, -s, -c)


# ---------------------------------------------------------------------------
# Hypergeometric machinery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HypParams:
    """Parameter triple (alpha, beta, gamma) of the Gauss hypergeometric sum."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self) -> None:
        g = self.gamma
        if g <= 0 and abs(g - round(g)) < 1e-12:
            raise InvalidGamma(f"gamma = {g} is a nonpositive integer")


def pochhammer(x: float, n: int) -> float:
    """Rising factorial (x)_n = x (x+1) ... (x+n-1); (x)_0 = 1 exactly."""
    if n < 0:
        raise ValueError("pochhammer order must be nonnegative")
    out = 1.0
    for i in range(n):
        out *= x + i
        if not math.isfinite(out):
            return out  # overflow surfaces as inf, flagged by the caller
    return out


_Z_SPLIT = 0.8
_MAX_TERMS = 20000


def _series_2f1(a: float, b: float, c: float, z: float, tol: float) -> float:
    """Direct power-series sum; caller guarantees it converges at z."""
    term = 1.0
    total = 1.0
    n = 0
    while n < _MAX_TERMS:
        term *= (a + n) * (b + n) / ((c + n) * (n + 1.0)) * z
        total += term
        n += 1
        if abs(term) <= tol * max(1.0, abs(total)) and n > 4:
            break
    else:
        raise NonConvergent(f"series did not meet tol={tol} at z={z}")
    return total


def _is_nonpos_int(x: float, eps: float = 1e-10) -> bool:
    return x <= eps and abs(x - round(x)) < eps


def hyp2f1(p: HypParams, z: float, tol: float = 1e-14) -> float:
    """Gauss hypergeometric F(alpha, beta; gamma; z) for z in [0, 1].

    Direct series up to ``z = 0.8``; beyond that the connection formula in
    1-z (two convergent series at small argument). At ``z = 1`` the closed
    evaluation requires ``gamma - alpha - beta > 0``.
    """
    a, b, c = p.alpha, p.beta, p.gamma
    if not (0.0 <= z <= 1.0):
        raise ValueError("argument restricted to [0, 1]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    s = c - a - b
    # Terminating (polynomial) cases are exact at any z.
    if _is_nonpos_int(a) or _is_nonpos_int(b):
        return _series_2f1(a, b, c, z, tol=0.0 if z else tol)
    if z == 1.0:
        if s <= 0:
            raise NonConvergent("needs gamma - alpha - beta > 0 at z = 1")
        return math.exp(
            math.lgamma(c) + math.lgamma(s) - math.lgamma(c - a) - math.lgamma(c - b)
        ) * _gamma_sign(c) * _gamma_sign(s) * _gamma_sign_inv(c - a) * _gamma_sign_inv(c - b)
    if z <= _Z_SPLIT:
        return _series_2f1(a, b, c, z, tol)
    # 1-z connection: F = G1 * F(a,b;a+b-c+1;1-z) + (1-z)^s G2 * F(c-a,c-b;s+1;1-z)
    if abs(s - round(s)) < 1e-8:
        # Degenerate connection coefficients; fall back to the direct series
        # with a tight cutoff (convergence is slow but geometric at z<1).
        return _series_2f1(a, b, c, z, min(tol, 1e-15))
    u = 1.0 - z
    g1 = _gamma_ratio(c, s, c - a, c - b)
    g2 = _gamma_ratio(c, -s, a, b)
    f1 = _series_2f1(a, b, a + b - c + 1.0, u, tol)
    f2 = _series_2f1(c - a, c - b, s + 1.0, u, tol)
    return g1 * f1 + u**s * g2 * f2


def _gamma_sign(x: float) -> float:
    # sign of Gamma(x) for real non-pole x: alternates on (-k-1, -k)
    if x > 0:
        return 1.0
    return -1.0 if (math.ceil(-x) % 2 == 1) else 1.0


def _gamma_sign_inv(x: float) -> float:
    return _gamma_sign(x)


def _gamma_ratio(n1: float, n2: float, d1: float, d2: float) -> float:
    """Gamma(n1) Gamma(n2) / (Gamma(d1) Gamma(d2)) with sign tracking."""
    val = math.exp(
        math.lgamma(n1) + math.lgamma(n2) - math.lgamma(d1) - math.lgamma(d2)
    )
    sign = _gamma_sign(n1) * _gamma_sign(n2) * _gamma_sign(d1) * _gamma_sign(d2)
    return sign * val


# ---------------------------------------------------------------------------
# Series operations
# ---------------------------------------------------------------------------


def wiener_norm(s: LogPowerSeries, k: int, r: float) -> float:
    """Absolute-coefficient norm sum_n |c[k][n]| r^n of one log column."""
    if k > s.log_degree or k < 0:
        raise IndexOutOfRange(f"log column {k} exceeds degree {s.log_degree}")
    if r > s.radius * (1.0 + 1e-12):
        raise SeriesError("evaluation radius exceeds the series radius")
    col = np.abs(np.asarray(s.coeffs[k], dtype=float))
    powers = r ** np.arange(col.shape[0], dtype=float)
    return float(np.sum(col * powers))


def logpow_combine(a: LogPowerSeries, b: LogPowerSeries, op: str) -> LogPowerSeries:
    """Combine two series; ``op`` is ``"add"`` or ``"mul"``.

    Addition requires equal centers and offset exponents. Multiplication
    adds offset exponents and log degrees and truncates the monomial order
    to the smaller of the two inputs (the common guaranteed order).
    """
    if a.center != b.center:
        raise CenterMismatch(f"centers differ: {a.center} vs {b.center}")
    radius = min(a.radius, b.radius)
    if op == "add":
        if abs(a.beta - b.beta) > 1e-14:
            raise SeriesError("addition needs matching offset exponents")
        K = max(a.log_degree, b.log_degree)
        N = max(a.order, b.order)
        c = np.zeros((K + 1, N + 1), dtype=np.result_type(a.coeffs, b.coeffs))
        c[: a.log_degree + 1, : a.order + 1] += a.coeffs
        c[: b.log_degree + 1, : b.order + 1] += b.coeffs
        return LogPowerSeries(a.center, a.beta, c, radius)
    if op == "mul":
        N = min(a.order, b.order)
        K = a.log_degree + b.log_degree
        c = np.zeros((K + 1, N + 1), dtype=np.result_type(a.coeffs, b.coeffs))
        for ka in range(a.log_degree + 1):
            for kb in range(b.log_degree + 1):
                conv = np.convolve(a.coeffs[ka], b.coeffs[kb])[: N + 1]
                c[ka + kb, : conv.shape[0]] += conv
        return LogPowerSeries(a.center, a.beta + b.beta, c, radius)
    raise ValueError(f"unknown op {op!r}")
