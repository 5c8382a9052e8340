"""Special functions used by the analytic engines.

Everything here is scalar, pure and dependency-light (only ``math`` and
``cmath``) so the routines can be called from inside quadrature integrands
without array overhead.

* :func:`lambert_w0` / :func:`lambert_w0_log` -- principal branch of the
  Lambert W function, the latter taking ``log(x)`` so that arguments far
  beyond the float range can be handled.
* :func:`gauss_2f1` -- Gauss hypergeometric function for the family
  ``2F1(k, b; b + 1; z)`` with integer ``k`` and ``z <= 0``.
* :func:`reg_inc_beta` -- regularized incomplete beta function.
* :func:`complex_pow_one_plus` -- ``(1 + x) ** (-b)`` for complex ``b``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

from .errors import ConvergenceError, DomainError

__all__ = [
    "LogArg",
    "lambert_w0",
    "lambert_w0_log",
    "gauss_2f1",
    "reg_inc_beta",
    "complex_pow_one_plus",
]

_EPS = 2.220446049250313e-16
_FPMIN = 1e-300


@dataclass(frozen=True)
class LogArg:
    """A positive number stored through its natural logarithm."""

    log_x: float

    def __post_init__(self):
        if not math.isfinite(self.log_x):
            raise DomainError(f"log_x must be finite, got {self.log_x!r}")

    @classmethod
    def from_value(cls, x: float) -> "LogArg":
        if not x > 0:
            raise DomainError(f"LogArg needs a positive value, got {x!r}")
        return cls(math.log(x))


# ---------------------------------------------------------------------------
# Lambert W
# ---------------------------------------------------------------------------

def lambert_w0(x: float, max_iter: int = 64) -> float:
    """Principal branch ``W0(x)`` for ``x >= 0``.

    Halley iteration started from a series guess below ``e`` and from the
    ``log - log log`` asymptote above it.
    """
    x = float(x)
    if math.isnan(x) or x < 0.0:
        raise DomainError(f"lambert_w0 is defined here for x >= 0, got {x!r}")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return math.inf
    if x > 1e300:
        # w*exp(w) would overflow inside Halley; the log form is exact enough
        return lambert_w0_log(math.log(x))

    if x < math.e:
        w = math.log1p(x)
        if x < 0.25:
            w = x * (1.0 - x * (1.0 - 1.5 * x))
    else:
        l1 = math.log(x)
        l2 = math.log(l1)
        w = l1 - l2 + l2 / l1

    for _ in range(max_iter):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= dw
        if abs(dw) <= 4.0 * _EPS * (1.0 + abs(w)):
            break
    else:
        raise ConvergenceError("lambert_w0 did not converge", {"x": x, "w": w})
    return w


def lambert_w0_log(la: LogArg | float, max_iter: int = 200) -> float:
    """``W0(exp(log_x))`` evaluated without ever forming ``exp(log_x)``.

    Solves ``w + log(w) = log_x`` through ``w = exp(u)``; the map
    ``u -> exp(u) + u`` is convex and increasing, so Newton converges from
    any start.
    """
    log_x = la.log_x if isinstance(la, LogArg) else float(la)
    if not math.isfinite(log_x):
        raise DomainError(f"log_x must be finite, got {log_x!r}")

    if log_x < -30.0:
        # W(x) = x - x^2 + ..., and x < 1e-13 here
        x = math.exp(log_x)
        return x - x * x
    if log_x < 1.0:
        u = log_x - math.log1p(math.exp(log_x))
    else:
        lw = log_x - math.log(log_x) + math.log(log_x) / log_x
        u = math.log(max(lw, 1e-3))

    for _ in range(max_iter):
        eu = math.exp(u)
        du = (eu + u - log_x) / (eu + 1.0)
        u -= du
        if abs(du) <= 2.0 * _EPS * max(1.0, abs(u)):
            break
    else:
        raise ConvergenceError("lambert_w0_log did not converge", {"log_x": log_x, "u": u})
    return math.exp(u)


# ---------------------------------------------------------------------------
# Gauss hypergeometric 2F1(k, b; b + 1; z), z <= 0
# ---------------------------------------------------------------------------

def _series_2f1(a: float, b: float, c: float, z: float, max_terms: int = 200000) -> float:
    term = 1.0
    total = 1.0
    for n in range(max_terms):
        term *= (a + n) * (b + n) / ((c + n) * (n + 1.0)) * z
        total += term
        if abs(term) <= _EPS * abs(total) and n > 2:
            return total
    raise ConvergenceError("hypergeometric series did not converge",
                           {"a": a, "b": b, "c": c, "z": z})


def gauss_2f1(a: int, b: float, c: float, z: float) -> float:
    """``2F1(a, b; c; z)`` for integer ``a >= 1``, ``c = b + 1`` and ``z <= 0``.

    The three regimes:

    * ``|z| < 0.9``: the defining power series (Pfaff form for large ``a``
      to avoid alternating-sign cancellation);
    * ``0.9 <= |z| <= 4``: Pfaff, ``(1-z)^-a 2F1(a, 1; c; z/(z-1))``, a
      positive-term series;
    * ``|z| > 4``: the ``1/z`` connection formula, whose second term
      collapses to a pure power because ``c - b = 1``.
    """
    if c <= 0 and float(c).is_integer():
        raise DomainError("c must not be a nonpositive integer")
    if float(a) != int(a) or a < 1:
        raise DomainError(f"a must be a positive integer, got {a!r}")
    if abs(c - (b + 1.0)) > 1e-12 * max(1.0, abs(c)):
        raise DomainError("only the c = b + 1 family is supported")
    if z > 0:
        raise DomainError(f"z must be <= 0, got {z!r}")
    a = int(a)
    z = float(z)
    if z == 0.0:
        return 1.0

    az = -z
    if az < 0.9 and a <= 8:
        return _series_2f1(a, b, c, z)
    if az <= 4.0:
        w = z / (z - 1.0)
        return (1.0 - z) ** (-a) * _series_2f1(a, 1.0, c, w)

    # A&S 15.3.7 with c = b + 1.  The second 2F1 has a zero upper parameter.
    d = a - b  # plays the role of delta
    if float(d).is_integer():
        raise DomainError("a - b must not be an integer for the 1/z branch")
    u = 1.0 / z
    inner = (1.0 - u) ** (-a) * _series_2f1(a, 1.0, 1.0 + d, u / (u - 1.0))
    # Gamma(c)/Gamma(b) = b and Gamma(-d)/Gamma(1-d) = -1/d
    first = -b / d
    second = _gamma_ratio(c, d, a)
    return first * az ** (-a) * inner + second * az ** (-b)


def _gamma_ratio(c: float, d: float, a: float) -> float:
    """``Gamma(c) Gamma(d) / Gamma(a)`` without intermediate overflow."""
    try:
        return math.gamma(c) * math.gamma(d) / math.gamma(a)
    except OverflowError:
        sign = 1.0
        for v in (c, d, a):
            if v < 0 and math.floor(v) % 2 == 1:
                sign = -sign
        return sign * math.exp(math.lgamma(c) + math.lgamma(d) - math.lgamma(a))


# ---------------------------------------------------------------------------
# Regularized incomplete beta
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float, max_iter: int = 20000) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 4.0 * _EPS:
            return h
    raise ConvergenceError("incomplete beta continued fraction did not converge",
                           {"a": a, "b": b, "x": x})


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if not (a > 0 and b > 0):
        raise DomainError(f"a and b must be positive, got a={a!r}, b={b!r}")
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"x must lie in [0, 1], got {x!r}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        val = math.exp(log_front) * _betacf(a, b, x) / a
    else:
        val = 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b
    return min(1.0, max(0.0, val))


# ---------------------------------------------------------------------------
# Complex powers
# ---------------------------------------------------------------------------

def complex_pow_one_plus(x: float, b: complex) -> complex:
    """``(1 + x) ** (-b)`` computed as ``exp(-b * log1p(x))``."""
    if x < 0:
        raise DomainError(f"x must be >= 0, got {x!r}")
    return cmath.exp(-complex(b) * math.log1p(x))
