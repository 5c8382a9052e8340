"""Analytic engines for the SINR meta distribution.

The meta distribution is ``F(theta, gamma) = P(Ps(theta) > gamma)`` where
``Ps`` is the success probability of a link conditioned on the network
geometry and averaged over Rayleigh fading.  Four ways to evaluate it live
here:

* :func:`proposed_meta` / :func:`proposed_meta_j` -- keep the nearest ``j``
  interferers exact, replace the rest by their conditional mean, and solve
  ``Ps > gamma`` for the serving distance with the Lambert W function;
* :func:`exact_meta_gilpelaez` -- Gil-Pelaez inversion of the imaginary
  moments ``M_{it}``;
* :func:`beta_meta` -- beta distribution matched to ``M_1`` and ``M_2``;
* :func:`nearest_only_meta` -- SIR, nearest interferer only.

Distances are in km, powers in W.  ``G(r)`` is expressed in path-gain units
(km^-alpha per unit transmit power), so ``p_t * G(r)`` is the mean received
far-field interference power.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special
from scipy.stats import qmc

from . import specfun
from .errors import ConvergenceError, DomainError
from .geometry import (
    PLCP,
    PPP,
    MCP,
    Bipolar,
    ChannelModel,
    KTier,
    NetworkModel,
    distance_law,
    map_ktier,
)

__all__ = [
    "QuadratureSpec",
    "MetaQuery",
    "MetaCurve",
    "DegenerateMomentsWarning",
    "MEAN_FIELD_MODES",
    "WARNING_COUNTS",
    "mean_field_g",
    "plcp_far_field_coefficients",
    "conditional_success_probability",
    "success_probability_from_ratios",
    "approx_success_probability",
    "k1_radius",
    "kj_radius",
    "proposed_meta",
    "proposed_meta_j",
    "ppp_q_coefficient",
    "ppp_fb_series",
    "moment_b",
    "imaginary_moments",
    "gilpelaez_nodes",
    "gilpelaez_from_moments",
    "exact_meta_gilpelaez",
    "exact_meta_gilpelaez_curve",
    "beta_parameters",
    "beta_meta",
    "beta_meta_from_moments",
    "nearest_only_meta",
    "evaluate_curve",
    "METHODS",
]

MEAN_FIELD_MODES = ("auto", "plcp", "ppp-approx", "none")

# clamp / fallback events, keyed by site
WARNING_COUNTS: Counter = Counter()


class DegenerateMomentsWarning(RuntimeWarning):
    """``M_2 <= M_1^2``: the beta fit has no valid parameters."""


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and node counts shared by all numerical integrals."""

    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    max_subdivisions: int = 2000
    gilpelaez_t_max: float = 200.0
    gilpelaez_nodes: int = 4000
    series_k_max: int = 60
    infinite_cutoff_multiplier: float = 40.0

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "gilpelaez_t_max", "infinite_cutoff_multiplier"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise DomainError(f"{name} must be positive, got {v!r}")
        if self.max_subdivisions < 1 or self.gilpelaez_nodes < 16:
            raise DomainError("max_subdivisions >= 1 and gilpelaez_nodes >= 16 required")
        if self.series_k_max < 10:
            raise DomainError("series_k_max must be >= 10")


DEFAULT_QUAD = QuadratureSpec()


@dataclass(frozen=True)
class MetaQuery:
    """SINR threshold ``theta`` (linear) and reliability threshold ``gamma``."""

    theta: float
    gamma: float

    def __post_init__(self):
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise DomainError(f"theta must be positive, got {self.theta!r}")
        if not (0.0 < self.gamma < 1.0):
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma!r}")

    @classmethod
    def from_db(cls, theta_db: float, gamma: float) -> "MetaQuery":
        return cls(10.0 ** (theta_db / 10.0), gamma)


METHODS = ("proposed", "proposed_j", "beta", "exact_gilpelaez", "nearest_only", "simulation")


def _model_dict(model) -> dict:
    d = asdict(model)
    d["kind"] = model.kind
    return d


def fingerprint(model, channel, quad) -> str:
    payload = json.dumps(
        {"model": _model_dict(model), "channel": asdict(channel), "quad": asdict(quad)},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class MetaCurve:
    """Meta distribution values on a list of ``(theta, gamma)`` points."""

    method: str
    grid: list
    values: list
    model_fingerprint: str = ""
    std_err: list | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method tag {self.method!r}")
        if len(self.grid) != len(self.values):
            raise DomainError("grid and values differ in length")

    def as_array(self):
        thetas = sorted({t for t, _ in self.grid})
        gammas = sorted({g for _, g in self.grid})
        out = np.full((len(thetas), len(gammas)), np.nan)
        ti = {t: i for i, t in enumerate(thetas)}
        gi = {g: i for i, g in enumerate(gammas)}
        for (t, g), v in zip(self.grid, self.values):
            out[ti[t], gi[g]] = v
        return np.array(thetas), np.array(gammas), out


# ---------------------------------------------------------------------------
# Mean-field interference
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def plcp_far_field_coefficients(alpha: float) -> tuple[float, float]:
    """The two PLCP double integrals at ``R = 1``.

    Lines at offset ``rho > R`` miss the ball entirely; lines with
    ``rho < R`` contribute only beyond the chord end ``sqrt(R^2 - rho^2)``.
    Both integrals scale as ``R^(2 - alpha)``.
    """
    a = alpha

    def outer_far(rho):
        # int_0^inf (rho^2 + t^2)^(-a/2) dt
        return rho ** (1 - a) * math.sqrt(math.pi) * math.gamma((a - 1) / 2) / (2 * math.gamma(a / 2))

    def outer_near(rho):
        t0 = math.sqrt(max(1.0 - rho * rho, 0.0))
        val, _ = integrate.quad(lambda t: (rho * rho + t * t) ** (-a / 2), t0, np.inf,
                                epsabs=1e-14, epsrel=1e-12, limit=200)
        return val

    far, _ = integrate.quad(outer_far, 1.0, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
    near, _ = integrate.quad(outer_near, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12, limit=200)
    return far, near


def _interferer_density(model: NetworkModel, channel: ChannelModel) -> float:
    if isinstance(model, KTier):
        return map_ktier(model, channel)[0]
    if isinstance(model, PLCP):
        return math.pi * model.lambda_l * model.lambda_p
    return model.lam


def mean_field_g(model: NetworkModel, channel: ChannelModel, r, mode: str = "auto"):
    """Mean path gain of all interferers beyond distance ``r``.

    ``2 pi lam r^(2-alpha) / (alpha-2)`` for the planar Poisson models.
    For PLCP (``mode='plcp'`` or ``'auto'``) the other lines contribute
    ``4 pi ll lp (I_far + I_near) r^(2-alpha)`` and the typical line adds
    ``2 lp r^(1-alpha) / (alpha-1)``; ``mode='ppp-approx'`` uses the planar
    form with ``lam = pi ll lp``.  ``mode='none'`` returns 0.
    """
    if mode not in MEAN_FIELD_MODES:
        raise DomainError(f"unknown mean-field mode {mode!r}")
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0) or np.any(~np.isfinite(r_arr)):
        raise DomainError(f"r must be positive, got {r!r}")
    a = channel.alpha
    if mode == "none":
        out = np.zeros_like(r_arr)
    elif isinstance(model, PLCP) and mode in ("auto", "plcp"):
        far, near = plcp_far_field_coefficients(a)
        ll, lp = model.lambda_l, model.lambda_p
        out = (4 * math.pi * ll * lp * (far + near) * r_arr ** (2 - a)
               + 2 * lp * r_arr ** (1 - a) / (a - 1))
    else:
        lam = _interferer_density(model, channel)
        out = 2 * math.pi * lam * r_arr ** (2 - a) / (a - 2)
    return float(out) if out.ndim == 0 else out


def _effective_channel(model: NetworkModel, channel: ChannelModel) -> ChannelModel:
    if isinstance(model, KTier):
        return channel.with_power(map_ktier(model, channel)[1])
    return channel


# ---------------------------------------------------------------------------
# Conditional success probability
# ---------------------------------------------------------------------------

def success_probability_from_ratios(theta, noise, ratios):
    """``exp(-theta*noise) / prod(1 + theta*ratios)`` row by row.

    ``noise`` is ``sigma^2 r0^alpha / p0`` per link and ``ratios`` holds
    ``(p_i/p0) (r0/r_i)^alpha`` per interferer (zero entries are ignored).
    """
    ratios = np.asarray(ratios, dtype=float)
    noise = np.asarray(noise, dtype=float)
    log_ps = -theta * noise - np.log1p(theta * ratios).sum(axis=-1)
    return np.exp(log_ps)


def conditional_success_probability(channel: ChannelModel, serving_r: float, interferer_rs,
                                    theta: float, serving_power: float | None = None,
                                    interferer_powers=None) -> float:
    """Success probability of one link given all distances, Rayleigh fading.

    ``exp(-theta r0^a sigma^2/p0) * prod_i 1/(1 + theta (p_i/p0) (r0/r_i)^a)``.
    Powers default to ``channel.pt``.
    """
    if not (serving_r > 0):
        raise DomainError(f"serving distance must be positive, got {serving_r!r}")
    if not theta > 0:
        raise DomainError(f"theta must be positive, got {theta!r}")
    rs = np.asarray(interferer_rs, dtype=float).ravel()
    if np.any(rs <= 0):
        raise DomainError("interferer distances must be positive")
    p0 = channel.pt if serving_power is None else serving_power
    pw = np.full(rs.shape, channel.pt) if interferer_powers is None else np.asarray(interferer_powers, float)
    a = channel.alpha
    ratios = (pw / p0) * (serving_r / rs) ** a
    noise = channel.sigma2 * serving_r ** a / p0
    return float(success_probability_from_ratios(theta, noise, ratios))


def approx_success_probability(channel: ChannelModel, model: NetworkModel, r0: float, r_list,
                               theta: float, mean_field: str = "auto") -> float:
    """Success probability with the nearest ``j`` interferers exact and the
    rest replaced by the mean field ``G`` at the ``j``-th distance."""
    rs = [float(x) for x in np.atleast_1d(r_list)]
    if not rs:
        raise DomainError("r_list must hold at least one interferer distance")
    if not r0 > 0 or any(b < a for a, b in zip(rs, rs[1:])) or r0 > rs[0]:
        raise DomainError("need 0 < r0 <= r_1 <= ... <= r_j")
    ch = _effective_channel(model, channel)
    a = ch.alpha
    g = mean_field_g(model, ch, rs[-1], mean_field)
    s = sum(x ** (-a) for x in rs)
    x = theta * r0 ** a
    return math.exp(-x * (g + ch.sigma2 / ch.pt)) / (1.0 + x * s)


# ---------------------------------------------------------------------------
# Critical radius via Lambert W
# ---------------------------------------------------------------------------

def _solve_y(gamma: float, u: float) -> float:
    """Root ``y >= 0`` of ``u*y + log(1+y) = -log(gamma)``.

    Closed form ``y = W(u e^(u - log gamma)) / u - 1`` from the Lambert W
    function in log domain, polished by Newton steps on the same equation
    (``w - u`` cancels when ``u`` is large).
    """
    lg = -math.log(gamma)
    if u == 0.0:
        return math.expm1(lg)
    w = specfun.lambert_w0_log(math.log(u) + u + lg)
    y = (w - u) / u
    if y < 0.0:
        y = 0.0
    for _ in range(6):
        f = u * y + math.log1p(y) - lg
        step = f / (u + 1.0 / (1.0 + y))
        y -= step
        if abs(step) <= 1e-15 * max(y, 1e-300):
            break
    if y < 0.0:
        WARNING_COUNTS["k_radius_clamp"] += 1
        y = 0.0
    return y


def kj_radius(alpha: float, theta: float, gamma: float, g_far: float, noise_over_pt: float,
              path_gain_sum: float) -> float:
    """Critical serving distance for ``j`` dominant interferers.

    Solves ``exp(-x A) / (1 + x S) = gamma`` for ``x = theta r0^alpha`` with
    ``A = G(R_j) + sigma^2/p_t`` and ``S = sum_k R_k^-alpha``.
    """
    if gamma >= 1.0:
        return 0.0
    u = (g_far + noise_over_pt) / path_gain_sum
    y = _solve_y(gamma, u)
    return (y / (theta * path_gain_sum)) ** (1.0 / alpha)


def k1_radius(model: NetworkModel, channel: ChannelModel, r1: float, theta: float,
              gamma: float, mean_field: str = "auto") -> float:
    """Largest serving distance with approximate success probability above
    ``gamma`` when the nearest interferer sits at ``r1``."""
    if not r1 > 0:
        raise DomainError(f"r1 must be positive, got {r1!r}")
    if not theta > 0:
        raise DomainError(f"theta must be positive, got {theta!r}")
    if not 0 < gamma < 1:
        raise DomainError(f"gamma must lie in (0, 1), got {gamma!r}")
    ch = _effective_channel(model, channel)
    g = mean_field_g(model, ch, r1, mean_field)
    return kj_radius(ch.alpha, theta, gamma, g, ch.sigma2 / ch.pt, r1 ** (-ch.alpha))


# ---------------------------------------------------------------------------
# Proposed approximation
# ---------------------------------------------------------------------------

def _quad(f, a, b, quad: QuadratureSpec, what: str):
    val, err, info = integrate.quad(f, a, b, epsabs=quad.abs_tol, epsrel=quad.rel_tol,
                                    limit=quad.max_subdivisions, full_output=1)[:3]
    if err > max(1e-6, 1e3 * quad.abs_tol) and err > 1e-4 * abs(val):
        raise ConvergenceError(f"quadrature for {what} did not converge",
                               {"value": val, "error": err, "interval": (a, b),
                                "evaluations": info.get("neval")})
    return val


def _saturation_breaks(excess, lo: float, hi: float, n: int = 96) -> list[float]:
    """Sign changes of ``excess`` on a geometric grid, refined by brentq."""
    grid = np.geomspace(lo, hi, n)
    vals = np.array([excess(r) for r in grid])
    out = []
    for i in range(n - 1):
        if vals[i] == 0.0:
            out.append(float(grid[i]))
        elif vals[i] * vals[i + 1] < 0:
            out.append(optimize.brentq(excess, grid[i], grid[i + 1], xtol=1e-14, rtol=1e-13))
    return out


def proposed_meta(model: NetworkModel, channel: ChannelModel, query: MetaQuery,
                  quad: QuadratureSpec = DEFAULT_QUAD, mean_field: str = "auto") -> float:
    """Dominant-interferer approximation of ``P(Ps(theta) > gamma)``.

    ``int_0^inf F_{R0|R1}(min(K1(r), cap(r)) | r) f_{R1}(r) dr`` where
    ``cap`` is ``r`` (nearest association), ``rc`` (MCP) or ``R``
    (bipolar).  The integration range is split where ``K1`` crosses the cap;
    saturated pieces integrate ``f_{R1}`` exactly through its CCDF.
    """
    theta, gamma = query.theta, query.gamma
    ch = _effective_channel(model, channel)
    law = distance_law(model, channel)
    a = ch.alpha
    nop = ch.sigma2 / ch.pt

    def k1(r):
        g = mean_field_g(model, ch, r, mean_field)
        return kj_radius(a, theta, gamma, g, nop, r ** (-a))

    upper = law.r1_upper(quad.abs_tol)
    lo = upper * 1e-6
    excess = lambda r: k1(r) - law.cap(r)
    edges = [0.0, *_saturation_breaks(excess, lo, upper), upper]

    total = 0.0
    for x0, x1 in zip(edges, edges[1:]):
        if x1 <= x0:
            continue
        mid = math.sqrt(max(x0, lo) * x1)
        if excess(mid) >= 0:
            total += float(law.ccdf_r1(x0)) - float(law.ccdf_r1(x1))
        elif isinstance(model, Bipolar):
            continue
        else:
            total += _quad(lambda r: float(law.pdf_r1(r)) * float(law.cond_cdf_r0(k1(r), r))
                           if r > 0 else 0.0, x0, x1, quad, "proposed_meta")
    return min(1.0, max(0.0, total))


def _kj_ratio(theta, gamma, alpha, g_far, nop, r_list):
    s = sum(x ** (-alpha) for x in r_list)
    k = kj_radius(alpha, theta, gamma, g_far, nop, s)
    return min(1.0, (k / r_list[0]) ** 2)


def proposed_meta_j(model: NetworkModel, channel: ChannelModel, query: MetaQuery, j: int = 1,
                    quad: QuadratureSpec = DEFAULT_QUAD, mc_nodes: int = 4096,
                    force_qmc: bool = False, seed: int = 0, return_std_err: bool = False):
    """Approximation keeping the ``j`` nearest interferers exact (PPP only).

    ``j = 1`` delegates to :func:`proposed_meta`; ``j = 2`` integrates the
    joint density ``4 (pi lam)^3 r1^3 r2 exp(-pi lam r2^2)`` of ``(R1, R2)``
    by nested quadrature; ``j >= 3`` (or ``force_qmc``) uses scrambled Sobol
    points over ordered PPP distances, with the standard error taken from 8
    independent scramblings.
    """
    if not isinstance(model, (PPP, KTier)):
        raise DomainError("proposed_meta_j is available for PPP (and mapped K-tier) models")
    if int(j) != j or j < 1 or j > 4:
        raise DomainError(f"j must be an integer in 1..4, got {j!r}")
    j = int(j)
    ch = _effective_channel(model, channel)
    lam = _interferer_density(model, channel)
    a, theta, gamma = ch.alpha, query.theta, query.gamma
    nop = ch.sigma2 / ch.pt

    if j == 1 and not force_qmc:
        val = proposed_meta(model, channel, query, quad)
        return (val, 0.0) if return_std_err else val

    if j == 2 and not force_qmc:
        pl = math.pi * lam
        upper = math.sqrt(quad.infinite_cutoff_multiplier ** 2 / pl)

        def inner(r2):
            g = mean_field_g(model, ch, r2)
            f = lambda r1: 4 * pl ** 3 * r1 ** 3 * r2 * math.exp(-pl * r2 * r2) * \
                _kj_ratio(theta, gamma, a, g, nop, (r1, r2))
            return integrate.quad(f, 0.0, r2, epsabs=quad.abs_tol, epsrel=1e-9, limit=200)[0]

        val = _quad(inner, 0.0, upper, QuadratureSpec(rel_tol=1e-8, abs_tol=1e-11,
                                                      max_subdivisions=quad.max_subdivisions),
                    "proposed_meta_j")
        val = min(1.0, max(0.0, val))
        return (val, 0.0) if return_std_err else val

    # ordered distances: pi*lam*R_k^2 = T_k, T_1 ~ Gamma(2), increments Exp(1)
    reps = 8
    m = max(16, int(2 ** math.ceil(math.log2(max(mc_nodes // reps, 2)))))
    estimates = []
    for rep in range(reps):
        sob = qmc.Sobol(d=j, scramble=True, seed=np.random.default_rng([seed, rep]))
        u = sob.random(m)
        t = np.empty_like(u)
        t[:, 0] = special.gammaincinv(2.0, u[:, 0])
        for k in range(1, j):
            t[:, k] = t[:, k - 1] - np.log1p(-u[:, k])
        rr = np.sqrt(t / (math.pi * lam))
        g = mean_field_g(model, ch, rr[:, -1])
        vals = [_kj_ratio(theta, gamma, a, g[i], nop, tuple(rr[i])) for i in range(m)]
        estimates.append(float(np.mean(vals)))
    est = np.array(estimates)
    val = min(1.0, max(0.0, float(est.mean())))
    se = float(est.std(ddof=1) / math.sqrt(reps))
    return (val, se) if return_std_err else val


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------

def _q_integrand_factory(theta: float, alpha: float, b: complex):
    """Integrand of ``Q_b / pi`` on ``s`` in [0, 1].

    ``Q_b = 2 pi int_1^inf [1 - (1 + theta x^-a)^-b] x dx``.  With
    ``y = log(1 + theta x^-a) = Y s^p``, ``p = 1/(1-delta)``, the
    ``y^-delta`` endpoint singularity is absorbed and the integrand is smooth.
    """
    d = 2.0 / alpha
    big_y = math.log1p(theta)
    p = 1.0 / (1.0 - d)
    th_d = theta ** d

    def f(s):
        if s <= 0.0:
            # limit of (1-e^{-by}) y^{-d-1}... * dy/ds as s -> 0
            return complex(b) * d * th_d * p * big_y ** (1.0 - d)
        y = big_y * s ** p
        one_minus = 1.0 - specfun.complex_pow_one_plus(math.expm1(y), b)
        jac = big_y * p * s ** (p - 1.0)
        return one_minus * d * th_d * math.exp(y) * math.expm1(y) ** (-d - 1.0) * jac

    return f


def ppp_q_coefficient(theta: float, alpha: float, b: complex,
                      quad: QuadratureSpec = DEFAULT_QUAD) -> complex:
    """``Q_b = F_b / R0^2`` by adaptive quadrature of the defining integral."""
    f = _q_integrand_factory(theta, alpha, b)
    re = _quad(lambda s: f(s).real, 0.0, 1.0, quad, "Q_b (real part)")
    im = 0.0
    if complex(b).imag != 0.0:
        im = _quad(lambda s: f(s).imag, 0.0, 1.0, quad, "Q_b (imaginary part)")
    return math.pi * complex(re, im)


def ppp_fb_series(theta: float, alpha: float, b: float, r0: float = 1.0, k_max: int = 60) -> float:
    """Binomial/hypergeometric series for ``F_b`` (real ``b``).

    ``F_b = pi delta R0^2 sum_k C(b,k) (-1)^(k+1) theta^k / (k - delta)
    2F1(k, k - delta; 1 + k - delta; -theta)``; finite for integer ``b``.
    """
    d = 2.0 / alpha
    n_terms = int(b) if float(b).is_integer() and b >= 0 else k_max
    total = 0.0
    binom = 1.0
    for k in range(1, n_terms + 1):
        binom *= (b - k + 1) / k
        term = binom * (-1) ** (k + 1) * theta ** k / (k - d) * \
            specfun.gauss_2f1(k, k - d, 1 + k - d, -theta)
        total += term
    return math.pi * d * r0 * r0 * total


def _laplace_noise_series(a_coef, beps, alpha, tol=1e-15, n_max=200):
    """``int_0^inf exp(-a v) exp(-beps v^(alpha/2)) dv`` via the Taylor series
    of the second factor.

    The series is asymptotic, so it is only used while its terms shrink;
    ``beps`` is of order 1e-8 or less for realistic noise levels.
    """
    a_coef = np.asarray(a_coef, dtype=complex)
    beps = np.broadcast_to(np.asarray(beps, dtype=complex), a_coef.shape)
    total = 1.0 / a_coef
    if not np.any(beps != 0):
        return total
    h = alpha / 2.0
    log_a = np.log(a_coef)
    nz = beps != 0
    log_b = np.log(np.where(nz, -beps, 1.0))
    prev = np.abs(total)
    for n in range(1, n_max):
        term = np.exp(n * log_b + special.gammaln(1 + n * h) - special.gammaln(n + 1)
                      - (1 + n * h) * log_a)
        term = np.where(nz, term, 0.0)
        mag = np.abs(term)
        if np.any(mag > prev):
            break
        total = total + term
        if np.all(mag <= tol * np.abs(total)):
            return total
        prev = mag
    raise ConvergenceError("noise series did not converge",
                           {"beps_max": float(np.max(np.abs(beps)))})


def _bipolar_log_moment(model: Bipolar, ch: ChannelModel, theta, b):
    d = ch.delta
    b = np.asarray(b, dtype=complex)
    c = model.lam * math.pi * model.R ** 2 * math.gamma(1 - d) * math.gamma(1 + d)
    nz = b != 0
    safe_b = np.where(nz, b, 1.0)
    ratio = np.exp(special.loggamma(safe_b + d) - special.loggamma(safe_b) - special.gammaln(1 + d))
    ratio = np.where(nz, ratio, 0.0)
    return -c * theta ** d * ratio - b * theta * model.R ** ch.alpha * ch.sigma2 / ch.pt


def _mcp_c_closed(d, b):
    """``2 int_0^inf [1 - (1 + x^-a)^-b] x dx = Gamma(1-d) Gamma(b+d) / Gamma(b)``."""
    b = np.asarray(b, dtype=complex)
    nz = b != 0
    safe_b = np.where(nz, b, 1.0)
    val = math.gamma(1 - d) * np.exp(special.loggamma(safe_b + d) - special.loggamma(safe_b))
    return np.where(nz, val, 0.0)


def _mcp_inner_numeric(alpha: float, b: complex, quad: QuadratureSpec) -> complex:
    """``2 int_0^inf [1 - (1 + x^-a)^-b] x dx`` by quadrature (x = e^-s below 1)."""

    def g_low(s):
        # x = e^-s, x dx = e^-2s ds, log(1 + x^-a) = a s + log1p(e^-a s)
        lg = alpha * s + math.log1p(math.exp(-alpha * s))
        return (1.0 - complex(np.exp(-complex(b) * lg))) * math.exp(-2 * s)

    def g_high(x):
        return (1.0 - specfun.complex_pow_one_plus(x ** (-alpha), b)) * x

    out = 0.0 + 0.0j
    for part in ("real", "imag"):
        if part == "imag" and complex(b).imag == 0.0:
            continue
        lo = _quad(lambda s: getattr(g_low(s), part), 0.0, 40.0, quad, "MCP inner integral")
        hi = _quad(lambda x: getattr(g_high(x), part), 1.0, np.inf, quad, "MCP inner integral")
        out += (lo + hi) * (1 if part == "real" else 1j)
    return 2.0 * out


_V_NODES, _V_WEIGHTS = np.polynomial.legendre.leggauss(32)


def _mcp_outer(model: MCP, ch: ChannelModel, theta, b, c_b):
    """``int_0^1 exp(-lam pi theta^d rc^2 c_b v - b theta sigma^2 rc^a v^(a/2) / pt) dv``."""
    b = np.asarray(b, dtype=complex)[..., None]
    c_b = np.asarray(c_b, dtype=complex)[..., None]
    lin = model.lam * math.pi * theta ** ch.delta * model.rc ** 2 * c_b
    noise = b * theta * ch.sigma2 * model.rc ** ch.alpha / ch.pt
    panels = 8
    total = 0.0
    for k in range(panels):
        v = (k + (_V_NODES + 1) / 2) / panels
        w = _V_WEIGHTS / (2 * panels)
        total = total + (np.exp(-lin * v - noise * v ** (ch.alpha / 2)) * w).sum(axis=-1)
    return total


def moment_b(model: NetworkModel, channel: ChannelModel, theta: float, b: complex,
             quad: QuadratureSpec = DEFAULT_QUAD) -> complex:
    """``M_b(theta) = E[Ps(theta)^b]`` for PPP, Bipolar, MCP and K-tier.

    PPP (and K-tier after mapping) integrates ``F_b`` directly for any
    complex ``b``; Bipolar uses its log-gamma closed form; MCP integrates
    the interference integral numerically and then the serving distance.
    Returns a complex number (real for real ``b``).
    """
    if isinstance(model, PLCP):
        raise DomainError("moments are not available for the PLCP model")
    if not theta > 0:
        raise DomainError(f"theta must be positive, got {theta!r}")
    b = complex(b)
    if b.real < 0:
        raise DomainError("moments need Re(b) >= 0")
    if b == 0:
        return 1.0 + 0.0j
    ch = _effective_channel(model, channel)
    a = ch.alpha

    if isinstance(model, (PPP, KTier)):
        lam = _interferer_density(model, channel)
        q = ppp_q_coefficient(theta, a, b, quad)
        coef = 1.0 + q / math.pi
        eps = theta * ch.sigma2 / (ch.pt * (math.pi * lam) ** (a / 2))
        if eps == 0.0:
            return complex(1.0 / coef)

        def f(v, part):
            return getattr(np.exp(-coef * v - b * eps * v ** (a / 2)), part)

        vmax = 60.0 / max(coef.real, 1e-3)
        re = _quad(lambda v: f(v, "real"), 0.0, vmax, quad, "M_b")
        im = _quad(lambda v: f(v, "imag"), 0.0, vmax, quad, "M_b") if b.imag else 0.0
        return complex(re, im)

    if isinstance(model, Bipolar):
        return complex(np.exp(_bipolar_log_moment(model, ch, theta, b)))

    if isinstance(model, MCP):
        c_b = _mcp_inner_numeric(a, b, quad)
        return complex(_mcp_outer(model, ch, theta, b, c_b))

    raise DomainError(f"unknown network model {model!r}")


# vectorised imaginary moments --------------------------------------------

def _panel_rule(n_panels: int, n_nodes: int, power: float = 1.0):
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    edges = np.linspace(0.0, 1.0, n_panels + 1) ** power
    lo, hi = edges[:-1, None], edges[1:, None]
    nodes = (lo + (hi - lo) * (x + 1) / 2).ravel()
    weights = ((hi - lo) / 2 * w).ravel()
    return nodes, weights


_Q_RULE = _panel_rule(128, 24)


def _ppp_q_vector(theta: float, alpha: float, b: np.ndarray) -> np.ndarray:
    """``Q_b`` for many ``b`` at once on a fixed composite rule in ``s``."""
    d = 2.0 / alpha
    big_y = math.log1p(theta)
    p = 1.0 / (1.0 - d)
    s, ws = _Q_RULE
    y = big_y * s ** p
    kernel = d * theta ** d * np.exp(y) * np.expm1(y) ** (-d - 1.0) * big_y * p * s ** (p - 1.0)
    b = np.asarray(b, dtype=complex)
    vals = -np.expm1(-np.multiply.outer(b, y)) * kernel
    return math.pi * (vals @ ws)


def imaginary_moments(model: NetworkModel, channel: ChannelModel, theta: float, t) -> np.ndarray:
    """``M_{it}(theta)`` for an array of real ``t`` (vectorised).

    Uses closed forms wherever they exist: the Gamma-ratio interference
    integral for MCP and the noise Taylor series for PPP.
    """
    t = np.asarray(t, dtype=float)
    b = 1j * t
    ch = _effective_channel(model, channel)
    a = ch.alpha
    if isinstance(model, (PPP, KTier)):
        lam = _interferer_density(model, channel)
        q = _ppp_q_vector(theta, a, b)
        eps = theta * ch.sigma2 / (ch.pt * (math.pi * lam) ** (a / 2))
        return _laplace_noise_series(1.0 + q / math.pi, b * eps, a)
    if isinstance(model, Bipolar):
        return np.exp(_bipolar_log_moment(model, ch, theta, b))
    if isinstance(model, MCP):
        return _mcp_outer(model, ch, theta, b, _mcp_c_closed(ch.delta, b))
    raise DomainError("imaginary moments are not available for this model")


# ---------------------------------------------------------------------------
# Gil-Pelaez inversion
# ---------------------------------------------------------------------------

def gilpelaez_nodes(quad: QuadratureSpec = DEFAULT_QUAD):
    """Composite 16-point Gauss-Legendre rule on ``[0, t_max]``, graded
    towards ``t = 0`` (panel edges ``t_max * u^1.5``)."""
    n_panels = max(1, quad.gilpelaez_nodes // 16)
    s, w = _panel_rule(n_panels, 16, power=1.5)
    return s * quad.gilpelaez_t_max, w * quad.gilpelaez_t_max


def gilpelaez_from_moments(t, weights, moments, gamma) -> tuple[np.ndarray, np.ndarray]:
    """``1/2 + 1/pi int Im(exp(-it log gamma) M_it) / t dt`` for each gamma.

    Returns the values (clamped to [0, 1]) and a tail error estimate, the
    magnitude of the contribution from the upper half of the ``t`` range.
    """
    t = np.asarray(t, float)
    gam = np.atleast_1d(np.asarray(gamma, float))
    phase = np.exp(-1j * np.outer(np.log(gam), t))
    integrand = np.imag(phase * moments) / t
    val = 0.5 + integrand @ weights / math.pi
    t_half = t.max() / 2
    tail = np.abs(integrand[:, t > t_half] @ weights[t > t_half]) / math.pi
    return np.clip(val, 0.0, 1.0), tail


def exact_meta_gilpelaez_curve(model: NetworkModel, channel: ChannelModel, theta: float, gammas,
                               quad: QuadratureSpec = DEFAULT_QUAD, max_error: float = 0.05):
    """Gil-Pelaez values at many ``gamma`` sharing one moment evaluation."""
    t, w = gilpelaez_nodes(quad)
    m = imaginary_moments(model, channel, theta, t)
    vals, err = gilpelaez_from_moments(t, w, m, gammas)
    if np.any(err > max_error):
        raise ConvergenceError("Gil-Pelaez integral has not settled by t_max",
                               {"theta": theta, "tail": float(err.max()),
                                "t_max": quad.gilpelaez_t_max})
    return vals, err


def exact_meta_gilpelaez(model: NetworkModel, channel: ChannelModel, query: MetaQuery,
                         quad: QuadratureSpec = DEFAULT_QUAD, return_error: bool = False):
    """Meta distribution by Gil-Pelaez inversion of the imaginary moments."""
    vals, err = exact_meta_gilpelaez_curve(model, channel, query.theta, [query.gamma], quad)
    return (float(vals[0]), float(err[0])) if return_error else float(vals[0])


# ---------------------------------------------------------------------------
# Beta approximation and closed forms
# ---------------------------------------------------------------------------

def beta_parameters(m1: float, m2: float) -> tuple[float, float]:
    """Beta parameters matching mean ``m1`` and second moment ``m2``."""
    var = m2 - m1 * m1
    if not var > 1e-14:
        raise DomainError("degenerate moments (M2 <= M1^2)")
    a = m1 * (m1 - m2) / var
    b = (1.0 - m1) * (m1 - m2) / var
    return a, b


def beta_meta_from_moments(m1: float, m2: float, gamma: float) -> float:
    try:
        a, b = beta_parameters(m1, m2)
    except DomainError:
        WARNING_COUNTS["degenerate_beta"] += 1
        warnings.warn("M2 <= M1^2; beta fit replaced by a step at M1", DegenerateMomentsWarning,
                      stacklevel=3)
        return 1.0 if m1 > gamma else 0.0
    return 1.0 - specfun.reg_inc_beta(gamma, a, b)


def beta_meta(model: NetworkModel, channel: ChannelModel, query: MetaQuery,
              quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Beta approximation ``1 - I_gamma(a, b)`` from ``M_1`` and ``M_2``."""
    m1 = moment_b(model, channel, query.theta, 1, quad).real
    m2 = moment_b(model, channel, query.theta, 2, quad).real
    return beta_meta_from_moments(m1, m2, query.gamma)


def nearest_only_meta(channel: ChannelModel, query: MetaQuery) -> float:
    """SIR meta distribution with only the nearest interferer.

    ``(R0/R1)^2`` is uniform on (0, 1) under nearest association, so
    ``P(Ps > gamma) = min(1, ((1-gamma)/(gamma theta))^delta)``.
    """
    x = (1.0 - query.gamma) / (query.gamma * query.theta)
    return min(1.0, x ** channel.delta)


# ---------------------------------------------------------------------------
# Grid evaluation
# ---------------------------------------------------------------------------

def evaluate_curve(model: NetworkModel, channel: ChannelModel, thetas, gammas, method: str,
                   quad: QuadratureSpec = DEFAULT_QUAD, j: int = 1,
                   mean_field: str = "auto") -> MetaCurve:
    """Evaluate an analytic method on the product grid ``thetas x gammas``."""
    thetas = [float(x) for x in thetas]
    gammas = [float(x) for x in gammas]
    grid, values = [], []
    for th in thetas:
        if method == "exact_gilpelaez":
            vals, _ = exact_meta_gilpelaez_curve(model, channel, th, gammas, quad)
            row = [float(v) for v in vals]
        elif method == "beta":
            m1 = moment_b(model, channel, th, 1, quad).real
            m2 = moment_b(model, channel, th, 2, quad).real
            row = [beta_meta_from_moments(m1, m2, g) for g in gammas]
        else:
            row = []
            for g in gammas:
                q = MetaQuery(th, g)
                if method == "proposed":
                    row.append(proposed_meta(model, channel, q, quad, mean_field))
                elif method == "proposed_j":
                    row.append(proposed_meta_j(model, channel, q, j, quad))
                elif method == "nearest_only":
                    row.append(nearest_only_meta(channel, q))
                else:
                    raise DomainError(f"method {method!r} is not analytic")
        grid.extend((th, g) for g in gammas)
        values.extend(row)
    return MetaCurve(method, grid, values, fingerprint(model, channel, quad),
                     extra={"j": j, "mean_field": mean_field})
