"""Network models, point-process samplers and distance laws.

Units are kilometres and watts throughout: densities are per km^2 (per km
for points on a line), distances in km, powers in W.

The five spatial models are small frozen dataclasses (:class:`PPP`,
:class:`Bipolar`, :class:`MCP`, :class:`KTier`, :class:`PLCP`).  For each
one :func:`distance_law` returns an object exposing the distance
distributions the analytic engines need: the density of the distance to the
nearest interferer ``R1`` and the conditional CDF of the serving distance
``R0`` given ``R1``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
from scipy import integrate

from .errors import DomainError

__all__ = [
    "ChannelModel",
    "PPP",
    "Bipolar",
    "MCP",
    "KTier",
    "PLCP",
    "NetworkModel",
    "Realization",
    "NetworkSample",
    "DistanceLaw",
    "PPPLaw",
    "BipolarLaw",
    "MCPLaw",
    "PLCPLaw",
    "distance_law",
    "map_ktier",
    "total_density",
    "default_window_radius",
    "sample_network",
    "sample_realization",
    "ppp_joint_pdf_r0_r1",
    "conditional_cdf_r0_given_r1",
    "pdf_r1",
    "plcp_void_ccdf",
    "CLAMP_COUNTS",
]

# incremented whenever a law evaluation is clamped back into [0, 1]
CLAMP_COUNTS: Counter = Counter()


# ---------------------------------------------------------------------------
# Model types
# ---------------------------------------------------------------------------

def _positive(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be a positive finite number, got {value!r}")


@dataclass(frozen=True)
class ChannelModel:
    """Path loss exponent, transmit power (W) and noise power (W)."""

    alpha: float = 4.0
    pt: float = 10.0
    sigma2: float = 1e-9

    def __post_init__(self):
        if not (self.alpha > 2 and math.isfinite(self.alpha)):
            raise DomainError(f"alpha must exceed 2, got {self.alpha!r}")
        _positive("pt", self.pt)
        if not (self.sigma2 >= 0 and math.isfinite(self.sigma2)):
            raise DomainError(f"sigma2 must be >= 0, got {self.sigma2!r}")

    @property
    def delta(self) -> float:
        return 2.0 / self.alpha

    def with_power(self, pt: float) -> "ChannelModel":
        return ChannelModel(self.alpha, pt, self.sigma2)


@dataclass(frozen=True)
class PPP:
    """Homogeneous PPP of base stations, nearest-BS association."""

    lam: float
    kind = "ppp"

    def __post_init__(self):
        _positive("lam", self.lam)


@dataclass(frozen=True)
class Bipolar:
    """Transmitter PPP, each with a dedicated receiver at distance ``R``."""

    lam: float
    R: float
    kind = "bipolar"

    def __post_init__(self):
        _positive("lam", self.lam)
        _positive("R", self.R)


@dataclass(frozen=True)
class MCP:
    """Cluster centres (BSs) form a PPP; users are uniform in a disk of
    radius ``rc`` around their own centre and are served by it."""

    lam: float
    rc: float
    kind = "mcp"

    def __post_init__(self):
        _positive("lam", self.lam)
        _positive("rc", self.rc)


@dataclass(frozen=True)
class KTier:
    """Independent PPP tiers given as ``((lam_1, pt_1), (lam_2, pt_2), ...)``.

    Tier 1 is the reference tier for the power mapping.
    """

    tiers: tuple
    kind = "ktier"

    def __post_init__(self):
        tiers = tuple((float(l), float(p)) for l, p in self.tiers)
        if not tiers:
            raise DomainError("KTier needs at least one tier")
        for lam, pt in tiers:
            _positive("tier density", lam)
            _positive("tier power", pt)
        object.__setattr__(self, "tiers", tiers)


@dataclass(frozen=True)
class PLCP:
    """Poisson line Cox process.

    ``lambda_l`` is the intensity of the line process in its representation
    space, so the mean line length per unit area is ``pi * lambda_l``;
    ``lambda_p`` is the point density on each line.
    """

    lambda_l: float
    lambda_p: float
    kind = "plcp"

    def __post_init__(self):
        _positive("lambda_l", self.lambda_l)
        _positive("lambda_p", self.lambda_p)

    @property
    def mu_l(self) -> float:
        return math.pi * self.lambda_l


NetworkModel = Union[PPP, Bipolar, MCP, KTier, PLCP]


def total_density(model: NetworkModel) -> float:
    """BS (or transmitter) intensity per km^2."""
    if isinstance(model, (PPP, Bipolar, MCP)):
        return model.lam
    if isinstance(model, KTier):
        return sum(lam for lam, _ in model.tiers)
    if isinstance(model, PLCP):
        return math.pi * model.lambda_l * model.lambda_p
    raise DomainError(f"unknown network model {model!r}")


def map_ktier(model: KTier, channel: ChannelModel) -> tuple[float, float]:
    """Equivalent single-tier density and reference power.

    Scaling each tier-i distance by ``(p_1/p_i)^(1/alpha)`` turns tier i into
    a PPP of density ``(p_i/p_1)^delta * lam_i`` with power ``p_1``; the
    superposition is again a PPP.
    """
    if not isinstance(model, KTier):
        raise DomainError("map_ktier needs a KTier model")
    if not model.tiers:
        raise DomainError("empty tier list")
    p_ref = model.tiers[0][1]
    lam_eq = sum((pt / p_ref) ** channel.delta * lam for lam, pt in model.tiers)
    return lam_eq, p_ref


def default_window_radius(model: NetworkModel, channel: ChannelModel | None = None,
                          multiplier: float = 30.0) -> float:
    """Simulation window radius (km).

    Smallest of ``multiplier / sqrt(lambda)`` and the radius beyond which the
    mean far-field interference ``p_t G(w)`` drops below ``1e-4 sigma^2``.
    """
    lam = total_density(model)
    w = multiplier / math.sqrt(lam)
    if channel is not None and channel.sigma2 > 0:
        pt = max(p for _, p in model.tiers) if isinstance(model, KTier) else channel.pt
        # p_t * 2 pi lam w^(2-a)/(a-2) < 1e-4 sigma2
        a = channel.alpha
        w_noise = (pt * 2 * math.pi * lam / ((a - 2) * 1e-4 * channel.sigma2)) ** (1 / (a - 2))
        w = min(w, w_noise)
    return w


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Realization:
    """One network realization seen from a user at the origin."""

    points: np.ndarray          # (n, 2) km
    powers: np.ndarray          # (n,) W
    serving_index: int
    window_radius: float
    rule: str = "nearest"
    line_rho: np.ndarray = field(default_factory=lambda: np.empty(0))
    line_phi: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def distances(self) -> np.ndarray:
        return np.hypot(self.points[:, 0], self.points[:, 1])

    @property
    def serving_distance(self) -> float:
        return float(self.distances[self.serving_index])

    @property
    def interferer_distances(self) -> np.ndarray:
        d = self.distances
        return np.delete(d, self.serving_index)


@dataclass
class NetworkSample:
    """BS layout in a disk window, before any user is placed.

    ``line_rho`` / ``line_phi`` hold the PLCP lines (offset, normal angle);
    ``line_of_point`` maps each point to its line.
    """

    points: np.ndarray
    powers: np.ndarray
    window_radius: float
    line_rho: np.ndarray = field(default_factory=lambda: np.empty(0))
    line_phi: np.ndarray = field(default_factory=lambda: np.empty(0))
    line_of_point: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))


def _ppp_disk(rng: np.random.Generator, lam: float, w: float) -> np.ndarray:
    n = rng.poisson(lam * math.pi * w * w)
    r = w * np.sqrt(rng.random(n))
    ang = rng.random(n) * (2 * math.pi)
    return np.column_stack((r * np.cos(ang), r * np.sin(ang)))


def _uniform_disk(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    ang = rng.random(n) * (2 * math.pi)
    return np.column_stack((r * np.cos(ang), r * np.sin(ang)))


def _plcp_lines(rng, model: PLCP, w: float):
    # signed offsets in [-w, w] with intensity pi*lambda_l, undirected normals
    n = rng.poisson(model.mu_l * 2 * w)
    rho = rng.uniform(-w, w, n)
    phi = rng.uniform(0.0, math.pi, n)
    return rho, phi


def _points_on_lines(rng, rho, phi, lambda_p: float, w: float):
    half = np.sqrt(np.maximum(w * w - rho * rho, 0.0))
    counts = rng.poisson(lambda_p * 2 * half)
    idx = np.repeat(np.arange(rho.size), counts)
    t = rng.uniform(-1.0, 1.0, idx.size) * half[idx]
    c, s = np.cos(phi[idx]), np.sin(phi[idx])
    x = rho[idx] * c - t * s
    y = rho[idx] * s + t * c
    return np.column_stack((x, y)), idx


def sample_network(model: NetworkModel, window_radius: float,
                   rng: np.random.Generator) -> NetworkSample:
    """BS layout in the disk of radius ``window_radius`` (no typical user).

    For MCP the points are the cluster centres and for Bipolar the
    transmitters; PLCP lines are a stationary Poisson line process.
    """
    w = float(window_radius)
    if not w > 0:
        raise DomainError(f"window radius must be positive, got {window_radius!r}")
    if isinstance(model, (PPP, Bipolar, MCP)):
        pts = _ppp_disk(rng, model.lam, w)
        return NetworkSample(pts, np.full(len(pts), np.nan), w)
    if isinstance(model, KTier):
        chunks, pw = [], []
        for lam, pt in model.tiers:
            p = _ppp_disk(rng, lam, w)
            chunks.append(p)
            pw.append(np.full(len(p), pt))
        return NetworkSample(np.vstack(chunks), np.concatenate(pw), w)
    if isinstance(model, PLCP):
        rho, phi = _plcp_lines(rng, model, w)
        pts, idx = _points_on_lines(rng, rho, phi, model.lambda_p, w)
        return NetworkSample(pts, np.full(len(pts), np.nan), w, rho, phi, idx)
    raise DomainError(f"unknown network model {model!r}")


def sample_realization(model: NetworkModel, window_radius: float, rng_seed: int,
                       channel: ChannelModel | None = None) -> Realization:
    """Realization seen from a typical user at the origin.

    PPP/KTier/PLCP serve with the strongest average received power (the
    nearest point for single-power models); Bipolar adds the dedicated
    transmitter at distance ``R`` and MCP the user's own cluster centre,
    uniform in the disk of radius ``rc``.  PLCP is sampled under its Palm
    distribution: a line through the origin is always present.
    Transmit powers default to ``channel.pt`` (1.0 if no channel given).
    """
    if not window_radius > 0:
        raise DomainError(f"window radius must be positive, got {window_radius!r}")
    rng = np.random.default_rng(rng_seed)
    pt = channel.pt if channel is not None else 1.0
    w = float(window_radius)

    if isinstance(model, PLCP):
        rho, phi = _plcp_lines(rng, model, w)
        rho = np.concatenate(([0.0], rho))
        phi = np.concatenate(([rng.uniform(0.0, math.pi)], phi))
        pts, idx = _points_on_lines(rng, rho, phi, model.lambda_p, w)
        net = NetworkSample(pts, np.full(len(pts), pt), w, rho, phi, idx)
    else:
        net = sample_network(model, w, rng)
        if not isinstance(model, KTier):
            net.powers = np.full(len(net.points), pt)

    if isinstance(model, Bipolar):
        ang = rng.uniform(0, 2 * math.pi)
        own = np.array([[model.R * math.cos(ang), model.R * math.sin(ang)]])
        pts = np.vstack((own, net.points))
        return Realization(pts, np.full(len(pts), pt), 0, w, rule="dedicated")
    if isinstance(model, MCP):
        own = _uniform_disk(rng, 1, model.rc)
        pts = np.vstack((own, net.points))
        return Realization(pts, np.full(len(pts), pt), 0, w, rule="cluster")

    lines = {"line_rho": net.line_rho, "line_phi": net.line_phi}
    if len(net.points) == 0:
        return Realization(net.points, net.powers, -1, w, **lines)
    d = np.hypot(net.points[:, 0], net.points[:, 1])
    if isinstance(model, KTier):
        alpha = channel.alpha if channel is not None else 4.0
        serving = int(np.argmax(np.log(net.powers) - alpha * np.log(d)))
        return Realization(net.points, net.powers, serving, w, rule="max-power")
    return Realization(net.points, net.powers, int(np.argmin(d)), w, **lines)


# ---------------------------------------------------------------------------
# Distance laws
# ---------------------------------------------------------------------------

class DistanceLaw:
    """Distance distributions used by the dominant-interferer engine.

    Subclasses provide ``pdf_r1``, ``ccdf_r1``, ``cond_cdf_r0`` and
    ``cdf_r0``; ``cap(r1)`` is the serving distance at which
    ``cond_cdf_r0`` saturates (used to split quadrature intervals).
    """

    #: density (per km^2) of interferers for the mean-field term
    interferer_density: float

    def pdf_r1(self, r1):
        raise NotImplementedError

    def ccdf_r1(self, r1):
        raise NotImplementedError

    def cond_cdf_r0(self, r0, r1):
        raise NotImplementedError

    def cdf_r0(self, r0):
        raise NotImplementedError

    def cap(self, r1):
        return r1

    def r1_upper(self, tail: float = 1e-12) -> float:
        """Radius beyond which ``P(R1 > r)`` is below ``tail``."""
        r = 1.0 / math.sqrt(self.interferer_density)
        while self.ccdf_r1(r) > tail:
            r *= 1.5
        return r

    def check_normalization(self, tol: float = 1e-6) -> float:
        """Integral of ``pdf_r1`` over its support; raises if off by > tol."""
        upper = self.r1_upper(1e-14)
        val, _ = integrate.quad(lambda r: float(self.pdf_r1(r)), 0.0, upper,
                                limit=500, epsabs=1e-13, epsrel=1e-11)
        if abs(val - 1.0) > tol:
            raise AssertionError(f"pdf_r1 integrates to {val!r}")
        return val


def _check_r(name, r, strict=True):
    arr = np.asarray(r, dtype=float)
    bad = arr <= 0 if strict else arr < 0
    if np.any(bad) or np.any(~np.isfinite(arr)):
        raise DomainError(f"{name} must be {'positive' if strict else 'nonnegative'}, got {r!r}")
    return arr


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


class PPPLaw(DistanceLaw):
    """Nearest-BS association in a PPP: ``R0 < R1`` are the two nearest points."""

    def __init__(self, lam: float):
        self.lam = float(lam)
        self.interferer_density = self.lam

    def joint_pdf(self, r0, r1):
        r0 = np.asarray(r0, float)
        r1 = np.asarray(r1, float)
        if np.any(r0 < 0) or np.any(r1 < 0):
            raise DomainError("distances must be nonnegative")
        pl = math.pi * self.lam
        val = (2 * pl) ** 2 * r0 * r1 * np.exp(-pl * r1 * r1)
        return _out(np.where(r0 <= r1, val, 0.0))

    def pdf_r1(self, r1):
        r1 = np.asarray(r1, float)
        pl = math.pi * self.lam
        return _out(2 * pl * pl * r1 ** 3 * np.exp(-pl * r1 * r1))

    def ccdf_r1(self, r1):
        x = math.pi * self.lam * np.asarray(r1, float) ** 2
        return _out((1 + x) * np.exp(-x))

    def cond_cdf_r0(self, r0, r1):
        r0 = np.asarray(r0, float)
        return _out(np.clip((r0 / r1) ** 2, 0.0, 1.0))

    def cdf_r0(self, r0):
        return _out(-np.expm1(-math.pi * self.lam * np.asarray(r0, float) ** 2))


class _FirstContactR1(DistanceLaw):
    """``R1`` is the first-contact distance of a PPP of interferers."""

    def __init__(self, lam: float):
        self.lam = float(lam)
        self.interferer_density = self.lam

    def pdf_r1(self, r1):
        r1 = np.asarray(r1, float)
        pl = math.pi * self.lam
        return _out(2 * pl * r1 * np.exp(-pl * r1 * r1))

    def ccdf_r1(self, r1):
        return _out(np.exp(-math.pi * self.lam * np.asarray(r1, float) ** 2))


class BipolarLaw(_FirstContactR1):
    """Serving distance fixed at ``R``; its CDF is a unit step at ``R``."""

    def __init__(self, lam: float, R: float):
        super().__init__(lam)
        self.R = float(R)

    def cond_cdf_r0(self, r0, r1=None):
        return _out(np.where(np.asarray(r0, float) < self.R, 0.0, 1.0))

    cdf_r0 = cond_cdf_r0

    def cap(self, r1):
        return self.R


class MCPLaw(_FirstContactR1):
    """Serving distance uniform in the cluster disk, independent of ``R1``."""

    def __init__(self, lam: float, rc: float):
        super().__init__(lam)
        self.rc = float(rc)

    def cond_cdf_r0(self, r0, r1=None):
        return _out(np.clip((np.asarray(r0, float) / self.rc) ** 2, 0.0, 1.0))

    cdf_r0 = cond_cdf_r0

    def cap(self, r1):
        return self.rc


_GL_NODES = 64


def _half_pi_rule(n=_GL_NODES):
    x, w = np.polynomial.legendre.leggauss(n)
    t = (x + 1.0) * (math.pi / 4.0)
    return t, w * (math.pi / 4.0)


class PLCPLaw(DistanceLaw):
    """Palm distance laws of the Poisson line Cox process.

    The user sits on a typical line through the origin.  With ``u(rho) =
    sqrt(r^2 - rho^2)`` every chord integral is rewritten through
    ``rho = r sin t`` so the integrands are smooth on ``[0, pi/2]`` and a
    fixed Gauss-Legendre rule evaluates them to machine precision.

    The void probability is ``L(r) = exp(-E(r))`` with
    ``E(r) = 2 lp r + 2 pi ll int_0^r (1 - exp(-2 lp u)) drho``.
    Conditioning on the line process and using Campbell-Mecke, the joint
    law of the two nearest points satisfies

        P(R0 <= a, R1 > b) = lp L(b) [2a + 4 pi ll J(a, b)],
        J(a, b) = int_0^a sqrt(a^2 - rho^2) exp(-2 lp sqrt(b^2 - rho^2)) drho,

    from which ``f_R1`` and ``F_{R0|R1}`` follow by differentiating in ``b``.
    """

    def __init__(self, model: PLCP, n_nodes: int = _GL_NODES):
        self.model = model
        self.lp = float(model.lambda_p)
        self.ll = float(model.lambda_l)
        self.interferer_density = math.pi * self.ll * self.lp
        self._t, self._w = _half_pi_rule(n_nodes)
        self._cos = np.cos(self._t)
        self._sin = np.sin(self._t)

    # -- building blocks ---------------------------------------------------
    def _quad(self, f):
        return f @ self._w

    def exponent(self, r, s=None):
        """``E(r)`` at Laplace variable ``s`` (default ``lambda_p``)."""
        s = self.lp if s is None else s
        r = np.asarray(r, float)[..., None]
        inner = self._quad(-np.expm1(-2 * s * r * self._cos) * r * self._cos)
        return 2 * s * r[..., 0] + 2 * math.pi * self.ll * inner

    def exponent_dr(self, r):
        """``dE/dr``; ``f_R0 = L * dE/dr``."""
        r = np.asarray(r, float)[..., None]
        a_int = self._quad(r * np.exp(-2 * self.lp * r * self._cos))
        return 2 * self.lp + 4 * math.pi * self.ll * self.lp * a_int

    def void_ccdf(self, r):
        r = _check_r("r", r, strict=False)
        return _out(np.exp(-self.exponent(r)))

    def chord_moment(self, r):
        """``D(r) = -d log L / ds`` so that ``P(N(B_r) = 1) = lp D L``."""
        r = np.asarray(r, float)[..., None]
        inner = self._quad(r * r * self._cos ** 2 * np.exp(-2 * self.lp * r * self._cos))
        return 2 * r[..., 0] + 4 * math.pi * self.ll * inner

    def _j_k(self, a, b):
        a = np.asarray(a, float)[..., None]
        b = np.asarray(b, float)[..., None]
        root = np.sqrt(np.maximum(b * b - (a * self._sin) ** 2, 0.0))
        e = np.exp(-2 * self.lp * root)
        ac2 = (a * self._cos) ** 2
        j = self._quad(ac2 * e)
        with np.errstate(divide="ignore", invalid="ignore"):
            kk = np.where(root > 0, ac2 / root, a * self._cos)
        k = self._quad(kk * e)
        return j, k

    def _g(self, a, b):
        b_arr = np.asarray(b, float)
        j, k = self._j_k(a, b)
        er = self.exponent_dr(b_arr)
        return (er * (2 * np.asarray(a, float) + 4 * math.pi * self.ll * j)
                + 8 * math.pi * self.ll * self.lp * b_arr * k)

    # -- public law --------------------------------------------------------
    def pdf_r0(self, r0):
        r0 = np.asarray(r0, float)
        return _out(np.exp(-self.exponent(r0)) * self.exponent_dr(r0))

    def cdf_r0(self, r0):
        return _out(-np.expm1(-self.exponent(np.asarray(r0, float))))

    def ccdf_r1(self, r1):
        r1 = np.asarray(r1, float)
        return _out(np.exp(-self.exponent(r1)) * (1 + self.lp * self.chord_moment(r1)))

    def pdf_r1(self, r1):
        r1 = np.asarray(r1, float)
        return _out(self.lp * np.exp(-self.exponent(r1)) * self._g(r1, r1))

    def cond_cdf_r0(self, r0, r1):
        r0 = np.asarray(r0, float)
        r1b = np.broadcast_to(np.asarray(r1, float), np.broadcast(r0, r1).shape)
        a = np.minimum(np.broadcast_to(r0, r1b.shape), r1b)
        val = self._g(a, r1b) / self._g(r1b, r1b)
        bad = (val < -1e-12) | (val > 1 + 1e-12)
        if np.any(bad):
            CLAMP_COUNTS["plcp_cond_cdf"] += int(np.count_nonzero(bad))
        return _out(np.clip(np.where(r0 >= r1b, 1.0, val), 0.0, 1.0))


def distance_law(model: NetworkModel, channel: ChannelModel | None = None) -> DistanceLaw:
    """Distance law object for ``model`` (KTier needs ``channel`` for alpha)."""
    if isinstance(model, PPP):
        return PPPLaw(model.lam)
    if isinstance(model, KTier):
        if channel is None:
            raise DomainError("KTier distance laws need the path-loss exponent")
        return PPPLaw(map_ktier(model, channel)[0])
    if isinstance(model, Bipolar):
        return BipolarLaw(model.lam, model.R)
    if isinstance(model, MCP):
        return MCPLaw(model.lam, model.rc)
    if isinstance(model, PLCP):
        return PLCPLaw(model)
    raise DomainError(f"unknown network model {model!r}")


# -- module-level operation surface ------------------------------------------

def ppp_joint_pdf_r0_r1(model: PPP, r0: float, r1: float) -> float:
    """Joint density of the nearest and second-nearest distances."""
    if not isinstance(model, PPP):
        raise DomainError("joint density is defined for the PPP model")
    if r0 < 0 or r1 < 0:
        raise DomainError("distances must be nonnegative")
    return PPPLaw(model.lam).joint_pdf(r0, r1)


def conditional_cdf_r0_given_r1(model: NetworkModel, r0, r1, channel=None):
    """``P(R0 <= r0 | R1 = r1)``."""
    _check_r("r1", r1)
    _check_r("r0", r0, strict=False)
    return distance_law(model, channel).cond_cdf_r0(r0, r1)


def pdf_r1(model: NetworkModel, r1, channel=None):
    """Density of the distance to the nearest interferer."""
    _check_r("r1", r1)
    return distance_law(model, channel).pdf_r1(r1)


def plcp_void_ccdf(model: PLCP, r) -> float:
    """Palm void probability ``P(R0 > r)`` of the PLCP."""
    if not isinstance(model, PLCP):
        raise DomainError("plcp_void_ccdf needs a PLCP model")
    return PLCPLaw(model).void_ccdf(r)
