"""Monte-Carlo ground truth and curve comparison.

Each realization drops a BS layout in a disk of radius ``w`` and a batch of
users in the inner disk of radius ``w/2``.  Because fading is Rayleigh, the
conditional success probability of every link is available in closed form
(:func:`metadist.success_probability_from_ratios`), so only the geometry is
sampled.  A fading-draw mode estimates the same quantity by brute force and
exists to validate that shortcut.

Realizations are keyed by ``(seed, index)`` and can run on a thread pool;
results are merged by index so the output does not depend on scheduling.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError
from .geometry import (
    MCP,
    PLCP,
    Bipolar,
    ChannelModel,
    KTier,
    NetworkModel,
    default_window_radius,
    map_ktier,
    sample_network,
)
from .metadist import MetaCurve, success_probability_from_ratios

__all__ = [
    "DEFAULT_GAMMA_GRID",
    "SimulationConfig",
    "EmpiricalMeta",
    "ComparisonReport",
    "LinkBatch",
    "simulate_links",
    "simulate_meta",
    "simulate_meta_multi",
    "fading_draw_success",
    "mapped_serving_distances",
    "kl_divergence",
    "sup_gap",
    "compare",
    "thread_count",
]

DEFAULT_GAMMA_GRID = tuple(round(0.01 * i, 2) for i in range(1, 100))


def thread_count() -> int:
    """Worker threads, capped by ``METASINR_THREADS`` (default 1)."""
    raw = os.environ.get("METASINR_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"METASINR_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


@dataclass(frozen=True)
class SimulationConfig:
    """Monte-Carlo effort and reproducibility settings.

    ``window_radius=None`` selects the default from
    :func:`geometry.default_window_radius`.  ``fading_draws > 0`` switches to
    brute-force fading averages.
    """

    n_realizations: int = 100
    n_links_per_realization: int = 500
    window_radius: float | None = None
    seed: int = 0
    gamma_grid: tuple = DEFAULT_GAMMA_GRID
    fading_draws: int = 0
    max_resample: int = 50

    def __post_init__(self):
        if self.n_realizations < 1 or self.n_links_per_realization < 1:
            raise ConfigurationError("need at least one realization and one link")
        g = np.asarray(self.gamma_grid, dtype=float)
        if g.ndim != 1 or g.size == 0 or np.any(g <= 0) or np.any(g >= 1) or np.any(np.diff(g) <= 0):
            raise ConfigurationError("gamma_grid must be strictly increasing inside (0, 1)")
        if self.window_radius is not None and not self.window_radius > 0:
            raise ConfigurationError("window_radius must be positive")
        object.__setattr__(self, "gamma_grid", tuple(float(x) for x in g))

    def window_for(self, model: NetworkModel, channel: ChannelModel) -> float:
        if self.window_radius is not None:
            return float(self.window_radius)
        return default_window_radius(model, channel)


@dataclass
class EmpiricalMeta:
    """Per-link success probabilities and their empirical CCDF."""

    success_probs: np.ndarray
    theta: float
    gamma_grid: np.ndarray
    ccdf: np.ndarray
    std_err: np.ndarray
    rejections: int = 0

    @classmethod
    def from_samples(cls, ps, theta, gamma_grid, rejections=0) -> "EmpiricalMeta":
        ps = np.asarray(ps, dtype=float)
        g = np.asarray(gamma_grid, dtype=float)
        srt = np.sort(ps)
        ccdf = 1.0 - np.searchsorted(srt, g, side="right") / ps.size
        se = np.sqrt(ccdf * (1.0 - ccdf) / ps.size)
        return cls(ps, float(theta), g, ccdf, se, int(rejections))

    @property
    def n_samples(self) -> int:
        return int(self.success_probs.size)

    def ccdf_at(self, gamma) -> np.ndarray:
        srt = np.sort(self.success_probs)
        return 1.0 - np.searchsorted(srt, np.asarray(gamma, float), side="right") / srt.size

    def as_curve(self) -> MetaCurve:
        return MetaCurve("simulation", [(self.theta, float(g)) for g in self.gamma_grid],
                         [float(v) for v in self.ccdf], std_err=[float(s) for s in self.std_err])


# ---------------------------------------------------------------------------
# Link generation
# ---------------------------------------------------------------------------

@dataclass
class LinkBatch:
    """Geometry of a batch of links in one realization.

    ``noise`` is ``sigma^2 r0^alpha / p0`` and ``ratios`` holds
    ``(p_i / p0) (r0 / r_i)^alpha`` for every other transmitter (0 for the
    serving one).
    """

    noise: np.ndarray
    ratios: np.ndarray
    serving_distance: np.ndarray
    serving_power: np.ndarray
    rejections: int = 0


def _uniform_disk(rng, n, radius):
    r = radius * np.sqrt(rng.random(n))
    ang = rng.random(n) * (2 * math.pi)
    return np.column_stack((r * np.cos(ang), r * np.sin(ang)))


def _sq_dist(users, points):
    dx = users[:, 0:1] - points[None, :, 0]
    dy = users[:, 1:2] - points[None, :, 1]
    return dx * dx + dy * dy


def _users_on_lines(rng, net, n, radius):
    half = np.sqrt(np.maximum(radius * radius - net.line_rho ** 2, 0.0))
    total = half.sum()
    if total <= 0:
        return None
    idx = rng.choice(half.size, size=n, p=half / total)
    t = rng.uniform(-1.0, 1.0, n) * half[idx]
    c, s = np.cos(net.line_phi[idx]), np.sin(net.line_phi[idx])
    rho = net.line_rho[idx]
    return np.column_stack((rho * c - t * s, rho * s + t * c))


def _drop_users(model, rng, net, n, inner):
    if isinstance(model, PLCP):
        return _users_on_lines(rng, net, n, inner)
    return _uniform_disk(rng, n, inner)


def _link_batch(model: NetworkModel, channel: ChannelModel, w: float, n: int,
                rng: np.random.Generator, max_resample: int) -> LinkBatch:
    a = channel.alpha
    inner = w / 2.0
    h = a / 2.0

    if isinstance(model, Bipolar):
        if model.R > inner:
            raise ConfigurationError("link distance exceeds half the window radius")
        net = sample_network(model, w, rng)
        rx = _uniform_disk(rng, n, inner)
        d2 = _sq_dist(rx, net.points)
        r0 = np.full(n, model.R)
        ratios = (r0[:, None] ** 2 / d2) ** h
        noise = channel.sigma2 * r0 ** a / channel.pt
        return LinkBatch(noise, ratios, r0, np.full(n, channel.pt))

    for _ in range(max_resample):
        net = sample_network(model, w, rng)
        if len(net.points) == 0:
            continue
        if isinstance(model, MCP):
            inside = np.flatnonzero(np.hypot(net.points[:, 0], net.points[:, 1]) <= inner - model.rc)
            if inside.size == 0:
                continue
            own = rng.choice(inside, size=n)
            users = net.points[own] + _uniform_disk(rng, n, model.rc)
            d2 = _sq_dist(users, net.points)
            rows = np.arange(n)
            r0sq = d2[rows, own]
            ratios = (r0sq[:, None] / d2) ** h
            ratios[rows, own] = 0.0
            r0 = np.sqrt(r0sq)
            return LinkBatch(channel.sigma2 * r0 ** a / channel.pt, ratios, r0,
                             np.full(n, channel.pt))

        users = _drop_users(model, rng, net, n, inner)
        if users is None:
            continue
        powers = net.powers if isinstance(model, KTier) else np.full(len(net.points), channel.pt)
        log_p = np.log(powers)
        rejected = 0
        for _attempt in range(max_resample + 1):
            d2 = _sq_dist(users, net.points)
            # strongest average received power; nearest point for equal powers
            score = log_p[None, :] - h * np.log(d2)
            serve = np.argmax(score, axis=1)
            rows = np.arange(users.shape[0])
            r0sq = d2[rows, serve]
            bad = r0sq > inner * inner
            if not np.any(bad):
                break
            rejected += int(bad.sum())
            repl = _drop_users(model, rng, net, int(bad.sum()), inner)
            users = users.copy()
            users[bad] = repl
        else:
            raise ConfigurationError("serving distance keeps exceeding half the window radius; "
                                     "enlarge the window")
        p0 = powers[serve]
        ratios = (powers[None, :] / p0[:, None]) * (r0sq[:, None] / d2) ** h
        ratios[rows, serve] = 0.0
        r0 = np.sqrt(r0sq)
        return LinkBatch(channel.sigma2 * r0 ** a / p0, ratios, r0, p0, rejected)

    raise ConfigurationError("could not draw a realization with a usable serving BS; "
                             "the window holds too few points")


def simulate_links(model: NetworkModel, channel: ChannelModel, cfg: SimulationConfig, job):
    """Run ``job(index, LinkBatch)`` on every realization; results by index."""
    w = cfg.window_for(model, channel)

    def run(i):
        rng = np.random.default_rng([cfg.seed, i])
        batch = _link_batch(model, channel, w, cfg.n_links_per_realization, rng, cfg.max_resample)
        return job(i, batch)

    n_threads = min(thread_count(), cfg.n_realizations)
    if n_threads == 1:
        return [run(i) for i in range(cfg.n_realizations)]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(run, range(cfg.n_realizations)))


def fading_draw_success(batch: LinkBatch, theta: float, n_draws: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Fraction of ``n_draws`` Rayleigh fading draws with SINR above ``theta``.

    With unit-mean exponential gains the event is
    ``h0 > theta * (sum_i h_i ratio_i + noise)``.
    """
    out = np.empty(batch.noise.size)
    for k in range(batch.noise.size):
        q = batch.ratios[k]
        q = q[q > 0]
        h0 = rng.exponential(size=n_draws)
        interf = rng.exponential(size=(n_draws, q.size)) @ q
        out[k] = np.mean(h0 > theta * (interf + batch.noise[k]))
    return out


def simulate_meta_multi(model: NetworkModel, channel: ChannelModel, thetas,
                        cfg: SimulationConfig) -> list[EmpiricalMeta]:
    """Empirical meta distributions at several ``theta`` from shared geometry."""
    thetas = [float(t) for t in thetas]
    if any(not t > 0 for t in thetas):
        raise DomainError("theta must be positive")

    def job(i, batch):
        if cfg.fading_draws > 0:
            rng = np.random.default_rng([cfg.seed, i, 1])
            ps = [fading_draw_success(batch, t, cfg.fading_draws, rng) for t in thetas]
        else:
            ps = [success_probability_from_ratios(t, batch.noise, batch.ratios) for t in thetas]
        return np.vstack(ps), batch.rejections

    results = simulate_links(model, channel, cfg, job)
    all_ps = np.hstack([r[0] for r in results])
    rejections = sum(r[1] for r in results)
    return [EmpiricalMeta.from_samples(all_ps[k], t, cfg.gamma_grid, rejections)
            for k, t in enumerate(thetas)]


def simulate_meta(model: NetworkModel, channel: ChannelModel, theta: float,
                  cfg: SimulationConfig) -> EmpiricalMeta:
    """Empirical meta distribution at one ``theta``."""
    return simulate_meta_multi(model, channel, [theta], cfg)[0]


def mapped_serving_distances(model: KTier, channel: ChannelModel,
                             cfg: SimulationConfig) -> np.ndarray:
    """Serving distances of a K-tier simulation rescaled to the reference
    tier, ``r0 (p_1 / p_serving)^(1/alpha)``."""
    if not isinstance(model, KTier):
        raise DomainError("mapped serving distances need a KTier model")
    _, p_ref = map_ktier(model, channel)

    def job(i, batch):
        return batch.serving_distance * (p_ref / batch.serving_power) ** (1.0 / channel.alpha)

    return np.concatenate(simulate_links(model, channel, cfg, job))


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

def _as_ccdf(x):
    if isinstance(x, EmpiricalMeta):
        return np.asarray(x.gamma_grid, float), np.asarray(x.ccdf, float)
    if isinstance(x, MetaCurve):
        thetas = {t for t, _ in x.grid}
        if len(thetas) != 1:
            raise DomainError("curve must hold a single theta for comparison")
        return np.array([g for _, g in x.grid], float), np.asarray(x.values, float)
    g, v = x
    return np.asarray(g, float), np.asarray(v, float)


def _same_grid(a, b):
    ga, va = _as_ccdf(a)
    gb, vb = _as_ccdf(b)
    if ga.shape != gb.shape or np.any(np.abs(ga - gb) > 1e-12):
        raise DomainError("curves are defined on different gamma grids")
    return ga, va, vb


def _cell_masses(gamma, ccdf):
    # the CCDF is 0 at gamma = 1, which closes the last cell
    ext = np.append(ccdf, 0.0) if gamma[-1] < 1.0 else ccdf
    return np.maximum(ext[:-1] - ext[1:], 0.0)


def kl_divergence(a, b, convention: str = "normalized", return_skipped: bool = False):
    """Discrete KL divergence ``sum f_a log(f_a / f_b)`` of two CCDFs.

    Cell masses are successive CCDF differences over the gamma grid (the
    CCDF at gamma = 1 is taken as 0), negative masses from noise are
    clamped to 0 and cells where either mass is zero are skipped.
    ``convention='normalized'`` rescales both mass vectors to sum to one on
    the kept cells, which makes the result nonnegative; ``'paper'`` keeps
    raw masses, so the result can be negative.
    """
    if convention not in ("normalized", "paper"):
        raise DomainError(f"unknown KL convention {convention!r}")
    g, va, vb = _same_grid(a, b)
    fa = _cell_masses(g, va)
    fb = _cell_masses(g, vb)
    use = (fa > 0) & (fb > 0)
    skipped = int(np.count_nonzero((fa > 0) & ~use))
    fa, fb = fa[use], fb[use]
    if convention == "normalized":
        if fa.size == 0:
            raise DomainError("the curves share no probability mass on the grid")
        fa, fb = fa / fa.sum(), fb / fb.sum()
    val = float(np.sum(fa * (np.log(fa) - np.log(fb))))
    if convention == "normalized":
        # Gibbs' inequality; only rounding can push it below zero
        val = max(val, 0.0)
    return (val, skipped) if return_skipped else val


def sup_gap(a, b) -> float:
    """Largest absolute difference between two curves on their common grid."""
    _, va, vb = _same_grid(a, b)
    return float(np.max(np.abs(va - vb)))


@dataclass
class ComparisonReport:
    """Sup-norm gap and KL divergences between two curves."""

    method_a: str
    method_b: str
    sup_gap: float
    kl_a_given_b: float
    kl_paper: float
    grid: list
    skipped_cells: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method_a": self.method_a,
            "method_b": self.method_b,
            "sup_gap": self.sup_gap,
            "kl": {"normalized": self.kl_a_given_b, "paper": self.kl_paper},
            "skipped_cells": self.skipped_cells,
            "grid": list(self.grid),
            **self.extra,
        }


def compare(a, b, method_a: str, method_b: str) -> ComparisonReport:
    """Build a :class:`ComparisonReport` for curve ``a`` against ``b``."""
    g, _, _ = _same_grid(a, b)
    kl, skipped = kl_divergence(a, b, "normalized", return_skipped=True)
    return ComparisonReport(method_a, method_b, sup_gap(a, b), kl,
                            kl_divergence(a, b, "paper"), [float(x) for x in g], skipped)
