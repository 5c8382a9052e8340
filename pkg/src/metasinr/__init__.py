"""SINR meta distribution of Poisson wireless networks.

Analytic approximations (dominant interferer with mean field, beta,
Gil-Pelaez inversion) and Monte-Carlo simulation for PPP, Poisson bipolar,
Matern cluster, K-tier and Poisson line Cox networks.
"""

from .errors import ConfigurationError, ConvergenceError, DomainError
from .geometry import MCP, PLCP, PPP, Bipolar, ChannelModel, KTier
from .metadist import (
    MetaCurve,
    MetaQuery,
    QuadratureSpec,
    beta_meta,
    exact_meta_gilpelaez,
    moment_b,
    nearest_only_meta,
    proposed_meta,
    proposed_meta_j,
)
from .simkit import SimulationConfig, kl_divergence, simulate_meta, sup_gap

__all__ = [
    "Bipolar", "ChannelModel", "ConfigurationError", "ConvergenceError", "DomainError",
    "KTier", "MCP", "MetaCurve", "MetaQuery", "PLCP", "PPP", "QuadratureSpec",
    "SimulationConfig", "beta_meta", "exact_meta_gilpelaez", "kl_divergence", "moment_b",
    "nearest_only_meta", "proposed_meta", "proposed_meta_j", "simulate_meta", "sup_gap",
]
