import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metasinr.errors import ConvergenceError, DomainError
from metasinr.geometry import MCP, PLCP, PPP, Bipolar, ChannelModel, KTier, sample_realization
from metasinr.metadist import (
    DegenerateMomentsWarning,
    MetaCurve,
    MetaQuery,
    QuadratureSpec,
    approx_success_probability,
    beta_meta,
    beta_meta_from_moments,
    beta_parameters,
    conditional_success_probability,
    evaluate_curve,
    exact_meta_gilpelaez,
    exact_meta_gilpelaez_curve,
    gilpelaez_from_moments,
    gilpelaez_nodes,
    imaginary_moments,
    k1_radius,
    mean_field_g,
    moment_b,
    nearest_only_meta,
    plcp_far_field_coefficients,
    ppp_fb_series,
    ppp_q_coefficient,
    proposed_meta,
    proposed_meta_j,
)
from metasinr.specfun import reg_inc_beta

CH = ChannelModel(4.0, 10.0, 1e-9)
SIR = ChannelModel(4.0, 10.0, 0.0)
GAMMAS9 = [round(0.1 * k, 1) for k in range(1, 10)]


def _coverage_oracle(theta):
    s = math.sqrt(theta)
    return 1.0 / (1.0 + s * (math.pi / 2 - math.atan(1.0 / s)))


# -- types -------------------------------------------------------------------

def test_query_validation():
    with pytest.raises(DomainError):
        MetaQuery(0.0, 0.5)
    for g in (0.0, 1.0, -0.1):
        with pytest.raises(DomainError):
            MetaQuery(1.0, g)
    assert MetaQuery.from_db(10.0, 0.5).theta == pytest.approx(10.0)


def test_quadrature_spec_validation():
    with pytest.raises(DomainError):
        QuadratureSpec(series_k_max=5)
    with pytest.raises(DomainError):
        QuadratureSpec(rel_tol=0.0)


def test_curve_fingerprint_is_stable_and_sensitive():
    a = evaluate_curve(PPP(1.0), CH, [1.0], [0.5], "nearest_only")
    b = evaluate_curve(PPP(1.0), CH, [1.0], [0.5], "nearest_only")
    c = evaluate_curve(PPP(2.0), CH, [1.0], [0.5], "nearest_only")
    assert a.model_fingerprint == b.model_fingerprint != c.model_fingerprint
    with pytest.raises(DomainError):
        MetaCurve("bogus", [], [])


# -- mean field --------------------------------------------------------------

def test_mean_field_ppp_value():
    assert mean_field_g(PPP(1.0), CH, 1.0) == pytest.approx(math.pi, rel=1e-15)
    assert mean_field_g(PPP(1.0), CH, 1e8) < 1e-15
    assert mean_field_g(PPP(1.0), CH, 1.0, "none") == 0.0
    with pytest.raises(DomainError):
        mean_field_g(PPP(1.0), CH, 0.0)


def test_mean_field_ktier_uses_mapped_density():
    model = KTier(((1.0, 10.0), (3.0, 5.0)))
    assert mean_field_g(model, CH, 1.0) == pytest.approx(math.pi * (1 + 3 * math.sqrt(0.5)))


@pytest.mark.parametrize("alpha", [2.5, 3.0, 4.0, 5.5])
def test_plcp_far_field_integrals_match_planar_closed_form(alpha):
    far, near = plcp_far_field_coefficients(alpha)
    assert far + near == pytest.approx(math.pi / (2 * (alpha - 2)), rel=1e-9)


def test_plcp_mean_field_against_palm_samples():
    """Mean path gain beyond the nearest interferer given it sits near 0.5 km."""
    model = PLCP(8 / math.pi, 0.2)
    w = 8.0
    tail = mean_field_g(PPP(1.6), SIR, w)
    vals = []
    for s in range(40000):
        d = np.sort(sample_realization(model, w, s).distances)
        if len(d) > 2 and abs(d[1] - 0.5) < 0.05:
            vals.append(np.sum(d[2:] ** -4.0) + tail)
    # conditioning on R1 also thins nearby lines; the mean field ignores that
    assert np.mean(vals) == pytest.approx(mean_field_g(model, SIR, 0.5), rel=0.10)
    assert mean_field_g(model, SIR, 0.5) > mean_field_g(model, SIR, 0.5, "ppp-approx")


# -- success probabilities ---------------------------------------------------

def test_conditional_success_trivial_cases():
    assert conditional_success_probability(SIR, 0.3, [], 1.0) == 1.0
    assert conditional_success_probability(SIR, 0.3, [0.3], 1.0) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        conditional_success_probability(SIR, 0.0, [1.0], 1.0)


def test_conditional_success_against_fading_draws():
    rng = np.random.default_rng(5)
    n = 1_000_000
    r0, rs = 0.1, np.array([0.2, 0.3])
    h0 = rng.exponential(size=n)
    hi = rng.exponential(size=(n, 2))
    sinr = h0 * r0 ** -4 / (hi @ rs ** -4 + CH.sigma2 / CH.pt)
    emp = np.mean(sinr > 1.0)
    val = conditional_success_probability(CH, r0, rs, 1.0)
    assert abs(emp - val) < 4 * math.sqrt(val * (1 - val) / n)
    assert val == pytest.approx(1 / (1 + 2 ** -4) / (1 + 3 ** -4), rel=1e-8)


def test_approx_success_limits():
    assert approx_success_probability(SIR, PPP(1.0), 1e-9, [0.5], 1.0) == pytest.approx(1.0)
    assert approx_success_probability(SIR, PPP(1.0), 0.5, [0.5], 1.0, "none") == pytest.approx(0.5)
    with pytest.raises(DomainError):
        approx_success_probability(SIR, PPP(1.0), 0.6, [0.5], 1.0)
    with pytest.raises(DomainError):
        approx_success_probability(SIR, PPP(1.0), 0.1, [], 1.0)


def test_approx_success_against_resampled_far_field():
    """Average the exact Ps over PPP interferers beyond r1; the mean-field
    replacement (a Jensen lower bound) should sit within 0.01."""
    rng = np.random.default_rng(2)
    r0, r1, outer = 0.3, 0.5, 30.0
    vals = []
    for _ in range(10000):
        n = rng.poisson(math.pi * (outer ** 2 - r1 ** 2))
        d = np.sqrt(rng.uniform(r1 ** 2, outer ** 2, n))
        vals.append(conditional_success_probability(CH, r0, np.append(d, r1), 1.0))
    approx = approx_success_probability(CH, PPP(1.0), r0, [r1], 1.0)
    assert approx <= np.mean(vals)
    assert np.mean(vals) == pytest.approx(approx, abs=0.01)


# -- K1 ------------------------------------------------------------------------

def test_k1_sir_no_mean_field_closed_form():
    assert k1_radius(PPP(1.0), SIR, 2.0, 1.0, 0.5, mean_field="none") == pytest.approx(2.0, rel=1e-14)
    r = k1_radius(PPP(1.0), SIR, 2.0, 3.0, 0.2, mean_field="none")
    assert r == pytest.approx(2.0 * (0.8 / 0.6) ** 0.25, rel=1e-13)
    assert k1_radius(PPP(1.0), SIR, 2.0, 1.0, 1 - 1e-12, mean_field="none") < 1e-2


def test_k1_matches_bisection_root():
    r1, theta, gamma = 0.5, 1.0, 0.5
    lo, hi = 1e-9, r1
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if approx_success_probability(CH, PPP(1.0), mid, [r1], theta) > gamma:
            lo = mid
        else:
            hi = mid
    assert k1_radius(PPP(1.0), CH, r1, theta, gamma) == pytest.approx(lo, abs=1e-6)


def test_k1_handles_overflowing_lambert_argument():
    # huge far-field term makes u*exp(u) overflow a double
    r = k1_radius(PPP(1.0), ChannelModel(4.0, 1e-3, 1.0), 50.0, 10.0, 0.3)
    assert 0 < r < 50.0
    with pytest.raises(DomainError):
        k1_radius(PPP(1.0), CH, 0.5, 1.0, 1.0)


# -- proposed approximation --------------------------------------------------

def test_proposed_tends_to_one_at_small_gamma():
    assert proposed_meta(PPP(1.0), SIR, MetaQuery(1.0, 1e-9)) == pytest.approx(1.0, abs=1e-6)


def test_proposed_sir_no_mean_field_equals_nearest_only():
    for theta in (0.1, 1.0, 10.0, 100.0):
        for gamma in (0.05, 0.3, 0.5, 0.9):
            q = MetaQuery(theta, gamma)
            got = proposed_meta(PPP(1.0), SIR, q, mean_field="none")
            assert got == pytest.approx(nearest_only_meta(SIR, q), abs=1e-9)


def test_proposed_against_monte_carlo_of_the_same_approximation():
    rng = np.random.default_rng(0)
    n = 400000
    t0 = rng.exponential(size=n)
    t1 = t0 + rng.exponential(size=n)
    r0, r1 = np.sqrt(t0 / math.pi), np.sqrt(t1 / math.pi)
    theta = 10 ** 1.2
    x = theta * r0 ** 4
    ps = np.exp(-x * (math.pi / r1 ** 2 + 1e-10)) / (1 + x / r1 ** 4)
    for gamma in (0.1, 0.5, 0.9):
        emp = np.mean(ps > gamma)
        assert proposed_meta(PPP(1.0), CH, MetaQuery(theta, gamma)) == pytest.approx(
            emp, abs=4 * math.sqrt(emp * (1 - emp) / n))


def test_proposed_bipolar_and_mcp_edge_behaviour():
    # a link far beyond the critical radius never succeeds
    assert proposed_meta(Bipolar(10.0, 5.0), CH, MetaQuery(10.0, 0.5)) == pytest.approx(0.0, abs=1e-9)
    # tiny clusters always succeed at low thresholds
    assert proposed_meta(MCP(1.0, 1e-3), CH, MetaQuery(0.1, 0.1)) == pytest.approx(1.0, abs=1e-6)


def test_proposed_j_delegates_and_stays_close():
    q = MetaQuery(1.0, 0.5)
    assert proposed_meta_j(PPP(1.0), CH, q, 1) == proposed_meta(PPP(1.0), CH, q)
    for g in GAMMAS9:
        q = MetaQuery(1.0, g)
        assert abs(proposed_meta_j(PPP(1.0), CH, q, 2) - proposed_meta(PPP(1.0), CH, q)) < 0.1


def test_proposed_j2_quadrature_matches_qmc():
    q = MetaQuery(10.0, 0.3)
    quad = proposed_meta_j(PPP(1.0), CH, q, 2)
    qmc_val, se = proposed_meta_j(PPP(1.0), CH, q, 2, mc_nodes=8192, force_qmc=True,
                                  return_std_err=True)
    assert abs(quad - qmc_val) < max(3 * se, 1e-4)


def test_proposed_j_three_and_four_run():
    q = MetaQuery(1.0, 0.5)
    v3 = proposed_meta_j(PPP(1.0), CH, q, 3, mc_nodes=2048)
    v4 = proposed_meta_j(PPP(1.0), CH, q, 4, mc_nodes=2048)
    assert 0 <= v3 <= 1 and 0 <= v4 <= 1
    with pytest.raises(DomainError):
        proposed_meta_j(MCP(1.0, 0.1), CH, q, 2)
    with pytest.raises(DomainError):
        proposed_meta_j(PPP(1.0), CH, q, 5)


# -- moments -------------------------------------------------------------------

@pytest.mark.parametrize("model", [PPP(1.0), Bipolar(10.0, 0.05), MCP(1.0, 0.1),
                                   KTier(((1.0, 10.0), (3.0, 5.0)))], ids=repr)
def test_moment_zero_is_one(model):
    assert moment_b(model, CH, 3.0, 0) == 1.0
    assert imaginary_moments(model, CH, 3.0, [0.0])[0] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("theta", [0.1, 1.0, 10.0])
def test_ppp_first_moment_matches_coverage_oracle(theta):
    assert moment_b(PPP(1.0), SIR, theta, 1).real == pytest.approx(_coverage_oracle(theta), abs=1e-10)
    if theta == 1.0:
        assert moment_b(PPP(1.0), SIR, theta, 1).real == pytest.approx(4 / (4 + math.pi), rel=1e-10)


def test_bipolar_moment_hand_value():
    val = moment_b(Bipolar(10.0, 0.05), SIR, 1.0, 1).real
    assert val == pytest.approx(math.exp(-10 * math.pi * 0.05 ** 2 * math.pi / 2), rel=1e-12)
    assert val == pytest.approx(0.8839364968975116, rel=1e-12)


@pytest.mark.parametrize("alpha", [3.0, 4.0])
@pytest.mark.parametrize("theta", [0.1, 1.0, 10.0])
@pytest.mark.parametrize("b", [1, 2, 3])
def test_fb_direct_integral_matches_hypergeometric_series(alpha, theta, b):
    direct = ppp_q_coefficient(theta, alpha, b).real
    assert direct == pytest.approx(ppp_fb_series(theta, alpha, b), rel=1e-6)


def test_moments_have_modulus_at_most_one():
    for model in (PPP(1.0), Bipolar(10.0, 0.05), MCP(1.0, 0.4)):
        for b in (0.5, 2.0, 3j, 1 + 5j):
            assert abs(moment_b(model, CH, 5.0, b)) <= 1 + 1e-12


def test_vectorised_moments_match_scalar_route():
    for model in (PPP(1.0), PPP(0.1), MCP(1.0, 0.4), Bipolar(10.0, 0.05),
                  KTier(((1.0, 10.0), (3.0, 5.0)))):
        for t in (0.3, 7.0, 150.0):
            scalar = moment_b(model, CH, 15.85, 1j * t)
            vec = imaginary_moments(model, CH, 15.85, [t])[0]
            assert abs(scalar - vec) < 1e-8


def test_moment_errors():
    with pytest.raises(DomainError):
        moment_b(PLCP(1.0, 1.0), CH, 1.0, 1)
    with pytest.raises(DomainError):
        moment_b(PPP(1.0), CH, 1.0, -1.0)


# -- beta ----------------------------------------------------------------------

def test_beta_synthetic_moments():
    a, b = beta_parameters(0.5, 0.3)
    assert (a, b) == (pytest.approx(2.0), pytest.approx(2.0))
    assert beta_meta_from_moments(0.5, 0.3, 0.3) == pytest.approx(1 - reg_inc_beta(0.3, 2.0, 2.0))


@given(st.floats(min_value=0.05, max_value=0.95), st.floats(min_value=0.05, max_value=0.95))
def test_beta_mean_identity(m1, frac):
    m2 = m1 * m1 + frac * (m1 - m1 * m1)
    a, b = beta_parameters(m1, m2)
    assert a / (a + b) == pytest.approx(m1, abs=1e-10)


def test_beta_small_gamma_and_degenerate_fallback():
    assert beta_meta(PPP(1.0), CH, MetaQuery(1.0, 1e-9)) == pytest.approx(1.0, abs=1e-6)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        assert beta_meta_from_moments(0.4, 0.16, 0.3) == 1.0
        assert beta_meta_from_moments(0.4, 0.16, 0.5) == 0.0
    assert any(issubclass(w.category, DegenerateMomentsWarning) for w in rec)


# -- Gil-Pelaez ---------------------------------------------------------------

def test_gilpelaez_point_mass():
    t, w = gilpelaez_nodes()
    c = 0.6
    moments = np.exp(1j * t * math.log(c))
    vals, _ = gilpelaez_from_moments(t, w, moments, [0.3, 0.5, 0.7, 0.9])
    np.testing.assert_allclose(vals, [1, 1, 0, 0], atol=0.01)


def test_gilpelaez_integrates_to_first_moment():
    gammas = np.linspace(0.0005, 0.9995, 1000)
    vals, _ = exact_meta_gilpelaez_curve(PPP(1.0), CH, 1.0, gammas)
    assert vals.mean() == pytest.approx(moment_b(PPP(1.0), CH, 1.0, 1).real, abs=1e-3)


def test_gilpelaez_reports_error_and_raises_when_truncated_hard():
    val, err = exact_meta_gilpelaez(PPP(1.0), CH, MetaQuery(1.0, 0.5), return_error=True)
    assert 0 < val < 1 and err < 0.01
    with pytest.raises(ConvergenceError):
        exact_meta_gilpelaez(PPP(1.0), CH, MetaQuery(1.0, 0.5),
                             QuadratureSpec(gilpelaez_t_max=5.0, gilpelaez_nodes=64))


def test_beta_close_to_gilpelaez():
    for g in GAMMAS9:
        q = MetaQuery(1.0, g)
        assert abs(beta_meta(PPP(1.0), CH, q) - exact_meta_gilpelaez(PPP(1.0), CH, q)) < 0.02


# -- nearest only ---------------------------------------------------------------

def test_nearest_only_values():
    assert nearest_only_meta(CH, MetaQuery(1.0, 0.5)) == 1.0
    # (R0/R1)^2 is uniform, so the exponent is delta = 2/alpha
    assert nearest_only_meta(CH, MetaQuery(10.0, 0.9)) == pytest.approx((0.1 / 9) ** 0.5, rel=1e-14)
    assert nearest_only_meta(CH, MetaQuery(10.0, 0.9)) == pytest.approx(0.10540925533894598)


def test_nearest_only_is_independent_of_density_and_upper_bounds_proposed():
    for theta in (0.1, 1.0, 10.0, 100.0):
        for g in GAMMAS9:
            q = MetaQuery(theta, g)
            assert nearest_only_meta(SIR, q) >= proposed_meta(PPP(1.0), SIR, q) - 1e-9
            assert nearest_only_meta(SIR, q) >= proposed_meta(PPP(10.0), SIR, q) - 1e-9


# -- invariants ------------------------------------------------------------------

MONO_THETAS = [10 ** (d / 10) for d in (-10, 0, 12, 26)]
MONO_GAMMAS = [0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99]


def _check_monotone(curve):
    _, _, arr = curve.as_array()
    assert np.all((arr >= 0) & (arr <= 1))
    assert np.all(np.diff(arr, axis=1) <= 1e-6)
    assert np.all(np.diff(arr, axis=0) <= 1e-6)


@pytest.mark.parametrize("model", [PPP(1.0), Bipolar(10.0, 0.05), MCP(1.0, 0.2),
                                   KTier(((1.0, 10.0), (3.0, 5.0))), PLCP(8 / math.pi, 0.2)],
                         ids=repr)
def test_proposed_monotone_and_bounded(model):
    _check_monotone(evaluate_curve(model, CH, MONO_THETAS, MONO_GAMMAS, "proposed"))


@pytest.mark.parametrize("method", ["beta", "exact_gilpelaez", "nearest_only", "proposed_j"])
def test_other_methods_monotone_and_bounded(method):
    _check_monotone(evaluate_curve(PPP(1.0), CH, MONO_THETAS[:3], MONO_GAMMAS, method, j=2))


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=-15, max_value=30), st.floats(min_value=0.01, max_value=0.99),
       st.sampled_from([2.5, 3.0, 4.0, 5.0]))
def test_proposed_in_unit_interval(theta_db, gamma, alpha):
    v = proposed_meta(PPP(1.0), ChannelModel(alpha), MetaQuery.from_db(theta_db, gamma))
    assert 0.0 <= v <= 1.0
