import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from metasinr.errors import DomainError
from metasinr.geometry import (
    MCP,
    PLCP,
    PPP,
    Bipolar,
    ChannelModel,
    KTier,
    PLCPLaw,
    PPPLaw,
    conditional_cdf_r0_given_r1,
    default_window_radius,
    distance_law,
    map_ktier,
    pdf_r1,
    plcp_void_ccdf,
    ppp_joint_pdf_r0_r1,
    sample_network,
    sample_realization,
)

CH4 = ChannelModel(4.0, 10.0, 1e-9)
ALL_LAW_MODELS = [
    PPP(1.0),
    PPP(0.1),
    Bipolar(10.0, 0.05),
    MCP(1.0, 0.4),
    KTier(((1.0, 10.0), (3.0, 5.0))),
    PLCP(8 / math.pi, 0.2),
    PLCP(1.6 / math.pi, 1.0),
]


# -- types -------------------------------------------------------------------

def test_channel_model_validation_and_delta():
    assert ChannelModel(4.0).delta == 0.5
    for bad in (dict(alpha=2.0), dict(alpha=4, pt=0.0), dict(alpha=4, sigma2=-1.0)):
        with pytest.raises(DomainError):
            ChannelModel(**bad)


@pytest.mark.parametrize("ctor", [lambda: PPP(0.0), lambda: Bipolar(1.0, -1.0), lambda: MCP(1.0, 0.0),
                                  lambda: KTier(()), lambda: KTier(((1.0, 0.0),)),
                                  lambda: PLCP(0.0, 1.0)])
def test_models_reject_nonpositive_parameters(ctor):
    with pytest.raises(DomainError):
        ctor()


# -- samplers ----------------------------------------------------------------

def test_ppp_point_count_mean():
    counts = [len(sample_realization(PPP(1.0), 10.0, s).points) for s in range(1000)]
    assert abs(np.mean(counts) - 100 * math.pi) < 3 * math.sqrt(100 * math.pi / 1000)


def test_bipolar_serving_distance_is_exact():
    for seed in range(20):
        r = sample_realization(Bipolar(10.0, 0.05), 5.0, seed)
        assert r.serving_distance == pytest.approx(0.05, rel=1e-14)


def test_plcp_palm_line_through_origin():
    for seed in range(20):
        r = sample_realization(PLCP(8 / math.pi, 0.2), 5.0, seed)
        assert np.min(np.abs(r.line_rho)) == 0.0


def test_realization_points_inside_window():
    for model in ALL_LAW_MODELS:
        r = sample_realization(model, 3.0, 11, CH4)
        # MCP adds the own centre's user offset, bipolar the dedicated link
        assert np.all(np.hypot(*r.points.T) <= 3.0 + 0.5)


def test_sampler_deterministic_in_seed():
    a = sample_realization(PLCP(8 / math.pi, 0.2), 4.0, 5)
    b = sample_realization(PLCP(8 / math.pi, 0.2), 4.0, 5)
    np.testing.assert_array_equal(a.points, b.points)


def test_sampler_rejects_bad_window():
    with pytest.raises(DomainError):
        sample_realization(PPP(1.0), 0.0, 1)
    with pytest.raises(DomainError):
        sample_network(PPP(1.0), -1.0, np.random.default_rng(0))


def test_ktier_serving_is_strongest_average_power():
    model = KTier(((1.0, 10.0), (3.0, 5.0)))
    r = sample_realization(model, 4.0, 3, CH4)
    score = r.powers * r.distances ** -4.0
    assert r.serving_index == int(np.argmax(score))


# -- PPP laws ----------------------------------------------------------------

def test_ppp_joint_pdf_closed_form():
    val = ppp_joint_pdf_r0_r1(PPP(1.0), 0.5, 1.0)
    assert val == pytest.approx((2 * math.pi) ** 2 * 0.5 * math.exp(-math.pi), rel=1e-14)
    assert val == pytest.approx(0.8530085557688849, rel=1e-12)
    assert ppp_joint_pdf_r0_r1(PPP(1.0), 1.0, 1.0) > 0
    assert ppp_joint_pdf_r0_r1(PPP(1.0), 1.2, 1.0) == 0.0
    with pytest.raises(DomainError):
        ppp_joint_pdf_r0_r1(PPP(1.0), -0.1, 1.0)


def test_ppp_joint_pdf_against_histogram():
    """Empirical density of (R0, R1) in a box around (0.5, 1)."""
    rng = np.random.default_rng(1)
    n = 400000
    t0 = rng.exponential(size=n)
    t1 = t0 + rng.exponential(size=n)
    r0, r1 = np.sqrt(t0 / math.pi), np.sqrt(t1 / math.pi)
    box = (np.abs(r0 - 0.5) < 0.025) & (np.abs(r1 - 1.0) < 0.05)
    emp = box.mean() / (0.05 * 0.1)
    se = math.sqrt(box.mean() / n) / (0.05 * 0.1)
    assert abs(emp - ppp_joint_pdf_r0_r1(PPP(1.0), 0.5, 1.0)) < 4 * se + 0.01


def test_ppp_pdf_r1_value():
    assert pdf_r1(PPP(1.0), 1.0) == pytest.approx(2 * math.pi ** 2 * math.exp(-math.pi), rel=1e-14)


def test_ppp_second_nearest_histogram():
    pts = [np.sort(sample_realization(PPP(1.0), 4.0, s).distances)[1] for s in range(4000)]
    law = PPPLaw(1.0)
    ks = stats.kstest(pts, lambda r: 1 - law.ccdf_r1(r))
    assert ks.statistic < 0.03


def test_ppp_joint_marginal_consistency():
    law = PPPLaw(1.0)
    for r1 in (0.2, 0.7, 1.3):
        val, _ = integrate.quad(lambda r0: law.joint_pdf(r0, r1), 0.0, r1, epsabs=1e-14)
        assert val == pytest.approx(law.pdf_r1(r1), abs=1e-8)


# -- conditional CDFs --------------------------------------------------------

def test_conditional_cdf_examples():
    assert conditional_cdf_r0_given_r1(PPP(1.0), 1.0, 2.0) == pytest.approx(0.25)
    assert conditional_cdf_r0_given_r1(Bipolar(10.0, 0.05), 0.04, 0.3) == 0.0
    assert conditional_cdf_r0_given_r1(Bipolar(10.0, 0.05), 0.05, 0.3) == 1.0
    assert conditional_cdf_r0_given_r1(MCP(1.0, 0.4), 0.2, 5.0) == pytest.approx(0.25)
    with pytest.raises(DomainError):
        conditional_cdf_r0_given_r1(PPP(1.0), 0.5, 0.0)


def test_plcp_conditional_cdf_against_palm_samples():
    model = PLCP(8 / math.pi, 0.2)
    val = conditional_cdf_r0_given_r1(model, 0.5, 1.0)
    assert 0.0 <= val <= 1.0
    hits, total = 0, 0
    for s in range(30000):
        d = np.sort(sample_realization(model, 4.0, s).distances)
        if len(d) > 1 and abs(d[1] - 1.0) < 0.1:
            total += 1
            hits += d[0] <= 0.5
    p = hits / total
    assert abs(p - val) < 4 * math.sqrt(p * (1 - p) / total) + 0.01


def test_plcp_pdf_r1_against_laplace_derivative():
    """``f_R1 = -d/dr [L - s dL/ds]`` at ``s = lambda_p``, all derivatives by
    central differences of the chord-length Laplace transform."""
    law = PLCPLaw(PLCP(8 / math.pi, 0.2))
    lp = law.lp

    def lap(r, s):
        return math.exp(-float(law.exponent(r, s)))

    def ccdf(r):
        hs = 1e-5 * lp
        dlds = (lap(r, lp + hs) - lap(r, lp - hs)) / (2 * hs)
        return lap(r, lp) - lp * dlds

    for r1 in (0.1, 0.4, 0.9, 1.7):
        h = 1e-4 * r1
        num = -(ccdf(r1 + h) - ccdf(r1 - h)) / (2 * h)
        assert law.pdf_r1(r1) == pytest.approx(num, rel=1e-5)


def test_plcp_ccdf_r1_matches_its_density():
    law = PLCPLaw(PLCP(1.6 / math.pi, 1.0))
    for r in (0.3, 1.0, 2.0):
        tail, _ = integrate.quad(law.pdf_r1, r, 20.0, epsabs=1e-13, limit=200)
        assert law.ccdf_r1(r) == pytest.approx(tail, abs=1e-9)


def test_bipolar_pdf_r1_small_r_linear():
    r = 1e-6
    assert pdf_r1(Bipolar(10.0, 0.05), r) == pytest.approx(2 * math.pi * 10.0 * r, rel=1e-9)
    with pytest.raises(DomainError):
        pdf_r1(PPP(1.0), 0.0)


# -- PLCP void probability ---------------------------------------------------

def test_plcp_void_ccdf_limits():
    model = PLCP(8 / math.pi, 0.2)
    assert plcp_void_ccdf(model, 0.0) == 1.0
    assert plcp_void_ccdf(PLCP(8 / math.pi, 1e-12), 1.0) == pytest.approx(1.0, abs=1e-10)
    grid = np.linspace(0, 3, 100)
    vals = plcp_void_ccdf(model, grid)
    assert np.all(np.diff(vals) <= 0)


def test_plcp_void_ccdf_against_palm_samples():
    model = PLCP(8 / math.pi, 0.2)
    n = 20000
    empty = sum(np.min(sample_realization(model, 3.0, s).distances, initial=np.inf) > 1.0
                for s in range(n))
    p = plcp_void_ccdf(model, 1.0)
    assert 0 < p < 1
    assert abs(empty / n - p) < 4 * math.sqrt(p * (1 - p) / n)


# -- K-tier mapping ----------------------------------------------------------

def test_map_ktier():
    assert map_ktier(KTier(((2.0, 4.0),)), CH4) == (2.0, 4.0)
    lam, p = map_ktier(KTier(((1.0, 10.0), (3.0, 5.0))), CH4)
    assert lam == pytest.approx(1 + 3 * math.sqrt(0.5), rel=1e-15)
    assert lam == pytest.approx(3.1213203435596424, rel=1e-14)
    assert p == 10.0
    assert map_ktier(KTier(((1.0, 2.0), (3.0, 2.0))), CH4)[0] == pytest.approx(4.0)
    with pytest.raises(DomainError):
        map_ktier(PPP(1.0), CH4)


def test_ktier_law_needs_channel():
    with pytest.raises(DomainError):
        distance_law(KTier(((1.0, 1.0),)))


# -- invariants --------------------------------------------------------------

@pytest.mark.parametrize("model", ALL_LAW_MODELS, ids=lambda m: repr(m))
def test_pdf_r1_normalization(model):
    law = distance_law(model, CH4)
    assert law.check_normalization(tol=1e-4) == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("model", ALL_LAW_MODELS, ids=lambda m: repr(m))
def test_cdfs_bounded_and_monotone(model):
    law = distance_law(model, CH4)
    grid = np.linspace(1e-4, 3.0, 100)
    for values in (1 - np.asarray(law.ccdf_r1(grid)), np.asarray(law.cdf_r0(grid))):
        assert np.all((values >= 0) & (values <= 1))
        assert np.all(np.diff(values) >= -1e-12)
    for r1 in (0.1, 0.5, 1.5):
        cond = np.asarray(law.cond_cdf_r0(grid, r1))
        assert np.all((cond >= 0) & (cond <= 1))
        assert np.all(np.diff(cond) >= -1e-12)


def test_plcp_first_contact_approaches_ppp():
    """With pi*ll*lp fixed, more (sparser) lines look more like a planar PPP."""
    r = np.linspace(0.01, 3.0, 300)
    ppp_cdf = 1 - np.exp(-math.pi * 1.0 * r * r)
    gaps = []
    for ll in (0.4 / math.pi, 8 / math.pi, 40 / math.pi):
        lp = 1.0 / (math.pi * ll)
        gaps.append(np.max(np.abs(PLCPLaw(PLCP(ll, lp)).cdf_r0(r) - ppp_cdf)))
    assert gaps[0] > gaps[1] > gaps[2]


def test_default_window():
    assert default_window_radius(PPP(1.0), CH4) == pytest.approx(30.0)
    assert default_window_radius(PPP(4.0)) == pytest.approx(15.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=0.01, max_value=2.0), st.floats(min_value=0.05, max_value=2.0))
def test_plcp_conditional_cdf_reaches_one_at_r1(r0, r1):
    law = PLCPLaw(PLCP(8 / math.pi, 0.2))
    val = law.cond_cdf_r0(r0, r1)
    assert 0.0 <= val <= 1.0
    assert law.cond_cdf_r0(r1, r1) == pytest.approx(1.0, abs=1e-12)
