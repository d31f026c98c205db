import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from l0sparse import autodiff as ad
from conftest import written_out_pdf
from l0sparse.gates import (
    DomainError,
    GateParams,
    ParameterError,
    RngStream,
    cdf_stretched,
    deterministic_gate,
    hard_concrete_from_uniform,
    hard_concrete_node,
    mc_mean_gate,
    pathwise_grad,
    pdf_stretched,
    point_masses,
    prob_active,
    quantile_stretched,
    sample_hard_concrete,
    sample_truncated,
)

# frozen from a 40-digit mpmath evaluation of the closed forms
CDF0_BETA_2_3 = 0.16817781600830958905
CDF0_BETA_1_2 = 0.23166247903553998491
PROB_ACTIVE_0 = 0.83182218399169041095
S_AT_U001 = 0.0010141601474346579661
SBAR_AT_U001 = -0.098783007823078410441

P = GateParams(0.0)
P_HALF = GateParams(0.0, beta=0.5)


def test_params_validation():
    for kw in ({"beta": 0.0}, {"beta": 1.5}, {"gamma": 0.1}, {"zeta": 1.0}):
        with pytest.raises(ParameterError):
            GateParams(0.0, **kw)
    with pytest.raises(ParameterError):
        GateParams(np.inf)


def test_sampler_midpoint():
    s, s_bar, z = hard_concrete_from_uniform(P, 0.5)
    assert (s, s_bar, z) == (0.5, pytest.approx(0.5, abs=1e-15), pytest.approx(0.5, abs=1e-15))


def test_sampler_small_u():
    s, s_bar, z = hard_concrete_from_uniform(P, 0.01)
    assert s == pytest.approx(S_AT_U001, rel=1e-12)
    assert s_bar == pytest.approx(SBAR_AT_U001, rel=1e-12)
    assert z == 0.0


def test_sampler_mean_symmetric_location():
    z, s_bar = sample_hard_concrete(P, RngStream(0), 100_000)
    assert z.shape == s_bar.shape == (100_000,)
    assert z.min() >= 0 and z.max() <= 1
    assert abs(z.mean() - 0.5) < 0.01


def test_sampler_rejects_bad_n():
    with pytest.raises(ValueError):
        sample_hard_concrete(P, RngStream(0), 0)


def test_uniform_clamp_keeps_logit_finite():
    s, s_bar, z = hard_concrete_from_uniform(P, np.array([0.0, 1.0]))
    assert np.all(np.isfinite(s_bar))
    np.testing.assert_array_equal(z, [0.0, 1.0])


def test_rng_stream_reproducible():
    a = RngStream(7).gate_uniform(1000)
    b = RngStream(7).gate_uniform(1000)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, RngStream(8).gate_uniform(1000))


def test_node_sampler_matches_numpy_and_is_differentiable():
    u = RngStream(3).gate_uniform(50)
    la = np.linspace(-2, 2, 50)
    node = ad.parameter(la)
    z, s_bar = hard_concrete_node(node, u, P.beta, P.gamma, P.zeta)
    _, sb_ref, z_ref = hard_concrete_from_uniform(P.with_log_alpha(la), u)
    np.testing.assert_allclose(z.value, z_ref, rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(s_bar.value, sb_ref, rtol=1e-14, atol=1e-15)
    ad.backward(ad.sum(z))
    np.testing.assert_allclose(node.grad, pathwise_grad(P.with_log_alpha(la), u), rtol=1e-12, atol=0)


# -- CDF / pdf / quantile -----------------------------------------------------

def test_cdf_at_zero():
    assert cdf_stretched(P, 0.0) == pytest.approx(CDF0_BETA_2_3, rel=1e-13)
    assert cdf_stretched(P_HALF, 0.0) == pytest.approx(CDF0_BETA_1_2, rel=1e-13)
    # the rounded figures quoted for these two cases
    assert cdf_stretched(P, 0.0) == pytest.approx(0.16822, abs=5e-5)
    assert cdf_stretched(P_HALF, 0.0) == pytest.approx(0.23166, abs=1e-5)


def test_cdf_endpoints_and_midpoint():
    assert cdf_stretched(P, P.gamma) == 0.0
    assert cdf_stretched(P, P.zeta) == 1.0
    assert cdf_stretched(P, 0.5) == pytest.approx(0.5, abs=1e-15)


def test_cdf_domain():
    with pytest.raises(DomainError):
        cdf_stretched(P, -0.2)
    with pytest.raises(DomainError):
        cdf_stretched(P, 1.2)


@settings(max_examples=50, deadline=None)
@given(st.floats(-6, 6), st.floats(0.1, 1.0))
def test_cdf_monotone(la, beta):
    p = GateParams(la, beta=beta)
    q = cdf_stretched(p, np.linspace(p.gamma, p.zeta, 301))
    assert np.all(np.diff(q) >= 0)


def test_pdf_integrates_to_one():
    # endpoint singularities are integrable; quad never evaluates the endpoints
    for p in (P, P_HALF, GateParams(1.3, beta=0.9), GateParams(-2.0, beta=0.4)):
        val, _ = integrate.quad(lambda x: pdf_stretched(p, x), p.gamma, p.zeta, limit=500)
        assert abs(val - 1.0) < 1e-4


def test_pdf_mass_inside_trimmed_interval():
    # with beta < 1 the density diverges at both ends, so trimming 1e-6 off each
    # end drops 2 * sigmoid(beta * logit(1e-6 / 1.2)) ~ 1.8e-4 of mass at beta = 2/3
    lo, hi = P.gamma + 1e-6, P.zeta - 1e-6
    val, _ = integrate.quad(lambda x: pdf_stretched(P, x), lo, hi, limit=200)
    assert val == pytest.approx(cdf_stretched(P, hi) - cdf_stretched(P, lo), abs=1e-10)
    assert val == pytest.approx(0.99982290582264, abs=1e-10)


def test_pdf_matches_cdf_derivative():
    h = 1e-6
    for p in (P, P_HALF, GateParams(0.7, beta=0.3)):
        fd = (cdf_stretched(p, 0.3 + h) - cdf_stretched(p, 0.3 - h)) / (2 * h)
        assert pdf_stretched(p, 0.3) == pytest.approx(fd, rel=1e-4)


def test_pdf_matches_written_out_density():
    x = np.linspace(-0.09, 1.09, 50)
    for p in (P, GateParams(2.0, beta=0.5), GateParams(-1.0, beta=0.9)):
        np.testing.assert_allclose(pdf_stretched(p, x), written_out_pdf(p, x), rtol=1e-10)


def test_pdf_location_flip_symmetry():
    x = np.linspace(-0.05, 1.05, 23)
    mirror = P.gamma + P.zeta - x
    for la in (0.0, 0.8, -1.7):
        np.testing.assert_allclose(
            pdf_stretched(GateParams(la), x), pdf_stretched(GateParams(-la), mirror), rtol=1e-12
        )


def test_pdf_domain():
    for x in (P.gamma, P.zeta, 2.0):
        with pytest.raises(DomainError):
            pdf_stretched(P, x)


def test_quantile_examples():
    assert quantile_stretched(P, 0.5) == pytest.approx(0.5, abs=1e-15)
    assert quantile_stretched(P, CDF0_BETA_2_3) == pytest.approx(0.0, abs=1e-9)


def test_quantile_round_trip():
    u = np.linspace(0.01, 0.99, 99)
    for p in (P, P_HALF, GateParams(1.5, beta=0.8), GateParams(-4.0, beta=1.0)):
        assert np.max(np.abs(cdf_stretched(p, quantile_stretched(p, u)) - u)) < 1e-10


@pytest.mark.parametrize("u", [0.0, 1.0, -0.1, 1.5])
def test_quantile_domain(u):
    with pytest.raises(DomainError):
        quantile_stretched(P, u)


# -- prob_active, point masses, deterministic gate ---------------------------

def test_prob_active_value_and_limits():
    assert prob_active(P) == pytest.approx(PROB_ACTIVE_0, rel=1e-14)
    assert prob_active(P) == pytest.approx(0.83178, abs=5e-5)
    assert prob_active(GateParams(-800.0)) == 0.0
    assert prob_active(GateParams(800.0)) == 1.0


def test_prob_active_equals_one_minus_cdf_zero():
    gen = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        p = GateParams(gen.uniform(-8, 8), beta=gen.uniform(0.05, 1.0), gamma=-gen.uniform(0.01, 1), zeta=1 + gen.uniform(0.01, 1))
        worst = max(worst, abs(prob_active(p) - (1 - cdf_stretched(p, 0.0))))
    assert worst < 1e-12


def test_point_masses():
    p0, p1 = point_masses(P_HALF)
    assert p0 == pytest.approx(CDF0_BETA_1_2, rel=1e-13)
    assert p1 == pytest.approx(CDF0_BETA_1_2, rel=1e-13)
    assert p0 + p1 == pytest.approx(0.4633249580710799698, rel=1e-13)
    for la in (-2.0, 0.0, 3.0):
        a, b = point_masses(GateParams(la))
        assert a + b <= 1
        assert a == 1 - prob_active(GateParams(la))
        assert a == pytest.approx(cdf_stretched(GateParams(la), 0.0), abs=1e-12)
    a, b = point_masses(P)
    assert a == pytest.approx(b, abs=1e-15)


def test_point_masses_match_sampling():
    n = 1_000_000
    z, _ = sample_hard_concrete(P_HALF, RngStream(11), n)
    p0, p1 = point_masses(P_HALF)
    for freq, p in ((np.mean(z == 0), p0), (np.mean(z == 1), p1)):
        assert abs(freq - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_deterministic_gate_examples():
    assert deterministic_gate(GateParams(0.0)) == pytest.approx(0.5, abs=1e-15)
    assert deterministic_gate(GateParams(-3.0)) == 0.0
    assert deterministic_gate(GateParams(3.0)) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10))
def test_deterministic_gate_zero_iff_below_threshold(la):
    p = GateParams(la)
    zero = deterministic_gate(p) == 0.0
    assert zero == (1 / (1 + np.exp(-la)) <= -p.gamma / (p.zeta - p.gamma))


def test_deterministic_gate_monotone():
    z = deterministic_gate(GateParams(np.linspace(-10, 10, 2001)))
    assert np.all((z >= 0) & (z <= 1))
    assert np.all(np.diff(z) >= 0)


# -- truncated sampling -------------------------------------------------------

def test_truncated_mean_symmetric():
    x = sample_truncated(P, 0.0, 1.0, RngStream(5), 100_000)
    assert np.all((x > 0) & (x < 1))
    assert abs(x.mean() - 0.5) < 0.01


def test_truncated_ks():
    p = GateParams(0.9, beta=0.5)
    lo, hi = 0.0, 1.0
    x = sample_truncated(p, lo, hi, RngStream(9), 10_000)
    c_lo, c_hi = cdf_stretched(p, lo), cdf_stretched(p, hi)
    stat = stats.kstest(x, lambda t: (cdf_stretched(p, np.clip(t, p.gamma, p.zeta)) - c_lo) / (c_hi - c_lo)).statistic
    assert stat < 0.02


def test_truncated_degenerate_interval():
    with pytest.raises(DomainError):
        sample_truncated(P, 1.0 - 1e-15, 1.0, RngStream(0))
    with pytest.raises(DomainError):
        sample_truncated(P, 0.5, 0.4, RngStream(0))


# -- reparameterisation and smoothing ----------------------------------------

def test_pathwise_gradient_matches_finite_difference_of_mc_mean():
    u = RngStream(21).gate_uniform(100_000)
    for la in (-1.0, 0.0, 0.5, 2.0):
        _, grad = mc_mean_gate(GateParams(la), u)
        d = 1e-3
        hi, _ = mc_mean_gate(GateParams(la + d), u)
        lo, _ = mc_mean_gate(GateParams(la - d), u)
        fd = (hi - lo) / (2 * d)
        assert grad == pytest.approx(fd, rel=0.02)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1 - 1e-6), st.floats(-5, 5), st.floats(0, 3))
def test_sample_monotone_in_location(u, la, delta):
    _, _, z1 = hard_concrete_from_uniform(GateParams(la), u)
    _, _, z2 = hard_concrete_from_uniform(GateParams(la + delta), u)
    assert z2 >= z1


def test_mean_gate_is_a_smooth_sigmoid_like_curve():
    grid = np.linspace(-6, 6, 121)
    u = RngStream(2).gate_uniform((20_000, 1))
    mean, _ = mc_mean_gate(GateParams(grid), u)
    assert np.all(np.diff(mean) >= 0)
    assert np.max(np.abs(np.diff(mean))) < 0.05
    assert abs(mean[60] - 0.5) < 0.01
    assert mean[0] < 0.01 and mean[-1] > 0.99
