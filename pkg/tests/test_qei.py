import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moeqei import _kernels, gp, qei, rng
from moeqei.errors import DimensionMismatch, NonPositiveSigma, UnsupportedDimension
from moeqei.sga import qei_transform

from conftest import toy_model

# mpmath, 30 digits
PHI = {0: 0.5, 1: 0.841344746068542948585232545632, 2: 0.977249868051820792799717362833, 5: 0.999999713348428120806088326248}
INV_SQRT_2PI = 0.398942280401432677939946059934
EI_0_1_1 = 1.08331547058768629838306273857  # Phi(1) + phi(1)


def random_transform(seed, q, scale=1.0):
    g = np.random.default_rng(seed)
    mu = g.normal(0, 1, q)
    A = g.normal(0, 1, (q, q))
    L = np.linalg.cholesky(scale * (A @ A.T + 0.3 * np.eye(q)))
    return qei.transform_from_moments(mu, L, g.normal(-0.5, 1))


# -- normal distribution ---------------------------------------------------


@pytest.mark.parametrize("x", [0, 1, 2, 5])
def test_norm_cdf_accuracy(x):
    assert abs(qei.norm_cdf(x) - PHI[x]) <= 1e-12
    assert abs(qei.norm_cdf(-x) - (1 - PHI[x])) <= 1e-12


def test_norm_pdf():
    assert qei.norm_pdf(0.0) == pytest.approx(INV_SQRT_2PI, rel=1e-15)


# -- transform -------------------------------------------------------------


def test_transform_q1_substitution():
    t = qei.transform_from_moments([-1.0], [[2.0]], 0.0)
    np.testing.assert_array_equal(t.m, [0.0, 1.0])
    np.testing.assert_array_equal(t.C, [[0.0], [-2.0]])


def test_transform_zero_margin():
    t = qei.transform_from_moments([1.5, 1.5], np.eye(2), 1.5)
    np.testing.assert_array_equal(t.m, [0.0, 0.0, 0.0])
    assert np.all(t.C[0] == 0.0)


def test_transform_pending_blocks(model2d):
    X = np.array([[0.3, 0.3], [0.7, 0.2]])
    post = gp.posterior_batch(model2d, X, deriv_first=0)
    t = qei.build_transform(post, model2d.incumbent, pending_count=1)
    assert t.dm.shape == (2, 3) and t.dC.shape == (2, 3, 2)
    np.testing.assert_array_equal(t.dm[:, 1:], -post.dmean[2:])


def test_transform_bad_pending(model2d):
    post = gp.posterior_batch(model2d, np.array([[0.3, 0.3]]))
    with pytest.raises(DimensionMismatch):
        qei.build_transform(post, 0.0, pending_count=1)


def test_transform_factor_shape():
    with pytest.raises(DimensionMismatch):
        qei.transform_from_moments([0.0, 1.0], np.eye(3), 0.0)


# -- single samples --------------------------------------------------------


def test_sample_no_improvement():
    t = qei.transform_from_moments([1e6, 1e6], 1e-9 * np.eye(2), 0.0)
    s = qei.sample_h_and_grad(t, [0.3, -0.2])
    assert s.value == 0.0 and s.argmax == 0 and not np.any(s.grad)


def test_sample_direct_max():
    t = qei.transform_from_moments([-1.0], [[1.0]], 0.0)
    s = qei.sample_h_and_grad(t, [0.0])
    assert s.value == 1.0 and s.argmax == 1


def test_sample_matches_brute_force():
    g = np.random.default_rng(3)
    for seed in range(20):
        t = random_transform(seed, 3)
        Z = g.standard_normal(3)
        forms = [t.m[i] + t.C[i] @ Z for i in range(4)]
        s = qei.sample_h_and_grad(t, Z)
        assert s.value == pytest.approx(max(forms), abs=1e-14)
        assert s.argmax == int(np.argmax(forms))


def test_sample_gradient_formula(model2d):
    X = np.array([[0.3, 0.4], [0.8, 0.1]])
    t = qei_transform(model2d, X, with_derivatives=True)
    Z = np.array([-1.5, 0.4])
    s = qei.sample_h_and_grad(t, Z)
    i = s.argmax
    expect = (t.dm[:, i] + t.dC[:, i, :] @ Z).reshape(2, 2) if i else np.zeros((2, 2))
    np.testing.assert_allclose(s.grad, expect, rtol=1e-12, atol=1e-15)


# -- q-EI estimates --------------------------------------------------------


def test_estimate_deterministic_and_seeded():
    t = random_transform(0, 2)
    a = qei.estimate_qei(t, 10_000, seed=4)
    assert a == qei.estimate_qei(t, 10_000, seed=4)
    assert a != qei.estimate_qei(t, 10_000, seed=5)


def test_estimate_degenerate_variance():
    mu = np.array([0.3, -0.4, 0.1])
    t = qei.transform_from_moments(mu, 1e-12 * np.eye(3), 0.2)
    assert qei.estimate_qei(t, 1000, 0).mean == pytest.approx(0.6, abs=1e-6)


def test_estimate_q1_symmetric_case():
    t = qei.transform_from_moments([0.0], [[1.0]], 0.0)
    est = qei.estimate_qei(t, 1_000_000, seed=1)
    assert abs(est.mean - INV_SQRT_2PI) <= 3 * est.std_error


def test_estimate_q2_matches_quadrature():
    for seed in range(5):
        t = random_transform(seed, 2)
        est = qei.estimate_qei(t, 1_000_000, seed)
        assert abs(est.mean - qei.quadrature_qei(t)) <= max(3 * est.std_error, 1e-4)


def test_estimate_single_sample_warns():
    t = random_transform(0, 2)
    with pytest.warns(RuntimeWarning):
        est = qei.estimate_qei(t, 1, 0)
    assert math.isnan(est.std_error) and est.samples == 1


def test_estimate_rejects_zero_samples():
    with pytest.raises(ValueError):
        qei.estimate_qei(random_transform(0, 2), 0, 0)


def test_estimate_chunking_is_invisible():
    t = random_transform(1, 3)
    big = qei.estimate_qei(t, 300_000, seed=9)
    Z = rng.normals(rng.stream(9, rng.ESTIMATE), (300_000, 3))
    out = np.empty(300_000)
    _kernels.h_values(t.m, t.C, Z, out)
    assert big.mean == pytest.approx(out.mean(), rel=1e-13)


def test_common_random_numbers_need_equal_q():
    with pytest.raises(DimensionMismatch):
        qei.estimate_qei_many([random_transform(0, 2), random_transform(0, 3)], 10, 0)


# -- gradients -------------------------------------------------------------


def test_gradient_degenerate_variance():
    # with almost no variance h follows the single branch of the lowest mean
    model = toy_model(d=1, n=5, seed=1, ls=0.3)
    model = gp.GpModel.build(model.observations, model.kernel, nugget=1e-4)
    X = np.array([[0.37]])
    t = qei_transform(model, X, with_derivatives=True)
    t = qei.ImprovementTransform(t.m, 1e-9 * t.C, 0, 1, t.dm, 1e-9 * t.dC)
    G = qei.estimate_gradient(t, 1000, 0)
    if t.m[1] > 0:
        np.testing.assert_allclose(G, t.dm[:, 1].reshape(1, 1), atol=1e-6)
    else:
        np.testing.assert_allclose(G, 0.0, atol=1e-6)


def test_gradient_q1_matches_closed_form(model2d):
    X = np.array([[0.93, 0.07]])
    t = qei_transform(model2d, X, with_derivatives=True)
    G, se = qei.estimate_gradient(t, 100_000, 3, return_se=True)
    mu, sigma = -t.m[1] + model2d.incumbent, -t.C[1, 0]
    d_mu, d_sigma = qei.closed_form_ei_1_grad(mu, sigma, model2d.incumbent)
    # d mu / dx = -dm, d sigma / dx = -dC
    expect = d_mu * (-t.dm[:, 1]) + d_sigma * (-t.dC[:, 1, 0])
    assert np.all(np.abs(G.ravel() - expect) <= 3 * se.ravel() + 1e-12)


@pytest.mark.parametrize("q", [1, 2, 3])
def test_gradient_matches_quadrature_fd(q, model2d):
    X = np.random.default_rng(q).uniform(0.1, 0.9, (q, 2))
    t = qei_transform(model2d, X, with_derivatives=True)
    G, se = qei.estimate_gradient(t, 200_000, q, return_se=True)
    h = 1e-4
    for i in range(q):
        for k in range(2):
            Xp, Xm = X.copy(), X.copy()
            Xp[i, k] += h
            Xm[i, k] -= h
            fd = (qei.quadrature_qei(qei_transform(model2d, Xp)) - qei.quadrature_qei(qei_transform(model2d, Xm))) / (2 * h)
            assert abs(G[i, k] - fd) <= max(3 * se[i, k], 1e-3)


def test_gradient_respects_pending(model2d):
    pending = np.array([[0.2, 0.2]])
    X = np.array([[0.6, 0.7]])
    t = qei_transform(model2d, X, pending, with_derivatives=True)
    G = qei.estimate_gradient(t, 1000, 0)
    assert G.shape == (1, 2)


def test_gradient_needs_derivatives():
    with pytest.raises(ValueError):
        qei.gradient_samples(random_transform(0, 2), np.zeros((3, 2)))


# -- closed form -----------------------------------------------------------


def test_closed_form_values():
    assert qei.closed_form_ei_1(0.0, 1.0, 0.0) == pytest.approx(INV_SQRT_2PI, rel=1e-15)
    assert qei.closed_form_ei_1(0.0, 1.0, 1.0) == pytest.approx(EI_0_1_1, rel=1e-14)
    assert qei.closed_form_ei_1(-2.0, 1e-12, 1.0) == pytest.approx(3.0, rel=1e-12)


def test_closed_form_rejects_bad_sigma():
    for s in (0.0, -1.0):
        with pytest.raises(NonPositiveSigma):
            qei.closed_form_ei_1(0.0, s, 0.0)


def test_closed_form_grad_finite_difference():
    mu, s, f = 0.3, 0.7, 0.1
    d_mu, d_s = qei.closed_form_ei_1_grad(mu, s, f)
    h = 1e-6
    assert d_mu == pytest.approx((qei.closed_form_ei_1(mu + h, s, f) - qei.closed_form_ei_1(mu - h, s, f)) / (2 * h), abs=1e-8)
    assert d_s == pytest.approx((qei.closed_form_ei_1(mu, s + h, f) - qei.closed_form_ei_1(mu, s - h, f)) / (2 * h), abs=1e-8)


# -- quadrature oracle -----------------------------------------------------


def test_quadrature_q1_equals_closed_form():
    for mu, s, f in [(0.0, 1.0, 0.0), (0.4, 0.3, 0.1), (-2.0, 1.5, 0.5), (3.0, 0.5, 0.0)]:
        t = qei.transform_from_moments([mu], [[s]], f)
        assert qei.quadrature_qei(t) == pytest.approx(qei.closed_form_ei_1(mu, s, f), abs=1e-8)


def test_quadrature_degenerate_variance():
    t = qei.transform_from_moments([0.3, -0.4], 1e-12 * np.eye(2), 0.2)
    assert qei.quadrature_qei(t) == pytest.approx(0.6, abs=1e-8)


@pytest.mark.parametrize("q", [2, 3])
def test_quadrature_self_convergence(q):
    t = random_transform(11, q)
    vals = [qei.quadrature_qei(t, n) for n in (30, 50, 80)]
    assert abs(vals[1] - vals[0]) < 1e-6 and abs(vals[2] - vals[1]) < 1e-6


def test_quadrature_limits():
    with pytest.raises(UnsupportedDimension):
        qei.quadrature_qei(random_transform(0, 4))
    with pytest.raises(ValueError):
        qei.quadrature_qei(random_transform(0, 2), nodes_per_dim=10)


def test_no_improvement_probability_matches_frequency():
    t = random_transform(5, 3)
    p0 = qei.quadrature_no_improvement(t)
    Z = rng.normals(rng.stream(0, 1), (1_000_000, 3))
    vals = np.empty(Z.shape[0])
    grads = np.empty((Z.shape[0], 0))
    arg = np.empty(Z.shape[0], dtype=np.int64)
    _kernels.h_grad(t.m, t.C, np.zeros((0, 4)), np.zeros((0, 4, 3)), Z, vals, grads, arg)
    freq = np.mean(arg == 0)
    assert abs(freq - p0) <= 3 * math.sqrt(p0 * (1 - p0) / Z.shape[0])


def test_ties_have_measure_zero():
    t = random_transform(8, 3)
    Z = rng.normals(rng.stream(1, 1), (1_000_000, 3))
    Y = t.m + Z @ t.C.T
    top = np.sort(Y, axis=1)
    assert np.count_nonzero(top[:, -1] == top[:, -2]) == 0


# -- properties ------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), q=st.integers(1, 4))
def test_qei_nonnegative(seed, q):
    t = random_transform(seed, q, scale=np.random.default_rng(seed).uniform(0.01, 10))
    assert qei.estimate_qei(t, 2000, seed).mean >= 0.0
    if q <= 3:
        assert qei.quadrature_qei(t, 30) >= -1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), q=st.integers(2, 3), ls=st.floats(0.05, 1.0))
def test_quadrature_permutation_invariant(seed, q, ls):
    model = toy_model(seed=seed % 1000, ls=ls)
    X = np.random.default_rng(seed).uniform(0, 1, (q, 2))
    base = qei.quadrature_qei(qei_transform(model, X))
    perm = np.random.default_rng(seed + 1).permutation(q)
    assert abs(qei.quadrature_qei(qei_transform(model, X[perm])) - base) <= 1e-8


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), q=st.integers(1, 2), ls=st.floats(0.05, 1.0))
def test_quadrature_monotone_in_batch_size(seed, q, ls):
    model = toy_model(seed=seed % 1000, ls=ls)
    X = np.random.default_rng(seed).uniform(0, 1, (q + 1, 2))
    small = qei.quadrature_qei(qei_transform(model, X[:q]))
    big = qei.quadrature_qei(qei_transform(model, X))
    assert big >= small - 1e-8


def test_estimate_invariant_to_consistent_permutation():
    t = random_transform(2, 3)
    perm = np.array([0, 3, 1, 2])
    tp = qei.ImprovementTransform(t.m[perm], t.C[perm])
    Z = rng.normals(rng.stream(0, 2), (5000, 3))
    a, b = np.empty(5000), np.empty(5000)
    _kernels.h_values(t.m, t.C, Z, a)
    _kernels.h_values(tp.m, tp.C, Z, b)
    np.testing.assert_array_equal(a, b)
