import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from haropt.taylor import (
    DegenerateStep,
    RegularizedModel,
    TaylorModel,
    UnsupportedOrderError,
    local_estimate_gradient,
    local_estimate_value,
    regularized_gradient,
    regularized_value,
    taylor_value,
)


def test_taylor_value_examples():
    m = TaylorModel(np.array([1.0, 0.0]), 0.5, np.array([1.0, 0.0]), np.eye(2), 2)
    assert taylor_value(m, np.array([1.0, 0.0])) == pytest.approx(2.0)
    assert taylor_value(m, np.zeros(2)) == 0.5
    m1 = TaylorModel(np.zeros(2), 1.0, np.array([2.0, -1.0]), p=1)
    assert taylor_value(m1, np.array([1.0, 1.0])) == pytest.approx(2.0)


def test_regularized_examples():
    m = RegularizedModel(TaylorModel(np.zeros(1), 0.0, np.array([1.0]), np.array([[1.0]]), 2), 6.0)
    d = np.array([(1 - math.sqrt(13)) / 6])  # root of 3d^2 - d - 1 = 0 with d < 0
    assert d[0] == pytest.approx(-0.43426, abs=1e-5)
    assert abs(regularized_gradient(m, d)[0]) <= 1e-12
    np.testing.assert_allclose(regularized_gradient(m, np.zeros(1)), [1.0])
    m1 = RegularizedModel(TaylorModel(np.zeros(2), 0.0, np.array([1.0, 0.0]), p=1), 2.0)
    np.testing.assert_allclose(regularized_gradient(m1, np.array([-0.5, 0.0])), [0.0, 0.0])


def test_local_estimate_value_examples():
    quartic = TaylorModel(np.zeros(1), 0.0, np.zeros(1), np.zeros((1, 1)), 2)
    assert local_estimate_value(quartic, np.ones(1), 1.0) == pytest.approx(6.0)
    assert local_estimate_value(quartic, np.ones(1), -1.0) == pytest.approx(-6.0)
    quad = TaylorModel(np.ones(2), 1.0, np.ones(2), np.eye(2), 2)
    d = np.array([0.3, -0.7])
    f_new = 0.5 * float((np.ones(2) + d) @ (np.ones(2) + d))
    assert local_estimate_value(quad, d, f_new) == pytest.approx(0.0, abs=1e-13)


def test_degenerate_step():
    m = TaylorModel(np.zeros(1), 0.0, np.zeros(1), np.zeros((1, 1)), 2)
    with pytest.raises(DegenerateStep):
        local_estimate_value(m, np.array([1e-16]), 0.0)
    with pytest.raises(DegenerateStep):
        local_estimate_gradient(RegularizedModel(m, 1.0), np.zeros(1), np.zeros(1))


def test_local_estimate_gradient_examples():
    A = np.diag([1.0, 3.0])
    x = np.array([1.0, -1.0])
    base = TaylorModel(x, 0.5 * x @ A @ x, A @ x, A, 2)
    model = RegularizedModel(base, 2.0)
    d = np.array([-0.2, 0.4])
    H, g_out = local_estimate_gradient(model, d, A @ (x + d))
    np.testing.assert_allclose(g_out, -1.0 * np.linalg.norm(d) * d, atol=1e-14)
    assert H == pytest.approx(0.0, abs=1e-13)
    # g_out = 0 leaves only the regularizer: H = sigma
    H, g_out = local_estimate_gradient(model, d, model.gradient(d))
    assert H == pytest.approx(2.0)
    np.testing.assert_allclose(g_out, 0.0, atol=1e-15)


def test_unsupported_order():
    with pytest.raises(UnsupportedOrderError):
        TaylorModel(np.zeros(1), 0.0, np.zeros(1), np.zeros((1, 1)), 3)
    with pytest.raises(ValueError):
        TaylorModel(np.zeros(1), 0.0, np.zeros(1), None, 2)
    m = TaylorModel(np.zeros(2), 0.0, np.zeros(2), p=1)
    with pytest.raises(ValueError):
        m.value(np.zeros(3))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2]), st.floats(0.1, 10.0))
def test_reconstruction_identity(seed, p, sigma):
    rng = np.random.default_rng(seed)
    n = 3
    x = rng.normal(size=n)
    H = rng.normal(size=(n, n))
    m = TaylorModel(x, float(rng.normal()), rng.normal(size=n), 0.5 * (H + H.T) if p == 2 else None, p)
    d = rng.normal(size=n)
    f_new = float(np.sum(np.cos(x + d)))
    Hk = local_estimate_value(m, d, f_new)
    recon = m.value(d) + Hk / math.factorial(p + 1) * np.linalg.norm(d) ** (p + 1)
    assert recon == pytest.approx(f_new, rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2]))
def test_regularized_gradient_matches_finite_differences(seed, p):
    rng = np.random.default_rng(seed)
    n = 3
    H = rng.normal(size=(n, n))
    m = RegularizedModel(TaylorModel(np.zeros(n), 0.0, rng.normal(size=n), 0.5 * (H + H.T), p), rng.uniform(0.1, 5))
    d = rng.normal(size=n)
    h = 1e-6
    fd = np.array([(regularized_value(m, d + h * e) - regularized_value(m, d - h * e)) / (2 * h) for e in np.eye(n)])
    g = regularized_gradient(m, d)
    assert np.max(np.abs(fd - g)) <= 1e-6 * (1 + np.max(np.abs(g)))


def test_local_estimate_bounded_by_lipschitz_on_logistic():
    from haropt.problems import logistic_problem, synthetic_logistic

    pr = logistic_problem(synthetic_logistic(7, 200, 20), 1e-5)
    L = pr.known_lipschitz
    rng = np.random.default_rng(3)
    for _ in range(30):
        x = rng.normal(size=20) * 0.5
        d = rng.normal(size=20) * rng.uniform(0.01, 2.0)
        m = TaylorModel(x, pr.f_value(x), pr.f_gradient(x), pr.f_hessian(x), 2)
        assert local_estimate_value(m, d, pr.f_value(x + d)) <= L + 1e-8
