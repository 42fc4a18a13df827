import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from haropt.problems import (
    LibsvmParseError,
    SparseDataset,
    catalog_by_name,
    finite_difference_check,
    logistic_problem,
    parse_libsvm,
    serialize_libsvm,
    synthetic_logistic,
    test_function_catalog,
)
from haropt.oracles import ProblemInstance


def test_parse_example():
    ds = parse_libsvm("+1 1:0.5 3:2.0\n−1 2:1.0")
    assert (ds.n_rows, ds.n_cols) == (2, 3)
    assert ds.entries == [(0, 0, 0.5), (0, 2, 2.0), (1, 1, 1.0)]
    np.testing.assert_array_equal(ds.labels, [1.0, -1.0])


def test_parse_accepts_bytes_and_streams():
    a = parse_libsvm(b"1 1:1\n0 2:3\n")
    b = parse_libsvm(io.StringIO("1 1:1\n0 2:3\n"))
    assert a.same_as(b)
    # labels {0, 1} map to {-1, +1}
    np.testing.assert_array_equal(a.labels, [1.0, -1.0])


def test_label_rules():
    np.testing.assert_array_equal(parse_libsvm("2 1:1\n4 1:2\n").labels, [-1.0, 1.0])
    np.testing.assert_array_equal(parse_libsvm("0 1:1\n0 1:2\n").labels, [-1.0, -1.0])
    with pytest.raises(LibsvmParseError) as info:
        parse_libsvm("1 1:1\n2 1:1\n3 1:1\n")
    assert info.value.lineno == 3


@pytest.mark.parametrize("text, line", [
    ("1 1:1\nx 1:1\n", 2),
    ("1 1:1 3:2 2:1\n", 1),
    ("1 0:1\n", 1),
    ("1 1:1\n1 2=3\n", 2),
    ("1 1:1 1:2\n", 1),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(LibsvmParseError) as info:
        parse_libsvm(text)
    assert info.value.lineno == line


def test_empty_file_fails_on_use():
    ds = parse_libsvm("")
    assert ds.n_rows == 0
    with pytest.raises(LibsvmParseError):
        logistic_problem(ds)


def test_n_features_override():
    assert parse_libsvm("1 2:1\n", n_features=10).n_cols == 10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 8))
def test_round_trip(seed, N, n):
    ds = synthetic_logistic(seed, N, n)
    back = parse_libsvm(serialize_libsvm(ds), n_features=ds.n_cols)
    assert back.same_as(ds)


def test_synthetic_determinism_and_separability():
    a = serialize_libsvm(synthetic_logistic(7, 200, 20))
    b = serialize_libsvm(synthetic_logistic(7, 200, 20))
    assert a == b
    # separable labels admit w with b_i <a_i, w> >= 1 for all i (LP feasibility)
    sep = synthetic_logistic(3, 300, 5, separability=1.0)
    X = sep.to_dense()
    lp = linprog(np.zeros(5), A_ub=-(sep.labels[:, None] * X), b_ub=-np.ones(300), bounds=[(None, None)] * 5)
    assert lp.status == 0
    noisy = synthetic_logistic(3, 300, 5, separability=0.5)
    X = noisy.to_dense()
    lp = linprog(np.zeros(5), A_ub=-(noisy.labels[:, None] * X), b_ub=-np.ones(300), bounds=[(None, None)] * 5)
    assert lp.status == 2


def test_separability_zero_labels_unrelated():
    ds = synthetic_logistic(11, 4000, 5, separability=0.0)
    X = ds.to_dense()
    corr = np.abs(X.T @ ds.labels) / ds.n_rows
    assert np.max(corr) < 0.06


def test_logistic_examples():
    ds = synthetic_logistic(1, 10, 3)
    assert logistic_problem(ds, 0.0).f_value(np.zeros(3)) == pytest.approx(np.log(2))
    single = SparseDataset(1, 1, np.array([0]), np.array([0]), np.array([1.0]), np.array([1.0]))
    pr = logistic_problem(single, 0.0)
    np.testing.assert_allclose(pr.f_gradient(np.zeros(1)), [-0.5])
    two = SparseDataset(1, 1, np.array([0]), np.array([0]), np.array([2.0]), np.array([1.0]))
    np.testing.assert_allclose(logistic_problem(two, 0.0).f_hessian(np.zeros(1)), [[1.0]])
    assert pr.convex
    np.testing.assert_array_equal(pr.x0, [0.0])


def test_logistic_stable_at_extreme_margins():
    single = SparseDataset(1, 1, np.array([0]), np.array([0]), np.array([1.0]), np.array([1.0]))
    pr = logistic_problem(single, 0.0)
    assert np.isfinite(pr.f_value(np.array([-800.0])))
    assert pr.f_value(np.array([-800.0])) == pytest.approx(800.0)
    assert pr.f_value(np.array([800.0])) >= 0.0


@pytest.mark.parametrize("gamma", [0.0, 1e-5, 0.1])
def test_logistic_hessian_psd(gamma):
    pr = logistic_problem(synthetic_logistic(5, 50, 6), gamma)
    rng = np.random.default_rng(0)
    for _ in range(10):
        lam = np.linalg.eigvalsh(pr.f_hessian(rng.normal(size=6) * 2))[0]
        assert lam >= gamma - 1e-10


def test_catalog_contents():
    cat = test_function_catalog()
    assert len(cat) >= 10
    names = {tf.name for tf in cat}
    assert {"rosenbrock_2d", "beale", "himmelblau", "quartic_10", "log_sum_exp_5"} <= names
    by = catalog_by_name()
    r = by["rosenbrock_2d"]
    assert r.value(np.ones(2)) == 0.0
    np.testing.assert_array_equal(r.gradient(np.ones(2)), 0.0)
    q = by["quartic_10"]
    assert q.value(np.ones(10)) == pytest.approx(10.0)
    np.testing.assert_allclose(q.gradient(np.ones(10)), 4.0)
    lse = by["log_sum_exp_5"]
    assert lse.value(np.zeros(5)) == pytest.approx(np.log(10))
    assert lse.convex and lse.metadata["gradient_lipschitz"] > 0


def test_known_minimizers_are_stationary():
    for tf in test_function_catalog():
        if tf.minimizer is not None:
            assert tf.value(tf.minimizer) == pytest.approx(tf.known_optimum, abs=1e-10)
            assert np.linalg.norm(tf.gradient(tf.minimizer)) <= 1e-6


def test_fd_checker_exact_on_quadratic():
    pr = catalog_by_name()["quadratic_5"].as_problem()
    ge, he = finite_difference_check(pr, np.random.default_rng(0).normal(size=5), 1e-5)
    assert ge <= 1e-9 and he <= 1e-9


def test_fd_checker_detects_wrong_gradient():
    tf = catalog_by_name()["rosenbrock_2d"]
    bad = ProblemInstance("bad", 2, tf.value, lambda x: 1.01 * tf.gradient(x), tf.x0, f_hessian=tf.hessian)
    ge, _ = finite_difference_check(bad, np.array([0.3, -0.8]), 1e-5)
    assert ge >= 1e-3


def test_fd_checker_logistic():
    pr = logistic_problem(synthetic_logistic(2, 40, 5), 1e-5)
    rng = np.random.default_rng(1)
    for _ in range(5):
        ge, he = finite_difference_check(pr, rng.normal(size=5), 1e-5)
        assert ge <= 1e-5 and he <= 1e-5
