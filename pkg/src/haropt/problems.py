"""Built-in problem suite: logistic regression, LIBSVM I/O and smooth test functions."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.special import expit

from .oracles import ProblemInstance

DEFAULT_GAMMA = 1e-5
# max |l'''(t)| for l(t) = log(1 + exp(-t))
_LOGISTIC_THIRD_MAX = 1.0 / (6.0 * math.sqrt(3.0))


class LibsvmParseError(ValueError):
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


# ---------------------------------------------------------------------------
# Sparse datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SparseDataset:
    """Rows of (col, value) pairs plus +-1 labels, stored as COO triples."""

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    labels: np.ndarray

    @property
    def entries(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    def to_csr(self):
        return sparse.csr_matrix((self.values, (self.rows, self.cols)), shape=(self.n_rows, self.n_cols))

    def to_dense(self):
        A = np.zeros((self.n_rows, self.n_cols))
        A[self.rows, self.cols] = self.values
        return A

    def same_as(self, other) -> bool:
        return (
            self.n_rows == other.n_rows
            and self.n_cols == other.n_cols
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.labels, other.labels)
        )


def _normalize_labels(raw):
    raw = np.asarray(raw, dtype=float)
    distinct = np.unique(raw)
    if distinct.size > 2:
        raise LibsvmParseError(f"expected at most two distinct labels, found {distinct.size}")
    if distinct.size == 2:
        return np.where(raw == distinct[0], -1.0, 1.0)
    return np.where(raw <= 0, -1.0, 1.0)


def parse_libsvm(stream, n_features: Optional[int] = None) -> SparseDataset:
    """Parse LIBSVM text ``label idx:val idx:val ...`` with 1-based, increasing indices.

    ``stream`` may be a string, bytes or a text file object.
    """
    if isinstance(stream, bytes):
        stream = stream.decode()
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows, cols, vals, labels = [], [], [], []
    max_idx = 0
    r = 0
    first_label_line = {}
    for lineno, line in enumerate(stream, start=1):
        line = line.replace("−", "-").strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise LibsvmParseError(f"bad label {tokens[0]!r}", lineno) from None
        if label not in first_label_line:
            first_label_line[label] = lineno
            if len(first_label_line) > 2:
                raise LibsvmParseError("more than two distinct labels", lineno)
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LibsvmParseError(f"malformed token {tok!r}", lineno)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise LibsvmParseError(f"malformed token {tok!r}", lineno) from None
            if idx < 1:
                raise LibsvmParseError(f"index {idx} is not 1-based", lineno)
            if idx <= prev:
                raise LibsvmParseError(f"index {idx} does not increase (previous {prev})", lineno)
            prev = idx
            rows.append(r)
            cols.append(idx - 1)
            vals.append(val)
        max_idx = max(max_idx, prev)
        labels.append(label)
        r += 1
    n = max_idx if n_features is None else int(n_features)
    if n_features is not None and max_idx > n:
        raise LibsvmParseError(f"index {max_idx} exceeds n_features={n}")
    return SparseDataset(
        n_rows=r,
        n_cols=n,
        rows=np.asarray(rows, dtype=np.int64),
        cols=np.asarray(cols, dtype=np.int64),
        values=np.asarray(vals, dtype=float),
        labels=_normalize_labels(labels) if labels else np.zeros(0),
    )


def serialize_libsvm(data: SparseDataset) -> str:
    out = []
    starts = np.searchsorted(data.rows, np.arange(data.n_rows + 1))
    for i in range(data.n_rows):
        lo, hi = starts[i], starts[i + 1]
        feats = " ".join(f"{c + 1}:{v!r}" for c, v in zip(data.cols[lo:hi].tolist(), data.values[lo:hi].tolist()))
        label = "+1" if data.labels[i] > 0 else "-1"
        out.append(f"{label} {feats}".rstrip())
    return "\n".join(out) + ("\n" if out else "")


def synthetic_logistic(seed: int, N: int, n: int, separability: float = 0.8) -> SparseDataset:
    """Gaussian features with labels from a planted hyperplane.

    Each label is flipped independently with probability ``(1 - separability) / 2``,
    so ``separability=1`` is linearly separable and ``separability=0`` gives
    labels independent of the features.
    """
    if N < 1 or n < 1:
        raise ValueError("N and n must be positive")
    if not 0.0 <= separability <= 1.0:
        raise ValueError("separability must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((N, n))
    w = rng.standard_normal(n)
    w /= np.linalg.norm(w)
    margin = A @ w
    labels = np.where(margin >= 0, 1.0, -1.0)
    flip = rng.random(N) < 0.5 * (1.0 - separability)
    labels[flip] *= -1.0
    rows, cols = np.nonzero(A)
    return SparseDataset(N, n, rows.astype(np.int64), cols.astype(np.int64), A[rows, cols], labels)


def logistic_problem(data: SparseDataset, gamma: float = DEFAULT_GAMMA, name: str = "logistic") -> ProblemInstance:
    """l2-regularized logistic loss averaged over the dataset rows."""
    if data.n_rows < 1:
        raise LibsvmParseError("dataset has no rows")
    A = data.to_dense()
    b = data.labels.astype(float)
    N, n = A.shape
    BA = b[:, None] * A

    def value(x):
        z = BA @ x
        return float(np.mean(np.logaddexp(0.0, -z)) + 0.5 * gamma * x @ x)

    def gradient(x):
        z = BA @ x
        return -(BA.T @ expit(-z)) / N + gamma * x

    def hessian(x):
        z = BA @ x
        s = expit(z)
        w = s * (1.0 - s)
        H = (A.T * w) @ A / N + gamma * np.eye(n)
        return 0.5 * (H + H.T)

    row_norms = np.linalg.norm(A, axis=1)
    L2 = _LOGISTIC_THIRD_MAX * float(np.mean(row_norms ** 3))
    return ProblemInstance(
        name=name,
        dim=n,
        f_value=value,
        f_gradient=gradient,
        f_hessian=hessian,
        x0=np.zeros(n),
        known_lipschitz=L2,
        convex=True,
        metadata={"N": N, "gamma": gamma, "x0": "zeros"},
    )


# ---------------------------------------------------------------------------
# Smooth test functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TestFunction:
    name: str
    dim: int
    value: Callable
    gradient: Callable
    hessian: Callable
    x0: np.ndarray
    known_optimum: Optional[float] = None
    minimizer: Optional[np.ndarray] = None
    convex: bool = False
    known_lipschitz: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def as_problem(self, x0=None) -> ProblemInstance:
        return ProblemInstance(
            name=self.name,
            dim=self.dim,
            f_value=self.value,
            f_gradient=self.gradient,
            f_hessian=self.hessian,
            x0=self.x0 if x0 is None else x0,
            known_lipschitz=self.known_lipschitz,
            known_optimum=self.known_optimum,
            convex=self.convex,
            metadata=dict(self.metadata),
        )


def _spd_matrix(n, cond, seed):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = np.logspace(0, math.log10(cond), n)
    A = (Q * eig) @ Q.T
    return 0.5 * (A + A.T)


def convex_quadratic(n=5, cond=10.0, seed=0, name=None) -> TestFunction:
    A = _spd_matrix(n, cond, seed)
    b = np.random.default_rng(seed + 1).standard_normal(n)
    xs = np.linalg.solve(A, b)
    return TestFunction(
        name=name or f"quadratic_{n}",
        dim=n,
        value=lambda x: float(0.5 * x @ A @ x - b @ x),
        gradient=lambda x: A @ x - b,
        hessian=lambda x: A.copy(),
        x0=np.zeros(n),
        known_optimum=float(-0.5 * b @ xs),
        minimizer=xs,
        convex=True,
        known_lipschitz=0.0,
    )


def _rosen_value(x):
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


def _rosen_gradient(x):
    g = np.zeros_like(x)
    t = x[1:] - x[:-1] ** 2
    g[:-1] += -400.0 * x[:-1] * t - 2.0 * (1.0 - x[:-1])
    g[1:] += 200.0 * t
    return g


def _rosen_hessian(x):
    n = x.size
    H = np.zeros((n, n))
    i = np.arange(n - 1)
    H[i, i] += 1200.0 * x[:-1] ** 2 - 400.0 * x[1:] + 2.0
    H[i + 1, i + 1] += 200.0
    H[i, i + 1] = -400.0 * x[:-1]
    H[i + 1, i] = -400.0 * x[:-1]
    return H


def rosenbrock(n=2) -> TestFunction:
    x0 = np.ones(n)
    x0[0::2] = -1.2
    return TestFunction(
        name="rosenbrock_2d" if n == 2 else f"rosenbrock_{n}",
        dim=n,
        value=_rosen_value,
        gradient=_rosen_gradient,
        hessian=_rosen_hessian,
        x0=x0,
        known_optimum=0.0,
        minimizer=np.ones(n),
    )


_BEALE_C = np.array([1.5, 2.25, 2.625])


def _beale_parts(z):
    x, y = z
    k = np.arange(1, 4)
    r = _BEALE_C - x * (1.0 - y ** k)
    dr_dx = -(1.0 - y ** k)
    dr_dy = x * k * y ** (k - 1)
    d2r_dxdy = k * y ** (k - 1)
    d2r_dy2 = x * k * (k - 1) * y ** np.maximum(k - 2, 0)
    return r, dr_dx, dr_dy, d2r_dxdy, d2r_dy2


def beale() -> TestFunction:
    def value(z):
        r = _beale_parts(z)[0]
        return float(r @ r)

    def gradient(z):
        r, rx, ry, _, _ = _beale_parts(z)
        return np.array([2 * r @ rx, 2 * r @ ry])

    def hessian(z):
        r, rx, ry, rxy, ryy = _beale_parts(z)
        hxx = 2 * rx @ rx
        hxy = 2 * (rx @ ry + r @ rxy)
        hyy = 2 * (ry @ ry + r @ ryy)
        return np.array([[hxx, hxy], [hxy, hyy]])

    return TestFunction("beale", 2, value, gradient, hessian, np.array([1.0, 1.0]),
                        known_optimum=0.0, minimizer=np.array([3.0, 0.5]))


def himmelblau() -> TestFunction:
    def value(z):
        x, y = z
        return float((x * x + y - 11) ** 2 + (x + y * y - 7) ** 2)

    def gradient(z):
        x, y = z
        a = x * x + y - 11
        b = x + y * y - 7
        return np.array([4 * x * a + 2 * b, 2 * a + 4 * y * b])

    def hessian(z):
        x, y = z
        hxx = 12 * x * x + 4 * y - 42
        hyy = 4 * x + 12 * y * y - 26
        hxy = 4 * (x + y)
        return np.array([[hxx, hxy], [hxy, hyy]])

    return TestFunction("himmelblau", 2, value, gradient, hessian, np.array([0.0, 0.0]),
                        known_optimum=0.0)


def quartic(n=10) -> TestFunction:
    return TestFunction(
        name=f"quartic_{n}",
        dim=n,
        value=lambda x: float(np.sum(x ** 4)),
        gradient=lambda x: 4.0 * x ** 3,
        hessian=lambda x: np.diag(12.0 * x ** 2),
        x0=np.ones(n),
        known_optimum=0.0,
        minimizer=np.zeros(n),
        convex=True,
    )


def log_sum_exp(n=5, seed=3) -> TestFunction:
    """log sum_i 2 cosh(<b_i, x>): convex, minimized at 0 with value log(2n)."""
    B = np.random.default_rng(seed).standard_normal((n, n))
    A = np.vstack([B, -B])

    def value(x):
        z = A @ x
        return float(np.logaddexp.reduce(z))

    def _probs(x):
        z = A @ x
        return np.exp(z - np.logaddexp.reduce(z))

    def gradient(x):
        return A.T @ _probs(x)

    def hessian(x):
        p = _probs(x)
        Ap = A.T @ p
        H = (A.T * p) @ A - np.outer(Ap, Ap)
        return 0.5 * (H + H.T)

    return TestFunction(
        name=f"log_sum_exp_{n}",
        dim=n,
        value=value,
        gradient=gradient,
        hessian=hessian,
        x0=np.ones(n),
        known_optimum=math.log(2 * n),
        minimizer=np.zeros(n),
        convex=True,
        metadata={"gradient_lipschitz": float(np.max(np.sum(A * A, axis=1)))},
    )


def double_well(n=4, coupling=0.1) -> TestFunction:
    """sum (x_i^2 - 1)^2 + coupling * sum x_i x_{i+1}; nonconvex with a saddle at 0."""
    def value(x):
        return float(np.sum((x * x - 1.0) ** 2) + coupling * np.sum(x[:-1] * x[1:]))

    def gradient(x):
        g = 4.0 * x * (x * x - 1.0)
        g[:-1] += coupling * x[1:]
        g[1:] += coupling * x[:-1]
        return g

    def hessian(x):
        H = np.diag(12.0 * x * x - 4.0)
        i = np.arange(n - 1)
        H[i, i + 1] = coupling
        H[i + 1, i] = coupling
        return H

    x0 = 0.1 * np.cos(np.arange(n) + 1.0)
    return TestFunction(f"double_well_{n}", n, value, gradient, hessian, x0)


def saddle_escape() -> TestFunction:
    """x^2 - y^2 + y^4/4 started on the stable manifold of the saddle at 0."""
    def value(z):
        x, y = z
        return float(x * x - y * y + 0.25 * y ** 4)

    def gradient(z):
        x, y = z
        return np.array([2 * x, -2 * y + y ** 3])

    def hessian(z):
        _, y = z
        return np.array([[2.0, 0.0], [0.0, -2.0 + 3 * y * y]])

    return TestFunction("saddle_escape", 2, value, gradient, hessian, np.array([1.0, 0.0]),
                        known_optimum=-1.0)


def powell_singular() -> TestFunction:
    def value(z):
        a, b, c, d = z
        return float((a + 10 * b) ** 2 + 5 * (c - d) ** 2 + (b - 2 * c) ** 4 + 10 * (a - d) ** 4)

    def gradient(z):
        a, b, c, d = z
        t1 = a + 10 * b
        t2 = c - d
        t3 = (b - 2 * c) ** 3
        t4 = (a - d) ** 3
        return np.array([
            2 * t1 + 40 * t4,
            20 * t1 + 4 * t3,
            10 * t2 - 8 * t3,
            -10 * t2 - 40 * t4,
        ])

    def hessian(z):
        a, b, c, d = z
        s3 = 12 * (b - 2 * c) ** 2
        s4 = 120 * (a - d) ** 2
        return np.array([
            [2 + s4, 20, 0, -s4],
            [20, 200 + s3, -2 * s3, 0],
            [0, -2 * s3, 10 + 4 * s3, -10],
            [-s4, 0, -10, 10 + s4],
        ], dtype=float)

    return TestFunction("powell_singular", 4, value, gradient, hessian,
                        np.array([3.0, -1.0, 0.0, 1.0]), known_optimum=0.0, minimizer=np.zeros(4))


def test_function_catalog():
    return [
        convex_quadratic(5, 10.0, seed=0, name="quadratic_5"),
        convex_quadratic(10, 1e3, seed=1, name="quadratic_ill_10"),
        rosenbrock(2),
        rosenbrock(10),
        beale(),
        himmelblau(),
        quartic(10),
        log_sum_exp(5),
        double_well(4),
        saddle_escape(),
        powell_singular(),
    ]


test_function_catalog.__test__ = False


def catalog_by_name():
    return {tf.name: tf for tf in test_function_catalog()}


# ---------------------------------------------------------------------------
# Derivative checker
# ---------------------------------------------------------------------------


def finite_difference_check(problem, x, h: float = 1e-5):
    """Central-difference check of the gradient and Hessian oracles.

    Returns ``(grad_err, hess_err)``: max absolute deviation divided by
    ``1 + max |analytic|``. ``hess_err`` is ``nan`` without a Hessian oracle.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    n = x.size
    g = np.asarray(problem.f_gradient(x), dtype=float)
    fd_g = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        fd_g[i] = (problem.f_value(x + e) - problem.f_value(x - e)) / (2 * h)
    grad_err = float(np.max(np.abs(fd_g - g)) / (1.0 + np.max(np.abs(g))))
    if problem.f_hessian is None:
        return grad_err, float("nan")
    H = np.asarray(problem.f_hessian(x), dtype=float)
    fd_H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        fd_H[:, i] = (problem.f_gradient(x + e) - problem.f_gradient(x - e)) / (2 * h)
    hess_err = float(np.max(np.abs(fd_H - H)) / (1.0 + np.max(np.abs(H))))
    return grad_err, hess_err
