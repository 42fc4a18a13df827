"""Self-tests: derivative checks and a brute-force oracle for the cubic subproblem."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .problems import finite_difference_check, logistic_problem, synthetic_logistic, test_function_catalog
from .subproblem import certify_global, cubic_model_value, solve_p2_cubic


def cubic_radius_bound(g, H, sigma) -> float:
    """Radius beyond which the cubic model is positive, hence above m(0) = 0."""
    gn = float(np.linalg.norm(g))
    hn = float(np.linalg.norm(H, 2))
    return 3.0 * (hn / 2 + np.sqrt(hn * hn / 4 + 2 * sigma * gn / 3)) / sigma


def brute_force_cubic(g, H, sigma, grid_size=None, n_starts=6):
    """Global minimum of the cubic model for n in {1, 2} by dense grid search and local polish.

    Returns:
        (d, value) at the best point found.
    """
    g = np.asarray(g, dtype=float)
    H = np.asarray(H, dtype=float)
    n = g.size
    if n not in (1, 2):
        raise ValueError("brute force is only practical for n <= 2")
    R = cubic_radius_bound(g, H, sigma) * 1.05 + 1e-12
    if n == 1:
        m = grid_size or 40001
        ts = np.linspace(-R, R, m)
        vals = g[0] * ts + 0.5 * H[0, 0] * ts ** 2 + sigma / 6 * np.abs(ts) ** 3
        pts = ts[:, None]
    else:
        m = grid_size or 601
        ax = np.linspace(-R, R, m)
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        quad = np.einsum("ij,jk,ik->i", pts, H, pts)
        vals = pts @ g + 0.5 * quad + sigma / 6 * np.linalg.norm(pts, axis=1) ** 3
    order = np.argsort(vals)
    starts = [pts[i] for i in order[: n_starts * 20 : 20]] + [np.zeros(n)]
    best_d, best_v = np.zeros(n), 0.0

    def fun(d):
        return cubic_model_value(g, H, sigma, d)

    def jac(d):
        return g + H @ d + 0.5 * sigma * np.linalg.norm(d) * d

    for s in starts:
        res = minimize(fun, s, jac=jac, method="BFGS", options={"gtol": 1e-13, "maxiter": 500})
        for cand in (res.x, s):
            v = fun(cand)
            if v < best_v:
                best_d, best_v = np.array(cand, dtype=float), v
    return best_d, best_v


def random_cubic_instance(rng, n, hard=False):
    """Random (g, H, sigma); ``hard`` builds g orthogonal to the bottom eigenvector of an indefinite H."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    if hard:
        evals = np.sort(rng.uniform(0.2, 3.0, n))
        evals[0] = -rng.uniform(0.5, 3.0)
        H = Q @ np.diag(evals) @ Q.T
        coef = rng.standard_normal(n)
        coef[0] = 0.0
        g = Q @ coef * rng.uniform(0.01, 0.5)
        if n == 1:
            g = np.zeros(1)
    else:
        evals = rng.uniform(-3.0, 3.0, n)
        H = Q @ np.diag(evals) @ Q.T
        g = rng.standard_normal(n) * rng.uniform(0.1, 3.0)
    H = 0.5 * (H + H.T)
    sigma = float(rng.uniform(0.2, 5.0))
    return g, H, sigma


@dataclass
class SubproblemCheck:
    count: int
    hard_count: int
    worst_gap: float
    certificates_ok: bool
    failures: list

    @property
    def passed(self):
        return self.certificates_ok and not self.failures


def subproblem_oracle_check(seed=42, count=100, hard=5, tol=1e-8) -> SubproblemCheck:
    """Compare the exact cubic solver with brute force on random n in {1, 2} instances."""
    rng = np.random.default_rng(seed)
    failures, worst, certs_ok = [], 0.0, True
    for i in range(count):
        n = 1 + (i % 2)
        is_hard = i < hard
        if is_hard:
            n = 2 if i % 2 == 0 or hard <= 1 else 1
        g, H, sigma = random_cubic_instance(rng, n, hard=is_hard)
        res = solve_p2_cubic(g, H, sigma)
        cert = certify_global(res, g, H, sigma)
        _, bf_val = brute_force_cubic(g, H, sigma)
        val = cubic_model_value(g, H, sigma, res.d)
        gap = val - bf_val
        worst = max(worst, gap)
        # the model has no constant term, so |Omega(0)| = 0 in the tolerance
        if gap > tol:
            failures.append((i, gap))
        if not cert.passed:
            certs_ok = False
            failures.append((i, "certificate"))
    return SubproblemCheck(count, hard, worst, certs_ok, failures)


def derivative_check(seed=42, points=20, tol=1e-5):
    """Finite-difference check of every catalog function and the logistic oracle.

    Returns:
        list of (name, worst gradient error, worst Hessian error, passed).
    """
    rng = np.random.default_rng(seed)
    problems = [tf.as_problem() for tf in test_function_catalog()]
    problems.append(logistic_problem(synthetic_logistic(seed, 60, 8), 1e-5, name="logistic"))
    rows = []
    for pr in problems:
        ge = he = 0.0
        for _ in range(points):
            x = pr.x0 + rng.standard_normal(pr.dim)
            e1, e2 = finite_difference_check(pr, x, 1e-5)
            ge, he = max(ge, e1), max(he, e2)
        rows.append((pr.name, ge, he, ge <= tol and he <= tol))
    return rows
