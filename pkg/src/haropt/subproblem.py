"""Exact solvers for the regularized model subproblem.

For p = 1 the subproblem is a proximal step. For p = 2 (psi == 0) the cubic
model

    m(d) = <g, d> + 1/2 <H d, d> + sigma/6 ||d||^3

is minimized globally. A global minimizer is characterized by

    (H + lam I) d = -g,   lam = sigma/2 ||d||,   H + lam I >= 0,

and ``lam`` is found as the root of the secular function
``1/||d(lam)|| - sigma/(2 lam)``, which is increasing and concave on
``(max(0, -lambda_min(H)), inf)``. Trial multipliers are factorized with
Cholesky; Newton steps are safeguarded by bisection on a sign-change bracket.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh, solve_triangular

from .oracles import prox_step


class SubproblemFailure(RuntimeError):
    pass


@dataclass
class CubicSubproblemResult:
    d: np.ndarray
    lam: float
    model_decrease: float
    hard_case: bool
    residual: float
    factorization_count: int
    brackets: list = field(default_factory=list, repr=False)

    @property
    def step_norm(self):
        return float(np.linalg.norm(self.d))


@dataclass(frozen=True)
class Certificate:
    passed: bool
    residual: float
    lambda_gap: float
    psd_ok: bool
    residual_tol: float


def solve_p1(g, sigma, x, psi):
    """Minimizer of <g, d> + sigma/2 ||d||^2 + psi(x + d)."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    return prox_step(psi, x - g / sigma, 1.0 / sigma) - x


def cubic_model_value(g, H, sigma, d):
    d = np.asarray(d, dtype=float)
    return float(g @ d + 0.5 * d @ (H @ d) + sigma / 6.0 * np.linalg.norm(d) ** 3)


def cubic_model_gradient(g, H, sigma, d):
    d = np.asarray(d, dtype=float)
    return g + H @ d + 0.5 * sigma * np.linalg.norm(d) * d


def _leading_eigvec_sign(v):
    # deterministic orientation: largest-magnitude component positive
    i = int(np.argmax(np.abs(v)))
    return v if v[i] >= 0 else -v


def _try_cholesky(H, lam):
    try:
        return cho_factor(H + lam * np.eye(H.shape[0]), lower=True, check_finite=False)
    except LinAlgError:
        return None


def _check_symmetric(H):
    scale = float(np.max(np.abs(H))) if H.size else 0.0
    if np.max(np.abs(H - H.T), initial=0.0) > 1e-12 * max(scale, 1e-300):
        raise ValueError("Hessian is not symmetric")


def solve_p2_cubic(g, H, sigma, tol_sub=1e-9, max_factorizations=200):
    """Global minimizer of the cubic-regularized quadratic model.

    Args:
        g: model gradient, shape (n,).
        H: symmetric model Hessian, shape (n, n).
        sigma: regularization weight (> 0).
        tol_sub: relative tolerance; the model-gradient residual at the
            returned step is at most ``tol_sub * max(1, ||g||)``.
        max_factorizations: cap on Cholesky factorizations.

    Returns:
        CubicSubproblemResult

    Raises:
        SubproblemFailure: the multiplier could not be located within the cap.
    """
    g = np.asarray(g, dtype=float).reshape(-1)
    H = np.asarray(H, dtype=float)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if H.shape != (g.size, g.size):
        raise ValueError("H and g have inconsistent shapes")
    _check_symmetric(H)
    H = 0.5 * (H + H.T)
    n = g.size
    gnorm = float(np.linalg.norm(g))
    hnorm = float(np.linalg.norm(H, 2)) if n else 0.0
    resid_tol = tol_sub * max(1.0, gnorm)

    evals, evecs = eigh(H, subset_by_index=[0, 0])
    lam_min = float(evals[0])
    v_min = _leading_eigvec_sign(evecs[:, 0])
    lower = max(0.0, -lam_min)
    nfact = 0

    def finish(d, hard):
        lam = 0.5 * sigma * float(np.linalg.norm(d))
        resid = float(np.linalg.norm(cubic_model_gradient(g, H, sigma, d)))
        dec = -cubic_model_value(g, H, sigma, d)
        return CubicSubproblemResult(d, lam, max(dec, 0.0), hard, resid, nfact, brackets)

    brackets = []
    if gnorm == 0.0:
        if lam_min >= 0.0:
            return finish(np.zeros(n), False)
        return finish((2.0 * lower / sigma) * v_min, True)

    # hard-case screen: g (numerically) orthogonal to the bottom eigenspace
    if lam_min < 0.0:
        all_vals, all_vecs = eigh(H)
        bottom = np.abs(all_vals - lam_min) <= 1e-10 * max(hnorm, 1e-300)
        proj = all_vecs[:, bottom].T @ g
        if np.linalg.norm(proj) <= 1e-10 * gnorm:
            rest = ~bottom
            coef = (all_vecs[:, rest].T @ g) / (all_vals[rest] + lower)
            d_low = -all_vecs[:, rest] @ coef
            target = 2.0 * lower / sigma
            nlow = float(np.linalg.norm(d_low))
            if nlow <= target:
                tau = np.sqrt(max(target ** 2 - nlow ** 2, 0.0))
                vb = _leading_eigvec_sign(all_vecs[:, bottom][:, 0])
                return finish(d_low + tau * vb, True)

    # bracket [lo, hi] with secular(lo) < 0 <= secular(hi)
    c = lam_min
    hi = 0.5 * (-c + np.sqrt(c * c + 2.0 * sigma * gnorm))
    hi = max(hi, lower) * (1.0 + 1e-12) + 1e-300
    lo = lower

    def secular(lam):
        nonlocal nfact
        fac = _try_cholesky(H, lam)
        nfact += 1
        if fac is None:
            return None
        d = -cho_solve(fac, g, check_finite=False)
        nd = float(np.linalg.norm(d))
        w = solve_triangular(fac[0], d, lower=True, check_finite=False)
        val = 1.0 / nd - sigma / (2.0 * lam)
        deriv = float(w @ w) / nd ** 3 + sigma / (2.0 * lam * lam)
        return d, nd, val, deriv

    # start from a point well inside the bracket, close to the right end
    lam = lower + 0.5 * (hi - lower) if lower > 0 else hi
    best = None
    while nfact < max_factorizations:
        out = secular(lam)
        if out is None:
            lo = lam
            lam = 0.5 * (lo + hi)
            continue
        d, nd, val, deriv = out
        brackets.append((lo, hi))
        if val < 0:
            lo = lam
        else:
            hi = lam
        # gradient residual of the model at d: (sigma/2 ||d|| - lam) d
        resid = abs(0.5 * sigma * nd - lam) * nd
        best = d
        if resid <= 1e-3 * resid_tol or hi - lo <= 4 * np.finfo(float).eps * max(hi, 1.0):
            break
        step = lam - val / deriv
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        lam = step
    else:
        raise SubproblemFailure(f"no multiplier found within {max_factorizations} factorizations")

    res = finish(best, False)
    if res.residual > resid_tol:
        # one Newton refinement on the full optimality system
        d = best
        for _ in range(3):
            nd = float(np.linalg.norm(d))
            J = H + 0.5 * sigma * (nd * np.eye(n) + np.outer(d, d) / max(nd, 1e-300))
            r = cubic_model_gradient(g, H, sigma, d)
            try:
                d = d - np.linalg.solve(J, r)
            except np.linalg.LinAlgError:
                break
            nfact += 1
        cand = finish(d, False)
        if cand.residual < res.residual:
            res = cand
    if res.residual > resid_tol:
        raise SubproblemFailure(f"subproblem residual {res.residual:.3e} exceeds {resid_tol:.3e}")
    return res


def certify_global(result: CubicSubproblemResult, g, H, sigma, tol_sub=1e-9) -> Certificate:
    """Recheck stationarity, multiplier consistency and the PSD condition."""
    g = np.asarray(g, dtype=float)
    H = np.asarray(H, dtype=float)
    d = np.asarray(result.d, dtype=float)
    gnorm = float(np.linalg.norm(g))
    resid = float(np.linalg.norm(cubic_model_gradient(g, H, sigma, d)))
    resid_tol = tol_sub * max(1.0, gnorm)
    lam = 0.5 * sigma * float(np.linalg.norm(d))
    lambda_gap = abs(result.lam - lam) / max(lam, 1e-300) if lam > 0 else abs(result.lam)
    scale = max(1.0, float(np.max(np.abs(H), initial=0.0)))
    psd_ok = _try_cholesky(0.5 * (H + H.T), lam + 1e-10 * scale) is not None
    passed = resid <= resid_tol and lambda_gap <= 1e-10 and psd_ok
    return Certificate(passed, resid, lambda_gap, psd_ok, resid_tol)
