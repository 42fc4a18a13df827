"""Composite problem abstraction F = f + psi, proximal maps and stationarity measures."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class OracleError(RuntimeError):
    """Raised when an oracle returns a non-finite value."""

    def __init__(self, message, x=None):
        super().__init__(message)
        self.x = None if x is None else np.array(x, dtype=float, copy=True)


class UnsupportedMeasureError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Composite terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ZeroTerm:
    """psi(x) = 0."""

    is_zero = True

    def value(self, x):
        return 0.0

    def prox(self, u, t):
        return np.array(u, dtype=float, copy=True)

    def min_norm_shift(self, x, grad):
        # min-norm element of grad + d psi(x)
        return np.asarray(grad, dtype=float)

    def contains(self, x):
        return True


@dataclass(frozen=True)
class L1Term:
    """psi(x) = weight * ||x||_1."""

    weight: float = 1.0
    is_zero = False

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("L1 weight must be nonnegative")

    def value(self, x):
        return self.weight * float(np.sum(np.abs(x)))

    def prox(self, u, t):
        u = np.asarray(u, dtype=float)
        level = t * self.weight
        return np.sign(u) * np.maximum(np.abs(u) - level, 0.0)

    def min_norm_shift(self, x, grad):
        x = np.asarray(x, dtype=float)
        grad = np.asarray(grad, dtype=float)
        out = grad + self.weight * np.sign(x)
        at_zero = x == 0.0
        out[at_zero] = np.sign(grad[at_zero]) * np.maximum(np.abs(grad[at_zero]) - self.weight, 0.0)
        return out

    def contains(self, x):
        return True


@dataclass(frozen=True, eq=False)
class BoxIndicator:
    """Indicator of the box lower <= x <= upper (componentwise)."""

    lower: np.ndarray
    upper: np.ndarray
    is_zero = False

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        lo, hi = np.broadcast_arrays(lo, hi)
        if np.any(lo > hi):
            raise ValueError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo.copy())
        object.__setattr__(self, "upper", hi.copy())

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def value(self, x):
        return 0.0 if self.contains(x) else np.inf

    def prox(self, u, t):
        return np.clip(np.asarray(u, dtype=float), self.lower, self.upper)

    def min_norm_shift(self, x, grad):
        # projection of -grad onto the tangent cone, sign flipped
        x = np.asarray(x, dtype=float)
        out = np.array(grad, dtype=float, copy=True)
        lo = np.broadcast_to(self.lower, x.shape)
        hi = np.broadcast_to(self.upper, x.shape)
        at_lo = x <= lo
        at_hi = x >= hi
        out[at_lo] = np.minimum(out[at_lo], 0.0)
        out[at_hi] = np.maximum(out[at_hi], 0.0)
        out[at_lo & at_hi] = 0.0
        return out


CompositeTerm = ZeroTerm | L1Term | BoxIndicator


# ---------------------------------------------------------------------------
# Problem instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """A composite problem min f(x) + psi(x).

    ``f_hessian`` may be ``None`` for problems only used with first-order
    models. ``known_lipschitz`` is the Lipschitz constant of the highest
    derivative used, when it is available in closed form.
    """

    name: str
    dim: int
    f_value: Callable[[np.ndarray], float]
    f_gradient: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    f_hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    psi: CompositeTerm = field(default_factory=ZeroTerm)
    known_lipschitz: Optional[float] = None
    known_optimum: Optional[float] = None
    convex: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.shape != (self.dim,):
            raise ValueError(f"x0 has shape {x0.shape}, expected ({self.dim},)")
        if not np.isfinite(self.psi.value(x0)):
            raise ValueError("x0 is not feasible for psi")
        object.__setattr__(self, "x0", x0)


class CountingProblem:
    """Per-run wrapper that counts oracle calls.

    Each solver run creates its own wrapper, so a shared ``ProblemInstance``
    is never mutated.
    """

    def __init__(self, problem: ProblemInstance):
        self.problem = problem
        self.n_f = 0
        self.n_g = 0
        self.n_H = 0

    def __getattr__(self, name):
        return getattr(self.problem, name)

    def value(self, x):
        self.n_f += 1
        v = float(self.problem.f_value(x))
        if not np.isfinite(v):
            raise OracleError(f"non-finite f value {v!r}", x)
        return v

    def gradient(self, x):
        self.n_g += 1
        g = np.asarray(self.problem.f_gradient(x), dtype=float)
        if not np.all(np.isfinite(g)):
            raise OracleError("non-finite gradient", x)
        return g

    def hessian(self, x):
        if self.problem.f_hessian is None:
            raise ValueError(f"problem {self.problem.name!r} has no Hessian oracle")
        self.n_H += 1
        H = np.asarray(self.problem.f_hessian(x), dtype=float)
        if not np.all(np.isfinite(H)):
            raise OracleError("non-finite Hessian", x)
        return H

    def counts(self):
        return self.n_f, self.n_g, self.n_H


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def evaluate_composite(problem: ProblemInstance, x) -> float:
    """Return f(x) + psi(x); +inf outside dom(psi)."""
    x = np.asarray(x, dtype=float)
    psi_val = problem.psi.value(x)
    if not np.isfinite(psi_val):
        return np.inf
    fx = float(problem.f_value(x))
    if not np.isfinite(fx):
        raise OracleError(f"non-finite f value {fx!r}", x)
    return fx + psi_val


def prox_step(psi, u, t: float) -> np.ndarray:
    """argmin_y psi(y) + ||y - u||^2 / (2t)."""
    if t <= 0:
        raise ValueError("prox step size must be positive")
    return psi.prox(u, t)


@dataclass(frozen=True)
class StationarityReport:
    first_order: float
    second_order: Optional[float] = None


def first_order_measure(psi, x, grad) -> float:
    """dist(0, grad + d psi(x)) for a precomputed gradient."""
    return float(np.linalg.norm(psi.min_norm_shift(x, grad)))


def min_eigenvalue(A) -> float:
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])


def stationarity(problem: ProblemInstance, x, want_second_order: bool = False,
                 grad=None, hess=None) -> StationarityReport:
    """Measure first-order (and optionally second-order) stationarity of F at x."""
    x = np.asarray(x, dtype=float)
    if want_second_order and not problem.psi.is_zero:
        raise UnsupportedMeasureError("second-order measure requires psi == 0")
    if grad is None:
        grad = np.asarray(problem.f_gradient(x), dtype=float)
    first = first_order_measure(problem.psi, x, grad)
    second = None
    if want_second_order:
        if hess is None:
            if problem.f_hessian is None:
                raise UnsupportedMeasureError("second-order measure requires a Hessian oracle")
            hess = problem.f_hessian(x)
        second = min_eigenvalue(np.asarray(hess, dtype=float))
    return StationarityReport(first, second)
