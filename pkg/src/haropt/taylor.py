"""Taylor models, their regularized versions and local Lipschitz estimates."""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import Optional

import numpy as np

SUPPORTED_ORDERS = (1, 2)


class UnsupportedOrderError(ValueError):
    pass


class DegenerateStep(ArithmeticError):
    """The step is too short to form a local Lipschitz estimate."""

    def __init__(self, step_norm, floor):
        super().__init__(f"step norm {step_norm:.3e} is below the floor {floor:.3e}")
        self.step_norm = step_norm
        self.floor = floor


def check_order(p):
    if p not in SUPPORTED_ORDERS:
        raise UnsupportedOrderError(f"order p={p} is not supported (only p in {SUPPORTED_ORDERS})")


def default_step_floor(x) -> float:
    return 1e-14 * (1.0 + float(np.linalg.norm(x)))


@dataclass(frozen=True, eq=False)
class TaylorModel:
    """Order-p Taylor polynomial of f at ``x``, evaluated in the step d = y - x."""

    x: np.ndarray
    f0: float
    g: np.ndarray
    H: Optional[np.ndarray] = None
    p: int = 2

    def __post_init__(self):
        check_order(self.p)
        if self.p == 2 and self.H is None:
            raise ValueError("a second-order model needs a Hessian")

    @property
    def dim(self):
        return self.g.shape[0]

    def _check(self, d):
        d = np.asarray(d, dtype=float)
        if d.shape != self.g.shape:
            raise ValueError(f"step has shape {d.shape}, model has {self.g.shape}")
        return d

    def value(self, d) -> float:
        d = self._check(d)
        val = self.f0 + float(self.g @ d)
        if self.p == 2:
            val += 0.5 * float(d @ (self.H @ d))
        return val

    def gradient(self, d) -> np.ndarray:
        d = self._check(d)
        if self.p == 2:
            return self.g + self.H @ d
        return self.g.copy()


@dataclass(frozen=True, eq=False)
class RegularizedModel:
    """T_p(d) + sigma / (p+1)! * ||d||^(p+1)."""

    base: TaylorModel
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def p(self):
        return self.base.p

    def value(self, d) -> float:
        d = np.asarray(d, dtype=float)
        p = self.p
        return self.base.value(d) + self.sigma / factorial(p + 1) * float(np.linalg.norm(d)) ** (p + 1)

    def gradient(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        p = self.p
        nd = float(np.linalg.norm(d))
        return self.base.gradient(d) + (self.sigma / factorial(p)) * nd ** (p - 1) * d


def taylor_value(model: TaylorModel, d) -> float:
    return model.value(d)


def regularized_value(model: RegularizedModel, d) -> float:
    return model.value(d)


def regularized_gradient(model: RegularizedModel, d) -> np.ndarray:
    return model.gradient(d)


def local_estimate_value(model: TaylorModel, d, f_new: float, step_floor: Optional[float] = None) -> float:
    """(p+1)! * (f(x+d) - T_p(d)) / ||d||^(p+1). May be negative."""
    d = np.asarray(d, dtype=float)
    if step_floor is None:
        step_floor = default_step_floor(model.x)
    nd = float(np.linalg.norm(d))
    if nd <= step_floor:
        raise DegenerateStep(nd, step_floor)
    p = model.p
    return factorial(p + 1) * (f_new - model.value(d)) / nd ** (p + 1)


def local_estimate_gradient(model: RegularizedModel, d, grad_new, step_floor: Optional[float] = None):
    """Gradient-based estimate used by the accelerated scheme.

    Returns ``(H, g_out)`` where ``g_out = grad f(x+d) - grad Omega(d)`` and
    ``H = p! * ||g_out + sigma/p! ||d||^(p-1) d|| / ||d||^p``.
    """
    d = np.asarray(d, dtype=float)
    if step_floor is None:
        step_floor = default_step_floor(model.base.x)
    nd = float(np.linalg.norm(d))
    if nd <= step_floor:
        raise DegenerateStep(nd, step_floor)
    p = model.p
    g_out = np.asarray(grad_new, dtype=float) - model.gradient(d)
    shifted = g_out + (model.sigma / factorial(p)) * nd ** (p - 1) * d
    H = factorial(p) * float(np.linalg.norm(shifted)) / nd ** p
    return H, g_out
