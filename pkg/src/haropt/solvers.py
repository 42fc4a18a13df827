"""History-aware adaptive regularization (full, cyclic and sliding-window history)
and two baseline adaptive schemes.
"""
from __future__ import annotations

import enum
import math
import time
import warnings
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .oracles import (
    CountingProblem,
    OracleError,
    ProblemInstance,
    UnsupportedMeasureError,
    first_order_measure,
    min_eigenvalue,
)
from .subproblem import SubproblemFailure, solve_p1, solve_p2_cubic
from .taylor import DegenerateStep, TaylorModel, check_order, default_step_floor, local_estimate_value


class RunStatus(str, enum.Enum):
    GRADIENT_TOLERANCE = "GradientTolerance"
    SECOND_ORDER_TOLERANCE = "SecondOrderTolerance"
    FUNCTION_GAP = "FunctionGap"
    MAX_ITERATIONS = "MaxIterations"
    TIME_LIMIT = "TimeLimit"
    SUBPROBLEM_FAILURE = "SubproblemFailure"
    ORACLE_FAILURE = "OracleFailure"
    DEGENERATE_STEP = "DegenerateStep"

    def __str__(self):
        return self.value

    @property
    def solved(self):
        # second-order termination implies the gradient tolerance as well
        return self in (RunStatus.GRADIENT_TOLERANCE, RunStatus.SECOND_ORDER_TOLERANCE)


# ---------------------------------------------------------------------------
# History policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HistoryPolicy:
    kind: str = "full"
    budget: float = math.inf

    def __post_init__(self):
        if self.kind not in ("full", "cyclic", "sliding"):
            raise ValueError(f"unknown history policy {self.kind!r}")
        if not (self.budget == math.inf or (float(self.budget).is_integer() and self.budget >= 1)):
            raise ValueError("budget must be a positive integer or inf")

    @classmethod
    def full(cls):
        return cls("full")

    @classmethod
    def cyclic(cls, budget):
        return cls("cyclic", budget)

    @classmethod
    def sliding(cls, budget):
        return cls("sliding", budget)

    @property
    def label(self):
        if self.kind == "full":
            return "HAR"
        b = "inf" if self.budget == math.inf else str(int(self.budget))
        return f"HAR-{'C' if self.kind == 'cyclic' else 'S'}({b})"


class HistoryState:
    """Adaptive parameter M_k and the stored local estimates."""

    def __init__(self, H0: float, policy: HistoryPolicy):
        if not H0 > 0:
            raise ValueError("H0 must be positive")
        self.H0 = float(H0)
        self.policy = policy
        self.M = float(H0)
        self.k = 0
        self.estimates: list[float] = []
        maxlen = None if policy.budget == math.inf else int(policy.budget)
        self.window: deque = deque(maxlen=maxlen if policy.kind == "sliding" else None)

    @property
    def last_estimate(self):
        return self.estimates[-1] if self.estimates else self.H0

    def advance(self) -> float:
        """Start iteration k = self.k + 1 and return M_k."""
        self.k += 1
        k = self.k
        H_prev = self.last_estimate
        kind, B = self.policy.kind, self.policy.budget
        if kind == "full":
            self.M = max(self.M, H_prev)
        elif kind == "cyclic":
            if B != math.inf and k % int(B) == 0:
                self.M = max(self.H0, H_prev)
                self.window.clear()
            else:
                self.M = max(self.M, H_prev)
            if self.estimates:
                self.window.append(H_prev)
        else:
            # window holds H_{b_k}, ..., H_{k-1} with b_k = max(1, k - B)
            self.M = max([self.H0, *self.window])
        return self.M

    def record(self, H: float):
        self.estimates.append(float(H))
        if self.policy.kind == "sliding":
            self.window.append(float(H))

    @property
    def measured_H_max(self):
        return max([self.H0, *self.estimates])


def unsuccessful_bound(H0: float, H_max: float, alpha: float) -> int:
    """ceil(log_{(alpha+1)/2}(H_max / H0))."""
    if not (H_max >= H0 > 0) or not alpha > 1:
        raise ValueError("need H_max >= H0 > 0 and alpha > 1")
    if H_max == H0:
        return 0
    val = math.log(H_max / H0) / math.log((alpha + 1) / 2)
    r = round(val)
    # absorb roundoff in exact powers, e.g. log2(8)
    if abs(val - r) <= 1e-12 * max(1.0, abs(val)):
        return int(r)
    return int(math.ceil(val))


def budget_lower_bound(H0: float, lipschitz_upper: float, alpha: float) -> int:
    """Smallest budget that keeps the cyclic/sliding schemes from stalling."""
    return unsuccessful_bound(H0, max(lipschitz_upper, H0), alpha) + 1


# ---------------------------------------------------------------------------
# Configuration and records
# ---------------------------------------------------------------------------


@dataclass
class SolverConfig:
    p: int = 2
    alpha: float = 2.0
    H0: float = 1.0
    policy: HistoryPolicy = field(default_factory=HistoryPolicy)
    eps_g: float = 1e-8
    eps_H: Optional[float] = None
    max_iters: int = 1000
    tol_sub: float = 1e-9
    step_floor: Optional[float] = None
    lipschitz_upper_hint: Optional[float] = None
    time_limit: Optional[float] = None

    def __post_init__(self):
        check_order(self.p)
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")
        if not self.H0 > 0:
            raise ValueError("H0 must be positive")
        if self.eps_g <= 0:
            raise ValueError("eps_g must be positive")
        if self.eps_H is not None and self.eps_H <= 0:
            raise ValueError("eps_H must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.policy.kind != "full" and self.policy.budget != math.inf and self.lipschitz_upper_hint:
            need = budget_lower_bound(self.H0, self.lipschitz_upper_hint, self.alpha)
            if self.policy.budget < need:
                warnings.warn(
                    f"budget {int(self.policy.budget)} is below {need}, the size needed "
                    f"for L_p <= {self.lipschitz_upper_hint:g}",
                    stacklevel=2,
                )

    def to_dict(self):
        d = asdict(self)
        d["policy"] = {"kind": self.policy.kind, "budget": _json_num(self.policy.budget)}
        return d


def _json_num(v):
    return "inf" if v == math.inf else v


@dataclass
class IterationRecord:
    k: int
    F_value: float
    stationarity: float
    H: float
    M: float
    sigma: float
    step_norm: float
    successful: bool
    null_step: bool
    n_f: int
    n_g: int
    n_H: int
    wall_time: float
    F_trial: float = float("nan")
    F_prev: float = float("nan")
    repeats: int = 0
    subproblem_residual: float = 0.0


TRACE_COLUMNS = (
    "k", "F", "stationarity", "H_k", "M_k", "sigma_k", "step_norm",
    "successful", "null_step", "n_f", "n_g", "n_H", "wall_time_s",
)


def record_row(rec: IterationRecord):
    return (
        rec.k, rec.F_value, rec.stationarity, rec.H, rec.M, rec.sigma, rec.step_norm,
        int(rec.successful), int(rec.null_step), rec.n_f, rec.n_g, rec.n_H, rec.wall_time,
    )


@dataclass
class RunResult:
    status: RunStatus
    final_x: np.ndarray
    trace: list
    measured_H_max: float
    method: str = "HAR"
    initial_F: float = float("nan")
    final_F: float = float("nan")
    final_stationarity: float = float("nan")
    final_second_order: Optional[float] = None
    counts: tuple = (0, 0, 0)
    wall_time: float = 0.0
    message: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def unsuccessful_count(self):
        return sum(1 for r in self.trace if not r.successful)

    @property
    def iterations(self):
        return len(self.trace)


# ---------------------------------------------------------------------------
# HAR family
# ---------------------------------------------------------------------------


class HARState:
    """Iterate, cached derivatives and history for one HAR run."""

    def __init__(self, problem: CountingProblem, config: SolverConfig):
        self.problem = problem
        self.config = config
        self.history = HistoryState(config.H0, config.policy)
        self.x = problem.x0.copy()
        self.f = problem.value(self.x)
        self.F = self.f + problem.psi.value(self.x)
        self.g = problem.gradient(self.x)
        self._hess = None
        self.t0 = time.perf_counter()

    @property
    def hess(self):
        if self._hess is None:
            self._hess = self.problem.hessian(self.x)
        return self._hess

    def stationarity(self):
        return first_order_measure(self.problem.psi, self.x, self.g)


def _direction(problem, config, x, g, hess_fn, sigma):
    if config.p == 1:
        return solve_p1(g, sigma, x, problem.psi), 0.0
    if not problem.psi.is_zero:
        raise UnsupportedMeasureError("p=2 subproblems require psi == 0")
    res = solve_p2_cubic(g, hess_fn(), sigma, tol_sub=config.tol_sub)
    return res.d, res.residual


def har_step(state: HARState, problem: CountingProblem = None, config: SolverConfig = None) -> IterationRecord:
    """One iteration of the history-aware scheme.

    Raises:
        DegenerateStep: the computed step is below the step floor; the
            iterate is left unchanged.
    """
    problem = problem or state.problem
    config = config or state.config
    p, alpha = config.p, config.alpha
    M = state.history.advance()
    sigma = alpha * M
    x_prev, f_prev, F_prev, g_prev = state.x, state.f, state.F, state.g
    H_model = state.hess if p == 2 else None
    d, resid = _direction(problem, config, x_prev, g_prev, lambda: H_model, sigma)
    floor = config.step_floor if config.step_floor is not None else default_step_floor(x_prev)
    nd = float(np.linalg.norm(d))
    if nd <= floor:
        raise DegenerateStep(nd, floor)
    x_half = x_prev + d
    f_half = problem.value(x_half)
    F_half = f_half + problem.psi.value(x_half)
    model = TaylorModel(x_prev, f_prev, g_prev, H_model, p)
    H_k = local_estimate_value(model, d, f_half, floor)
    successful = (alpha + 1.0) * M >= 2.0 * H_k
    null_step = not (F_half <= F_prev)
    if not null_step:
        state.x, state.f, state.F = x_half, f_half, F_half
        state.g = problem.gradient(x_half)
        state._hess = None
    state.history.record(H_k)
    n_f, n_g, n_H = problem.counts()
    return IterationRecord(
        k=state.history.k,
        F_value=state.F,
        stationarity=state.stationarity(),
        H=H_k,
        M=M,
        sigma=sigma,
        step_norm=nd,
        successful=bool(successful),
        null_step=null_step,
        n_f=n_f,
        n_g=n_g,
        n_H=n_H,
        wall_time=time.perf_counter() - state.t0,
        F_trial=F_half,
        F_prev=F_prev,
        subproblem_residual=resid,
    )


def _wants_second_order(problem, config):
    if config.eps_H is None:
        return False
    if config.p != 2 or not problem.psi.is_zero:
        raise UnsupportedMeasureError("second-order termination needs p=2 and psi == 0")
    return True


def _converged(state, config, second):
    """Termination status at the current iterate, or None."""
    if state.stationarity() > config.eps_g:
        return None
    if not second:
        return RunStatus.GRADIENT_TOLERANCE
    if min_eigenvalue(state.hess) >= -config.eps_H:
        return RunStatus.SECOND_ORDER_TOLERANCE
    return None


def _finish(state, status, trace, method, config, message="", H_max=None):
    second = None
    if status == RunStatus.SECOND_ORDER_TOLERANCE:
        second = min_eigenvalue(state.hess)
    return RunResult(
        status=status,
        final_x=state.x.copy(),
        trace=trace,
        measured_H_max=H_max if H_max is not None else state.history.measured_H_max,
        method=method,
        initial_F=trace[0].F_prev if trace else state.F,
        final_F=state.F,
        final_stationarity=state.stationarity(),
        final_second_order=second,
        counts=state.problem.counts(),
        wall_time=time.perf_counter() - state.t0,
        message=message,
        extras={"config": config.to_dict()},
    )


def run_har(problem: ProblemInstance, config: SolverConfig) -> RunResult:
    """Run HAR, HAR-C or HAR-S (selected by ``config.policy``)."""
    cp = CountingProblem(problem)
    method = config.policy.label
    second = _wants_second_order(problem, config)
    trace: list = []
    try:
        state = HARState(cp, config)
    except OracleError as exc:
        raise OracleError(f"oracle failure at x0: {exc}", problem.x0) from exc
    status = _converged(state, config, second)
    if status is not None:
        return _finish(state, status, trace, method, config)
    for _ in range(config.max_iters):
        try:
            rec = har_step(state)
        except DegenerateStep as exc:
            st = RunStatus.GRADIENT_TOLERANCE if state.stationarity() <= config.eps_g else RunStatus.DEGENERATE_STEP
            return _finish(state, st, trace, method, config, str(exc))
        except SubproblemFailure as exc:
            return _finish(state, RunStatus.SUBPROBLEM_FAILURE, trace, method, config, str(exc))
        except OracleError as exc:
            return _finish(state, RunStatus.ORACLE_FAILURE, trace, method, config, str(exc))
        trace.append(rec)
        status = _converged(state, config, second)
        if status is not None:
            return _finish(state, status, trace, method, config)
        if config.time_limit is not None and rec.wall_time > config.time_limit:
            return _finish(state, RunStatus.TIME_LIMIT, trace, method, config)
    return _finish(state, RunStatus.MAX_ITERATIONS, trace, method, config)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


class _BaselineState(HARState):
    def __init__(self, problem, config):
        super().__init__(problem, config)
        self.estimates = []

    @property
    def H_max(self):
        return max([self.config.H0, *self.estimates])


def run_lsar_baseline(problem: ProblemInstance, config: SolverConfig, max_doublings: int = 64) -> RunResult:
    """Line-search adaptive regularization: double sigma until f(x+d) <= Omega(x+d).

    Each outer iteration starts from ``max(sigma_init, sigma_prev / 2)`` with
    ``sigma_init = alpha * H0``.
    """
    cp = CountingProblem(problem)
    method = "LSAR"
    second = _wants_second_order(problem, config)
    state = _BaselineState(cp, config)
    trace: list = []
    p = config.p
    sigma_init = config.alpha * config.H0
    sigma_prev = 2.0 * sigma_init

    def done(status, msg=""):
        return _finish(state, status, trace, method, config, msg, H_max=state.H_max)

    status = _converged(state, config, second)
    if status is not None:
        return done(status)
    for k in range(1, config.max_iters + 1):
        sigma = max(sigma_init, 0.5 * sigma_prev)
        H_model = state.hess if p == 2 else None
        floor = config.step_floor if config.step_floor is not None else default_step_floor(state.x)
        model = TaylorModel(state.x, state.f, state.g, H_model, p)
        try:
            for trial in range(max_doublings + 1):
                d, resid = _direction(cp, config, state.x, state.g, lambda: H_model, sigma)
                nd = float(np.linalg.norm(d))
                if nd <= floor:
                    raise DegenerateStep(nd, floor)
                x_new = state.x + d
                f_new = cp.value(x_new)
                H_k = local_estimate_value(model, d, f_new, floor)
                state.estimates.append(H_k)
                if H_k <= sigma:
                    break
                sigma *= 2.0
            else:
                return done(RunStatus.SUBPROBLEM_FAILURE, f"no acceptable sigma after {max_doublings} doublings")
        except DegenerateStep as exc:
            st = RunStatus.GRADIENT_TOLERANCE if state.stationarity() <= config.eps_g else RunStatus.DEGENERATE_STEP
            return done(st, str(exc))
        except SubproblemFailure as exc:
            return done(RunStatus.SUBPROBLEM_FAILURE, str(exc))
        except OracleError as exc:
            return done(RunStatus.ORACLE_FAILURE, str(exc))
        F_prev = state.F
        F_new = f_new + cp.psi.value(x_new)
        state.x, state.f, state.F = x_new, f_new, F_new
        try:
            state.g = cp.gradient(x_new)
        except OracleError as exc:
            return done(RunStatus.ORACLE_FAILURE, str(exc))
        state._hess = None
        sigma_prev = sigma
        n_f, n_g, n_H = cp.counts()
        trace.append(IterationRecord(
            k=k, F_value=F_new, stationarity=state.stationarity(), H=H_k, M=sigma, sigma=sigma,
            step_norm=nd, successful=True, null_step=False, n_f=n_f, n_g=n_g, n_H=n_H,
            wall_time=time.perf_counter() - state.t0, F_trial=F_new, F_prev=F_prev,
            repeats=trial, subproblem_residual=resid,
        ))
        status = _converged(state, config, second)
        if status is not None:
            return done(status)
        if config.time_limit is not None and trace[-1].wall_time > config.time_limit:
            return done(RunStatus.TIME_LIMIT)
    return done(RunStatus.MAX_ITERATIONS)


@dataclass(frozen=True)
class ARCParameters:
    eta1: float = 0.1
    eta2: float = 0.9
    gamma1: float = 2.0
    gamma2: float = 2.0
    sigma_min: float = 1e-12


def run_arc_baseline(problem: ProblemInstance, config: SolverConfig, params: ARCParameters = ARCParameters()) -> RunResult:
    """Adaptive cubic regularization with the classic ratio test (p=2, psi == 0)."""
    if config.p != 2 or not problem.psi.is_zero:
        raise UnsupportedMeasureError("the ARC baseline needs p=2 and psi == 0")
    cp = CountingProblem(problem)
    method = "ARC"
    second = _wants_second_order(problem, config)
    state = _BaselineState(cp, config)
    trace: list = []
    sigma = config.alpha * config.H0

    def done(status, msg=""):
        return _finish(state, status, trace, method, config, msg, H_max=state.H_max)

    status = _converged(state, config, second)
    if status is not None:
        return done(status)
    for k in range(1, config.max_iters + 1):
        H_model = state.hess
        floor = config.step_floor if config.step_floor is not None else default_step_floor(state.x)
        try:
            res = solve_p2_cubic(state.g, H_model, sigma, tol_sub=config.tol_sub)
            nd = res.step_norm
            if nd <= floor or res.model_decrease <= 0.0:
                raise DegenerateStep(nd, floor)
            x_new = state.x + res.d
            f_new = cp.value(x_new)
        except DegenerateStep as exc:
            st = RunStatus.GRADIENT_TOLERANCE if state.stationarity() <= config.eps_g else RunStatus.DEGENERATE_STEP
            return done(st, str(exc))
        except SubproblemFailure as exc:
            return done(RunStatus.SUBPROBLEM_FAILURE, str(exc))
        except OracleError as exc:
            return done(RunStatus.ORACLE_FAILURE, str(exc))
        model = TaylorModel(state.x, state.f, state.g, H_model, 2)
        H_k = local_estimate_value(model, res.d, f_new, floor)
        state.estimates.append(H_k)
        rho = (state.f - f_new) / res.model_decrease
        accepted = rho >= params.eta1
        F_prev = state.F
        sigma_used = sigma
        if accepted:
            state.x, state.f, state.F = x_new, f_new, f_new
            try:
                state.g = cp.gradient(x_new)
            except OracleError as exc:
                return done(RunStatus.ORACLE_FAILURE, str(exc))
            state._hess = None
        if rho >= params.eta2:
            sigma = max(sigma / params.gamma2, params.sigma_min)
        elif rho < params.eta1:
            sigma = params.gamma1 * sigma
        n_f, n_g, n_H = cp.counts()
        trace.append(IterationRecord(
            k=k, F_value=state.F, stationarity=state.stationarity(), H=H_k, M=sigma_used,
            sigma=sigma_used, step_norm=nd, successful=bool(accepted), null_step=not accepted,
            n_f=n_f, n_g=n_g, n_H=n_H, wall_time=time.perf_counter() - state.t0,
            F_trial=f_new, F_prev=F_prev, subproblem_residual=res.residual,
        ))
        trace[-1].rho = rho
        status = _converged(state, config, second)
        if status is not None:
            return done(status)
        if config.time_limit is not None and trace[-1].wall_time > config.time_limit:
            return done(RunStatus.TIME_LIMIT)
    return done(RunStatus.MAX_ITERATIONS)
