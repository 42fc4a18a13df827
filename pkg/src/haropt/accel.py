"""Accelerated history-aware adaptive regularization for convex objectives.

Four sequences are maintained: the iterates ``x``, the estimating-sequence
minimizers ``v``, the extrapolation points ``y`` and the weighted gradient sum
``s``. A repeat loop raises ``M_k`` until the gradient-based local estimate
satisfies ``H_{k+1} < beta * M_k`` with ``beta = (alpha + 1) / 2``.

The estimating-sequence functions

    phi_k(x) = C_p M_k ||x - x0||^{p+1} + sum_{i<k} a_i (F(x^{i+1}) + <g^{i+1}, x - x^{i+1}>)

can be reconstructed from a retained history and audited at runtime.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from math import factorial
from typing import Optional

import numpy as np

from .oracles import CountingProblem, OracleError, ProblemInstance, UnsupportedMeasureError
from .solvers import IterationRecord, RunResult, RunStatus, SolverConfig
from .subproblem import SubproblemFailure, solve_p2_cubic
from .taylor import DegenerateStep, RegularizedModel, TaylorModel, default_step_floor, local_estimate_gradient


class AuditUnavailable(RuntimeError):
    pass


def acceleration_constant(p: int, alpha: float, beta: Optional[float] = None) -> float:
    """C_p(alpha, beta) weighting the ||x - x0||^{p+1} term of the estimating sequence."""
    if p < 2:
        raise ValueError("the accelerated scheme needs p >= 2")
    beta = (alpha + 1) / 2 if beta is None else beta
    if not alpha > beta:
        raise ValueError("need alpha > beta")
    num = (p + 1) ** ((3 * p + 1) / 2) * (p - 1) ** ((3 * p - 1) / 2)
    return num / (2 ** p * (alpha ** 2 - beta ** 2) ** ((p - 1) / 2))


def ratio_constant(p: int, alpha: float, beta: Optional[float] = None) -> float:
    """The published constant D(alpha, beta) of the inner-product lower bound."""
    beta = (alpha + 1) / 2 if beta is None else beta
    return ((alpha ** 2 - beta ** 2) ** ((p - 1) / (2 * p)) * (2 * p / (p - 1))
            * ((p - 1) / (p + 1)) ** ((p + 1) / (2 * p)))


def ratio_constant_derived(p: int, alpha: float, beta: Optional[float] = None) -> float:
    """D(alpha, beta) recomputed from min_t gamma t^{(p+1)/(p-1)} + xi / t.

    Uses xi = p! ||g||^2 / (2 sigma) and gamma = (alpha^2 - beta^2) M / (2 alpha p!)
    with sigma = alpha M. It differs from :func:`ratio_constant` by the factor
    (p!)^{1/p} / (2 alpha), i.e. 1 / (sqrt(2) alpha) at p = 2.
    """
    beta = (alpha + 1) / 2 if beta is None else beta
    pf = factorial(p)
    xi = pf / (2 * alpha)
    gamma = (alpha ** 2 - beta ** 2) / (2 * alpha * pf)
    return (2 * p / (p - 1)) * (xi * (p - 1) / (p + 1)) ** ((p + 1) / (2 * p)) * gamma ** ((p - 1) / (2 * p))


def required_ratio_constant(p: int, alpha: float, k: int, beta: Optional[float] = None) -> float:
    """Constant the estimating-sequence step needs at iteration k.

    The lower bound of phi_{k+1}^* follows when the inner-product bound holds
    with A_{k+1}^{-1} a_k^{(p+1)/p} p 2^{(p-1)(p+1)/p} / (C_p^{1/p} (p+1)^{(p+1)/p}).
    """
    C = acceleration_constant(p, alpha, beta)
    A_next = float((k + 1) ** (p + 1))
    a_k = A_next - float(k ** (p + 1))
    return (a_k ** ((p + 1) / p) / A_next * p * 2 ** ((p - 1) * (p + 1) / p)
            / (C ** (1 / p) * (p + 1) ** ((p + 1) / p)))


def repeat_bound(H0: float, H_max: float, beta: float) -> int:
    """ceil(log_beta(H_max / H0)): cap on repeats within one iteration."""
    if not (H_max >= H0 > 0) or not beta > 1:
        raise ValueError("need H_max >= H0 > 0 and beta > 1")
    if H_max == H0:
        return 0
    val = math.log(H_max / H0) / math.log(beta)
    r = round(val)
    if abs(val - r) <= 1e-12 * max(1.0, abs(val)):
        return int(r)
    return int(math.ceil(val))


def next_adaptive_parameter(M: float, H: float) -> float:
    """M_{k+1} = max(M_k, H_{k+1})."""
    return max(M, H)


@dataclass
class AccelState:
    x: np.ndarray
    v: np.ndarray
    y: np.ndarray
    s: np.ndarray
    M: float
    A: float
    k: int
    C_p: float
    beta: float
    alpha: float
    p: int = 2
    x0: Optional[np.ndarray] = None
    F: float = float("nan")
    retain_history: bool = False
    # per outer step i (0-based): y^i, x^{i+1}, F(x^{i+1}), g^{i+1}, a_i, final M_i, H_{i+1}
    steps: list = field(default_factory=list, repr=False)
    # per k: (x^k, v^k, F(x^k), M_k) with M_k the coefficient of phi_k
    snapshots: list = field(default_factory=list, repr=False)

    @property
    def measured_H_max(self):
        hs = [st["H"] for st in self.steps]
        return max([self.snapshots[0][3] if self.snapshots else self.M, *hs])


@dataclass
class AuditReport:
    k: int
    ratio_margin: float
    ratio_margin_derived: float
    es_lower_ok: bool
    es_upper_ok: bool
    phi_star_value: float
    lower_gap: float
    upper_gap: float
    ratio_margins: list = field(default_factory=list, repr=False)

    @property
    def passed(self):
        return self.es_lower_ok and self.es_upper_ok and self.ratio_margin > 0


def run_har_a(problem: ProblemInstance, config: SolverConfig, retain_history: bool = False,
              gap_tol: Optional[float] = None, max_repeats: int = 64):
    """Accelerated scheme for smooth convex f (psi == 0, p = 2).

    Convexity is not checked. On nonconvex input the method still runs but
    its audits may fail.

    Args:
        problem: problem with a Hessian oracle and psi == 0.
        config: ``alpha``, ``H0``, ``eps_g``, ``max_iters``, ``tol_sub`` and
            ``step_floor`` are used; the history policy is ignored.
        retain_history: keep every step for :func:`audit_estimating_sequence`.
        gap_tol: stop once F(x^k) - F* <= gap_tol (needs ``known_optimum``).
        max_repeats: cap on repeats within one iteration.

    Returns:
        RunResult whose ``extras["state"]`` holds the final AccelState.
    """
    if not problem.psi.is_zero or config.p != 2:
        raise UnsupportedMeasureError("the accelerated scheme supports p=2 with psi == 0 only")
    cp = CountingProblem(problem)
    p, alpha = config.p, config.alpha
    beta = (alpha + 1) / 2
    C = acceleration_constant(p, alpha, beta)
    x0 = problem.x0.copy()
    t0 = time.perf_counter()
    f0 = cp.value(x0)
    g0 = cp.gradient(x0)
    state = AccelState(x=x0.copy(), v=x0.copy(), y=x0.copy(), s=np.zeros_like(x0), M=config.H0,
                       A=0.0, k=0, C_p=C, beta=beta, alpha=alpha, p=p, x0=x0, F=f0,
                       retain_history=retain_history)
    state.snapshots.append((x0.copy(), x0.copy(), f0, config.H0))
    trace: list = []
    H_max = config.H0
    grad_norm = float(np.linalg.norm(g0))
    fstar = problem.known_optimum

    def done(status, msg=""):
        return RunResult(
            status=status, final_x=state.x.copy(), trace=trace, measured_H_max=H_max, method="HAR-A",
            initial_F=f0, final_F=state.F, final_stationarity=grad_norm, counts=cp.counts(),
            wall_time=time.perf_counter() - t0, message=msg,
            extras={"config": config.to_dict(), "C_p": C, "beta": beta, "state": state},
        )

    def gap_reached():
        return gap_tol is not None and fstar is not None and state.F - fstar <= gap_tol

    if grad_norm <= config.eps_g:
        return done(RunStatus.GRADIENT_TOLERANCE)
    if gap_reached():
        return done(RunStatus.FUNCTION_GAP)

    for _ in range(config.max_iters):
        k = state.k
        A_k = float(k ** (p + 1))
        a_k = float((k + 1) ** (p + 1)) - A_k
        y = (A_k * state.x + a_k * state.v) / (A_k + a_k)
        state.y = y
        M = state.M
        F_prev = state.F
        try:
            fy = cp.value(y)
            gy = cp.gradient(y)
            Hy = cp.hessian(y)
            floor = config.step_floor if config.step_floor is not None else default_step_floor(y)
            base = TaylorModel(y, fy, gy, Hy, p)
            repeats = 0
            while True:
                sigma = alpha * M
                res = solve_p2_cubic(gy, Hy, sigma, tol_sub=config.tol_sub)
                nd = res.step_norm
                if nd <= floor:
                    raise DegenerateStep(nd, floor)
                x_new = y + res.d
                g_new = cp.gradient(x_new)
                H_new, g_out = local_estimate_gradient(RegularizedModel(base, sigma), res.d, g_new, floor)
                if H_new >= beta * M:
                    if repeats >= max_repeats:
                        raise SubproblemFailure(f"repeat loop exceeded {max_repeats} repetitions")
                    M = H_new
                    repeats += 1
                    continue
                break
            f_new = cp.value(x_new)
        except DegenerateStep as exc:
            status = RunStatus.GRADIENT_TOLERANCE if grad_norm <= config.eps_g else RunStatus.DEGENERATE_STEP
            return done(status, str(exc))
        except SubproblemFailure as exc:
            return done(RunStatus.SUBPROBLEM_FAILURE, str(exc))
        except OracleError as exc:
            return done(RunStatus.ORACLE_FAILURE, str(exc))

        M_used = M
        M_next = next_adaptive_parameter(M, H_new)
        H_max = max(H_max, H_new, M_used)
        state.s = state.s + a_k * g_out
        snorm = float(np.linalg.norm(state.s))
        if snorm == 0.0:
            state.v = x0.copy()
        else:
            scale = ((p + 1) * C * M_next) ** (-1.0 / p) * snorm ** (-(p - 1) / p)
            state.v = x0 - scale * state.s
        state.x, state.F, state.M = x_new, f_new, M_next
        state.k = k + 1
        state.A = float(state.k ** (p + 1))
        grad_norm = float(np.linalg.norm(g_new))
        if retain_history:
            state.steps.append({"y": y, "x": x_new, "F": f_new, "g": g_out, "a": a_k,
                                "M": M_used, "H": H_new, "residual": res.residual})
            state.snapshots.append((x_new.copy(), state.v.copy(), f_new, M_next))
        else:
            state.steps.append({"H": H_new})
        n_f, n_g, n_H = cp.counts()
        trace.append(IterationRecord(
            k=state.k, F_value=f_new, stationarity=grad_norm, H=H_new, M=M_used, sigma=alpha * M_used,
            step_norm=nd, successful=bool(H_new < beta * M_used), null_step=False,
            n_f=n_f, n_g=n_g, n_H=n_H, wall_time=time.perf_counter() - t0,
            F_trial=f_new, F_prev=F_prev, repeats=repeats, subproblem_residual=res.residual,
        ))
        if grad_norm <= config.eps_g:
            return done(RunStatus.GRADIENT_TOLERANCE)
        if gap_reached():
            return done(RunStatus.FUNCTION_GAP)
        if config.time_limit is not None and trace[-1].wall_time > config.time_limit:
            return done(RunStatus.TIME_LIMIT)
    return done(RunStatus.MAX_ITERATIONS)


def estimating_function(state: AccelState, k: int, x) -> float:
    """phi_k(x) rebuilt from the retained history."""
    x = np.asarray(x, dtype=float)
    p = state.p
    M_k = state.snapshots[k][3]
    val = state.C_p * M_k * float(np.linalg.norm(x - state.x0)) ** (p + 1)
    for st in state.steps[:k]:
        val += st["a"] * (st["F"] + float(st["g"] @ (x - st["x"])))
    return val


def audit_estimating_sequence(state: AccelState, problem: ProblemInstance, sample_points,
                              k: Optional[int] = None) -> AuditReport:
    """Check A_k F(x^k) <= phi_k(v^k) <= phi_k(x) <= A_k F(x) + M_k C_p ||x - x0||^{p+1}.

    Also reports the minimum over steps i < k of the inner-product margin
    <y^i - x^{i+1}, g^{i+1}> - D ||g^{i+1}||^{(p+1)/p} / M_i^{1/p}, once with the
    published D and once with the re-derived one.

    Raises:
        AuditUnavailable: the run did not retain its history, or k is out of range.
    """
    if not state.retain_history:
        raise AuditUnavailable("run history was not retained; rerun with retain_history=True")
    k = state.k if k is None else k
    if not 0 <= k < len(state.snapshots):
        raise AuditUnavailable(f"no snapshot for k={k}")
    p = state.p
    x_k, v_k, F_k, M_k = state.snapshots[k]
    A_k = float(k ** (p + 1))
    tol = 1e-8 * (1.0 + abs(A_k * F_k))
    phi_star = estimating_function(state, k, v_k)
    lower_gap = phi_star - A_k * F_k
    lower_ok = lower_gap >= -tol
    upper_ok = True
    upper_gap = math.inf
    for z in sample_points:
        z = np.asarray(z, dtype=float)
        phi_z = estimating_function(state, k, z)
        bound = A_k * float(problem.f_value(z)) + M_k * state.C_p * float(np.linalg.norm(z - state.x0)) ** (p + 1)
        upper_gap = min(upper_gap, bound - phi_z)
        if phi_star > phi_z + tol or phi_z > bound + tol:
            upper_ok = False
    D = ratio_constant(p, state.alpha, state.beta)
    D2 = ratio_constant_derived(p, state.alpha, state.beta)
    margins, margins2 = [], []
    for st in state.steps[:k]:
        g = st["g"]
        inner = float((st["y"] - st["x"]) @ g)
        scaled = float(np.linalg.norm(g)) ** ((p + 1) / p) / st["M"] ** (1.0 / p)
        margins.append(inner - D * scaled)
        margins2.append(inner - D2 * scaled)
    return AuditReport(
        k=k,
        ratio_margin=min(margins) if margins else math.inf,
        ratio_margin_derived=min(margins2) if margins2 else math.inf,
        es_lower_ok=bool(lower_ok),
        es_upper_ok=bool(upper_ok),
        phi_star_value=phi_star,
        lower_gap=lower_gap,
        upper_gap=upper_gap,
        ratio_margins=margins,
    )
