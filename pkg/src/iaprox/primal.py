"""
Primal incremental methods on a SumProblem.

IS, IP, IAS, IAG and IAP (two-step and direct forms), plus a full
gradient step used as a comparator. Each step reads i_k from the delay
engine, mutates the state in place and returns it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .delays import DelayEngine, DelaySchedule
from .exceptions import Diverged, InstanceError, TuningFailure
from .problems import SumProblem, prox
from .rates import fit_rate
from .trace import PRIMAL_COLUMNS, Trace

DIVERGENCE_NORM = 1e12
NEAR_ONE = 0.999


@dataclass(frozen=True)
class Stepsize:
    """
    Constant alpha, or diminishing alpha / (k + 1).

    `alpha` may be a vector for diagonally scaled variants.
    """

    rule: str = "constant"
    alpha: object = 1.0

    def __post_init__(self):
        if self.rule not in ("constant", "diminishing"):
            raise InstanceError(f"unknown stepsize rule {self.rule!r}")
        a = np.asarray(self.alpha, dtype=float)
        if a.size == 0 or np.any(~np.isfinite(a)) or np.any(a <= 0):
            raise InstanceError("stepsize alpha must be positive and finite")

    def at(self, k: int):
        a = self.alpha if np.ndim(self.alpha) == 0 else np.asarray(self.alpha, dtype=float)
        if self.rule == "constant":
            return a
        return a / (k + 1)

    def scalar(self, k: int) -> float:
        """Value logged in traces (the largest entry for vector stepsizes)."""
        return float(np.max(self.at(k)))


@dataclass
class PrimalState:
    x: np.ndarray
    engine: DelayEngine
    stepsize: Stepsize
    k: int = 0
    z: Optional[np.ndarray] = None
    i_k: int = -1
    staleness: int = 0
    stamps: Optional[np.ndarray] = None
    prox_tol: float = 1e-10
    prox_method: str = "auto"


def init_state(problem: SumProblem, schedule: DelaySchedule, stepsize: Stepsize, x0=None,
               prox_tol=1e-10, prox_method="auto") -> PrimalState:
    x0 = np.zeros(problem.n) if x0 is None else np.array(x0, dtype=float)
    if x0.shape != (problem.n,):
        raise InstanceError(f"x0 has shape {x0.shape}, expected ({problem.n},)")
    engine = DelayEngine(schedule, problem.m, problem.component_gradient, x0)
    return PrimalState(x0, engine, stepsize, prox_tol=prox_tol, prox_method=prox_method)


def _advance(state, x_new, i, staleness):
    state.x = x_new
    state.i_k = i
    state.staleness = staleness
    state.k += 1
    state.engine.record(state.k, x_new)
    return state


def is_step(state: PrimalState, problem: SumProblem) -> PrimalState:
    """x+ = P(x - alpha g_i(x))."""
    k, i = state.k, state.engine.select(state.k)
    a = state.stepsize.at(k)
    g = problem.component_gradient(i, state.x)
    return _advance(state, problem.constraint.project(state.x - a * g), i, 0)


def ip_step(state: PrimalState, problem: SumProblem) -> PrimalState:
    """x+ = prox(f_i, x, alpha, X)."""
    k, i = state.k, state.engine.select(state.k)
    a = state.stepsize.at(k)
    x_new = prox(problem.components[i], state.x, a, problem.constraint,
                 tol=state.prox_tol, method=state.prox_method)
    return _advance(state, x_new, i, 0)


def ias_step(state: PrimalState, problem: SumProblem) -> PrimalState:
    """Step along the stored aggregate, then refresh slot i_k at x_k."""
    k, i = state.k, state.engine.select(state.k)
    eng = state.engine
    eng.sync(k)
    stale = eng.staleness(k)
    a = state.stepsize.at(k)
    x_new = problem.constraint.project(state.x - a * eng.aggregate)
    eng.refresh(i, problem.component_gradient(i, state.x), k)
    return _advance(state, x_new, i, stale)


def iag_step(state: PrimalState, problem: SumProblem) -> PrimalState:
    """Refresh slot i_k at x_k, then step along the aggregate."""
    k, i = state.k, state.engine.select(state.k)
    eng = state.engine
    eng.sync(k, skip=i)
    eng.refresh(i, problem.component_gradient(i, state.x), k)
    stale = eng.staleness(k)
    a = state.stepsize.at(k)
    x_new = problem.constraint.project(state.x - a * eng.aggregate)
    return _advance(state, x_new, i, stale)


def iap_step(state: PrimalState, problem: SumProblem, form="two_step") -> PrimalState:
    """
    Incremental aggregated proximal step.

    ``two_step``: z = x - alpha * sum_{i != i_k} g_i, then x+ = prox(f_{i_k}, z).
    ``direct``: x+ minimizes f_{i_k}(x) + s'(x - x_k) + ||x - x_k||^2 / (2 alpha)
    with s the same stale sum. Slot i_k is refreshed with the gradient of
    f_{i_k} at x+, stamped k + 1.
    """
    k, i = state.k, state.engine.select(state.k)
    eng = state.engine
    eng.sync(k, skip=i)
    others = [j for j in range(problem.m) if j != i]
    stale = eng.staleness(k, others) if others else 0
    a = state.stepsize.at(k)
    s = eng.others(i)
    state.stamps = eng.table.stamps.copy()
    f, X = problem.components[i], problem.constraint
    if form == "two_step":
        z = state.x - a * s
        x_new = prox(f, z, a, X, tol=state.prox_tol, method=state.prox_method)
        g_new = (z - x_new) / a if X.is_free else f.gradient(x_new)
        state.z = z
    elif form == "direct":
        x_new = prox(f, state.x, a, X, shift=s, tol=state.prox_tol, method=state.prox_method)
        g_new = f.gradient(x_new)
    else:
        raise InstanceError(f"unknown IAP form {form!r}")
    eng.refresh(i, g_new, k + 1)
    return _advance(state, x_new, i, stale)


def gd_step(state: PrimalState, problem: SumProblem) -> PrimalState:
    """Full (projected) gradient step; comparator for the incremental methods."""
    a = state.stepsize.at(state.k)
    x_new = problem.constraint.project(state.x - a * problem.gradient(state.x))
    return _advance(state, x_new, -1, 0)


STEPS = {
    "is": is_step,
    "ip": ip_step,
    "ias": ias_step,
    "iag": iag_step,
    "iap": iap_step,
    "iap_direct": lambda s, p: iap_step(s, p, form="direct"),
    "gd": gd_step,
}


def run(problem: SumProblem, algorithm: str, schedule: Optional[DelaySchedule] = None,
        stepsize: Optional[Stepsize] = None, x0=None, max_iter=1000, tol=0.0,
        keep_iterates=False, prox_tol=1e-10, prox_method="auto") -> Trace:
    """
    Run a primal method and record one trace row per iterate.

    Stops when ||x_k - x*|| <= tol (if x* is known) or after `max_iter`
    steps. Raises Diverged, carrying the trace, once ||x_k|| exceeds 1e12.
    """
    if algorithm not in STEPS:
        raise InstanceError(f"unknown primal algorithm {algorithm!r}")
    schedule = schedule or DelaySchedule()
    stepsize = stepsize or Stepsize("constant", 1.0 / max(problem.lipschitz, 1e-300))
    step = STEPS[algorithm]
    state = init_state(problem, schedule, stepsize, x0, prox_tol, prox_method)
    xs = problem.x_star
    trace = Trace(PRIMAL_COLUMNS, meta={"algorithm": algorithm, "b": state.engine.b})
    if keep_iterates:
        trace.iterates = [state.x.copy()]
        trace.stamps = []

    def err(x):
        return float(np.linalg.norm(x - xs)) if xs is not None else float("nan")

    e = err(state.x)
    trace.append(0, -1, float("nan"), e, problem.value(state.x), 0)
    trace.status = "converged" if xs is not None and e <= tol else "max_iter"
    if trace.status == "converged":
        return trace
    for _ in range(max_iter):
        k = state.k
        a = stepsize.scalar(k)
        step(state, problem)
        x = state.x
        nrm = float(np.linalg.norm(x))
        if not np.isfinite(nrm) or nrm > DIVERGENCE_NORM:
            trace.append(state.k, state.i_k, a, float("inf"), float("inf"), state.staleness)
            trace.status = "diverged"
            raise Diverged(f"{algorithm} diverged at iteration {state.k}", trace)
        e = err(x)
        trace.append(state.k, state.i_k, a, e, problem.value(x), state.staleness)
        if keep_iterates:
            trace.iterates.append(x.copy())
            trace.stamps.append(None if state.stamps is None else state.stamps.copy())
        if xs is not None and e <= tol:
            trace.status = "converged"
            break
    trace.meta["max_staleness"] = state.engine.max_seen
    return trace


# ---------------------------------------------------------------------------
# Stepsize tuning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TuneResult:
    """
    Outcome of the halving search.

    ``near_one`` flags a fitted rate of 0.999 or more. A 500-step probe
    cannot tell such a rate from sublinear convergence, which is what a
    problem without strong convexity produces.
    """

    alpha: float
    rho_hat: float
    r2: float
    near_one: bool
    tried: tuple = field(default=())


def _probe_errors(problem, algorithm, schedule, alpha, probe_iter, x0):
    from .problems import SeparableProblem
    try:
        if isinstance(problem, SeparableProblem):
            from .dual import run_dual
            tr = run_dual(problem, algorithm, schedule, Stepsize("constant", alpha),
                          max_iter=probe_iter, enforce_gate=False)
        else:
            tr = run(problem, algorithm, schedule, Stepsize("constant", alpha), x0,
                     max_iter=probe_iter)
    except Diverged:
        return None
    e = tr.errors
    return e if np.all(np.isfinite(e)) else None


def initial_alpha(problem) -> float:
    """1/L, with L the gradient Lipschitz constant of the (dual) objective."""
    from .problems import SeparableProblem
    if isinstance(problem, SeparableProblem):
        L = 0.0
        for blk in problem.blocks:
            if not blk.h.is_quadratic:
                raise TuningFailure("dual tuning needs quadratic blocks")
            M = blk.A @ np.linalg.pinv(blk.h.Q) @ blk.A.T
            L += float(np.linalg.norm(M, 2))
    else:
        L = problem.lipschitz
    if L <= 0:
        return 1.0
    return 1.0 / L


def tune_constant_stepsize(problem, algorithm, schedule=None, probe_iter=500, x0=None,
                           alpha0=None, min_alpha=1e-10) -> TuneResult:
    """
    Halve alpha from 1/L until a probe run contracts.

    A probe passes when its final error is below the initial error and
    the fitted rate is below 1. The fit covers the second half of the
    stretch before the error first drops to 1e-12 of its initial value;
    if that stretch is too short the probe passes with a nan rate.
    """
    from .problems import SeparableProblem
    schedule = schedule or DelaySchedule()
    sep = isinstance(problem, SeparableProblem)
    if sep:
        if problem.lam_star is None:
            from .analysis import kkt_oracle
            sol = kkt_oracle(problem)
            problem = SeparableProblem(problem.blocks, problem.constraint_kind,
                                       problem.dual_strongly_concave, sol.lam, sol.y)
    elif problem.x_star is None:
        from .analysis import kkt_oracle
        problem = problem.with_x_star(kkt_oracle(problem).x)
    if not sep and x0 is None:
        x0 = np.zeros(problem.n)
        if np.allclose(x0, problem.x_star):
            x0 = problem.x_star + 1.0
    alpha = initial_alpha(problem) if alpha0 is None else float(alpha0)
    tried = []
    while alpha >= min_alpha:
        e = _probe_errors(problem, algorithm, schedule, alpha, probe_iter, x0)
        tried.append(alpha)
        if e is not None and e[0] > 0 and e[-1] < e[0]:
            floor = 1e-12 * e[0]
            low = np.flatnonzero(~(e > floor))
            usable = int(low[0]) if low.size else len(e)
            try:
                fit = fit_rate(e, burn_in=usable // 2, floor=floor)
            except ValueError:
                return TuneResult(alpha, float("nan"), float("nan"), False, tuple(tried))
            if fit.rho_hat < 1.0:
                return TuneResult(alpha, fit.rho_hat, fit.r2, fit.rho_hat >= NEAR_ONE,
                                  tuple(tried))
        alpha *= 0.5
    raise TuningFailure(f"no contracting stepsize above {min_alpha:g} for {algorithm}")
