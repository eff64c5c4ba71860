"""
Nonquadratic penalty and entropy methods.

Exponential augmented Lagrangian (single block) and its incremental
aggregated version IAALI for inequality constraints sum_i g_i(y^i) <= 0,
and the entropy-based proximal and gradient iterations for minimizing a
sum over x >= 0, with the projected IAG iteration as a baseline.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .delays import DelayEngine, DelaySchedule
from .exceptions import Diverged, InstanceError, SolverError
from .primal import DIVERGENCE_NORM
from .problems import (EXP_CLAMP, EXPONENTIAL, PenaltySpec, SeparableProblem, SumProblem,
                       minimize_projected)
from .trace import NONQUADRATIC_COLUMNS, Trace

NEWTON_MAX_ITER = 200
NEWTON_HALVINGS = 50
ENTROPY_HALVINGS = 60
NEWTON_TOL = 1e-10
POSITIVE_FLOOR = np.finfo(float).tiny
J0_RATIO = 1e-6
J0_PERSIST = 50
XBAR_REFRESH = 100
DEFAULT_DELTA = 1e-3

MULTIPLIER_METHODS = ("exp_al", "iaali")
ENTROPY_METHODS = ("entropy_iap", "entropy_iag", "proj_iag")


def _as_vec(a, r):
    return np.broadcast_to(np.asarray(a, dtype=float), (r,)).copy()


def heuristic_stepsizes(xbar, alpha, delta=DEFAULT_DELTA) -> np.ndarray:
    """alpha^j = alpha / max(xbar^j, delta)."""
    if alpha <= 0 or delta <= 0:
        raise ValueError("alpha and delta must be positive")
    return alpha / np.maximum(np.asarray(xbar, dtype=float), delta)


# ---------------------------------------------------------------------------
# Exponential augmented Lagrangian
# ---------------------------------------------------------------------------

def penalized_argmin(block, mu, alpha, shift=None, y_start=None, penalty=EXPONENTIAL,
                     tol=NEWTON_TOL):
    """
    Minimize h(y) + sum_j (mu_j / alpha_j) psi(alpha_j (g_j(y) + shift_j)) over Y.

    Free Y: damped Newton with step halving. Other Y: projected gradient.
    """
    r = block.r
    mu, alpha = _as_vec(mu, r), _as_vec(alpha, r)
    shift = np.zeros(r) if shift is None else np.asarray(shift, dtype=float)
    y = np.zeros(block.dim) if y_start is None else np.array(y_start, dtype=float)
    h = block.h

    def val(y):
        t = alpha * (block.constraint_value(y) + shift)
        return h.value(y) + float(np.sum(mu / alpha * penalty.psi(t)))

    def grad(y):
        t = alpha * (block.constraint_value(y) + shift)
        return h.gradient(y) + block.constraint_jac(y).T @ (mu * penalty.dpsi(t))

    if not block.Y.is_free:
        t0 = alpha * (block.constraint_value(y) + shift)
        J = block.constraint_jac(y)
        L = h.lipschitz + float(np.max(mu * alpha * penalty.d2psi(t0))) * np.linalg.norm(J, 2) ** 2
        return minimize_projected(val, grad, y, block.Y, max(L, 1e-12), tol=tol)

    fy, g = val(y), grad(y)
    for _ in range(NEWTON_MAX_ITER):
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            return y
        t = alpha * (block.constraint_value(y) + shift)
        J = block.constraint_jac(y)
        H = h.hessian(y) + J.T @ ((mu * alpha * penalty.d2psi(t))[:, None] * J)
        try:
            d = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            d = -g
        if g @ d >= 0:
            d = -g
        step = 1.0
        for _ in range(NEWTON_HALVINGS):
            yn = y + step * d
            fn = val(yn)
            if np.isfinite(fn) and fn <= fy + 1e-4 * step * (g @ d) + 1e-15 * abs(fy):
                break
            step *= 0.5
        else:
            gn_try = float(np.linalg.norm(grad(y + step * d)))
            if gn_try >= gn:
                raise SolverError("penalized Newton line search failed", residual=gn)
        y, fy, g = yn, fn, grad(yn)
    gn = float(np.linalg.norm(g))
    if gn <= tol:
        return y
    raise SolverError(f"penalized Newton stalled at gradient norm {gn:.3e}", residual=gn)


@dataclass
class MultiplierState:
    mu: np.ndarray
    alpha: np.ndarray
    ys: List[np.ndarray]
    engine: DelayEngine
    k: int = 0
    i_k: int = -1
    staleness: int = 0
    penalty: PenaltySpec = EXPONENTIAL


def init_multiplier_state(problem: SeparableProblem, alpha, schedule=None, mu0=None, y0=None,
                          penalty=EXPONENTIAL) -> MultiplierState:
    if problem.constraint_kind != "inequality":
        raise InstanceError("multiplier methods need inequality constraints")
    r = problem.r
    mu = np.ones(r) if mu0 is None else np.array(mu0, dtype=float)
    if mu.shape != (r,) or np.any(mu <= 0):
        raise InstanceError("mu_0 must be a positive vector of length r")
    alpha = _as_vec(alpha, r)
    if np.any(alpha <= 0):
        raise InstanceError("penalty parameters alpha^j must be positive")
    ys = problem.default_start() if y0 is None else [np.array(y, dtype=float) for y in y0]

    def gval(i, pts):
        return problem.blocks[i].constraint_value(pts[i])

    engine = DelayEngine(schedule or DelaySchedule("last_update"), problem.m, gval, ys)
    return MultiplierState(mu, alpha, ys, engine, penalty=penalty)


def exp_al_step(state: MultiplierState, problem: SeparableProblem) -> MultiplierState:
    """
    One exponential augmented Lagrangian iteration on a single block.

    y+ minimizes H(y) + sum_j (mu_j/alpha_j) psi(alpha_j G_j(y)), then
    mu_j <- mu_j psi'(alpha_j G_j(y+)).
    """
    if problem.m != 1:
        raise InstanceError("exp_al_step needs a single block; use iaali_step")
    blk = problem.blocks[0]
    y = penalized_argmin(blk, state.mu, state.alpha, None, state.ys[0], state.penalty)
    G = blk.constraint_value(y)
    state.ys[0] = y
    state.mu = state.mu * state.penalty.dpsi(state.alpha * G)
    state.engine.refresh(0, G, state.k + 1)
    state.k += 1
    state.i_k, state.staleness = 0, 0
    state.engine.record(state.k, state.ys)
    return state


def iaali_step(state: MultiplierState, problem: SeparableProblem) -> MultiplierState:
    """
    Incremental aggregated step: block i_k sees the stale constraint values
    of the other blocks inside the penalty, and mu moves by the same
    aggregated value.
    """
    k, i = state.k, state.engine.select(state.k)
    eng = state.engine
    eng.sync(k, skip=i)
    others = [j for j in range(problem.m) if j != i]
    stale = eng.staleness(k, others) if others else 0
    s = eng.others(i)
    blk = problem.blocks[i]
    y = penalized_argmin(blk, state.mu, state.alpha, s, state.ys[i], state.penalty)
    own = blk.constraint_value(y)
    state.ys[i] = y
    eng.refresh(i, own, k + 1)
    state.mu = state.mu * state.penalty.dpsi(state.alpha * (own + s))
    state.k += 1
    state.i_k, state.staleness = i, stale
    eng.record(state.k, state.ys)
    return state


# ---------------------------------------------------------------------------
# Entropy methods over x >= 0
# ---------------------------------------------------------------------------

@dataclass
class EntropyState:
    """
    Iterate, per-coordinate stepsizes and diagnostics.

    ``j0_count[j]`` counts consecutive iterations with
    x^j < 1e-6 max_l x^l. ``xbar`` is refreshed from the iterate every 100
    iterations; if ``base_alpha`` is set the stepsizes follow the
    heuristic alpha / max(xbar, delta) at each refresh.
    """

    x: np.ndarray
    alpha: np.ndarray
    engine: DelayEngine
    k: int = 0
    i_k: int = -1
    staleness: int = 0
    xbar: Optional[np.ndarray] = None
    delta: float = DEFAULT_DELTA
    base_alpha: Optional[float] = None
    j0_count: Optional[np.ndarray] = None
    clipped: int = 0
    penalty: PenaltySpec = EXPONENTIAL
    residual: float = 0.0

    @property
    def J0_estimate(self) -> np.ndarray:
        return np.flatnonzero(self.j0_count >= J0_PERSIST)


def init_entropy_state(problem: SumProblem, alpha=None, schedule=None, x0=None,
                       base_alpha=None, delta=DEFAULT_DELTA, penalty=EXPONENTIAL,
                       check_orthant=True) -> EntropyState:
    if check_orthant and problem.constraint.kind != "nonnegative_orthant":
        raise InstanceError("entropy methods need X = nonnegative orthant")
    n = problem.n
    x = np.ones(n) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (n,):
        raise InstanceError(f"x0 has shape {x.shape}, expected ({n},)")
    if penalty.kind == "exponential" and np.any(x <= 0):
        raise InstanceError("x0 must be strictly positive")
    if base_alpha is not None:
        a = heuristic_stepsizes(x, base_alpha, delta)
    elif alpha is None:
        raise InstanceError("give alpha or base_alpha")
    else:
        a = _as_vec(alpha, n)
    if np.any(a <= 0):
        raise InstanceError("stepsizes alpha^j must be positive")
    engine = DelayEngine(schedule or DelaySchedule("last_update"), problem.m,
                         problem.component_gradient, x)
    return EntropyState(x, a, engine, xbar=x.copy(), delta=delta, base_alpha=base_alpha,
                        j0_count=np.zeros(n, dtype=int), penalty=penalty)


def _bookkeeping(state: EntropyState, x_new, i, stale):
    state.x = x_new
    state.k += 1
    state.i_k, state.staleness = i, stale
    state.engine.record(state.k, x_new)
    small = x_new < J0_RATIO * np.max(x_new)
    state.j0_count = np.where(small, state.j0_count + 1, 0)
    if state.k % XBAR_REFRESH == 0:
        state.xbar = x_new.copy()
        if state.base_alpha is not None:
            state.alpha = heuristic_stepsizes(state.xbar, state.base_alpha, state.delta)
    return state


def entropy_residual(problem, i, x_new, x_old, s, alpha, penalty=EXPONENTIAL):
    """grad f_i(x+) + s + (1/alpha) grad psi*(x+ / x_k), componentwise."""
    return (problem.component_gradient(i, x_new) + s
            + penalty.dpsi_star(x_new / x_old) / alpha)


def entropy_prox(problem, i, x_k, s, alpha, penalty=EXPONENTIAL, tol=NEWTON_TOL):
    """
    Solve grad f_i(x) + s + (1/alpha) grad psi*(x / x_k) = 0 for x.

    Exponential penalty: Newton in z = ln x, so every trial point is
    positive. Quadratic penalty: Newton in x.
    """
    f = problem.components[i]
    log_coords = penalty.kind == "exponential"
    u = np.log(x_k) if log_coords else x_k.copy()

    def point(u):
        return np.exp(np.minimum(u, EXP_CLAMP)) if log_coords else u

    def resid(u):
        x = point(u)
        return entropy_residual(problem, i, x, x_k, s, alpha, penalty)

    R = resid(u)
    for _ in range(NEWTON_MAX_ITER):
        rn = float(np.max(np.abs(R)))
        if rn <= tol:
            return point(u), rn
        x = point(u)
        H = f.hessian(x)
        if log_coords:
            Jm = np.diag(1.0 / alpha) + H * x[None, :]
        else:
            Jm = np.diag(1.0 / (alpha * x_k)) + H
        d = -np.linalg.solve(Jm, R)
        merit = 0.5 * float(R @ R)
        step = 1.0
        for _ in range(ENTROPY_HALVINGS):
            Rn = resid(u + step * d)
            if np.all(np.isfinite(Rn)) and 0.5 * float(Rn @ Rn) <= (1 - 1e-4 * step) * merit:
                break
            step *= 0.5
        else:
            raise SolverError("entropy Newton line search failed", residual=rn)
        u, R = u + step * d, Rn
    rn = float(np.max(np.abs(R)))
    if rn <= tol:
        return point(u), rn
    raise SolverError(f"entropy Newton stalled at residual {rn:.3e}", residual=rn)


def entropy_iap_step(state: EntropyState, problem: SumProblem) -> EntropyState:
    """
    Entropy proximal step: x+ solves
    (1/alpha^j) ln(x+^j / x^j) + d f_{i_k}(x+)/dx^j + s^j = 0.
    """
    k, i = state.k, state.engine.select(state.k)
    eng = state.engine
    eng.sync(k, skip=i)
    others = [j for j in range(problem.m) if j != i]
    stale = eng.staleness(k, others) if others else 0
    s = eng.others(i)
    x_new, res = entropy_prox(problem, i, state.x, s, state.alpha, state.penalty)
    state.residual = res
    eng.refresh(i, problem.component_gradient(i, x_new), k + 1)
    return _bookkeeping(state, x_new, i, stale)


def entropy_iag_step(state: EntropyState, problem: SumProblem) -> EntropyState:
    """x^j <- x^j exp(-alpha^j * aggregate^j), exponent clamped at +-700."""
    k, i = state.k, state.engine.select(state.k)
    eng = state.engine
    eng.sync(k, skip=i)
    eng.refresh(i, problem.component_gradient(i, state.x), k)
    stale = eng.staleness(k)
    expo = -state.alpha * eng.aggregate
    if np.any(np.abs(expo) > EXP_CLAMP):
        state.clipped += 1
        warnings.warn("entropy IAG exponent clipped at 700; stepsize too large",
                      RuntimeWarning)
        expo = np.clip(expo, -EXP_CLAMP, EXP_CLAMP)
    x_new = np.maximum(state.x * np.exp(expo), POSITIVE_FLOOR)
    return _bookkeeping(state, x_new, i, stale)


def constrained_iag_step(state: EntropyState, problem: SumProblem) -> EntropyState:
    """x <- [x - alpha * aggregate]^+."""
    k, i = state.k, state.engine.select(state.k)
    eng = state.engine
    eng.sync(k, skip=i)
    eng.refresh(i, problem.component_gradient(i, state.x), k)
    stale = eng.staleness(k)
    x_new = np.maximum(state.x - state.alpha * eng.aggregate, 0.0)
    return _bookkeeping(state, x_new, i, stale)


ENTROPY_STEPS = {
    "entropy_iap": entropy_iap_step,
    "entropy_iag": entropy_iag_step,
    "proj_iag": constrained_iag_step,
}
MULTIPLIER_STEPS = {"exp_al": exp_al_step, "iaali": iaali_step}


def run_nonquadratic(problem, algorithm, schedule=None, alpha=None, x0=None, mu0=None,
                     max_iter=1000, tol=0.0, keep_iterates=False, base_alpha=None,
                     delta=DEFAULT_DELTA) -> Trace:
    """
    Run one of exp_al, iaali, entropy_iap, entropy_iag, proj_iag.

    `err` is ||x - x*|| for the entropy methods and
    max(||mu - mu*||, ||y - y*||) for the multiplier methods.
    """
    trace = Trace(NONQUADRATIC_COLUMNS, meta={"algorithm": algorithm})
    nan = float("nan")
    if algorithm in MULTIPLIER_STEPS:
        state = init_multiplier_state(problem, 1.0 if alpha is None else alpha,
                                      schedule, mu0, x0)
        step = MULTIPLIER_STEPS[algorithm]

        def measure():
            errs = []
            if problem.lam_star is not None:
                errs.append(np.linalg.norm(state.mu - problem.lam_star))
            if problem.y_star is not None:
                errs.append(max(np.linalg.norm(y - ys) for y, ys in zip(state.ys, problem.y_star)))
            e = float(max(errs)) if errs else nan
            return e, problem.objective(state.ys), float(np.min(state.mu)), nan

        def snapshot():
            return (state.mu.copy(), [y.copy() for y in state.ys])

        def blown():
            return (not np.all(np.isfinite(state.mu))
                    or float(np.max(state.mu)) > DIVERGENCE_NORM)
    elif algorithm in ENTROPY_STEPS:
        state = init_entropy_state(problem, alpha, schedule, x0, base_alpha, delta)
        step = ENTROPY_STEPS[algorithm]
        xs = problem.x_star

        def measure():
            e = float(np.linalg.norm(state.x - xs)) if xs is not None else nan
            return e, problem.value(state.x), nan, float(np.min(state.x))

        def snapshot():
            return state.x.copy()

        def blown():
            nrm = float(np.linalg.norm(state.x))
            return not np.isfinite(nrm) or nrm > DIVERGENCE_NORM
    else:
        raise InstanceError(f"unknown nonquadratic algorithm {algorithm!r}")

    trace.meta["b"] = state.engine.b
    if keep_iterates:
        trace.iterates = [snapshot()]
    e, obj, mu_min, x_min = measure()
    trace.append(0, -1, nan, e, obj, 0, mu_min, x_min)
    trace.status = "converged" if e <= tol else "max_iter"
    if trace.status == "converged":
        return trace
    for _ in range(max_iter):
        a = float(np.max(state.alpha))
        step(state, problem)
        if blown():
            trace.append(state.k, state.i_k, a, float("inf"), float("inf"), state.staleness,
                         nan, nan)
            trace.status = "diverged"
            raise Diverged(f"{algorithm} diverged at iteration {state.k}", trace)
        e, obj, mu_min, x_min = measure()
        trace.append(state.k, state.i_k, a, e, obj, state.staleness, mu_min, x_min)
        if keep_iterates:
            trace.iterates.append(snapshot())
        if e <= tol:
            trace.status = "converged"
            break
    trace.meta["max_staleness"] = state.engine.max_seen
    if isinstance(state, EntropyState):
        trace.meta["J0"] = state.J0_estimate.tolist()
        trace.meta["clipped"] = state.clipped
    return trace
