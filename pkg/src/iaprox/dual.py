"""
Dual decomposition methods for separable equality-constrained problems.

Blocks are (h_i, Y_i, A_i, b_i) and the coupling constraint is
sum_i (A_i y^i - b_i) = 0. Every method below only ever minimizes one
block function of the form

    h_i(y) + lin' A_i y + (alpha / 2) ||A_i y - target||^2   over Y_i,

which ``block_argmin`` handles. The per-method choice of `lin` and
`target` is what distinguishes IADG, IAL, IAAL and the two ADMM forms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .delays import DelayEngine, DelaySchedule
from .exceptions import Diverged, InstanceError, UnboundedDual
from .primal import DIVERGENCE_NORM, Stepsize
from .problems import Block, SeparableProblem, minimize_projected
from .trace import DUAL_COLUMNS, Trace

SINGLE_STEP = ("iadg", "ial", "iaal")
CYCLE = ("iaal_cycle", "admm", "admm_scaled")
DUAL_ALGORITHMS = SINGLE_STEP + CYCLE


def block_argmin(block: Block, lin, alpha, target=None, y_start=None, tol=1e-10):
    """Minimize h(y) + lin'Ay + (alpha/2)||Ay - target||^2 over Y."""
    A, h, Y = block.A, block.h, block.Y
    lin = np.asarray(lin, dtype=float)
    target = np.zeros(block.r) if target is None else np.asarray(target, dtype=float)
    if h.is_quadratic:
        M = h.Q + alpha * (A.T @ A)
        rhs = -(h.c + A.T @ lin) + alpha * (A.T @ target)
        if Y.is_free:
            return _solve_psd(M, rhs)
        if np.count_nonzero(M - np.diag(np.diag(M))) == 0 and np.all(np.diag(M) > 0):
            return Y.project(rhs / np.diag(M))

    def val(y):
        r = A @ y - target
        return h.value(y) + lin @ (A @ y) + 0.5 * alpha * (r @ r)

    def grad(y):
        return h.gradient(y) + A.T @ lin + alpha * (A.T @ (A @ y - target))

    L = h.lipschitz + alpha * float(np.linalg.norm(A, 2)) ** 2
    y0 = np.zeros(block.dim) if y_start is None else y_start
    return minimize_projected(val, grad, y0, Y, L, tol=tol)


def _solve_psd(M, rhs):
    """Minimizer of 1/2 y'My - rhs'y; UnboundedDual if there is none."""
    scale = max(1.0, float(np.max(np.abs(M))))
    w, V = np.linalg.eigh(M)
    null = w <= 1e-12 * scale
    if not np.any(null):
        return np.linalg.solve(M, rhs)
    coef = V.T @ rhs
    if np.any(np.abs(coef[null]) > 1e-10 * max(1.0, float(np.linalg.norm(rhs)))):
        d = V[:, null] @ coef[null]
        raise UnboundedDual("Lagrangian minimization is unbounded below",
                            direction=d / np.linalg.norm(d))
    return V[:, ~null] @ (coef[~null] / w[~null])


def dual_component(i, lam, problem: SeparableProblem):
    """
    q_i(lambda) = min over Y_i of h_i(y) + lambda'(A_i y - b_i).

    Returns
    -------
    value : float
    grad : ndarray
        A_i y(lambda) - b_i, a gradient (subgradient if y is not unique).
    y : ndarray
        The inner minimizer.
    """
    blk = problem.blocks[i]
    lam = np.asarray(lam, dtype=float)
    y = block_argmin(blk, lam, 0.0)
    g = blk.A @ y - blk.b
    return blk.h.value(y) + float(lam @ g), g, y


def dual_value(lam, problem: SeparableProblem):
    """Q(lambda) and a subgradient."""
    vals = [dual_component(i, lam, problem) for i in range(problem.m)]
    return sum(v for v, _, _ in vals), np.sum([g for _, g, _ in vals], axis=0)


def count_nonzero_rows(problem: SeparableProblem) -> np.ndarray:
    """m_j: number of blocks whose A_i has a nonzero row j (at least 1)."""
    counts = np.sum([np.any(blk.A != 0, axis=1) for blk in problem.blocks], axis=0)
    return np.maximum(counts, 1).astype(int)


@dataclass
class DualState:
    """
    Iterate bundle for all dual methods.

    ``engine`` stores A_i y^i - b_i for the delayed block iterates. ``z``
    and ``mj`` are used by the scaled ADMM only.
    """

    lam: np.ndarray
    ys: List[np.ndarray]
    engine: DelayEngine
    stepsize: Stepsize
    k: int = 0
    nu: Optional[np.ndarray] = None
    last_residual: Optional[np.ndarray] = None
    z: Optional[List[np.ndarray]] = None
    mj: Optional[np.ndarray] = None
    i_k: int = -1
    staleness: int = 0


def _block_residual(problem):
    def g(i, ys):
        blk = problem.blocks[i]
        return blk.A @ ys[i] - blk.b
    return g


def init_dual_state(problem: SeparableProblem, schedule=None, stepsize=None, lam0=None,
                    y0=None) -> DualState:
    schedule = schedule or DelaySchedule("last_update")
    stepsize = stepsize or Stepsize("constant", 1.0)
    lam = np.zeros(problem.r) if lam0 is None else np.array(lam0, dtype=float)
    if lam.shape != (problem.r,):
        raise InstanceError(f"lambda_0 has shape {lam.shape}, expected ({problem.r},)")
    ys = problem.default_start() if y0 is None else [np.array(y, dtype=float) for y in y0]
    engine = DelayEngine(schedule, problem.m, _block_residual(problem), ys)
    mj = count_nonzero_rows(problem)
    res = problem.residual(ys)
    z = [blk.A @ y - res / mj for blk, y in zip(problem.blocks, ys)]
    return DualState(lam, ys, engine, stepsize, z=z, mj=mj)


def _finish(state, i, stale):
    state.i_k = i
    state.staleness = stale
    state.k += 1
    state.engine.record(state.k, state.ys)
    return state


def _others_used(problem, i):
    return [j for j in range(problem.m) if j != i]


def iadg_step(state: DualState, problem: SeparableProblem) -> DualState:
    """Lagrangian minimization of block i_k, then an aggregated dual gradient step."""
    k, i = state.k, state.engine.select(state.k)
    eng = state.engine
    eng.sync(k, skip=i)
    others = _others_used(problem, i)
    stale = eng.staleness(k, others) if others else 0
    a = state.stepsize.at(k)
    blk = problem.blocks[i]
    y = block_argmin(blk, state.lam, 0.0, y_start=state.ys[i])
    state.ys[i] = y
    eng.refresh(i, blk.A @ y - blk.b, k + 1)
    res = eng.aggregate.copy()
    state.last_residual = res
    state.lam = state.lam + a * res
    return _finish(state, i, stale)


def ial_step(state: DualState, problem: SeparableProblem) -> DualState:
    """Augmented Lagrangian step on block i_k alone."""
    k, i = state.k, state.engine.select(state.k)
    a = state.stepsize.at(k)
    blk = problem.blocks[i]
    y = block_argmin(blk, state.lam, a, blk.b, y_start=state.ys[i])
    state.ys[i] = y
    res = blk.A @ y - blk.b
    state.engine.refresh(i, res, k + 1)
    state.last_residual = res
    state.lam = state.lam + a * res
    return _finish(state, i, 0)


def iaal_step(state: DualState, problem: SeparableProblem) -> DualState:
    """
    Aggregated augmented Lagrangian step.

    Block i_k minimizes h + lambda'A y + (alpha/2)||A y + s - b_{i_k}||^2
    with s the stale sum of A_i y^i - b_i over i != i_k; then lambda moves
    by alpha times the same aggregated residual.
    """
    k, i = state.k, state.engine.select(state.k)
    eng = state.engine
    eng.sync(k, skip=i)
    others = _others_used(problem, i)
    stale = eng.staleness(k, others) if others else 0
    a = state.stepsize.at(k)
    blk = problem.blocks[i]
    s = eng.others(i)
    state.nu = state.lam + a * s
    y = block_argmin(blk, state.lam, a, blk.b - s, y_start=state.ys[i])
    state.ys[i] = y
    own = blk.A @ y - blk.b
    eng.refresh(i, own, k + 1)
    res = own + s
    state.last_residual = res
    state.lam = state.lam + a * res
    return _finish(state, i, stale)


def iaal_batch_cycle(state: DualState, problem: SeparableProblem) -> DualState:
    """Gauss-Seidel pass over all blocks at fixed lambda, then one multiplier step."""
    a = state.stepsize.at(state.k)
    parts = [blk.A @ y - blk.b for blk, y in zip(problem.blocks, state.ys)]
    for i, blk in enumerate(problem.blocks):
        s = np.sum(parts[:i] + parts[i + 1:], axis=0) if problem.m > 1 else np.zeros(problem.r)
        y = block_argmin(blk, state.lam, a, blk.b - s, y_start=state.ys[i])
        state.ys[i] = y
        parts[i] = blk.A @ y - blk.b
    res = np.sum(parts, axis=0)
    state.last_residual = res
    state.lam = state.lam + a * res
    for i, p in enumerate(parts):
        state.engine.refresh(i, p, state.k + 1)
    return _finish(state, -1, 0)


def admm_step(state: DualState, problem: SeparableProblem) -> DualState:
    """Parallel block minimizations, then lambda += (alpha/m) * residual."""
    a = state.stepsize.at(state.k)
    m = problem.m
    res = problem.residual(state.ys)
    new = []
    for blk, y in zip(problem.blocks, state.ys):
        new.append(block_argmin(blk, state.lam, a, blk.A @ y - res / m, y_start=y))
    state.ys = new
    res = problem.residual(new)
    state.last_residual = res
    state.lam = state.lam + (a / m) * res
    for i, (blk, y) in enumerate(zip(problem.blocks, new)):
        state.engine.refresh(i, blk.A @ y - blk.b, state.k + 1)
    return _finish(state, -1, 0)


def scaled_admm_step(state: DualState, problem: SeparableProblem) -> DualState:
    """ADMM with per-row multiplier steps alpha/m_j and estimates z^i of A_i y^i."""
    a = state.stepsize.at(state.k)
    new = [block_argmin(blk, state.lam, a, z, y_start=y)
           for blk, y, z in zip(problem.blocks, state.ys, state.z)]
    state.ys = new
    res = problem.residual(new)
    lam_new = state.lam + (a / state.mj) * res
    state.z = [blk.A @ y + (state.lam - lam_new) / a for blk, y in zip(problem.blocks, new)]
    state.last_residual = res
    state.lam = lam_new
    for i, (blk, y) in enumerate(zip(problem.blocks, new)):
        state.engine.refresh(i, blk.A @ y - blk.b, state.k + 1)
    return _finish(state, -1, 0)


DUAL_STEPS = {
    "iadg": iadg_step,
    "ial": ial_step,
    "iaal": iaal_step,
    "iaal_cycle": iaal_batch_cycle,
    "admm": admm_step,
    "admm_scaled": scaled_admm_step,
}


def run_dual(problem: SeparableProblem, algorithm: str, schedule=None, stepsize=None,
             lam0=None, y0=None, max_iter=1000, tol=0.0, keep_iterates=False,
             enforce_gate=True) -> Trace:
    """
    Run a dual method; one trace row per multiplier update.

    With lambda* known the run stops once both ||residual|| and
    ||lambda - lambda*|| are at most `tol`; otherwise on the residual
    alone. A constant-stepsize IAAL run on a problem not flagged as dual
    strongly concave is switched to the diminishing rule with a warning.
    """
    if algorithm not in DUAL_STEPS:
        raise InstanceError(f"unknown dual algorithm {algorithm!r}")
    if problem.constraint_kind != "equality":
        raise InstanceError("dual methods need equality constraints")
    stepsize = stepsize or Stepsize("constant", 1.0)
    if (enforce_gate and algorithm == "iaal" and stepsize.rule == "constant"
            and not problem.dual_strongly_concave):
        warnings.warn("dual function not known to be strongly concave; "
                      "using a diminishing stepsize for IAAL", RuntimeWarning)
        stepsize = Stepsize("diminishing", stepsize.alpha)
    state = init_dual_state(problem, schedule, stepsize, lam0, y0)
    step = DUAL_STEPS[algorithm]
    ls = problem.lam_star
    trace = Trace(DUAL_COLUMNS, meta={"algorithm": algorithm, "b": state.engine.b})
    if keep_iterates:
        trace.iterates = [(state.lam.copy(), [y.copy() for y in state.ys])]

    def measures():
        r = float(np.linalg.norm(problem.residual(state.ys)))
        e = float(np.linalg.norm(state.lam - ls)) if ls is not None else float("nan")
        return r, e

    def done(r, e):
        return (max(r, e) if ls is not None else r) <= tol

    r, e = measures()
    trace.append(0, -1, float("nan"), r, e, 0)
    trace.status = "converged" if done(r, e) else "max_iter"
    if trace.status == "converged":
        return trace
    for _ in range(max_iter):
        a = stepsize.scalar(state.k)
        step(state, problem)
        nrm = float(np.linalg.norm(state.lam))
        if (not np.isfinite(nrm) or nrm > DIVERGENCE_NORM
                or not all(np.all(np.isfinite(y)) for y in state.ys)):
            trace.append(state.k, state.i_k, a, float("inf"), float("inf"), state.staleness)
            trace.status = "diverged"
            raise Diverged(f"{algorithm} diverged at iteration {state.k}", trace)
        r, e = measures()
        trace.append(state.k, state.i_k, a, r, e, state.staleness)
        if keep_iterates:
            trace.iterates.append((state.lam.copy(), [y.copy() for y in state.ys]))
        if done(r, e):
            trace.status = "converged"
            break
    trace.meta["max_staleness"] = state.engine.max_seen
    trace.meta["lam"] = state.lam.tolist()
    return trace


def prox_al_equivalence_check(problem: SeparableProblem, lam0, alpha, steps=10) -> float:
    """
    Run the augmented Lagrangian two-step form next to the closed-form
    dual proximal recursion and return the largest deviation.

    The recursion solves (I/alpha + A Q^-1 A') lam+ = lam/alpha - A Q^-1 c - b.
    The returned value also covers the check that (lam+ - lam)/alpha is
    the dual gradient A y(lam+) - b.
    """
    if problem.m != 1:
        raise InstanceError("the equivalence check needs a single block")
    blk = problem.blocks[0]
    if not (blk.h.is_quadratic and blk.Y.is_free):
        raise InstanceError("the equivalence check needs a quadratic block with free Y")
    A, Q, c, b = blk.A, blk.h.Q, blk.h.c, blk.b
    AQinv = np.linalg.solve(Q, A.T).T
    M = np.eye(problem.r) / alpha + AQinv @ A.T
    lam_al = np.array(lam0, dtype=float)
    lam_px = lam_al.copy()
    worst = 0.0
    for _ in range(steps):
        y = block_argmin(blk, lam_al, alpha, b)
        u = A @ y - b
        lam_next = lam_al + alpha * u
        grad_q = A @ block_argmin(blk, lam_next, 0.0) - b
        worst = max(worst, float(np.max(np.abs((lam_next - lam_al) / alpha - grad_q))))
        lam_al = lam_next
        lam_px = np.linalg.solve(M, lam_px / alpha - AQinv @ c - b)
        worst = max(worst, float(np.max(np.abs(lam_al - lam_px))))
    return worst
