"""
Oracles and verification tools.

KKT solves for quadratic instances, rate fits, the delayed-recursion
bound, the gradient-error audit of IAP runs, and lockstep comparisons of
equivalent algorithm forms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .delays import DelaySchedule
from .exceptions import OracleUnavailable
from .problems import SeparableProblem, SumProblem
from .rates import RateFit, fit_rate

__all__ = ["KktSolution", "kkt_oracle", "RateFit", "fit_rate", "default_burn_in",
           "LemmaCheck", "lemma31_bound_check", "ErrorDecomposition", "error_audit",
           "equivalence_runner", "entropy_prox_recursion", "summarize"]


@dataclass(frozen=True)
class KktSolution:
    """Primal solution (x for sums, y blocks for separable problems), multiplier, residual."""

    x: Optional[np.ndarray]
    y: Optional[tuple]
    lam: Optional[np.ndarray]
    residual: float


def kkt_oracle(problem) -> KktSolution:
    """
    Direct solve of the optimality system of a quadratic instance.

    Sums: (sum Q_i) x = -sum c_i. Separable equality problems with free
    blocks: the saddle system [blockdiag(Q_i), A'; A, 0][y; lam] = [-c; b].
    """
    if isinstance(problem, SumProblem):
        if not problem.all_quadratic or not problem.constraint.is_free:
            raise OracleUnavailable("need quadratic components and X free")
        H, c = problem.hessian_sum(), problem.linear_sum()
        x = _solve(H, -c)
        return KktSolution(x, None, None, float(np.linalg.norm(H @ x + c)))
    if not isinstance(problem, SeparableProblem):
        raise OracleUnavailable(f"no oracle for {type(problem).__name__}")
    if problem.constraint_kind != "equality":
        raise OracleUnavailable("need equality constraints")
    if not all(blk.h.is_quadratic and blk.Y.is_free for blk in problem.blocks):
        raise OracleUnavailable("need quadratic blocks with free Y")
    dims = [blk.dim for blk in problem.blocks]
    n, r = sum(dims), problem.r
    K = np.zeros((n + r, n + r))
    rhs = np.zeros(n + r)
    off = 0
    for blk, d in zip(problem.blocks, dims):
        K[off:off + d, off:off + d] = blk.h.Q
        K[off:off + d, n:] = blk.A.T
        K[n:, off:off + d] = blk.A
        rhs[off:off + d] = -blk.h.c
        off += d
    rhs[n:] = problem.b_total
    sol = _solve(K, rhs)
    ys, off = [], 0
    for d in dims:
        ys.append(sol[off:off + d])
        off += d
    return KktSolution(None, tuple(ys), sol[n:], float(np.linalg.norm(K @ sol - rhs)))


def _solve(M, rhs):
    if M.size and np.linalg.cond(M) > 1e12:
        raise OracleUnavailable("optimality system is singular")
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        raise OracleUnavailable("optimality system is singular") from None


def default_burn_in(b, m) -> int:
    """2b + m: one full delay window plus one pass over the components."""
    return 2 * int(b) + int(m)


# ---------------------------------------------------------------------------
# Delayed recursion bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LemmaCheck:
    passed: bool
    margin: float
    rho: float
    worst_k: int


def lemma31_bound_check(p, q, d, beta_0=1.0, horizon=1000) -> LemmaCheck:
    """
    Run beta_{k+1} = p beta_k + q max_{max(0,k-d) <= l <= k} beta_l with
    equality and check beta_k <= rho^k beta_0, rho = (p + q)^(1/(1+d)).

    `margin` is the smallest relative slack 1 - beta_k / (rho^k beta_0).
    The recursion runs on ln beta_k so long horizons do not underflow.
    """
    if p < 0 or q < 0 or p + q >= 1:
        raise ValueError("need p, q >= 0 and p + q < 1")
    if int(d) != d or d < 1:
        raise ValueError("d must be a positive integer")
    d = int(d)
    rho = (p + q) ** (1.0 / (1 + d))
    if beta_0 == 0:
        return LemmaCheck(True, 0.0, rho, 0)
    with np.errstate(divide="ignore"):
        lp, lq, lrho = np.log(p), np.log(q), np.log(p + q) / (1 + d)
    lb = [np.log(beta_0)]
    for k in range(horizon):
        lb.append(np.logaddexp(lp + lb[k], lq + max(lb[max(0, k - d):k + 1])))
    lb = np.array(lb)
    k = np.arange(horizon + 1)
    with np.errstate(invalid="ignore"):
        log_bound = np.where(k == 0, 0.0, k * lrho) + np.log(beta_0)
        gap = lb - log_bound
    # ln beta_k = -inf meets any bound, including rho = 0
    gap[np.isneginf(lb)] = -np.inf
    slack = 1e-12 * np.maximum(1.0, np.abs(np.nan_to_num(log_bound, neginf=0.0)))
    passed = bool(np.all(gap <= slack))
    worst = int(np.argmax(gap))
    return LemmaCheck(passed, float(1.0 - np.exp(gap[worst])), rho, worst)


# ---------------------------------------------------------------------------
# Gradient error audit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorDecomposition:
    """
    e[k] from x_{k+1} = x_k - alpha (grad F(x_k) + e_k), its norm E[k],
    the same error summed term by term (`direct`), and the window maximum
    of ||x_l - x*|| over [k - 2b, k].
    """

    e: np.ndarray
    E: np.ndarray
    direct: np.ndarray
    window_max: np.ndarray
    mismatch: float
    C_fit: float
    C_windows: tuple


def error_audit(trace, problem: SumProblem, alpha, b, n_windows=4) -> ErrorDecomposition:
    """
    Audit an IAP trace recorded with ``keep_iterates=True``.

    C is fitted as the largest ratio ||e_k|| / (alpha * window_max_k);
    `C_windows` repeats the fit on consecutive stretches of the run.
    """
    xs = trace.iterates
    if xs is None or trace.stamps is None:
        raise ValueError("trace must be recorded with keep_iterates=True")
    if problem.x_star is None:
        raise ValueError("error audit needs x*")
    alpha = float(alpha)
    K = len(xs) - 1
    ik = trace.column("i_k").astype(int)[1:]
    dist = np.array([np.linalg.norm(x - problem.x_star) for x in xs])
    e = np.empty((K, problem.n))
    direct = np.empty_like(e)
    wmax = np.empty(K)
    for k in range(K):
        xk, xn, i = xs[k], xs[k + 1], ik[k]
        e[k] = (xk - xn) / alpha - problem.gradient(xk)
        comps = problem.components
        val = comps[i].gradient(xn) - comps[i].gradient(xk)
        stamps = trace.stamps[k]
        for j in range(problem.m):
            if j != i:
                val = val + comps[j].gradient(xs[stamps[j]]) - comps[j].gradient(xk)
        direct[k] = val
        wmax[k] = dist[max(0, k - 2 * b):k + 1].max()
    E = np.linalg.norm(e, axis=1)
    scale = max(1.0, float(np.max(np.abs(e))) if K else 1.0)
    mismatch = float(np.max(np.abs(e - direct)) / scale) if K else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(wmax > 0, E / (alpha * wmax), 0.0)
    C = float(np.max(ratio)) if K else 0.0
    chunks = np.array_split(ratio, n_windows) if K >= n_windows else [ratio]
    C_windows = tuple(float(np.max(c)) if c.size else 0.0 for c in chunks)
    return ErrorDecomposition(e, E, direct, wmax, mismatch, C, C_windows)


# ---------------------------------------------------------------------------
# Lockstep equivalence
# ---------------------------------------------------------------------------

def equivalence_runner(problem, pair, steps=100, alpha=None, schedule=None,
                       prox_tol=1e-10, prox_method="auto") -> float:
    """
    Largest max-norm deviation between two forms of one method.

    pair ``iap``: two-step vs direct IAP. ``ial``: augmented Lagrangian
    two-step vs the explicit dual proximal recursion (single block).
    ``admm``: plain vs diagonally scaled ADMM.
    """
    from .primal import Stepsize, run
    from .dual import prox_al_equivalence_check, run_dual

    if pair == "iap":
        a = alpha if alpha is not None else 1.0 / problem.lipschitz
        schedule = schedule or DelaySchedule("uniform_random", 3, "cyclic", 0)
        kw = dict(schedule=schedule, stepsize=Stepsize("constant", a), max_iter=steps,
                  keep_iterates=True, prox_tol=prox_tol, prox_method=prox_method)
        t1 = run(problem, "iap", **kw)
        t2 = run(problem, "iap_direct", **kw)
        return float(max(np.max(np.abs(u - v)) for u, v in zip(t1.iterates, t2.iterates)))
    if pair == "ial":
        a = 1.0 if alpha is None else alpha
        return prox_al_equivalence_check(problem, np.zeros(problem.r), a, steps)
    if pair == "admm":
        a = 1.0 if alpha is None else alpha
        kw = dict(stepsize=Stepsize("constant", a), max_iter=steps, keep_iterates=True)
        t1 = run_dual(problem, "admm", **kw)
        t2 = run_dual(problem, "admm_scaled", **kw)
        worst = 0.0
        for (l1, y1), (l2, y2) in zip(t1.iterates, t2.iterates):
            worst = max(worst, float(np.max(np.abs(l1 - l2))),
                        max(float(np.max(np.abs(u - v))) for u, v in zip(y1, y2)))
        return worst
    raise ValueError(f"unknown equivalence pair {pair!r}")


def entropy_prox_recursion(problem: SeparableProblem, mu0, alpha, steps=10):
    """
    Multipliers from mu+ = argmax_mu Q(mu) - (mu_k / alpha) psi*(mu / mu_k)
    with the entropy psi*, for a single block and a single constraint.

    With mu = mu_k e^t the stationarity condition is Q'(mu_k e^t) = t / alpha,
    whose left side is nonincreasing in t; it is bracketed and solved by brentq.
    Q'(mu) = A y(mu) - b comes from the exact Lagrangian minimizer.
    """
    from scipy.optimize import brentq
    from .dual import block_argmin

    if problem.m != 1 or problem.r != 1:
        raise ValueError("the recursion oracle handles one block and one constraint")
    blk = problem.blocks[0]

    def dQ(mu):
        return float((blk.A @ block_argmin(blk, [mu], 0.0) - blk.b)[0])

    mus = [float(mu0)]
    for _ in range(steps):
        mk = mus[-1]

        def phi(t):
            return dQ(mk * np.exp(t)) - t / alpha

        lo, hi = -1.0, 1.0
        while phi(lo) < 0:
            lo *= 2
        while phi(hi) > 0:
            hi *= 2
        t = brentq(phi, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        mus.append(mk * np.exp(t))
    return np.array(mus)


def summarize(trace, problem=None, burn_in=0, C_fit=None) -> dict:
    """JSON-ready summary: rate fit, condition number and flags."""
    out = {"iterations": trace.iterations, "status": trace.status,
           "rho_hat": None, "gamma_hat": None, "r2": None, "C_fit": C_fit,
           "L_over_sigma": None}
    errs = trace.errors
    if not np.all(np.isnan(errs)):
        try:
            fit = fit_rate(errs, burn_in=min(burn_in, max(len(errs) - 2, 0)))
            out.update(rho_hat=fit.rho_hat, gamma_hat=fit.gamma_hat, r2=fit.r2)
        except ValueError:
            pass
    if isinstance(problem, SumProblem):
        kappa = problem.condition_number()
        out["L_over_sigma"] = None if not np.isfinite(kappa) else kappa
    rho = out["rho_hat"]
    out["pass_flags"] = {"converged": trace.status == "converged",
                         "contracting": rho is not None and rho < 1.0}
    return out
