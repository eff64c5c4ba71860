"""Built-in problem instances used by the checks, tests and scripts."""

from __future__ import annotations

import numpy as np

from .exceptions import InstanceError
from .problems import (Block, ComponentFunction, ConstraintSet, SeparableProblem,
                       SumProblem)


def centered_quadratics(m=10, n=5, seed=0, scale=1.0):
    """F(x) = sum_i 1/2 ||x - c_i||^2 with Gaussian centers; x* is their mean."""
    rng = np.random.default_rng(seed)
    C = scale * rng.standard_normal((m, n))
    comps = tuple(ComponentFunction.quadratic(np.eye(n), -c, 0.5 * c @ c) for c in C)
    return SumProblem(comps, sigma=float(m), x_star=C.mean(axis=0))


def random_quadratics(m=10, n=5, seed=0, rank=None):
    """Random PSD components Q_i = B_i B_i' / n with a strongly convex sum."""
    rng = np.random.default_rng(seed)
    rank = n if rank is None else rank
    comps = []
    for _ in range(m):
        B = rng.standard_normal((n, rank))
        comps.append(ComponentFunction.quadratic(B @ B.T / n, rng.standard_normal(n)))
    p = SumProblem(tuple(comps))
    x_star = np.linalg.solve(p.hessian_sum(), -p.linear_sum())
    return p.with_x_star(x_star)


def flat_quadratic():
    """1/2 (x^1)^2 on R^2: no strong convexity along x^2; x* = 0 is one minimizer."""
    f = ComponentFunction.quadratic(np.diag([1.0, 0.0]))
    return SumProblem((f,), x_star=np.zeros(2))


def strict_complementarity():
    """
    F(x) = x^1 + 1/2 (x^2 - 1)^2 over x >= 0, split into its two terms.

    x* = (0, 1) and dF/dx^1 = 1 > 0 there.
    """
    f1 = ComponentFunction.linear([1.0, 0.0])
    f2 = ComponentFunction.quadratic(np.diag([0.0, 1.0]), [0.0, -1.0], 0.5)
    return SumProblem((f1, f2), ConstraintSet.orthant(), x_star=np.array([0.0, 1.0]))


def symmetric_blocks(m=2, weight=1.0, total=None):
    """
    minimize sum_i weight * (y^i)^2 subject to sum_i y^i = total.

    Each block has b_i = total / m. Defaults to total = m, so y* = 1 and
    lambda* = -2 weight.
    """
    total = float(m) if total is None else float(total)
    blocks = tuple(Block(ComponentFunction.quadratic([[2.0 * weight]]), [[1.0]], [total / m])
                   for _ in range(m))
    y = total / m
    return SeparableProblem(blocks, lam_star=[-2.0 * weight * y],
                            y_star=tuple(np.array([y]) for _ in range(m)))


def symmetric_two_block():
    """minimize y1^2 + y2^2 subject to y1 + y2 = 2; y* = (1, 1), lambda* = -2."""
    return symmetric_blocks(2)


def scalar_block(b=1.0):
    """m = 1: minimize 1/2 y^2 subject to y = b; lambda* = -b."""
    blk = Block(ComponentFunction.quadratic([[1.0]]), [[1.0]], [b])
    return SeparableProblem((blk,), lam_star=[-b], y_star=(np.array([b]),))


def random_separable(m=5, n_i=3, r=2, seed=0, dense=True):
    """Random strongly convex blocks; `dense` makes every A_i row nonzero."""
    rng = np.random.default_rng(seed)
    blocks = []
    for i in range(m):
        B = rng.standard_normal((n_i, n_i))
        Q = B @ B.T + n_i * np.eye(n_i)
        A = rng.standard_normal((r, n_i))
        if not dense:
            A[i % r] = 0.0
        blocks.append(Block(ComponentFunction.quadratic(Q, rng.standard_normal(n_i)),
                            A, rng.standard_normal(r)))
    return SeparableProblem(tuple(blocks))


def exp_worked():
    """m = 1: minimize 1/2 (y - 2)^2 subject to y <= 0; y* = 0, mu* = 2."""
    blk = Block(ComponentFunction.quadratic([[1.0]], [-2.0], 2.0), [[1.0]], [0.0])
    return SeparableProblem((blk,), "inequality", lam_star=[2.0], y_star=(np.zeros(1),))


def inequality_two_block():
    """
    minimize 1/2 (y1 - 1)^2 + 1/2 (y2 - 1)^2 subject to y1 + y2 <= 1.

    y* = (1/2, 1/2), mu* = 1/2.
    """
    blocks = tuple(Block(ComponentFunction.quadratic([[1.0]], [-1.0], 0.5), [[1.0]], [0.5])
                   for _ in range(2))
    return SeparableProblem(blocks, "inequality", lam_star=[0.5],
                            y_star=(np.array([0.5]), np.array([0.5])))


BUILTINS = {
    "centered_quadratics": centered_quadratics,
    "random_quadratics": random_quadratics,
    "flat_quadratic": flat_quadratic,
    "strict_complementarity": strict_complementarity,
    "symmetric_blocks": symmetric_blocks,
    "symmetric_two_block": symmetric_two_block,
    "scalar_block": scalar_block,
    "random_separable": random_separable,
    "exp_worked": exp_worked,
    "inequality_two_block": inequality_two_block,
}


def builtin(name, **params):
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise InstanceError(f"unknown builtin instance {name!r}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise InstanceError(f"bad parameters for {name}: {exc}") from None
