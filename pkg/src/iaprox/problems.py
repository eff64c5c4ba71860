"""
Problem instances: component functions, constraint sets, penalties.

Everything here is immutable after construction. Solvers keep their
mutable state elsewhere, so one instance can be shared by many runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import InstanceError, SolverError, UnsupportedOperation

EXP_CLAMP = 700.0  # exp(709) overflows a double


def _frozen(a, ndim=None) -> np.ndarray:
    a = np.array(a, dtype=float)
    if ndim == 1:
        a = np.atleast_1d(a)
    elif ndim == 2:
        a = np.atleast_2d(a)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Component functions
# ---------------------------------------------------------------------------

def estimate_lipschitz(grad, dim, iters=50, h=1e-5, seed=0):
    """Power iteration on a central-difference Hessian at the origin."""
    rng = np.random.default_rng(seed)
    x0 = np.zeros(dim)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = (np.asarray(grad(x0 + h * v)) - np.asarray(grad(x0 - h * v))) / (2 * h)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam


@dataclass(frozen=True, eq=False)
class ComponentFunction:
    """
    A convex component f_i.

    Two kinds are supported: ``quadratic`` with
    f(x) = 1/2 x'Qx + c'x + d, and ``callback`` wrapping user functions.
    Use the ``quadratic``/``linear``/``callback`` constructors rather
    than the raw dataclass.
    """

    kind: str
    dim: int
    Q: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None
    d: float = 0.0
    value_fn: Optional[Callable] = None
    grad_fn: Optional[Callable] = None
    hess_fn: Optional[Callable] = None
    lipschitz: float = 0.0
    prox_available: bool = True
    diagonal: bool = field(default=False, repr=False)

    @classmethod
    def quadratic(cls, Q, c=None, d=0.0, check_psd=True):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise InstanceError(f"Q must be square, got shape {Q.shape}")
        if not np.allclose(Q, Q.T, atol=1e-12, rtol=0):
            raise InstanceError("Q must be symmetric")
        Q = 0.5 * (Q + Q.T)
        c = np.zeros(n) if c is None else np.atleast_1d(np.asarray(c, dtype=float))
        if c.shape != (n,):
            raise InstanceError(f"c has shape {c.shape}, expected ({n},)")
        eig = np.linalg.eigvalsh(Q) if n else np.zeros(0)
        lmax = float(eig[-1]) if n else 0.0
        if check_psd and n and eig[0] < -1e-10 * max(1.0, abs(lmax)):
            raise InstanceError("Q is not positive semidefinite")
        diagonal = bool(np.count_nonzero(Q - np.diag(np.diag(Q))) == 0)
        return cls(kind="quadratic", dim=n, Q=_frozen(Q), c=_frozen(c), d=float(d),
                   lipschitz=max(lmax, 0.0), diagonal=diagonal)

    @classmethod
    def linear(cls, c, d=0.0):
        c = np.atleast_1d(np.asarray(c, dtype=float))
        return cls.quadratic(np.zeros((c.size, c.size)), c, d)

    @classmethod
    def callback(cls, value, dim, grad=None, hess=None, lipschitz=None):
        if lipschitz is None:
            lipschitz = estimate_lipschitz(grad, dim) if grad is not None else 0.0
        return cls(kind="callback", dim=int(dim), value_fn=value, grad_fn=grad,
                   hess_fn=hess, lipschitz=float(lipschitz))

    @property
    def is_quadratic(self) -> bool:
        return self.kind == "quadratic"

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise InstanceError(f"expected vector of length {self.dim}, got shape {x.shape}")
        return x

    def value(self, x) -> float:
        x = self._check(x)
        if self.is_quadratic:
            return float(0.5 * x @ (self.Q @ x) + self.c @ x + self.d)
        return float(self.value_fn(x))

    def gradient(self, x) -> np.ndarray:
        x = self._check(x)
        if self.is_quadratic:
            return self.Q @ x + self.c
        if self.grad_fn is None:
            raise UnsupportedOperation("callback component has no gradient")
        return np.asarray(self.grad_fn(x), dtype=float)

    def hessian(self, x, h=1e-6) -> np.ndarray:
        x = self._check(x)
        if self.is_quadratic:
            return np.array(self.Q)
        if self.hess_fn is not None:
            return np.atleast_2d(np.asarray(self.hess_fn(x), dtype=float))
        # symmetric central differences of the gradient
        H = np.empty((self.dim, self.dim))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            H[:, j] = (self.gradient(x + e) - self.gradient(x - e)) / (2 * h)
        return 0.5 * (H + H.T)


def evaluate(f: ComponentFunction, x) -> float:
    return f.value(x)


def gradient(f: ComponentFunction, x) -> np.ndarray:
    return f.gradient(x)


# ---------------------------------------------------------------------------
# Constraint sets
# ---------------------------------------------------------------------------

CONSTRAINT_KINDS = ("free", "nonnegative_orthant", "box")


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    kind: str = "free"
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise InstanceError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "box":
            if self.lo is None or self.hi is None:
                raise InstanceError("box needs lo and hi")
            lo, hi = np.broadcast_arrays(_frozen(self.lo, 1), _frozen(self.hi, 1))
            if np.any(lo > hi):
                raise InstanceError("box requires lo <= hi componentwise")
            object.__setattr__(self, "lo", _frozen(lo))
            object.__setattr__(self, "hi", _frozen(hi))

    @classmethod
    def free(cls):
        return cls("free")

    @classmethod
    def orthant(cls):
        return cls("nonnegative_orthant")

    @classmethod
    def box(cls, lo, hi):
        return cls("box", lo, hi)

    @property
    def is_free(self) -> bool:
        return self.kind == "free"

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "free":
            return x.copy()
        if self.kind == "nonnegative_orthant":
            return np.maximum(x, 0.0)
        try:
            return np.clip(x, self.lo, self.hi)
        except ValueError as exc:
            raise InstanceError(f"box dimension mismatch: {exc}") from None

    def contains(self, x, tol=0.0) -> bool:
        return bool(np.all(np.abs(self.project(x) - x) <= tol))


FREE = ConstraintSet.free()


def project(X: ConstraintSet, x) -> np.ndarray:
    return X.project(x)


# ---------------------------------------------------------------------------
# Inner solvers
# ---------------------------------------------------------------------------

def minimize_projected(value, grad, x0, X: ConstraintSet, lipschitz, tol=1e-10,
                       max_iter=10_000):
    """
    Projected gradient with backtracking.

    Stops when the unit-step residual ||x - P(x - grad(x))|| drops to `tol`.
    Raises SolverError after `max_iter` iterations.
    """
    x = X.project(x0)
    t = 1.0 / lipschitz if lipschitz > 0 else 1.0
    fx, g = value(x), grad(x)
    res = np.inf
    for _ in range(max_iter):
        res = float(np.linalg.norm(x - X.project(x - g)))
        if res <= tol:
            return x
        while True:
            xn = X.project(x - t * g)
            dx = xn - x
            fn = value(xn)
            slack = 1e-14 * (abs(fx) + abs(fn))
            if fn <= fx + g @ dx + (dx @ dx) / (2 * t) + slack:
                break
            t *= 0.5
            if t < 1e-30:
                raise SolverError("backtracking collapsed", residual=res)
        x, fx, g = xn, fn, grad(xn)
    res = float(np.linalg.norm(x - X.project(x - g)))
    if res <= tol:
        return x
    raise SolverError(f"projected gradient stalled at residual {res:.3e}", residual=res)


def prox(f: ComponentFunction, z, alpha, X: ConstraintSet = FREE, *, shift=None,
         tol=1e-10, max_iter=10_000, method="auto"):
    """
    Proximal step: argmin over X of f(x) + shift'x + sum_j (x_j - z_j)^2 / (2 alpha_j).

    `alpha` may be a scalar or a per-coordinate vector (diagonal scaling).
    Quadratic components are solved directly when X is free or Q is
    diagonal; everything else goes through projected gradient.
    ``method="iterative"`` forces the iterative path.
    """
    z = np.asarray(z, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise ValueError("prox stepsize must be positive")
    inv = np.broadcast_to(1.0 / alpha, z.shape)
    lin = -inv * z if shift is None else shift - inv * z

    if method == "auto" and f.is_quadratic:
        rhs = -(f.c + lin)
        if X.is_free:
            M = f.Q + np.diag(inv)
            return np.linalg.solve(M, rhs)
        if f.diagonal:
            return X.project(rhs / (np.diag(f.Q) + inv))

    def phi(x):
        return f.value(x) + lin @ x + 0.5 * np.sum(inv * x * x)

    def dphi(x):
        return f.gradient(x) + lin + inv * x

    L = f.lipschitz + float(np.max(inv))
    return minimize_projected(phi, dphi, z, X, L, tol=tol, max_iter=max_iter)


# ---------------------------------------------------------------------------
# Penalties
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PenaltySpec:
    """
    Penalty psi with psi(0) = 0, psi'(0) = 1, and its conjugate psi*.

    ``exponential``: psi(s) = e^s - 1, psi*(t) = t(ln t - 1) + 1.
    ``quadratic``:   psi(s) = s + s^2/2, psi*(t) = (t - 1)^2 / 2.
    """

    kind: str = "exponential"

    def __post_init__(self):
        if self.kind not in ("exponential", "quadratic"):
            raise InstanceError(f"unknown penalty {self.kind!r}")

    def psi(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "exponential":
            return np.expm1(np.minimum(s, EXP_CLAMP))
        return s + 0.5 * s * s

    def dpsi(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "exponential":
            return np.exp(np.minimum(s, EXP_CLAMP))
        return 1.0 + s

    def d2psi(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "exponential":
            return np.exp(np.minimum(s, EXP_CLAMP))
        return np.ones_like(s)

    def psi_star(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "quadratic":
            return 0.5 * (t - 1.0) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(t > 0, t * (np.log(np.where(t > 0, t, 1.0)) - 1.0) + 1.0, np.inf)
        return np.where(t == 0, 1.0, out)

    def dpsi_star(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "quadratic":
            return t - 1.0
        if np.any(t <= 0):
            raise ValueError("entropy gradient exists only for t > 0")
        return np.log(t)

    def d2psi_star(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "quadratic":
            return np.ones_like(t)
        return 1.0 / t


EXPONENTIAL = PenaltySpec("exponential")
QUADRATIC_PENALTY = PenaltySpec("quadratic")


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SumProblem:
    """minimize sum_i f_i(x) subject to x in X."""

    components: tuple
    constraint: ConstraintSet = FREE
    sigma: Optional[float] = None
    x_star: Optional[np.ndarray] = None

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise InstanceError("need at least one component")
        n = comps[0].dim
        if any(f.dim != n for f in comps):
            raise InstanceError("all components must share one dimension")
        object.__setattr__(self, "components", comps)
        if self.x_star is not None:
            xs = _frozen(self.x_star, 1)
            if xs.shape != (n,):
                raise InstanceError("x_star has wrong dimension")
            object.__setattr__(self, "x_star", xs)
        quad = all(f.is_quadratic for f in comps)
        object.__setattr__(self, "_quad", quad)
        if quad:
            Qs = sum(f.Q for f in comps)
            object.__setattr__(self, "_Q", _frozen(Qs))
            object.__setattr__(self, "_c", _frozen(sum(f.c for f in comps)))
            object.__setattr__(self, "_d", float(sum(f.d for f in comps)))
            if self.sigma is not None:
                lmin = float(np.linalg.eigvalsh(Qs)[0])
                if self.sigma > lmin + 1e-8:
                    raise InstanceError(
                        f"sigma={self.sigma} exceeds smallest eigenvalue {lmin} of sum Q_i")

    @property
    def m(self) -> int:
        return len(self.components)

    @property
    def n(self) -> int:
        return self.components[0].dim

    @property
    def all_quadratic(self) -> bool:
        return self._quad

    @property
    def lipschitz(self) -> float:
        return float(sum(f.lipschitz for f in self.components))

    def strong_convexity(self):
        if self.sigma is not None:
            return float(self.sigma)
        if self._quad:
            return max(float(np.linalg.eigvalsh(self._Q)[0]), 0.0)
        return None

    def condition_number(self):
        s = self.strong_convexity()
        if not s:
            return float("inf")
        return self.lipschitz / s

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self._quad:
            return float(0.5 * x @ (self._Q @ x) + self._c @ x + self._d)
        return float(sum(f.value(x) for f in self.components))

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._quad:
            return self._Q @ x + self._c
        return np.sum([f.gradient(x) for f in self.components], axis=0)

    def component_gradient(self, i, x) -> np.ndarray:
        return self.components[i].gradient(x)

    def hessian_sum(self) -> np.ndarray:
        if not self._quad:
            raise UnsupportedOperation("hessian_sum needs quadratic components")
        return np.array(self._Q)

    def linear_sum(self) -> np.ndarray:
        if not self._quad:
            raise UnsupportedOperation("linear_sum needs quadratic components")
        return np.array(self._c)

    def with_x_star(self, x_star):
        return SumProblem(self.components, self.constraint, self.sigma, x_star)


@dataclass(frozen=True, eq=False)
class Block:
    """
    One block (h_i, Y_i, A_i, b_i) of a separable problem.

    For inequality problems the block constraint map defaults to
    g_i(y) = A_i y - b_i; a convex callback ``g`` with Jacobian ``g_jac``
    may replace it.
    """

    h: ComponentFunction
    A: np.ndarray
    b: np.ndarray
    Y: ConstraintSet = FREE
    g: Optional[Callable] = None
    g_jac: Optional[Callable] = None

    def __post_init__(self):
        A = _frozen(self.A, 2)
        b = _frozen(self.b, 1)
        if A.shape[1] != self.h.dim:
            raise InstanceError(f"A has {A.shape[1]} columns, h has dimension {self.h.dim}")
        if b.shape != (A.shape[0],):
            raise InstanceError("b must have one entry per row of A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.h.dim

    @property
    def r(self) -> int:
        return self.A.shape[0]

    def constraint_value(self, y) -> np.ndarray:
        if self.g is not None:
            return np.atleast_1d(np.asarray(self.g(y), dtype=float))
        return self.A @ y - self.b

    def constraint_jac(self, y) -> np.ndarray:
        if self.g is not None:
            if self.g_jac is None:
                raise UnsupportedOperation("callback constraint needs g_jac")
            return np.atleast_2d(np.asarray(self.g_jac(y), dtype=float))
        return np.array(self.A)


def _auto_strong_concavity(blocks) -> bool:
    # -grad^2 Q = sum A_i Q_i^{-1} A_i' for quadratic, free, PD blocks
    r = blocks[0].r
    S = np.zeros((r, r))
    for blk in blocks:
        if not (blk.h.is_quadratic and blk.Y.is_free):
            return False
        eig = np.linalg.eigvalsh(blk.h.Q)
        if eig[0] <= 1e-12:
            return False
        S += blk.A @ np.linalg.solve(blk.h.Q, blk.A.T)
    return bool(np.linalg.eigvalsh(S)[0] > 1e-12)


@dataclass(frozen=True, eq=False)
class SeparableProblem:
    """
    minimize sum_i h_i(y^i) over y^i in Y_i subject to
    sum_i (A_i y^i - b_i) = 0  (equality)  or  sum_i g_i(y^i) <= 0 (inequality).
    """

    blocks: tuple
    constraint_kind: str = "equality"
    dual_strongly_concave: Optional[bool] = None
    lam_star: Optional[np.ndarray] = None
    y_star: Optional[tuple] = None

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if not blocks:
            raise InstanceError("need at least one block")
        if self.constraint_kind not in ("equality", "inequality"):
            raise InstanceError(f"unknown constraint kind {self.constraint_kind!r}")
        r = blocks[0].r
        if any(blk.r != r for blk in blocks):
            raise InstanceError("all blocks must share constraint dimension r")
        object.__setattr__(self, "blocks", blocks)
        if self.dual_strongly_concave is None:
            object.__setattr__(self, "dual_strongly_concave", _auto_strong_concavity(blocks))
        if self.lam_star is not None:
            object.__setattr__(self, "lam_star", _frozen(self.lam_star, 1))
        if self.y_star is not None:
            object.__setattr__(self, "y_star", tuple(_frozen(y, 1) for y in self.y_star))

    @property
    def m(self) -> int:
        return len(self.blocks)

    @property
    def r(self) -> int:
        return self.blocks[0].r

    @property
    def b_total(self) -> np.ndarray:
        return np.sum([blk.b for blk in self.blocks], axis=0)

    @property
    def all_quadratic(self) -> bool:
        return all(blk.h.is_quadratic for blk in self.blocks)

    def residual(self, ys) -> np.ndarray:
        """sum_i (A_i y^i - b_i); for inequality problems, sum_i g_i(y^i)."""
        return np.sum([blk.constraint_value(y) for blk, y in zip(self.blocks, ys)], axis=0)

    def objective(self, ys) -> float:
        return float(sum(blk.h.value(y) for blk, y in zip(self.blocks, ys)))

    def default_start(self):
        """Unconstrained minimizer of each h_i where one exists, else 0."""
        ys = []
        for blk in self.blocks:
            y = np.zeros(blk.dim)
            if blk.h.is_quadratic:
                sol, *_ = np.linalg.lstsq(blk.h.Q, -blk.h.c, rcond=None)
                if np.allclose(blk.h.Q @ sol, -blk.h.c, atol=1e-10):
                    y = sol
            ys.append(blk.Y.project(y))
        return ys


# ---------------------------------------------------------------------------
# JSON round trip
# ---------------------------------------------------------------------------

def component_from_dict(d) -> ComponentFunction:
    kind = d.get("kind", "quadratic")
    if kind == "quadratic":
        return ComponentFunction.quadratic(d["Q"], d.get("c"), d.get("d", 0.0))
    if kind == "linear":
        return ComponentFunction.linear(d["c"], d.get("d", 0.0))
    raise InstanceError(f"component kind {kind!r} cannot be read from a config")


def component_to_dict(f: ComponentFunction) -> dict:
    if not f.is_quadratic:
        raise UnsupportedOperation("callback components are not serializable")
    return {"kind": "quadratic", "Q": f.Q.tolist(), "c": f.c.tolist(), "d": f.d}


def constraint_from_dict(d) -> ConstraintSet:
    if d is None:
        return FREE
    if isinstance(d, str):
        d = {"kind": d}
    kind = d.get("kind", "free")
    if kind == "box":
        return ConstraintSet.box(d["lo"], d["hi"])
    return ConstraintSet(kind)


def constraint_to_dict(X: ConstraintSet) -> dict:
    if X.kind == "box":
        return {"kind": "box", "lo": X.lo.tolist(), "hi": X.hi.tolist()}
    return {"kind": X.kind}


def problem_from_dict(d):
    """Build a SumProblem or SeparableProblem from its JSON form."""
    if "builtin" in d:
        from . import instances
        params = {k: v for k, v in d.items() if k != "builtin"}
        return instances.builtin(d["builtin"], **params)
    kind = d.get("type", "sum")
    if kind == "sum":
        comps = [component_from_dict(c) for c in d["components"]]
        return SumProblem(tuple(comps), constraint_from_dict(d.get("constraint")),
                          d.get("sigma"), d.get("x_star"))
    if kind == "separable":
        blocks = []
        for bd in d["blocks"]:
            blocks.append(Block(component_from_dict(bd["h"]), bd["A"], bd["b"],
                                constraint_from_dict(bd.get("Y"))))
        y_star = d.get("y_star")
        return SeparableProblem(tuple(blocks), d.get("constraint_kind", "equality"),
                                d.get("dual_strongly_concave"), d.get("lam_star"),
                                tuple(y_star) if y_star is not None else None)
    raise InstanceError(f"unknown problem type {kind!r}")


def problem_to_dict(p) -> dict:
    if isinstance(p, SumProblem):
        out = {"type": "sum",
               "components": [component_to_dict(f) for f in p.components],
               "constraint": constraint_to_dict(p.constraint)}
        if p.sigma is not None:
            out["sigma"] = p.sigma
        if p.x_star is not None:
            out["x_star"] = p.x_star.tolist()
        return out
    out = {"type": "separable", "constraint_kind": p.constraint_kind,
           "blocks": [{"h": component_to_dict(blk.h), "Y": constraint_to_dict(blk.Y),
                       "A": blk.A.tolist(), "b": blk.b.tolist()} for blk in p.blocks]}
    if p.lam_star is not None:
        out["lam_star"] = p.lam_star.tolist()
    return out
