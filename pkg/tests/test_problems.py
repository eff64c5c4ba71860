import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from iaprox.exceptions import InstanceError, UnsupportedOperation
from iaprox.problems import (EXPONENTIAL, FREE, QUADRATIC_PENALTY, Block, ComponentFunction,
                             ConstraintSet, SeparableProblem, SumProblem, evaluate, gradient,
                             problem_from_dict, problem_to_dict, project, prox)

half_sq = ComponentFunction.quadratic([[1.0]])
shifted = ComponentFunction.quadratic([[1.0]], [-2.0], 2.0)  # 1/2 (x - 2)^2


def test_evaluate_examples():
    assert evaluate(half_sq, [2.0]) == 2.0
    assert evaluate(shifted, [2.0]) == 0.0
    assert evaluate(ComponentFunction.quadratic(np.diag([2.0, 4.0])), [1.0, 1.0]) == 3.0


def test_gradient_examples():
    assert gradient(shifted, [0.0]) == pytest.approx([-2.0])
    np.testing.assert_array_equal(
        gradient(ComponentFunction.quadratic(np.diag([2.0, 4.0])), [1.0, 1.0]), [2.0, 4.0])


def test_quadratic_lipschitz_is_top_eigenvalue():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((4, 4))
    Q = B @ B.T
    f = ComponentFunction.quadratic(Q)
    assert f.lipschitz == pytest.approx(np.linalg.eigvalsh(Q)[-1], rel=1e-8)


def test_quadratic_validation():
    with pytest.raises(InstanceError):
        ComponentFunction.quadratic([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(InstanceError):
        ComponentFunction.quadratic([[-1.0]])
    with pytest.raises(InstanceError):
        half_sq.value([1.0, 2.0])


def test_callback_without_gradient():
    f = ComponentFunction.callback(lambda x: float(x @ x), 2)
    with pytest.raises(UnsupportedOperation):
        f.gradient(np.ones(2))


@pytest.mark.parametrize("f", [
    ComponentFunction.quadratic([[2.0, 0.5], [0.5, 1.0]], [1.0, -1.0]),
    ComponentFunction.linear([3.0, -1.0]),
    ComponentFunction.callback(lambda x: float(np.sum(np.exp(x))), 2,
                               grad=lambda x: np.exp(x)),
])
def test_gradient_matches_finite_differences(f):
    x = np.array([0.3, -0.7])
    h = 1e-6
    fd = np.array([(f.value(x + h * e) - f.value(x - h * e)) / (2 * h) for e in np.eye(2)])
    g = f.gradient(x)
    assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))


def test_callback_lipschitz_estimate():
    f = ComponentFunction.callback(lambda x: 0.5 * float(x @ np.diag([1.0, 5.0]) @ x), 2,
                                   grad=lambda x: np.array([x[0], 5.0 * x[1]]))
    assert f.lipschitz == pytest.approx(5.0, rel=1e-3)


def test_project_examples():
    np.testing.assert_array_equal(project(ConstraintSet.orthant(), [-1.0, 2.0]), [0.0, 2.0])
    np.testing.assert_array_equal(project(FREE, [-1.0, 2.0]), [-1.0, 2.0])
    np.testing.assert_array_equal(project(ConstraintSet.box(0.0, 1.0), [-1.0, 0.5, 3.0]),
                                  [0.0, 0.5, 1.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6))
def test_projection_idempotent(v):
    for X in (ConstraintSet.orthant(), ConstraintSet.box(-1.0, 2.0), FREE):
        p = project(X, v)
        np.testing.assert_array_equal(project(X, p), p)
        assert X.contains(p)


def test_prox_examples():
    assert prox(half_sq, [2.0], 1.0)[0] == pytest.approx(1.0, abs=1e-12)
    x = prox(half_sq, [2.0], 1.0)
    assert x[0] == pytest.approx(2.0 - 1.0 * half_sq.gradient(x)[0], abs=1e-12)
    # stationarity (x - 2) + 2 (x - 1) = 0 gives 4/3
    assert prox(shifted, [1.0], 0.5)[0] == pytest.approx(4.0 / 3.0, abs=1e-12)


def test_prox_rejects_nonpositive_alpha():
    with pytest.raises(ValueError):
        prox(half_sq, [1.0], 0.0)


def test_prox_constrained_matches_brute_force():
    Q = np.array([[2.0, 0.9], [0.9, 1.0]])
    f = ComponentFunction.quadratic(Q, [1.0, -3.0])
    X = ConstraintSet.orthant()
    z, a = np.array([-0.5, 1.0]), 0.7
    x = prox(f, z, a, X)
    # KKT on the orthant: gradient of the prox objective is >= 0 and complementary
    g = Q @ x + f.c + (x - z) / a
    assert np.all(x >= 0)
    assert np.all(g >= -1e-8)
    assert np.max(np.abs(g * x)) <= 1e-8


def _random_quadratic(seed, n=3):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    return ComponentFunction.quadratic(B @ B.T / n, rng.standard_normal(n)), rng


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 10.0),
       st.sampled_from(["free", "orthant", "box"]))
def test_prox_nonexpansive(seed, alpha, kind):
    f, rng = _random_quadratic(seed)
    X = {"free": FREE, "orthant": ConstraintSet.orthant(),
         "box": ConstraintSet.box(-0.5, 0.5)}[kind]
    z1, z2 = rng.standard_normal(3) * 3, rng.standard_normal(3) * 3
    d = np.linalg.norm(prox(f, z1, alpha, X) - prox(f, z2, alpha, X))
    assert d <= np.linalg.norm(z1 - z2) + 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 10.0))
def test_prox_fixed_point_at_minimizer(seed, alpha):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((3, 3))
    Q = B @ B.T + 0.1 * np.eye(3)
    c = rng.standard_normal(3)
    f = ComponentFunction.quadratic(Q, c)
    x_star = np.linalg.solve(Q, -c)
    np.testing.assert_allclose(prox(f, x_star, alpha), x_star, atol=1e-10)
    # over the orthant the minimizer of a separable quadratic is a clamp
    g = ComponentFunction.quadratic(np.diag([1.0, 2.0]), [1.0, -2.0])
    xo = np.array([0.0, 1.0])
    np.testing.assert_allclose(prox(g, xo, alpha, ConstraintSet.orthant()), xo, atol=1e-10)


def test_penalty_basics():
    assert EXPONENTIAL.psi(0.0) == 0.0
    assert abs(EXPONENTIAL.dpsi(0.0) - 1.0) <= 1e-12
    assert QUADRATIC_PENALTY.psi(0.0) == 0.0
    assert abs(QUADRATIC_PENALTY.dpsi(0.0) - 1.0) <= 1e-12


@pytest.mark.parametrize("pen", [EXPONENTIAL, QUADRATIC_PENALTY], ids=lambda p: p.kind)
@pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 2.0, 5.0, 10.0])
def test_penalty_conjugacy(pen, t):
    res = minimize_scalar(lambda s: -(s * t - pen.psi(s)), bounds=(-50, 10), method="bounded",
                          options={"xatol": 1e-12})
    assert abs(pen.psi_star(t) - (-res.fun)) <= 1e-7


@pytest.mark.parametrize("pen", [EXPONENTIAL, QUADRATIC_PENALTY], ids=lambda p: p.kind)
def test_penalty_inverse_gradient(pen):
    for s in np.linspace(-5, 5, 41):
        assert abs(pen.dpsi_star(pen.dpsi(s)) - s) <= 1e-9


def test_sum_problem_invariants():
    comps = (half_sq, shifted)
    p = SumProblem(comps)
    assert p.m == 2 and p.n == 1
    assert p.lipschitz == half_sq.lipschitz + shifted.lipschitz
    with pytest.raises(InstanceError):
        SumProblem(comps, sigma=3.0)
    with pytest.raises(InstanceError):
        SumProblem((half_sq, ComponentFunction.quadratic(np.eye(2))))


def test_separable_problem_invariants():
    b1 = Block(half_sq, [[1.0]], [1.0])
    b2 = Block(half_sq, [[2.0]], [0.5])
    p = SeparableProblem((b1, b2))
    np.testing.assert_array_equal(p.b_total, [1.5])
    with pytest.raises(InstanceError):
        SeparableProblem((b1, Block(half_sq, [[1.0], [1.0]], [0.0, 0.0])))


def test_json_round_trip(tmp_path):
    p = SumProblem((ComponentFunction.quadratic([[2.0, 0.0], [0.0, 1.0]], [1.0, 0.0]),
                    ComponentFunction.linear([0.5, 0.5])), ConstraintSet.box(-1.0, 1.0))
    path = tmp_path / "p.json"
    path.write_text(json.dumps(problem_to_dict(p)))
    q = problem_from_dict(json.loads(path.read_text()))
    x = np.array([0.2, -0.4])
    assert q.value(x) == p.value(x)
    assert q.constraint.kind == p.constraint.kind
    np.testing.assert_array_equal(q.constraint.hi, p.constraint.hi)


def test_builtin_reference():
    p = problem_from_dict({"builtin": "centered_quadratics", "m": 4, "n": 2, "seed": 3})
    assert p.m == 4 and p.n == 2
    with pytest.raises(InstanceError):
        problem_from_dict({"builtin": "nope"})
