import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iaprox import instances
from iaprox.analysis import kkt_oracle
from iaprox.delays import DelaySchedule
from iaprox.dual import (admm_step, count_nonzero_rows, dual_component, dual_value,
                         iaal_batch_cycle, iaal_step, iadg_step, ial_step, init_dual_state,
                         prox_al_equivalence_check, run_dual, scaled_admm_step)
from iaprox.exceptions import UnboundedDual
from iaprox.primal import Stepsize, tune_constant_stepsize
from iaprox.problems import Block, ComponentFunction, ConstraintSet, SeparableProblem

half_sq = ComponentFunction.quadratic([[1.0]])
scalar = instances.scalar_block()
two = instances.symmetric_two_block()


def _state(problem, alpha, lam0=None, y0=None, schedule=None):
    return init_dual_state(problem, schedule or DelaySchedule("last_update"),
                           Stepsize("constant", alpha), lam0, y0)


def test_dual_component_examples():
    q, g, y = dual_component(0, [0.0], scalar)
    assert (q, g[0], y[0]) == pytest.approx((0.0, -1.0, 0.0))
    q, g, y = dual_component(0, [-1.0], scalar)
    assert y[0] == pytest.approx(1.0) and g[0] == pytest.approx(0.0)
    zero = SeparableProblem((Block(ComponentFunction.quadratic([[0.0]]), [[1.0]], [0.0],
                                   ConstraintSet.box(0.0, 0.0)),))
    for lam in (-3.0, 0.0, 2.5):
        q, g, _ = dual_component(0, [lam], zero)
        assert q == 0.0 and g[0] == 0.0


def test_unbounded_lagrangian_is_reported():
    p = SeparableProblem((Block(ComponentFunction.linear([1.0]), [[1.0]], [0.0]),))
    with pytest.raises(UnboundedDual):
        dual_component(0, [0.0], p)


def test_iadg_examples():
    st_ = iadg_step(_state(scalar, 0.5, y0=[np.zeros(1)]), scalar)
    assert st_.ys[0][0] == pytest.approx(0.0)
    assert st_.lam[0] == pytest.approx(-0.5)
    st_ = iadg_step(_state(scalar, 0.5, lam0=[-1.0], y0=[np.ones(1)]), scalar)
    assert st_.lam[0] == pytest.approx(-1.0)
    tr = run_dual(two, "iadg", stepsize=Stepsize("constant", 0.1), max_iter=20000, tol=1e-8)
    assert tr.status == "converged"
    assert tr.meta["lam"][0] == pytest.approx(-2.0, abs=1e-7)


def test_ial_examples():
    st_ = ial_step(_state(scalar, 1.0, y0=[np.zeros(1)]), scalar)
    assert st_.ys[0][0] == pytest.approx(0.5)
    assert st_.lam[0] == pytest.approx(-0.5)
    # dual proximal step: argmax -1/2 l^2 - l - 1/2 (l - 0)^2 is -1/2
    assert st_.lam[0] == pytest.approx(-0.5, abs=1e-12)
    st_ = ial_step(_state(scalar, 1.0, lam0=[-1.0], y0=[np.ones(1)]), scalar)
    assert st_.lam[0] == pytest.approx(-1.0) and st_.ys[0][0] == pytest.approx(1.0)


def test_iaal_two_block_step():
    st_ = iaal_step(_state(two, 0.25, y0=[np.zeros(1), np.zeros(1)]), two)
    assert st_.ys[0][0] == pytest.approx(2.0 / 9.0, abs=1e-12)
    assert st_.lam[0] == pytest.approx(-4.0 / 9.0, abs=1e-12)


def test_iaal_converges_with_tuned_alpha():
    alpha = tune_constant_stepsize(two, "iaal", DelaySchedule("last_update")).alpha
    tr = run_dual(two, "iaal", stepsize=Stepsize("constant", alpha), max_iter=50000, tol=1e-8,
                  keep_iterates=True)
    assert tr.status == "converged"
    lam, ys = tr.iterates[-1]
    assert lam[0] == pytest.approx(-2.0, abs=1e-7)
    assert [y[0] for y in ys] == pytest.approx([1.0, 1.0], abs=1e-7)


@pytest.mark.parametrize("step", [iaal_step, iaal_batch_cycle])
def test_single_block_reduces_to_ial(step):
    p = instances.random_separable(1, 3, 2, 4)
    a, b = _state(p, 0.7), _state(p, 0.7)
    for _ in range(15):
        step(a, p)
        ial_step(b, p)
        assert np.max(np.abs(a.lam - b.lam)) <= 1e-12


def test_batch_cycle_example():
    st_ = iaal_batch_cycle(_state(two, 1.0, y0=[np.zeros(1), np.zeros(1)]), two)
    assert st_.ys[0][0] == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert st_.ys[1][0] == pytest.approx(4.0 / 9.0, abs=1e-12)
    assert st_.lam[0] == pytest.approx(-8.0 / 9.0, abs=1e-12)


@pytest.mark.parametrize("alg", ["iaal_cycle", "admm", "admm_scaled"])
def test_two_block_convergence(alg):
    tr = run_dual(two, alg, stepsize=Stepsize("constant", 1.0), max_iter=50000, tol=1e-6,
                  keep_iterates=True)
    assert tr.status == "converged"
    lam, ys = tr.iterates[-1]
    assert lam[0] == pytest.approx(-2.0, abs=1e-6)


@pytest.mark.parametrize("alpha", [0.1, 1.0, 10.0])
def test_admm_any_stepsize(alpha):
    tr = run_dual(two, "admm", stepsize=Stepsize("constant", alpha), max_iter=50000, tol=1e-6)
    assert tr.status == "converged"
    assert tr.last("residual") <= 1e-6


@pytest.mark.parametrize("step", [admm_step, scaled_admm_step, iaal_step, iadg_step,
                                  iaal_batch_cycle])
def test_kkt_point_is_fixed(step):
    p = instances.random_separable(4, 3, 2, 1)
    sol = kkt_oracle(p)
    st_ = _state(p, 0.8, sol.lam, list(sol.y))
    st_.z = [blk.A @ y for blk, y in zip(p.blocks, sol.y)]
    for _ in range(8):
        step(st_, p)
    assert np.max(np.abs(st_.lam - sol.lam)) <= 1e-9


def test_ial_fixed_point_single_block():
    p = instances.random_separable(1, 3, 2, 1)
    sol = kkt_oracle(p)
    st_ = _state(p, 0.8, sol.lam, list(sol.y))
    for _ in range(5):
        ial_step(st_, p)
    assert np.max(np.abs(st_.lam - sol.lam)) <= 1e-10


def test_nonzero_row_counts():
    h = ComponentFunction.quadratic([[1.0]])
    p = SeparableProblem((Block(h, [[1.0], [0.0]], [0.0, 0.0]),
                          Block(h, [[1.0], [1.0]], [0.0, 0.0])))
    np.testing.assert_array_equal(count_nonzero_rows(p), [2, 1])
    assert np.all(count_nonzero_rows(instances.random_separable()) == 5)


def test_scaled_admm_matches_plain_on_dense_rows():
    p = instances.random_separable(5, 3, 2, 7, dense=True)
    kw = dict(stepsize=Stepsize("constant", 0.6), max_iter=100, keep_iterates=True)
    a, b = run_dual(p, "admm", **kw), run_dual(p, "admm_scaled", **kw)
    dev = max(np.max(np.abs(u[0] - v[0])) for u, v in zip(a.iterates, b.iterates))
    assert dev <= 1e-10


def test_scaled_admm_converges_on_sparse_rows():
    p = instances.random_separable(5, 3, 2, 2, dense=False)
    sol = kkt_oracle(p)
    tr = run_dual(p, "admm_scaled", stepsize=Stepsize("constant", 1.0), max_iter=20000,
                  tol=1e-8, keep_iterates=True)
    assert tr.status == "converged"
    np.testing.assert_allclose(tr.iterates[-1][0], sol.lam, atol=1e-7)


@pytest.mark.parametrize("alpha", [1.0, 0.1])
def test_prox_al_equivalence(alpha):
    assert prox_al_equivalence_check(scalar, [0.0], alpha, 10) <= 1e-9


def test_prox_al_equivalence_at_optimum():
    blk = scalar.blocks[0]
    lam = np.array([-1.0])
    for _ in range(5):
        from iaprox.dual import block_argmin
        y = block_argmin(blk, lam, 1.0, blk.b)
        lam = lam + (blk.A @ y - blk.b)
        assert lam[0] == -1.0
    assert prox_al_equivalence_check(scalar, [-1.0], 1.0, 10) <= 1e-12


@pytest.mark.parametrize("alg", ["ial", "iaal", "iadg"])
def test_multiplier_identity(alg):
    p = instances.random_separable(4, 2, 2, 3)
    st_ = _state(p, 0.3, schedule=DelaySchedule("uniform_random", 2, "random", 1))
    step = {"ial": ial_step, "iaal": iaal_step, "iadg": iadg_step}[alg]
    for _ in range(40):
        lam = st_.lam.copy()
        step(st_, p)
        np.testing.assert_array_equal(st_.lam, lam + 0.3 * st_.last_residual)
        if alg == "ial":
            continue
        # each slot is A_i y_i - b_i at the block iterate it was stamped with
        for i, blk in enumerate(p.blocks):
            stored = st_.engine.history[st_.engine.table.stamps[i]][i]
            np.testing.assert_allclose(st_.engine.table.slots[i], blk.A @ stored - blk.b,
                                       atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_dual_function_concave(seed):
    p = instances.random_separable(3, 2, 2, seed % 50)
    rng = np.random.default_rng(seed)
    l1, l2 = rng.standard_normal(2) * 3, rng.standard_normal(2) * 3
    q1, g1 = dual_value(l1, p)
    q2, _ = dual_value(l2, p)
    assert q2 <= q1 + g1 @ (l2 - l1) + 1e-8 * max(1.0, abs(q1))


def test_iaal_zero_delay_single_block_is_classical_al():
    p = instances.random_separable(1, 3, 2, 9)
    a = _state(p, 0.5, schedule=DelaySchedule.zero())
    b = _state(p, 0.5)
    lam = np.zeros(2)
    blk = p.blocks[0]
    from iaprox.dual import block_argmin
    for _ in range(10):
        iaal_step(a, p)
        ial_step(b, p)
        y = block_argmin(blk, lam, 0.5, blk.b)
        lam = lam + 0.5 * (blk.A @ y - blk.b)
        assert np.max(np.abs(a.lam - lam)) <= 1e-12
        assert np.max(np.abs(b.lam - lam)) <= 1e-12


def test_primal_recovery():
    p = instances.random_separable(5, 3, 2, 0)
    sol = kkt_oracle(p)
    tr = run_dual(p, "admm", stepsize=Stepsize("constant", 1.0), max_iter=50000, tol=1e-9,
                  keep_iterates=True)
    assert tr.last("residual") <= 1e-8
    _, ys = tr.iterates[-1]
    for y, ys_ in zip(ys, sol.y):
        np.testing.assert_allclose(y, ys_, atol=1e-6)


def test_row_scaling_covariance():
    s, alpha = 3.0, 0.8
    h = ComponentFunction.quadratic([[2.0, 0.3], [0.3, 1.0]], [1.0, -1.0])
    A, b = np.array([[1.0, 2.0]]), np.array([0.5])
    plain = SeparableProblem((Block(h, A, b),))
    scaled = SeparableProblem((Block(h, s * A, s * b),))
    a = _state(plain, alpha, lam0=[0.4])
    c = _state(scaled, alpha / s ** 2, lam0=[0.4 / s])
    for _ in range(10):
        ial_step(a, plain)
        ial_step(c, scaled)
        assert abs(c.lam[0] * s - a.lam[0]) <= 1e-8


def test_default_start():
    p = instances.random_separable(3, 2, 2, 5)
    st_ = init_dual_state(p)
    np.testing.assert_array_equal(st_.lam, np.zeros(2))
    for blk, y in zip(p.blocks, st_.ys):
        np.testing.assert_allclose(blk.h.gradient(y), 0.0, atol=1e-12)


def test_iaal_gate_forces_diminishing():
    h0 = ComponentFunction.quadratic([[0.0]])
    p = SeparableProblem((Block(h0, [[1.0]], [1.0], ConstraintSet.box(-5.0, 5.0)),
                          Block(half_sq, [[1.0]], [1.0])))
    assert not p.dual_strongly_concave
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tr = run_dual(p, "iaal", stepsize=Stepsize("constant", 1.0), max_iter=3, tol=-1.0)
    assert any("diminishing" in str(w.message) for w in caught)
    np.testing.assert_allclose(tr.column("alpha_k")[1:], [1.0, 0.5, 1.0 / 3.0])


def test_iaal_fragility_on_five_blocks():
    from iaprox.exceptions import Diverged
    with pytest.raises(Diverged) as exc:
        run_dual(instances.symmetric_blocks(5), "iaal", stepsize=Stepsize("constant", 10.0),
                 max_iter=50000, tol=1e-6)
    assert exc.value.trace.status == "diverged"
    tr = run_dual(instances.symmetric_blocks(5), "iaal", stepsize=Stepsize("constant", 1.0),
                  max_iter=50000, tol=1e-6)
    assert tr.status == "converged"
