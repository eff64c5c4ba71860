import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iaprox import instances
from iaprox.analysis import default_burn_in, error_audit
from iaprox.delays import DelaySchedule
from iaprox.exceptions import Diverged, InstanceError, TuningFailure
from iaprox.primal import (STEPS, Stepsize, gd_step, iag_step, iap_step, ias_step, init_state,
                           ip_step, is_step, run, tune_constant_stepsize)
from iaprox.problems import ComponentFunction, ConstraintSet, SumProblem

f_sq = ComponentFunction.quadratic([[1.0]])                  # 1/2 x^2
f_shift = ComponentFunction.quadratic([[1.0]], [-2.0], 2.0)  # 1/2 (x - 2)^2
pair = SumProblem((f_sq, f_shift), x_star=np.array([1.0]))
LAZY = DelaySchedule("last_update", b=100)


def _state(problem, x0, alpha, schedule=LAZY):
    return init_state(problem, schedule, Stepsize("constant", alpha), np.atleast_1d(x0))


def test_is_step_examples():
    single = SumProblem((f_shift,))
    assert is_step(_state(single, 0.0, 0.5), single).x[0] == pytest.approx(1.0)
    assert is_step(_state(single, 2.0, 0.5), single).x[0] == 2.0
    orth = SumProblem((ComponentFunction.quadratic([[1.0]], [1.0], 0.5),), ConstraintSet.orthant())
    assert is_step(_state(orth, 0.0, 1.0), orth).x[0] == 0.0


def test_ip_step_examples():
    single = SumProblem((f_sq,))
    st_ = ip_step(_state(single, 2.0, 1.0), single)
    assert st_.x[0] == pytest.approx(1.0, abs=1e-12)
    assert st_.x[0] == pytest.approx(2.0 - 1.0 * f_sq.gradient(st_.x)[0], abs=1e-12)
    shifted = SumProblem((f_shift,))
    assert ip_step(_state(shifted, 1.0, 0.5), shifted).x[0] == pytest.approx(4.0 / 3.0, abs=1e-12)


def test_ias_step_examples():
    st_ = ias_step(_state(pair, 0.0, 0.5, DelaySchedule.zero()), pair)
    assert st_.x[0] == pytest.approx(1.0)
    # slots computed at x = 0, iterate moved to 1 since
    st_ = _state(pair, 0.0, 0.5)
    st_.x = np.array([1.0])
    assert ias_step(st_, pair).x[0] == pytest.approx(2.0)


def test_iag_step_examples():
    alpha = 0.3
    st_ = iag_step(_state(pair, 0.0, alpha), pair)
    assert st_.x[0] == pytest.approx(2 * alpha)
    p = instances.random_quadratics(4, 3, 2)
    x0 = np.ones(3)
    a = iag_step(_state(p, x0, 0.05, DelaySchedule.zero()), p).x
    np.testing.assert_allclose(a, x0 - 0.05 * p.gradient(x0), atol=1e-14)


def test_iap_step_example():
    st_ = iap_step(_state(pair, 0.0, 0.5), pair)
    assert st_.z[0] == pytest.approx(1.0)
    assert st_.x[0] == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert st_.x[0] == pytest.approx(1.0 - 0.5 * f_sq.gradient(st_.x)[0], abs=1e-12)
    # the refreshed slot holds the gradient at the new point
    assert st_.engine.table.slots[0][0] == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert st_.engine.table.stamps[0] == 1


@pytest.mark.parametrize("step", [is_step, ip_step, ias_step, iag_step, iap_step, gd_step])
def test_fixed_point_at_optimum(step):
    p = instances.random_quadratics(5, 3, 4)
    st_ = _state(p, p.x_star, 0.1)
    for _ in range(7):
        x = st_.x.copy()
        step(st_, p)
        if step in (is_step, ip_step):
            continue  # single components are not stationary at x*
        np.testing.assert_allclose(st_.x, x, atol=1e-12)


def test_ip_is_fixed_point_when_components_share_minimizer():
    comps = tuple(ComponentFunction.quadratic(np.diag(d), -np.diag(d) @ np.ones(2))
                  for d in ([1.0, 2.0], [3.0, 0.5]))
    p = SumProblem(comps, x_star=np.ones(2))
    for step in (is_step, ip_step):
        st_ = _state(p, np.ones(2), 0.4)
        for _ in range(4):
            step(st_, p)
        np.testing.assert_allclose(st_.x, np.ones(2), atol=1e-12)


def test_zero_delay_reductions():
    p = instances.random_quadratics(6, 4, 5)
    x0 = np.linspace(-1, 1, 4)
    gd = run(p, "gd", DelaySchedule.zero(), Stepsize("constant", 0.02), x0, 40, keep_iterates=True)
    for alg in ("iag", "ias"):
        tr = run(p, alg, DelaySchedule.zero(), Stepsize("constant", 0.02), x0, 40,
                 keep_iterates=True)
        if alg == "iag":
            dev = max(np.max(np.abs(u - v)) for u, v in zip(tr.iterates, gd.iterates))
            assert dev <= 1e-12
    # IAS with zero delay steps along the full gradient at x_k
    st_ = _state(p, x0, 0.02, DelaySchedule.zero())
    x1 = ias_step(st_, p).x
    np.testing.assert_allclose(x1, x0 - 0.02 * p.gradient(x0), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 500), st.integers(0, 6), st.sampled_from(["cyclic", "random"]))
def test_iap_forms_agree(seed, b, selection):
    p = instances.random_quadratics(6, 3, seed)
    sched = DelaySchedule("uniform_random", b, selection, seed) if b else DelaySchedule.zero()
    kw = dict(schedule=sched, stepsize=Stepsize("constant", 0.5 / p.lipschitz), max_iter=60,
              keep_iterates=True)
    a = run(p, "iap", **kw)
    d = run(p, "iap_direct", **kw)
    assert max(np.max(np.abs(u - v)) for u, v in zip(a.iterates, d.iterates)) <= 1e-10


def test_iap_reaches_tolerance_with_delays():
    p = instances.centered_quadratics(10, 5, 0)
    sched = DelaySchedule("uniform_random", 5, "cyclic", 0)
    alpha = tune_constant_stepsize(p, "iap", sched).alpha
    tr = run(p, "iap", sched, Stepsize("constant", alpha), max_iter=20000, tol=1e-8)
    assert tr.status == "converged"
    e = tr.errors
    w = default_burn_in(5, 10)
    peaks = [e[k:k + w].max() for k in range(w, len(e) - w, w)]
    assert all(b <= a for a, b in zip(peaks, peaks[1:]))


@pytest.mark.parametrize("policy", ["fixed_delay", "uniform_random"])
@pytest.mark.parametrize("b", [0, 1, 5])
def test_windowed_ratio_below_one(b, policy):
    # single steps may increase the error; maxima over windows of 2b + m must contract
    p = instances.centered_quadratics(10, 5, 0)
    sched = DelaySchedule(policy, b, "cyclic", 0) if b else DelaySchedule.zero()
    alpha = tune_constant_stepsize(p, "iap", sched).alpha
    tr = run(p, "iap", sched, Stepsize("constant", alpha), max_iter=5000, tol=1e-10)
    e = tr.errors
    w = default_burn_in(b, p.m) + 1
    peaks = np.array([e[k:k + w].max() for k in range(0, len(e) - w, w)])
    if peaks.size < 2:
        assert tr.status == "converged"
        return
    assert np.max(peaks[1:] / peaks[:-1]) < 1.0


def test_is_diminishing_gets_close():
    p = instances.centered_quadratics(10, 5, 0)
    tr = run(p, "is", DelaySchedule.zero(), Stepsize("diminishing", 1.0), max_iter=50_000,
             tol=1e-2)
    assert tr.status == "converged"


def test_max_iter_zero():
    tr = run(instances.centered_quadratics(), "iap", max_iter=0)
    assert len(tr.rows) == 1 and tr.iterations == 0


def test_diminishing_rule():
    s = Stepsize("diminishing", 2.0)
    alphas = np.array([s.at(k) for k in range(10_000)])
    assert alphas[0] == 2.0 and alphas[-1] == pytest.approx(2.0 / 10_000)
    assert np.sum(alphas ** 2) < 2.0 ** 2 * np.pi ** 2 / 6 + 1e-9


def test_stepsize_validation():
    with pytest.raises(InstanceError, match="stepsize"):
        Stepsize("constant", -1.0)
    with pytest.raises(InstanceError):
        Stepsize("sometimes", 1.0)


def test_vector_stepsize():
    p = instances.random_quadratics(4, 3, 1)
    tr = run(p, "iap", DelaySchedule("last_update"), Stepsize("constant", [0.02, 0.05, 0.03]),
             max_iter=3000, tol=1e-9)
    assert tr.status == "converged"


def test_constrained_iap_stays_feasible():
    p = instances.strict_complementarity()
    tr = run(p, "iap", DelaySchedule("last_update"), Stepsize("constant", 0.3), np.ones(2),
             max_iter=200, keep_iterates=True)
    assert all(np.all(x >= 0) for x in tr.iterates)
    assert tr.errors[-1] < 1e-6


def test_divergence_keeps_trace():
    with pytest.raises(Diverged) as exc:
        run(instances.centered_quadratics(), "iag", DelaySchedule("last_update"),
            Stepsize("constant", 5.0), max_iter=5000)
    assert exc.value.trace.status == "diverged"
    assert exc.value.trace.iterations > 0


def test_tuner_examples():
    single = SumProblem((f_sq,), x_star=np.zeros(1))
    assert tune_constant_stepsize(single, "iap", LAZY).alpha == 1.0
    res = tune_constant_stepsize(instances.centered_quadratics(), "iap", LAZY)
    assert res.tried[0] == pytest.approx(0.1)


def test_tuner_flags_flat_problem():
    try:
        res = tune_constant_stepsize(instances.flat_quadratic(), "iap", DelaySchedule.zero())
    except TuningFailure:
        return
    assert res.near_one


def test_error_audit_shapes():
    p = instances.centered_quadratics(10, 5, 0)
    sched = DelaySchedule("uniform_random", 5, "cyclic", 1)
    # stop before the error reaches rounding level, where the ratio is meaningless
    tr = run(p, "iap", sched, Stepsize("constant", 0.05), max_iter=100, keep_iterates=True)
    audit = error_audit(tr, p, 0.05, 5)
    assert audit.mismatch <= 1e-8
    assert np.isfinite(audit.C_fit)
    assert audit.C_windows[-1] <= audit.C_windows[0] * 1.5


def test_error_audit_single_component():
    p = SumProblem((ComponentFunction.quadratic(np.diag([1.0, 3.0]), [1.0, 1.0]),))
    p = p.with_x_star(np.array([-1.0, -1.0 / 3.0]))
    tr = run(p, "ip", DelaySchedule.zero(), Stepsize("constant", 0.2), np.ones(2), 30,
             keep_iterates=True)
    tr.stamps = [np.array([k]) for k in range(tr.iterations)]
    audit = error_audit(tr, p, 0.2, 0)
    L = p.components[0].lipschitz
    steps = np.array([np.linalg.norm(b - a) for a, b in zip(tr.iterates, tr.iterates[1:])])
    assert np.all(audit.E <= L * steps + 1e-12)


def test_registry():
    assert set(STEPS) == {"is", "ip", "ias", "iag", "iap", "iap_direct", "gd"}
