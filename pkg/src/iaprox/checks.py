"""
Verification suite behind ``iaprox check`` and the acceptance tests.

Every check runs on built-in instances, records the traces it produces,
and returns a CheckResult. ``run_suite`` runs them all, audits the delay
bound over every recorded trace, and can write the traces and a JSON
report. Nothing time-dependent goes into the artifacts, so two runs
produce identical files.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import instances
from .analysis import (default_burn_in, entropy_prox_recursion, equivalence_runner,
                       fit_rate, lemma31_bound_check)
from .delays import DelaySchedule
from .dual import run_dual
from .exceptions import Diverged
from .nonquadratic import run_nonquadratic
from .primal import Stepsize, init_state, ip_step, run, tune_constant_stepsize


@dataclass
class CheckResult:
    name: str
    criterion: int
    passed: bool
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        info = ", ".join(f"{k}={_short(v)}" for k, v in self.detail.items())
        return f"[{flag}] {self.criterion:>2} {self.name}: {info}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_short(u) for u in v) + "]"
    return str(v)


FIT_TOL = 1e-13


class Recorder:
    """Collects every trace a check produces, keyed by a unique name."""

    def __init__(self):
        self.traces = {}

    def add(self, name, trace):
        self.traces[name] = trace
        return trace


def _fit(errors, b, m, min_points=20):
    """Rate fit with the 2b + m burn-in when enough points remain, else the whole run."""
    burn = default_burn_in(b, m)
    if len(errors) < burn + min_points:
        burn = 0
    return fit_rate(errors, burn_in=burn)


# ---------------------------------------------------------------------------
# Individual checks (numbered by acceptance criterion)
# ---------------------------------------------------------------------------

def check_iap_rates(rec: Recorder, bs=(0, 1, 5), seed=0):
    """Tuned-stepsize IAP on the 10-quadratic instance for each delay bound."""
    p = instances.centered_quadratics(10, 5, seed)
    out = []
    for b in bs:
        sched = DelaySchedule.zero() if b == 0 else DelaySchedule("uniform_random", b,
                                                                   "cyclic", seed + b)
        tuned = tune_constant_stepsize(p, "iap", sched)
        t0 = time.perf_counter()
        # continue past the 1e-8 target so the fit spans several decades
        tr = rec.add(f"c1_iap_b{b}", run(p, "iap", sched, Stepsize("constant", tuned.alpha),
                                        max_iter=20000, tol=FIT_TOL))
        wall = time.perf_counter() - t0
        hit = np.flatnonzero(tr.errors <= 1e-8)
        reached = int(hit[0]) if hit.size else None
        fit = _fit(tr.errors, b, p.m)
        ok = (reached is not None and fit.rho_hat < 0.999 and fit.r2 > 0.95
              and wall < 2.0)
        out.append(CheckResult(f"iap_rate_b{b}", 1, ok, {
            "alpha": tuned.alpha, "iterations_to_1e-8": reached, "rho_hat": fit.rho_hat,
            "r2": fit.r2, "fit_points": fit.n_points}))
        out[-1].wall = wall
    return out


def check_equivalences(rec: Recorder, prox_tol=1e-10, prox_method="auto"):
    p = instances.centered_quadratics(10, 5, 0)
    d_iap = equivalence_runner(p, "iap", 100, prox_tol=prox_tol, prox_method=prox_method)
    d_iap_rand = equivalence_runner(instances.random_quadratics(10, 5, 1), "iap", 100,
                                    prox_tol=prox_tol, prox_method=prox_method)
    sb = instances.scalar_block()
    d_ial = max(equivalence_runner(sb, "ial", 10, alpha=1.0),
                equivalence_runner(sb, "ial", 10, alpha=0.1))
    d_admm = equivalence_runner(instances.random_separable(5, 3, 2, 0, dense=True), "admm", 100)
    return [
        CheckResult("iap_direct_vs_two_step", 2, max(d_iap, d_iap_rand) <= 1e-10,
                    {"deviation": max(d_iap, d_iap_rand)}),
        CheckResult("ial_vs_dual_prox", 2, d_ial <= 1e-9, {"deviation": d_ial}),
        CheckResult("admm_vs_scaled_admm", 2, d_admm <= 1e-10, {"deviation": d_admm}),
    ]


def check_ip_identity(rec: Recorder, steps=1000, seed=0):
    """x+ = x - alpha grad f_i(x+) at every IP step on free quadratics."""
    p = instances.random_quadratics(10, 5, seed)
    rng = np.random.default_rng(seed)
    alpha = 1.0 / max(f.lipschitz for f in p.components)
    state = init_state(p, DelaySchedule("zero_delay", 0, "random", seed),
                       Stepsize("constant", alpha), rng.standard_normal(p.n))
    worst = 0.0
    for _ in range(steps):
        x = state.x
        ip_step(state, p)
        g = p.components[state.i_k].gradient(state.x)
        worst = max(worst, float(np.max(np.abs(state.x - (x - alpha * g)))))
    return [CheckResult("ip_projected_identity", 3, worst <= 1e-10,
                        {"steps": steps, "max_violation": worst})]


def check_admm_vs_iaal(rec: Recorder):
    """ADMM for every alpha, IAAL for a tuned alpha, and IAAL with alpha = 10 on 5 blocks."""
    p = instances.symmetric_two_block()
    out = []
    for a in (0.1, 1.0, 10.0):
        tr = rec.add(f"c5_admm_a{a:g}", run_dual(p, "admm", stepsize=Stepsize("constant", a),
                                                 max_iter=50000, tol=1e-6))
        out.append(CheckResult(f"admm_alpha_{a:g}", 5, tr.status == "converged",
                               {"iterations": tr.iterations, "residual": tr.last("residual")}))
    tuned = tune_constant_stepsize(p, "iaal", DelaySchedule("last_update"))
    tr = rec.add("c5_iaal_tuned", run_dual(p, "iaal", DelaySchedule("last_update"),
                                           Stepsize("constant", tuned.alpha),
                                           max_iter=50000, tol=1e-6))
    out.append(CheckResult("iaal_tuned_converges", 5, tr.status == "converged",
                           {"alpha": tuned.alpha, "iterations": tr.iterations}))
    flagged, info = iaal_fragility(instances.symmetric_blocks(5), 10.0, rec, "c5_iaal_5blk_a10")
    out.append(CheckResult("iaal_alpha_10_flagged_5_blocks", 5, flagged, info))
    return out


def iaal_fragility(problem, alpha, rec=None, name=None, max_iter=50000):
    """True when a constant-stepsize IAAL run diverges or fits rho_hat >= 1."""
    try:
        tr = run_dual(problem, "iaal", DelaySchedule("last_update"),
                      Stepsize("constant", alpha), max_iter=max_iter, tol=1e-6)
    except Diverged as exc:
        if rec is not None:
            rec.add(name, exc.trace)
        return True, {"outcome": "diverged", "iteration": exc.trace.iterations}
    if rec is not None:
        rec.add(name, tr)
    fit = _fit(tr.errors, problem.m, problem.m)
    return fit.rho_hat >= 1.0, {"outcome": tr.status, "iterations": tr.iterations,
                                "rho_hat": fit.rho_hat}


def check_lemma(rec: Recorder, count=200, horizon=1000, seed=0):
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    failures, worst = 0, np.inf
    for _ in range(count):
        total = rng.uniform(0.0, 0.999)
        share = rng.uniform()
        p, q = total * share, total * (1 - share)
        d = int(rng.integers(1, 11))
        res = lemma31_bound_check(p, q, d, 1.0, horizon)
        failures += not res.passed
        worst = min(worst, res.margin)
    wall = time.perf_counter() - t0
    r = CheckResult("delayed_recursion_bound", 6, failures == 0 and wall < 1.0,
                    {"cases": count, "failures": failures, "min_margin": worst})
    r.wall = wall
    return [r]


def check_exponential(rec: Recorder):
    """Positivity, multiplier/entropy-prox agreement, worked-instance convergence."""
    out = []
    worked = instances.exp_worked()
    tr = rec.add("c7_exp_al", run_nonquadratic(worked, "exp_al", alpha=1.0, mu0=[1.0],
                                               max_iter=1000, tol=1e-7, keep_iterates=True))
    mu, y = tr.iterates[-1][0][0], tr.iterates[-1][1][0][0]
    out.append(CheckResult("exp_al_worked_instance", 7,
                           abs(mu - 2.0) <= 1e-6 and abs(y) <= 1e-6,
                           {"mu": mu, "y": y, "iterations": tr.iterations}))
    dev = 0.0
    for alpha in (1.0, 0.5):
        t = run_nonquadratic(worked, "exp_al", alpha=alpha, mu0=[1.0], max_iter=10,
                             keep_iterates=True)
        mus = np.array([it[0][0] for it in t.iterates])
        dev = max(dev, float(np.max(np.abs(mus - entropy_prox_recursion(worked, 1.0, alpha,
                                                                           10)))))
    out.append(CheckResult("exp_multiplier_vs_entropy_prox", 7, dev <= 1e-8,
                           {"deviation": dev}))
    two = instances.inequality_two_block()
    rec.add("c7_iaali", run_nonquadratic(two, "iaali", alpha=0.5, mu0=[1.0],
                                         max_iter=5000, tol=1e-8))
    sc = instances.strict_complementarity()
    for alg in ("entropy_iap", "entropy_iag"):
        rec.add(f"c7_{alg}", run_nonquadratic(sc, alg, alpha=0.5, x0=[0.1, 0.9],
                                              max_iter=2000, tol=1e-9))
    rq = instances.random_quadratics(5, 3, 3)
    orthant = type(rq)(rq.components, instances.ConstraintSet.orthant())
    rec.add("c7_entropy_iag_heuristic", run_nonquadratic(orthant, "entropy_iag", x0=np.ones(3),
                                                         base_alpha=0.05, max_iter=1000))
    mu_min = min(float(np.min(t.column("mu_min"))) for n, t in rec.traces.items()
                 if n.startswith("c7_") and t.meta["algorithm"] in ("exp_al", "iaali"))
    x_min = min(float(np.min(t.column("x_min"))) for n, t in rec.traces.items()
                if n.startswith("c7_") and t.meta["algorithm"] in ("entropy_iap", "entropy_iag"))
    out.append(CheckResult("positivity", 7, mu_min > 0 and x_min > 0,
                           {"mu_min": mu_min, "x_min": x_min}))
    return out


def check_strict_complementarity(rec: Recorder, alpha=0.5):
    sc = instances.strict_complementarity()
    tr = rec.add("c8_entropy_iag", run_nonquadratic(sc, "entropy_iag", alpha=alpha,
                                                    x0=[0.1, 0.9], max_iter=5000, tol=1e-8,
                                                    keep_iterates=True))
    x = np.array(tr.iterates)
    burn = default_burn_in(tr.meta["b"], sc.m)
    ratios = x[burn + 1:, 0] / x[burn:-1, 0]
    target = np.exp(-alpha)
    rel = float(np.max(np.abs(ratios / target - 1.0))) if ratios.size else float("inf")
    x2_err = abs(x[-1, 1] - 1.0)
    return [CheckResult("entropy_iag_decay_ratio", 8, rel <= 0.1 and x2_err <= 1e-6,
                        {"max_rel_ratio_dev": rel, "x2_err": x2_err,
                         "iterations": tr.iterations})]


def check_rate_parity(rec: Recorder, seed=0):
    """IAP, IAG and full gradient at alpha = alpha_bar / 10 share a per-iteration rate."""
    p = instances.centered_quadratics(10, 5, seed)
    sched = DelaySchedule("last_update")
    bar = min(tune_constant_stepsize(p, alg, sched).alpha for alg in ("iap", "iag"))
    alpha = bar / 10
    rhos = {}
    for alg in ("iap", "iag", "gd"):
        tr = rec.add(f"c9_{alg}", run(p, alg, sched, Stepsize("constant", alpha),
                                      max_iter=20000, tol=1e-10))
        rhos[alg] = _fit(tr.errors, tr.meta["b"], p.m).rho_hat
    vals = np.array(list(rhos.values()))
    spread = float((vals.max() - vals.min()) / vals.min())
    return [CheckResult("small_stepsize_rate_parity", 9, spread <= 0.05,
                        {"alpha": alpha, "rho_iap": rhos["iap"], "rho_iag": rhos["iag"],
                         "rho_gd": rhos["gd"], "spread": spread})]


def check_delay_contract(rec: Recorder):
    """Staleness column never exceeds the run's bound b."""
    violations, runs = 0, 0
    for tr in rec.traces.values():
        if "staleness" not in tr.columns or "b" not in tr.meta:
            continue
        runs += 1
        violations += int(np.sum(tr.column("staleness") > tr.meta["b"]))
    return [CheckResult("delay_bound_all_runs", 4, violations == 0,
                        {"runs": runs, "violations": violations})]


def check_replay(rec: Recorder):
    """The same seeded run twice gives identical CSV text."""
    p = instances.centered_quadratics(10, 5, 0)
    sched = DelaySchedule("uniform_random", 5, "random", 3)
    a = run(p, "iap", sched, Stepsize("constant", 0.05), max_iter=300).to_csv()
    b = run(p, "iap", sched, Stepsize("constant", 0.05), max_iter=300).to_csv()
    return [CheckResult("seeded_replay", 10, a == b, {"rows": a.count("\n") - 1})]


SUITE = (check_iap_rates, check_equivalences, check_ip_identity, check_admm_vs_iaal,
         check_lemma, check_exponential, check_strict_complementarity, check_rate_parity,
         check_replay)


def run_suite(out_dir=None, prox_tol=1e-10, prox_method="auto"):
    """Run every check; write traces and checks.json under `out_dir` if given."""
    rec = Recorder()
    results = []
    for fn in SUITE:
        if fn is check_equivalences:
            results.extend(fn(rec, prox_tol=prox_tol, prox_method=prox_method))
        else:
            results.extend(fn(rec))
    results.extend(check_delay_contract(rec))
    results.sort(key=lambda r: r.criterion)
    if out_dir is not None:
        write_artifacts(out_dir, results, rec)
    return results, rec


def write_artifacts(out_dir, results, rec):
    tdir = os.path.join(out_dir, "traces")
    os.makedirs(tdir, exist_ok=True)
    for name in sorted(rec.traces):
        rec.traces[name].to_csv(os.path.join(tdir, f"{name}.csv"))
    report = [{"name": r.name, "criterion": r.criterion, "passed": bool(r.passed),
               "detail": _jsonable(r.detail)} for r in results]
    with open(os.path.join(out_dir, "checks.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, float)):
            v = float(v)
            out[k] = v if np.isfinite(v) else str(v)
        elif isinstance(v, np.integer):
            out[k] = int(v)
        elif isinstance(v, np.bool_):
            out[k] = bool(v)
        else:
            out[k] = v
    return out
