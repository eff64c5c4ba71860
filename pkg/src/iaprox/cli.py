"""
Command line entry point.

    iaprox run --config cfg.json [--out-dir DIR] [--seed S] [--max-iter N] [--tol T]
    iaprox compare --config a.json b.json ... [--out-dir DIR]
    iaprox tune --config cfg.json
    iaprox check [--out-dir DIR]

The output directory is taken from --out-dir, then $IAPROX_OUT_DIR, then the
config's ``out_dir``, then ``./runs``.

Exit codes: 0 converged, 1 bad config or arguments, 2 diverged,
3 tuning failure, 4 stopped at max_iter without reaching the tolerance.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analysis import default_burn_in, kkt_oracle, summarize
from .config import ConfigError, ExperimentConfig, family, load_config
from .dual import run_dual
from .exceptions import (Diverged, InstanceError, OracleUnavailable, SolverError,
                         TuningFailure)
from .nonquadratic import run_nonquadratic
from .primal import Stepsize, run, tune_constant_stepsize
from .problems import SeparableProblem, SumProblem, problem_from_dict

ENV_OUT_DIR = "IAPROX_OUT_DIR"
EXIT_OK, EXIT_PARSE, EXIT_DIVERGED, EXIT_TUNING, EXIT_NOT_CONVERGED = 0, 1, 2, 3, 4


@dataclass
class RunOutcome:
    name: str
    exit_code: int
    trace: object = None
    summary: dict = field(default_factory=dict)
    message: str = ""
    wall: float = 0.0


def build_problem(cfg: ExperimentConfig):
    """Instantiate the config's problem and attach x* or lambda* when an oracle exists."""
    try:
        p = problem_from_dict(cfg.problem)
    except (InstanceError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError("problem", str(exc)) from None
    fam = family(cfg.algorithm)
    if fam in ("primal", "entropy") and not isinstance(p, SumProblem):
        raise ConfigError("problem", f"{cfg.algorithm} needs a sum problem")
    if fam in ("dual", "multiplier") and not isinstance(p, SeparableProblem):
        raise ConfigError("problem", f"{cfg.algorithm} needs a separable problem")
    if fam == "dual" and p.constraint_kind != "equality":
        raise ConfigError("problem", f"{cfg.algorithm} needs equality constraints")
    if fam == "multiplier" and p.constraint_kind != "inequality":
        raise ConfigError("problem", f"{cfg.algorithm} needs inequality constraints")
    try:
        if isinstance(p, SumProblem) and p.x_star is None:
            p = p.with_x_star(kkt_oracle(p).x)
        elif isinstance(p, SeparableProblem) and p.lam_star is None:
            sol = kkt_oracle(p)
            p = SeparableProblem(p.blocks, p.constraint_kind, p.dual_strongly_concave,
                                 sol.lam, sol.y)
    except OracleUnavailable:
        pass
    return p


def _vec(v):
    return None if v is None else np.asarray(v, dtype=float)


def resolve_alpha(cfg: ExperimentConfig, problem):
    """The stepsize the run will use; `tuned` runs the halving search."""
    st = cfg.stepsize
    if st.rule != "tuned":
        return st.alpha
    res = tune_constant_stepsize(problem, cfg.algorithm, cfg.schedule.build(),
                                 x0=_vec(cfg.x0) if family(cfg.algorithm) == "primal" else None,
                                 alpha0=st.alpha)
    return res.alpha * st.scale


def execute(cfg: ExperimentConfig) -> RunOutcome:
    """Run one config in memory; never raises for solver outcomes."""
    t0 = time.perf_counter()
    try:
        problem = build_problem(cfg)
        schedule = cfg.schedule.build()
    except (ConfigError, InstanceError) as exc:
        return RunOutcome(cfg.name, EXIT_PARSE, message=str(exc))
    try:
        alpha = resolve_alpha(cfg, problem)
    except TuningFailure as exc:
        return RunOutcome(cfg.name, EXIT_TUNING, message=str(exc),
                          wall=time.perf_counter() - t0)
    fam = family(cfg.algorithm)
    stop = cfg.stop
    try:
        if fam == "primal":
            rule = "constant" if cfg.stepsize.rule == "tuned" else cfg.stepsize.rule
            tr = run(problem, cfg.algorithm, schedule, Stepsize(rule, alpha), _vec(cfg.x0),
                     stop.max_iter, stop.tol)
        elif fam == "dual":
            rule = "constant" if cfg.stepsize.rule == "tuned" else cfg.stepsize.rule
            tr = run_dual(problem, cfg.algorithm, schedule, Stepsize(rule, alpha),
                          _vec(cfg.lam0), max_iter=stop.max_iter, tol=stop.tol)
        elif cfg.stepsize.rule == "heuristic":
            tr = run_nonquadratic(problem, cfg.algorithm, schedule, x0=_vec(cfg.x0),
                                  max_iter=stop.max_iter, tol=stop.tol,
                                  base_alpha=alpha, delta=cfg.stepsize.delta)
        else:
            tr = run_nonquadratic(problem, cfg.algorithm, schedule, alpha=_vec(alpha),
                                  x0=_vec(cfg.x0), mu0=_vec(cfg.mu0),
                                  max_iter=stop.max_iter, tol=stop.tol)
    except Diverged as exc:
        out = RunOutcome(cfg.name, EXIT_DIVERGED, exc.trace, message=str(exc))
    except (InstanceError, ValueError) as exc:
        return RunOutcome(cfg.name, EXIT_PARSE, message=str(exc))
    except SolverError as exc:
        return RunOutcome(cfg.name, EXIT_NOT_CONVERGED, message=str(exc),
                          wall=time.perf_counter() - t0)
    else:
        code = EXIT_OK if tr.status == "converged" else EXIT_NOT_CONVERGED
        out = RunOutcome(cfg.name, code, tr)
    out.wall = time.perf_counter() - t0
    out.summary = _summary(cfg, problem, out.trace, alpha)
    out.summary["exit_code"] = out.exit_code
    return out


def _summary(cfg, problem, trace, alpha):
    b = trace.meta.get("b", 0)
    s = summarize(trace, problem if isinstance(problem, SumProblem) else None,
                  burn_in=default_burn_in(b, problem.m))
    errs = trace.errors
    hit = np.flatnonzero(errs <= cfg.stop.tol)
    s.update({
        "name": cfg.name,
        "algorithm": cfg.algorithm,
        "schedule": {"policy": cfg.schedule.policy, "b": b,
                     "selection": cfg.schedule.selection, "seed": cfg.schedule.seed},
        "stepsize": {"rule": cfg.stepsize.rule, "alpha": _plain(alpha)},
        "tol": cfg.stop.tol,
        "iterations_to_tol": int(hit[0]) if hit.size else None,
        "final_error": _plain(errs[-1]),
        "max_staleness": trace.meta.get("max_staleness"),
    })
    return {k: _plain(v) for k, v in s.items()}


def _plain(v):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(v, dict):
        return {k: _plain(u) for k, u in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(u) for u in np.asarray(v).tolist()] if isinstance(v, np.ndarray) \
            else [_plain(u) for u in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    return v


def write_outcome(out: RunOutcome, root):
    """trace.csv and summary.json under root/name."""
    d = os.path.join(root, out.name)
    os.makedirs(d, exist_ok=True)
    if out.trace is not None:
        out.trace.to_csv(os.path.join(d, "trace.csv"))
    with open(os.path.join(d, "summary.json"), "w") as fh:
        json.dump(out.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return d


def out_root(flag, cfg=None):
    if flag:
        return flag
    if os.environ.get(ENV_OUT_DIR):
        return os.environ[ENV_OUT_DIR]
    if cfg is not None and cfg.out_dir:
        return cfg.out_dir
    return "runs"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _load(path, args):
    cfg = load_config(path)
    return cfg.with_overrides(getattr(args, "seed", None), getattr(args, "max_iter", None),
                              getattr(args, "tol", None))


def cmd_run(args) -> int:
    try:
        cfg = _load(args.config, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    out = execute(cfg)
    if out.exit_code == EXIT_PARSE or out.exit_code == EXIT_TUNING:
        print(f"error: {out.message}", file=sys.stderr)
        return out.exit_code
    d = write_outcome(out, out_root(args.out_dir, cfg))
    s = out.summary
    print(f"{cfg.name}: {s['status']} after {s['iterations']} iterations, "
          f"final error {s['final_error']}, rho_hat {s['rho_hat']}")
    print(f"wrote {d}")
    if out.message:
        print(out.message, file=sys.stderr)
    return out.exit_code


COMPARE_COLUMNS = ("name", "algorithm", "alpha", "status", "iterations", "iterations_to_tol",
                   "rho_hat")


def cmd_compare(args) -> int:
    try:
        cfgs = [_load(p, args) for p in args.config]
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if len(cfgs) < 2:
        print("error: compare needs at least two configs", file=sys.stderr)
        return EXIT_PARSE
    ref = json.dumps(cfgs[0].problem, sort_keys=True)
    for path, c in zip(args.config[1:], cfgs[1:]):
        if json.dumps(c.problem, sort_keys=True) != ref:
            print(f"error: problem in {path} differs from {args.config[0]}", file=sys.stderr)
            return EXIT_PARSE
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        outs = list(pool.map(execute, cfgs))
    for o in outs:
        if o.exit_code in (EXIT_PARSE, EXIT_TUNING):
            print(f"error: {o.name}: {o.message}", file=sys.stderr)
            return o.exit_code
    root = out_root(args.out_dir, cfgs[0])
    rows = []
    for idx, o in enumerate(outs):
        o.name = f"{idx:02d}_{o.name}"
        write_outcome(o, root)
        s = o.summary
        rows.append([s["name"], s["algorithm"], s["stepsize"]["alpha"], s["status"],
                     s["iterations"], s["iterations_to_tol"], s["rho_hat"]])
    # wall time stays out of the CSV so reruns are byte-identical
    with open(os.path.join(root, "compare.csv"), "w") as fh:
        fh.write(",".join(COMPARE_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join("" if v is None else str(v) for v in r) + "\n")
    header = COMPARE_COLUMNS + ("wall_s",)
    table = [[("" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v)))
              for v in r] + [f"{o.wall:.3f}"] for r, o in zip(rows, outs)]
    widths = [max(len(h), *(len(t[j]) for t in table)) for j, h in enumerate(header)]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for t in table:
        print("  ".join(v.ljust(w) for v, w in zip(t, widths)))
    return EXIT_OK


def cmd_tune(args) -> int:
    try:
        cfg = _load(args.config, args)
        problem = build_problem(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if family(cfg.algorithm) not in ("primal", "dual"):
        print(f"error: algorithm: cannot tune {cfg.algorithm}", file=sys.stderr)
        return EXIT_PARSE
    try:
        res = tune_constant_stepsize(problem, cfg.algorithm, cfg.schedule.build(),
                                     alpha0=cfg.stepsize.alpha if cfg.stepsize.rule == "tuned"
                                     else None)
    except TuningFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TUNING
    report = _plain({"algorithm": cfg.algorithm, "alpha": res.alpha, "rho_hat": res.rho_hat,
                     "r2": res.r2, "near_one": res.near_one, "tried": list(res.tried)})
    print(json.dumps(report, indent=2, sort_keys=True))
    if res.near_one:
        print("warning: fitted rate is near one; convergence may be sublinear",
              file=sys.stderr)
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_suite
    t0 = time.perf_counter()
    root = out_root(args.out_dir)
    results, _ = run_suite(os.path.join(root, "check"), prox_tol=args.prox_tol,
                           prox_method=args.prox_method)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed "
          f"in {time.perf_counter() - t0:.1f}s")
    return 0 if failed == 0 else 1


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with 1, the parse-error code, instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_PARSE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="iaprox", description=__doc__.split("\n\n")[0].strip())
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, multi=False):
        sp.add_argument("--config", required=True, nargs="+" if multi else None)
        sp.add_argument("--out-dir", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--max-iter", type=int, default=None)
        sp.add_argument("--tol", type=float, default=None)

    common(sub.add_parser("run", help="run one experiment config"))
    cp = sub.add_parser("compare", help="run several configs on the same problem")
    common(cp, multi=True)
    cp.add_argument("--jobs", type=int, default=4, help="concurrent runs")
    common(sub.add_parser("tune", help="halving search for a constant stepsize"))
    ck = sub.add_parser("check", help="run the verification suite")
    ck.add_argument("--out-dir", default=None)
    ck.add_argument("--prox-tol", type=float, default=1e-10, help=argparse.SUPPRESS)
    ck.add_argument("--prox-method", default="auto", help=argparse.SUPPRESS)
    return p


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "tune": cmd_tune, "check": cmd_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
