"""
ADMM against constant-stepsize IAAL on the symmetric block instance.

For each block count and stepsize, prints iterations to residual 1e-6
and the fitted rate, or the iteration at which IAAL blew up.

    python3 scripts/iaal_vs_admm.py --blocks 2 3 5 --alphas 0.1 1 10 100
"""

import argparse

from iaprox import instances
from iaprox.analysis import fit_rate
from iaprox.delays import DelaySchedule
from iaprox.dual import run_dual
from iaprox.exceptions import Diverged
from iaprox.primal import Stepsize


def outcome(problem, alg, alpha, max_iter):
    try:
        tr = run_dual(problem, alg, DelaySchedule("last_update"), Stepsize("constant", alpha),
                      max_iter=max_iter, tol=1e-6)
    except Diverged as exc:
        return f"diverged@{exc.trace.iterations}"
    try:
        rho = fit_rate(tr.errors, burn_in=min(problem.m, len(tr.errors) - 2)).rho_hat
    except ValueError:
        rho = float("nan")
    return f"{tr.status[:4]} {tr.iterations:>6} rho={rho:.4f}"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--blocks", type=int, nargs="+", default=[2, 3, 4, 5])
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.1, 1.0, 10.0, 100.0])
    ap.add_argument("--max-iter", type=int, default=50000)
    args = ap.parse_args(argv)
    print(f"{'m':>2} {'alpha':>7}  {'admm':<26} iaal")
    for m in args.blocks:
        p = instances.symmetric_blocks(m)
        for a in args.alphas:
            print(f"{m:>2} {a:>7g}  {outcome(p, 'admm', a, args.max_iter):<26} "
                  f"{outcome(p, 'iaal', a, args.max_iter)}")


if __name__ == "__main__":
    main()
