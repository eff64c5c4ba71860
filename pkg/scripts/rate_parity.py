"""
Per-iteration rates of IAP, IAG and full-gradient descent as alpha shrinks.

alpha_bar is the smaller of the tuned IAP and IAG stepsizes under the
last-update schedule; rates are fitted at alpha_bar / divisor.

    python3 scripts/rate_parity.py --divisors 1 2 10 100
"""

import argparse

from iaprox import instances
from iaprox.analysis import default_burn_in, fit_rate
from iaprox.delays import DelaySchedule
from iaprox.primal import Stepsize, run, tune_constant_stepsize


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--m", type=int, default=10)
    ap.add_argument("--n", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--divisors", type=float, nargs="+", default=[1.0, 2.0, 10.0, 100.0])
    args = ap.parse_args(argv)

    p = instances.centered_quadratics(args.m, args.n, args.seed)
    sched = DelaySchedule("last_update")
    bar = min(tune_constant_stepsize(p, a, sched).alpha for a in ("iap", "iag"))
    burn = default_burn_in(sched.bound(p.m), p.m)
    print(f"alpha_bar = {bar:g}")
    print(f"{'alpha':>10} {'iap':>8} {'iag':>8} {'gd':>8} {'spread':>8}")
    for d in args.divisors:
        alpha = bar / d
        rho = {}
        for alg in ("iap", "iag", "gd"):
            tr = run(p, alg, sched, Stepsize("constant", alpha), max_iter=200_000, tol=1e-10)
            rho[alg] = fit_rate(tr.errors, burn_in=burn).rho_hat
        spread = (max(rho.values()) - min(rho.values())) / min(rho.values())
        print(f"{alpha:>10.4g} {rho['iap']:>8.4f} {rho['iag']:>8.4f} {rho['gd']:>8.4f} "
              f"{spread:>8.2%}")


if __name__ == "__main__":
    main()
