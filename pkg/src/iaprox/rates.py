"""Log-linear rate estimation for error sequences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RateFit:
    """
    Least-squares fit of ln e_k = ln gamma + k ln rho over a window.

    Attributes
    ----------
    rho_hat, gamma_hat : float
        Fitted rate and constant, so e_k ~ gamma_hat * rho_hat**k.
    burn_in : int
        First index of the window.
    r2 : float
        Coefficient of determination of the log-linear fit.
    max_ratio : float
        Largest e_{k+1} / e_k inside the window.
    n_points : int
        Number of points used (window truncated at the first zero).
    """

    rho_hat: float
    gamma_hat: float
    burn_in: int
    r2: float
    max_ratio: float
    n_points: int


def fit_rate(errors, burn_in=0, floor=0.0) -> RateFit:
    """
    Fit a geometric rate to `errors[burn_in:]`.

    The window stops before the first entry that is not finite or not
    above `floor`, so sequences that reach zero are fitted on their prefix.
    """
    e = np.asarray(errors, dtype=float)
    window = e[burn_in:]
    bad = np.flatnonzero(~np.isfinite(window) | (window <= floor))
    if bad.size:
        window = window[: bad[0]]
    if window.size < 2:
        raise ValueError(f"need at least 2 usable errors after burn-in, got {window.size}")
    k = np.arange(burn_in, burn_in + window.size, dtype=float)
    y = np.log(window)
    if np.all(y == y[0]):
        slope, intercept, r2 = 0.0, float(y[0]), 1.0
    else:
        slope, intercept = np.polyfit(k, y, 1)
        resid = y - (slope * k + intercept)
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot
    ratios = window[1:] / window[:-1]
    return RateFit(float(np.exp(slope)), float(np.exp(intercept)), int(burn_in),
                   float(r2), float(np.max(ratios)), int(window.size))
