"""
Experiment configuration.

A config is a JSON object::

    {
      "name": "iap_b5",
      "problem": {"builtin": "centered_quadratics", "seed": 0},
      "algorithm": "iap",
      "schedule": {"policy": "uniform_random", "b": 5, "selection": "cyclic", "seed": 0},
      "stepsize": {"rule": "constant", "alpha": 0.1},
      "stop": {"max_iter": 20000, "tol": 1e-8},
      "x0": null,
      "out_dir": "runs"
    }

``problem`` is either an inline problem object (see ``problems.problem_from_dict``)
or ``{"file": "path.json"}`` resolved relative to the config file.
Stepsize rules: ``constant`` and ``diminishing`` take ``alpha``; ``tuned``
runs the halving search and multiplies the result by ``scale``;
``heuristic`` (entropy methods only) uses alpha / max(xbar, delta) per coordinate.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .delays import POLICIES, SELECTIONS, DelaySchedule
from .dual import DUAL_STEPS
from .nonquadratic import ENTROPY_STEPS, MULTIPLIER_STEPS
from .primal import STEPS

PRIMAL = tuple(STEPS)
DUAL = tuple(DUAL_STEPS)
ENTROPY = tuple(ENTROPY_STEPS)
MULTIPLIER = tuple(MULTIPLIER_STEPS)
ALGORITHMS = PRIMAL + DUAL + ENTROPY + MULTIPLIER
RULES = ("constant", "diminishing", "tuned", "heuristic")


class ConfigError(ValueError):
    """Invalid config; ``field`` names the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


def family(algorithm):
    if algorithm in PRIMAL:
        return "primal"
    if algorithm in DUAL:
        return "dual"
    if algorithm in ENTROPY:
        return "entropy"
    return "multiplier"


@dataclass(frozen=True)
class ScheduleConfig:
    policy: str = "last_update"
    b: Optional[int] = None
    selection: str = "cyclic"
    seed: int = 0

    def build(self) -> DelaySchedule:
        return DelaySchedule(self.policy, self.b, self.selection, self.seed)


@dataclass(frozen=True)
class StepsizeConfig:
    rule: str = "constant"
    alpha: Optional[object] = None
    scale: float = 1.0
    delta: float = 1e-3


@dataclass(frozen=True)
class StopConfig:
    max_iter: int = 1000
    tol: float = 1e-8


@dataclass(frozen=True)
class ExperimentConfig:
    problem: dict
    algorithm: str
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    stepsize: StepsizeConfig = field(default_factory=StepsizeConfig)
    stop: StopConfig = field(default_factory=StopConfig)
    name: str = "run"
    x0: Optional[list] = None
    lam0: Optional[list] = None
    mu0: Optional[list] = None
    out_dir: Optional[str] = None

    def with_overrides(self, seed=None, max_iter=None, tol=None) -> "ExperimentConfig":
        sched, stop = self.schedule, self.stop
        if seed is not None:
            sched = ScheduleConfig(sched.policy, sched.b, sched.selection, int(seed))
        if max_iter is not None or tol is not None:
            stop = StopConfig(stop.max_iter if max_iter is None else int(max_iter),
                              stop.tol if tol is None else float(tol))
        return ExperimentConfig(self.problem, self.algorithm, sched, self.stepsize, stop,
                                self.name, self.x0, self.lam0, self.mu0, self.out_dir)


_TOP = {"name", "problem", "algorithm", "schedule", "stepsize", "stop", "x0", "lam0", "mu0",
        "out_dir"}


def _section(raw, key, allowed):
    sec = raw.get(key, {})
    if sec is None:
        sec = {}
    if not isinstance(sec, dict):
        raise ConfigError(key, "must be an object")
    extra = set(sec) - set(allowed)
    if extra:
        raise ConfigError(f"{key}.{sorted(extra)[0]}", "unknown field")
    return sec


def _positive(name, v, allow_vector=False):
    if allow_vector and isinstance(v, list):
        arr = np.asarray(v, dtype=float)
        ok = arr.size > 0 and np.all(np.isfinite(arr)) and np.all(arr > 0)
    else:
        ok = isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v) and v > 0
    if not ok:
        raise ConfigError(name, f"must be positive and finite, got {v!r}")
    return v


def parse_config(raw: dict, base_dir: str = ".") -> ExperimentConfig:
    """Validate a decoded JSON config."""
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be an object")
    extra = set(raw) - _TOP
    if extra:
        raise ConfigError(sorted(extra)[0], "unknown field")
    if "problem" not in raw:
        raise ConfigError("problem", "missing")
    problem = raw["problem"]
    if not isinstance(problem, dict):
        raise ConfigError("problem", "must be an object")
    if "file" in problem:
        path = os.path.join(base_dir, problem["file"])
        try:
            with open(path) as fh:
                problem = json.load(fh)
        except OSError as exc:
            raise ConfigError("problem.file", str(exc)) from None
        except json.JSONDecodeError as exc:
            raise ConfigError("problem.file",
                              f"{path} line {exc.lineno} column {exc.colno}: {exc.msg}") from None

    algorithm = raw.get("algorithm")
    if algorithm not in ALGORITHMS:
        raise ConfigError("algorithm", f"unknown algorithm {algorithm!r}; "
                                       f"expected one of {', '.join(ALGORITHMS)}")

    s = _section(raw, "schedule", ("policy", "b", "selection", "seed"))
    policy = s.get("policy", "last_update")
    if policy not in POLICIES:
        raise ConfigError("schedule.policy", f"unknown policy {policy!r}")
    selection = s.get("selection", "cyclic")
    if selection not in SELECTIONS:
        raise ConfigError("schedule.selection", f"unknown selection {selection!r}")
    b = s.get("b")
    if b is not None and (not isinstance(b, int) or isinstance(b, bool) or b < 0):
        raise ConfigError("schedule.b", f"must be a nonnegative integer, got {b!r}")
    if policy in ("fixed_delay", "uniform_random") and b is None:
        raise ConfigError("schedule.b", f"required for policy {policy}")
    seed = s.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("schedule.seed", "must be an integer")
    schedule = ScheduleConfig(policy, b, selection, seed)

    st = _section(raw, "stepsize", ("rule", "alpha", "scale", "delta"))
    rule = st.get("rule", "constant")
    if rule not in RULES:
        raise ConfigError("stepsize.rule", f"unknown rule {rule!r}")
    fam = family(algorithm)
    alpha = st.get("alpha")
    if rule in ("constant", "diminishing", "heuristic"):
        if alpha is None:
            raise ConfigError("stepsize.alpha", f"required for rule {rule}")
        _positive("stepsize.alpha", alpha, allow_vector=fam in ("entropy", "multiplier"))
    elif alpha is not None:
        _positive("stepsize.alpha", alpha)
    if rule == "heuristic" and fam != "entropy":
        raise ConfigError("stepsize.rule", "heuristic stepsizes apply to entropy methods only")
    if rule == "tuned" and fam not in ("primal", "dual"):
        raise ConfigError("stepsize.rule", "tuning is available for primal and dual methods")
    if rule == "diminishing" and fam not in ("primal", "dual"):
        raise ConfigError("stepsize.rule", "diminishing stepsizes apply to primal and dual methods")
    scale = _positive("stepsize.scale", st.get("scale", 1.0))
    delta = _positive("stepsize.delta", st.get("delta", 1e-3))
    stepsize = StepsizeConfig(rule, alpha, float(scale), float(delta))

    sp = _section(raw, "stop", ("max_iter", "tol"))
    max_iter = sp.get("max_iter", 1000)
    if not isinstance(max_iter, int) or isinstance(max_iter, bool) or max_iter < 1:
        raise ConfigError("stop.max_iter", "must be a positive integer")
    tol = sp.get("tol", 1e-8)
    if not isinstance(tol, (int, float)) or isinstance(tol, bool) or tol < 0:
        raise ConfigError("stop.tol", "must be a nonnegative number")
    stop = StopConfig(max_iter, float(tol))

    name = raw.get("name", "run")
    if not isinstance(name, str) or not name or os.sep in name:
        raise ConfigError("name", "must be a nonempty string without path separators")
    for key in ("x0", "lam0", "mu0"):
        v = raw.get(key)
        if v is not None and not isinstance(v, list):
            raise ConfigError(key, "must be a list of numbers")
    out_dir = raw.get("out_dir")
    if out_dir is not None:
        out_dir = os.path.join(base_dir, out_dir)
    return ExperimentConfig(problem, algorithm, schedule, stepsize, stop, name,
                            raw.get("x0"), raw.get("lam0"), raw.get("mu0"), out_dir)


def load_config(path) -> ExperimentConfig:
    """Read and validate a config file. JSON errors report line and column."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("config", str(exc)) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(raw, os.path.dirname(os.path.abspath(path)))
