"""
Index selection, delayed indexes and the delayed-gradient memory.

The engine simulates the asynchronous setting in-process. Component i
uses the gradient stored at stamp l_i, with max(0, k - b) <= l_i <= k.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import InstanceError

POLICIES = ("last_update", "fixed_delay", "uniform_random", "zero_delay")
SELECTIONS = ("cyclic", "random")
RECOMPUTE_EVERY = 1000


@dataclass(frozen=True)
class DelaySchedule:
    """
    How i_k is chosen and how stale the stored gradients may be.

    Parameters
    ----------
    policy : str
        ``last_update`` keeps each slot at the last iteration it was
        refreshed; ``fixed_delay`` uses l_i = max(0, k - b);
        ``uniform_random`` draws l_i from [max(0, k - b), k];
        ``zero_delay`` uses l_i = k.
    b : int, optional
        Delay bound. For ``last_update`` it defaults to m, the staleness
        of a cyclic slot just before it is refreshed.
    selection : str
        ``cyclic`` (i_k = k mod m) or ``random``.
    seed : int
        Seed for random selection and random delays.
    """

    policy: str = "last_update"
    b: Optional[int] = None
    selection: str = "cyclic"
    seed: int = 0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise InstanceError(f"unknown delay policy {self.policy!r}")
        if self.selection not in SELECTIONS:
            raise InstanceError(f"unknown selection {self.selection!r}")
        if self.b is not None and self.b < 0:
            raise InstanceError("delay bound b must be nonnegative")
        if self.policy in ("fixed_delay", "uniform_random") and self.b is None:
            raise InstanceError(f"policy {self.policy} needs a delay bound b")

    def bound(self, m: int) -> int:
        if self.policy == "zero_delay":
            return 0
        if self.b is None:
            return m
        return int(self.b)

    @classmethod
    def zero(cls, selection="cyclic", seed=0):
        return cls("zero_delay", 0, selection, seed)


def select(schedule: DelaySchedule, k: int, m: int, rng=None) -> int:
    """Component index for iteration k."""
    if m < 1:
        raise InstanceError("m must be at least 1")
    if schedule.selection == "cyclic":
        return k % m
    if rng is None:
        raise ValueError("random selection needs a generator")
    return int(rng.integers(m))


class GradientTable:
    """Stored gradients, their stamps, and their running sum."""

    def __init__(self, slots, stamps=None):
        self.slots = np.array(slots, dtype=float)
        if self.slots.ndim == 1:
            self.slots = self.slots[:, None]
        m = self.slots.shape[0]
        self.stamps = np.zeros(m, dtype=int) if stamps is None else np.array(stamps, dtype=int)
        self.aggregate = self.slots.sum(axis=0)
        self._count = 0

    @property
    def m(self) -> int:
        return self.slots.shape[0]

    def refresh(self, i: int, g, k: int):
        g = np.asarray(g, dtype=float).reshape(self.slots.shape[1])
        self.aggregate += g - self.slots[i]
        self.slots[i] = g
        self.stamps[i] = k
        self._count += 1
        if self._count % RECOMPUTE_EVERY == 0:
            self.aggregate = self.slots.sum(axis=0)
        return self

    def others(self, i: int) -> np.ndarray:
        """Sum of all slots except i."""
        return self.aggregate - self.slots[i]

    def staleness(self, k: int, exclude=None):
        s = k - self.stamps
        if exclude is not None:
            s = np.delete(s, exclude)
        return s, int(s.max()) if s.size else 0

    def drift(self) -> float:
        return float(np.max(np.abs(self.aggregate - self.slots.sum(axis=0))))


def refresh(table: GradientTable, i: int, g, k: int) -> GradientTable:
    return table.refresh(i, g, k)


def staleness_report(table: GradientTable, k: int):
    """Per-slot staleness k - stamps[i] and its maximum."""
    return table.staleness(k)


class DelayEngine:
    """
    Keeps a GradientTable consistent with a DelaySchedule.

    ``grad_fn(i, point)`` evaluates the stored quantity of component i at
    a past iterate. ``sync(k, skip)`` moves every slot other than `skip`
    to its delayed index for iteration k. Solvers that prescribe their own point
    for slot i_k pass it as `skip` and refresh it themselves.
    """

    def __init__(self, schedule: DelaySchedule, m: int, grad_fn: Callable, x0):
        self.schedule = schedule
        self.m = m
        self.b = schedule.bound(m)
        self.grad_fn = grad_fn
        self.rng = np.random.default_rng(schedule.seed)
        self.delay_rng = np.random.default_rng([schedule.seed, 1])
        self.history = {0: _copy(x0)}
        self.table = GradientTable([grad_fn(i, x0) for i in range(m)])
        self.max_seen = 0

    def select(self, k: int) -> int:
        return select(self.schedule, k, self.m, self.rng)

    def record(self, k: int, point):
        self.history[k] = _copy(point)
        cutoff = k - self.b - 1
        if cutoff > 0 and len(self.history) > self.b + 4:
            for key in [key for key in self.history if key < cutoff]:
                del self.history[key]

    def _target(self, k, i):
        pol = self.schedule.policy
        stamp = int(self.table.stamps[i])
        lo = max(0, k - self.b)
        if pol == "zero_delay":
            return k
        if pol == "fixed_delay":
            return lo
        if pol == "uniform_random":
            return max(stamp, int(self.delay_rng.integers(lo, k + 1)))
        # last_update: keep unless the bound would break
        return stamp if stamp >= lo else lo

    def sync(self, k: int, skip=None):
        """Point every slot except `skip` at its delayed index for iteration k."""
        for i in range(self.m):
            if i == skip:
                continue
            target = self._target(k, i)
            if target != self.table.stamps[i]:
                self.table.refresh(i, self.grad_fn(i, self.history[target]), target)

    def refresh(self, i: int, g, stamp: int):
        self.table.refresh(i, g, stamp)

    def staleness(self, k: int, used=None) -> int:
        """Max staleness over the slots in `used` (all slots by default)."""
        s = k - self.table.stamps
        if used is not None:
            s = s[used]
        val = int(s.max()) if np.size(s) else 0
        self.max_seen = max(self.max_seen, val)
        return val

    def others(self, i: int) -> np.ndarray:
        return self.table.others(i)

    @property
    def aggregate(self) -> np.ndarray:
        return self.table.aggregate


def _copy(x):
    if isinstance(x, (list, tuple)):
        return [np.array(v, dtype=float) for v in x]
    return np.array(x, dtype=float)
