"""Per-iteration run records and their CSV form."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

PRIMAL_COLUMNS = ("k", "i_k", "alpha_k", "err", "obj", "staleness")
DUAL_COLUMNS = ("k", "i_k", "alpha_k", "residual", "lambda_err", "staleness")
NONQUADRATIC_COLUMNS = PRIMAL_COLUMNS + ("mu_min", "x_min")


@dataclass
class Trace:
    """
    Rows of a run, one per iterate including the initial point.

    The initial row has i_k = -1 and alpha_k = nan. ``iterates`` and
    ``stamps`` (the slot stamps each step used) are only filled when the
    run was asked to keep them.
    """

    columns: tuple
    rows: List[tuple] = field(default_factory=list)
    iterates: Optional[list] = None
    stamps: Optional[list] = None
    status: str = "running"
    meta: dict = field(default_factory=dict)

    def append(self, *values):
        self.rows.append(tuple(values))

    def __len__(self):
        return len(self.rows)

    @property
    def iterations(self) -> int:
        return len(self.rows) - 1

    def column(self, name) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([r[j] for r in self.rows], dtype=float)

    @property
    def errors(self) -> np.ndarray:
        name = "err" if "err" in self.columns else "lambda_err"
        return self.column(name)

    def last(self, name):
        return self.rows[-1][self.columns.index(name)]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        for row in self.rows:
            buf.write(",".join(_fmt(v) for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def read_csv(path) -> Trace:
    with open(path) as fh:
        lines = fh.read().strip().splitlines()
    cols = tuple(lines[0].split(","))
    tr = Trace(cols)
    for line in lines[1:]:
        tr.rows.append(tuple(float(v) for v in line.split(",")))
    return tr
