"""Checked-in extended-precision reference table for the stable special functions."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import stable_math as sm

FUNCTIONS = {
    "log1mexp": sm.log1mexp,
    "erfcx": sm.erfcx,
    "log_ndtr": sm.log_ndtr,
    "logerfc": sm.logerfc,
    "log_h": sm.log_h,
    "logsoftplus": sm.logsoftplus,
}

DEFAULT_TOL = 1e-12
LOG_H_MIDDLE_TOL = 1e-9


def default_fixture_path() -> Path:
    return Path(str(resources.files("logbo") / "data" / "oracles.tsv"))


@dataclass
class OracleRow:
    function: str
    x: float
    reference: float
    line: int


@dataclass
class OracleReport:
    max_rel_error: dict[str, float]
    offending: list[tuple[OracleRow, float, float, float]]  # row, value, error, tolerance
    n_rows: int

    @property
    def ok(self) -> bool:
        return not self.offending


def load_fixture(path: str | Path) -> list[OracleRow]:
    path = Path(path)
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, x, ref = line.split("\t")
            rows.append(OracleRow(name, float(x), float(ref), lineno))
    return rows


def tolerance_for(row: OracleRow) -> float:
    if row.function == "log_h" and -sm.CONSTANTS.inv_sqrt_eps < row.x <= -1:
        return LOG_H_MIDDLE_TOL
    return DEFAULT_TOL


def relative_error(value: float, reference: float) -> float:
    if reference == 0.0:
        return abs(value)
    if np.isinf(reference):
        return 0.0 if value == reference else np.inf
    return abs(value - reference) / abs(reference)


def verify(rows: list[OracleRow]) -> OracleReport:
    max_err: dict[str, float] = {}
    offending = []
    for name, fn in FUNCTIONS.items():
        subset = [r for r in rows if r.function == name]
        if not subset:
            continue
        values = np.atleast_1d(fn(np.array([r.x for r in subset])))
        worst = 0.0
        for row, val in zip(subset, values):
            err = relative_error(float(val), row.reference)
            worst = max(worst, err)
            tol = tolerance_for(row)
            if not err <= tol:
                offending.append((row, float(val), err, tol))
        max_err[name] = worst
    unknown = {r.function for r in rows} - set(FUNCTIONS)
    for name in sorted(unknown):
        raise ValueError(f"fixture references unknown function {name!r}")
    return OracleReport(max_err, offending, len(rows))
