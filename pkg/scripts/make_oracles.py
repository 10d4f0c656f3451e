"""Regenerate the extended-precision reference table for ``logbo.stable_math``.

Usage: python scripts/make_oracles.py [out_path]

Writes ``function<TAB>input<TAB>reference`` rows. Inputs are doubles written
with ``repr``; references are evaluated with mpmath at >= 200 significant
digits and written with 30.
"""

import sys
from pathlib import Path

import mpmath as mp
import numpy as np

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "logbo" / "data" / "oracles.tsv"


def _dps_for(x: float, extra: int = 0) -> int:
    return 200 + extra * max(0, int(np.ceil(np.log10(abs(x) + 1.0))))


def log1mexp(x):
    return mp.log(-mp.expm1(x))


def erfcx(x):
    return mp.exp(x * x) * mp.erfc(x)


def log_ndtr(z):
    if z > 0:
        return mp.log1p(-mp.ncdf(-z))
    return mp.log(mp.ncdf(z))


def logerfc(x):
    return mp.log(mp.erfc(x))


def log_h(z):
    return mp.log(mp.npdf(z) + z * mp.ncdf(z))


def logsoftplus(x):
    return mp.log(mp.log1p(mp.exp(x)))


GRIDS = {
    "log1mexp": (log1mexp, -np.logspace(-12, 2.5, 200), 0),
    "erfcx": (
        erfcx,
        np.concatenate([-np.logspace(-4, np.log10(26.0), 80), [0.0], np.logspace(-4, 4, 120)]),
        0,
    ),
    "log_ndtr": (
        log_ndtr,
        np.concatenate([-np.logspace(-3, 5, 100), [0.0], np.logspace(-3, np.log10(37.0), 100)]),
        0,
    ),
    "logerfc": (
        logerfc,
        np.concatenate([-np.logspace(-3, 1.5, 100), np.logspace(-3, 4, 100)]),
        0,
    ),
    "log_h": (
        log_h,
        np.concatenate([-np.logspace(-3, 12, 140), [0.0], np.logspace(-3, 3, 60)]),
        3,
    ),
    "logsoftplus": (
        logsoftplus,
        np.concatenate([-np.logspace(-3, 3, 120), [0.0], np.logspace(-3, 3, 80)]),
        0,
    ),
}


def main(out: Path = DEFAULT_OUT) -> None:
    rows = []
    for name, (fn, grid, extra) in GRIDS.items():
        for x in grid:
            x = float(x)
            mp.mp.dps = _dps_for(x, extra)
            ref = fn(mp.mpf(x))
            rows.append(f"{name}\t{x!r}\t{mp.nstr(ref, 30)}")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(rows) + "\n")
    print(f"wrote {len(rows)} rows to {out}")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else DEFAULT_OUT)
