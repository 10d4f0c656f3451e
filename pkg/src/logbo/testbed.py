"""Synthetic benchmark problems with known structure.

Problems are stated in their native box and native sense. ``maximize``
tells the harness whether to negate; :meth:`Problem.objectives` and
:attr:`Problem.optimum` are always in the maximization sense so the rest of
the package never deals with signs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass
class Problem:
    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    fn: Callable[[np.ndarray], np.ndarray]
    maximize: bool = False
    num_objectives: int = 1
    constraint_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    num_constraints: int = 0
    optimum: Optional[float] = None  # maximization sense
    optimum_x: Optional[np.ndarray] = None  # native coordinates
    provenance: str = ""
    ref_point: Optional[np.ndarray] = None  # maximization sense
    max_hv: Optional[float] = None
    value_range: Optional[float] = None

    def __post_init__(self):
        self.lower = np.broadcast_to(np.asarray(self.lower, float), (self.dim,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, float), (self.dim,)).copy()

    def to_native(self, u):
        return self.lower + np.asarray(u, float) * (self.upper - self.lower)

    def to_unit(self, x):
        return (np.asarray(x, float) - self.lower) / (self.upper - self.lower)

    def evaluate(self, x) -> np.ndarray:
        """Raw objective vector at native point ``x``, in the native sense."""
        return np.atleast_1d(np.asarray(self.fn(np.asarray(x, float)), float))

    def objectives(self, u) -> np.ndarray:
        """Objective vector at unit-cube point ``u``, in the maximization sense."""
        y = self.evaluate(self.to_native(u))
        return y if self.maximize else -y

    def constraints(self, u) -> np.ndarray:
        """Constraint values at unit-cube point ``u``; feasible when all <= 0."""
        if self.constraint_fn is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self.constraint_fn(self.to_native(u)), float))

    def is_feasible(self, u) -> bool:
        return bool(np.all(self.constraints(u) <= 0.0))


def bilog(y):
    """sign(y) * log(1 + |y|)."""
    y = np.asarray(y, float)
    return np.sign(y) * np.log1p(np.abs(y))


# --- single objective -----------------------------------------------------------


def sum_of_squares(d: int) -> Problem:
    return Problem(f"sum_of_squares{d}", d, 0.0, 1.0, lambda x: np.sum((x - 0.5) ** 2, axis=-1),
                   optimum=0.0, optimum_x=np.full(d, 0.5), provenance="closed form",
                   value_range=0.25 * d)


def _ackley(x, a=20.0, b=0.2, c=2 * np.pi):
    d = x.shape[-1]
    s1 = np.sqrt(np.sum(x * x, axis=-1) / d)
    s2 = np.sum(np.cos(c * x), axis=-1) / d
    return -a * np.exp(-b * s1) - np.exp(s2) + a + np.e


def ackley(d: int) -> Problem:
    return Problem(f"ackley{d}", d, -32.768, 32.768, _ackley, optimum=0.0, optimum_x=np.zeros(d),
                   provenance="closed form", value_range=20.0 + np.e)


_MICHALEWICZ_OPT = {2: -1.8013034100985537, 5: -4.687658, 10: -9.66015}


def michalewicz(d: int, m: int = 10) -> Problem:
    i = np.arange(1, d + 1)

    def f(x):
        return -np.sum(np.sin(x) * np.sin(i * x * x / np.pi) ** (2 * m), axis=-1)

    opt = _MICHALEWICZ_OPT.get(d)
    return Problem(f"michalewicz{d}", d, 0.0, np.pi, f, optimum=None if opt is None else -opt,
                   provenance="published value" if opt is not None else "",
                   value_range=float(d))


def _levy(x):
    w = 1.0 + (x - 1.0) / 4.0
    head = np.sin(np.pi * w[..., 0]) ** 2
    mid = np.sum((w[..., :-1] - 1) ** 2 * (1 + 10 * np.sin(np.pi * w[..., :-1] + 1) ** 2), axis=-1)
    tail = (w[..., -1] - 1) ** 2 * (1 + np.sin(2 * np.pi * w[..., -1]) ** 2)
    return head + mid + tail


def levy(d: int) -> Problem:
    return Problem(f"levy{d}", d, -10.0, 10.0, _levy, optimum=0.0, optimum_x=np.ones(d),
                   provenance="closed form", value_range=None)


_H6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_H6_A = np.array([
    [10, 3, 17, 3.5, 1.7, 8],
    [0.05, 10, 17, 0.1, 8, 14],
    [3, 3.5, 1.7, 10, 17, 8],
    [17, 8, 0.05, 10, 0.1, 14],
])
_H6_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
])
HARTMANN6_X = np.array([0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573])
HARTMANN6_OPT = -3.32237  # published, 5 digits
HARTMANN6_POLISHED = -3.322368011415514  # local polish from HARTMANN6_X


def _hartmann6(x):
    inner = np.sum(_H6_A * (np.asarray(x)[..., None, :] - _H6_P) ** 2, axis=-1)
    return -np.sum(_H6_ALPHA * np.exp(-inner), axis=-1)


def hartmann6() -> Problem:
    return Problem("hartmann6", 6, 0.0, 1.0, _hartmann6, optimum=-HARTMANN6_POLISHED, optimum_x=HARTMANN6_X,
                   provenance="published location, confirmed by local polish", value_range=3.32237)


# --- constrained -----------------------------------------------------------------

BALL_CENTER, BALL_RADIUS = 0.3, 0.5
BALL_OPT = -(BALL_RADIUS * np.sqrt(2.0) - BALL_RADIUS) ** 2  # target 0.8 at distance 0.5*sqrt(2)
BALL_OPT_X = np.full(2, BALL_CENTER + BALL_RADIUS / np.sqrt(2.0))


def _ball(x):
    return np.sum((x - BALL_CENTER) ** 2, axis=-1) - BALL_RADIUS**2


def constrained_toy_suite() -> list[Problem]:
    """Maximization problems with closed-form constrained optima."""
    ball = Problem("ball2", 2, 0.0, 1.0, lambda x: -np.sum((x - 0.8) ** 2, axis=-1), maximize=True,
                   constraint_fn=lambda x: np.array([_ball(x)]), num_constraints=1,
                   optimum=BALL_OPT, optimum_x=BALL_OPT_X, provenance="geometric closed form",
                   value_range=1.28)
    half = Problem("halfspace3", 3, 0.0, 1.0, lambda x: -np.sum((x - 0.7) ** 2, axis=-1), maximize=True,
                   constraint_fn=lambda x: np.array([np.sum(x) - 1.5]), num_constraints=1,
                   optimum=-0.12, optimum_x=np.full(3, 0.5), provenance="projection closed form",
                   value_range=1.47)
    both = Problem("ball_halfspace2", 2, 0.0, 1.0, lambda x: -np.sum((x - 0.8) ** 2, axis=-1), maximize=True,
                   constraint_fn=lambda x: np.array([_ball(x), x[0] + x[1] - 1.6]), num_constraints=2,
                   optimum=BALL_OPT, optimum_x=BALL_OPT_X, provenance="geometric closed form, half-space inactive",
                   value_range=1.28)
    free = Problem("ball2_feasible", 2, 0.0, 1.0, lambda x: -np.sum((x - 0.4) ** 2, axis=-1), maximize=True,
                   constraint_fn=lambda x: np.array([_ball(x)]), num_constraints=1,
                   optimum=0.0, optimum_x=np.full(2, 0.4), provenance="unconstrained optimum is feasible",
                   value_range=0.72)
    return [ball, half, both, free]


# --- bi-objective (both minimized natively) ----------------------------------------


def _branin_currin(x):
    x0, x1 = x[..., 0], x[..., 1]
    u, v = 15 * x0 - 5, 15 * x1
    f1 = (v - 5.1 / (4 * np.pi**2) * u**2 + 5 / np.pi * u - 6) ** 2 + 10 * (1 - 1 / (8 * np.pi)) * np.cos(u) + 10
    with np.errstate(divide="ignore"):
        fac = 1 - np.exp(-1 / (2 * x1))
    f2 = fac * (2300 * x0**3 + 1900 * x0**2 + 2092 * x0 + 60) / (100 * x0**3 + 500 * x0**2 + 4 * x0 + 20)
    return np.stack([f1, f2], axis=-1)


def _dtlz2(x, M=2):
    g = np.sum((x[..., M - 1:] - 0.5) ** 2, axis=-1)
    t = x[..., 0] * np.pi / 2
    return np.stack([(1 + g) * np.cos(t), (1 + g) * np.sin(t)], axis=-1)


def _zdt1(x):
    d = x.shape[-1]
    f1 = x[..., 0]
    g = 1 + 9 / (d - 1) * np.sum(x[..., 1:], axis=-1)
    return np.stack([f1, g * (1 - np.sqrt(f1 / g))], axis=-1)


def zdt1_max_hv(ref=(11.0, 11.0), n: int = 200001) -> float:
    """Hypervolume of the analytic front f2 = 1 - sqrt(f1) by trapezoidal discretization."""
    f1 = np.linspace(0.0, 1.0, n)
    f2 = 1 - np.sqrt(f1)
    return float(np.trapezoid(ref[1] - f2, f1) + (ref[0] - 1.0) * ref[1])


def moo_suite() -> list[Problem]:
    return [
        Problem("branincurrin", 2, 0.0, 1.0, _branin_currin, num_objectives=2,
                ref_point=-np.array([18.0, 6.0]), max_hv=59.36011874867746,
                provenance="published maximum hypervolume", value_range=None),
        Problem("dtlz2", 6, 0.0, 1.0, _dtlz2, num_objectives=2, ref_point=-np.array([1.1, 1.1]),
                max_hv=1.21 - np.pi / 4, provenance="closed form: quarter disc", value_range=None),
        Problem("zdt1", 6, 0.0, 1.0, _zdt1, num_objectives=2, ref_point=-np.array([11.0, 11.0]),
                max_hv=11.0 * 11.0 - 1.0 / 3.0, provenance="closed form, checked by discretization",
                value_range=None),
    ]


# --- registry ------------------------------------------------------------------

FAMILIES = {"sum_of_squares": sum_of_squares, "ackley": ackley, "michalewicz": michalewicz, "levy": levy}


def _fixed():
    probs = {"hartmann6": hartmann6()}
    for p in constrained_toy_suite() + moo_suite():
        probs[p.name] = p
    return probs


def problem_names() -> list[str]:
    return sorted(_fixed()) + [f"{k}<d>" for k in FAMILIES]


def get_problem(name: str) -> Problem:
    """Look up by name; dimensioned families take a suffix, e.g. ``ackley16``."""
    fixed = _fixed()
    if name in fixed:
        return fixed[name]
    m = re.fullmatch(r"([a-z_]+?)(\d+)", name)
    if m and m.group(1) in FAMILIES and int(m.group(2)) >= 1:
        return FAMILIES[m.group(1)](int(m.group(2)))
    raise KeyError(f"unknown problem {name!r}; known: {', '.join(problem_names())}")
