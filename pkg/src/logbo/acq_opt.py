"""Multi-start maximization of acquisition functions over the unit cube.

The local solver is a projected limited-memory BFGS with an Armijo
backtracking search along the projection path. It maximizes; internally it
works on the negated objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ObjectiveFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class LocalResult:
    x: np.ndarray
    value: float
    n_iters: int
    converged: bool
    initial_grad_norm: float


def _two_loop(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / np.dot(y, s)
        a = rho * np.dot(s, q)
        q -= a * y
        alphas.append((rho, a))
    if S:
        s, y = S[-1], Y[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return q


def lbfgsb_local(
    fun: ObjectiveFn,
    x0,
    lower=0.0,
    upper=1.0,
    max_iters: int = 200,
    grad_tol: float = 1e-8,
    history: int = 10,
    ftol: float = 2.2e-9,
    first_step: float = 0.1,
) -> LocalResult:
    """Maximize ``fun`` inside the box ``[lower, upper]`` from ``x0``.

    ``fun(x)`` returns ``(value, gradient)``. The iterate never leaves the box.
    Stops when the infinity norm of the projected gradient is at most
    ``grad_tol``, when the relative improvement falls below ``ftol``, or after
    ``max_iters`` iterations.

    :raises ValueError: if the objective is not finite at the start point.
    """
    x = np.clip(np.asarray(x0, dtype=float).copy(), lower, upper)
    lo = np.broadcast_to(np.asarray(lower, dtype=float), x.shape)
    hi = np.broadcast_to(np.asarray(upper, dtype=float), x.shape)

    def neg(z):
        v, g = fun(z)
        return -float(v), -np.asarray(g, dtype=float).reshape(z.shape)

    f, g = neg(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise ValueError("objective is not finite at the start point")

    def proj_grad(z, gz):
        return z - np.clip(z - gz, lo, hi)

    g0 = float(np.max(np.abs(proj_grad(x, g)))) if x.size else 0.0
    S: list[np.ndarray] = []
    Y: list[np.ndarray] = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        if np.max(np.abs(proj_grad(x, g))) <= grad_tol:
            converged = True
            it -= 1
            break
        active = ((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0))
        free = ~active
        d = -_two_loop(np.where(free, g, 0.0), S, Y)
        d[active] = 0.0
        if not S or np.dot(d, g) >= 0:
            S.clear()
            Y.clear()
            d = -np.where(free, g, 0.0)
            dmax = np.max(np.abs(d))
            if dmax > 0:
                d *= min(1.0, first_step / dmax)

        step = 1.0
        accepted = False
        for _ in range(40):
            x_new = np.clip(x + step * d, lo, hi)
            f_new, g_new = neg(x_new)
            ok = np.isfinite(f_new) and np.all(np.isfinite(g_new))
            if ok and f_new <= f + 1e-4 * np.dot(g, x_new - x):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if S:
                S.clear()
                Y.clear()
                continue
            break

        s = x_new - x
        y = g_new - g
        f_old = f
        x, f, g = x_new, f_new, g_new
        sy = np.dot(s, y)
        if sy > 1e-12 * np.dot(y, y) and sy > 0:
            S.append(s)
            Y.append(y)
            if len(S) > history:
                S.pop(0)
                Y.pop(0)
        if f_old - f <= ftol * max(abs(f_old), abs(f), 1.0):
            converged = np.max(np.abs(proj_grad(x, g))) <= max(grad_tol, 1e-5)
            break
    return LocalResult(x, -f, it, converged, g0)


# --- multi-start acquisition optimization ------------------------------------

INIT_STRATEGIES = ("uniform", "boltzmann")
MODES = ("joint", "sequential_greedy")
ZERO_GRAD_THRESHOLD = 1e-10


@dataclass
class OptimConfig:
    n_restarts: int = 16
    raw_candidates: int = 1024
    init_strategy: str = "uniform"
    max_iters: int = 200
    grad_tol: float = 1e-8
    mode: str = "joint"
    seed: int = 0

    def __post_init__(self):
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be at least 1")
        if self.raw_candidates < self.n_restarts:
            raise ValueError("raw_candidates must be at least n_restarts")
        if self.init_strategy not in INIT_STRATEGIES:
            raise ValueError(f"init_strategy must be one of {INIT_STRATEGIES}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class RestartTrace:
    start: np.ndarray
    end: np.ndarray
    value: float
    n_iters: int
    converged: bool
    initial_grad_norm: float


@dataclass
class OptimReport:
    best_x: np.ndarray
    best_value: float
    restarts: list = field(default_factory=list)
    n_zero_grad: int = 0
    init_fallback: bool = False
    n_failed: int = 0


def initialize(acq, q: int, dim: int, config: OptimConfig, rng) -> tuple[np.ndarray, bool]:
    """Start batches of shape (n_restarts, q, dim) and a uniform-fallback flag.

    Boltzmann mode scores a uniform pool, standardizes the finite scores and
    samples without replacement with probability softmax(score).
    """
    rng = np.random.default_rng(rng)
    if config.init_strategy == "uniform":
        return rng.uniform(size=(config.n_restarts, q, dim)), False
    pool = rng.uniform(size=(config.raw_candidates, q, dim))
    vals = np.asarray(acq.batch_values(pool), float)
    finite = np.isfinite(vals)
    if not finite.any():
        return rng.uniform(size=(config.n_restarts, q, dim)), True
    v = vals[finite]
    sd = v.std()
    z = (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)
    w = np.exp(z - z.max())
    p = np.zeros(len(vals))
    p[finite] = w / w.sum()
    k = min(config.n_restarts, int(finite.sum()))
    idx = rng.choice(len(vals), size=k, replace=False, p=p)
    starts = pool[idx]
    if k < config.n_restarts:
        starts = np.concatenate([starts, rng.uniform(size=(config.n_restarts - k, q, dim))])
    return starts, False


def _optimize_fixed(acq, q: int, dim: int, config: OptimConfig, rng) -> OptimReport:
    starts, fallback = initialize(acq, q, dim, config, rng)

    def fun(flat):
        r = acq(flat.reshape(q, dim))
        return r.value, np.asarray(r.grad, float).ravel()

    report = OptimReport(np.full((q, dim), np.nan), -np.inf, init_fallback=fallback)
    for s in starts:
        try:
            res = lbfgsb_local(fun, s.ravel(), 0.0, 1.0, max_iters=config.max_iters, grad_tol=config.grad_tol)
        except ValueError:
            report.n_failed += 1
            continue
        end = res.x.reshape(q, dim)
        report.restarts.append(RestartTrace(s, end, res.value, res.n_iters, res.converged, res.initial_grad_norm))
        if res.initial_grad_norm < ZERO_GRAD_THRESHOLD:
            report.n_zero_grad += 1
        if res.value > report.best_value:  # strict: lowest index wins ties
            report.best_value = res.value
            report.best_x = end
    if not report.restarts:
        raise RuntimeError("every optimizer restart failed")
    return report


def optimize_acq(make_acq: Callable, dim: int, q: int, config: OptimConfig) -> OptimReport:
    """Maximize an acquisition over q candidates in the unit cube.

    ``make_acq(q, pending)`` builds the acquisition for a batch of ``q``
    candidates given an optional (p, dim) array of already selected points.
    Joint mode optimizes all q*dim coordinates together. Sequential greedy
    mode picks one point at a time, passing earlier picks as ``pending``; the
    reported value is that of the last step.
    """
    ss = np.random.SeedSequence([int(config.seed)])
    if config.mode == "joint" or q == 1:
        return _optimize_fixed(make_acq(q, None), q, dim, config, np.random.default_rng(ss))
    chosen = np.zeros((0, dim))
    merged = None
    for step, child in enumerate(ss.spawn(q)):
        acq = make_acq(1, chosen if step else None)
        rep = _optimize_fixed(acq, 1, dim, config, np.random.default_rng(child))
        chosen = np.vstack([chosen, rep.best_x])
        if merged is None:
            merged = rep
        else:
            merged.restarts += rep.restarts
            merged.n_zero_grad += rep.n_zero_grad
            merged.n_failed += rep.n_failed
            merged.init_fallback |= rep.init_fallback
            merged.best_value = rep.best_value
    merged.best_x = chosen
    return merged
