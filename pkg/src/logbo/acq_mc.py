"""Sample-average Monte-Carlo acquisitions computed in log-space.

The value functions take a matrix of joint posterior draws (N draws by q
candidates) and return the value together with its gradient with respect
to every draw. :class:`MCAcquisition` composes them with a frozen-base
joint sampler to get gradients with respect to the candidate batch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import special

from . import stable_math as sm
from .acq_analytic import AcqResult
from .surrogate import JointSampler

DEFAULT_SAMPLES = 128
LARGE_BATCH_SAMPLES = 512
LARGE_BATCH_Q = 16


@dataclass(frozen=True)
class Temperatures:
    tau_0: float = 1e-6
    tau_max: float = 1e-2
    tau_cons: float = 1e-2

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.tau_max > 1:
            raise ValueError("tau_max must lie in (0, 1]")


def default_num_samples(q: int) -> int:
    return LARGE_BATCH_SAMPLES if q >= LARGE_BATCH_Q else DEFAULT_SAMPLES


# --- building blocks ----------------------------------------------------------


def _log_utility(diff, tau, fat):
    if fat:
        return sm.log_fatplus(diff, tau), sm.log_fatplus_grad(diff, tau)
    return sm.logsoftplus(diff, tau), sm.logsoftplus_grad(diff, tau)


def _log_indicator(slack, tau, fat):
    """log of a smooth P(c <= 0) surrogate evaluated at -slack."""
    if fat:
        return sm.log_fatsigmoid(-slack, tau), -sm.log_fatsigmoid_grad(-slack, tau)
    # log sigmoid(-s/tau) = -softplus(s/tau)
    u = slack / tau
    return -np.logaddexp(0.0, u), -special.expit(u) / tau


def _reduce_q(lu, tau_max, fat):
    """Smooth max over the candidate axis of log utilities, with gradient."""
    if fat:
        return sm.fatmax(lu, tau_max, axis=1, return_grad=True)
    r, g = sm.logsumexp(lu / tau_max, axis=1, return_grad=True)
    return tau_max * r, g


def _reduce_draws(r):
    N = r.shape[0]
    v, g = sm.logsumexp(r, axis=0, return_grad=True)
    return float(v - np.log(N)), g


def qei_mc(samples, y_star) -> float:
    """(1/N) sum_i max_j [xi_ij - y*]_+ with hard operations."""
    S = np.asarray(samples, float)
    return float(np.mean(np.max(np.maximum(S - np.asarray(y_star, float).reshape(-1, 1), 0.0), axis=1)))


def qei_mc_grad(samples, y_star):
    """Value and subgradient of :func:`qei_mc` with respect to the draws."""
    S = np.asarray(samples, float)
    N = S.shape[0]
    imp = S - np.asarray(y_star, float).reshape(-1, 1)
    j = np.argmax(imp, axis=1)
    g = np.zeros_like(S)
    best = imp[np.arange(N), j]
    g[np.arange(N), j] = (best > 0) / N
    return float(np.mean(np.maximum(best, 0.0))), g


def qlogei_from_logutil(lu, temps: Temperatures, fat: bool = True):
    """log mean_i smoothmax_j exp(lu_ij); gradient with respect to ``lu``."""
    r, dr = _reduce_q(lu, temps.tau_max, fat)
    v, dv = _reduce_draws(r)
    return v, dv[:, None] * dr


def qlogei(samples, y_star, temps: Temperatures = Temperatures(), fat: bool = True):
    """Smoothed log qEI of the draws and its gradient with respect to them.

    ``y_star`` is a scalar or a per-draw vector.
    """
    S = np.atleast_2d(np.asarray(samples, float))
    diff = S - np.asarray(y_star, float).reshape(-1, 1)
    lu, dlu = _log_utility(diff, temps.tau_0, fat)
    v, g = qlogei_from_logutil(lu, temps, fat)
    return v, g * dlu


def qlogcei(samples, constraint_samples: Sequence, y_star, temps: Temperatures = Temperatures(),
            fat: bool = True, thresholds=None):
    """Constrained variant: adds sum_k log indicator(c_k <= t_k) per draw and candidate.

    Returns (value, grad wrt objective draws, [grad wrt each constraint's draws]).
    """
    S = np.atleast_2d(np.asarray(samples, float))
    diff = S - np.asarray(y_star, float).reshape(-1, 1)
    lu, dlu = _log_utility(diff, temps.tau_0, fat)
    t = np.zeros(len(constraint_samples)) if thresholds is None else np.asarray(thresholds, float)
    dcons = []
    for k, C in enumerate(constraint_samples):
        li, dli = _log_indicator(np.asarray(C, float) - t[k], temps.tau_cons, fat)
        lu = lu + li
        dcons.append(dli)
    v, g = qlogei_from_logutil(lu, temps, fat)
    return v, g * dlu, [g * d for d in dcons]


def qlognei(samples_joint, n_old: int, temps: Temperatures = Temperatures(), fat: bool = True):
    """Noisy variant on joint draws over ``[old designs, pending, candidates]``.

    The per-draw incumbent is the hard max over the first ``n_old`` columns;
    no gradient is returned for those columns.
    """
    S = np.atleast_2d(np.asarray(samples_joint, float))
    if n_old < 1:
        raise ValueError("qlognei needs at least one previously observed design")
    y_star = S[:, :n_old].max(axis=1)
    v, g = qlogei(S[:, n_old:], y_star, temps, fat)
    full = np.zeros_like(S)
    full[:, n_old:] = g
    return v, full


# --- model-bound acquisition ---------------------------------------------------


class MCAcquisition:
    """Monte-Carlo acquisition over a q-batch with frozen base samples.

    ``kind`` is one of ``qei``, ``qlogei``, ``qlogcei``, ``qlognei``.
    ``pending`` rows (already selected, not yet observed) join every joint
    draw with gradients suppressed. For ``qlognei`` the previously observed
    designs are taken from the objective model's training inputs.
    """

    is_mc = True

    def __init__(self, kind: str, model, y_star: Optional[float] = None, q: int = 1,
                 temps: Temperatures = Temperatures(), fat: bool = True, num_samples: Optional[int] = None,
                 seed=0, pending=None, constraint_models=(), thresholds=None, base=None):
        if kind not in MC_NAMES:
            raise ValueError(f"unknown MC acquisition {kind!r}")
        if kind in ("qei", "qlogei") and y_star is None:
            raise ValueError(f"{kind} needs an incumbent value")
        self.kind = kind
        self.model = model
        self.y_star = y_star
        self.q = q
        self.temps = temps
        self.fat = fat
        self.dim = model.dim
        self.pending = np.zeros((0, model.dim)) if pending is None else np.atleast_2d(np.asarray(pending, float))
        self.constraint_models = list(constraint_models)
        self.thresholds = (np.zeros(len(self.constraint_models)) if thresholds is None
                           else np.asarray(thresholds, float))
        self.n_old = model.n if kind == "qlognei" else 0
        n_fixed = self.n_old + self.pending.shape[0]
        N = num_samples or default_num_samples(q)
        width = n_fixed + q
        if base is None:
            rng = np.random.default_rng(seed)
            bases = [rng.standard_normal((N, width)) for _ in range(1 + len(self.constraint_models))]
        else:
            bases = list(base)
        fixed_obj = np.vstack([model.X, self.pending]) if self.n_old else self.pending
        self.sampler = JointSampler(model, bases[0], fixed_obj)
        self.constraint_samplers = [
            JointSampler(cm, b, self.pending) for cm, b in zip(self.constraint_models, bases[1:])
        ]

    def __call__(self, X) -> AcqResult:
        X = np.atleast_2d(np.asarray(X, float))
        S, back = self.sampler(X)
        if self.kind == "qlognei":
            v, g = qlognei(S, self.n_old, self.temps, self.fat)
            return AcqResult(v, back(g))
        if self.kind == "qei":
            v, g = qei_mc_grad(S, self.y_star)
            return AcqResult(v, back(g))
        if self.kind == "qlogei" or not self.constraint_samplers:
            if self.y_star is None:
                # no feasible incumbent and no constraints: nothing to improve on
                raise ValueError("qlogcei without constraints needs an incumbent")
            v, g = qlogei(S, self.y_star, self.temps, self.fat)
            return AcqResult(v, back(g))
        cs, cbacks = zip(*(cs(X) for cs in self.constraint_samplers))
        if self.y_star is None:
            # feasibility-only fallback: log mean_i smoothmax_j sum_k log indicator
            lu = np.zeros_like(S)
            dcons = []
            for k, C in enumerate(cs):
                li, dli = _log_indicator(C - self.thresholds[k], self.temps.tau_cons, self.fat)
                lu = lu + li
                dcons.append(dli)
            v, gl = qlogei_from_logutil(lu, self.temps, self.fat)
            grad = sum(cb(gl * d) for cb, d in zip(cbacks, dcons))
            return AcqResult(v, grad)
        v, g, gc = qlogcei(S, cs, self.y_star, self.temps, self.fat, self.thresholds)
        grad = back(g)
        for cb, d in zip(cbacks, gc):
            grad = grad + cb(d)
        return AcqResult(v, grad)

    def batch_values(self, Xs):
        """Values for a pool of candidate batches, shape (m, q, d)."""
        return np.array([self(X).value for X in np.asarray(Xs, float)])


MC_NAMES = ("qei", "qlogei", "qlogcei", "qlognei")
