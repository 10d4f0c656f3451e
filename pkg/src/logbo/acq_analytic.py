"""Closed-form single-point acquisitions and their log-space forms.

The scalar cores act on arrays of posterior means ``mu`` and standard
deviations ``sigma`` and return partial derivatives with respect to both.
:class:`AnalyticAcquisition` chains them through a fitted model to get
gradients with respect to the candidate location.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .stable_math import log_h, log_h_grad, log_ndtr, log_ndtr_grad

__all__ = [
    "AcqResult", "IncumbentState", "ei", "logei", "pi", "logpi", "cei", "logcei",
    "log_h", "AnalyticAcquisition", "SIGMA_FLOOR",
]

SIGMA_FLOOR = 1e-12
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class AcqResult:
    """Acquisition value with its gradient with respect to the candidates."""

    value: float
    grad: np.ndarray


@dataclass
class IncumbentState:
    """Best feasible observation on the modeled (standardized) scale.

    ``y_star`` is None when no observation is feasible.
    """

    y_star: Optional[float]

    @property
    def feasible(self) -> bool:
        return self.y_star is not None

    @classmethod
    def from_observations(cls, y, constraints=None, thresholds=None) -> "IncumbentState":
        """Max of ``y`` over rows whose constraint values are all <= threshold."""
        y = np.asarray(y, float).ravel()
        mask = np.ones(y.shape, bool)
        if constraints is not None and np.size(constraints):
            C = np.asarray(constraints, float).reshape(y.shape[0], -1)
            t = np.zeros(C.shape[1]) if thresholds is None else np.asarray(thresholds, float)
            mask = np.all(C <= t, axis=1)
        if not mask.any():
            return cls(None)
        return cls(float(np.max(y[mask])))


def floor_sigma(var):
    """sqrt(var + floor^2); keeps z finite for perfectly correlated points."""
    return np.sqrt(np.maximum(var, 0.0) + SIGMA_FLOOR**2)


# --- scalar cores: each returns (value, d/dmu, d/dsigma) ---------------------


def ei(mu, sigma, y_star):
    """Naive sigma * h(z); underflows to exactly 0 far below the incumbent."""
    mu, sigma = np.asarray(mu, float), np.asarray(sigma, float)
    z = (mu - y_star) / sigma
    pdf = np.exp(-0.5 * z * z) * _INV_SQRT_2PI
    cdf = special.ndtr(z)
    return sigma * (pdf + z * cdf), cdf, pdf


def logei(mu, sigma, y_star):
    """log_h(z) + log(sigma)."""
    mu, sigma = np.asarray(mu, float), np.asarray(sigma, float)
    z = (mu - y_star) / sigma
    dz = log_h_grad(z)
    return log_h(z) + np.log(sigma), dz / sigma, (1.0 - dz * z) / sigma


def pi(mu, sigma, y_star):
    mu, sigma = np.asarray(mu, float), np.asarray(sigma, float)
    z = (mu - y_star) / sigma
    pdf = np.exp(-0.5 * z * z) * _INV_SQRT_2PI
    return special.ndtr(z), pdf / sigma, -pdf * z / sigma


def logpi(mu, sigma, y_star):
    """log Phi(z) through the two-branch log-erfc."""
    mu, sigma = np.asarray(mu, float), np.asarray(sigma, float)
    z = (mu - y_star) / sigma
    dz = log_ndtr_grad(z)
    return log_ndtr(z), dz / sigma, -dz * z / sigma


def cei(mu, sigma, y_star, mu_c: Sequence, sigma_c: Sequence, thresholds=None):
    """Naive EI times the product of feasibility probabilities.

    Returns (value, d/dmu, d/dsigma, [d/dmu_c], [d/dsigma_c]).
    """
    mu_c = [np.asarray(m, float) for m in mu_c]
    sigma_c = [np.asarray(s, float) for s in sigma_c]
    t = np.zeros(len(mu_c)) if thresholds is None else np.asarray(thresholds, float)
    probs = [special.ndtr((t[k] - mu_c[k]) / sigma_c[k]) for k in range(len(mu_c))]
    pfeas = np.prod(probs, axis=0) if probs else np.ones_like(np.asarray(mu, float))
    if y_star is None:
        base, dmu, dsig = np.ones_like(pfeas), np.zeros_like(pfeas), np.zeros_like(pfeas)
    else:
        base, dmu, dsig = ei(mu, sigma, y_star)
    dmu_c, dsig_c = [], []
    for k in range(len(mu_c)):
        z = (t[k] - mu_c[k]) / sigma_c[k]
        pdf = np.exp(-0.5 * z * z) * _INV_SQRT_2PI
        others = np.prod([p for j, p in enumerate(probs) if j != k], axis=0) if len(probs) > 1 else 1.0
        dmu_c.append(-base * others * pdf / sigma_c[k])
        dsig_c.append(-base * others * pdf * z / sigma_c[k])
    return base * pfeas, dmu * pfeas, dsig * pfeas, dmu_c, dsig_c


def logcei(mu, sigma, y_star, mu_c: Sequence, sigma_c: Sequence, thresholds=None):
    """logei + sum_k log P(c_k <= t_k); without a feasible incumbent only the sum.

    Returns (value, d/dmu, d/dsigma, [d/dmu_c], [d/dsigma_c]).
    """
    t = np.zeros(len(mu_c)) if thresholds is None else np.asarray(thresholds, float)
    if y_star is None:
        shape = np.shape(mu_c[0]) if len(mu_c) else np.shape(mu)
        val, dmu, dsig = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    else:
        val, dmu, dsig = logei(mu, sigma, y_star)
    dmu_c, dsig_c = [], []
    for k in range(len(mu_c)):
        mc, sc = np.asarray(mu_c[k], float), np.asarray(sigma_c[k], float)
        z = (t[k] - mc) / sc
        dz = log_ndtr_grad(z)
        val = val + log_ndtr(z)
        dmu_c.append(-dz / sc)
        dsig_c.append(-dz * z / sc)
    return val, dmu, dsig, dmu_c, dsig_c


_CORES = {"ei": ei, "logei": logei, "pi": pi, "logpi": logpi}
CONSTRAINED = {"cei": cei, "logcei": logcei}
ANALYTIC_NAMES = tuple(_CORES) + tuple(CONSTRAINED)


class AnalyticAcquisition:
    """Single-point closed-form acquisition bound to fitted models.

    ``constraint_models`` are independent GPs for constraint values that are
    feasible when below ``thresholds`` (on each model's own scale). Only
    ``cei`` and ``logcei`` use them.
    """

    q = 1
    is_mc = False

    def __init__(self, name: str, model, incumbent: IncumbentState, constraint_models=(), thresholds=None):
        if name not in _CORES and name not in CONSTRAINED:
            raise ValueError(f"unknown analytic acquisition {name!r}")
        if name in _CORES and not incumbent.feasible:
            raise ValueError(f"{name} needs a feasible incumbent")
        self.name = name
        self.model = model
        self.incumbent = incumbent
        self.constraint_models = list(constraint_models)
        self.thresholds = (np.zeros(len(self.constraint_models)) if thresholds is None
                           else np.asarray(thresholds, float))
        self.dim = model.dim

    def evaluate(self, X, return_grad: bool = True):
        """Vectorized over the rows of ``X``: values (m,) and grads (m, d)."""
        X = np.atleast_2d(np.asarray(X, float))
        mu, var, dmu_x, dvar_x = self.model.marginals(X, return_grad=True)
        sigma = floor_sigma(var)
        dsig_x = dvar_x / (2.0 * sigma[:, None])
        y_star = self.incumbent.y_star
        if self.name in _CORES:
            val, dmu, dsig = _CORES[self.name](mu, sigma, y_star)
            grad = dmu[:, None] * dmu_x + dsig[:, None] * dsig_x
            return val, grad
        mus, sigs, dmus, dsigs = [], [], [], []
        for cm in self.constraint_models:
            m_c, v_c, dm_c, dv_c = cm.marginals(X, return_grad=True)
            s_c = floor_sigma(v_c)
            mus.append(m_c)
            sigs.append(s_c)
            dmus.append(dm_c)
            dsigs.append(dv_c / (2.0 * s_c[:, None]))
        val, dmu, dsig, dmu_c, dsig_c = CONSTRAINED[self.name](mu, sigma, y_star, mus, sigs, self.thresholds)
        grad = dmu[:, None] * dmu_x + dsig[:, None] * dsig_x
        for k in range(len(mus)):
            grad = grad + dmu_c[k][:, None] * dmus[k] + dsig_c[k][:, None] * dsigs[k]
        return val, grad

    def values(self, X):
        return self.evaluate(X)[0]

    def batch_values(self, Xs):
        """Values for a pool of shape (m, 1, d)."""
        Xs = np.asarray(Xs, float)
        return self.evaluate(Xs.reshape(Xs.shape[0], -1))[0]

    def __call__(self, X) -> AcqResult:
        X = np.atleast_2d(np.asarray(X, float))
        if X.shape[0] != 1:
            raise ValueError("analytic acquisitions take a single candidate")
        val, grad = self.evaluate(X)
        return AcqResult(float(val[0]), grad)
