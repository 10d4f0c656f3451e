"""Matérn-5/2 ARD Gaussian-process regression on the unit cube.

Each output is modeled by an independent single-output GP with a constant
mean. Posterior quantities come with hand-written reverse-mode gradients so
Monte-Carlo acquisitions can be differentiated through the joint sample
``mean + chol(cov) @ base``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .acq_opt import lbfgsb_local

SQRT5 = np.sqrt(5.0)
LENGTHSCALE_BOUNDS = (0.01, 100.0)
SIGNAL_BOUNDS = (1e-6, 1e2)
NOISE_FLOOR = 1e-6
NOISE_BOUNDS = (NOISE_FLOOR, 10.0)
MEAN_BOUNDS = (-10.0, 10.0)
JITTER_LADDER = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


class FitError(RuntimeError):
    """Covariance stayed indefinite after the full jitter ladder."""


@dataclass
class DataSet:
    """Inputs in the unit cube and per-column standardized outputs."""

    inputs: np.ndarray
    outputs: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def from_raw(cls, X, Y) -> "DataSet":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise ValueError("inputs and outputs disagree on n")
        if X.size and (X.min() < 0.0 or X.max() > 1.0):
            raise ValueError("inputs must lie in the unit cube")
        if Y.shape[0] == 0:
            mean = np.zeros(Y.shape[1])
            std = np.ones(Y.shape[1])
        else:
            mean = Y.mean(axis=0)
            std = Y.std(axis=0)
            std = np.where(std > 0, std, 1.0)
        return cls(X, (Y - mean) / std, mean, std)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def column(self, m: int) -> np.ndarray:
        return self.outputs[:, m]

    def standardize(self, y, m: int = 0):
        return (np.asarray(y, dtype=float) - self.y_mean[m]) / self.y_std[m]

    def destandardize(self, y, m: int = 0):
        return np.asarray(y, dtype=float) * self.y_std[m] + self.y_mean[m]


@dataclass
class GPHyperparams:
    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float
    mean_constant: float

    def __post_init__(self):
        self.lengthscales = np.asarray(self.lengthscales, dtype=float)

    def to_theta(self) -> np.ndarray:
        return np.concatenate([
            np.log(self.lengthscales),
            [np.log(self.signal_variance), np.log(self.noise_variance), self.mean_constant],
        ])

    @classmethod
    def from_theta(cls, theta) -> "GPHyperparams":
        theta = np.asarray(theta, dtype=float)
        return cls(np.exp(theta[:-3]), float(np.exp(theta[-3])), float(np.exp(theta[-2])), float(theta[-1]))

    def to_dict(self) -> dict:
        return {
            "lengthscales": [float(v) for v in self.lengthscales],
            "signal_variance": float(self.signal_variance),
            "noise_variance": float(self.noise_variance),
            "mean_constant": float(self.mean_constant),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GPHyperparams":
        return cls(np.asarray(d["lengthscales"], float), d["signal_variance"], d["noise_variance"], d["mean_constant"])


@dataclass
class PosteriorGaussian:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def mu(self) -> float:
        return float(self.mean[0])

    @property
    def sigma(self) -> float:
        return float(np.sqrt(max(self.covariance[0, 0], 0.0)))


@dataclass
class SampleMatrix:
    samples: np.ndarray  # N x q x M
    base: np.ndarray  # N x (q*M)


# --- kernel ------------------------------------------------------------------


def _scaled_dist(X1, X2, ls):
    A = np.asarray(X1, float) / ls
    B = np.asarray(X2, float) / ls
    sq = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2.0 * A @ B.T
    return np.sqrt(np.maximum(sq, 0.0))


def matern52(X1, X2, lengthscales, signal_variance) -> np.ndarray:
    """Kernel matrix between the rows of ``X1`` and ``X2``."""
    r = _scaled_dist(X1, X2, lengthscales)
    sr = SQRT5 * r
    return signal_variance * (1.0 + sr + sr * sr / 3.0) * np.exp(-sr)


def matern52_grad_x1(X1, X2, lengthscales, signal_variance) -> np.ndarray:
    """d k(X1_a, X2_b) / d X1_a, shape (n1, n2, d)."""
    X1 = np.asarray(X1, float)
    X2 = np.asarray(X2, float)
    r = _scaled_dist(X1, X2, lengthscales)
    sr = SQRT5 * r
    coef = signal_variance * (-5.0 / 3.0) * (1.0 + sr) * np.exp(-sr)
    diff = (X1[:, None, :] - X2[None, :, :]) / lengthscales**2
    return coef[:, :, None] * diff


def kernel_matern52_ard(x1, x2, hp: GPHyperparams) -> float:
    """Scalar Matérn-5/2 ARD covariance between two points."""
    return float(matern52(np.atleast_2d(x1), np.atleast_2d(x2), hp.lengthscales, hp.signal_variance)[0, 0])


def jittered_cholesky(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K``, escalating diagonal jitter 1e-8 -> 1e-4."""
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    last = None
    for jitter in (0.0,) + JITTER_LADDER:
        try:
            return linalg.cholesky(K + jitter * np.eye(n), lower=True), jitter
        except linalg.LinAlgError as err:
            last = err
    raise FitError(f"covariance not positive definite after jitter {JITTER_LADDER[-1]}") from last


# --- marginal likelihood and fitting ----------------------------------------


def log_marginal_likelihood(theta, X, y, return_grad: bool = False):
    """Log evidence of ``y`` under the GP with parameters ``theta``.

    ``theta = [log lengthscales, log signal_variance, log noise_variance, mean]``.
    """
    hp = GPHyperparams.from_theta(theta)
    n, d = X.shape
    r = _scaled_dist(X, X, hp.lengthscales)
    sr = SQRT5 * r
    e = np.exp(-sr)
    Kf = hp.signal_variance * (1.0 + sr + sr * sr / 3.0) * e
    K = Kf + hp.noise_variance * np.eye(n)
    L, _ = jittered_cholesky(K)
    resid = y - hp.mean_constant
    alpha = linalg.cho_solve((L, True), resid)
    lml = -0.5 * resid @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)
    if not return_grad:
        return float(lml)
    Kinv = linalg.cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    grad = np.empty(d + 3)
    base = hp.signal_variance * (5.0 / 3.0) * (1.0 + sr) * e
    for i in range(d):
        diff = (X[:, i, None] - X[None, :, i]) / hp.lengthscales[i]
        grad[i] = 0.5 * np.sum(W * base * diff * diff)
    grad[d] = 0.5 * np.sum(W * Kf)
    grad[d + 1] = 0.5 * hp.noise_variance * np.trace(W)
    grad[d + 2] = np.sum(alpha)
    return float(lml), grad


def theta_bounds(d: int) -> tuple[np.ndarray, np.ndarray]:
    lo = np.concatenate([np.full(d, np.log(LENGTHSCALE_BOUNDS[0])),
                         [np.log(SIGNAL_BOUNDS[0]), np.log(NOISE_BOUNDS[0]), MEAN_BOUNDS[0]]])
    hi = np.concatenate([np.full(d, np.log(LENGTHSCALE_BOUNDS[1])),
                         [np.log(SIGNAL_BOUNDS[1]), np.log(NOISE_BOUNDS[1]), MEAN_BOUNDS[1]]])
    return lo, hi


def _initial_thetas(d: int, y: np.ndarray, n_restarts: int, rng: np.random.Generator):
    lo, hi = theta_bounds(d)
    c0 = float(np.clip(np.mean(y), *MEAN_BOUNDS)) if y.size else 0.0
    # first start: moderate lengthscale, unit signal, small noise
    starts = [np.concatenate([np.full(d, np.log(0.5 * np.sqrt(d))), [0.0, np.log(1e-3), c0]])]
    for _ in range(n_restarts - 1):
        t = rng.uniform(lo, hi)
        t[d] = rng.uniform(np.log(0.1), np.log(10.0))
        t[d + 1] = rng.uniform(np.log(NOISE_FLOOR), np.log(0.1))
        t[d + 2] = c0
        starts.append(t)
    return [np.clip(s, lo, hi) for s in starts]


def fit(X, y, seed=0, n_restarts: int = 4, fixed_noise: Optional[float] = None,
        max_iters: int = 200) -> GPHyperparams:
    """Type-II maximum likelihood over the box-constrained hyperparameters.

    ``fixed_noise`` pins the noise variance (use ``NOISE_FLOOR`` for
    interpolation). Deterministic given ``seed``.

    :raises FitError: when no restart yields a finite likelihood.
    """
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, float).ravel()
    n, d = X.shape
    if n < 1:
        raise ValueError("fit needs at least one observation")
    rng = np.random.default_rng(seed)
    lo, hi = theta_bounds(d)
    if fixed_noise is not None:
        lo[d + 1] = hi[d + 1] = np.log(max(fixed_noise, NOISE_FLOOR))

    def objective(t):
        try:
            return log_marginal_likelihood(t, X, y, return_grad=True)
        except FitError:
            return -np.inf, np.zeros_like(t)

    best = None
    for t0 in _initial_thetas(d, y, n_restarts, rng):
        t0 = np.clip(t0, lo, hi)
        try:
            res = lbfgsb_local(objective, t0, lo, hi, max_iters=max_iters, grad_tol=1e-6)
        except ValueError:
            continue
        if best is None or res.value > best.value:
            best = res
    if best is None:
        raise FitError("no hyperparameter restart produced a finite likelihood")
    return GPHyperparams.from_theta(best.x)


# --- fitted model -------------------------------------------------------------


class GPModel:
    """Fitted single-output GP conditioned on standardized training data.

    Treated as immutable after construction.
    """

    def __init__(self, hp: GPHyperparams, X, y):
        self.hp = hp
        self.X = np.atleast_2d(np.asarray(X, float)).reshape(-1, len(hp.lengthscales))
        self.y = np.asarray(y, float).ravel()
        n = self.X.shape[0]
        K = matern52(self.X, self.X, hp.lengthscales, hp.signal_variance) + hp.noise_variance * np.eye(n)
        self.L, self.jitter = jittered_cholesky(K)
        if n:
            self.alpha = linalg.cho_solve((self.L, True), self.y - hp.mean_constant)
        else:
            self.alpha = np.zeros(0)

    @classmethod
    def fit(cls, X, y, seed=0, **kw) -> "GPModel":
        return cls(fit(X, y, seed=seed, **kw), X, y)

    @property
    def dim(self) -> int:
        return len(self.hp.lengthscales)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def _kxs(self, X):
        return matern52(X, self.X, self.hp.lengthscales, self.hp.signal_variance)

    def posterior(self, X) -> PosteriorGaussian:
        """Joint Gaussian over the rows of ``X`` (noise-free latent values)."""
        X = np.atleast_2d(np.asarray(X, float))
        hp = self.hp
        Kxx = matern52(X, X, hp.lengthscales, hp.signal_variance)
        if self.n == 0:
            return PosteriorGaussian(np.full(X.shape[0], hp.mean_constant), Kxx)
        Ks = self._kxs(X)
        mean = hp.mean_constant + Ks @ self.alpha
        V = linalg.solve_triangular(self.L, Ks.T, lower=True)
        cov = Kxx - V.T @ V
        cov = 0.5 * (cov + cov.T)
        return PosteriorGaussian(mean, cov)

    def marginals(self, X, return_grad: bool = False):
        """Pointwise mean and variance at the rows of ``X`` (vectorized).

        With ``return_grad`` also returns d mean/dx and d var/dx, each (m, d).
        The variance is clipped at zero; its gradient is that of the unclipped
        expression.
        """
        X = np.atleast_2d(np.asarray(X, float))
        hp = self.hp
        m = X.shape[0]
        if self.n == 0:
            mean = np.full(m, hp.mean_constant)
            var = np.full(m, hp.signal_variance)
            if return_grad:
                return mean, var, np.zeros_like(X), np.zeros_like(X)
            return mean, var
        Ks = self._kxs(X)
        mean = hp.mean_constant + Ks @ self.alpha
        A = linalg.cho_solve((self.L, True), Ks.T)  # n x m
        var = np.maximum(hp.signal_variance - np.sum(Ks * A.T, axis=1), 0.0)
        if not return_grad:
            return mean, var
        dK = matern52_grad_x1(X, self.X, hp.lengthscales, hp.signal_variance)  # m n d
        dmean = np.einsum("mnd,n->md", dK, self.alpha)
        dvar = -2.0 * np.einsum("mnd,nm->md", dK, A)
        return mean, var, dmean, dvar

    def posterior_backward(self, X, mean_bar, cov_bar) -> np.ndarray:
        """Pull back (d/d mean, d/d cov) at ``X`` to d/dX, shape (q, d)."""
        X = np.atleast_2d(np.asarray(X, float))
        hp = self.hp
        cov_bar = np.asarray(cov_bar, float)
        cb = cov_bar + cov_bar.T
        dKxx = matern52_grad_x1(X, X, hp.lengthscales, hp.signal_variance)
        Xbar = np.einsum("ab,abd->ad", cb, dKxx)
        if self.n:
            Ks = self._kxs(X)
            KinvKsT = linalg.cho_solve((self.L, True), Ks.T)  # n x q
            Ks_bar = np.outer(mean_bar, self.alpha) - cb @ KinvKsT.T
            dKs = matern52_grad_x1(X, self.X, hp.lengthscales, hp.signal_variance)
            Xbar += np.einsum("ab,abd->ad", Ks_bar, dKs)
        return Xbar

    def to_dict(self) -> dict:
        return {"hyperparameters": self.hp.to_dict(), "inputs": self.X.tolist(), "outputs": self.y.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GPModel":
        hp = GPHyperparams.from_dict(d["hyperparameters"])
        X = np.asarray(d["inputs"], float).reshape(-1, len(hp.lengthscales))
        return cls(hp, X, np.asarray(d["outputs"], float))


def posterior(hp: GPHyperparams, data: DataSet, X, m: int = 0) -> PosteriorGaussian:
    return GPModel(hp, data.inputs, data.column(m)).posterior(X)


def posterior_grad(model: GPModel, x, sigma_floor: float = 1e-12):
    """(d mu/dx, d sigma/dx) at a single point.

    sigma is taken as sqrt(var + floor^2), so the derivative stays finite
    where the posterior variance vanishes.
    """
    x = np.atleast_2d(np.asarray(x, float))
    _, var, dmean, dvar = model.marginals(x, return_grad=True)
    sigma = np.sqrt(var + sigma_floor**2)
    return dmean[0], dvar[0] / (2.0 * sigma[0])


# --- reparameterized sampling ------------------------------------------------


def sample(post: PosteriorGaussian, base) -> np.ndarray:
    """Draws ``mean + L @ base_i`` for every row of ``base``; shape (N, q)."""
    base = np.atleast_2d(np.asarray(base, float))
    q = post.mean.shape[0]
    if base.shape[1] != q:
        raise ValueError(f"base has {base.shape[1]} columns, posterior has {q} outputs")
    L, _ = jittered_cholesky(post.covariance)
    return post.mean[None, :] + base @ L.T


def cholesky_backward(L, L_bar) -> np.ndarray:
    """Reverse-mode sensitivity of the Cholesky factorization.

    Given ``L = chol(S)`` and dF/dL (lower part used), returns the symmetric
    dF/dS.
    """
    P = np.tril(L.T @ np.tril(L_bar))
    P[np.diag_indices_from(P)] *= 0.5
    tmp = linalg.solve_triangular(L, P, lower=True, trans="T")  # L^-T P
    S_bar = linalg.solve_triangular(L, tmp.T, lower=True, trans="T").T  # ... L^-1
    return 0.5 * (S_bar + S_bar.T)


def sample_backward(post: PosteriorGaussian, base, samples_bar):
    """Pull dF/dsamples back to (dF/dmean, dF/dcov)."""
    base = np.atleast_2d(np.asarray(base, float))
    samples_bar = np.asarray(samples_bar, float)
    L, _ = jittered_cholesky(post.covariance)
    mean_bar = samples_bar.sum(axis=0)
    L_bar = samples_bar.T @ base
    return mean_bar, cholesky_backward(L, L_bar)


@dataclass
class JointSampler:
    """Frozen-base joint sampler over candidate rows plus fixed extra rows.

    ``fixed`` rows (pending points or previously observed designs) come
    first, so their marginal draws do not depend on the candidates; gradients
    are returned only for the candidate rows.
    """

    model: GPModel
    base: np.ndarray
    fixed: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        self.fixed = np.asarray(self.fixed, float).reshape(-1, self.model.dim)

    @property
    def n_fixed(self) -> int:
        return self.fixed.shape[0]

    def _rows(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        return np.vstack([self.fixed, X]) if self.n_fixed else X

    def __call__(self, X):
        """Return (samples (N, p + q), backward) for candidate batch ``X``."""
        Z = self._rows(X)
        post = self.model.posterior(Z)
        base = self.base[:, : Z.shape[0]]
        S = sample(post, base)

        def backward(samples_bar):
            mean_bar, cov_bar = sample_backward(post, base, samples_bar)
            return self.model.posterior_backward(Z, mean_bar, cov_bar)[self.n_fixed:]

        return S, backward


def fit_models(data: DataSet, seed, **kw) -> list[GPModel]:
    """One independent GP per output column, each seeded deterministically."""
    seeds = np.random.SeedSequence(seed if isinstance(seed, (list, tuple)) else [int(seed)]).spawn(data.outputs.shape[1])
    return [
        GPModel.fit(data.inputs, data.column(m), seed=np.random.default_rng(s), **kw)
        for m, s in enumerate(seeds)
    ]


def models_to_json(models: list[GPModel], data: Optional[DataSet] = None) -> str:
    rec = {"models": [m.to_dict() for m in models]}
    if data is not None:
        rec["y_mean"] = data.y_mean.tolist()
        rec["y_std"] = data.y_std.tolist()
    return json.dumps(rec, indent=2)


def models_from_json(text: str) -> tuple[list[GPModel], dict]:
    rec = json.loads(text)
    return [GPModel.from_dict(d) for d in rec["models"]], rec
