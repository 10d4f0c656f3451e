"""Two-objective hypervolume tools and the smoothed log-space EHVI.

Everything here maximizes both objectives. The region above the reference
point that no frontier point dominates is split into vertical slabs; the
hypervolume improvement of a batch is summed over slabs by
inclusion-exclusion over candidate subsets.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from . import stable_math as sm
from .acq_analytic import AcqResult
from .acq_mc import Temperatures, default_num_samples
from .surrogate import JointSampler

LOG_FLOOR = -745.0
MAX_SUBSET_Q = 10


@dataclass
class ParetoFrontier:
    """Mutually non-dominated points sorted by the first objective, descending."""

    points: np.ndarray  # k x 2
    ref_point: np.ndarray

    def __len__(self):
        return self.points.shape[0]


@dataclass
class BoxDecomposition:
    lower: np.ndarray  # K x 2
    upper: np.ndarray  # K x 2

    @property
    def volumes(self) -> np.ndarray:
        return np.prod(np.maximum(self.upper - self.lower, 0.0), axis=1)

    def __len__(self):
        return self.lower.shape[0]


def pareto_filter(Y, ref_point=None) -> ParetoFrontier:
    """Maximal non-dominated subset of the rows of ``Y`` (sort-based, O(n log n)).

    With ``ref_point`` given, rows not strictly above it are dropped first.
    Duplicate rows are kept once.
    """
    Y = np.asarray(Y, float).reshape(-1, 2)
    ref = None if ref_point is None else np.asarray(ref_point, float)
    if ref is not None:
        Y = Y[np.all(Y > ref, axis=1)]
    if Y.shape[0] == 0:
        return ParetoFrontier(np.zeros((0, 2)), ref if ref is not None else np.zeros(2))
    order = np.lexsort((-Y[:, 1], -Y[:, 0]))  # f1 desc, then f2 desc
    keep = []
    best_f2 = -np.inf
    for i in order:
        if Y[i, 1] > best_f2:
            keep.append(i)
            best_f2 = Y[i, 1]
    pts = Y[keep]
    if ref is None:
        ref = pts.min(axis=0)
    return ParetoFrontier(pts, ref)


def hypervolume(P: ParetoFrontier) -> float:
    """Area dominated by the frontier and above the reference point."""
    pts = P.points
    if len(pts) == 0:
        return 0.0
    r = P.ref_point
    pts = pts[np.all(pts > r, axis=1)]
    total = 0.0
    prev_f2 = r[1]
    for f1, f2 in pts:  # f1 descending, f2 ascending
        if f2 > prev_f2:
            total += (f1 - r[0]) * (f2 - prev_f2)
            prev_f2 = f2
    return float(total)


def box_decompose(P: ParetoFrontier, upper) -> BoxDecomposition:
    """Staircase of |P|+1 slabs covering the non-dominated region below ``upper``."""
    r = np.asarray(P.ref_point, float)
    U = np.asarray(upper, float)
    pts = P.points
    if len(pts) and np.any(pts > U):
        raise ValueError("upper bound must dominate every frontier point")
    if len(pts) == 0:
        return BoxDecomposition(r[None, :].copy(), U[None, :].copy())
    lows = [(pts[0, 0], r[1])]
    ups = [(U[0], U[1])]
    for i in range(len(pts) - 1):
        lows.append((pts[i + 1, 0], pts[i, 1]))
        ups.append((pts[i, 0], U[1]))
    lows.append((r[0], pts[-1, 1]))
    ups.append((pts[-1, 0], U[1]))
    lo, up = np.array(lows), np.array(ups)
    keep = np.all(up > lo, axis=1)
    return BoxDecomposition(lo[keep], up[keep])


def objective_upper_bound(Y, pad: float = 0.1) -> np.ndarray:
    """Componentwise max of observed objectives plus ``pad`` times their range."""
    Y = np.asarray(Y, float).reshape(-1, 2)
    span = Y.max(axis=0) - Y.min(axis=0)
    span = np.where(span > 0, span, 1.0)
    return Y.max(axis=0) + pad * span


def _subsets(q: int):
    if q > MAX_SUBSET_Q:
        raise ValueError(f"inclusion-exclusion over q={q} candidates refused (limit {MAX_SUBSET_Q})")
    subs = []
    for j in range(1, q + 1):
        for c in combinations(range(q), j):
            m = np.zeros(q, bool)
            m[list(c)] = True
            subs.append(m)
    masks = np.array(subs)
    signs = np.where(masks.sum(axis=1) % 2 == 1, 1.0, -1.0)
    return masks, signs


def hvi_inclusion_exclusion(samples, decomposition: BoxDecomposition) -> np.ndarray:
    """Exact hypervolume improvement of each joint draw, shape (N,).

    ``samples`` is N x q x 2. Coordinates above the decomposition's upper
    bound are clipped to it.
    """
    S = np.asarray(samples, float)
    N, q, _ = S.shape
    masks, signs = _subsets(q)
    lo, up = decomposition.lower, decomposition.upper
    # (N, n_sub, q, 2) -> min over members of each subset
    Ys = np.where(masks[None, :, :, None], S[:, None, :, :], np.inf)
    zmin = Ys.min(axis=2)  # N, n_sub, 2
    z = np.minimum(zmin[:, None, :, :], up[None, :, None, :])  # N, K, n_sub, 2
    ext = np.maximum(z - lo[None, :, None, :], 0.0)
    terms = np.prod(ext, axis=-1)  # N, K, n_sub
    return np.einsum("nks,s->n", terms, signs)


def qehvi_hard(samples, decomposition: BoxDecomposition):
    """Mean hard HVI over draws and its subgradient with respect to the draws."""
    S = np.asarray(samples, float)
    N, q, _ = S.shape
    masks, signs = _subsets(q)
    lo, up = decomposition.lower, decomposition.upper
    Ys = np.where(masks[None, :, :, None], S[:, None, :, :], np.inf)
    amin = Ys.argmin(axis=2)  # N, n_sub, 2
    zmin = np.take_along_axis(Ys, amin[:, :, None, :], axis=2)[:, :, 0, :]
    z = np.minimum(zmin[:, None], up[None, :, None, :])
    from_y = zmin[:, None] < up[None, :, None, :]
    ext = np.maximum(z - lo[None, :, None, :], 0.0)
    terms = np.prod(ext, axis=-1)
    val = float(np.mean(np.einsum("nks,s->n", terms, signs)))
    g = np.zeros_like(S)
    for m in range(2):
        other = ext[..., 1 - m]
        d = np.where(from_y[..., m] & (ext[..., m] > 0), other, 0.0) * signs  # N, K, n_sub
        dsub = d.sum(axis=1)  # N, n_sub
        np.add.at(g[:, :, m], (np.arange(N)[:, None], amin[:, :, m]), dsub)
    return val, g / N


@dataclass
class LogEHVIInfo:
    n_clamped: int = 0
    n_clipped: int = 0


def qlogehvi(samples, decomposition: BoxDecomposition, temps: Temperatures = Temperatures(),
             expected_log: bool = False, info: Optional[LogEHVIInfo] = None):
    """Smoothed log EHVI of the draws and its gradient with respect to them.

    Min is replaced by the fat soft-min, ReLU by fatplus, products by sums of
    logs, and the signed subset sum by a difference of two log-sum-exps. Draws
    whose smoothed sum is not positive are clamped to ``LOG_FLOOR`` with zero
    gradient and counted in ``info``. ``expected_log`` averages per-draw
    log-HVI instead of taking the log of the mean.
    """
    S = np.asarray(samples, float)
    N, q, _ = S.shape
    masks, signs = _subsets(q)
    lo, up = decomposition.lower, decomposition.upper
    K, ns = lo.shape[0], masks.shape[0]
    # members along axis 3: q candidate slots then the box upper vertex
    V = np.empty((N, K, ns, q + 1, 2))
    V[:, :, :, :q, :] = S[:, None, None, :, :]
    V[:, :, :, q, :] = up[:, None, :]
    mask = np.ones((1, 1, ns, q + 1, 1), bool)
    mask[0, 0, :, :q, 0] = masks
    z, dz = sm.fatmin(V, temps.tau_max, axis=3, return_grad=True, mask=mask)  # z: N,K,ns,2
    diff = z - lo[None, :, None, :]
    lt = sm.log_fatplus(diff, temps.tau_0)
    dlt = sm.log_fatplus_grad(diff, temps.tau_0)
    T = lt.sum(axis=-1)  # N, K, ns
    pos = signs > 0
    Tp = T[:, :, pos].reshape(N, -1)
    ap, gp = sm.logsumexp(Tp, axis=1, return_grad=True)
    if (~pos).any():
        Tn = T[:, :, ~pos].reshape(N, -1)
        an, gn = sm.logsumexp(Tn, axis=1, return_grad=True)
    else:
        an = np.full(N, -np.inf)
        gn = None
    ok = ap > an
    logh = np.full(N, LOG_FLOOR)
    da = np.zeros(N)
    db = np.zeros(N)
    if ok.any():
        logh[ok] = sm.logdiffexp(ap[ok], an[ok])
        da[ok], db[ok] = sm.logdiffexp_grad(ap[ok], an[ok])
    if info is not None:
        info.n_clamped += int((~ok).sum())
        info.n_clipped += int(np.sum(S > up.max(axis=0)))
    if expected_log:
        val = float(np.mean(logh))
        w = np.full(N, 1.0 / N)
    else:
        v, w = sm.logsumexp(logh, axis=0, return_grad=True)
        val = float(v - np.log(N))
    dT = np.zeros((N, K, ns))
    dT[:, :, pos] = (w * da)[:, None, None] * gp.reshape(N, K, -1)
    if gn is not None:
        dT[:, :, ~pos] = (w * db)[:, None, None] * gn.reshape(N, K, -1)
    dz_total = dT[..., None] * dlt  # N, K, ns, 2
    dV = dz_total[:, :, :, None, :] * dz
    g = dV[:, :, :, :q, :].sum(axis=(1, 2))
    return val, g


class MOHVAcquisition:
    """Hypervolume-improvement acquisition bound to two objective models.

    ``kind`` is ``qlogehvi`` or ``qehvi`` (hard, subgradients only). The
    decomposition and reference point live on the models' output scale.
    """

    is_mc = True

    def __init__(self, kind: str, models, decomposition: BoxDecomposition, q: int = 1,
                 temps: Temperatures = Temperatures(), num_samples: Optional[int] = None, seed=0,
                 pending=None, expected_log: bool = False):
        if kind not in MOHV_NAMES:
            raise ValueError(f"unknown hypervolume acquisition {kind!r}")
        if len(models) != 2:
            raise ValueError("hypervolume acquisitions need exactly two objective models")
        self.kind = kind
        self.models = list(models)
        self.decomposition = decomposition
        self.q = q
        self.temps = temps
        self.expected_log = expected_log
        self.dim = models[0].dim
        self.pending = (np.zeros((0, self.dim)) if pending is None
                        else np.atleast_2d(np.asarray(pending, float)))
        N = num_samples or default_num_samples(q)
        width = self.pending.shape[0] + q
        _subsets(width)
        rng = np.random.default_rng(seed)
        self.samplers = [JointSampler(m, rng.standard_normal((N, width)), self.pending) for m in self.models]
        self.info = LogEHVIInfo()

    def __call__(self, X) -> AcqResult:
        X = np.atleast_2d(np.asarray(X, float))
        draws, backs = zip(*(s(X) for s in self.samplers))
        S = np.stack(draws, axis=-1)  # N, p+q, 2
        if self.kind == "qehvi":
            v, g = qehvi_hard(S, self.decomposition)
        else:
            v, g = qlogehvi(S, self.decomposition, self.temps, self.expected_log, self.info)
        grad = backs[0](g[..., 0]) + backs[1](g[..., 1])
        return AcqResult(v, grad)

    def batch_values(self, Xs):
        return np.array([self(X).value for X in np.asarray(Xs, float)])


MOHV_NAMES = ("qehvi", "qlogehvi")
