"""Numerically stable special functions and smooth fat-tailed relaxations.

Every elementwise function accepts scalars or arrays and returns an ndarray
(0-d for scalar input). Derivatives are exposed as companion ``*_grad``
functions; reductions (``logsumexp``, ``fatmax``) return ``(value, grad)``
when called with ``return_grad=True``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "CONSTANTS",
    "DEFAULT_ALPHA",
    "ALPHA_MAX",
    "StableConstants",
    "log1mexp",
    "log1mexp_grad",
    "erfcx",
    "erfcx_grad",
    "log_ndtr",
    "log_ndtr_grad",
    "logerfc",
    "logerfc_grad",
    "logsumexp",
    "softplus",
    "logsoftplus",
    "logsoftplus_grad",
    "fatplus",
    "log_fatplus",
    "log_fatplus_grad",
    "fatmax",
    "fatmin",
    "fatsigmoid",
    "log_fatsigmoid",
    "log_fatsigmoid_grad",
    "logdiffexp",
    "logdiffexp_grad",
    "log_h",
    "log_h_grad",
]

_SQRT2 = math.sqrt(2.0)
_SQRT_PI = math.sqrt(math.pi)
_LOG2 = math.log(2.0)
_GAMMA = math.sqrt(1.0 / 3.0)


@dataclass(frozen=True)
class StableConstants:
    c1: float
    c2: float
    eps: float
    softplus_branch_l: float
    inv_sqrt_eps: float

    @classmethod
    def for_dtype(cls, dtype=np.float64) -> "StableConstants":
        eps = float(np.finfo(dtype).eps)
        return cls(
            c1=math.log(2 * math.pi) / 2,
            c2=math.log(math.pi / 2) / 2,
            eps=eps,
            # log(log1p(e^x)) = x - e^x / 2 + ...; the dropped term is below eps here.
            softplus_branch_l=math.log(2 * eps),
            inv_sqrt_eps=1.0 / math.sqrt(eps),
        )


CONSTANTS = StableConstants.for_dtype(np.float64)

# Strict-convexity bound of the fat softplus: e^{-g} / (1 + e^{-g})^2 / 2, g = sqrt(1/3).
ALPHA_MAX = math.exp(-_GAMMA) / (1 + math.exp(-_GAMMA)) ** 2 / 2
DEFAULT_ALPHA = 0.1


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_tau(tau) -> None:
    if np.any(np.asarray(tau) <= 0):
        raise ValueError(f"temperature must be positive, got {tau}")


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha < ALPHA_MAX:
        raise ValueError(f"alpha must lie in [0, {ALPHA_MAX:.6f}), got {alpha}")


def _log1p_sq(w: np.ndarray) -> np.ndarray:
    """log(1 + w^2) without overflowing for huge |w|."""
    w = np.abs(w)
    big = w > 1e100
    with np.errstate(divide="ignore"):
        out = np.where(big, 2 * np.log(np.where(big, w, 1.0)), np.log1p(np.where(big, 0.0, w) ** 2))
    return out


# --------------------------------------------------------------------------
# log1mexp


def _log1mexp(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(
            x > -_LOG2,
            np.log(-np.expm1(np.minimum(x, 0.0))),
            np.log1p(-np.exp(np.minimum(x, 0.0))),
        )


def log1mexp(x):
    """log(1 - exp(x)) for x < 0, switching branches at x = -log 2."""
    x = _arr(x)
    if np.any(~(x < 0)):
        raise ValueError("log1mexp requires x < 0")
    return _log1mexp(x)


def log1mexp_grad(x):
    x = _arr(x)
    if np.any(~(x < 0)):
        raise ValueError("log1mexp requires x < 0")
    return -1.0 / np.expm1(-x)


# --------------------------------------------------------------------------
# erfcx


def _two_square(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dekker product: x*x = hi + lo exactly."""
    hi = x * x
    c = 134217729.0 * x  # 2^27 + 1
    xh = c - (c - x)
    xl = x - xh
    lo = ((xh * xh - hi) + 2 * xh * xl) + xl * xl
    return hi, lo


_CF_SWITCH = 5.0
_CF_TERMS = 60


def erfcx(x):
    """Scaled complementary error function exp(x^2) * erfc(x).

    Direct product with a double-double square for x <= 5, Laplace continued
    fraction (backward recurrence) above.
    """
    x = _arr(x)
    out = np.empty_like(x)
    lo_mask = x <= _CF_SWITCH
    if np.any(lo_mask):
        xl = x[lo_mask]
        hi, lo = _two_square(xl)
        with np.errstate(over="ignore", invalid="ignore"):
            val = np.exp(hi) * special.erfc(xl)
            val = val + val * lo
        out[lo_mask] = np.where(np.isnan(val), np.inf, val)
    hi_mask = ~lo_mask
    if np.any(hi_mask):
        xh = x[hi_mask]
        f = xh.copy()
        for k in range(_CF_TERMS, 0, -1):
            f = xh + (0.5 * k) / f
        out[hi_mask] = 1.0 / (_SQRT_PI * f)
    return out


def erfcx_grad(x):
    x = _arr(x)
    return 2 * x * erfcx(x) - 2 / _SQRT_PI


# --------------------------------------------------------------------------
# log erfc and log Phi


def logerfc(x):
    """log(erfc(x)); the erfcx branch keeps x > 0 finite far into the tail."""
    x = _arr(x)
    small = x <= 0.5
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = np.log1p(-special.erf(np.where(small, x, 0.0)))
        xs = np.where(small, 1.0, x)
        tail = np.log(erfcx(xs)) - xs * xs
    return np.where(small, direct, tail)


def logerfc_grad(x):
    x = _arr(x)
    small = x <= 0.5
    xs = np.where(small, 1.0, x)
    xd = np.where(small, x, 0.0)
    direct = -2 / _SQRT_PI * np.exp(-xd * xd - np.log(special.erfc(xd)))
    tail = -2 / (_SQRT_PI * erfcx(xs))
    return np.where(small, direct, tail)


def log_ndtr(z):
    """log of the standard normal CDF, accurate in both tails."""
    z = _arr(z)
    pos = z > 0
    zp = np.where(pos, z, 0.0)
    hi, lo = _two_square(zp)
    # Phi(-z) = exp(-z^2/2) erfcx(z/sqrt2) / 2, with z^2 split exactly
    tail = 0.5 * np.exp(-0.5 * hi) * (1 - 0.5 * lo) * erfcx(zp / _SQRT2)
    upper = np.log1p(-tail)
    lower = logerfc(-np.where(pos, 0.0, z) / _SQRT2) - _LOG2
    return np.where(pos, upper, lower)


def log_ndtr_grad(z):
    """phi(z) / Phi(z), the inverse Mills ratio."""
    z = _arr(z)
    neg = z < -1
    zn = np.where(neg, z, -1.0)
    tail = math.sqrt(2 / math.pi) / erfcx(-zn / _SQRT2)
    zp = np.where(neg, 0.0, z)
    body = np.exp(-0.5 * zp * zp - CONSTANTS.c1) / special.ndtr(zp)
    return np.where(neg, tail, body)


# --------------------------------------------------------------------------
# logsumexp


def logsumexp(v, axis=-1, return_grad: bool = False):
    """log(sum(exp(v))) along ``axis`` via max-subtraction."""
    v = _arr(v)
    if v.size == 0 or v.shape[axis] == 0:
        raise ValueError("logsumexp of an empty input")
    m = np.max(v, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(v - m_safe)
    s = np.sum(e, axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        val = np.log(s) + m_safe
    val = np.where(np.isposinf(m), np.inf, val)
    out = np.squeeze(val, axis=axis)
    if not return_grad:
        return out
    with np.errstate(invalid="ignore"):
        grad = np.where(s > 0, e / s, 0.0)
    return out, grad


# --------------------------------------------------------------------------
# softplus family


def softplus(x, tau=1.0):
    _check_tau(tau)
    x = _arr(x)
    return tau * np.logaddexp(0.0, x / tau)


def _logsoftplus_unit(u: np.ndarray) -> np.ndarray:
    lower = u <= CONSTANTS.softplus_branch_l
    with np.errstate(divide="ignore"):
        upper = np.log(np.logaddexp(0.0, np.where(lower, 0.0, u)))
    return np.where(lower, u, upper)


def _logsoftplus_unit_grad(u: np.ndarray) -> np.ndarray:
    lower = u <= CONSTANTS.softplus_branch_l
    uu = np.where(lower, 0.0, u)
    # sigmoid(u) / softplus(u)
    upper = np.exp(-np.logaddexp(0.0, -uu) - np.log(np.logaddexp(0.0, uu)))
    return np.where(lower, 1.0, upper)


def logsoftplus(x, tau=1.0):
    """log(tau * log(1 + exp(x / tau))); linear lower branch below softplus_branch_l."""
    _check_tau(tau)
    x = _arr(x)
    return _logsoftplus_unit(x / tau) + np.log(tau)


def logsoftplus_grad(x, tau=1.0):
    _check_tau(tau)
    x = _arr(x)
    return _logsoftplus_unit_grad(x / tau) / tau


def _log_fatplus_unit(u: np.ndarray, alpha: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_alpha = np.log(alpha)
    return np.logaddexp(log_alpha - _log1p_sq(u), _logsoftplus_unit(u))


def fatplus(x, tau=1.0, alpha: float = DEFAULT_ALPHA):
    """tau * (alpha / (1 + (x/tau)^2) + softplus(x/tau)); convex with a Lorentzian tail."""
    _check_tau(tau)
    _check_alpha(alpha)
    u = _arr(x) / tau
    return tau * (alpha / (1 + u * u) + np.logaddexp(0.0, u))


def log_fatplus(x, tau=1.0, alpha: float = DEFAULT_ALPHA):
    _check_tau(tau)
    _check_alpha(alpha)
    u = _arr(x) / tau
    return _log_fatplus_unit(u, alpha) + np.log(tau)


def log_fatplus_grad(x, tau=1.0, alpha: float = DEFAULT_ALPHA):
    _check_tau(tau)
    _check_alpha(alpha)
    u = _arr(x) / tau
    lf = _log_fatplus_unit(u, alpha)
    sig = np.exp(-np.logaddexp(0.0, -u) - lf)
    with np.errstate(divide="ignore"):
        lorentz_share = np.exp(np.log(alpha) - _log1p_sq(u) - lf)
    big = np.abs(u) > 1e100
    ub = np.where(big, u, 1.0)
    ratio = np.where(big, 2.0 / ub, 2 * u / (1 + np.where(big, 0.0, u) ** 2))
    return (sig - ratio * lorentz_share) / tau


# --------------------------------------------------------------------------
# fat maximum


def fatmax(v, tau=1.0, axis=-1, return_grad: bool = False, mask=None):
    """max_j v_j + tau * log sum_i 1 / (1 + ((v_i - max_j v_j) / tau)^2).

    ``mask`` (boolean, broadcastable to ``v``) excludes entries from the
    reduction; masked-out entries receive zero gradient.
    """
    _check_tau(tau)
    v = _arr(v)
    if v.size == 0 or v.shape[axis] == 0:
        raise ValueError("fatmax of an empty input")
    if mask is None:
        mask = np.ones(v.shape, dtype=bool)
    else:
        mask = np.broadcast_to(mask, v.shape)
    vm = np.where(mask, v, -np.inf)
    m = np.max(vm, axis=axis, keepdims=True)
    t = np.where(mask, (np.where(mask, v, 0.0) - m) / tau, 0.0)
    w = np.where(mask, 1.0 / (1.0 + t * t), 0.0)
    arg = np.argmax(vm, axis=axis)
    onehot = np.zeros(v.shape, dtype=bool)
    np.put_along_axis(onehot, np.expand_dims(arg, axis), True, axis=axis)
    # the maximal entry contributes exactly 1; log1p keeps tiny tails resolved
    rest = np.sum(np.where(onehot, 0.0, w), axis=axis, keepdims=True)
    val = np.squeeze(m + tau * np.log1p(rest), axis=axis)
    if not return_grad:
        return val
    s = 1.0 + rest
    # d/dv_i for non-maximal entries; the argmax absorbs the shift derivative.
    g = -2.0 * t * w * w / s
    g_max = 1.0 - np.sum(np.where(onehot, 0.0, g), axis=axis, keepdims=True)
    g = np.where(onehot, g_max, g)
    return val, g


def fatmin(v, tau=1.0, axis=-1, return_grad: bool = False, mask=None):
    """Smooth minimum, -fatmax(-v)."""
    if not return_grad:
        return -fatmax(-_arr(v), tau, axis=axis, mask=mask)
    val, g = fatmax(-_arr(v), tau, axis=axis, return_grad=True, mask=mask)
    return -val, g


# --------------------------------------------------------------------------
# fat sigmoid


def fatsigmoid(x, tau=1.0):
    """Two Lorentzians spliced at x = 0; equals 1/2 there, tail O(x^-2) as x -> -inf."""
    _check_tau(tau)
    u = _arr(x) / tau
    neg = u < 0
    left = (2.0 / 3.0) / (1.0 + (u - _GAMMA) ** 2)
    right = 1.0 - (2.0 / 3.0) / (1.0 + (u + _GAMMA) ** 2)
    with np.errstate(over="ignore"):
        return np.where(neg, left, right)


def log_fatsigmoid(x, tau=1.0):
    _check_tau(tau)
    u = _arr(x) / tau
    neg = u < 0
    un = np.where(neg, u, 0.0)
    up = np.where(neg, 0.0, u)
    left = math.log(2.0 / 3.0) - _log1p_sq(un - _GAMMA)
    right = np.log1p(-(2.0 / 3.0) * np.exp(-_log1p_sq(up + _GAMMA)))
    return np.where(neg, left, right)


def log_fatsigmoid_grad(x, tau=1.0):
    _check_tau(tau)
    u = _arr(x) / tau
    neg = u < 0
    wn = np.where(neg, u, 0.0) - _GAMMA
    big = np.abs(wn) > 1e100
    left = np.where(big, -2.0 / np.where(big, wn, 1.0), -2 * wn / (1 + np.where(big, 0.0, wn) ** 2))
    wp = np.where(neg, 0.0, u) + _GAMMA
    q = 1.0 + wp * wp
    # iota' / iota on the right branch
    right = (4.0 / 3.0) * wp / (q * q) / (1.0 - (2.0 / 3.0) / q)
    with np.errstate(over="ignore", invalid="ignore"):
        right = np.where(np.isfinite(right), right, 0.0)
    return np.where(neg, left, right) / tau


# --------------------------------------------------------------------------
# log difference of exponentials


def logdiffexp(a, b):
    """log(exp(a) - exp(b)) for a > b."""
    a, b = _arr(a), _arr(b)
    if np.any(~(a > b)):
        raise ValueError("logdiffexp requires a > b")
    return a + _log1mexp(b - a)


def logdiffexp_grad(a, b):
    """Partial derivatives (d/da, d/db) of logdiffexp."""
    a, b = _arr(a), _arr(b)
    if np.any(~(a > b)):
        raise ValueError("logdiffexp requires a > b")
    da = -1.0 / np.expm1(b - a)
    return da, 1.0 - da


# --------------------------------------------------------------------------
# log of h(z) = phi(z) + z Phi(z)


def log_h(z):
    """log(phi(z) + z Phi(z)) with a direct, an erfcx and an asymptotic branch."""
    z = _arr(z)
    c = CONSTANTS
    b1 = z > -1
    b3 = z <= -c.inv_sqrt_eps
    b2 = ~b1 & ~b3

    z1 = np.where(b1, z, 0.0)
    with np.errstate(divide="ignore"):
        v1 = np.log(np.exp(-0.5 * z1 * z1 - c.c1) + z1 * special.ndtr(z1))

    z2 = np.where(b2, z, -2.0)
    t = np.log(erfcx(-z2 / _SQRT2) * np.abs(z2)) + c.c2
    z3 = np.where(b3 | (t >= 0), z, -2.0)
    v3 = -0.5 * z3 * z3 - c.c1 - 2 * np.log(np.abs(z3))
    v2 = np.where(t < 0, -0.5 * z2 * z2 - c.c1 + _log1mexp(np.minimum(t, -1e-300)), v3)

    return np.where(b1, v1, np.where(b2, v2, v3))


def log_h_grad(z):
    """d/dz log h(z) = Phi(z) / h(z), evaluated per branch."""
    z = _arr(z)
    c = CONSTANTS
    b1 = z > -1
    b3 = z <= -c.inv_sqrt_eps
    b2 = ~b1 & ~b3

    z1 = np.where(b1, z, 0.0)
    cdf = special.ndtr(z1)
    g1 = cdf / (np.exp(-0.5 * z1 * z1 - c.c1) + z1 * cdf)

    z2 = np.where(b2, z, -2.0)
    ex = erfcx(-z2 / _SQRT2)
    t = np.log(ex * np.abs(z2)) + c.c2
    z3 = np.where(b3 | (t >= 0), z, -2.0)
    g3 = -z3 - 2.0 / z3
    g2 = np.where(t < 0, np.exp(c.c2 + np.log(ex) - _log1mexp(np.minimum(t, -1e-300))), g3)
    # 1 + z*Phi/phi cancels like eps*z^2; its asymptotic series is exact to eps here
    far = b2 & (z <= -_LOG_H_SERIES_Z)
    zf = np.where(far, z, -_LOG_H_SERIES_Z)
    w = 1.0 / (zf * zf)
    tail = np.zeros_like(w)
    for k in range(_LOG_H_SERIES_TERMS, 0, -1):
        tail = w * (_double_factorial(2 * k - 1) * (-1) ** (k + 1) + tail)
    g2 = np.where(far, (1.0 - tail) / (np.abs(zf) * tail), g2)

    return np.where(b1, g1, np.where(b2, g2, g3))


_LOG_H_SERIES_Z = 16.0
_LOG_H_SERIES_TERMS = 30


def _double_factorial(n: int) -> float:
    return float(np.prod(np.arange(n, 0, -2, dtype=float))) if n > 0 else 1.0
