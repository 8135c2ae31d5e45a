"""Finite-blocklength rate kernel (normal approximation).

With ``x = 1/SINR`` the per-symbol rate in nats is

    f(x) = ln(1 + 1/x) - alpha * sqrt((2x + 1) / (1 + x)^2),
    alpha = Qinv(eps) / sqrt(L (1 - eta)),

and the rate is non-negative exactly when ``g(x) >= alpha`` with
``g(x) = (1 + x) ln(1 + 1/x) / sqrt(2x + 1)``.  Everything here is
vectorised over numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import special

from .exceptions import DomainError, InfeasibleError

LN2 = math.log(2.0)
BISECT_MAX_ITER = 200
_SQRT2 = math.sqrt(2.0)


def q_func(z):
    """Gaussian tail probability Q(z)."""
    return 0.5 * special.erfc(np.asarray(z, dtype=float) / _SQRT2)


def q_inv(eps):
    """Inverse of Q on (0, 1).

    Starts from ``scipy.special.ndtri`` and polishes with two Newton steps
    on Q, which keeps the relative round-trip error near 1e-15 far into
    the tail.
    """
    eps = np.asarray(eps, dtype=float)
    if np.any(~((eps > 0) & (eps < 1))):
        raise DomainError("eps must lie in (0, 1)")
    z = -special.ndtri(eps)
    for _ in range(2):
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        z = z + (q_func(z) - eps) / pdf
    return float(z) if z.ndim == 0 else z


def _check_positive(x, what="x"):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError(f"{what} must be positive")
    return x


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def g_func(x):
    """Boundary function of the non-negative-rate region (decreasing)."""
    x = _check_positive(x)
    return _out((1.0 + x) * np.log1p(1.0 / x) / np.sqrt(2.0 * x + 1.0))


def G_func(chi):
    """sqrt((2/chi + 1) / (1/chi + 1)^2), the dispersion factor in SINR form."""
    chi = _check_positive(chi, "chi")
    return _out(np.sqrt((2.0 / chi + 1.0) / (1.0 / chi + 1.0) ** 2))


def _bisect(fun, target, lo, hi, decreasing=True):
    """Vectorised bisection of a monotone ``fun`` for ``fun(x) = target``.

    Runs until the bracket stops shrinking in floating point or the
    iteration cap is hit.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if np.all((mid <= lo) | (mid >= hi)):
            return mid
        above = fun(mid) > target
        go_right = above if decreasing else ~above
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
    gap = np.max(np.abs(hi - lo) / np.maximum(1.0, np.abs(hi)))
    if gap > 1e-10:
        raise InfeasibleError(f"bisection did not converge (relative gap {gap:.3g})")
    return 0.5 * (lo + hi)


def _expand_bracket(fun, target, decreasing=True):
    """Return (lo, hi) in (0, inf) bracketing ``fun = target`` for a decreasing fun."""
    target = np.asarray(target, dtype=float)
    lo = np.full(target.shape, 1.0)
    hi = np.full(target.shape, 1.0)
    for _ in range(BISECT_MAX_ITER):
        need = fun(lo) <= target
        if not np.any(need):
            break
        lo = np.where(need, lo / 16.0, lo)
    else:
        raise InfeasibleError("target above the reachable range")
    for _ in range(BISECT_MAX_ITER):
        need = fun(hi) > target
        if not np.any(need):
            break
        hi = np.where(need, hi * 16.0, hi)
    else:
        raise InfeasibleError("target below the reachable range")
    return lo, hi


def g_inv(target):
    """Inverse of the decreasing boundary function ``g`` for ``target > 0``."""
    target = np.asarray(target, dtype=float)
    if np.any(~(target > 0)) or np.any(~np.isfinite(target)):
        raise InfeasibleError("g_inv needs a finite positive target")
    lo, hi = _expand_bracket(g_func, target)
    return _out(_bisect(g_func, target, lo, hi))


@dataclass(frozen=True)
class FblParams:
    """Blocklength ``L``, pilot length ``K`` and DEP ``eps`` (scalar or per device)."""

    L: int
    K: int
    eps: float | np.ndarray

    def __post_init__(self):
        if not 0 < self.K < self.L:
            raise DomainError(f"need 0 < K < L, got K={self.K}, L={self.L}")
        eps = np.asarray(self.eps, dtype=float)
        if np.any(~((eps > 0) & (eps < 1))):
            raise DomainError("eps must lie in (0, 1)")
        object.__setattr__(self, "eps", float(eps) if eps.ndim == 0 else eps)

    @property
    def eta(self) -> float:
        return self.K / self.L

    @cached_property
    def alpha(self):
        return _out(q_inv(self.eps) / math.sqrt(self.L * (1.0 - self.eta)))

    @cached_property
    def x_max(self):
        """Largest 1/SINR with non-negative rate, ``g_inv(alpha)``.

        Infinite when ``alpha <= 0`` (eps >= 0.5: the rate never goes negative).
        """
        alpha = np.asarray(self.alpha, dtype=float)
        out = np.full(alpha.shape, np.inf)
        pos = alpha > 0
        if np.any(pos):
            out[pos] = g_inv(alpha[pos])
        return _out(out)

    def sinr_requirement(self, rate_req):
        """Minimum SINR meeting ``rate_req`` bit/s/Hz, ``1 / f_inv(R ln2 / (1 - eta))``."""
        return _out(1.0 / np.asarray(f_inv(np.asarray(rate_req) * LN2 / (1.0 - self.eta), self)))


def f_func(x, p: FblParams):
    """Rate in nats per data symbol as a function of ``x = 1/SINR`` (before the 1-eta factor)."""
    x = _check_positive(x)
    return _out(np.log1p(1.0 / x) - np.asarray(p.alpha) * np.sqrt(2.0 * x + 1.0) / (1.0 + x))


def f_inv(target, p: FblParams):
    """Solve ``f(x) = target`` on ``(0, x_max]``.

    Raises :class:`InfeasibleError` for targets that are not strictly
    positive, since f spans ``(0, inf)`` on that branch.
    """
    target = np.asarray(target, dtype=float)
    if np.any(~(target > 0)) or np.any(~np.isfinite(target)):
        raise InfeasibleError("rate target must be finite and positive")
    target, alpha = np.broadcast_arrays(target, np.asarray(p.alpha, dtype=float))
    x_max = np.broadcast_to(np.asarray(p.x_max, dtype=float), target.shape)

    def fun(x):
        return np.log1p(1.0 / x) - alpha * np.sqrt(2.0 * x + 1.0) / (1.0 + x)

    lo, hi = _expand_bracket(fun, target)
    hi = np.minimum(hi, x_max)
    lo = np.minimum(lo, hi)
    return _out(_bisect(fun, target, lo, hi))


def rate_fbl(gamma, p: FblParams):
    """Normal-approximation rate in bit/s/Hz (may be negative)."""
    gamma = _check_positive(gamma, "gamma")
    eta = p.eta
    dispersion = 1.0 - (1.0 + gamma) ** -2
    penalty = np.sqrt((1.0 - eta) * dispersion / p.L) * q_inv(p.eps) / LN2
    return _out((1.0 - eta) * np.log2(1.0 + gamma) - penalty)


class LbRate(NamedTuple):
    """Closed-form rate bound together with its validity flag."""

    rate: float | np.ndarray
    feasible: bool | np.ndarray


def lb_rate(gamma_hat, p: FblParams) -> LbRate:
    """Lower bound on the ergodic FBL rate, ``(1 - eta)/ln2 * f(1/gamma_hat)``.

    ``feasible`` is False where ``1/gamma_hat`` lies beyond ``x_max``; the
    raw value is still returned there so callers can report it.
    """
    gamma_hat = _check_positive(gamma_hat, "gamma_hat")
    x = 1.0 / gamma_hat
    rate = (1.0 - p.eta) / LN2 * np.asarray(f_func(x, p))
    feasible = x <= np.asarray(p.x_max) * (1.0 + 1e-12)
    return LbRate(_out(rate), feasible if np.ndim(feasible) else bool(feasible))
