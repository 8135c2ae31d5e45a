"""Rayleigh channel sampling and MMSE estimation from orthogonal pilots.

Batched arrays use the layout ``(draws, M, N, K)`` so that ``g[d, m]`` is
the N x K channel matrix seen by AP ``m`` in draw ``d``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError


@dataclass(frozen=True)
class EstimationStats:
    """Per-link estimate variance ``lam`` and error variance ``error_var``."""

    lam: np.ndarray
    error_var: np.ndarray


@dataclass(frozen=True)
class ChannelDraw:
    """True channels and their MMSE estimates, both ``(draws, M, N, K)``."""

    g: np.ndarray
    g_hat: np.ndarray | None = None

    @property
    def g_err(self) -> np.ndarray:
        if self.g_hat is None:
            raise ValueError("draw has no estimate yet")
        return self.g - self.g_hat


def _pilot_snr(beta, pilot_powers, num_pilots):
    beta = np.asarray(beta, dtype=float)
    pp = np.asarray(pilot_powers, dtype=float)
    if np.any(pp < 0):
        raise DomainError("pilot power must be non-negative")
    return num_pilots * np.broadcast_to(pp, beta.shape[-1:]) * beta


def estimation_variance(beta, pilot_powers, num_pilots: int) -> EstimationStats:
    """Variance of the MMSE estimate, K p beta^2 / (K p beta + 1).

    ``pilot_powers`` has one entry per device (last axis of ``beta``).
    """
    beta = np.asarray(beta, dtype=float)
    snr = _pilot_snr(beta, pilot_powers, num_pilots)
    lam = snr * beta / (snr + 1.0)
    return EstimationStats(lam=lam, error_var=beta - lam)


def complex_normal(rng, shape) -> np.ndarray:
    """CN(0, 1) samples: independent real/imaginary parts of variance 1/2."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(0.5)


def sample_channel(beta, num_antennas: int, seed=None, n_draws: int = 1) -> ChannelDraw:
    """Draw ``g = sqrt(beta) h`` with ``h ~ CN(0, I_N)`` per link."""
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    num_aps, num_devices = beta.shape
    h = complex_normal(rng, (n_draws, num_aps, num_antennas, num_devices))
    return ChannelDraw(g=np.sqrt(beta)[None, :, None, :] * h)


def estimate_channels(draw: ChannelDraw, beta, pilot_powers, num_pilots: int, seed=None) -> ChannelDraw:
    """MMSE estimate from the de-spread pilot observation ``y = g + n``.

    The de-spreading with orthonormal pilots is folded in analytically: the
    effective noise on ``y`` has per-antenna variance ``1/(K p)``. Links with
    zero pilot power get a zero estimate.
    """
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    snr = _pilot_snr(beta, pilot_powers, num_pilots)
    with np.errstate(divide="ignore"):
        noise_std = np.where(snr > 0, np.sqrt(beta / np.where(snr > 0, snr, 1.0)), 0.0)
    # beta / snr = 1 / (K p)
    noise = complex_normal(rng, draw.g.shape) * noise_std[None, :, None, :]
    y = draw.g + noise
    gain = snr / (snr + 1.0)
    return ChannelDraw(g=draw.g, g_hat=gain[None, :, None, :] * y)


def draw_estimated(beta, num_antennas: int, pilot_powers, num_pilots: int, seed=None,
                   n_draws: int = 1) -> ChannelDraw:
    """Sample true channels and their estimates from one generator."""
    rng = np.random.default_rng(seed)
    draw = sample_channel(beta, num_antennas, rng, n_draws)
    return estimate_channels(draw, beta, pilot_powers, num_pilots, rng)
