"""Closed-form SINR bounds for MRT/FZF/LZF precoding and their Monte Carlo check.

Closed forms
------------
For device ``k`` with serving set ``M_k`` the bound is

    gamma_k = (sum_{m in M_k} sqrt((N - t_m) p_mk lam_mk))^2
              / (sum_{k'} sum_{m in M_k'} p_mk' C_mk + 1)

with ``t_m = 0 | K | tau_m`` and interference coefficient ``C_mk`` equal to
``beta_mk`` (MRT), ``beta_mk - lam_mk`` (FZF) or, for LZF, ``beta_mk - lam_mk``
when AP ``m`` serves ``k`` (its interference is nulled up to estimation
error) and ``beta_mk`` otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import EstimationStats, draw_estimated, estimation_variance
from .exceptions import ConfigError
from .fbl import FblParams, rate_fbl
from .sysmodel import Scheme, ServingSets

__all__ = [
    "Scheme", "SinrBreakdown", "McResult", "nulling_dims", "check_dimensions",
    "interference_coeffs", "sinr_breakdown", "sinr_lb", "build_precoders",
    "effective_gains", "mc_ergodic_rate",
]

COND_LIMIT = 1e12


def nulling_dims(scheme, sets: ServingSets) -> np.ndarray:
    """Spatial dimensions spent on nulling at each AP, ``t_m``."""
    scheme = Scheme.parse(scheme)
    if scheme is Scheme.MRT:
        return np.zeros(sets.num_aps)
    if scheme is Scheme.FZF:
        return np.full(sets.num_aps, float(sets.num_devices))
    return sets.tau.astype(float)


def check_dimensions(scheme, sets: ServingSets, num_antennas: int) -> None:
    """Raise :class:`ConfigError` naming the first AP with ``N <= t_m``.

    Only APs that serve someone matter.
    """
    t = nulling_dims(scheme, sets)
    bad = np.flatnonzero((t >= num_antennas) & (sets.tau > 0))
    if bad.size:
        m = int(bad[0])
        raise ConfigError(
            f"{Scheme.parse(scheme).value.upper()} needs N > {int(t[m])} at AP {m} "
            f"(N={num_antennas}, serves {int(sets.tau[m])} devices)"
        )


def interference_coeffs(scheme, sets: ServingSets, beta, lam) -> np.ndarray:
    """Coefficient ``C[m, k]`` multiplying ``p[m, k']`` in device k's denominator."""
    scheme = Scheme.parse(scheme)
    beta = np.asarray(beta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if scheme is Scheme.MRT:
        return beta.copy()
    if scheme is Scheme.FZF:
        return beta - lam
    return beta - lam * sets.mask


@dataclass(frozen=True)
class SinrBreakdown:
    """Per-device signal terms of the bound.

    ``ui[k, k']`` is the interference power from device ``k'``'s stream
    (zero on the diagonal); ``ls`` is the leakage of the own stream.
    """

    ds: np.ndarray
    ls: np.ndarray
    ui: np.ndarray
    noise: float = 1.0

    @property
    def sinr(self) -> np.ndarray:
        return self.ds / (self.ls + self.ui.sum(axis=1) + self.noise)


def _served_powers(sets, powers):
    p = np.asarray(powers, dtype=float)
    if p.shape != sets.mask.shape:
        raise ValueError(f"powers must have shape {sets.mask.shape}, got {p.shape}")
    if np.any(p < 0):
        raise ValueError("powers must be non-negative")
    return np.where(sets.mask, p, 0.0)


def sinr_breakdown(scheme, sets: ServingSets, stats: EstimationStats, beta, powers,
                   num_antennas: int) -> SinrBreakdown:
    """Closed-form DS/LS/UI powers for every device.

    Powers on links outside the serving sets are ignored (treated as zero).
    """
    check_dimensions(scheme, sets, num_antennas)
    p = _served_powers(sets, powers)
    lam = np.asarray(stats.lam, dtype=float)
    t = nulling_dims(scheme, sets)
    amp = np.sqrt((num_antennas - t)[:, None] * p * lam)
    ds = amp.sum(axis=0) ** 2
    coeff = interference_coeffs(scheme, sets, beta, lam)
    cross = coeff.T @ p  # cross[k, k'] = sum_m C[m, k] p[m, k']
    ls = np.diag(cross).copy()
    ui = cross - np.diag(ls)
    return SinrBreakdown(ds=ds, ls=ls, ui=ui)


def sinr_lb(scheme, sets: ServingSets, stats: EstimationStats, beta, powers,
            num_antennas: int) -> np.ndarray:
    """Per-device SINR whose FBL rate lower-bounds the ergodic rate."""
    return sinr_breakdown(scheme, sets, stats, beta, powers, num_antennas).sinr


def _zf_columns(gm, cols):
    """Columns of ``G (G^H G)^{-1}`` for the selected columns, batched over draws.

    Returns the precoder block and a per-draw flag of ill-conditioned Grams.
    """
    sub = gm[..., cols]
    gram = np.conj(np.swapaxes(sub, -1, -2)) @ sub
    bad = np.linalg.cond(gram) > COND_LIMIT
    safe = np.where(bad[:, None, None], np.eye(len(cols)), gram)
    inv = np.linalg.inv(safe)
    return sub @ inv, bad


def build_precoders(g_hat, scheme, sets: ServingSets, stats: EstimationStats,
                    num_antennas: int):
    """Unit-mean-power precoders for every served link.

    Parameters
    ----------
    g_hat : ndarray, shape (draws, M, N, K)
        Channel estimates.

    Returns
    -------
    a : ndarray, shape (draws, M, N, K)
        ``a[d, m, :, k]`` is the precoder of AP ``m`` for device ``k``;
        zero where ``m`` does not serve ``k``. Normalisation uses the
        analytic ``E||.||^2`` rather than the sample norm.
    rejected : ndarray of bool, shape (draws,)
        Draws where some Gram matrix had condition number above 1e12.
    """
    scheme = Scheme.parse(scheme)
    check_dimensions(scheme, sets, num_antennas)
    g_hat = np.asarray(g_hat)
    lam = np.asarray(stats.lam, dtype=float)
    n_draws, num_aps, _, num_devices = g_hat.shape
    a = np.zeros_like(g_hat)
    rejected = np.zeros(n_draws, dtype=bool)
    t = nulling_dims(scheme, sets)
    for m in range(num_aps):
        served = list(sets.served_devices[m])
        if not served:
            continue
        if scheme is Scheme.MRT:
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(lam[m] > 0, 1.0 / np.sqrt(num_antennas * lam[m]), 0.0)
            a[:, m] = g_hat[:, m] * (scale * sets.mask[m])[None, None, :]
            continue
        scale = np.sqrt((num_antennas - t[m]) * lam[m])
        if scheme is Scheme.FZF:
            block, bad = _zf_columns(g_hat[:, m], list(range(num_devices)))
            a[:, m, :, served] = np.moveaxis(block[..., served] * scale[served], -1, 0)
        else:
            block, bad = _zf_columns(g_hat[:, m], served)
            a[:, m, :, served] = np.moveaxis(block * scale[served], -1, 0)
        rejected |= bad
    return a, rejected


def effective_gains(g, a, powers) -> np.ndarray:
    """``E[d, k, k'] = sum_m sqrt(p_mk') g_mk^T conj(a_mk')`` for each draw."""
    weighted = np.conj(a) * np.sqrt(powers)[None, :, None, :]
    return np.einsum("dmnk,dmnj->dkj", g, weighted, optimize=True)


@dataclass(frozen=True)
class McResult:
    """Monte Carlo estimates with standard errors.

    ``ds2`` is ``|mean effective gain|^2`` (to compare with the deterministic
    ``ds2_closed``); ``ls2``/``ui2`` are mean squared deviations around the
    closed-form desired signal, so they estimate E|LS|^2 and E|UI|^2.
    """

    ergodic_rate: np.ndarray
    ergodic_rate_se: np.ndarray
    ds2: np.ndarray
    ds2_se: np.ndarray
    ds2_closed: np.ndarray
    ls2: np.ndarray
    ls2_se: np.ndarray
    ui2: np.ndarray
    ui2_se: np.ndarray
    inv_sinr: np.ndarray
    n_draws: int
    n_rejected: int


class _Moments:
    """Chunked accumulator of sums and sums of squares (fixed chunk order)."""

    def __init__(self):
        self.n = 0
        self.s = {}
        self.s2 = {}

    def add(self, name, values):
        values = np.asarray(values)
        self.s[name] = self.s.get(name, 0) + values.sum(axis=0)
        self.s2[name] = self.s2.get(name, 0) + (np.abs(values) ** 2).sum(axis=0)

    def mean(self, name):
        return self.s[name] / self.n

    def se(self, name):
        mean = self.mean(name)
        var = np.maximum(self.s2[name] / self.n - np.abs(mean) ** 2, 0.0)
        return np.sqrt(var * self.n / max(self.n - 1, 1) / self.n)


def mc_ergodic_rate(beta, sets: ServingSets, scheme, powers, pilot_powers, num_antennas: int,
                    fbl: FblParams, n_draws: int, seed=None, chunk: int = 1000) -> McResult:
    """Simulate the downlink signal decomposition and the ergodic FBL rate.

    Each draw gives, per device, the effective gain of its own stream
    ``b_k`` and of every other stream ``UI_{k,k'}``. The desired signal
    ``DS_k`` is the deterministic mean (closed form), the leakage is
    ``b_k - DS_k``, and the per-draw SINR is
    ``DS_k^2 / (|LS_k|^2 + sum |UI_{k,k'}|^2 + 1)``.  Draws are processed
    in fixed chunks with spawned seeds, so results do not depend on memory
    layout or worker count.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    scheme = Scheme.parse(scheme)
    beta = np.asarray(beta, dtype=float)
    p = _served_powers(sets, powers)
    num_devices = beta.shape[1]
    stats = estimation_variance(beta, pilot_powers, num_devices)
    closed = sinr_breakdown(scheme, sets, stats, beta, p, num_antennas)
    ds = np.sqrt(closed.ds)
    offdiag = ~np.eye(num_devices, dtype=bool)

    chunks = [chunk] * (n_draws // chunk) + ([n_draws % chunk] if n_draws % chunk else [])
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seqs = root.spawn(len(chunks))
    acc = _Moments()
    n_rejected = 0
    for size, ss in zip(chunks, seqs):
        rng = np.random.default_rng(ss)
        kept = []
        need = size
        while need:
            draw = draw_estimated(beta, num_antennas, pilot_powers, num_devices, rng, need)
            a, rejected = build_precoders(draw.g_hat, scheme, sets, stats, num_antennas)
            n_rejected += int(rejected.sum())
            keep = ~rejected
            kept.append(effective_gains(draw.g[keep], a[keep], p))
            need = int(rejected.sum())
        gains = np.concatenate(kept)
        own = np.diagonal(gains, axis1=1, axis2=2)
        leak = own - ds
        ui = np.where(offdiag, gains, 0.0)
        ui2 = np.abs(ui) ** 2
        denom = np.abs(leak) ** 2 + ui2.sum(axis=2) + 1.0
        with np.errstate(divide="ignore"):
            sinr = closed.ds / denom
        rate = np.asarray(rate_fbl(np.maximum(sinr, 1e-300), fbl))
        acc.n += len(gains)
        acc.add("own", own)
        acc.add("ls2", np.abs(leak) ** 2)
        acc.add("ui2", ui2)
        acc.add("rate", rate)
        acc.add("inv", denom / closed.ds)

    own_mean = acc.mean("own")
    own_se = acc.se("own")
    return McResult(
        ergodic_rate=acc.mean("rate"),
        ergodic_rate_se=acc.se("rate"),
        ds2=np.abs(own_mean) ** 2,
        ds2_se=2.0 * np.abs(own_mean) * own_se,
        ds2_closed=closed.ds,
        ls2=acc.mean("ls2"),
        ls2_se=acc.se("ls2"),
        ui2=acc.mean("ui2"),
        ui2_se=acc.se("ui2"),
        inv_sinr=acc.mean("inv"),
        n_draws=acc.n,
        n_rejected=n_rejected,
    )
