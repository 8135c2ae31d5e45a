"""Scenario construction: geometry, path loss, noise and user-centric AP selection.

All powers downstream of this module are expressed in watts against a
unit-variance noise: the large-scale gains returned by :func:`deploy` are
already divided by the thermal noise power.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .exceptions import ConfigError, DomainError

BOLTZMANN = 1.381e-23  # J/K
NOISE_TEMPERATURE = 290.0  # K

PerDevice = Union[float, tuple]


class Scheme(str, enum.Enum):
    """Linear precoding scheme."""

    MRT = "mrt"
    FZF = "fzf"
    LZF = "lzf"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigError(f"unknown precoding scheme {value!r}") from None


_PER_DEVICE_FIELDS = ("dep", "rate_req", "weights", "pilot_power_max")


def _as_per_device(value) -> PerDevice:
    if np.ndim(value) == 0:
        return float(value)
    return tuple(float(v) for v in np.asarray(value, dtype=float).ravel())


@dataclass(frozen=True)
class SystemConfig:
    """Every scalar of a scenario.

    Per-device quantities (``dep``, ``rate_req``, ``weights``,
    ``pilot_power_max``) accept either a scalar, broadcast to all devices,
    or a sequence of length ``num_devices``.

    Units: ``carrier_freq`` in MHz, ``bandwidth`` in Hz, ``frame_duration``
    in s, heights/distances in m, ``noise_figure`` in dB, powers in W.
    """

    carrier_freq: float = 2100.0
    bandwidth: float = 10e6
    frame_duration: float = 0.05e-3
    ap_height: float = 15.0
    device_height: float = 1.6
    noise_figure: float = 9.0
    area_side: float = 1000.0
    d0: float = 10.0
    d1: float = 50.0
    num_aps: int = 9
    antennas_per_ap: int = 16
    num_devices: int = 10
    selection_threshold: float = 0.95
    dep: PerDevice = 1e-7
    rate_req: PerDevice = 0.5
    weights: PerDevice = 1.0
    pilot_power_max: PerDevice = 0.1
    ap_power_max: float = 1.0
    scheme: Scheme = Scheme.LZF
    sca_tolerance: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        for name in _PER_DEVICE_FIELDS:
            object.__setattr__(self, name, _as_per_device(getattr(self, name)))
        for name in ("num_aps", "antennas_per_ap", "num_devices", "rng_seed"):
            object.__setattr__(self, name, int(getattr(self, name)))
        self.validate()

    @property
    def blocklength(self) -> int:
        """Channel blocklength L = B * T_B in symbols."""
        return int(round(self.bandwidth * self.frame_duration))

    @property
    def pilot_overhead(self) -> float:
        """eta = K / L."""
        return self.num_devices / self.blocklength

    def per_device(self, name: str) -> np.ndarray:
        """Return a per-device field broadcast to shape ``(K,)``."""
        if name not in _PER_DEVICE_FIELDS:
            raise KeyError(name)
        value = getattr(self, name)
        if isinstance(value, tuple):
            return np.array(value, dtype=float)
        return np.full(self.num_devices, value, dtype=float)

    def replace(self, **changes) -> "SystemConfig":
        """Copy with some fields changed.

        Per-device tuples whose length no longer matches a changed
        ``num_devices`` are truncated or cycled to fit.
        """
        k_new = int(changes.get("num_devices", self.num_devices))
        if k_new != self.num_devices:
            for name in _PER_DEVICE_FIELDS:
                value = changes.get(name, getattr(self, name))
                if isinstance(value, tuple) and len(value) != k_new:
                    changes[name] = tuple(np.resize(np.array(value), k_new))
        return dataclasses.replace(self, **changes)

    def validate(self) -> None:
        """Check the static invariants; raise :class:`ConfigError` on failure.

        The LZF condition ``N > max_m tau_m`` depends on AP selection and is
        checked later, by the SINR module.
        """
        if self.bandwidth <= 0 or self.frame_duration <= 0:
            raise ConfigError("bandwidth and frame_duration must be positive")
        if min(self.num_aps, self.antennas_per_ap, self.num_devices) < 1:
            raise ConfigError("num_aps, antennas_per_ap and num_devices must be >= 1")
        if self.blocklength <= self.num_devices:
            raise ConfigError(
                f"blocklength L={self.blocklength} must exceed K={self.num_devices}"
            )
        if not 0.0 < self.selection_threshold <= 1.0:
            raise ConfigError("selection_threshold must lie in (0, 1]")
        for name in _PER_DEVICE_FIELDS:
            value = getattr(self, name)
            if isinstance(value, tuple) and len(value) != self.num_devices:
                raise ConfigError(
                    f"{name} has {len(value)} entries, expected {self.num_devices}"
                )
        eps = self.per_device("dep")
        if np.any(eps <= 0) or np.any(eps >= 0.5):
            raise ConfigError("dep must lie in (0, 0.5)")
        if np.any(self.per_device("rate_req") <= 0):
            raise ConfigError("rate_req must be positive")
        if np.any(self.per_device("weights") < 0):
            raise ConfigError("weights must be non-negative")
        if np.any(self.per_device("pilot_power_max") <= 0) or self.ap_power_max <= 0:
            raise ConfigError("powers must be positive")
        if self.area_side <= 0 or self.d0 <= 0 or self.d1 <= self.d0:
            raise ConfigError("need area_side > 0 and 0 < d0 < d1")
        if self.sca_tolerance <= 0:
            raise ConfigError("sca_tolerance must be positive")
        if self.scheme is Scheme.FZF and self.antennas_per_ap <= self.num_devices:
            raise ConfigError(
                f"FZF needs N > K (N={self.antennas_per_ap}, K={self.num_devices})"
            )


@dataclass(frozen=True)
class NetworkRealization:
    """AP/device coordinates (m) and noise-normalised large-scale gains.

    ``beta`` has shape ``(M, K)``.
    """

    ap_positions: np.ndarray
    device_positions: np.ndarray
    beta: np.ndarray

    def subset(self, devices: Sequence[int]) -> "NetworkRealization":
        idx = np.asarray(devices, dtype=int)
        return NetworkRealization(
            self.ap_positions, self.device_positions[idx], self.beta[:, idx]
        )


@dataclass(frozen=True)
class ServingSets:
    """User-centric association.

    ``mask[m, k]`` is True iff AP ``m`` serves device ``k``.
    """

    mask: np.ndarray
    serving_aps: tuple = field(init=False)
    served_devices: tuple = field(init=False)
    tau: np.ndarray = field(init=False)

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(
            self,
            "serving_aps",
            tuple(tuple(np.flatnonzero(mask[:, k]).tolist()) for k in range(mask.shape[1])),
        )
        object.__setattr__(
            self,
            "served_devices",
            tuple(tuple(np.flatnonzero(mask[m]).tolist()) for m in range(mask.shape[0])),
        )
        object.__setattr__(self, "tau", mask.sum(axis=1))

    @property
    def num_aps(self) -> int:
        return self.mask.shape[0]

    @property
    def num_devices(self) -> int:
        return self.mask.shape[1]


def loss_constant_db(cfg: SystemConfig) -> float:
    """Frequency/height dependent constant of the three-slope model (dB)."""
    lf = math.log10(cfg.carrier_freq)
    return (
        46.3
        + 33.9 * lf
        - 13.82 * math.log10(cfg.ap_height)
        - (1.1 * lf - 0.7) * cfg.device_height
        + (1.56 * lf - 0.8)
    )


def path_loss_db(d, cfg: SystemConfig):
    """Three-slope path loss in dB for distance(s) ``d`` in metres.

    The slopes are evaluated with distances in km, as the model is written.
    """
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)):
        raise DomainError("distance must be positive")
    loss = loss_constant_db(cfg)
    dk, d0, d1 = d / 1e3, cfg.d0 / 1e3, cfg.d1 / 1e3
    far = loss + 35.0 * np.log10(dk)
    near = loss + 15.0 * math.log10(d1) + 20.0 * math.log10(d0)
    mid = loss + 15.0 * math.log10(d1) + 20.0 * np.log10(dk)
    out = np.where(dk > d1, far, np.where(dk <= d0, near, mid))
    return float(out) if out.ndim == 0 else out


def noise_power_w(cfg: SystemConfig) -> float:
    """Thermal noise power B k_B T_0 10^(NF/10) in watts."""
    if cfg.bandwidth <= 0:
        raise DomainError("bandwidth must be positive")
    return cfg.bandwidth * BOLTZMANN * NOISE_TEMPERATURE * 10.0 ** (cfg.noise_figure / 10.0)


def ap_grid(num_aps: int, side: float) -> np.ndarray:
    """AP coordinates at the centres of a regular grid over the square.

    Non-square counts use the ceil(sqrt(M)) grid truncated row-major.
    """
    per_row = math.isqrt(num_aps)
    if per_row * per_row != num_aps:
        per_row += 1
    cell = side / per_row
    centres = (np.arange(per_row) + 0.5) * cell
    yy, xx = np.meshgrid(centres, centres, indexing="ij")
    grid = np.column_stack([xx.ravel(), yy.ravel()])
    return grid[:num_aps]


def gains_from_positions(ap_positions, device_positions, cfg: SystemConfig) -> np.ndarray:
    """Noise-normalised linear large-scale gains, shape ``(M, K)``."""
    diff = ap_positions[:, None, :] - device_positions[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    return 10.0 ** (-path_loss_db(dist, cfg) / 10.0) / noise_power_w(cfg)


def deploy(cfg: SystemConfig, seed=None) -> NetworkRealization:
    """Grid APs plus i.i.d. uniform devices over ``[0, D]^2``.

    ``seed`` defaults to ``cfg.rng_seed``; a ``numpy.random.Generator`` is
    also accepted.
    """
    rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
    aps = ap_grid(cfg.num_aps, cfg.area_side)
    devices = rng.uniform(0.0, cfg.area_side, size=(cfg.num_devices, 2))
    beta = gains_from_positions(aps, devices, cfg)
    return NetworkRealization(aps, devices, beta)


def select_aps(beta, threshold: float) -> ServingSets:
    """Cumulative-gain AP selection.

    For each device the APs are taken in descending gain order (ties by
    ascending index) until their share of the total gain reaches
    ``threshold``.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 2 or np.any(~(beta > 0)):
        raise DomainError("beta must be a positive (M, K) matrix")
    if not 0.0 < threshold <= 1.0:
        raise DomainError("threshold must lie in (0, 1]")
    num_aps, num_devices = beta.shape
    mask = np.zeros_like(beta, dtype=bool)
    for k in range(num_devices):
        order = np.argsort(-beta[:, k], kind="stable")
        if threshold >= 1.0:
            count = num_aps
        else:
            share = np.cumsum(beta[order, k]) / beta[:, k].sum()
            hits = np.flatnonzero(share >= threshold)
            count = hits[0] + 1 if hits.size else num_aps
        mask[order[:count], k] = True
    return ServingSets(mask)


# -- scenario files --------------------------------------------------------

def _format_value(value) -> str:
    if isinstance(value, Scheme):
        return value.value
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return repr(value)


def dump_config(cfg: SystemConfig, path) -> None:
    """Write ``cfg`` as a flat ``key = value`` text file."""
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_config(text: str, base: SystemConfig | None = None) -> SystemConfig:
    """Parse a flat ``key = value`` scenario text.

    Blank lines and ``#`` comments are ignored; unknown keys are an error.
    Per-device fields may be comma separated lists.
    """
    base = base or SystemConfig()
    types = {f.name: f.type for f in dataclasses.fields(SystemConfig)}
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown field {key!r}")
        try:
            if key == "scheme":
                changes[key] = Scheme.parse(value)
            elif key in _PER_DEVICE_FIELDS:
                parts = [float(v) for v in value.split(",") if v.strip()]
                changes[key] = parts[0] if len(parts) == 1 else tuple(parts)
            elif types[key] in ("int", int):
                changes[key] = int(float(value))
            else:
                changes[key] = float(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return base.replace(**changes)


def load_config(path, base: SystemConfig | None = None) -> SystemConfig:
    return parse_config(Path(path).read_text(), base)
