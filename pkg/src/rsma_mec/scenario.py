"""Random network instance generation.

All internal quantities are linear SI (W, Hz, bits/s, s, km for distances).
dBm / dB / MHz / Mbps appear only at the config boundary (file loading and
CLI overrides).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

# Default simulation setup: 3 servers, 3 channels, 9 devices in a 0.5 km disk,
# B = 1 MHz, T = 1 s, sigma2 = -174 dBm/Hz, P_k = 20 dBm, F_m = 20 Mbps.
_DEFAULTS = dict(
    num_servers=3,
    num_channels=3,
    num_devices=9,
    bandwidth=1e6,
    deadline=1.0,
    noise_psd=10 ** (-174.0 / 10.0) / 1000.0,
    max_tx_power=10 ** (20.0 / 10.0) / 1000.0,
    server_frequency=20e6,
    placement_radius=0.5,
    min_distance=0.01,
)


def dbm_to_watt(dbm: float) -> float:
    return 10 ** (dbm / 10.0) / 1000.0


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt * 1000.0)


@dataclass(frozen=True)
class SystemConfig:
    """Static system parameters shared by all algorithms."""

    num_servers: int = _DEFAULTS["num_servers"]
    num_channels: int = _DEFAULTS["num_channels"]
    num_devices: int = _DEFAULTS["num_devices"]
    bandwidth: float = _DEFAULTS["bandwidth"]  # Hz per channel
    deadline: float = _DEFAULTS["deadline"]  # s
    noise_psd: float = _DEFAULTS["noise_psd"]  # W/Hz
    max_tx_power: float = _DEFAULTS["max_tx_power"]  # W per device
    server_frequency: float = _DEFAULTS["server_frequency"]  # offloaded bits/s
    placement_radius: float = _DEFAULTS["placement_radius"]  # km
    min_distance: float = _DEFAULTS["min_distance"]  # km

    def __post_init__(self) -> None:
        if self.num_servers < 1 or self.num_channels < 1 or self.num_devices < 1:
            raise ValueError("M, N and K must all be at least 1")
        for name in (
            "bandwidth",
            "deadline",
            "noise_psd",
            "max_tx_power",
            "server_frequency",
            "placement_radius",
            "min_distance",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def noise_power(self) -> float:
        """Per-channel noise power sigma^2 * B in W."""
        return self.noise_psd * self.bandwidth

    def with_overrides(self, **kwargs) -> "SystemConfig":
        return replace(self, **kwargs)


# Config file keys and their conversion to internal SI units.
_FILE_FIELDS = {
    "num_servers": ("num_servers", int),
    "num_channels": ("num_channels", int),
    "num_devices": ("num_devices", int),
    "bandwidth_mhz": ("bandwidth", lambda v: float(v) * 1e6),
    "deadline_s": ("deadline", float),
    "noise_dbm_per_hz": ("noise_psd", lambda v: dbm_to_watt(float(v))),
    "max_tx_power_dbm": ("max_tx_power", lambda v: dbm_to_watt(float(v))),
    "server_frequency_mbps": ("server_frequency", lambda v: float(v) * 1e6),
    "placement_radius_km": ("placement_radius", float),
    "min_distance_km": ("min_distance", float),
}


def parse_config_pairs(pairs: dict[str, str]) -> dict:
    """Convert key=value strings (boundary units) into SystemConfig kwargs."""
    kwargs = {}
    for key, raw in pairs.items():
        if key not in _FILE_FIELDS:
            raise KeyError(f"unknown config key: {key!r}")
        field, conv = _FILE_FIELDS[key]
        kwargs[field] = conv(raw)
    return kwargs


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> SystemConfig:
    """Load a SystemConfig from a key=value file, then apply CLI overrides.

    Lines starting with '#' and blank lines are ignored.  Unknown solver keys
    (prefix 'sca_', 'alt_', 'bisection_', 'inner_') are skipped here and picked
    up by ScaSettings.from_pairs.
    """
    pairs: dict[str, str] = {}
    if path is not None:
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            pairs[key.strip()] = value.strip()
    if overrides:
        pairs.update(overrides)
    pairs = {k: v for k, v in pairs.items() if k in _FILE_FIELDS}
    return SystemConfig(**parse_config_pairs(pairs))


def mean_channel_gain(distance_km: float) -> float:
    """Mean linear power gain at a given distance (3GPP 128.1 + 37.6 log10(d) dB)."""
    if distance_km <= 0:
        raise ValueError("distance must be positive")
    path_loss_db = 128.1 + 37.6 * math.log10(distance_km)
    return 10 ** (-path_loss_db / 10.0)


@dataclass(frozen=True)
class Scenario:
    """One realized network instance.

    gains has shape (M, N, K): linear power gain between server m and device k
    on channel n.  Immutable after creation; safe to share across workers.
    """

    config: SystemConfig
    gains: np.ndarray
    device_pos: np.ndarray  # (K, 2) km
    server_pos: np.ndarray  # (M, 2) km
    seed: int

    def __post_init__(self) -> None:
        self.gains.setflags(write=False)
        self.device_pos.setflags(write=False)
        self.server_pos.setflags(write=False)

    def distance(self, m: int, k: int) -> float:
        d = float(np.hypot(*(self.server_pos[m] - self.device_pos[k])))
        return max(d, self.config.min_distance)


def _disk_points(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    # Uniform area density: radius sampled as R * sqrt(u).
    r = radius * np.sqrt(rng.random(count))
    theta = rng.random(count) * 2.0 * np.pi
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def generate_scenario(config: SystemConfig, seed: int) -> Scenario:
    """Draw a random topology and Rayleigh-faded gains; pure in (config, seed).

    Each gain h[m, n, k] is exponential with mean mean_channel_gain(d(m, k)),
    drawn independently per channel n (frequency-selective block fading).
    """
    rng = np.random.default_rng(seed)
    M, N, K = config.num_servers, config.num_channels, config.num_devices
    device_pos = _disk_points(rng, K, config.placement_radius)
    server_pos = _disk_points(rng, M, config.placement_radius)

    dist = np.hypot(
        server_pos[:, None, 0] - device_pos[None, :, 0],
        server_pos[:, None, 1] - device_pos[None, :, 1],
    )
    dist = np.maximum(dist, config.min_distance)  # clamp path-loss singularity
    means = np.array([[mean_channel_gain(d) for d in row] for row in dist])  # (M, K)
    gains = rng.exponential(1.0, size=(M, N, K)) * means[:, None, :]
    return Scenario(config=config, gains=gains, device_pos=device_pos, server_pos=server_pos, seed=seed)
