"""Experiment configuration: device layouts, channel/UAV parameters and baseline geometries."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .geometry import Trajectory

WEIGHT_TOLERANCE = 1e-6
REOPTIMIZE_MODES = ("once", "per-round")


class ScenarioError(ValueError):
    """Raised when a configuration cannot be turned into a valid Scenario."""


@dataclass(frozen=True)
class Scenario:
    """Everything needed to place devices, fly the UAV-PS and run the optimizer.

    Powers are linear (watts), distances in meters. ``gain`` is the channel
    power gain at the 1 m reference distance.
    """

    devices: np.ndarray
    weights: np.ndarray
    gain: float
    noise_power: float
    p0: float
    altitude: float
    v_max: float
    slot_duration: float
    n_slots: int
    start: np.ndarray
    d_thr: float
    epsilon: float = 1e-4
    max_outer_iters: int = 50
    inner_iters: int = 1
    reoptimize: str = "once"
    stale_rho: bool = False
    seed: int = 0
    learning: dict = field(default_factory=dict)

    def __post_init__(self):
        devices = np.asarray(self.devices, dtype=float)
        if devices.ndim != 2 or devices.shape[1] != 2 or devices.shape[0] < 1:
            raise ScenarioError(f"devices: expected an (M, 2) array, got shape {devices.shape}")
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (devices.shape[0],):
            raise ScenarioError(
                f"weights: expected {devices.shape[0]} entries, got {weights.shape[0] if weights.ndim else 0}"
            )
        if np.any(weights <= 0):
            raise ScenarioError("weights: every weight must be positive")
        if abs(weights.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise ScenarioError(f"weights: must sum to 1 (got {weights.sum():.9g})")
        weights = weights / weights.sum()
        start = np.asarray(self.start, dtype=float)
        if start.shape != (2,):
            raise ScenarioError(f"start: expected a 2-vector, got shape {start.shape}")

        for name in ("gain", "p0", "altitude", "v_max", "slot_duration", "d_thr", "epsilon"):
            value = float(getattr(self, name))
            if not (value > 0 and math.isfinite(value)):
                raise ScenarioError(f"{name}: must be positive and finite (got {value})")
        if not (self.noise_power >= 0 and math.isfinite(self.noise_power)):
            raise ScenarioError(f"noise_power: must be >= 0 (got {self.noise_power})")
        if int(self.n_slots) < 1:
            raise ScenarioError(f"n_slots: must be >= 1 (got {self.n_slots})")
        if int(self.max_outer_iters) < 0:
            raise ScenarioError(f"max_outer_iters: must be >= 0 (got {self.max_outer_iters})")
        if int(self.inner_iters) < 1:
            raise ScenarioError(f"inner_iters: must be >= 1 (got {self.inner_iters})")
        if self.reoptimize not in REOPTIMIZE_MODES:
            raise ScenarioError(f"reoptimize: must be one of {REOPTIMIZE_MODES} (got {self.reoptimize!r})")

        object.__setattr__(self, "devices", devices)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "n_slots", int(self.n_slots))
        object.__setattr__(self, "max_outer_iters", int(self.max_outer_iters))
        object.__setattr__(self, "inner_iters", int(self.inner_iters))
        object.__setattr__(self, "seed", int(self.seed))
        for name in ("gain", "noise_power", "p0", "altitude", "v_max", "slot_duration", "d_thr", "epsilon"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def n_devices(self) -> int:
        return self.devices.shape[0]

    @property
    def step_limit(self) -> float:
        """Largest horizontal displacement per slot, V_max * delta."""
        return self.v_max * self.slot_duration

    @property
    def peak_gain(self) -> float:
        """sqrt(gain * P0) / z, the effective gain of a device right below the UAV."""
        return math.sqrt(self.gain * self.p0) / self.altitude

    def replace(self, **changes) -> "Scenario":
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return Scenario(**values)

    def to_dict(self) -> dict:
        """Fully resolved configuration (linear units, explicit device list)."""
        return {
            "seed": self.seed,
            "devices": {"positions": self.devices.tolist(), "weights": self.weights.tolist()},
            "channel": {"gain": self.gain, "noise_power": self.noise_power, "p0": self.p0},
            "uav": {
                "altitude": self.altitude,
                "v_max": self.v_max,
                "slot_duration": self.slot_duration,
                "n_slots": self.n_slots,
                "start": self.start.tolist(),
                "d_thr": self.d_thr,
            },
            "optimizer": {
                "epsilon": self.epsilon,
                "max_outer_iters": self.max_outer_iters,
                "inner_iters": self.inner_iters,
                "reoptimize": self.reoptimize,
                "stale_rho": self.stale_rho,
            },
            "learning": dict(self.learning),
        }

    def digest(self) -> str:
        """Stable sha256 of the resolved configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def _linear(section: dict, key: str, where: str, default=None) -> float:
    """Read ``key`` or its ``_db`` / ``_dbm`` suffixed form."""
    present = [k for k in (key, f"{key}_db", f"{key}_dbm") if k in section]
    if len(present) > 1:
        raise ScenarioError(f"{where}.{key}: give only one of {present}")
    if not present:
        if default is None:
            raise ScenarioError(f"{where}.{key}: missing")
        return default
    name = present[0]
    try:
        value = float(section[name])
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}.{name}: not a number ({section[name]!r})") from None
    if name.endswith("_dbm"):
        return dbm_to_watts(value)
    if name.endswith("_db"):
        return db_to_linear(value)
    return value


def _section(raw: dict, name: str) -> dict:
    section = raw.get(name, {})
    if not isinstance(section, dict):
        raise ScenarioError(f"{name}: expected a mapping")
    return section


def scenario_from_dict(raw: dict) -> Scenario:
    """Build a Scenario from a parsed config mapping."""
    if not isinstance(raw, dict):
        raise ScenarioError("config: top level must be a mapping")
    devices_cfg = _section(raw, "devices")
    channel = _section(raw, "channel")
    uav = _section(raw, "uav")
    opt = _section(raw, "optimizer")

    if "positions" in devices_cfg:
        devices = np.asarray(devices_cfg["positions"], dtype=float)
    elif "clusters" in devices_cfg:
        c = devices_cfg["clusters"]
        try:
            devices = generate_clustered_devices(
                int(c["n_clusters"]),
                int(c["per_cluster"]),
                float(c["area_half_width"]),
                float(c["cluster_spread"]),
                int(c.get("seed", raw.get("seed", 0))),
            )
        except KeyError as exc:
            raise ScenarioError(f"devices.clusters: missing {exc.args[0]}") from None
        except ValueError as exc:
            raise ScenarioError(f"devices.clusters: {exc}") from None
    else:
        raise ScenarioError("devices: need either 'positions' or 'clusters'")

    if devices.ndim != 2 or devices.shape[1] != 2:
        raise ScenarioError(f"devices.positions: expected a list of [x, y] pairs, got shape {devices.shape}")
    m = devices.shape[0]
    if "weights" in devices_cfg:
        weights = np.asarray(devices_cfg["weights"], dtype=float)
        if weights.shape != (m,):
            raise ScenarioError(f"devices.weights: expected {m} entries, got {weights.size}")
    else:
        weights = np.full(m, 1.0 / m)

    try:
        return Scenario(
            devices=devices,
            weights=weights,
            gain=_linear(channel, "gain", "channel"),
            noise_power=_linear(channel, "noise_power", "channel"),
            p0=_linear(channel, "p0", "channel"),
            altitude=float(uav["altitude"]),
            v_max=float(uav["v_max"]),
            slot_duration=float(uav["slot_duration"]),
            n_slots=int(uav["n_slots"]),
            start=np.asarray(uav["start"], dtype=float),
            d_thr=float(uav["d_thr"]),
            epsilon=float(opt.get("epsilon", 1e-4)),
            max_outer_iters=int(opt.get("max_outer_iters", 50)),
            inner_iters=int(opt.get("inner_iters", 1)),
            reoptimize=str(opt.get("reoptimize", "once")),
            stale_rho=bool(opt.get("stale_rho", False)),
            seed=int(raw.get("seed", 0)),
            learning=dict(_section(raw, "learning")),
        )
    except KeyError as exc:
        raise ScenarioError(f"uav.{exc.args[0]}: missing") from None


def resolve_config_path(name_or_path: str | Path) -> Path:
    """Map a bundled preset name (e.g. ``paper_default``) or a file path to a path."""
    path = Path(name_or_path)
    if path.exists():
        return path
    preset = resources.files("uavfl") / "configs" / f"{name_or_path}.yaml"
    if preset.is_file():
        return Path(str(preset))
    raise FileNotFoundError(f"config not found: {name_or_path}")


def load_scenario(path: str | Path) -> Scenario:
    """Parse a YAML config file (or bundled preset name) into a Scenario."""
    path = resolve_config_path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: cannot parse config: {exc}") from None
    return scenario_from_dict(raw)


def generate_clustered_devices(
    n_clusters: int,
    per_cluster: int,
    area_half_width: float,
    cluster_spread: float,
    seed: int,
) -> np.ndarray:
    """Clustered ground devices, shape (n_clusters * per_cluster, 2).

    Cluster centers are uniform in the square shrunk by ``cluster_spread``;
    members are uniform in the disk of radius ``cluster_spread`` around
    their center, so every point stays inside the square.
    """
    if n_clusters < 1 or per_cluster < 1:
        raise ValueError("n_clusters and per_cluster must be >= 1")
    if not 0 <= cluster_spread < area_half_width:
        raise ValueError("cluster_spread must lie in [0, area_half_width)")
    rng = np.random.default_rng(seed)
    inner = area_half_width - cluster_spread
    centers = rng.uniform(-inner, inner, size=(n_clusters, 2))
    radius = cluster_spread * np.sqrt(rng.uniform(size=(n_clusters, per_cluster)))
    angle = rng.uniform(0.0, 2.0 * np.pi, size=(n_clusters, per_cluster))
    offsets = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)
    points = centers[:, None, :] + offsets
    return np.clip(points.reshape(-1, 2), -area_half_width, area_half_width)


def barycenter(devices, weights) -> np.ndarray:
    devices = np.asarray(devices, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if devices.shape[0] != weights.shape[0]:
        raise ValueError(f"{devices.shape[0]} devices but {weights.shape[0]} weights")
    return weights @ devices


def circular_trajectory(center, radius: float, scenario: Scenario) -> Trajectory:
    """N+1 evenly spaced points on a circle, traversed once counter-clockwise.

    The loop starts (and ends) at ``scenario.start`` when it lies on the
    circle, otherwise at angle 0.
    """
    center = np.asarray(center, dtype=float)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    n = scenario.n_slots
    arc = 2.0 * np.pi * radius / n
    if arc > scenario.step_limit:
        raise ValueError(
            f"circle of radius {radius:g} m needs {arc:.4g} m per slot, above V_max*delta = {scenario.step_limit:g} m"
        )
    offset = scenario.start - center
    on_circle = radius > 0 and math.isclose(np.hypot(*offset), radius, rel_tol=1e-9)
    phase0 = math.atan2(offset[1], offset[0]) if on_circle else 0.0
    angles = phase0 + 2.0 * np.pi * np.arange(n + 1) / n
    points = center + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if on_circle:
        points[0] = scenario.start
    points[-1] = points[0]
    return Trajectory(points)


def load_raw_config(path: str | Path) -> dict[str, Any]:
    return yaml.safe_load(resolve_config_path(path).read_text(encoding="utf-8"))
