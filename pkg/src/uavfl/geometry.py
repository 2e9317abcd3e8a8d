"""UAV trajectories, coverage, line-of-sight channel gains and the effective gain matrix."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .scenario import Scenario

CLOSURE_TOLERANCE = 1e-6
SPEED_RTOL = 1e-6


class Trajectory:
    """Horizontal UAV path ``u[0..N]`` with ``u[0] == u[N]``.

    Slot 0 is the take-off point; the gains are evaluated at slots 1..N.
    """

    def __init__(self, points):
        points = np.array(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 2:
            raise ValueError(f"trajectory needs an (N+1, 2) array with N >= 1, got shape {points.shape}")
        gap = np.linalg.norm(points[-1] - points[0])
        scale = max(1.0, float(np.abs(points).max()))
        if gap > CLOSURE_TOLERANCE * scale:
            raise ValueError(f"trajectory is not closed: |u[N] - u[0]| = {gap:.3g} m")
        points[-1] = points[0]
        self.points = points
        self.points.setflags(write=False)

    @property
    def n_slots(self) -> int:
        return self.points.shape[0] - 1

    @property
    def slots(self) -> np.ndarray:
        """Positions at slots 1..N, shape (N, 2)."""
        return self.points[1:]

    def step_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    def max_speed_violation(self, step_limit: float) -> float:
        """max_n (|u[n+1]-u[n]|^2 - step_limit^2), clipped at 0."""
        sq = np.sum(np.diff(self.points, axis=0) ** 2, axis=1)
        return float(max(0.0, (sq - step_limit**2).max()))

    def is_feasible(self, step_limit: float, rtol: float = SPEED_RTOL) -> bool:
        sq = np.sum(np.diff(self.points, axis=0) ** 2, axis=1)
        return bool(np.all(sq <= step_limit**2 * (1.0 + rtol)))

    def validate(self, step_limit: float, rtol: float = SPEED_RTOL) -> None:
        if not self.is_feasible(step_limit, rtol):
            worst = self.step_lengths().max()
            raise ValueError(f"trajectory violates the speed limit: step {worst:.6g} m > {step_limit:.6g} m")

    def __eq__(self, other):
        return isinstance(other, Trajectory) and np.array_equal(self.points, other.points)

    def __repr__(self):
        return f"Trajectory(n_slots={self.n_slots})"


def hovering(position, n_slots: int) -> Trajectory:
    return Trajectory(np.repeat(np.asarray(position, dtype=float)[None, :], n_slots + 1, axis=0))


def coverage_indicator(u, v, d_thr: float):
    """1 when the horizontal distance |u - v| is at most ``d_thr`` (inclusive)."""
    diff = np.asarray(u, dtype=float) - np.asarray(v, dtype=float)
    return (np.sum(diff * diff, axis=-1) <= d_thr**2).astype(int)


def channel_coefficient(u, v, altitude: float, gain: float, phase: float = 0.0) -> complex:
    """Free-space LoS coefficient sqrt(gain / d^2) * exp(j*phase)."""
    s = float(np.sum((np.asarray(u, dtype=float) - np.asarray(v, dtype=float)) ** 2))
    return complex(np.sqrt(gain / (altitude**2 + s)) * np.exp(1j * phase))


def squared_distances(slots, devices) -> np.ndarray:
    """|u[n] - v_m|^2 as an (M, N) array."""
    slots = np.asarray(slots, dtype=float)
    devices = np.asarray(devices, dtype=float)
    diff = slots[None, :, :] - devices[:, None, :]
    return np.einsum("mnk,mnk->mn", diff, diff)


def coverage_matrix(traj: Trajectory, scenario: Scenario) -> np.ndarray:
    """Binary alpha_m[n] for slots 1..N, shape (M, N)."""
    return (squared_distances(traj.slots, scenario.devices) <= scenario.d_thr**2).astype(int)


def gain_matrix(traj: Trajectory, scenario: Scenario) -> np.ndarray:
    """Effective uplink magnitudes K (M x N), zero for out-of-coverage pairs."""
    s = squared_distances(traj.slots, scenario.devices)
    amplitude = np.sqrt(scenario.gain * scenario.p0) / np.sqrt(scenario.altitude**2 + s)
    return np.where(s <= scenario.d_thr**2, amplitude, 0.0)


def static_gain_matrix(position, scenario: Scenario) -> np.ndarray:
    """Gains for a PS hovering at ``position`` with the coverage limit waived."""
    s = np.sum((scenario.devices - np.asarray(position, dtype=float)) ** 2, axis=1)
    column = np.sqrt(scenario.gain * scenario.p0) / np.sqrt(scenario.altitude**2 + s)
    return np.repeat(column[:, None], scenario.n_slots, axis=1)


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", "x", "y"])
        for n, (x, y) in enumerate(traj.points):
            writer.writerow([n, repr(float(x)), repr(float(y))])


def read_trajectory_csv(path: str | Path) -> Trajectory:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: int(r["n"]))
    return Trajectory([[float(r["x"]), float(r["y"])] for r in rows])
