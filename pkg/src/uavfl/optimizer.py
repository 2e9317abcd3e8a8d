"""Joint UAV trajectory / aggregation-weight optimization.

The binary coverage indicator is relaxed to ``d_thr^2 / (d_thr^2 + s)``, which
turns the gain constraint into ``0 <= K <= coverage_bound(s)`` with ``s`` the
squared horizontal distance. ``coverage_bound`` is convex in ``s``, so its
tangent is a global under-estimator and the (K, trajectory) block becomes a
convex program around the current trajectory. The alternating loop then
switches between that program and the closed-form slot weights.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import cvxpy as cp
import numpy as np

from .geometry import Trajectory, coverage_matrix, gain_matrix, hovering, squared_distances, static_gain_matrix
from .mse import correlation_factor, objective, optimal_zeta
from .scenario import Scenario, barycenter, circular_trajectory

log = logging.getLogger(__name__)

SPEED_MARGIN = 1e-6
SOLVER_OPTIONS = {"CLARABEL": dict(tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12, tol_ktratio=1e-8)}


def coverage_bound(s, d_thr: float, altitude: float, gain: float, p0: float):
    """Relaxed gain ceiling d_thr^2 sqrt(gain p0) / ((d_thr^2 + s) sqrt(altitude^2 + s))."""
    s = np.asarray(s, dtype=float)
    d2 = d_thr * d_thr
    return d2 * math.sqrt(gain * p0) / ((d2 + s) * np.sqrt(altitude * altitude + s))


def tangent_coefficients(s_tilde, d_thr: float, altitude: float, gain: float, p0: float, formula: str = "exact"):
    """Value and slope of :func:`coverage_bound` at ``s_tilde``.

    ``formula="printed"`` returns the slope expression as typeset in the
    source derivation, which drops the altitude term and a square; it is kept
    only for comparison and is not a valid derivative.
    """
    s = np.asarray(s_tilde, dtype=float)
    d2 = d_thr * d_thr
    z2 = altitude * altitude
    amp = math.sqrt(gain * p0)
    psi = coverage_bound(s, d_thr, altitude, gain, p0)
    if formula == "exact":
        slope = -d2 * amp * (z2 + 0.5 * d2 + 1.5 * s) / ((d2 + s) ** 2 * (z2 + s) ** 1.5)
    elif formula == "printed":
        slope = -d2 * amp * (1.0 + 0.5 * d2 + 1.5 * np.sqrt(s)) / ((d2 + s) ** 2 * (z2 + s) ** 1.5)
    else:
        raise ValueError(f"unknown formula {formula!r}")
    return psi, slope


@dataclass(frozen=True)
class SubproblemSpec:
    """Convexified (K, trajectory) problem around the expansion trajectory."""

    expansion: Trajectory
    zeta: np.ndarray
    psi: np.ndarray
    psi_prime: np.ndarray
    s_tilde: np.ndarray
    devices: np.ndarray
    start: np.ndarray
    step_limit: float
    length_scale: float
    gain_scale: float

    def __post_init__(self):
        m, n = self.psi.shape
        if self.psi_prime.shape != (m, n) or self.s_tilde.shape != (m, n):
            raise ValueError("psi, psi_prime and s_tilde must share one (M, N) shape")
        if self.zeta.shape != (n,) or self.expansion.n_slots != n:
            raise ValueError("zeta and expansion trajectory must have N entries / slots")
        if not np.all(self.psi > 0):
            raise ValueError("tangent values psi must be positive")
        if np.any(self.psi_prime > 0):
            raise ValueError("tangent slopes psi_prime must be non-positive")

    def upper_bound(self, traj: Trajectory) -> np.ndarray:
        """Linearized gain ceiling evaluated at ``traj``."""
        s = squared_distances(traj.slots, self.devices)
        return self.psi + self.psi_prime * (s - self.s_tilde)


def build_subproblem(traj: Trajectory, zeta, scenario: Scenario, formula: str = "exact") -> SubproblemSpec:
    s = squared_distances(traj.slots, scenario.devices)
    psi, slope = tangent_coefficients(s, scenario.d_thr, scenario.altitude, scenario.gain, scenario.p0, formula)
    return SubproblemSpec(
        expansion=traj,
        zeta=np.asarray(zeta, dtype=float).copy(),
        psi=psi,
        psi_prime=slope,
        s_tilde=s,
        devices=scenario.devices,
        start=scenario.start,
        step_limit=scenario.step_limit,
        length_scale=scenario.d_thr,
        gain_scale=scenario.peak_gain,
    )


def block_objective(K, zeta, rho, ups) -> float:
    """zeta^T K^T rho K zeta - 2 ups^T rho K zeta (objective minus terms constant in K)."""
    w = np.asarray(K) @ np.asarray(zeta)
    return float(w @ rho @ w - 2.0 * ups @ rho @ w)


class _Program:
    """The convexified block in solver units (lengths / d_thr, gains / peak gain)."""

    def __init__(self, zhat, offset, slope, factor, linear, devices, start, radius_sq):
        m, n = offset.shape
        self.kappa = cp.Variable((m, n))
        w = self.kappa @ zhat
        if n > 1:
            self.free = cp.Variable((n - 1, 2))
            slots = cp.vstack([self.free, start[None, :]])
        else:
            self.free = None
            slots = cp.Constant(start[None, :])
        path = cp.vstack([start[None, :], slots])
        self.ceiling = []
        for j in range(m):
            sq = cp.sum(cp.square(slots - devices[j]), axis=1)
            self.ceiling.append(self.kappa[j, :] <= offset[j] + cp.multiply(slope[j], sq))
        self.floor = self.kappa >= 0
        self.speed = cp.sum(cp.square(path[1:] - path[:-1]), axis=1) <= radius_sq
        self.problem = cp.Problem(
            cp.Minimize(cp.sum_squares(factor @ w) - 2.0 * linear @ w),
            [*self.ceiling, self.floor, self.speed],
        )


@dataclass
class SubproblemResult:
    gain: np.ndarray
    trajectory: Trajectory
    objective: float
    warm_objective: float
    kkt_residual: float
    accepted: bool
    status: str


def solve_subproblem(spec: SubproblemSpec, rho, ups, warm_gain, *, solver: str = "CLARABEL") -> SubproblemResult:
    """Minimize the K-block objective over (K, u[1..N-1]) subject to the tangent gain
    ceiling, the speed limit and u[0] = u[N] = start.

    The returned point is feasible and never worse than the warm start; if the
    solver's answer cannot be certified (status, speed feasibility or
    objective) the warm start is returned with ``accepted=False``.
    """
    rho = np.asarray(rho, dtype=float)
    ups = np.asarray(ups, dtype=float)
    warm_gain = np.asarray(warm_gain, dtype=float)
    m, n = spec.psi.shape
    if warm_gain.shape != (m, n):
        raise ValueError(f"warm gain must be {m} x {n}")
    warm = spec.expansion
    if not np.allclose(warm.points[0], spec.start, rtol=0, atol=1e-9 * max(1.0, np.abs(spec.start).max())):
        raise ValueError("warm start trajectory does not begin at the configured start point")
    if not warm.is_feasible(spec.step_limit):
        raise ValueError("warm start trajectory violates the speed limit")
    tol = 1e-9 * spec.gain_scale
    if np.any(warm_gain < -tol) or np.any(warm_gain > spec.psi + tol):
        raise ValueError("warm start gains violate 0 <= K <= psi")
    warm_obj = block_objective(warm_gain, spec.zeta, rho, ups)

    L, k0 = spec.length_scale, spec.gain_scale
    ups_scale = float(np.linalg.norm(ups)) or 1.0
    zhat = spec.zeta * k0 / ups_scale
    uhat = ups / ups_scale
    psi = spec.psi / k0
    slope = spec.psi_prime * L * L / k0
    s_tilde = spec.s_tilde / (L * L)
    devices = spec.devices / L
    start = spec.start / L
    radius_sq = (spec.step_limit / L) ** 2

    prog = _Program(
        zhat, psi - slope * s_tilde, slope, correlation_factor(rho).T, rho @ uhat, devices, start,
        radius_sq * (1.0 - SPEED_MARGIN),
    )
    kappa, free, ceiling, floor, speed, problem = prog.kappa, prog.free, prog.ceiling, prog.floor, prog.speed, prog.problem

    def rejected(status):
        return SubproblemResult(warm_gain.copy(), warm, warm_obj, warm_obj, math.nan, False, status)

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            problem.solve(solver=solver, canon_backend=cp.SCIPY_CANON_BACKEND, **SOLVER_OPTIONS.get(solver, {}))
    except cp.SolverError as exc:
        log.warning("subproblem solver failed: %s", exc)
        return rejected("solver_error")
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or kappa.value is None:
        return rejected(problem.status)

    points = np.vstack([spec.start, free.value * L, spec.start]) if free is not None else np.vstack([spec.start] * 2)
    traj = Trajectory(points)
    steps_sq = np.sum(np.diff(traj.points, axis=0) ** 2, axis=1)
    if np.any(steps_sq > spec.step_limit**2):
        return rejected("speed_violation")
    bound = spec.upper_bound(traj)
    if bound.min() < -1e-7 * k0:
        return rejected("ceiling_violation")
    K = np.clip(kappa.value * k0, 0.0, np.maximum(bound, 0.0))
    obj = block_objective(K, spec.zeta, rho, ups)
    if obj > warm_obj:
        return rejected("no_decrease")

    # stationarity / complementarity with the solver's multipliers, in solver units
    lam = np.vstack([np.asarray(c.dual_value, dtype=float).reshape(n) for c in ceiling])
    nu = np.asarray(floor.dual_value, dtype=float).reshape(m, n)
    mu = np.asarray(speed.dual_value, dtype=float).reshape(n)
    kap = K / k0
    wv = kap @ zhat
    phi = float(wv @ rho @ wv - 2.0 * uhat @ rho @ wv)
    grad_k = np.outer(2.0 * rho @ (wv - uhat), zhat)
    stat_k = grad_k + lam - nu
    p = traj.points / L
    s_hat = squared_distances(p[1:], devices)
    c_ceiling = kap - psi - slope * (s_hat - s_tilde)
    c_speed = np.sum(np.diff(p, axis=0) ** 2, axis=1) - radius_sq * (1.0 - SPEED_MARGIN)
    parts = [np.abs(stat_k).max(), np.abs(lam * c_ceiling).max(), np.abs(nu * kap).max(), np.abs(mu * c_speed).max()]
    if n > 1:
        u = p[1:n]
        pull = np.einsum("mn,mnk->nk", lam[:, : n - 1] * (-slope[:, : n - 1]), 2.0 * (u[None] - devices[:, None]))
        steps = np.diff(p, axis=0)
        stat_u = pull + 2.0 * mu[: n - 1, None] * steps[: n - 1] - 2.0 * mu[1:n, None] * steps[1:n]
        parts.append(np.abs(stat_u).max())
    parts.append(max(0.0, c_ceiling.max(), c_speed.max()))
    residual = float(max(parts) / (1.0 + abs(phi)))
    return SubproblemResult(K, traj, obj, warm_obj, residual, True, problem.status)


@dataclass
class RoundedSolution:
    alpha: np.ndarray
    gain: np.ndarray
    zeta: np.ndarray
    objective: float
    mse: float


def finalize_rounding(traj: Trajectory, scenario: Scenario, rho, ups, dim: int = 1) -> RoundedSolution:
    """Binary coverage from the final trajectory, exact gains and re-optimized slot weights."""
    alpha = coverage_matrix(traj, scenario)
    K = gain_matrix(traj, scenario)
    zeta = optimal_zeta(K, rho, ups, scenario.noise_power)
    obj = objective(ups, rho, K, zeta, scenario.noise_power)
    return RoundedSolution(alpha, K, zeta, obj, dim * obj)


@dataclass
class TraceRow:
    outer_iter: int
    objective: float
    max_constraint_violation: float
    zeta_norm: float


@dataclass
class OptimizationResult:
    trajectory: Trajectory
    zeta: np.ndarray
    alpha: np.ndarray
    gain: np.ndarray
    relaxed_gain: np.ndarray
    relaxed_zeta: np.ndarray
    trace: list[TraceRow] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    rounded_objective: float = math.nan

    @property
    def objectives(self) -> np.ndarray:
        return np.array([row.objective for row in self.trace])


def relaxed_violation(K, traj: Trajectory, scenario: Scenario) -> float:
    s = squared_distances(traj.slots, scenario.devices)
    ceiling = coverage_bound(s, scenario.d_thr, scenario.altitude, scenario.gain, scenario.p0)
    over = max(0.0, float((K - ceiling).max()), float((-K).max()))
    return max(over / scenario.peak_gain, traj.max_speed_violation(scenario.step_limit) / scenario.step_limit**2)


def optimize_alternating(
    scenario: Scenario,
    rho,
    ups,
    initial: Trajectory,
    initial_zeta=None,
    *,
    max_outer_iters: int | None = None,
    inner_iters: int | None = None,
    formula: str = "exact",
    dim: int = 1,
) -> OptimizationResult:
    """Alternate between the convexified (K, trajectory) block and the optimal slot weights.

    Stops when the fractional decrease of the per-dimension objective drops
    below ``scenario.epsilon`` or after ``max_outer_iters`` rounds, then
    rounds coverage to binary from the final trajectory.
    """
    rho = np.asarray(rho, dtype=float)
    ups = np.asarray(ups, dtype=float)
    max_outer = scenario.max_outer_iters if max_outer_iters is None else int(max_outer_iters)
    inner = scenario.inner_iters if inner_iters is None else int(inner_iters)
    if initial.n_slots != scenario.n_slots:
        raise ValueError(f"initial trajectory has {initial.n_slots} slots, scenario needs {scenario.n_slots}")
    if not np.array_equal(initial.points[0], scenario.start):
        raise ValueError("initial trajectory must start at the configured start point")
    initial.validate(scenario.step_limit)

    noise = scenario.noise_power
    s0 = squared_distances(initial.slots, scenario.devices)
    K = coverage_bound(s0, scenario.d_thr, scenario.altitude, scenario.gain, scenario.p0)
    traj = initial

    if not np.any(rho):
        zeta = np.zeros(scenario.n_slots)
        row = TraceRow(0, objective(ups, rho, K, zeta, noise), relaxed_violation(K, traj, scenario), 0.0)
        final = finalize_rounding(traj, scenario, rho, ups, dim)
        return OptimizationResult(traj, np.zeros_like(zeta), final.alpha, final.gain, K, zeta, [row], 0, True, final.objective)

    zeta = optimal_zeta(K, rho, ups, noise) if initial_zeta is None else np.asarray(initial_zeta, dtype=float)
    obj = objective(ups, rho, K, zeta, noise)
    trace = [TraceRow(0, obj, relaxed_violation(K, traj, scenario), float(np.linalg.norm(zeta)))]
    converged = False
    iterations = 0
    for it in range(1, max_outer + 1):
        new_K, new_traj = K, traj
        for _ in range(inner):
            spec = build_subproblem(new_traj, zeta, scenario, formula)
            res = solve_subproblem(spec, rho, ups, np.minimum(new_K, spec.psi))
            new_K, new_traj = res.gain, res.trajectory
            if not res.accepted:
                break
        new_zeta = optimal_zeta(new_K, rho, ups, noise)
        new_obj = objective(ups, rho, new_K, new_zeta, noise)
        iterations = it
        if new_obj > obj:
            log.debug("outer iteration %d made no progress (%.6g > %.6g)", it, new_obj, obj)
            converged = True
            break
        decrease = (obj - new_obj) / abs(obj) if obj else 0.0
        K, traj, zeta, obj = new_K, new_traj, new_zeta, new_obj
        trace.append(TraceRow(it, obj, relaxed_violation(K, traj, scenario), float(np.linalg.norm(zeta))))
        log.debug("outer %d objective %.8g decrease %.3g", it, obj, decrease)
        if decrease < scenario.epsilon:
            converged = True
            break

    final = finalize_rounding(traj, scenario, rho, ups, dim)
    return OptimizationResult(
        trajectory=traj,
        zeta=final.zeta,
        alpha=final.alpha,
        gain=final.gain,
        relaxed_gain=K,
        relaxed_zeta=zeta,
        trace=trace,
        iterations=iterations,
        converged=converged,
        rounded_objective=final.objective,
    )


def write_trace_csv(result: OptimizationResult, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["outer_iter", "objective", "max_constraint_violation", "zeta_norm"])
        for row in result.trace:
            writer.writerow([row.outer_iter, repr(row.objective), repr(row.max_constraint_violation), repr(row.zeta_norm)])


# ---------------------------------------------------------------- baselines


def exact_objective(traj: Trajectory, scenario: Scenario, rho, ups) -> float:
    K = gain_matrix(traj, scenario)
    return objective(ups, rho, K, optimal_zeta(K, rho, ups, scenario.noise_power), scenario.noise_power)


def max_circle_radius(scenario: Scenario) -> float:
    return scenario.n_slots * scenario.step_limit / (2.0 * np.pi)


def _center_grid(scenario: Scenario, n_centers: int) -> np.ndarray:
    lo = scenario.devices.min(axis=0)
    hi = scenario.devices.max(axis=0)
    xs = np.linspace(lo[0], hi[0], n_centers)
    ys = np.linspace(lo[1], hi[1], n_centers)
    return np.array([[x, y] for x in xs for y in ys])


@dataclass
class CircleChoice:
    center: np.ndarray
    radius: float
    trajectory: Trajectory
    objective: float


def tune_circular(scenario: Scenario, rho, ups, n_centers: int = 11, n_radii: int = 12) -> CircleChoice:
    """Grid search over centers in the device bounding box and feasible radii,
    scoring each circle by the exact per-dimension MSE with optimal weights."""
    r_max = max_circle_radius(scenario) * (1.0 - 1e-9)
    best = None
    for center in _center_grid(scenario, n_centers):
        for radius in np.linspace(0.0, r_max, n_radii):
            traj = circular_trajectory(center, radius, scenario)
            value = exact_objective(traj, scenario, rho, ups)
            if best is None or value < best.objective:
                best = CircleChoice(center, float(radius), traj, value)
    return best


def circle_through_start(scenario: Scenario, rho, ups, n_centers: int = 11) -> CircleChoice:
    """Best circle (over a center grid) that passes through the start point; hovering at
    the start if no such circle respects the speed limit."""
    r_max = max_circle_radius(scenario)
    best = CircleChoice(scenario.start, 0.0, hovering(scenario.start, scenario.n_slots), math.inf)
    best.objective = exact_objective(best.trajectory, scenario, rho, ups)
    for center in _center_grid(scenario, n_centers):
        radius = float(np.linalg.norm(scenario.start - center))
        if radius == 0.0 or radius > r_max:
            continue
        traj = circular_trajectory(center, radius, scenario)
        value = exact_objective(traj, scenario, rho, ups)
        if value < best.objective:
            best = CircleChoice(center, radius, traj, value)
    return best


@dataclass
class StaticChoice:
    position: np.ndarray
    gain: np.ndarray
    zeta: np.ndarray
    objective: float


def static_ps(scenario: Scenario, rho, ups) -> StaticChoice:
    """Ground-equivalent PS hovering at the device barycenter with coverage waived."""
    pos = barycenter(scenario.devices, scenario.weights)
    K = static_gain_matrix(pos, scenario)
    zeta = optimal_zeta(K, rho, ups, scenario.noise_power)
    return StaticChoice(pos, K, zeta, objective(ups, rho, K, zeta, scenario.noise_power))
