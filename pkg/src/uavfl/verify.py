"""Numerical self-checks behind ``uavfl verify``.

Each check compares a production routine against an independent oracle
(Monte-Carlo sampling, finite differences, random search) and reports a
pass/fail with the worst observed discrepancy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mse import mse, mse_monte_carlo, objective_gradient, optimal_zeta
from .optimizer import coverage_bound, tangent_coefficients
from .scenario import Scenario


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: worst={self.worst:.3e} tol={self.tolerance:.1e} {self.detail}".rstrip()


def random_instance(rng, m_max: int = 20, n_max: int = 120, noise_range=(0.01, 1.0)):
    """Random (ups, rho, K, zeta, noise) on unit scales; rho is a correlation matrix."""
    m = int(rng.integers(1, m_max + 1))
    n = int(rng.integers(1, n_max + 1))
    A = rng.normal(size=(3 * m + 5, m)) + rng.uniform(0, 2) * rng.normal(size=(3 * m + 5, 1))
    rho = np.corrcoef(A, rowvar=False) if m > 1 else np.ones((1, 1))
    rho = np.atleast_2d(rho)
    ups = rng.uniform(0.1, 1.0, m) / m
    K = rng.uniform(0, 1, (m, n)) * (rng.uniform(size=(m, n)) < 0.4)
    noise = float(rng.uniform(*noise_range))
    zeta = optimal_zeta(K, rho, ups, noise) + rng.normal(0, 0.1, n)
    return ups, rho, K, zeta, noise


def check_mse_oracle(instances: int, trials: int, seed: int, dim: int = 100, rtol: float = 0.02) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(instances):
        ups, rho, K, zeta, noise = random_instance(rng)
        exact = mse(ups, rho, K, zeta, noise, dim)
        sampled = mse_monte_carlo(ups, rho, K, zeta, noise, dim, trials, seed=seed + 1000 + i)
        worst = max(worst, abs(sampled - exact) / exact)
    return CheckResult("mse vs Monte-Carlo", worst <= rtol, worst, rtol, f"({instances} instances, {trials} trials)")


def check_tangent(scenario: Scenario, pairs: int, seed: int, s_max: float = 8e6) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    args = (scenario.d_thr, scenario.altitude, scenario.gain, scenario.p0)
    s_tilde = np.concatenate([rng.uniform(0, s_max, pairs // 2), np.exp(rng.uniform(0, np.log(s_max), pairs - pairs // 2))])
    s = np.concatenate([rng.uniform(0, s_max, pairs // 2), np.exp(rng.uniform(0, np.log(s_max), pairs - pairs // 2))])
    rng.shuffle(s)
    psi, slope = tangent_coefficients(s_tilde, *args)
    f = coverage_bound(s, *args)
    below = np.max((psi + slope * (s - s_tilde) - f) / f)
    at = np.max(np.abs(psi + slope * (s_tilde - s_tilde) - coverage_bound(s_tilde, *args)) / psi)
    grid = np.logspace(0, np.log10(s_max), 20)
    fd = finite_difference_slope(grid, *args)
    _, exact = tangent_coefficients(grid, *args)
    fd_err = float(np.max(np.abs(exact - fd) / np.abs(fd)))
    return [
        CheckResult("tangent below bound", below <= 1e-12, float(max(below, 0.0)), 1e-12, f"({pairs} pairs)"),
        CheckResult("tangent exact at expansion", at <= 1e-12, float(at), 1e-12),
        CheckResult("slope vs finite differences", fd_err <= 1e-6, fd_err, 1e-6, "(20 log-spaced points)"),
    ]


def finite_difference_slope(s, d_thr, altitude, gain, p0):
    s = np.asarray(s, dtype=float)
    h = np.maximum(s, d_thr * d_thr) * 1e-6
    return (coverage_bound(s + h, d_thr, altitude, gain, p0) - coverage_bound(s - h, d_thr, altitude, gain, p0)) / (2 * h)


def check_zeta_optimality(instances: int, seed: int, probes: int = 100) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_grad = 0.0
    ok = True
    for _ in range(instances):
        ups, rho, K, _, noise = random_instance(rng)
        z = optimal_zeta(K, rho, ups, noise)
        best = mse(ups, rho, K, z, noise, 1)
        for _ in range(probes):
            other = z + rng.normal(0, rng.choice([1e-3, 1e-1, 1.0]), z.size)
            ok &= best <= mse(ups, rho, K, other, noise, 1)
        g = np.linalg.norm(objective_gradient(ups, rho, K, z, noise)) / (1 + np.linalg.norm(z))
        worst_grad = max(worst_grad, g)
    return CheckResult("zeta* optimality", ok and worst_grad <= 1e-8, worst_grad, 1e-8, f"({instances} instances)")


def run_checks(scenario: Scenario, trials: int = 10_000, seed: int = 0, instances: int = 10) -> list[CheckResult]:
    results = [check_mse_oracle(instances, trials, seed)]
    results += check_tangent(scenario, 1000, seed)
    results.append(check_zeta_optimality(instances, seed))
    return results
