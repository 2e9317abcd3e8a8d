"""Analytic aggregation-error model and its Monte-Carlo oracle.

For weighted stds ``ups`` (b_m * sqrt(var_m)), correlation ``rho``, gain
matrix ``K`` and slot weights ``zeta`` the expected squared error is::

    D * (ups - K zeta)^T rho (ups - K zeta) + D * noise_power / 2 * zeta^T zeta
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

from .airphy import NormalizedBatch


def estimate_correlation(normalized) -> np.ndarray:
    """Empirical second moment of the rows of the normalized D x M batch."""
    if isinstance(normalized, NormalizedBatch):
        normalized = normalized.normalized
    Z = np.asarray(normalized, dtype=float)
    if Z.ndim != 2 or Z.shape[0] < 1:
        raise ValueError(f"need a D x M matrix with D >= 1, got shape {Z.shape}")
    rho = Z.T @ Z / Z.shape[0]
    return 0.5 * (rho + rho.T)


def psd_repair(rho) -> np.ndarray:
    """Symmetrize and clip negative eigenvalues to zero."""
    rho = np.asarray(rho, dtype=float)
    rho = 0.5 * (rho + rho.T)
    lam, Q = np.linalg.eigh(rho)
    if lam.min() >= 0:
        return rho
    fixed = (Q * np.maximum(lam, 0.0)) @ Q.T
    return 0.5 * (fixed + fixed.T)


def weighted_stds(batch: NormalizedBatch, weights) -> np.ndarray:
    return np.asarray(weights, dtype=float) * batch.stds


def _check_shapes(ups, rho, K, zeta=None):
    ups = np.asarray(ups, dtype=float)
    rho = np.asarray(rho, dtype=float)
    K = np.asarray(K, dtype=float)
    m = ups.shape[0]
    if rho.shape != (m, m):
        raise ValueError(f"rho must be {m} x {m}, got {rho.shape}")
    if K.ndim != 2 or K.shape[0] != m:
        raise ValueError(f"K must have {m} rows, got shape {K.shape}")
    if zeta is not None:
        zeta = np.asarray(zeta, dtype=float)
        if zeta.shape != (K.shape[1],):
            raise ValueError(f"zeta must have length {K.shape[1]}, got {zeta.shape}")
    return ups, rho, K, zeta


def objective(ups, rho, K, zeta, noise_power: float) -> float:
    """Per-dimension MSE, i.e. ``mse(...) / D``; the optimizer's objective."""
    ups, rho, K, zeta = _check_shapes(ups, rho, K, zeta)
    r = ups - K @ zeta
    return float(r @ rho @ r + 0.5 * noise_power * zeta @ zeta)


def mse(ups, rho, K, zeta, noise_power: float, dim: int) -> float:
    """Expected squared aggregation error E||e||^2."""
    return dim * objective(ups, rho, K, zeta, noise_power)


def objective_gradient(ups, rho, K, zeta, noise_power: float) -> np.ndarray:
    """Gradient of :func:`objective` with respect to zeta."""
    ups, rho, K, zeta = _check_shapes(ups, rho, K, zeta)
    return -2.0 * K.T @ (rho @ (ups - K @ zeta)) + noise_power * zeta


class SingularSystemError(np.linalg.LinAlgError):
    pass


def optimal_zeta(K, rho, ups, noise_power: float, *, min_norm: bool = False) -> np.ndarray:
    """MSE-optimal slot weights ((noise/2) I + K^T rho K)^{-1} K^T rho ups.

    K is rescaled to unit peak before the symmetric positive-definite solve.
    In the noiseless case a singular system raises unless ``min_norm`` asks
    for the minimum-norm least-squares solution.
    """
    ups, rho, K, _ = _check_shapes(ups, rho, K)
    n = K.shape[1]
    scale = float(np.abs(K).max())
    if scale == 0.0:
        return np.zeros(n)
    Ks = K / scale
    A = 0.5 * noise_power / scale**2 * np.eye(n) + Ks.T @ rho @ Ks
    A = 0.5 * (A + A.T)
    b = Ks.T @ (rho @ ups)
    if noise_power == 0.0 and min_norm:
        return np.linalg.lstsq(A, b, rcond=None)[0] / scale
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            z = scipy.linalg.solve(A, b, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
        if noise_power == 0.0:
            raise SingularSystemError(
                "K^T rho K is singular with zero noise; use min_norm=True for the minimum-norm solution"
            ) from None
        z = scipy.linalg.solve(A, b, assume_a="sym")
    return z / scale


def correlation_factor(rho, tol: float = 1e-8) -> np.ndarray:
    """F with F F^T = rho, from an eigen-decomposition with negative round-off floored."""
    rho = np.asarray(rho, dtype=float)
    rho = 0.5 * (rho + rho.T)
    lam, Q = np.linalg.eigh(rho)
    norm = max(np.abs(lam).max(), 1e-300)
    if lam.min() < -tol * norm:
        raise ValueError(f"rho is not positive semidefinite (min eigenvalue {lam.min():.3g})")
    return Q * np.sqrt(np.maximum(lam, 0.0))


def mse_monte_carlo(
    ups,
    rho,
    K,
    zeta,
    noise_power: float,
    dim: int,
    trials: int,
    seed: int,
    *,
    chunk: int = 500,
    exact_noise: bool = False,
) -> float:
    """Sample-average of ||G (ups - K zeta) - sum_n zeta[n] n_r[n]||^2.

    Rows of G are Gaussian with second moment ``rho``. By default the
    combined noise sum_n zeta[n] n_r[n] is drawn directly as a Gaussian of
    variance noise_power/2 * |zeta|^2 per entry; ``exact_noise`` draws every
    slot's noise separately instead (slower, same distribution).
    """
    ups, rho, K, zeta = _check_shapes(ups, rho, K, zeta)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    F = correlation_factor(rho)
    residual = ups - K @ zeta
    signal_dir = F.T @ residual  # G @ residual = X @ (F^T residual) for X standard normal
    m = ups.shape[0]
    noise_scale = np.sqrt(noise_power / 2.0)
    children = np.random.SeedSequence(seed).spawn((trials + chunk - 1) // chunk)
    values = []
    done = 0
    for ss in children:
        k = min(chunk, trials - done)
        rng = np.random.default_rng(ss)
        X = rng.standard_normal((k, dim, m))
        err = X @ signal_dir
        if noise_power > 0:
            if exact_noise:
                noise = rng.standard_normal((k, dim, zeta.size)) @ zeta
            else:
                noise = rng.standard_normal((k, dim)) * np.linalg.norm(zeta)
            err = err - noise_scale * noise
        values.append(np.sum(err * err, axis=1))
        done += k
    return float(np.sum(np.concatenate(values)) / trials)
