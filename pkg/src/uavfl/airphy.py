"""Signal-level simulation of hierarchical over-the-air gradient aggregation.

Pipeline for one training round::

    normalize_gradients -> modulate -> simulate_partial_aggregation
        -> global_aggregate_and_reconstruct

Noise for slot ``n`` is drawn from ``default_rng([noise_seed, n])`` and the
channel phases from ``default_rng([noise_seed, PHASE_STREAM])``, so every
slot can be simulated independently and reproducibly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Trajectory, gain_matrix

PHASE_STREAM = 2**31 - 1


@dataclass(frozen=True)
class NormalizedBatch:
    """Zero-mean, unit-variance gradient columns plus the scalars to undo it.

    ``normalized`` is D x M; ``means`` and ``stds`` have length M.
    """

    normalized: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    @property
    def dim(self) -> int:
        return self.normalized.shape[0]

    @property
    def n_devices(self) -> int:
        return self.normalized.shape[1]


def _as_batch(G) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    if G.ndim != 2 or G.shape[1] < 1:
        raise ValueError(f"gradients must be a D x M matrix, got shape {G.shape}")
    if G.shape[0] % 2:
        raise ValueError(f"gradient dimension D = {G.shape[0]} must be even")
    return G


def normalize_gradients(G, allow_constant: bool = False) -> NormalizedBatch:
    """Standardize each column with its population mean and variance.

    A constant column cannot be standardized. With ``allow_constant`` it is
    mapped to an all-zero normalized column with std 0, which still
    reconstructs exactly through the mean.
    """
    G = _as_batch(G)
    means = G.mean(axis=0)
    centered = G - means
    variances = np.mean(centered**2, axis=0)
    constant = variances <= 0.0
    if np.any(constant) and not allow_constant:
        idx = np.flatnonzero(constant).tolist()
        raise ValueError(f"gradient columns {idx} have zero variance; pass allow_constant=True to send them as zeros")
    stds = np.sqrt(variances)
    safe = np.where(constant, 1.0, stds)
    normalized = np.where(constant, 0.0, centered / safe)
    return NormalizedBatch(normalized, means, stds)


def modulate(g) -> np.ndarray:
    """Pack a real length-D vector into D/2 complex symbols (first half real, second half imaginary)."""
    g = np.asarray(g, dtype=float)
    if g.shape[0] % 2:
        raise ValueError(f"cannot modulate odd length {g.shape[0]}")
    c = g.shape[0] // 2
    return g[:c] + 1j * g[c:]


def demodulate(r) -> np.ndarray:
    r = np.asarray(r)
    return np.concatenate([r.real, r.imag])


def draw_phases(noise_seed: int, n_devices: int, n_slots: int) -> np.ndarray:
    rng = np.random.default_rng([noise_seed, PHASE_STREAM])
    return rng.uniform(0.0, 2.0 * np.pi, size=(n_devices, n_slots))


def slot_noise(noise_seed: int, slot: int, n_symbols: int, noise_power: float) -> np.ndarray:
    """CN(0, noise_power) samples for one slot (each of Re/Im has variance noise_power/2)."""
    rng = np.random.default_rng([noise_seed, slot])
    white = rng.standard_normal((2, n_symbols))
    return np.sqrt(noise_power / 2.0) * (white[0] + 1j * white[1])


def simulate_partial_aggregation(
    batch: NormalizedBatch,
    K,
    noise_power: float,
    noise_seed: int,
    phases=None,
) -> np.ndarray:
    """Received slot signals y[n], shape (N, C).

    Every device pre-rotates by the conjugate channel phase, so the
    superposition only sees the real magnitudes in ``K``.
    """
    K = np.asarray(K, dtype=float)
    m, n_slots = K.shape
    if m != batch.n_devices:
        raise ValueError(f"gain matrix has {m} rows but the batch has {batch.n_devices} devices")
    if noise_power < 0:
        raise ValueError("noise_power must be >= 0")
    if phases is None:
        phases = draw_phases(noise_seed, m, n_slots)
    phases = np.asarray(phases, dtype=float)
    if phases.shape != K.shape:
        raise ValueError(f"phases shape {phases.shape} does not match K {K.shape}")

    symbols = np.stack([modulate(batch.normalized[:, j]) for j in range(m)])  # (M, C)
    channel_phase = np.exp(1j * phases)
    effective = K * channel_phase * np.conj(channel_phase)  # h * beta / sqrt(P0) folded into K
    y = effective.T @ symbols
    if noise_power > 0:
        c = symbols.shape[1]
        y = y + np.stack([slot_noise(noise_seed, n, c, noise_power) for n in range(n_slots)])
    return y


def global_aggregate_and_reconstruct(slots, zeta, means, weights) -> np.ndarray:
    """Combine slot signals with real weights and undo the normalization offset."""
    slots = np.asarray(slots)
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape != (slots.shape[0],):
        raise ValueError(f"zeta has length {zeta.size}, expected {slots.shape[0]}")
    means = np.asarray(means, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if means.shape != weights.shape:
        raise ValueError("means and weights must have the same length")
    a = zeta @ slots
    return demodulate(a) + float(weights @ means)


def aggregate_over_the_air(G, K, zeta, weights, noise_power, noise_seed, *, allow_constant=False, phases=None):
    """Full round for an explicit gain matrix; returns (g_hat, e)."""
    G = _as_batch(G)
    weights = np.asarray(weights, dtype=float)
    batch = normalize_gradients(G, allow_constant=allow_constant)
    y = simulate_partial_aggregation(batch, K, noise_power, noise_seed, phases=phases)
    g_hat = global_aggregate_and_reconstruct(y, zeta, batch.means, weights)
    return g_hat, G @ weights - g_hat


def simulate_round(G, traj: Trajectory, zeta, scenario, noise_seed: int, *, allow_constant: bool = False):
    """Over-the-air aggregate of ``G`` along ``traj``; returns (g_hat, e) with e = ideal - g_hat."""
    K = gain_matrix(traj, scenario)
    return aggregate_over_the_air(
        G, K, zeta, scenario.weights, scenario.noise_power, noise_seed, allow_constant=allow_constant
    )
