"""The aggregation-error model against a direct simulation of the radio pipeline.

Run:  python demos/02_mse_model.py
"""

import numpy as np

from uavfl.airphy import aggregate_over_the_air, normalize_gradients
from uavfl.mse import estimate_correlation, mse, mse_monte_carlo, optimal_zeta, weighted_stds

rng = np.random.default_rng(0)
D, M, N = 64, 5, 8
noise = 0.02

# correlated gradients: a shared direction plus device-specific parts
G = rng.normal(size=(D, 1)) + 0.7 * rng.normal(size=(D, M))
weights = np.full(M, 1 / M)
batch = normalize_gradients(G)
rho = estimate_correlation(batch)
ups = weighted_stds(batch, weights)
print("empirical correlation (rounded):")
print(rho.round(2))

K = rng.uniform(0, 1, (M, N)) * (rng.uniform(size=(M, N)) < 0.5)
zeta = optimal_zeta(K, rho, ups, noise)
print(f"analytic MSE with optimal weights: {mse(ups, rho, K, zeta, noise, D):.5f}")

# average the squared error of the simulated pipeline over noise draws
errs = [np.sum(aggregate_over_the_air(G, K, zeta, weights, noise, s)[1] ** 2) for s in range(3000)]
print(f"simulated mean |e|^2 over 3000 noise draws: {np.mean(errs):.5f}")

# the Gaussian oracle needs only the second moments
print(f"Monte-Carlo oracle: {mse_monte_carlo(ups, rho, K, zeta, noise, D, trials=5000, seed=1):.5f}")

# any other choice of weights does worse
for scale in (0.5, 0.9, 1.1, 2.0):
    print(f"  zeta* x {scale:<3}: {mse(ups, rho, K, scale * zeta, noise, D):.5f}")
