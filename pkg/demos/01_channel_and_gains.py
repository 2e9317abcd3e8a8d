"""Coverage, line-of-sight gains and the gain matrix for the default layout.

Run:  python demos/01_channel_and_gains.py
"""

import numpy as np

from uavfl.geometry import coverage_matrix, gain_matrix, hovering, static_gain_matrix
from uavfl.scenario import barycenter, circular_trajectory, load_scenario

sc = load_scenario("paper_default")
print(f"{sc.n_devices} devices, N={sc.n_slots} slots, z={sc.altitude:g} m, d_thr={sc.d_thr:g} m")
print(f"peak effective gain sqrt(rho*P0)/z = {sc.peak_gain:.4e}")

# devices form four tight groups
for k, group in enumerate(sc.devices.reshape(4, 5, 2)):
    print(f"  cluster {k}: center ~ {group.mean(axis=0).round(0)}")

# a UAV hovering over the first device only reaches its own cluster
hover = hovering(sc.devices[0], sc.n_slots)
K = gain_matrix(hover, sc)
print("devices covered while hovering over device 0:", np.flatnonzero(K[:, 0] > 0).tolist())

# a wide circle about the barycenter sweeps past only some of the clusters
center = barycenter(sc.devices, sc.weights)
circle = circular_trajectory(center, 0.9 * sc.n_slots * sc.step_limit / (2 * np.pi), sc)
alpha = coverage_matrix(circle, sc)
print(f"circle: max step {circle.step_lengths().max():.1f} m (limit {sc.step_limit:g} m)")
print("slots in which each device is covered:", alpha.sum(axis=1).tolist())

# the static PS at the barycenter hears everyone, but weakly
Ks = static_gain_matrix(center, sc)
print(f"static PS gains range {Ks.min():.2e} .. {Ks.max():.2e}")
