"""UAV-assisted hierarchical over-the-air federated learning: channel and aggregation
simulation, analytic MSE model, and joint trajectory / aggregation-weight optimization."""

__version__ = "0.1.0"

from .airphy import (
    NormalizedBatch,
    global_aggregate_and_reconstruct,
    modulate,
    normalize_gradients,
    simulate_partial_aggregation,
    simulate_round,
)
from .geometry import Trajectory, channel_coefficient, coverage_indicator, gain_matrix
from .mse import estimate_correlation, mse, mse_monte_carlo, optimal_zeta
from .optimizer import (
    OptimizationResult,
    coverage_bound,
    finalize_rounding,
    optimize_alternating,
    solve_subproblem,
    tangent_coefficients,
)
from .scenario import Scenario, barycenter, circular_trajectory, generate_clustered_devices, load_scenario

__all__ = [
    "NormalizedBatch",
    "OptimizationResult",
    "Scenario",
    "Trajectory",
    "barycenter",
    "channel_coefficient",
    "circular_trajectory",
    "coverage_bound",
    "coverage_indicator",
    "estimate_correlation",
    "finalize_rounding",
    "gain_matrix",
    "generate_clustered_devices",
    "global_aggregate_and_reconstruct",
    "load_scenario",
    "modulate",
    "mse",
    "mse_monte_carlo",
    "normalize_gradients",
    "optimal_zeta",
    "optimize_alternating",
    "simulate_partial_aggregation",
    "simulate_round",
    "solve_subproblem",
    "tangent_coefficients",
]
