"""Few-step probability-flow ODE solvers with learned multistep coefficients."""

from ._core import (
    Dataset,
    MixtureModel,
    NoiseSchedule,
    Policy,
    build_dataset,
    convergence_order,
    distill,
    energy_distance,
    grid_times,
    load_dataset,
    normalize_advantage,
    reference_solution,
    reward,
    sample,
    sample_prior,
    synthesize_mixture,
    train_policy,
)

__all__ = [
    "Dataset",
    "MixtureModel",
    "NoiseSchedule",
    "Policy",
    "build_dataset",
    "convergence_order",
    "distill",
    "energy_distance",
    "grid_times",
    "load_dataset",
    "normalize_advantage",
    "reference_solution",
    "reward",
    "sample",
    "sample_prior",
    "synthesize_mixture",
    "train_policy",
]
