"""Geometrically constrained independent vector analysis toolkit."""

from .errors import (
    ConfigError,
    CostOverflowError,
    DegenerateReferenceError,
    GcivaError,
    InvalidInputError,
    SingularUpdateError,
)
from .iva import (
    CostTrace,
    DemixingStack,
    PriorConfig,
    SourceModel,
    demix,
    demixed_energies,
    evaluate_cost,
    gradient_update,
    penalty_gradient,
    prior_matrices,
    prior_matrix,
    project_back,
    run_gradient_iva,
    run_informed_iva,
    update_constrained,
    update_unconstrained,
    weighted_covariance,
)
from .metrics import SeparationReport, decompose_sir_sdr, match_permutation
from .scene import (
    ArrayGeometry,
    SceneSpec,
    fractional_delay,
    simulate_mixture,
    steering_stack,
    steering_vector,
    synthetic_sources,
)
from .stft import ComplexSpectrogram, StftConfig, analyze, synthesize

__version__ = "0.1.0"

__all__ = [
    "ArrayGeometry",
    "ComplexSpectrogram",
    "ConfigError",
    "CostOverflowError",
    "CostTrace",
    "DegenerateReferenceError",
    "DemixingStack",
    "GcivaError",
    "InvalidInputError",
    "PriorConfig",
    "SceneSpec",
    "SeparationReport",
    "SingularUpdateError",
    "SourceModel",
    "StftConfig",
    "analyze",
    "decompose_sir_sdr",
    "demix",
    "demixed_energies",
    "evaluate_cost",
    "fractional_delay",
    "gradient_update",
    "match_permutation",
    "penalty_gradient",
    "prior_matrices",
    "prior_matrix",
    "project_back",
    "run_gradient_iva",
    "run_informed_iva",
    "simulate_mixture",
    "steering_stack",
    "steering_vector",
    "synthesize",
    "synthetic_sources",
    "update_constrained",
    "update_unconstrained",
    "weighted_covariance",
]
