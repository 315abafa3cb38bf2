"""Multi-layer approximate message passing with rotationally invariant designs."""

__version__ = "0.1.0"

from .amp import AmpTrajectory, onsager_coefficients, run_ml_rigamp
from .cumulants import (
    FreeCumulantTable,
    MomentTable,
    analytic_cumulants,
    analytic_moments_beta,
    estimate_moments_hutchinson,
    exact_moments,
    moments_to_cumulants,
)
from .ensemble import (
    DesignMatrix,
    Instance,
    NetworkSpec,
    SpectrumSpec,
    build_design,
    generate_instance,
    sample_haar_orthogonal,
    sample_singular_values,
    trial_rng,
)
from .se import SeTrajectory, run_state_evolution

__all__ = [
    "AmpTrajectory",
    "DesignMatrix",
    "FreeCumulantTable",
    "Instance",
    "MomentTable",
    "NetworkSpec",
    "SeTrajectory",
    "SpectrumSpec",
    "analytic_cumulants",
    "analytic_moments_beta",
    "build_design",
    "estimate_moments_hutchinson",
    "exact_moments",
    "generate_instance",
    "moments_to_cumulants",
    "onsager_coefficients",
    "run_ml_rigamp",
    "run_state_evolution",
    "sample_haar_orthogonal",
    "sample_singular_values",
    "trial_rng",
]
