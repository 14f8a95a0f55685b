"""Trajectory simulation and uncertainty propagation for Gaussian process dynamics models."""

from .basis import (BasisExpansion, FunctionSample, condition_weights, draw_function_samples,
                    linear_exact_expansion, linear_times_base, nystrom_expansion, rff_expansion,
                    simulate_with_function_samples)
from .config import ExperimentConfig, parse_config
from .errors import (ConfigInvalid, DegenerateSpectrumError, DimensionMismatchError, GpTrajError,
                     InsufficientSamplesError, NonFiniteError, NotPositiveDefiniteError,
                     UnsupportedMethodError)
from .experiment import ComparisonReport, empirical_moments, run_experiment
from .gp import GpModel, Horizon, condition
from .kernels import (Callback, DistanceCoupled, IndependentOutputs, Linear, LinearMap, Product,
                      SquaredExponential, ZeroKernel, ZeroMean)
from .linalg import CholFactor, GaussianDist, cholesky, cholesky_extend, gaussian_condition, mvn_sample
from .propagation import MomentSequence, propagate_independent, propagate_linearized, propagate_linearized_controlled
from .proxy import ProxySpec, proxy_moments_closed_form, proxy_simulate
from .sampling import TrajectoryBatch, resume_extend, sample_trajectories, sample_trajectories_controlled

__version__ = "0.1.0"

__all__ = [
    "BasisExpansion", "Callback", "CholFactor", "ComparisonReport", "ConfigInvalid",
    "DegenerateSpectrumError", "DimensionMismatchError", "DistanceCoupled", "ExperimentConfig",
    "FunctionSample", "GaussianDist", "GpModel", "GpTrajError", "Horizon", "IndependentOutputs",
    "InsufficientSamplesError", "Linear", "LinearMap", "MomentSequence", "NonFiniteError",
    "NotPositiveDefiniteError", "Product", "ProxySpec", "SquaredExponential", "TrajectoryBatch",
    "UnsupportedMethodError", "ZeroKernel", "ZeroMean", "cholesky", "cholesky_extend", "condition",
    "condition_weights", "draw_function_samples", "empirical_moments", "gaussian_condition",
    "linear_exact_expansion", "linear_times_base", "mvn_sample", "nystrom_expansion",
    "parse_config", "propagate_independent", "propagate_linearized",
    "propagate_linearized_controlled", "proxy_moments_closed_form", "proxy_simulate",
    "resume_extend", "rff_expansion", "run_experiment", "sample_trajectories",
    "sample_trajectories_controlled", "simulate_with_function_samples",
]
