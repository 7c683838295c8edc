"""Numerical laboratory for small-noise large deviations of jump SPDEs.

Finite Galerkin spaces, locally monotone drifts with jump coefficients,
entropy-cost controls, skeleton equation solver, controlled Poisson
random measures and SPDE paths, rate-function minimization, and
experiments checking continuity of the skeleton map and closeness of the
controlled SPDE to the skeleton.
"""
__version__ = "0.1.0"

from .control import Control, MarkSpace, NoiseScale, ell, entropy_ball_sup, in_level_set, q_cost
from .errors import ConfigurationError, LdpLabError, NumericalError, ResourceError
from .operators import AffineNoise, BurgersDrift, PLaplaceDrift, ScalarLinearDrift, SineNoise
from .prm import RngStream, sample_controlled_prm, sample_prm
from .rate import EventSpec, RateOptions, minimize_rate, rate_of_set
from .skeleton import SkeletonProblem, Trajectory, apriori_bound, solve_skeleton
from .spaces import DualVector, GalerkinSpace
from .spde import SimConfig, coupled_simulate, simulate, simulate_batch

__all__ = [
    "AffineNoise",
    "BurgersDrift",
    "ConfigurationError",
    "Control",
    "DualVector",
    "EventSpec",
    "GalerkinSpace",
    "LdpLabError",
    "MarkSpace",
    "NoiseScale",
    "NumericalError",
    "PLaplaceDrift",
    "RateOptions",
    "ResourceError",
    "RngStream",
    "ScalarLinearDrift",
    "SimConfig",
    "SineNoise",
    "SkeletonProblem",
    "Trajectory",
    "apriori_bound",
    "coupled_simulate",
    "ell",
    "entropy_ball_sup",
    "in_level_set",
    "minimize_rate",
    "q_cost",
    "rate_of_set",
    "sample_controlled_prm",
    "sample_prm",
    "simulate",
    "simulate_batch",
    "solve_skeleton",
]
