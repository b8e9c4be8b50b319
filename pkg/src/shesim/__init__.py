"""shesim: simulator and verification toolkit for the semi-discrete
stochastic heat equation du = (L u) dt + sigma(u) dB on Z^d."""

__version__ = "0.1.0"

from .errors import NumericFailure, SchemaError, SingularIntegrand
from .noise import NoisePlan
from .renewal import RenewalProblem, comparison_check, critical_beta, picard_solve
from .sde import (Box, FieldState, Nonlinearity, ProfileSpec, SolverConfig,
                  coupled_simulate, em_step, generator_apply,
                  picard_mild_solve, profile_constant, profile_delta,
                  run_replicated, simulate, split_step_linear)
from .walkkernel import JumpDistribution, WalkKernel, lazy_walk, simple_walk

__all__ = [
    "Box", "FieldState", "JumpDistribution", "NoisePlan", "Nonlinearity",
    "NumericFailure", "ProfileSpec", "RenewalProblem", "SchemaError",
    "SingularIntegrand", "SolverConfig", "WalkKernel", "comparison_check",
    "coupled_simulate", "critical_beta", "em_step", "generator_apply",
    "lazy_walk", "picard_mild_solve", "picard_solve", "profile_constant",
    "profile_delta", "run_replicated", "simple_walk", "simulate",
    "split_step_linear",
]
