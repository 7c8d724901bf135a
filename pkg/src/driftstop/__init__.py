"""Drift control with discretionary stopping: explicit solver and verification harness."""
from .constrained import (
    ConstrainedSolution, constrained_value, dual_value_scan, envelope_residual,
    expected_optimal_stop_time, solve_lagrange_multiplier,
)
from .convex import ConjugatePair, eta, xi
from .hitting import expected_hitting_time, expected_hitting_time_oracle
from .montecarlo import CostEstimate, SimConfig, estimate_cost, estimate_hitting_time, perturbation_suite
from .policy import ConstantThreshold, Policy, StopAtOnce
from .problem import ProblemError, ProblemInstance, build_problem, verify_assumptions
from .solver import (
    SolverError, ThresholdResult, ValueFunction, check_variance_control_vi, check_variational_inequalities,
    optimal_policy, smooth_fit_residual, solve_threshold, value_at, value_function,
)

__all__ = [
    "ConstrainedSolution", "constrained_value", "dual_value_scan", "envelope_residual",
    "expected_optimal_stop_time", "solve_lagrange_multiplier",
    "ConjugatePair", "eta", "xi",
    "expected_hitting_time", "expected_hitting_time_oracle",
    "CostEstimate", "SimConfig", "estimate_cost", "estimate_hitting_time", "perturbation_suite",
    "ConstantThreshold", "Policy", "StopAtOnce",
    "ProblemError", "ProblemInstance", "build_problem", "verify_assumptions",
    "SolverError", "ThresholdResult", "ValueFunction", "check_variance_control_vi",
    "check_variational_inequalities", "optimal_policy",
    "smooth_fit_residual", "solve_threshold", "value_at", "value_function",
]
