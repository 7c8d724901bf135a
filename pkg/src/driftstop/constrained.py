"""Expectation-constrained problem solved through its Lagrangian dual.

The constraint E[tau] <= alpha is priced by a multiplier lambda that simply
raises the operating cost, so every evaluation reduces to the unconstrained
solver at c + lambda.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from scipy.optimize import brentq

from .policy import ConstantThreshold, Policy, StopAtOnce
from .problem import ProblemInstance
from .solver import SolverError, ThresholdResult, ValueFunction, solve_threshold, value_at, zeta

EXPECTATION_TOL = 1e-10
LAMBDA_LIMIT = 1e15


@dataclass(frozen=True)
class ConstrainedSolution:
    lambda_hat: float
    effective_c: float
    threshold: ThresholdResult
    value: float
    expected_tau: float
    slackness_residual: float
    alpha: float
    x: float
    degenerate: bool = False

    @property
    def policy(self) -> Policy:
        return optimal_policy_at(self.threshold)

    @property
    def feasible(self) -> bool:
        return self.expected_tau <= self.alpha + 1e-8

    @property
    def slack_ok(self) -> bool:
        scale = max(1.0, self.lambda_hat, self.alpha if math.isfinite(self.alpha) else 1.0)
        return abs(self.slackness_residual) <= 1e-8 * scale


def optimal_policy_at(tr: ThresholdResult) -> Policy:
    if tr.infinite or tr.degenerate:
        return StopAtOnce()
    return ConstantThreshold(u=tr.u_star, s=tr.s)


def _check(x: float, c: float, alpha: float) -> None:
    if not x >= 0:
        raise ValueError(f"x must be >= 0, got {x}")
    if not c >= 0:
        raise ValueError(f"c must be >= 0, got {c}")
    if not alpha >= 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")


def _tau_from_threshold(instance: ProblemInstance, tr: ThresholdResult, x: float) -> float:
    if tr.infinite or x <= tr.s:
        return 0.0
    return 2.0 / (instance.A - 2.0 * tr.u_star) * instance.drift.reciprocal_integral(tr.s, x)


def expected_optimal_stop_time(instance: ProblemInstance, x: float, c_eff: float) -> float:
    """E[tau*] from |x| under the optimal rule at operating cost c_eff > 0."""
    if not c_eff > 0:
        raise ValueError(f"effective cost must be positive, got {c_eff}")
    tr = solve_threshold(instance.with_cost(c_eff))
    return _tau_from_threshold(instance, tr, abs(float(x)))


def solve_lagrange_multiplier(instance: ProblemInstance, x: float, c: float, alpha: float) -> float:
    """Smallest lambda >= 0 with E[tau*_{x, c + lambda}] <= alpha."""
    x, c, alpha = abs(float(x)), float(c), float(alpha)
    _check(x, c, alpha)
    if math.isinf(alpha) or x == 0.0:
        return 0.0
    if c > 0 and expected_optimal_stop_time(instance, x, c) <= alpha:
        return 0.0
    if alpha == 0.0:
        # E[tau*] vanishes exactly once s(c + lambda) reaches x, i.e. zeta(x) = -(c + lambda)
        return max(0.0, -zeta(instance, x) - c)

    def g(lam: float) -> float:
        return expected_optimal_stop_time(instance, x, c + lam) - alpha

    lo, hi = 0.0, 1.0
    while g(hi) > 0:
        lo, hi = hi, 2.0 * hi
        if hi > LAMBDA_LIMIT:
            raise SolverError("could not bracket the Lagrange multiplier")
    if lo == 0.0 and c == 0.0:
        # E[tau*] blows up as the effective cost tends to zero; find a positive lower end
        lo = hi
        while g(lo) <= 0:
            lo *= 0.5
            if lo < 1e-300:
                raise SolverError("could not bracket the Lagrange multiplier from below")
    if g(hi) == 0.0:
        return hi
    lam = brentq(g, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=2000)
    # brentq stops on the lambda tolerance; tighten towards the feasible side if needed
    while g(lam) > EXPECTATION_TOL:
        lam = math.nextafter(lam, math.inf)
    return lam


def constrained_value(instance: ProblemInstance, x: float, c: float, alpha: float) -> ConstrainedSolution:
    """V_alpha(x, c) = V(x, c + lambda_hat) - lambda_hat alpha and the associated optimal pair."""
    x, c, alpha = abs(float(x)), float(c), float(alpha)
    _check(x, c, alpha)
    lam = solve_lagrange_multiplier(instance, x, c, alpha)
    c_eff = c + lam
    inst = instance.with_cost(c_eff)
    tr = solve_threshold(inst)
    degenerate = c_eff == 0.0
    # c_eff = 0 reports the c -> 0+ limit, V = k(0), with a degenerate flag
    tau = 0.0 if degenerate else _tau_from_threshold(instance, tr, x)
    v = value_at(ValueFunction(inst, tr), x)
    value = v - lam * alpha if lam > 0 else v
    slack = lam * (alpha - tau) if lam > 0 else 0.0
    return ConstrainedSolution(lam, c_eff, tr, value, tau, slack, alpha, x, degenerate)


def envelope_residual(instance: ProblemInstance, x: float, c: float, h: float) -> float:
    """|central difference of V in c - E[tau*_{x, c}]|."""
    if not c - h > 0:
        raise ValueError(f"need c - h > 0, got c = {c}, h = {h}")

    def V(cc: float) -> float:
        inst = instance.with_cost(cc)
        return value_at(ValueFunction(inst, solve_threshold(inst)), x)

    fd = (V(c + h) - V(c - h)) / (2.0 * h)
    return abs(fd - expected_optimal_stop_time(instance, x, c))


def dual_value_scan(instance: ProblemInstance, x: float, c: float, alpha: float,
                    lambda_grid: Sequence[float]) -> list[tuple[float, float]]:
    """(lambda, V(x, c + lambda) - lambda alpha) over a nonnegative ascending grid."""
    grid = [float(v) for v in lambda_grid]
    if any(v < 0 for v in grid) or any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda grid must be nonnegative and ascending")
    out = []
    for lam in grid:
        inst = instance.with_cost(c + lam)
        v = value_at(ValueFunction(inst, solve_threshold(inst)), x)
        out.append((lam, v - lam * alpha if lam > 0 else v))
    return out
