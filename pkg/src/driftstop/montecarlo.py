"""Euler-Maruyama simulation of constant-control / threshold policies.

Paths are independent work units.  Each normal increment is a pure function
of (seed, path index, step), so results do not depend on how paths are split
across threads.  Aggregation uses ``math.fsum``.
"""
from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .hitting import expected_hitting_time
from .policy import ConstantThreshold, Policy, StopAtOnce
from .problem import PowerDispersion, ProblemInstance
from .solver import optimal_policy, solve_threshold, value_at, ValueFunction

CHUNK = 4096
MAX_TRUNCATED_FRACTION = 0.01
BIAS_BUDGET = 0.03

__all__ = [
    "SimConfig", "PathOutcome", "CostEstimate", "PerturbationRow", "PerturbationReport",
    "simulate_path", "estimate_cost", "estimate_hitting_time", "perturbation_suite",
    "Policy", "StopAtOnce", "ConstantThreshold", "SimulationError",
]


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    n_paths: int = 100_000
    seed: int = 0
    t_max: float | None = None
    mode: str = "drift"  # "drift" or "variance"
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.dt <= 1e-2:
            raise ValueError(f"dt must lie in (0, 1e-2], got {self.dt}")
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.t_max is not None and not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if self.mode not in ("drift", "variance"):
            raise ValueError(f"mode must be 'drift' or 'variance', got {self.mode!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class PathOutcome:
    stop_time: float
    terminal_x: float
    accumulated_cost: float
    truncated: bool


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    standard_error: float
    ci95_low: float
    ci95_high: float
    n_truncated: int
    mean_stop_time: float
    stop_time_standard_error: float
    n_paths: int
    t_max: float
    notes: tuple[str, ...] = ()

    @property
    def valid(self) -> bool:
        """False when more than 1% of paths hit the truncation horizon."""
        return self.n_truncated <= MAX_TRUNCATED_FRACTION * self.n_paths

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "standard_error": self.standard_error,
            "ci95_low": self.ci95_low,
            "ci95_high": self.ci95_high,
            "n_truncated": self.n_truncated,
            "mean_stop_time": self.mean_stop_time,
            "stop_time_standard_error": self.stop_time_standard_error,
            "n_paths": self.n_paths,
            "t_max": self.t_max,
            "valid": self.valid,
            "notes": list(self.notes),
        }


def _analytic_tau(instance: ProblemInstance, u: float, s: float, x: float, mode: str) -> float | None:
    if not u < 0 or x <= s:
        return 0.0 if x <= s else None
    if mode == "variance":
        return (x - s) / -u
    return expected_hitting_time(instance, u, s, x)


def _horizon(instance, policy, x, cfg) -> float:
    if isinstance(policy, StopAtOnce):
        return cfg.t_max if cfg.t_max is not None else 50.0
    tau = _analytic_tau(instance, policy.u, policy.s, x, cfg.mode)
    if cfg.t_max is None:
        return max(50.0, 20.0 * tau) if tau is not None else 50.0
    floor = 10.0 * tau if tau is not None else 10.0
    if cfg.t_max < floor:
        what = f"10 x analytic E[tau] = {floor:.4g}" if tau is not None else "10 (no analytic E[tau])"
        raise ValueError(f"t_max = {cfg.t_max} is below {what}")
    return cfg.t_max


def _notes(instance, policy, x_in) -> list[str]:
    notes = []
    if x_in < 0:
        notes.append(f"start {x_in} mapped to |x| by symmetry")
    if (isinstance(policy, ConstantThreshold) and isinstance(instance.dispersion, PowerDispersion)
            and instance.dispersion.b > 0 and policy.s < 1e-3):
        notes.append("threshold close to the origin where the dispersion vanishes")
    return notes


def _run_paths(instance: ProblemInstance, policy: Policy, x: float, cfg: SimConfig,
               path_start: int, n_paths: int, t_max: float):
    stop_time = np.zeros(n_paths)
    terminal_x = np.full(n_paths, float(x))
    status = np.zeros(n_paths, dtype=np.int64)
    if isinstance(policy, StopAtOnce) or x <= policy.s:
        return stop_time, terminal_x, status
    bad = np.full(n_paths, -1, dtype=np.int64)
    max_steps = int(math.ceil(t_max / cfg.dt - 1e-9))
    mu_exp, mu_scale = instance.drift.power_params
    sig_exp, sig_scale = instance.dispersion.power_params
    mode = _kernels.DRIFT_CONTROL if cfg.mode == "drift" else _kernels.VARIANCE_CONTROL

    def work(lo: int) -> None:
        hi = min(lo + CHUNK, n_paths)
        _kernels.simulate_paths(
            float(x), float(policy.u), float(policy.s), float(cfg.dt), max_steps,
            np.uint64(cfg.seed), path_start + lo, hi - lo,
            float(mu_exp), float(mu_scale), float(sig_exp), float(sig_scale), mode,
            stop_time[lo:hi], terminal_x[lo:hi], status[lo:hi], bad[lo:hi],
        )

    starts = range(0, n_paths, CHUNK)
    if cfg.threads == 1:
        for lo in starts:
            work(lo)
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            list(pool.map(work, starts))
    if np.any(bad >= 0):
        i = int(np.argmax(bad >= 0))
        raise SimulationError(f"non-finite state on path {path_start + i} at step {int(bad[i])}")
    return stop_time, terminal_x, status


def _path_costs(instance, policy, stop_time, terminal_x):
    if isinstance(policy, StopAtOnce):
        return instance.k(terminal_x) + 0.0 * stop_time
    rate = float(instance.psi(policy.u)) + instance.c
    return instance.k(terminal_x) + rate * stop_time


def simulate_path(instance: ProblemInstance, policy: Policy, x: float, cfg: SimConfig,
                  path_index: int) -> PathOutcome:
    ax = abs(float(x))
    t_max = _horizon(instance, policy, ax, cfg)
    st, tx, status = _run_paths(instance, policy, ax, cfg, int(path_index), 1, t_max)
    cost = _path_costs(instance, policy, st, tx)
    return PathOutcome(float(st[0]), float(tx[0]), float(cost[0]), bool(status[0] == _kernels.TRUNCATED))


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def _estimate(values, stop_time, status, t_max, notes) -> CostEstimate:
    mean, se = _mean_se(values)
    tmean, tse = _mean_se(stop_time)
    return CostEstimate(
        mean=mean, standard_error=se, ci95_low=mean - 1.96 * se, ci95_high=mean + 1.96 * se,
        n_truncated=int(np.count_nonzero(status == _kernels.TRUNCATED)),
        mean_stop_time=tmean, stop_time_standard_error=tse,
        n_paths=int(values.size), t_max=t_max, notes=tuple(notes),
    )


def estimate_cost(instance: ProblemInstance, policy: Policy, x: float, cfg: SimConfig) -> CostEstimate:
    """Monte Carlo estimate of E[k(X(tau)) + (psi(u) + c) tau] under ``policy``."""
    notes = _notes(instance, policy, x)
    ax = abs(float(x))
    t_max = _horizon(instance, policy, ax, cfg)
    st, tx, status = _run_paths(instance, policy, ax, cfg, 0, cfg.n_paths, t_max)
    est = _estimate(_path_costs(instance, policy, st, tx), st, status, t_max, notes)
    if not est.valid:
        notes.append(f"{est.n_truncated} of {est.n_paths} paths truncated; estimate invalid")
        est = _estimate(_path_costs(instance, policy, st, tx), st, status, t_max, notes)
    return est


def estimate_hitting_time(instance: ProblemInstance, u: float, s: float, x: float,
                          cfg: SimConfig) -> CostEstimate:
    """Sample statistics of tau = inf{t: X(t) <= s}; ``mean`` is the mean stop time."""
    policy = ConstantThreshold(u, s)
    ax = abs(float(x))
    t_max = _horizon(instance, policy, ax, cfg)
    st, _, status = _run_paths(instance, policy, ax, cfg, 0, cfg.n_paths, t_max)
    return _estimate(st, st, status, t_max, _notes(instance, policy, x))


def policy_cost(instance: ProblemInstance, policy: Policy, x: float) -> float:
    """Exact expected cost of a threshold policy, k(s) + (c + psi(u)) E[tau] (drift control)."""
    ax = abs(float(x))
    if isinstance(policy, StopAtOnce) or ax <= policy.s:
        return float(instance.k(ax))
    tau = expected_hitting_time(instance, policy.u, policy.s, ax)
    return float(instance.k(policy.s)) + (instance.c + float(instance.psi(policy.u))) * tau


@dataclass(frozen=True)
class PerturbationRow:
    u_scale: float
    s_scale: float
    policy: Policy
    estimate: CostEstimate
    analytic: float
    value: float
    bias_budget: float

    @property
    def tolerance(self) -> float:
        return 3.0 * self.estimate.standard_error + self.bias_budget

    @property
    def above_lower_bound(self) -> bool:
        return self.estimate.mean >= self.value - self.tolerance

    @property
    def matches_analytic(self) -> bool:
        return abs(self.estimate.mean - self.analytic) <= self.tolerance

    @property
    def passed(self) -> bool:
        return self.above_lower_bound and self.matches_analytic and self.estimate.valid


@dataclass
class PerturbationReport:
    x: float
    value: float
    rows: list[PerturbationRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("u_scale,s_scale,u,s,mean,standard_error,analytic,value,n_truncated,mean_stop_time,passed\n")
        for r in self.rows:
            p = r.policy
            u, s = (p.u, p.s) if isinstance(p, ConstantThreshold) else ("", "")
            e = r.estimate
            fields = [r.u_scale, r.s_scale, u, s, e.mean, e.standard_error, r.analytic, r.value,
                      e.n_truncated, e.mean_stop_time, str(r.passed).lower()]
            buf.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in fields) + "\n")
        return buf.getvalue()


def perturbation_suite(instance: ProblemInstance, x: float, cfg: SimConfig,
                       perturbations: Sequence[tuple[float, float]],
                       bias_budget: float = BIAS_BUDGET) -> PerturbationReport:
    """Estimate the cost of (u* u_scale, s s_scale) for each perturbation and compare to V(x).

    The identity perturbation (1, 1) is always included first.
    """
    tr = solve_threshold(instance)
    base = optimal_policy(instance, tr)
    if not isinstance(base, ConstantThreshold):
        raise SimulationError("perturbation suite needs a finite optimal threshold")
    value = value_at(ValueFunction(instance, tr), x)
    pert = [(1.0, 1.0)] + [tuple(map(float, p)) for p in perturbations if tuple(map(float, p)) != (1.0, 1.0)]
    report = PerturbationReport(float(x), value)
    for us, ss in pert:
        if not (us > 0 and ss > 0):
            raise ValueError(f"perturbation scales must be positive, got ({us}, {ss})")
        policy = ConstantThreshold(base.u * us, base.s * ss)
        est = estimate_cost(instance, policy, x, cfg)
        analytic = policy_cost(instance, policy, x) if cfg.mode == "drift" else value_at_variance(instance, policy, x)
        report.rows.append(PerturbationRow(us, ss, policy, est, analytic, value, bias_budget))
    return report


def value_at_variance(instance: ProblemInstance, policy: Policy, x: float) -> float:
    """Exact cost of a threshold policy under variance control (drift u, dispersion u sigma)."""
    ax = abs(float(x))
    if isinstance(policy, StopAtOnce) or ax <= policy.s:
        return float(instance.k(ax))
    tau = (ax - policy.s) / -policy.u
    return float(instance.k(policy.s)) + (instance.c + float(instance.psi(policy.u))) * tau
