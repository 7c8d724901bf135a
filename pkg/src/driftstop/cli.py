"""Batch front end: ``driftstop --config run.json --command solve``.

Exit codes: 0 success, 2 config error, 3 solver failure, 4 verify failure,
5 simulation with more than 1% truncated paths.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import sys
from typing import Annotated, Any, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .constrained import ConstrainedSolution, constrained_value, envelope_residual
from .convex import ConjugateError, ConjugatePair, eta_derivative_residual
from .hitting import HittingError, expected_hitting_time, expected_hitting_time_oracle
from .montecarlo import SimConfig, SimulationError, estimate_cost, perturbation_suite, policy_cost, value_at_variance
from .policy import ConstantThreshold, StopAtOnce
from .problem import ProblemError, ProblemInstance, build_problem, verify_assumptions
from .quadrature import QuadratureError
from .solver import (
    SolverError, ValueFunction, check_variational_inequalities, optimal_policy, smooth_fit_residual,
    solve_threshold, value_at,
)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY, EXIT_TRUNCATED = 0, 2, 3, 4, 5
COMMANDS = ("solve", "constrained", "simulate", "verify", "sweep")
U64_MAX = 2**64 - 1

NonNeg = Annotated[float, Field(ge=0, allow_inf_nan=False)]
Positive = Annotated[float, Field(gt=0, allow_inf_nan=False)]
Alpha = Union[Literal["inf"], NonNeg]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ConstantDriftCfg(_Strict):
    family: Literal["constant"]
    m: Positive


class PowerDriftCfg(_Strict):
    family: Literal["power"]
    a: Annotated[float, Field(ge=1, allow_inf_nan=False)]
    scale: Positive = 1.0


class ConstantDispersionCfg(_Strict):
    family: Literal["constant"]
    sigma0: Positive


class PowerDispersionCfg(_Strict):
    family: Literal["power"]
    b: Annotated[float, Field(allow_inf_nan=False)]
    scale: Positive = 1.0


class QuadraticCostCfg(_Strict):
    family: Literal["quadratic"]
    kappa: Positive


class LogCoshCostCfg(_Strict):
    family: Literal["logcosh"]
    kappa: Positive


class EvenPolyCostCfg(_Strict):
    family: Literal["even_poly"]
    coeffs: list[NonNeg]


class QuadraticRunningCfg(_Strict):
    family: Literal["quadratic"]
    beta: Positive


class EvenPowerRunningCfg(_Strict):
    family: Literal["even_power"]
    beta: Positive
    p: Annotated[float, Field(ge=2, allow_inf_nan=False)]


class ProblemCfg(_Strict):
    drift: Annotated[Union[ConstantDriftCfg, PowerDriftCfg], Field(discriminator="family")]
    dispersion: Annotated[Union[ConstantDispersionCfg, PowerDispersionCfg], Field(discriminator="family")]
    terminal: Annotated[Union[QuadraticCostCfg, LogCoshCostCfg, EvenPolyCostCfg], Field(discriminator="family")]
    running: Annotated[Union[QuadraticRunningCfg, EvenPowerRunningCfg], Field(discriminator="family")]
    c: NonNeg


class SolveCfg(_Strict):
    x: list[Annotated[float, Field(allow_inf_nan=False)]] = Field(default_factory=list)
    vi_points: Annotated[int, Field(ge=2)] = 10_000
    vi_tol: Positive = 1e-8


class ConstrainedCfg(_Strict):
    x: NonNeg
    alpha: Alpha
    c: Optional[NonNeg] = None


class ThresholdPolicyCfg(_Strict):
    u: Annotated[float, Field(lt=0, allow_inf_nan=False)]
    s: Positive


class SimulateCfg(_Strict):
    x: Annotated[float, Field(allow_inf_nan=False)]
    policy: Union[Literal["optimal", "stop"], ThresholdPolicyCfg] = "optimal"
    dt: Annotated[float, Field(gt=0, le=1e-2)] = 1e-3
    n_paths: Annotated[int, Field(ge=1)] = 100_000
    seed: Annotated[int, Field(ge=0, le=U64_MAX)] = 0
    t_max: Optional[Positive] = None
    mode: Literal["drift", "variance"] = "drift"
    threads: Annotated[int, Field(ge=1)] = 1
    perturbations: Optional[list[tuple[Positive, Positive]]] = None
    bias_budget: NonNeg = 0.03


class VerifyCfg(_Strict):
    x: Positive = 2.0
    grid_points: Annotated[int, Field(ge=2)] = 10_000
    tol: Positive = 1e-8
    eta_tol: Positive = 1e-6
    smooth_fit_tol: Positive = 1e-6
    hitting_rel_tol: Positive = 1e-6
    envelope_h: Positive = 1e-4
    envelope_tol: Positive = 1e-4


class SweepCfg(_Strict):
    x: NonNeg
    c: Optional[list[NonNeg]] = None
    alpha: Optional[list[Alpha]] = None


class RunConfig(_Strict):
    problem: ProblemCfg
    solve: Optional[SolveCfg] = None
    constrained: Optional[ConstrainedCfg] = None
    simulate: Optional[SimulateCfg] = None
    verify: Optional[VerifyCfg] = None
    sweep: Optional[SweepCfg] = None


class ConfigError(ValueError):
    pass


def load_config(text: str) -> RunConfig:
    try:
        return RunConfig.model_validate(json.loads(text))
    except (json.JSONDecodeError, ValidationError) as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json", exclude_none=True), indent=2) + "\n"


def instance_from(cfg: RunConfig) -> ProblemInstance:
    try:
        return build_problem(cfg.problem.model_dump())
    except ProblemError as exc:
        raise ConfigError(str(exc)) from None


def _alpha(value) -> float:
    return math.inf if value == "inf" else float(value)


def _num(v: float):
    """JSON-safe number: infinities become the string 'inf'."""
    if v is None:
        return None
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _csv_num(v: float) -> str:
    v = float(v)
    return "inf" if math.isinf(v) else repr(v)


# ------------------------------------------------------------------ commands


def _vi_grid(s: float, n: int) -> np.ndarray:
    upper = 5.0 * s if math.isfinite(s) and s > 0 else 5.0
    return np.linspace(0.01, upper, n)


def run_solve(instance: ProblemInstance, cfg: SolveCfg) -> dict:
    tr = solve_threshold(instance)
    vf = ValueFunction(instance, tr)
    if instance.c == 0:
        summary = "c = 0: V = k(0) everywhere; stop at once"
    elif tr.infinite:
        summary = "s = infinite; stop at once; V = k"
    else:
        summary = f"s = {tr.s!r}; control u* = {tr.u_star!r} until |X| <= s"
    vi = check_variational_inequalities(vf, _vi_grid(tr.s, cfg.vi_points), tol=cfg.vi_tol)
    return {
        "command": "solve",
        "c": instance.c,
        "A": instance.A,
        "s": _num(tr.s),
        "gamma": _num(tr.gamma),
        "b": _num(tr.b),
        "u_star": _num(tr.u_star),
        "residual": tr.residual,
        "policy": "stop_at_once" if isinstance(optimal_policy(instance, tr), StopAtOnce) else "threshold",
        "summary": summary,
        "rows": [{"x": x, "V": value_at(vf, x)} for x in cfg.x],
        "vi": {
            "min_r1": vi.min_r1, "min_r2": vi.min_r2, "max_complementarity": vi.max_complementarity,
            "max_violation": vi.max_violation, "passed": vi.passed,
        },
    }


def _constrained_dict(sol: ConstrainedSolution, c: float) -> dict:
    tr = sol.threshold
    return {
        "c": c,
        "alpha": _num(sol.alpha),
        "x": sol.x,
        "lambda_hat": sol.lambda_hat,
        "effective_c": sol.effective_c,
        "s": _num(tr.s),
        "u_star": _num(tr.u_star if tr.u_star is not None else 0.0),
        "V_alpha": sol.value,
        "E_tau": sol.expected_tau,
        "slackness_residual": sol.slackness_residual,
        "degenerate": sol.degenerate,
    }


def run_constrained(instance: ProblemInstance, cfg: ConstrainedCfg) -> dict:
    c = instance.c if cfg.c is None else cfg.c
    sol = constrained_value(instance, cfg.x, c, _alpha(cfg.alpha))
    return {"command": "constrained", **_constrained_dict(sol, c)}


def _policy(instance: ProblemInstance, spec) -> Any:
    if spec == "stop":
        return StopAtOnce()
    if spec == "optimal":
        return optimal_policy(instance, solve_threshold(instance))
    return ConstantThreshold(spec.u, spec.s)


def run_simulate(instance: ProblemInstance, cfg: SimulateCfg) -> tuple[str, bool]:
    """Returns (output text, valid).  With perturbations the output is CSV."""
    sim = SimConfig(dt=cfg.dt, n_paths=cfg.n_paths, seed=cfg.seed, t_max=cfg.t_max,
                    mode=cfg.mode, threads=cfg.threads)
    if cfg.perturbations is not None:
        rep = perturbation_suite(instance, cfg.x, sim, cfg.perturbations, cfg.bias_budget)
        return rep.to_csv(), all(r.estimate.valid for r in rep.rows)
    policy = _policy(instance, cfg.policy)
    est = estimate_cost(instance, policy, cfg.x, sim)
    out = {"command": "simulate", "x": cfg.x, "mode": cfg.mode, "seed": cfg.seed, **est.as_dict()}
    if isinstance(policy, ConstantThreshold):
        out["policy"] = {"u": policy.u, "s": policy.s}
        exact = policy_cost(instance, policy, cfg.x) if cfg.mode == "drift" else value_at_variance(instance, policy, cfg.x)
    else:
        out["policy"] = "stop"
        exact = float(instance.k(abs(cfg.x)))
    out["analytic_cost"] = exact
    if cfg.policy == "optimal":
        V = value_at(ValueFunction(instance, solve_threshold(instance)), cfg.x)
        tol = 3.0 * est.standard_error + cfg.bias_budget
        out["analytic_V"] = V
        out["tolerance"] = tol
        out["matches_V"] = bool(abs(est.mean - V) <= tol)
    return json.dumps(out, indent=2) + "\n", est.valid


def run_verify(instance: ProblemInstance, cfg: VerifyCfg) -> dict:
    """Ordered checks; ``first_failure`` names the first one that failed."""
    checks: list[dict] = []

    def add(name: str, passed: bool, residual: float, note: str = "") -> None:
        checks.append({"name": name, "passed": bool(passed), "residual": _num(residual), "note": note})

    rep = verify_assumptions(instance)
    for key in sorted(rep.passed):
        add(f"assumption {key}", rep.passed[key], rep.residuals[key], rep.notes.get(key, ""))

    tr = solve_threshold(instance)
    vf = ValueFunction(instance, tr)
    vi = check_variational_inequalities(vf, _vi_grid(tr.s, cfg.grid_points), tol=cfg.tol)
    add("variational inequalities", vi.passed, vi.max_violation)

    pair = ConjugatePair(instance.running)
    zs = np.linspace(-5.0, 5.0, 41)
    eta_res = max(eta_derivative_residual(pair, float(z)) / max(1.0, abs(z)) for z in zs)
    add("eta derivative", eta_res <= cfg.eta_tol, eta_res)

    finite = not tr.infinite and not tr.degenerate
    if finite:
        sf = smooth_fit_residual(vf)
        add("smooth fit", sf <= cfg.smooth_fit_tol, sf)
        x = max(cfg.x, 2.0 * tr.s)
        closed = expected_hitting_time(instance, tr.u_star, tr.s, x)
        worst = 0.0
        for d in (tr.s + 0.5, tr.s + 1.0, tr.s + 3.0):
            oracle = expected_hitting_time_oracle(instance, tr.u_star, tr.s, x, d=d)
            worst = max(worst, abs(oracle - closed) / max(abs(closed), 1e-300))
        add("hitting time oracle", worst <= cfg.hitting_rel_tol, worst)
    else:
        add("smooth fit", True, 0.0, "skipped: no finite positive threshold")
        add("hitting time oracle", True, 0.0, "skipped: no finite positive threshold")

    if instance.c > cfg.envelope_h:
        env = envelope_residual(instance, cfg.x, instance.c, cfg.envelope_h)
        add("envelope identity", env <= cfg.envelope_tol, env)
    else:
        add("envelope identity", True, 0.0, "skipped: c too small for a central difference")

    first = next((c["name"] for c in checks if not c["passed"]), None)
    return {"command": "verify", "passed": first is None, "first_failure": first, "checks": checks}


SWEEP_COLUMNS = ("c", "alpha", "s", "u_star", "V", "lambda_hat", "E_tau")


def run_sweep(instance: ProblemInstance, cfg: SweepCfg) -> str:
    cs = cfg.c if cfg.c is not None else [instance.c]
    alphas = [_alpha(a) for a in (cfg.alpha if cfg.alpha is not None else ["inf"])]
    if not cs or not alphas:
        raise ConfigError("sweep grids must be nonempty")
    rows = []
    for c in cs:
        for a in alphas:
            sol = constrained_value(instance, cfg.x, c, a)
            u = sol.threshold.u_star if sol.threshold.u_star is not None else 0.0
            rows.append((c, a, sol.threshold.s, u, sol.value, sol.lambda_hat, sol.expected_tau))
    buf = io.StringIO()
    buf.write(",".join(SWEEP_COLUMNS) + "\n")
    for r in rows:
        buf.write(",".join(_csv_num(v) for v in r) + "\n")
    buf.write("# " + _monotonicity_footer(rows, cs, alphas) + "\n")
    return buf.getvalue()


def _monotonicity_footer(rows, cs, alphas) -> str:
    by_alpha = {a: sorted((r for r in rows if r[1] == a), key=lambda r: r[0]) for a in alphas}
    by_c = {c: sorted((r for r in rows if r[0] == c), key=lambda r: r[1]) for c in cs}

    def pairs(groups):
        for g in groups.values():
            yield from zip(g, g[1:])

    s_inc = all(b[2] > a[2] or (math.isinf(a[2]) and math.isinf(b[2])) for a, b in pairs(by_alpha) if b[0] > a[0])
    v_inc = all(b[4] >= a[4] for a, b in pairs(by_alpha) if b[0] > a[0])
    v_dec = all(b[4] <= a[4] for a, b in pairs(by_c) if b[1] > a[1])
    l_dec = all(b[5] <= a[5] for a, b in pairs(by_c) if b[1] > a[1])
    flag = lambda v: "true" if v else "false"  # noqa: E731
    return (f"monotonicity: s_increasing_in_c={flag(s_inc)} V_nondecreasing_in_c={flag(v_inc)} "
            f"V_nonincreasing_in_alpha={flag(v_dec)} lambda_hat_nonincreasing_in_alpha={flag(l_dec)}")


# ------------------------------------------------------------------ entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="driftstop", description=__doc__.splitlines()[0])
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--command", choices=COMMANDS)
    p.add_argument("--seed", type=int, help="overrides simulate.seed")
    p.add_argument("--threads", type=int, help="Monte Carlo threads; results do not depend on it")
    return p


def _select_command(cfg: RunConfig, requested: Optional[str]) -> str:
    if requested is not None:
        if getattr(cfg, requested) is None:
            if requested == "solve":
                return requested
            raise ConfigError(f"config has no '{requested}' block")
        return requested
    present = [c for c in COMMANDS if getattr(cfg, c) is not None]
    if len(present) != 1:
        raise ConfigError(f"--command is required when the config has {len(present)} command blocks")
    return present[0]


def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="\n") as fh:
            fh.write(text)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            cfg = load_config(fh.read())
        command = _select_command(cfg, args.command)
        if command == "simulate":
            updates = {}
            if args.seed is not None:
                if not 0 <= args.seed <= U64_MAX:
                    raise ConfigError("--seed must be an unsigned 64-bit integer")
                updates["seed"] = args.seed
            if args.threads is not None:
                if args.threads < 1:
                    raise ConfigError("--threads must be >= 1")
                updates["threads"] = args.threads
            cfg.simulate = cfg.simulate.model_copy(update=updates)
        instance = instance_from(cfg)
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if command == "solve":
            _emit(json.dumps(run_solve(instance, cfg.solve or SolveCfg()), indent=2) + "\n", args.out)
        elif command == "constrained":
            _emit(json.dumps(run_constrained(instance, cfg.constrained), indent=2) + "\n", args.out)
        elif command == "sweep":
            _emit(run_sweep(instance, cfg.sweep), args.out)
        elif command == "verify":
            report = run_verify(instance, cfg.verify)
            _emit(json.dumps(report, indent=2) + "\n", args.out)
            if not report["passed"]:
                print(f"verify failed: {report['first_failure']}", file=sys.stderr)
                return EXIT_VERIFY
        else:
            text, valid = run_simulate(instance, cfg.simulate)
            _emit(text, args.out)
            if not valid:
                print("simulation invalid: more than 1% of paths truncated", file=sys.stderr)
                return EXIT_TRUNCATED
    except (SolverError, ConjugateError, SimulationError, QuadratureError, HittingError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        # ConfigError, ProblemError and argument validation all land here
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
