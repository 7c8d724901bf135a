"""Problem instances: parametric coefficient and cost families.

Every family is a small frozen dataclass exposing exact derivatives, so the
solver never differentiates numerically.  Evenness is structural: all
families evaluate on ``|x|``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

DEFAULT_GRID = np.logspace(-3.0, 2.0, 2000)
DEFAULT_TOL = 1e-8


class ProblemError(ValueError):
    """Raised for unknown families, out-of-range parameters or (A4)/(A5) violations."""


# --------------------------------------------------------------------------- drift


@dataclass(frozen=True)
class ConstantDrift:
    m: float

    def mu(self, x):
        return self.m + 0.0 * np.abs(x)

    def dmu(self, x):
        return 0.0 * np.abs(x)

    def reciprocal_integral(self, lo: float, hi: float) -> float:
        """Exact value of the integral of 1/mu over [lo, hi]."""
        return (hi - lo) / self.m

    # (exponent, scale) used by the compiled simulator
    @property
    def power_params(self) -> tuple[float, float]:
        return 0.0, self.m


@dataclass(frozen=True)
class PowerDrift:
    a: float
    scale: float = 1.0

    def mu(self, x):
        return self.scale * np.abs(x) ** self.a

    def dmu(self, x):
        ax = np.abs(x)
        return self.a * self.scale * ax ** (self.a - 1.0) * np.sign(x)

    def reciprocal_integral(self, lo: float, hi: float) -> float:
        if self.a == 1.0:
            return math.log(hi / lo) / self.scale
        e = 1.0 - self.a
        return (hi**e - lo**e) / (e * self.scale)

    @property
    def power_params(self) -> tuple[float, float]:
        return self.a, self.scale


# ---------------------------------------------------------------------- dispersion


@dataclass(frozen=True)
class ConstantDispersion:
    sigma0: float

    def sigma(self, x):
        return self.sigma0 + 0.0 * np.abs(x)

    @property
    def bounded(self) -> bool:
        return True

    @property
    def power_params(self) -> tuple[float, float]:
        return 0.0, self.sigma0


@dataclass(frozen=True)
class PowerDispersion:
    b: float
    scale: float = 1.0

    def sigma(self, x):
        return self.scale * np.abs(x) ** self.b

    @property
    def bounded(self) -> bool:
        return self.b == 0.0

    @property
    def power_params(self) -> tuple[float, float]:
        return self.b, self.scale


# ------------------------------------------------------------------- terminal cost


@dataclass(frozen=True)
class QuadraticCost:
    """k(x) = kappa * x**2."""

    kappa: float

    def k(self, x):
        return self.kappa * np.asarray(x, dtype=float) ** 2

    def dk(self, x):
        return 2.0 * self.kappa * np.asarray(x, dtype=float)

    def d2k(self, x):
        return 2.0 * self.kappa + 0.0 * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class LogCoshCost:
    """k(x) = kappa * log(cosh(x)); k' is bounded by kappa."""

    kappa: float

    def k(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        # log(cosh x) = |x| + log1p(exp(-2|x|)) - log 2, overflow-free
        return self.kappa * (ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0))

    def dk(self, x):
        return self.kappa * np.tanh(x)

    def d2k(self, x):
        return self.kappa / np.cosh(np.clip(x, -700.0, 700.0)) ** 2


@dataclass(frozen=True)
class EvenPolyCost:
    """k(x) = sum_j coeffs[j] * x**(2j)."""

    coeffs: tuple[float, ...]

    def k(self, x):
        x2 = np.asarray(x, dtype=float) ** 2
        return sum(cj * x2**j for j, cj in enumerate(self.coeffs))

    def dk(self, x):
        x = np.asarray(x, dtype=float)
        return sum(2 * j * cj * x ** (2 * j - 1) for j, cj in enumerate(self.coeffs) if j > 0)

    def d2k(self, x):
        x = np.asarray(x, dtype=float)
        out = 0.0 * x
        for j, cj in enumerate(self.coeffs):
            if j > 0:
                out = out + 2 * j * (2 * j - 1) * cj * x ** (2 * j - 2)
        return out


# -------------------------------------------------------------------- running cost


@dataclass(frozen=True)
class QuadraticRunning:
    """psi(u) = beta * u**2."""

    beta: float

    def psi(self, u):
        return self.beta * np.asarray(u, dtype=float) ** 2

    def dpsi(self, u):
        return 2.0 * self.beta * np.asarray(u, dtype=float)

    def d2psi(self, u):
        return 2.0 * self.beta + 0.0 * np.asarray(u, dtype=float)


@dataclass(frozen=True)
class EvenPowerRunning:
    """psi(u) = beta * |u|**p with p >= 2."""

    beta: float
    p: float

    def psi(self, u):
        return self.beta * np.abs(np.asarray(u, dtype=float)) ** self.p

    def dpsi(self, u):
        u = np.asarray(u, dtype=float)
        return self.beta * self.p * np.sign(u) * np.abs(u) ** (self.p - 1.0)

    def d2psi(self, u):
        u = np.asarray(u, dtype=float)
        return self.beta * self.p * (self.p - 1.0) * np.abs(u) ** (self.p - 2.0)


DriftFamily = Union[ConstantDrift, PowerDrift]
DispersionFamily = Union[ConstantDispersion, PowerDispersion]
TerminalCostFamily = Union[QuadraticCost, LogCoshCost, EvenPolyCost]
RunningCostFamily = Union[QuadraticRunning, EvenPowerRunning]


@dataclass(frozen=True)
class ProblemInstance:
    drift: DriftFamily
    dispersion: DispersionFamily
    terminal: TerminalCostFamily
    running: RunningCostFamily
    c: float
    A: float

    # thin forwarding so callers can write instance.mu(x) etc.
    def mu(self, x):
        return self.drift.mu(x)

    def dmu(self, x):
        return self.drift.dmu(x)

    def sigma(self, x):
        return self.dispersion.sigma(x)

    def k(self, x):
        return self.terminal.k(x)

    def dk(self, x):
        return self.terminal.dk(x)

    def d2k(self, x):
        return self.terminal.d2k(x)

    def psi(self, u):
        return self.running.psi(u)

    def dpsi(self, u):
        return self.running.dpsi(u)

    def with_cost(self, c: float) -> "ProblemInstance":
        """Same dynamics and costs with a different operating cost."""
        if c < 0:
            raise ProblemError(f"operating cost must be >= 0, got {c}")
        return ProblemInstance(self.drift, self.dispersion, self.terminal, self.running, float(c), self.A)


@dataclass
class AssumptionReport:
    passed: dict[str, bool]
    residuals: dict[str, float]
    grid: np.ndarray = field(repr=False)
    notes: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def first_failure(self) -> str | None:
        for name, flag in self.passed.items():
            if not flag:
                return name
        return None


# ------------------------------------------------------------------ construction


def _positive(name: str, value) -> float:
    value = float(value)
    if not value > 0 or not math.isfinite(value):
        raise ProblemError(f"{name} must be a positive finite number, got {value}")
    return value


def _drift_from(cfg: Mapping) -> DriftFamily:
    fam = cfg.get("family")
    if fam == "constant":
        return ConstantDrift(_positive("drift.m", cfg["m"]))
    if fam == "power":
        a = float(cfg["a"])
        if a < 1.0:
            raise ProblemError(f"drift.a must be >= 1, got {a}")
        return PowerDrift(a, _positive("drift.scale", cfg.get("scale", 1.0)))
    raise ProblemError(f"unknown drift family {fam!r}")


def _dispersion_from(cfg: Mapping) -> DispersionFamily:
    fam = cfg.get("family")
    if fam == "constant":
        return ConstantDispersion(_positive("dispersion.sigma0", cfg["sigma0"]))
    if fam == "power":
        return PowerDispersion(float(cfg["b"]), _positive("dispersion.scale", cfg.get("scale", 1.0)))
    raise ProblemError(f"unknown dispersion family {fam!r}")


def _terminal_from(cfg: Mapping) -> TerminalCostFamily:
    fam = cfg.get("family")
    if fam == "quadratic":
        return QuadraticCost(_positive("terminal.kappa", cfg["kappa"]))
    if fam == "logcosh":
        return LogCoshCost(_positive("terminal.kappa", cfg["kappa"]))
    if fam == "even_poly":
        coeffs = tuple(float(v) for v in cfg["coeffs"])
        if len(coeffs) < 2:
            raise ProblemError("terminal.coeffs needs degree >= 2 (at least two entries)")
        if any(v < 0 or not math.isfinite(v) for v in coeffs):
            raise ProblemError("terminal.coeffs must be finite and >= 0")
        if not any(v > 0 for v in coeffs[1:]):
            raise ProblemError("terminal.coeffs needs a positive coefficient of degree >= 2")
        return EvenPolyCost(coeffs)
    raise ProblemError(f"unknown terminal family {fam!r}")


def _running_from(cfg: Mapping) -> RunningCostFamily:
    fam = cfg.get("family")
    if fam == "quadratic":
        return QuadraticRunning(_positive("running.beta", cfg["beta"]))
    if fam == "even_power":
        p = float(cfg["p"])
        if p < 2.0:
            raise ProblemError(f"running.p must be >= 2, got {p}")
        return EvenPowerRunning(_positive("running.beta", cfg["beta"]), p)
    raise ProblemError(f"unknown running family {fam!r}")


def infer_A(drift: DriftFamily, dispersion: DispersionFamily, grid: Sequence[float] = DEFAULT_GRID,
            tol: float = DEFAULT_TOL) -> float:
    """Median of mu' sigma^2 / mu^2 over ``grid``.

    Raises ProblemError when the ratio is not constant to within ``tol``
    (relative to max(1, |median|)), i.e. when no constant satisfies (A4).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ProblemError("grid must be nonempty, strictly positive and strictly increasing")
    ratio = drift.dmu(grid) * dispersion.sigma(grid) ** 2 / drift.mu(grid) ** 2
    A = float(np.median(ratio))
    spread = float(np.max(np.abs(ratio - A)))
    if not spread <= tol * max(1.0, abs(A)):
        raise ProblemError(f"no constant A satisfies mu' sigma^2 = A mu^2 (ratio spread {spread:.3g})")
    return max(A, 0.0)


def build_problem(config: Mapping) -> ProblemInstance:
    """Build an instance from a mapping with keys drift, dispersion, terminal, running, c."""
    try:
        drift = _drift_from(config["drift"])
        dispersion = _dispersion_from(config["dispersion"])
        terminal = _terminal_from(config["terminal"])
        running = _running_from(config["running"])
        c = float(config["c"])
    except KeyError as exc:
        raise ProblemError(f"missing key {exc.args[0]!r}") from None
    if not (c >= 0 and math.isfinite(c)):
        raise ProblemError(f"c must be finite and >= 0, got {c}")
    A = infer_A(drift, dispersion)
    if A == 0.0 and not dispersion.bounded:
        raise ProblemError("A = 0 requires a bounded dispersion (A5)")
    return ProblemInstance(drift, dispersion, terminal, running, c, A)


# ------------------------------------------------------------------ verification


def _second_difference(f, x: np.ndarray) -> np.ndarray:
    h = 1e-4 * np.maximum(1.0, np.abs(x))
    return (f(x + h) - 2.0 * f(x) + f(x - h)) / h**2


def verify_assumptions(instance: ProblemInstance, grid: Sequence[float] = DEFAULT_GRID,
                       tol: float = DEFAULT_TOL) -> AssumptionReport:
    """Check (A1)-(A7) numerically on ``grid``; failures are recorded, never raised."""
    x = np.asarray(grid, dtype=float)
    inst = instance
    passed: dict[str, bool] = {}
    res: dict[str, float] = {}
    notes: dict[str, str] = {}
    with np.errstate(all="ignore"):
        mu, dmu, sig = inst.mu(x), inst.dmu(x), inst.sigma(x)

        # A1: even, positive, differentiable, nondecreasing on (0, inf)
        even_mu = float(np.max(np.abs(mu - inst.mu(-x))))
        h = 1e-6 * x
        fd = (inst.mu(x + h) - inst.mu(x - h)) / (2 * h)
        deriv_err = float(np.max(np.abs(fd - dmu) / np.maximum(1.0, np.abs(dmu))))
        res["A1"] = max(even_mu, deriv_err)
        passed["A1"] = bool(even_mu == 0.0 and np.all(mu > 0) and np.all(dmu >= 0)
                            and np.all(np.isfinite(dmu)) and deriv_err < 1e-4)

        # A2: even, continuous, bounded away from zero on [eps, inf)
        even_sig = float(np.max(np.abs(sig - inst.sigma(-x))))
        res["A2"] = even_sig
        passed["A2"] = bool(even_sig == 0.0 and np.all(np.isfinite(sig)) and np.min(sig) > 0)

        # A3: coefficients locally integrable along constant controls
        res["A3"] = 0.0
        passed["A3"] = bool(np.all(np.isfinite(mu)) and np.all(np.isfinite(sig)))

        # A4: mu' sigma^2 = A mu^2
        a4 = np.abs(dmu * sig**2 - inst.A * mu**2) / np.maximum(1.0, mu**2)
        res["A4"] = float(np.max(a4))
        passed["A4"] = bool(inst.A >= 0 and res["A4"] <= tol)

        # A5: growth conditions
        if inst.A == 0.0:
            bounded = inst.dispersion.bounded
            res["A5"] = float(np.max(sig))
            passed["A5"] = bool(bounded)
            if not bounded:
                notes["A5"] = "A = 0 but dispersion is unbounded"
        else:
            res["A5"] = float(np.min(dmu))
            passed["A5"] = bool(np.min(dmu) > 0)

        # A6: k, psi C^2, nonnegative, even, strictly convex, psi(0) = 0
        k, psi = inst.k(x), inst.psi(x)
        even_k = float(np.max(np.abs(k - inst.k(-x))))
        even_psi = float(np.max(np.abs(psi - inst.psi(-x))))
        # strict convexity from the exact second derivatives; the second
        # difference only cross-checks them (it is round-off bound where k'' is tiny)
        conv_k, conv_psi = inst.d2k(x), inst.running.d2psi(x)
        fd_err = max(
            float(np.max(np.abs(_second_difference(inst.k, x) - conv_k) / np.maximum(1.0, np.abs(conv_k)))),
            float(np.max(np.abs(_second_difference(inst.psi, x) - conv_psi) / np.maximum(1.0, np.abs(conv_psi)))),
        )
        min_curv = float(min(np.min(conv_k), np.min(conv_psi)))
        res["A6"] = max(even_k, even_psi, max(0.0, -min_curv), abs(float(inst.psi(0.0))), fd_err)
        passed["A6"] = bool(
            even_k == 0.0 and even_psi == 0.0 and np.all(k >= 0) and np.all(psi >= 0)
            and min_curv > 0 and float(inst.psi(0.0)) == 0.0 and float(inst.k(0.0)) >= 0
            and np.all(np.isfinite(conv_k)) and fd_err <= 1e-3
        )
        if np.min(conv_k) <= 0:
            notes["A6"] = f"terminal cost not convex near x = {x[int(np.argmin(conv_k))]:.4g}"

        # A7: psi' unbounded, probed at the grid end
        dpsi_end = float(inst.dpsi(x[-1]))
        res["A7"] = dpsi_end
        passed["A7"] = bool(dpsi_end >= 10.0 * float(inst.dpsi(1.0)) and np.all(np.diff(inst.dpsi(x)) > 0))

    for key, val in res.items():
        if not math.isfinite(val):
            res[key] = float(np.finfo(float).max)
            passed[key] = False
    return AssumptionReport(passed, res, x, notes)
