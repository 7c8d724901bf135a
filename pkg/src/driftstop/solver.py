"""Stopping threshold, value function, optimal policy and the VI check."""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .convex import ConjugatePair, eta, xi
from .policy import ConstantThreshold, Policy, StopAtOnce
from .problem import ConstantDrift, ProblemInstance, QuadraticRunning
from .quadrature import adaptive_simpson

SEARCH_START = 1.0
SEARCH_LIMIT = 1e12
QUAD_TOL = 1e-10
S_EXCLUSION = 1e-6


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ThresholdResult:
    """Free boundary and its smooth-fit constants for one operating cost.

    ``s`` is ``math.inf`` when the threshold equation has no positive root;
    ``gamma``, ``b`` and ``u_star`` are then None.  For ``c = 0`` the result is
    the degenerate limit ``s = 0``, ``u_star = 0``.
    """

    c: float
    s: float
    gamma: float | None = None
    b: float | None = None
    u_star: float | None = None
    residual: float = 0.0

    @property
    def infinite(self) -> bool:
        return math.isinf(self.s)

    @property
    def degenerate(self) -> bool:
        return self.s == 0.0


def zeta(instance: ProblemInstance, z: float) -> float:
    """eta(mu(z) k'(z)) - (A/2) mu(z) k'(z)."""
    w = float(instance.mu(z) * instance.dk(z))
    return float(eta(ConjugatePair(instance.running), w)) - 0.5 * instance.A * w


def _monotone_violation(prev: float, new: float) -> bool:
    # ties are allowed: zeta saturates in floating point for bounded k'
    return new > prev + 1e-12 * max(1.0, abs(prev))


def solve_threshold(instance: ProblemInstance) -> ThresholdResult:
    c = instance.c
    if c < 0:
        raise SolverError(f"operating cost must be >= 0, got {c}")
    if c == 0:
        return ThresholdResult(c=0.0, s=0.0, gamma=0.0, b=float(instance.k(0.0)), u_star=0.0)

    def f(z):
        return zeta(instance, z) + c

    z = SEARCH_START
    fz = f(z)
    if fz > 0:
        while fz > 0:
            if z >= SEARCH_LIMIT:
                return ThresholdResult(c=c, s=math.inf)
            z_next = min(2.0 * z, SEARCH_LIMIT)
            f_next = f(z_next)
            if _monotone_violation(fz, f_next):
                raise SolverError(f"zeta is not decreasing between {z:.6g} and {z_next:.6g}")
            lo, z, fz = z, z_next, f_next
        hi = z
    else:
        hi = z
        for _ in range(2000):
            z_next = 0.5 * z
            f_next = f(z_next)
            if _monotone_violation(f_next, fz):
                raise SolverError(f"zeta is not decreasing between {z_next:.6g} and {z:.6g}")
            z, fz = z_next, f_next
            if fz > 0:
                break
        else:
            raise SolverError("could not bracket the threshold from below")
        lo = z
    if f(hi) == 0.0:
        s = hi
    else:
        s = brentq(f, lo, hi, xtol=1e-300, rtol=8.9e-16, maxiter=2000)
    residual = abs(f(s))
    gamma = float(instance.mu(s) * instance.dk(s))
    u_star = float(xi(ConjugatePair(instance.running), -gamma))
    return ThresholdResult(c=c, s=float(s), gamma=gamma, b=float(instance.k(s)), u_star=u_star,
                           residual=residual)


@dataclass(frozen=True)
class ValueFunction:
    """V(x) = k(x) on [-s, s], k(s) + gamma * int_s^|x| dy/mu(y) outside.

    With ``quadrature=True`` the integral is computed by adaptive Simpson
    instead of the drift family's antiderivative.
    """

    instance: ProblemInstance
    threshold: ThresholdResult
    quadrature: bool = False
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False, compare=False)

    def reciprocal_integral(self, x: float) -> float:
        """int_s^x dy / mu(y) for x >= s."""
        s = self.threshold.s
        if not self.quadrature:
            return self.instance.drift.reciprocal_integral(s, x)
        with self._lock:
            hit = self._cache.get(x)
        if hit is not None:
            return hit
        mu = self.instance.mu
        val = adaptive_simpson(lambda y: 1.0 / float(mu(y)), s, x, tol=QUAD_TOL)
        with self._lock:
            self._cache.setdefault(x, val)
        return val

    def __call__(self, x: float) -> float:
        return value_at(self, x)

    def derivative(self, x):
        """Exact piecewise V'."""
        inst, tr = self.instance, self.threshold
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        if tr.infinite:
            return inst.dk(x)
        outside = np.sign(x) * tr.gamma / inst.mu(np.maximum(ax, tr.s))
        return np.where(ax <= tr.s, inst.dk(x), outside)

    def second_derivative(self, x):
        """Exact V'' away from +-s."""
        inst, tr = self.instance, self.threshold
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        if tr.infinite:
            return inst.d2k(x)
        axo = np.maximum(ax, tr.s)
        outside = -tr.gamma * np.abs(inst.dmu(axo)) / inst.mu(axo) ** 2
        return np.where(ax <= tr.s, inst.d2k(x), outside)


def value_function(instance: ProblemInstance, quadrature: bool = False) -> ValueFunction:
    return ValueFunction(instance, solve_threshold(instance), quadrature=quadrature)


def value_at(vf: ValueFunction, x: float) -> float:
    inst, tr = vf.instance, vf.threshold
    ax = abs(float(x))
    if inst.c == 0:
        return float(inst.k(0.0))
    if tr.infinite or ax <= tr.s:
        return float(inst.k(ax))
    return tr.b + tr.gamma * vf.reciprocal_integral(ax)


def chain_value(vf: ValueFunction, x: float) -> float:
    """k(s) + (c + psi(u*)) E[tau*] with the closed-form hitting time.

    Equals value_at for |x| >= s; kept as an independent evaluation route.
    """
    inst, tr = vf.instance, vf.threshold
    ax = abs(float(x))
    if tr.infinite or ax <= tr.s:
        return float(inst.k(ax))
    u = tr.u_star
    expected_tau = 2.0 / (inst.A - 2.0 * u) * vf.reciprocal_integral(ax)
    return float(inst.k(tr.s)) + (inst.c + float(inst.psi(u))) * expected_tau


def optimal_policy(instance: ProblemInstance, tr: ThresholdResult) -> Policy:
    if tr.infinite or instance.c == 0 or tr.degenerate:
        return StopAtOnce()
    return ConstantThreshold(u=tr.u_star, s=tr.s)


def smooth_fit_residual(vf: ValueFunction, h: float = 1e-6) -> float:
    """|V'(s-) - V'(s+)| from second-order one-sided difference quotients."""
    s = vf.threshold.s
    if not math.isfinite(s) or s == 0.0:
        return 0.0
    left = (3.0 * value_at(vf, s) - 4.0 * value_at(vf, s - h) + value_at(vf, s - 2 * h)) / (2 * h)
    right = (-3.0 * value_at(vf, s) + 4.0 * value_at(vf, s + h) - value_at(vf, s + 2 * h)) / (2 * h)
    return abs(left - right)


@dataclass
class VIReport:
    grid: np.ndarray = field(repr=False)
    r1: np.ndarray = field(repr=False)
    r2: np.ndarray = field(repr=False)
    r3: np.ndarray = field(repr=False)
    min_r1: float
    min_r2: float
    max_complementarity: float
    max_violation: float
    tol: float
    passed: bool


def check_variational_inequalities(vf: ValueFunction, grid, tol: float = 1e-8) -> VIReport:
    """Residuals of (i) k - V >= 0, (ii) 1/2 V'' sigma^2 + eta(mu V') + c >= 0, (iii) their product = 0.

    Grid points within 1e-6 of +-s are dropped since V'' jumps there.  The
    product is measured relative to max(1, |r1|, |r2|).
    """
    inst, tr = vf.instance, vf.threshold
    x = np.asarray(grid, dtype=float)
    if math.isfinite(tr.s):
        x = x[np.abs(np.abs(x) - tr.s) > S_EXCLUSION]
    V = np.array([value_at(vf, xi_) for xi_ in x])
    r1 = inst.k(x) - V
    if inst.c == 0:
        # V is the constant k(0): V' = V'' = 0
        r2 = 0.0 * x + float(eta(ConjugatePair(inst.running), 0.0)) + inst.c
    else:
        d1, d2 = vf.derivative(x), vf.second_derivative(x)
        ax = np.abs(x)
        r2 = 0.5 * d2 * inst.sigma(x) ** 2 + eta(ConjugatePair(inst.running), inst.mu(ax) * np.abs(d1)) + inst.c
    r3 = r1 * r2
    scale = np.maximum(1.0, np.maximum(np.abs(r1), np.abs(r2)))
    comp = float(np.max(np.abs(r3) / scale)) if x.size else 0.0
    min_r1 = float(np.min(r1)) if x.size else 0.0
    min_r2 = float(np.min(r2)) if x.size else 0.0
    violation = max(-min_r1, -min_r2, comp, 0.0) + 0.0  # normalise -0.0
    return VIReport(x, r1, r2, r3, min_r1, min_r2, comp, violation, tol, bool(violation <= tol))


def _min_control_hamiltonian(a: float, b: float, running) -> float:
    """min over u of a u^2 + b u + psi(u) for a >= 0 (strictly convex in u)."""
    if isinstance(running, QuadraticRunning):
        return -b * b / (4.0 * (a + running.beta))
    if b == 0.0:
        return 0.0

    def g(u):
        return 2.0 * a * u + b + float(running.dpsi(u))

    hi = -math.copysign(1.0, b)
    while g(hi) * hi < 0:
        hi *= 2.0
    lo, hi = sorted((0.0, hi))
    u = brentq(g, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=500)
    return a * u * u + b * u + float(running.psi(u))


def check_variance_control_vi(vf: ValueFunction, grid, tol: float = 1e-8) -> VIReport:
    """VIs for dX = u dt + u sigma(X) dW, where the control also scales the noise.

    (ii) becomes min_u [1/2 V'' sigma^2 u^2 + u V' + psi(u)] + c >= 0.  Only the
    unit-drift case is covered: there V is linear outside [-s, s], V'' >= 0 and
    the bracket is strictly convex in u.
    """
    inst, tr = vf.instance, vf.threshold
    if not (isinstance(inst.drift, ConstantDrift) and inst.drift.m == 1.0):
        raise SolverError("variance-control check needs the unit drift mu = 1")
    x = np.asarray(grid, dtype=float)
    if math.isfinite(tr.s):
        x = x[np.abs(np.abs(x) - tr.s) > S_EXCLUSION]
    V = np.array([value_at(vf, xi_) for xi_ in x])
    r1 = inst.k(x) - V
    if inst.c == 0:
        d1, d2 = np.zeros_like(x), np.zeros_like(x)
    else:
        d1, d2 = vf.derivative(x), vf.second_derivative(x)
    sig2 = inst.sigma(x) ** 2 * np.ones_like(x)
    r2 = np.array([_min_control_hamiltonian(0.5 * a * s2, b, inst.running) for a, s2, b in zip(d2, sig2, d1)]) + inst.c
    r3 = r1 * r2
    scale = np.maximum(1.0, np.maximum(np.abs(r1), np.abs(r2)))
    comp = float(np.max(np.abs(r3) / scale)) if x.size else 0.0
    min_r1 = float(np.min(r1)) if x.size else 0.0
    min_r2 = float(np.min(r2)) if x.size else 0.0
    violation = max(-min_r1, -min_r2, comp, 0.0) + 0.0
    return VIReport(x, r1, r2, r3, min_r1, min_r2, comp, violation, tol, bool(violation <= tol))
