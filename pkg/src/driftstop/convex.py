"""Inverse marginal running cost and the minimized Hamiltonian.

``xi`` inverts psi' and ``eta(z) = min_u [u z + psi(u)] = z xi(-z) + psi(xi(-z))``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .problem import EvenPowerRunning, QuadraticRunning, RunningCostFamily


class ConjugateError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConjugatePair:
    running: RunningCostFamily
    use_closed_form: bool = True

    @property
    def has_closed_form(self) -> bool:
        return isinstance(self.running, (QuadraticRunning, EvenPowerRunning))


def _xi_closed(running: RunningCostFamily, z):
    if isinstance(running, QuadraticRunning):
        return z / (2.0 * running.beta)
    p, beta = running.p, running.beta
    return np.sign(z) * (np.abs(z) / (beta * p)) ** (1.0 / (p - 1.0))


def xi_numeric(running: RunningCostFamily, z: float, max_doublings: int = 1000) -> float:
    """Root of psi'(u) = z by expanding bracket and Brent's method."""
    if z == 0.0:
        return 0.0

    def g(u):
        return float(running.dpsi(u)) - z

    direction = 1.0 if z > 0 else -1.0
    hi = direction
    for _ in range(max_doublings):
        if g(hi) * direction >= 0:
            break
        hi *= 2.0
    else:
        raise ConjugateError(f"could not bracket psi'(u) = {z} within {max_doublings} doublings")
    lo, hi = sorted((0.0, hi))
    return brentq(g, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=500)


def _scalar_or_array(values, like):
    return float(values) if np.ndim(like) == 0 else values


def xi(pair: ConjugatePair, z):
    """u with psi'(u) = z; accepts scalars or arrays."""
    za = np.asarray(z, dtype=float)
    if pair.use_closed_form and pair.has_closed_form:
        return _scalar_or_array(_xi_closed(pair.running, za), z)
    out = np.vectorize(lambda v: xi_numeric(pair.running, float(v)), otypes=[float])(za)
    return _scalar_or_array(out, z)


def eta(pair: ConjugatePair, z):
    """min over u of u z + psi(u); accepts scalars or arrays."""
    za = np.asarray(z, dtype=float)
    if pair.use_closed_form and isinstance(pair.running, QuadraticRunning):
        return _scalar_or_array(-za * za / (4.0 * pair.running.beta), z)
    u = np.asarray(xi(pair, -za))
    return _scalar_or_array(za * u + pair.running.psi(u), z)


def eta_derivative_residual(pair: ConjugatePair, z: float, h: float = 1e-5) -> float:
    """|central difference of eta at z - xi(-z)|."""
    if not h > 0:
        raise ValueError("h must be positive")
    fd = (eta(pair, z + h) - eta(pair, z - h)) / (2.0 * h)
    return abs(fd - xi(pair, -z))
