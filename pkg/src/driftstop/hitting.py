"""Scale function, speed measure and one-sided hitting-time expectations.

The closed form ``E[tau] = 2/(A - 2u) int_s^x dy/mu(y)`` is checked against the
general formula

    E[tau] = -int_s^x (p(x) - p(y)) m(dy) + (p(x) - p(s)) m((s, inf)),

which is evaluated here by quadrature from the scale density and speed density
alone.  The two terms are individually huge when p' is steep, so the default
form swaps the order of integration (p(x) - p(y) = int_y^x p') to get

    E[tau] = int_s^x p'(z) m((z, inf)) dz,

a single integral of a positive integrand.  ``form="two_term"`` keeps the
literal expression.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from scipy.integrate import quad

from .problem import ConstantDispersion, ConstantDrift, PowerDispersion, PowerDrift, ProblemInstance

X_MAX = 1e6
_QUAD = dict(epsabs=1e-14, epsrel=1e-13, limit=500)


class HittingError(ValueError):
    pass


def _quad(f, a, b):
    val, _ = quad(f, a, b, **_QUAD)
    return val


@dataclass(frozen=True)
class ScaleSpec:
    """Scale function of dX = u mu(X) dt + sigma(X) dW, normalised so p(d) = 0.

    ``closed_form=False`` forces the nested-quadrature route even for families
    that admit the explicit density.
    """

    instance: ProblemInstance
    u: float
    s: float
    d: float
    closed_form: bool = True

    def __post_init__(self):
        if not self.u < 0:
            raise HittingError(f"control must be negative, got u = {self.u}")
        if not 0 < self.s < self.d:
            raise HittingError(f"need 0 < s < d, got s = {self.s}, d = {self.d}")

    @property
    def kind(self) -> str:
        """'exp' (A = 0, constant coefficients), 'power' (A > 0, power families) or 'generic'."""
        inst = self.instance
        if not self.closed_form:
            return "generic"
        if inst.A == 0 and isinstance(inst.drift, ConstantDrift) and isinstance(inst.dispersion, ConstantDispersion):
            return "exp"
        if inst.A > 0 and isinstance(inst.drift, PowerDrift) and isinstance(inst.dispersion, PowerDispersion):
            return "power"
        return "generic"

    def _inner(self, xi_: float) -> float:
        """int_d^xi mu / sigma^2."""
        inst = self.instance
        return _quad(lambda z: float(inst.mu(z) / inst.sigma(z) ** 2), self.d, xi_)

    def density(self, x: float) -> float:
        """p'(x)."""
        inst, u, d = self.instance, self.u, self.d
        kind = self.kind
        if kind == "exp":
            m, s0 = inst.drift.m, inst.dispersion.sigma0
            return math.exp(-2.0 * u * m * (x - d) / s0**2)
        if kind == "power":
            return (float(inst.mu(x)) / float(inst.mu(d))) ** (-2.0 * u / inst.A)
        return _generic_density(self, x)


@lru_cache(maxsize=200_000)
def _generic_density(spec: ScaleSpec, x: float) -> float:
    expo = -2.0 * spec.u * spec._inner(x)
    return math.exp(expo) if expo < 709.0 else math.inf


def scale_value(spec: ScaleSpec, x: float) -> float:
    """p(x) = int_d^x p'(xi) d xi."""
    if x < spec.s:
        raise HittingError(f"x = {x} lies below the threshold s = {spec.s}")
    inst, u, d = spec.instance, spec.u, spec.d
    kind = spec.kind
    try:
        if kind == "exp":
            kappa = -2.0 * u * inst.drift.m / inst.dispersion.sigma0**2
            return math.expm1(kappa * (x - d)) / kappa
        if kind == "power":
            q = -2.0 * u * inst.drift.a / inst.A
            return d / (q + 1.0) * ((x / d) ** (q + 1.0) - 1.0)
    except OverflowError:
        return math.inf
    return _quad(spec.density, d, x)


def speed_density(spec: ScaleSpec, x: float) -> float:
    """Density of the speed measure, 2 / (p'(x) sigma^2(x))."""
    return 2.0 / (spec.density(x) * float(spec.instance.sigma(x)) ** 2)


def _speed_antiderivative(spec: ScaleSpec, x: float) -> float:
    inst, u, d = spec.instance, spec.u, spec.d
    if spec.kind == "exp":
        m, s0 = inst.drift.m, inst.dispersion.sigma0
        return math.exp(2.0 * u * m * (x - d) / s0**2) / (u * m)
    A = inst.A
    if x == math.inf:
        return 0.0
    return 2.0 / (2.0 * u - A) * float(inst.mu(d)) ** (-2.0 * u / A) * float(inst.mu(x)) ** (2.0 * u / A - 1.0)


def speed_mass(spec: ScaleSpec, a: float, b: float = math.inf) -> float:
    """m((a, b)) for s <= a <= b (b may be infinite)."""
    if not spec.s <= a <= b:
        raise HittingError(f"need s <= a <= b, got s = {spec.s}, a = {a}, b = {b}")
    if a == b:
        return 0.0
    if spec.kind in ("exp", "power"):
        return _speed_antiderivative(spec, b) - _speed_antiderivative(spec, a)
    if b != math.inf:
        return _quad(lambda y: speed_density(spec, y), a, b)
    return speed_mass_truncated(spec, a)[0]


def speed_mass_truncated(spec: ScaleSpec, a: float) -> tuple[float, float]:
    """m((a, X_MAX)) by quadrature over doubling segments, plus the mass of (X_MAX, 10 X_MAX).

    The second value is the reported tail estimate; a tail that does not
    shrink relative to the previous decade signals a divergent measure.
    """
    f = lambda y: speed_density(spec, y)  # noqa: E731
    body, width, lo = 0.0, 1.0, a
    while lo < X_MAX:
        hi = min(lo + width, X_MAX)
        body += _quad(f, lo, hi)
        lo, width = hi, 2.0 * width
    last_decade = _quad(f, X_MAX / 10.0, X_MAX)
    tail = _quad(f, X_MAX, 10.0 * X_MAX)
    if not math.isfinite(body) or (tail > 0 and tail >= last_decade):
        raise HittingError(f"speed measure does not converge (tail estimate {tail:.3g})")
    return body, tail


def expected_hitting_time(instance: ProblemInstance, u: float, s: float, x: float) -> float:
    """E[inf{t: X(t) <= s}] for constant control u < 0 from X(0) = x >= s."""
    if not u < 0:
        raise HittingError(f"control must be negative, got u = {u}")
    if not 0 < s <= x:
        raise HittingError(f"need 0 < s <= x, got s = {s}, x = {x}")
    return 2.0 / (instance.A - 2.0 * u) * instance.drift.reciprocal_integral(s, x)


def expected_hitting_time_oracle(instance: ProblemInstance, u: float, s: float, x: float,
                                 d: float | None = None, closed_form: bool = True,
                                 form: str = "stable") -> float:
    """Same expectation from the scale function and speed measure."""
    if not 0 < s <= x:
        raise HittingError(f"need 0 < s <= x, got s = {s}, x = {x}")
    if form not in ("stable", "two_term"):
        raise ValueError(f"form must be 'stable' or 'two_term', got {form!r}")
    if d is None:
        d = s + 1.0
    spec = ScaleSpec(instance, u, s, d, closed_form=closed_form)
    if x == s:
        return 0.0
    if form == "stable":
        return _stable_form(spec, x)
    px = scale_value(spec, x)
    if spec.kind == "generic":
        # p(x) - p(y) by direct quadrature avoids differencing two large values
        gap = lambda y: _quad(spec.density, y, x)  # noqa: E731
    else:
        gap = lambda y: px - scale_value(spec, y)  # noqa: E731
    first = _quad(lambda y: gap(y) * speed_density(spec, y), spec.s, x)
    return -first + gap(spec.s) * speed_mass(spec, spec.s)


def _stable_form(spec: ScaleSpec, x: float) -> float:
    if spec.kind in ("exp", "power"):
        tail = lambda z: speed_mass(spec, z)  # noqa: E731
    else:
        # m((z, inf)) = m((z, x)) + m((x, inf)): positive pieces only
        beyond = speed_mass_truncated(spec, x)[0]
        tail = lambda z: _quad(lambda y: speed_density(spec, y), z, x) + beyond  # noqa: E731
    return _quad(lambda z: spec.density(z) * tail(z), spec.s, x)
