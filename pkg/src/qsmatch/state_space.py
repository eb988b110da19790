"""Qubit state parameterisations and the quadratic map z -> z**2 / eps.

A pure qubit state ``|0> + z|1>`` (up to normalisation) is identified with a
point of the extended complex plane.  The Bloch angles are related to it by
``z = exp(i*phi) * tan(theta/2)``; ``theta = pi`` is the point at infinity.
"""

from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

TWO_PI = 2.0 * math.pi

# orbit magnitudes above this are clamped to the point at infinity
ORBIT_CLAMP = 1e150


@dataclass(frozen=True)
class BlochState:
    """Pure qubit state ``cos(theta/2)|0> + exp(i*phi) sin(theta/2)|1>``."""

    theta: float
    phi: float = 0.0

    def __post_init__(self) -> None:
        theta = float(self.theta)
        if not (-1e-12 <= theta <= math.pi + 1e-12) or math.isnan(theta):
            raise ValueError(f"theta must lie in [0, pi], got {theta!r}")
        theta = min(max(theta, 0.0), math.pi)
        if theta == 0.0 or theta == math.pi:
            phi = 0.0
        else:
            phi = float(self.phi) % TWO_PI
            if phi >= TWO_PI:  # -tiny % 2pi rounds up to 2pi
                phi = 0.0
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)

    def amplitudes(self) -> np.ndarray:
        return np.array(
            [math.cos(self.theta / 2), cmath.exp(1j * self.phi) * math.sin(self.theta / 2)],
            dtype=complex,
        )

    @classmethod
    def from_amplitudes(cls, a0: complex, a1: complex) -> "BlochState":
        """Bloch angles of the (unnormalised) vector ``a0|0> + a1|1>``; global phase is dropped."""
        r0, r1 = abs(a0), abs(a1)
        if r0 == 0.0 and r1 == 0.0:
            raise ValueError("zero vector has no Bloch representation")
        theta = 2.0 * math.atan2(r1, r0)
        phi = cmath.phase(a1) - cmath.phase(a0) if r0 > 0 and r1 > 0 else 0.0
        return cls(theta, phi)


@dataclass(frozen=True)
class ComplexPoint:
    """Point of the extended complex plane. ``value is None`` marks infinity."""

    value: Optional[complex] = None

    def __post_init__(self) -> None:
        if self.value is not None:
            v = complex(self.value)
            if cmath.isnan(v):
                raise ValueError("NaN is not a point of the extended plane")
            object.__setattr__(self, "value", None if cmath.isinf(v) else v)

    @property
    def is_infinite(self) -> bool:
        return self.value is None

    def __abs__(self) -> float:
        return math.inf if self.value is None else abs(self.value)

    @classmethod
    def of(cls, z: Union["ComplexPoint", complex, float, None]) -> "ComplexPoint":
        return z if isinstance(z, ComplexPoint) else cls(z)


INFINITY = ComplexPoint(None)


@dataclass(frozen=True)
class Epsilon:
    """Tolerance radius ``0 < eps <= 1``; ``alpha = arccos(eps)``."""

    epsilon: float

    def __post_init__(self) -> None:
        eps = float(self.epsilon)
        if not (0.0 < eps <= 1.0):
            raise ValueError(f"epsilon must satisfy 0 < eps <= 1, got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", eps)

    @property
    def alpha(self) -> float:
        return math.acos(self.epsilon)

    def __float__(self) -> float:
        return self.epsilon

    @classmethod
    def of(cls, eps: Union["Epsilon", float]) -> "Epsilon":
        return eps if isinstance(eps, Epsilon) else cls(eps)


class Basin(enum.Enum):
    ZERO = "inside"  # converges to |0>
    JULIA = "on"  # the circle |z| = eps
    INFINITY = "outside"  # converges to |1>


def project_to_plane(state: BlochState) -> ComplexPoint:
    if state.theta == math.pi:
        return INFINITY
    return ComplexPoint(cmath.exp(1j * state.phi) * math.tan(state.theta / 2))


def lift_to_sphere(z: Union[ComplexPoint, complex]) -> BlochState:
    z = ComplexPoint.of(z)
    if z.is_infinite:
        return BlochState(math.pi, 0.0)
    r = abs(z.value)
    if r == 0.0:
        return BlochState(0.0, 0.0)
    return BlochState(2.0 * math.atan(r), cmath.phase(z.value))


def apply_map(z: Union[ComplexPoint, complex], eps: Union[Epsilon, float]) -> ComplexPoint:
    """One step of the protocol on the plane: ``f(z) = z**2 / eps``."""
    z = ComplexPoint.of(z)
    eps = Epsilon.of(eps)
    if z.is_infinite:
        return INFINITY
    if abs(z.value) > 1e150:
        return INFINITY
    return ComplexPoint(z.value * z.value / eps.epsilon)


def iterate_map(z0: Union[ComplexPoint, complex], eps: Union[Epsilon, float], n: int) -> list[ComplexPoint]:
    """Orbit ``[z0, f(z0), ..., f^n(z0)]``.

    Once a magnitude exceeds ``ORBIT_CLAMP`` the rest of the orbit is the
    point at infinity.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    eps = Epsilon.of(eps)
    orbit = [ComplexPoint.of(z0)]
    for _ in range(n):
        z = orbit[-1]
        orbit.append(INFINITY if abs(z) > ORBIT_CLAMP else apply_map(z, eps))
    return orbit


def basin(z: Union[ComplexPoint, complex], eps: Union[Epsilon, float], tol: float = 1e-12) -> Basin:
    """Which superattractive fixed point the orbit of ``z`` approaches."""
    r = abs(ComplexPoint.of(z))
    eps = Epsilon.of(eps).epsilon
    if abs(r - eps) <= tol * eps:
        return Basin.JULIA
    return Basin.ZERO if r < eps else Basin.INFINITY


def kept_amplitudes(theta0: float, eps: Union[Epsilon, float], n: int) -> tuple[float, float]:
    """Unnormalised magnitudes of the |0>, |1> components of the kept qubit after n steps."""
    eps = Epsilon.of(eps).epsilon
    k = 2**n
    return eps ** (k - 1) * math.cos(theta0 / 2) ** k, math.sin(theta0 / 2) ** k


def success_probability(theta0: float, eps: Union[Epsilon, float], n: int = 1) -> float:
    """Probability that every post-selection of an n-step run succeeds.

    Depends on ``theta0`` only, never on the azimuth of the input.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    eps = Epsilon.of(eps).epsilon
    k = 2 ** (n + 1)
    return eps ** (k - 2) * math.cos(theta0 / 2) ** k + math.sin(theta0 / 2) ** k


def ideal_state_after(state0: BlochState, eps: Union[Epsilon, float], n: int) -> tuple[BlochState, float]:
    """Kept-qubit state and success probability after n noiseless steps."""
    if n < 1:
        raise ValueError("n must be >= 1")
    a0, a1 = kept_amplitudes(state0.theta, eps, n)
    theta_n = 2.0 * math.atan2(a1, a0)
    return BlochState(theta_n, (2**n * state0.phi) % TWO_PI), success_probability(state0.theta, eps, n)
