"""Physical constants, the contact-point response law and contact-angle data.

All quantities are nondimensional.  ``jump_gamma`` is the solid-vapor minus
solid-fluid energy coefficient; the Young condition requires it to be
strictly smaller than the surface tension in magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


class ModelError(Exception):
    """Base class for admissibility and solver errors raised by this package."""


class YoungViolation(ModelError):
    pass


class NonPositiveConstant(ModelError):
    def __init__(self, name: str):
        super().__init__(f"parameter {name!r} must be positive")
        self.name = name


class NonMonotone(ModelError):
    pass


class KappaMismatch(ModelError):
    pass


LINEAR = "linear"
CUBIC = "cubic"


@dataclass(frozen=True)
class ResponseLaw:
    """Contact-point response W(z) = kappa*z (+ c*z**3 for the cubic family)."""

    kind: str = LINEAR
    kappa: float = 1.0
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in (LINEAR, CUBIC):
            raise ValueError(f"unknown response law {self.kind!r}")
        if not self.kappa > 0:
            raise NonPositiveConstant("kappa")
        if self.c < 0:
            raise ValueError("cubic coefficient must be nonnegative")

    @property
    def cubic(self) -> float:
        return self.c if self.kind == CUBIC else 0.0

    def W(self, z):
        return self.kappa * z + self.cubic * z ** 3

    def W_hat(self, z):
        # W(z)/kappa - z, quadratically small at the origin
        return (self.cubic / self.kappa) * z ** 3

    def W_prime(self, z):
        return self.kappa + 3.0 * self.cubic * z ** 2


@dataclass(frozen=True)
class PhysicalParams:
    g: float = 1.0
    sigma: float = 1.0
    gamma_sv: float = 0.0
    gamma_sf: float = 0.0
    mu: float = 1.0
    beta: float = 1.0
    ell: float = 1.0
    channel_height: float = 3.0
    vessel_depth: float = 1.0
    kappa: float = 1.0
    law: ResponseLaw = field(default_factory=ResponseLaw)

    @property
    def jump_gamma(self) -> float:
        return self.gamma_sv - self.gamma_sf

    def with_law(self, kind: str, c: float = 0.0) -> "PhysicalParams":
        return replace(self, law=ResponseLaw(kind, self.kappa, c))


def make_params(law_kind: str = LINEAR, c: float = 0.0, **values) -> PhysicalParams:
    """Build parameters whose response law shares the stored ``kappa``."""
    kappa = values.get("kappa", 1.0)
    return PhysicalParams(**values, law=ResponseLaw(law_kind, kappa, c))


_POSITIVE = ("g", "sigma", "mu", "beta", "ell", "channel_height", "vessel_depth", "kappa")


def validate_params(p: PhysicalParams) -> None:
    """Raise if ``p`` is inadmissible; return None otherwise."""
    for name in _POSITIVE:
        value = getattr(p, name)
        if not (np.isfinite(value) and value > 0):
            raise NonPositiveConstant(name)
    for name in ("gamma_sv", "gamma_sf"):
        if not np.isfinite(getattr(p, name)):
            raise ValueError(f"parameter {name!r} must be finite")
    if abs(p.jump_gamma) >= p.sigma:
        raise YoungViolation(
            f"Young condition violated: |gamma_sv - gamma_sf| = {abs(p.jump_gamma)!r} "
            f">= sigma = {p.sigma!r}")
    if abs(p.law.W_prime(0.0) - p.kappa) > 1e-12 * p.kappa:
        raise KappaMismatch(
            f"kappa = {p.kappa!r} differs from the response law slope {p.law.W_prime(0.0)!r}")


@dataclass(frozen=True)
class ContactAngleData:
    theta_eq: float
    omega_eq: float
    eps_max: float

    def q_of(self, delta: float) -> float:
        if not 0 < delta < self.eps_max:
            raise ValueError(f"delta must lie in (0, {self.eps_max})")
        return 2.0 / (2.0 - delta)


def contact_angles(p: PhysicalParams) -> ContactAngleData:
    validate_params(p)
    theta = math.acos(-p.jump_gamma / p.sigma)
    omega = math.pi - theta
    return ContactAngleData(theta, omega, min(1.0, -1.0 + math.pi / omega))


def response_eval(law: ResponseLaw, z: float):
    """Return ``(W(z), W_hat(z), W'(z))``."""
    wp = law.W_prime(z)
    if not wp > 0:
        raise NonMonotone(f"response law not increasing at z={z!r}")
    return law.W(z), law.W_hat(z), wp
