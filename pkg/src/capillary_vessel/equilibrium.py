"""Equilibrium capillary surfaces under a mass constraint.

The profile solves ``g*z - sigma*H(z) = P0`` on ``[-ell, ell]`` where ``H`` is
the curvature ``(z'/sqrt(1+z'^2))'``, with the contact slopes fixed by the
energy jump at the walls.  The pressure is known in closed form once the mass
is fixed, so the only unknown is the sampled height.

Discretely every node owns a control volume (half-width at the two ends) and
the balance over it is exactly the Euler-Lagrange equation of the sampled
energy with trapezoid mass.  Convergence is measured on these balances
(forces per control volume), whose round-off floor stays near machine
precision under refinement.  Summing the balances reproduces the mass
constraint, so the Newton updates stay mass-neutral.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .core_params import ContactAngleData, ModelError, PhysicalParams, contact_angles, validate_params


class EquilibriumError(ModelError):
    pass


class NewtonDivergence(EquilibriumError):
    pass


class SpillOver(EquilibriumError):
    pass


class NonPositiveHeight(EquilibriumError):
    pass


class GridMismatch(ModelError):
    pass


NEWTON_TOL = 1e-10
NEWTON_MAXIT = 50
PANEL_DELTA = 1e-3
PANEL_SIZE = 8


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


def _flux(s):
    return s / np.sqrt(1.0 + s * s)


def _dflux(s):
    return (1.0 + s * s) ** -1.5


def pressure_from_mass(params: PhysicalParams, M_top: float) -> float:
    return (params.g * M_top - 2.0 * params.jump_gamma) / (2.0 * params.ell)


def contact_slope(params: PhysicalParams) -> float:
    """Slope at the right wall; the left wall has the opposite sign."""
    r = params.jump_gamma / params.sigma
    return r / np.sqrt(1.0 - r * r)


@dataclass(frozen=True)
class EquilibriumProfile:
    x: np.ndarray
    zeta0: np.ndarray
    zeta0_prime: np.ndarray
    P0: float
    M_top: float
    angles: ContactAngleData
    params: PhysicalParams
    residual: float = 0.0
    iterations: int = 0

    @property
    def n(self) -> int:
        return len(self.x) - 1

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def mass(self) -> float:
        return float(trapezoid_weights(self.n, self.h) @ self.zeta0)

    @property
    def _spline(self) -> CubicSpline:
        sp = self.__dict__.get("_cached_spline")
        if sp is None:
            b = self.zeta0_prime
            sp = CubicSpline(self.x, self.zeta0, bc_type=((1, b[0]), (1, b[-1])))
            object.__setattr__(self, "_cached_spline", sp)
        return sp

    def height(self, x):
        return self._spline(x)

    def slope(self, x):
        return self._spline(x, 1)

    def to_csv(self, path) -> None:
        data = np.column_stack([self.x, self.zeta0, self.zeta0_prime])
        np.savetxt(path, data, delimiter=",", header="x,zeta0,zeta0_prime",
                   comments="", fmt="%.17g")


def energy_I(zeta, params: PhysicalParams, x=None) -> float:
    """Gravity-capillary energy of a sampled height on a uniform grid."""
    zeta = np.asarray(zeta, dtype=float)
    n = zeta.size - 1
    if n < 1:
        raise GridMismatch("need at least two samples")
    h = 2.0 * params.ell / n
    if x is not None:
        x = np.asarray(x, dtype=float)
        if x.shape != zeta.shape or not np.allclose(np.diff(x), h, rtol=1e-9, atol=0.0):
            raise GridMismatch("heights and grid disagree")
    w = trapezoid_weights(n, h)
    slopes = np.diff(zeta) / h
    bulk = 0.5 * params.g * (w @ zeta ** 2) + params.sigma * h * np.sum(np.sqrt(1.0 + slopes ** 2))
    return float(bulk - params.jump_gamma * (zeta[0] + zeta[-1]))


def _residual(zeta, params, P0, h, w):
    s = np.diff(zeta) / h
    F = np.empty(zeta.size + 1)
    F[1:-1] = _flux(s)
    jg = params.jump_gamma / params.sigma
    F[0], F[-1] = -jg, jg
    return params.g * w * zeta - params.sigma * np.diff(F) - P0 * w, s


def _jacobian_banded(s, params, h, w):
    # symmetric tridiagonal Jacobian of the control-volume balance
    n1 = s.size + 1
    d = params.sigma * _dflux(s) / h
    ab = np.zeros((3, n1))
    diag = params.g * w.copy()
    diag[:-1] += d
    diag[1:] += d
    ab[1] = diag
    ab[0, 1:] = -d
    ab[2, :-1] = -d
    return ab


def _solve_profile(params: PhysicalParams, M_top: float, n: int):
    ell = params.ell
    h = 2.0 * ell / n
    w = trapezoid_weights(n, h)
    P0 = pressure_from_mass(params, M_top)
    zeta = np.full(n + 1, M_top / (2.0 * ell))
    R, s = _residual(zeta, params, P0, h, w)
    rnorm = np.max(np.abs(R))
    it = 0
    while rnorm > NEWTON_TOL:
        if it >= NEWTON_MAXIT:
            raise NewtonDivergence(f"no convergence after {it} iterations (residual {rnorm:.3e})")
        ab = _jacobian_banded(s, params, h, w)
        delta = solve_banded((1, 1), ab, -R)
        delta -= (w @ delta) / (w @ np.ones_like(w))
        step = 1.0
        while True:
            trial = zeta + step * delta
            Rt, st = _residual(trial, params, P0, h, w)
            rt = np.max(np.abs(Rt))
            if np.isfinite(rt) and (rt < rnorm or rt <= NEWTON_TOL):
                break
            step *= 0.5
            if step < 1e-8:
                raise NewtonDivergence(f"line search stalled at residual {rnorm:.3e}")
        zeta, R, s, rnorm = trial, Rt, st, rt
        it += 1
    return zeta, P0, rnorm, it


def mass_neutral_panel(n: int, ell: float, count: int = PANEL_SIZE) -> np.ndarray:
    """Smooth perturbations with zero trapezoid integral, one per row."""
    x = np.linspace(-ell, ell, n + 1)
    w = trapezoid_weights(n, 2.0 * ell / n)
    rows = []
    for k in range(1, count + 1):
        if k % 2:
            psi = np.sin(0.5 * (k + 1) * np.pi * x / ell) + 0.3 * (x / ell) ** k
        else:
            psi = np.cos(0.5 * k * np.pi * x / ell)
        psi = psi - (w @ psi) / (2.0 * ell)
        rows.append(psi / np.max(np.abs(psi)))
    return np.array(rows)


def minimality_panel(profile: EquilibriumProfile, delta: float = PANEL_DELTA):
    """Energy increments for +/- delta along each panel direction."""
    base = energy_I(profile.zeta0, profile.params)
    out = []
    for psi in mass_neutral_panel(profile.n, profile.params.ell):
        for sgn in (1.0, -1.0):
            out.append(energy_I(profile.zeta0 + sgn * delta * psi, profile.params) - base)
    return np.array(out)


def solve_equilibrium(params: PhysicalParams, M_top: float, n: int = 256,
                      check_minimality: bool = True) -> EquilibriumProfile:
    validate_params(params)
    if not M_top > 0:
        raise ValueError("M_top must be positive")
    if n < 16:
        raise ValueError("n must be at least 16")
    angles = contact_angles(params)
    zeta, P0, rnorm, it = _solve_profile(params, M_top, n)
    if not np.all(np.isfinite(zeta)):
        raise NewtonDivergence("non-finite iterate")
    if np.min(zeta) <= 0:
        raise NonPositiveHeight(f"min height {np.min(zeta):.3e} <= 0")
    if max(zeta[0], zeta[-1]) >= params.channel_height:
        raise SpillOver(f"contact height {max(zeta[0], zeta[-1]):.6g} reaches the channel top")
    h = 2.0 * params.ell / n
    zp = np.empty_like(zeta)
    zp[1:-1] = (zeta[2:] - zeta[:-2]) / (2.0 * h)
    b = contact_slope(params)
    zp[0], zp[-1] = -b, b
    profile = EquilibriumProfile(np.linspace(-params.ell, params.ell, n + 1), zeta, zp,
                                 P0, M_top, angles, params, rnorm, it)
    if check_minimality:
        inc = minimality_panel(profile)
        if np.any(inc < 0):
            raise EquilibriumError(f"profile is not a local minimizer (min increment {inc.min():.3e})")
    return profile
