"""Flattening map, its coefficient fields, and the curvature remainders.

Grid layout
-----------
The equilibrium domain is ``{-ell < x1 < ell, -d < x2 < zeta0(x1)}``: a
rectangular vessel of depth ``d`` under a layer bounded by the equilibrium
surface.  It is parametrized by a reference rectangle ``(x1, r)`` with
``r`` in ``[-1, 1]``::

    x2 = d * r           for r <= 0   (vessel, untransformed up to scaling)
    x2 = zeta0(x1) * r   for r >= 0   (terrain-following layer)

Node arrays are indexed ``[row, col]`` with rows along ``r`` (bottom to top)
and columns along ``x1`` (left to right).

A surface perturbation ``eta`` is lifted to the interior by the Poisson
extension of its even 4*ell-periodic reflection (after a cubic carrying the
end slopes is split off), shifted so that depth is measured from the
equilibrium surface.  The map then moves the upper part of
the domain vertically by ``phi(x2) * eta_bar / zeta0`` and leaves everything
below a quarter of the minimal height fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_params import ModelError
from .equilibrium import EquilibriumProfile, GridMismatch


class SmallnessViolated(ModelError):
    pass


class NonInvertibleMap(ModelError):
    pass


SMALLNESS_BOUND = 0.5


# ---------------------------------------------------------------- extension

class PoissonExtension:
    """Harmonic extension below ``y = 0`` of nodal samples on ``[-ell, ell]``.

    The samples are reflected evenly to a 4*ell-periodic sequence and
    transformed; Fourier mode ``xi`` is damped by ``exp(2*pi*|xi|*y)``.
    """

    def __init__(self, f, ell: float):
        f = np.asarray(f, dtype=float)
        n = f.size - 1
        if n < 1:
            raise GridMismatch("need at least two samples")
        self.ell = float(ell)
        periodic = np.concatenate([f, f[-2:0:-1]])
        c = np.fft.rfft(periodic).real / (2 * n)
        c[1:n] *= 2.0
        self.coef = c
        self.freq = np.arange(n + 1) * np.pi / (2.0 * ell)   # 2*pi*|xi|

    def _parts(self, x, y):
        x = np.asarray(x, dtype=float)[..., None]
        y = np.asarray(y, dtype=float)[..., None]
        phase = self.freq * (x + self.ell)
        damp = self.coef * np.exp(self.freq * np.minimum(y, 0.0))
        return phase, damp

    def __call__(self, x, y):
        phase, damp = self._parts(x, y)
        return np.sum(damp * np.cos(phase), axis=-1)

    def dx(self, x, y):
        phase, damp = self._parts(x, y)
        return -np.sum(damp * self.freq * np.sin(phase), axis=-1)

    def dy(self, x, y):
        phase, damp = self._parts(x, y)
        return np.sum(damp * self.freq * np.cos(phase), axis=-1)

    def evaluate(self, x, y):
        """Value and both first derivatives in one pass."""
        phase, damp = self._parts(x, y)
        dc = damp * np.cos(phase)
        return dc.sum(axis=-1), -(damp * np.sin(phase)) @ self.freq, dc @ self.freq


class SlopeCarryingExtension:
    """Extension whose reflected part has zero end slopes.

    A cubic ``q`` carrying the end slopes of ``f`` is split off and extended by
    its harmonic polynomial continuation; the remainder ``f - q`` has vanishing
    end slopes, so its even reflection is C^2 and the Poisson extension of it
    converges without the corner singularity a plain reflection would create.
    """

    def __init__(self, f, ell: float, end_slopes=None):
        f = np.asarray(f, dtype=float)
        if end_slopes is None:
            h = 2.0 * ell / (f.size - 1)
            sl = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
            sr = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
        else:
            sl, sr = end_slopes
        self.ell = float(ell)
        self.a = (sr - sl) / (4.0 * ell)
        self.b = (sr + sl) / (6.0 * ell ** 2)
        x = np.linspace(-ell, ell, f.size)
        self.rest = PoissonExtension(f - self.a * x ** 2 - self.b * x ** 3, ell)

    def __call__(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return self.rest(x, y) + self.a * (x * x - y * y) + self.b * (x ** 3 - 3 * x * y * y)

    def dx(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return self.rest.dx(x, y) + 2 * self.a * x + self.b * (3 * x * x - 3 * y * y)

    def dy(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return self.rest.dy(x, y) - 2 * self.a * y - 6 * self.b * x * y

    def evaluate(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        v, vx, vy = self.rest.evaluate(x, y)
        a, b = self.a, self.b
        return (v + a * (x * x - y * y) + b * (x ** 3 - 3 * x * y * y),
                vx + 2 * a * x + b * (3 * x * x - 3 * y * y),
                vy - 2 * a * y - 6 * b * x * y)


def poisson_extend(f, ell: float, depths) -> np.ndarray:
    """Extension of nodal samples ``f`` at the nodes, one row per depth (<= 0)."""
    ext = PoissonExtension(f, ell)
    x = np.linspace(-ell, ell, len(f))
    depths = np.asarray(depths, dtype=float)
    X, Y = np.meshgrid(x, depths)
    return ext(X, Y)


# ------------------------------------------------------------------- cutoff

def _smoothstep(t):
    # C^4 step: 0 at t=0, 1 at t=1, first four derivatives zero at both ends
    return t ** 5 * (126.0 + t * (-420.0 + t * (540.0 + t * (-315.0 + 70.0 * t))))


def _smoothstep_prime(t):
    return 630.0 * t ** 4 * (1.0 - t) ** 4


@dataclass(frozen=True)
class Cutoff:
    """Zero below ``a``, identity above ``b``, monotone polynomial blend between.

    The blend ``z * S((z-a)/(b-a))`` is C^4 at both junctions, so the map
    coefficients built from it stay smooth enough for second-order
    differencing across the junctions.
    """

    a: float
    b: float

    def _t(self, z):
        return np.clip((np.asarray(z, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return z * _smoothstep(self._t(z))

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        t = self._t(z)
        return _smoothstep(t) + z * _smoothstep_prime(t) / (self.b - self.a)


def build_cutoff(profile: EquilibriumProfile, z=None):
    m = float(np.min(profile.zeta0))
    if not m > 0:
        raise ValueError("equilibrium heights must be positive")
    cut = Cutoff(0.25 * m, 0.5 * m)
    return cut if z is None else cut(z)


# --------------------------------------------------------------------- grid

@dataclass(frozen=True)
class SurfacePerturbation:
    eta: np.ndarray
    eta_prime: np.ndarray
    mean: float

    @classmethod
    def from_samples(cls, eta, ell: float) -> "SurfacePerturbation":
        eta = np.asarray(eta, dtype=float)
        h = 2.0 * ell / (eta.size - 1)
        w = np.full(eta.size, h)
        w[0] = w[-1] = 0.5 * h
        return cls(eta, np.gradient(eta, h, edge_order=2), float(w @ eta) / (2.0 * ell))

    @classmethod
    def zero(cls, n: int) -> "SurfacePerturbation":
        z = np.zeros(n + 1)
        return cls(z, z.copy(), 0.0)


class VesselGrid:
    """Terrain-following node grid of the equilibrium domain."""

    def __init__(self, profile: EquilibriumProfile, nx: int, ny: int):
        if ny % 2:
            raise ValueError("ny must be even (half the rows lie in the vessel)")
        self.profile = profile
        self.ell = profile.params.ell
        self.depth = profile.params.vessel_depth
        self.nx, self.ny = nx, ny
        self.x1 = np.linspace(-self.ell, self.ell, nx + 1)
        self.r = np.linspace(-1.0, 1.0, ny + 1)
        self.h1 = 2.0 * self.ell / nx
        self.hr = 2.0 / ny
        R, X = np.meshgrid(self.r, self.x1, indexing="ij")
        self.X1, self.R = X, R
        self.X2 = self.height(X, R)

    def height(self, x1, r):
        r = np.asarray(r, dtype=float)
        z0 = self.profile.height(x1)
        return np.where(r <= 0, self.depth * r, z0 * r)

    def metric(self, x1, r):
        """``(dx2/dx1, dx2/dr)`` of the terrain map at reference points."""
        r = np.asarray(r, dtype=float)
        upper = r > 0
        dx1 = np.where(upper, self.profile.slope(x1) * r, 0.0)
        dr = np.where(upper, self.profile.height(x1), self.depth)
        return dx1, dr


# ------------------------------------------------------------------- fields

def map_coefficients(profile: EquilibriumProfile, ext, cut: Cutoff, x1, x2):
    """Extension and coefficient fields of the flattening map at physical points."""
    z0 = profile.height(x1)
    z0p = profile.slope(x1)
    y = np.asarray(x2, dtype=float) - z0
    eb, eb_x, eb_y = ext.evaluate(x1, y)
    eb_1 = eb_x - z0p * eb_y
    phi = cut(x2)
    dphi = cut.derivative(x2)
    W = phi / z0
    A = W * eb_1 - (W / z0) * z0p * eb
    J = 1.0 + W * eb_y + dphi * eb / z0
    return {"eta_bar": eb, "W": W, "A": A, "J": J, "phi": phi, "dphi": dphi,
            "eta_bar_1": eb_1, "eta_bar_2": eb_y}


@dataclass(frozen=True)
class GeometryFields:
    x1: np.ndarray
    x2: np.ndarray
    eta_bar: np.ndarray
    W: np.ndarray
    A: np.ndarray
    J: np.ndarray
    K: np.ndarray
    A_matrix: np.ndarray        # [..., i, j]
    M_matrix: np.ndarray
    N: np.ndarray               # surface row, (nx+1, 2)
    N0: np.ndarray
    phi: np.ndarray
    grid: VesselGrid

    def mapped_height(self):
        """Second component of the map at every node."""
        return self.x2 + self.W * self.eta_bar


def coefficient_matrices(A, J):
    K = 1.0 / J
    Am = np.zeros(np.shape(A) + (2, 2))
    Am[..., 0, 0] = 1.0
    Am[..., 0, 1] = -A * K
    Am[..., 1, 1] = K
    Mm = np.zeros_like(Am)
    Mm[..., 0, 0] = K
    Mm[..., 1, 0] = A * K
    Mm[..., 1, 1] = 1.0
    return K, Am, Mm


def smallness_report(fields: GeometryFields) -> dict:
    return {
        "J-1": float(np.max(np.abs(fields.J - 1.0))),
        "K-1": float(np.max(np.abs(fields.K - 1.0))),
        "A": float(np.max(np.abs(fields.A))),
        "N-N0": float(np.max(np.abs(fields.N - fields.N0))),
    }


def check_smallness(J, report: dict, bound: float = SMALLNESS_BOUND) -> None:
    if np.any(np.asarray(J) <= 0):
        raise NonInvertibleMap(f"Jacobian reaches {np.min(J):.3e}")
    for name, value in report.items():
        if value > bound:
            raise SmallnessViolated(f"|{name}| = {value:.3e} exceeds {bound}")


def build_geometry(profile: EquilibriumProfile, eta: SurfacePerturbation, grid: VesselGrid,
                   guard: bool = True) -> GeometryFields:
    if eta.eta.size != grid.nx + 1:
        raise GridMismatch(f"eta has {eta.eta.size} samples, grid has {grid.nx + 1} columns")
    ext = SlopeCarryingExtension(eta.eta, grid.ell, (eta.eta_prime[0], eta.eta_prime[-1]))
    cut = build_cutoff(profile)
    c = map_coefficients(profile, ext, cut, grid.X1, grid.X2)
    K, Am, Mm = coefficient_matrices(c["A"], c["J"])
    x = grid.x1
    # trace slope of the extension, so that the normal matches the map exactly
    d_eta = ext.dx(x, np.zeros_like(x))
    N0 = np.column_stack([-profile.slope(x), np.ones_like(x)])
    N = N0 - np.column_stack([d_eta, np.zeros_like(x)])
    fields = GeometryFields(grid.X1, grid.X2, c["eta_bar"], c["W"], c["A"], c["J"], K, Am, Mm,
                            N, N0, c["phi"], grid)
    if guard:
        check_smallness(fields.J, smallness_report(fields))
    return fields


# -------------------------------------------------- operators on node grids

def _split_gradient(f, grid: VesselGrid):
    """Reference derivatives with the vessel and layer differenced separately."""
    mid = grid.ny // 2
    f_1 = np.gradient(f, grid.h1, axis=1, edge_order=2)
    f_r = np.empty_like(f)
    f_r[: mid + 1] = np.gradient(f[: mid + 1], grid.hr, axis=0, edge_order=2)
    f_r[mid:] = np.gradient(f[mid:], grid.hr, axis=0, edge_order=2)
    return f_1, f_r


def physical_gradient(f, grid: VesselGrid):
    """Derivatives in the equilibrium coordinates ``(x1, x2)`` at the nodes."""
    f_1, f_r = _split_gradient(f, grid)
    t1, tr = grid.metric(grid.X1, grid.R)
    # the interface row belongs to the layer; recompute its metric from above
    mid = grid.ny // 2
    tr = tr.copy()
    t1 = t1.copy()
    tr[mid] = grid.profile.height(grid.x1)
    t1[mid] = 0.0
    d2 = f_r / tr
    d1 = f_1 - t1 * d2
    return np.stack([d1, d2], axis=-1)


def _check_shape(fields: GeometryFields, arr, trailing):
    if arr.shape != fields.J.shape + trailing:
        raise GridMismatch(f"field shape {arr.shape} does not match grid {fields.J.shape}")


def apply_M(fields: GeometryFields, u):
    u = np.asarray(u, dtype=float)
    _check_shape(fields, u, (2,))
    return np.einsum("...ij,...j->...i", fields.M_matrix, u)


def grad_A(fields: GeometryFields, f):
    f = np.asarray(f, dtype=float)
    _check_shape(fields, f, ())
    return np.einsum("...ij,...j->...i", fields.A_matrix, physical_gradient(f, fields.grid))


def _jacobian_of_vector(fields, v):
    # G[..., i, j] = d_j v_i
    return np.stack([physical_gradient(v[..., i], fields.grid) for i in range(2)], axis=-2)


def div_A(fields: GeometryFields, v):
    v = np.asarray(v, dtype=float)
    _check_shape(fields, v, (2,))
    G = _jacobian_of_vector(fields, v)
    return np.einsum("...ij,...ij->...", fields.A_matrix, G)


def DA_sym(fields: GeometryFields, v):
    v = np.asarray(v, dtype=float)
    _check_shape(fields, v, (2,))
    G = _jacobian_of_vector(fields, v)
    # (D v)_ij = A_ik d_k v_j + A_jk d_k v_i
    T = np.einsum("...ik,...jk->...ij", fields.A_matrix, G)
    return T + np.swapaxes(T, -1, -2)


def div_plain(grid: VesselGrid, v):
    g0 = physical_gradient(v[..., 0], grid)
    g1 = physical_gradient(v[..., 1], grid)
    return g0[..., 0] + g1[..., 1]


# --------------------------------------------------------------- remainders

def _remainder_parts(y, z):
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    s0 = np.sqrt(1.0 + y * y)
    s1 = np.sqrt(1.0 + (y + z) ** 2)
    S = s0 + s1
    # c = s0 - y*e and e = (s1 - s0)/z, both free of cancellation as z -> 0
    c = 2.0 * S / (S * S - z * z)
    e = (2.0 * y + z) / S
    return y, z, s0, s1, S, c, e


def remainder_R(y, z):
    """Second-order Taylor remainder of ``s -> s/sqrt(1+s^2)`` about ``y`` with step ``z``.

    Algebraically equal to ``f(y+z) - f(y) - z f'(y)``, rearranged so that
    the factor ``z**2`` comes out exactly and tiny steps keep full relative
    accuracy.
    """
    y, z, s0, s1, S, c, e = _remainder_parts(y, z)
    return -z * z * (y * s0 * c / S + e) / (s0 ** 3 * s1)


def remainder_Q(y, z):
    """Antiderivative in ``z`` of ``remainder_R`` vanishing at ``z = 0``."""
    y, z, s0, s1, S, c, e = _remainder_parts(y, z)
    return -z ** 3 * (2.0 * s0 * y * c / S + e) / (2.0 * s0 ** 3 * S)
