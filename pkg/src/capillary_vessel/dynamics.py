"""Semi-implicit time integration of the flattened free-surface system.

Grid layout
-----------
The reference rectangle ``(x1, r)`` of :class:`~capillary_vessel.geometry.VesselGrid`
carries ``nx * ny`` cells.  At each time level the composite map sends node
``(i, j)`` to the physical point ``(x1_i, Z[j, i])``, so every cell is a
quadrilateral with vertical sides::

    u1[j, i]   Cartesian horizontal velocity, vertical face i, row j
               (ny, nx+1); the wall columns i = 0, nx are zero
    U2[j, i]   normal flux per unit width through horizontal face j,
               column i, i.e. u2 - slope * u1 (ny+1, nx); bottom row zero
    p[j, i]    pressure at cell centres (ny, nx)
    eta[i]     surface perturbation at the surface nodes (nx+1)

Using the normal flux on horizontal faces makes the discrete divergence an
exact flux balance of each quadrilateral, the kinematic update the flux
through the top faces, and the surface stress act only on those fluxes.  The
Cartesian vertical velocity ``u2 = U2 + slope * u1`` (with ``u1``
interpolated to the face) enters the kinetic and viscous energies.

Every implicit term is a symmetric quadratic form (kinetic, viscous, wall
friction, contact friction, surface energy), so with frozen geometry the
implicit block dissipates the discrete energy exactly.  Geometry, advection,
mesh motion, the curvature remainder and the nonlinear part of the contact
law are taken from the previous level.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core_params import ModelError, PhysicalParams, validate_params
from .equilibrium import EquilibriumProfile
from .geometry import (GeometryFields, SurfacePerturbation, VesselGrid, build_geometry,
                       remainder_Q, remainder_R)


class SimulationError(ModelError):
    pass


class CFLViolation(SimulationError):
    pass


class SingularSystem(SimulationError):
    pass


class ResidualTooLarge(SimulationError):
    pass


class RootBracketFailure(SimulationError):
    pass


class EmptySignal(ModelError):
    pass


class NonPositiveEnergy(ModelError):
    pass


CFL_SAFETY = 0.5
SOLVE_RTOL = 1e-9

CSV_HEADER = "t,kinetic,surface_quadratic,surface_remainder,visc_diss,slip_diss,contact_diss,mass,energy_total"


def _coo(rows, cols, vals, shape):
    return sp.csr_matrix((np.asarray(vals, dtype=float).ravel(),
                          (np.asarray(rows).ravel(), np.asarray(cols).ravel())), shape=shape)


def _lagrange_d1(z0, z1, z2, at):
    """Weights of the derivative at ``at`` of the quadratic through (z0, z1, z2)."""
    w0 = ((at - z1) + (at - z2)) / ((z0 - z1) * (z0 - z2))
    w1 = ((at - z0) + (at - z2)) / ((z1 - z0) * (z1 - z2))
    w2 = ((at - z0) + (at - z1)) / ((z2 - z0) * (z2 - z1))
    return w0, w1, w2


# -------------------------------------------------------------- operators

class MacOperators:
    """Sparse discrete operators for one frozen geometry.

    ``Z`` holds the physical node heights ``(ny+1, nx+1)``.
    """

    def __init__(self, grid: VesselGrid, Z: np.ndarray, params: PhysicalParams):
        self.grid, self.Z, self.params = grid, Z, params
        nx, ny = grid.nx, grid.ny
        self.nx, self.ny = nx, ny
        h1 = grid.h1
        self.h1 = h1
        mu, beta = params.mu, params.beta

        # --- geometry of the quadrilateral mesh
        self.L1 = Z[1:, :] - Z[:-1, :]                       # vertical face lengths (ny, nx+1)
        if np.any(self.L1 <= 0):
            raise SimulationError("mesh folded: nonpositive vertical face length")
        self.slope = (Z[:, 1:] - Z[:, :-1]) / h1             # horizontal face slopes (ny+1, nx)
        self.zf1 = 0.5 * (Z[1:, :] + Z[:-1, :])              # u1 locations
        self.zf2 = 0.5 * (Z[:, 1:] + Z[:, :-1])              # U2 locations
        self.zc = 0.5 * (self.zf1[:, 1:] + self.zf1[:, :-1])  # centres (ny, nx)
        self.area_c = h1 * 0.5 * (self.L1[:, 1:] + self.L1[:, :-1])

        # --- unknown layout
        self.n1 = ny * (nx - 1)
        self.n2 = ny * nx
        self.nX = self.n1 + self.n2
        self.np_ = ny * nx
        self._build_maps()
        self._build_mass()
        self._build_viscous(mu)
        self._build_walls(mu, beta)
        self._build_divergence()
        self._build_surface_trace()

    # index helpers
    def _i1(self, j, i):
        # interior u1 unknown index, i in 1..nx-1
        return j * (self.nx - 1) + (i - 1)

    def _i2(self, j, i):
        # U2 unknown index, j in 1..ny
        return self.n1 + (j - 1) * self.nx + i

    def _build_maps(self):
        nx, ny = self.nx, self.ny
        # E1: X -> u1 full (ny, nx+1)
        J, I = np.meshgrid(np.arange(ny), np.arange(1, nx), indexing="ij")
        self.E1 = _coo(J * (nx + 1) + I, self._i1(J, I), np.ones(J.shape), (ny * (nx + 1), self.nX))
        # EU: X -> U2 full (ny+1, nx)
        J, I = np.meshgrid(np.arange(1, ny + 1), np.arange(nx), indexing="ij")
        self.EU = _coo(J * nx + I, self._i2(J, I), np.ones(J.shape), ((ny + 1) * nx, self.nX))
        # interpolation of u1 (full) to horizontal faces (ny+1, nx)
        rows, cols, vals = [], [], []
        for c in (0, 1):
            for jj in range(1, ny):
                i = np.arange(nx)
                r = jj * nx + i
                for js in (jj - 1, jj):
                    rows.append(r)
                    cols.append(js * (nx + 1) + i + c)
                    vals.append(np.full(nx, 0.25))
            # top face: linear extrapolation in height from the two top rows
            i = np.arange(nx)
            col = i + c
            z1 = self.zf1[ny - 1, col]
            z0 = self.zf1[ny - 2, col]
            zt = self.Z[ny, col]
            a = (zt - z0) / (z1 - z0)
            r = ny * nx + i
            rows += [r, r]
            cols += [(ny - 1) * (nx + 1) + col, (ny - 2) * (nx + 1) + col]
            vals += [0.5 * a, 0.5 * (1.0 - a)]
        self.I1 = _coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                       ((ny + 1) * nx, ny * (nx + 1)))
        # Cartesian u2 on horizontal faces
        self.E2 = (self.EU + sp.diags(self.slope.ravel()) @ self.I1 @ self.E1).tocsr()

    def _build_mass(self):
        nx, ny, h1 = self.nx, self.ny, self.h1
        self.m1 = h1 * self.L1                                # (ny, nx+1)
        dz = np.zeros((ny + 1, nx))
        dz[1:ny] = self.zc[1:] - self.zc[:-1]
        dz[ny] = self.zf2[ny] - self.zc[ny - 1]
        self.m2 = h1 * dz                                     # (ny+1, nx), bottom row unused
        self.M = (self.E1.T @ sp.diags(self.m1.ravel()) @ self.E1
                  + self.E2.T @ sp.diags(self.m2.ravel()) @ self.E2).tocsr()

    def _vertical_derivative_u1(self):
        """Operator u1 full -> d(u1)/dx2 at u1 locations, per column."""
        nx, ny = self.nx, self.ny
        rows, cols, vals = [], [], []
        zf = self.zf1
        for j in range(ny):
            if j == 0:
                js = (0, 1, 2)
            elif j == ny - 1:
                js = (ny - 3, ny - 2, ny - 1)
            else:
                js = (j - 1, j, j + 1)
            w = _lagrange_d1(zf[js[0]], zf[js[1]], zf[js[2]], zf[j])
            i = np.arange(nx + 1)
            for jk, wk in zip(js, w):
                rows.append(j * (nx + 1) + i)
                cols.append(jk * (nx + 1) + i)
                vals.append(wk)
        return _coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                    (ny * (nx + 1), ny * (nx + 1)))

    def _build_viscous(self, mu):
        nx, ny, h1 = self.nx, self.ny, self.h1
        n1f, n2f = ny * (nx + 1), (ny + 1) * nx
        # centres
        J, I = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
        c = (J * nx + I).ravel()
        d1u1 = _coo(np.r_[c, c], np.r_[(J * (nx + 1) + I + 1).ravel(), (J * (nx + 1) + I).ravel()],
                    np.r_[np.full(c.size, 1 / h1), np.full(c.size, -1 / h1)], (ny * nx, n1f))
        dzc = (self.zf2[1:] - self.zf2[:-1]).ravel()
        d2u2 = _coo(np.r_[c, c], np.r_[((J + 1) * nx + I).ravel(), (J * nx + I).ravel()],
                    np.r_[1 / dzc, -1 / dzc], (ny * nx, n2f))
        dv1 = self._vertical_derivative_u1()
        avg_cols = _coo(np.r_[c, c], np.r_[(J * (nx + 1) + I).ravel(), (J * (nx + 1) + I + 1).ravel()],
                        np.full(2 * c.size, 0.5), (ny * nx, n1f))
        slope_c = 0.5 * (self.slope[1:] + self.slope[:-1]).ravel()
        D11 = 2.0 * (d1u1 - sp.diags(slope_c) @ avg_cols @ dv1) @ self.E1
        D22 = 2.0 * d2u2 @ self.E2
        wc = 0.5 * mu * self.area_c.ravel()
        # interior nodes
        J, I = np.meshgrid(np.arange(1, ny), np.arange(1, nx), indexing="ij")
        k = np.arange(J.size)
        nn = J.size
        d1u2 = _coo(np.r_[k, k], np.r_[(J * nx + I).ravel(), (J * nx + I - 1).ravel()],
                    np.r_[np.full(nn, 1 / h1), np.full(nn, -1 / h1)], (nn, n2f))
        dz1 = (self.zf1[J, I] - self.zf1[J - 1, I]).ravel()
        d2u1 = _coo(np.r_[k, k], np.r_[(J * (nx + 1) + I).ravel(), ((J - 1) * (nx + 1) + I).ravel()],
                    np.r_[1 / dz1, -1 / dz1], (nn, n1f))
        # vertical derivative of u2 at nodes: mean over the four adjacent centres
        rr, cc = [], []
        for dj in (-1, 0):
            for di in (-1, 0):
                rr.append(k)
                cc.append(((J + dj) * nx + (I + di)).ravel())
        avg4 = _coo(np.concatenate(rr), np.concatenate(cc), np.full(4 * nn, 0.25), (nn, ny * nx))
        slope_n = 0.5 * (self.slope[J, I - 1] + self.slope[J, I]).ravel()
        D12 = (d1u2 - sp.diags(slope_n) @ avg4 @ d2u2) @ self.E2 + d2u1 @ self.E1
        dzn = 0.5 * ((self.zc[J, I - 1] - self.zc[J - 1, I - 1]) + (self.zc[J, I] - self.zc[J - 1, I]))
        wn = 0.5 * mu * 2.0 * h1 * dzn.ravel()
        self.Av = (D11.T @ sp.diags(wc) @ D11 + D22.T @ sp.diags(wc) @ D22
                   + D12.T @ sp.diags(wn) @ D12).tocsr()
        self._D = (D11, D22, D12, wc, wn)

    def _build_walls(self, mu, beta):
        nx, ny, h1 = self.nx, self.ny, self.h1
        # side walls: Cartesian u2 in the outermost columns, half a cell from the wall
        dist_s = 0.5 * h1
        rows = []
        lens = []
        for col in (0, nx - 1):
            j = np.arange(1, ny + 1)
            rows.append(j * nx + col)
            lens.append(self.m2[1:, col] / h1)
        rows = np.concatenate(rows)
        lens = np.concatenate(lens)
        Sside = _coo(np.arange(rows.size), rows, np.ones(rows.size), (rows.size, (ny + 1) * nx)) @ self.E2
        # bottom: u1 in the lowest row
        i = np.arange(1, nx)
        Sbot = _coo(np.arange(i.size), i, np.ones(i.size), (i.size, ny * (nx + 1))) @ self.E1
        dist_b = self.zf1[0, 1:nx] - self.Z[0, 1:nx]
        self.wall_ops = (Sside, Sbot)
        self.wall_len = (lens, np.full(i.size, h1))
        self.wall_fac = (1.0 + beta * dist_s / mu, 1.0 + beta * dist_b / mu)
        beff_s = beta / self.wall_fac[0]
        beff_b = beta / self.wall_fac[1]
        self.beff = (beff_s, beff_b)
        self.Sw = (Sside.T @ sp.diags(beff_s * lens) @ Sside
                   + Sbot.T @ sp.diags(beff_b * self.wall_len[1]) @ Sbot).tocsr()

    def _build_divergence(self):
        nx, ny, h1 = self.nx, self.ny, self.h1
        J, I = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
        c = (J * nx + I).ravel()
        rows = np.r_[c, c, c, c]
        cols1 = np.r_[(J * (nx + 1) + I + 1).ravel(), (J * (nx + 1) + I).ravel()]
        vals1 = np.r_[self.L1[J, I + 1].ravel(), -self.L1[J, I].ravel()]
        B1 = _coo(np.r_[c, c], cols1, vals1, (ny * nx, ny * (nx + 1))) @ self.E1
        B2 = _coo(np.r_[c, c], np.r_[((J + 1) * nx + I).ravel(), (J * nx + I).ravel()],
                  np.r_[np.full(c.size, h1), np.full(c.size, -h1)], (ny * nx, (ny + 1) * nx)) @ self.EU
        self.B = (B1 + B2).tocsr()

    def _build_surface_trace(self):
        nx, ny = self.nx, self.ny
        rows = np.r_[0, nx, np.arange(1, nx), np.arange(1, nx)]
        cols = np.r_[0, nx - 1, np.arange(0, nx - 1), np.arange(1, nx)]
        vals = np.r_[1.0, 1.0, np.full(nx - 1, 0.5), np.full(nx - 1, 0.5)]
        top = _coo(rows, ny * nx + cols, vals, (nx + 1, (ny + 1) * nx))
        self.T = (top @ self.EU).tocsr()
        self.C = self.T[[0, nx], :]

    # ---------------------------------------------------------- evaluation
    def unknowns_from(self, u1, u2):
        """Unknown vector from Cartesian face velocities."""
        U2 = u2 - self.slope * (self.I1 @ u1.ravel()).reshape(u2.shape)
        return np.r_[u1[:, 1:-1].ravel(), U2[1:].ravel()]

    def cartesian(self, X):
        u1 = (self.E1 @ X).reshape(self.ny, self.nx + 1)
        u2 = (self.E2 @ X).reshape(self.ny + 1, self.nx)
        U2 = (self.EU @ X).reshape(self.ny + 1, self.nx)
        return u1, u2, U2

    def kinetic(self, X) -> float:
        return 0.5 * float(X @ (self.M @ X))

    def dissipation(self, X):
        """(viscous, wall slip) rates; the near-wall viscous layer is booked as viscous."""
        visc = float(X @ (self.Av @ X))
        slip = 0.0
        for S, ln, fac, beff in zip(self.wall_ops, self.wall_len, self.wall_fac, self.beff):
            v = S @ X
            total = float(np.sum(beff * ln * v * v))
            s = float(np.sum(self.params.beta * ln * (v / fac) ** 2))
            slip += s
            visc += total - s
        return visc, slip

    def max_speed(self, X) -> float:
        u1, u2, _ = self.cartesian(X)
        return float(max(np.max(np.abs(u1)), np.max(np.abs(u2))))

    def min_spacing(self) -> float:
        return float(min(self.h1, np.min(self.L1)))


# ---------------------------------------------------------------- surface

@dataclass(frozen=True)
class SurfaceForms:
    """Surface energy on the nodes: trapezoid gravity plus weighted P1 stiffness."""

    x: np.ndarray
    h: float
    weights: np.ndarray
    z_e: np.ndarray
    slope0_e: np.ndarray
    K: sp.csr_matrix
    g: float
    sigma: float

    @classmethod
    def build(cls, profile: EquilibriumProfile, params: PhysicalParams, nx: int):
        x = np.linspace(-params.ell, params.ell, nx + 1)
        h = x[1] - x[0]
        w = np.full(nx + 1, h)
        w[0] = w[-1] = 0.5 * h
        mid = 0.5 * (x[1:] + x[:-1])
        s0 = profile.slope(mid)
        z = (1.0 + s0 ** 2) ** -1.5
        i = np.arange(nx)
        k = z / h
        stiff = _coo(np.r_[i, i, i + 1, i + 1], np.r_[i, i + 1, i, i + 1], np.r_[k, -k, -k, k],
                     (nx + 1, nx + 1))
        K = (params.g * sp.diags(w) + params.sigma * stiff).tocsr()
        return cls(x, h, w, z, s0, K, params.g, params.sigma)

    def quadratic(self, eta) -> float:
        return 0.5 * float(eta @ (self.K @ eta))

    def slopes(self, eta):
        return np.diff(eta) / self.h

    def remainder_energy(self, eta) -> float:
        return float(self.sigma * self.h * np.sum(remainder_Q(self.slope0_e, self.slopes(eta))))

    def remainder_force(self, eta):
        """Gradient of the remainder energy with respect to nodal heights."""
        R = self.sigma * remainder_R(self.slope0_e, self.slopes(eta))
        f = np.zeros(eta.size)
        f[1:] += R
        f[:-1] -= R
        return f

    def mass(self, eta) -> float:
        return float(self.weights @ eta)


# ------------------------------------------------------------------ state

@dataclass(frozen=True)
class DiagnosticRecord:
    t: float
    kinetic: float
    surface_quadratic: float
    surface_remainder: float
    visc_diss: float
    slip_diss: float
    contact_diss: float
    mass: float
    energy_total: float
    residual: float = 0.0

    def csv_row(self) -> str:
        vals = (self.t, self.kinetic, self.surface_quadratic, self.surface_remainder, self.visc_diss,
                self.slip_diss, self.contact_diss, self.mass, self.energy_total)
        return ",".join(f"{v:.17g}" for v in vals)


@dataclass(frozen=True)
class SimState:
    t: float
    u1: np.ndarray              # Cartesian, (ny, nx+1)
    u2: np.ndarray              # Cartesian, (ny+1, nx)
    U2: np.ndarray              # normal flux, (ny+1, nx)
    p: np.ndarray               # (ny, nx)
    eta: np.ndarray             # (nx+1,)
    contact_rates: np.ndarray   # d(eta)/dt at the two contact points from the last step
    fields: GeometryFields
    Z: np.ndarray               # node heights of the composite map
    Z_prev: np.ndarray | None = None
    step_index: int = 0


class Dynamics:
    """Bundle of the frozen ingredients of a run: equilibrium, grid, surface forms."""

    def __init__(self, profile: EquilibriumProfile, params: PhysicalParams, nx: int, ny: int):
        validate_params(params)
        if nx < 4 or ny < 6:
            raise ValueError("grid too coarse")
        self.profile = profile
        self.params = params
        self.grid = VesselGrid(profile, nx, ny)
        self.surface = SurfaceForms.build(profile, params, nx)
        self.nx, self.ny = nx, ny
        self.solver = SaddleSolver()
        self._ops_cache: dict = {}

    # geometry
    def geometry(self, eta):
        pert = SurfacePerturbation.from_samples(eta, self.params.ell)
        fields = build_geometry(self.profile, pert, self.grid)
        return fields, fields.mapped_height()

    def operators(self, Z) -> MacOperators:
        key = Z.tobytes()
        ops = self._ops_cache.get(key)
        if ops is None:
            ops = MacOperators(self.grid, Z, self.params)
            if len(self._ops_cache) >= 3:
                self._ops_cache.pop(next(iter(self._ops_cache)))
            self._ops_cache[key] = ops
        return ops

    def initial_state(self, eta0, u1=None, u2=None) -> SimState:
        eta0 = np.asarray(eta0, dtype=float)
        if eta0.shape != (self.nx + 1,):
            raise ValueError("eta0 must have nx+1 samples")
        fields, Z = self.geometry(eta0)
        u1 = np.zeros((self.ny, self.nx + 1)) if u1 is None else np.array(u1, dtype=float)
        u2 = np.zeros((self.ny + 1, self.nx)) if u2 is None else np.array(u2, dtype=float)
        ops = self.operators(Z)
        X = ops.unknowns_from(u1, u2)
        u1, u2, U2 = ops.cartesian(X)
        return SimState(0.0, u1, u2, U2, np.zeros((self.ny, self.nx)), eta0.copy(), np.zeros(2),
                        fields, Z, None, 0)

    def cfl_bound(self, state: SimState, ops: MacOperators | None = None) -> float:
        ops = ops or self.operators(state.Z)
        h = ops.min_spacing()
        speed = max(np.max(np.abs(state.u1)), np.max(np.abs(state.u2)))
        adv = np.inf if speed == 0 else h / speed
        return CFL_SAFETY * min(adv, h * h / self.params.mu)

    # explicit terms
    def _advection_force(self, state: SimState, ops: MacOperators, dt: float):
        """Force -(material acceleration, v) from advection and mesh motion at level n."""
        nx, ny = self.nx, self.ny
        u1, u2 = state.u1, state.u2
        if not (np.any(u1) or np.any(u2)) and state.Z_prev is None:
            return np.zeros(ops.nX)
        uc1 = 0.5 * (u1[:, 1:] + u1[:, :-1])
        uc2 = 0.5 * (u2[1:] + u2[:-1])
        zc = ops.zc
        if state.Z_prev is None:
            wz = np.zeros_like(zc)
        else:
            dZ = (state.Z - state.Z_prev) / dt
            wz = 0.25 * (dZ[1:, 1:] + dZ[1:, :-1] + dZ[:-1, 1:] + dZ[:-1, :-1])
        slope_c = 0.5 * (ops.slope[1:] + ops.slope[:-1])
        transport = uc2 - slope_c * uc1 - wz
        acc = []
        for q in (uc1, uc2):
            d1 = np.gradient(q, ops.h1, axis=1, edge_order=2)
            d2 = np.empty_like(q)
            d2[1:-1] = (q[2:] - q[:-2]) / (zc[2:] - zc[:-2])
            d2[0] = (q[1] - q[0]) / (zc[1] - zc[0])
            d2[-1] = (q[-1] - q[-2]) / (zc[-1] - zc[-2])
            acc.append(uc1 * d1 + transport * d2)
        a1 = np.zeros((ny, nx + 1))
        a1[:, 1:-1] = 0.5 * (acc[0][:, 1:] + acc[0][:, :-1])
        a2 = np.zeros((ny + 1, nx))
        a2[1:ny] = 0.5 * (acc[1][1:] + acc[1][:-1])
        a2[ny] = acc[1][-1]
        return -(ops.E1.T @ (ops.m1 * a1).ravel() + ops.E2.T @ (ops.m2 * a2).ravel())

    def step(self, state: SimState, dt: float) -> tuple[SimState, DiagnosticRecord]:
        params = self.params
        ops = self.operators(state.Z)
        bound = self.cfl_bound(state, ops)
        if dt > bound * (1 + 1e-12):
            raise CFLViolation(f"CFL violation: dt = {dt:.6g} exceeds bound {bound:.6g}")
        surf = self.surface
        X0 = ops.unknowns_from(state.u1, state.u2)
        law = params.law
        kappa = params.kappa
        rates_prev = state.contact_rates
        w_hat = law.W_hat(rates_prev)
        H = (ops.M / dt + ops.Av + ops.Sw + kappa * (ops.C.T @ ops.C)
             + dt * (ops.T.T @ surf.K @ ops.T)).tocsr()
        rhs = (ops.M @ X0) / dt - ops.T.T @ (surf.K @ state.eta) \
            - ops.T.T @ surf.remainder_force(state.eta) \
            - kappa * (ops.C.T @ w_hat) + self._advection_force(state, ops, dt)
        X, p = self.solver.solve(H, ops.B, rhs, np.zeros(ops.np_))
        trace = ops.T @ X
        eta_new = state.eta + dt * trace
        # mass is conserved to round-off; remove the drift explicitly
        eta_new -= (surf.mass(eta_new) - surf.mass(state.eta)) / (2.0 * params.ell)
        rates = ops.C @ X
        fields, Z = self.geometry(eta_new)
        u1, u2, U2 = ops.cartesian(X)
        new = SimState(state.t + dt, u1, u2, U2, p.reshape(self.ny, self.nx), eta_new, rates,
                       fields, Z, state.Z, state.step_index + 1)
        rec = self.diagnostics(state, new, dt, step_ops=ops, X=X)
        return new, rec

    def record(self, state: SimState, ops: MacOperators | None = None) -> DiagnosticRecord:
        """Energy content of a single state (dissipation entries zero)."""
        ops = ops or self.operators(state.Z)
        X = ops.unknowns_from(state.u1, state.u2)
        kin = ops.kinetic(X)
        sq = self.surface.quadratic(state.eta)
        sr = self.surface.remainder_energy(state.eta)
        return DiagnosticRecord(state.t, kin, sq, sr, 0.0, 0.0, 0.0, self.surface.mass(state.eta),
                                kin + sq + sr)

    def diagnostics(self, prev: SimState, new: SimState, dt: float, step_ops=None, X=None) -> DiagnosticRecord:
        ops = step_ops or self.operators(prev.Z)
        if X is None:
            X = ops.unknowns_from(new.u1, new.u2)
        visc, slip = ops.dissipation(X)
        rates = ops.C @ X
        kappa = self.params.kappa
        contact = kappa * float(rates @ rates) + kappa * float(rates @ self.params.law.W_hat(prev.contact_rates))
        e_prev = self.record(prev)
        e_new = self.record(new)
        resid = (e_new.energy_total - e_prev.energy_total) / dt + visc + slip + contact
        return replace(e_new, visc_diss=visc, slip_diss=slip, contact_diss=contact, residual=resid)

    def run(self, state: SimState, dt: float, steps: int, callback=None):
        records = [self.record(state)]
        for _ in range(steps):
            state, rec = self.step(state, dt)
            records.append(rec)
            if callback is not None:
                callback(state, rec)
        return state, records

    # contact angle
    def contact_cosines(self, state: SimState):
        """cos of the dynamic angle at the left and right contact points."""
        s = self.surface
        slopes = s.slopes(state.eta)
        zl = self.profile.slope(-self.params.ell) + slopes[0]
        zr = self.profile.slope(self.params.ell) + slopes[-1]
        return np.array([zl / np.sqrt(1 + zl * zl), -zr / np.sqrt(1 + zr * zr)])

    def contact_angle_gap(self, state: SimState) -> float:
        cos_eq = -self.params.jump_gamma / self.params.sigma
        return float(np.max(np.abs(self.contact_cosines(state) - cos_eq)))


class SaddleSolver:
    """Solver for ``[[H, -B^T], [-B, 0]] [x; p] = [f; -g]``.

    The LU factors of an earlier matrix serve as a preconditioner for
    iterative refinement; the system is refactored when refinement stalls.
    Between time steps the matrix changes only through the slowly moving
    geometry, so one factorization lasts many steps.
    """

    target = 1e-12
    max_sweeps = 12

    def __init__(self):
        self._lu = None
        self._shape = None
        self.factorizations = 0

    def _factor(self, K):
        try:
            self._lu = spla.splu(K)
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc
        self._shape = K.shape
        self.factorizations += 1

    def solve(self, H, B, f, g):
        n = H.shape[0]
        K = sp.bmat([[H, -B.T], [-B, None]], format="csc")
        rhs = np.r_[f, -g]
        scale = max(np.max(np.abs(rhs)), 1e-300)
        fresh = self._lu is None or self._shape != K.shape
        if fresh:
            self._factor(K)
        sol, res = self._refine(K, rhs, scale)
        if res > self.target * scale and not fresh:
            self._factor(K)
            sol, res = self._refine(K, rhs, scale)
        if not np.all(np.isfinite(sol)):
            raise SingularSystem("non-finite solution")
        if res > SOLVE_RTOL * scale and res > 1e-14:
            raise ResidualTooLarge(f"relative residual {res / scale:.3e}")
        return sol[:n], sol[n:]

    def _refine(self, K, rhs, scale):
        sol = self._lu.solve(rhs)
        r = rhs - K @ sol
        res = np.max(np.abs(r))
        for _ in range(self.max_sweeps):
            if res <= self.target * scale or not np.isfinite(res):
                break
            sol = sol + self._lu.solve(r)
            r = rhs - K @ sol
            new = np.max(np.abs(r))
            if new > 0.5 * res:
                res = new
                break
            res = new
        return sol, res


def _saddle_solve(H, B, f, g):
    return SaddleSolver().solve(H, B, f, g)


# ----------------------------------------------------------- stokes solve

@dataclass
class StokesData:
    """Right-hand sides of the steady problem, sampled where the unknowns live.

    body1 (ny, nx+1) and body2 (ny+1, nx): momentum forcing at u1 / u2 faces;
    div (ny, nx): prescribed divergence at centres; wall_side (2, ny): tangential
    traction defect on the left/right walls at the u2 heights of the outer columns;
    wall_bottom (nx-1,): same on the bottom at interior u1 columns; top1 (nx+1,)
    and top2 (nx,): surface traction at the surface nodes and top-face centres.
    """

    body1: np.ndarray
    body2: np.ndarray
    div: np.ndarray
    wall_side: np.ndarray
    wall_bottom: np.ndarray
    top1: np.ndarray
    top2: np.ndarray


def stokes_solve(ops: MacOperators, data: StokesData | None = None):
    """Steady Stokes problem with Navier-slip walls and prescribed surface traction.

    Solves  div S(p, u) = body,  div u = div,  (S nu - beta u).tau = wall,
    S N = top  and returns Cartesian ``(u1, u2, p)``.
    """
    nx, ny = ops.nx, ops.ny
    H = (ops.Av + ops.Sw).tocsr()
    if data is None:
        f = np.zeros(ops.nX)
        g = np.zeros(ops.np_)
    else:
        f = ops.E1.T @ (ops.m1 * data.body1).ravel() + ops.E2.T @ (ops.m2 * data.body2).ravel()
        Sside, Sbot = ops.wall_ops
        lens_s, lens_b = ops.wall_len
        f = f - Sside.T @ (lens_s / ops.wall_fac[0] * np.r_[data.wall_side[0], data.wall_side[1]])
        f = f - Sbot.T @ (lens_b / ops.wall_fac[1] * data.wall_bottom)
        # traction on the surface: normal part on the top fluxes, the rest on the top row of u1
        top_u2 = np.zeros((ny + 1, nx))
        top_u2[ny] = ops.h1 * data.top2
        # the surface nodes carry no shear unknown: the tangential traction acts on
        # the interior sides of the top half cells
        half = ops.m2[ny] / ops.h1
        side = np.zeros(nx + 1)
        side[1:-1] = data.top1[1:-1]
        top_u2[ny] += half * (side[1:] - side[:-1])
        f = f - ops.EU.T @ top_u2.ravel()
        slope_node = np.zeros(nx + 1)
        slope_node[1:-1] = 0.5 * (ops.slope[ny, 1:] + ops.slope[ny, :-1])
        top2_node = np.zeros(nx + 1)
        top2_node[1:-1] = 0.5 * (data.top2[1:] + data.top2[:-1])
        top_u1 = np.zeros((ny, nx + 1))
        top_u1[ny - 1] = ops.h1 * (data.top1 + slope_node * top2_node)
        f = f - ops.E1.T @ top_u1.ravel()
        g = (ops.area_c * data.div).ravel()
    X, p = _saddle_solve(H, ops.B, f, g)
    u1, u2, _ = ops.cartesian(X)
    return u1, u2, p.reshape(ny, nx)


# ---------------------------------------------------------------- contact

def contact_update(slope_terms, law, params: PhysicalParams, tol: float = 1e-14, maxit: int = 100):
    """Contact-point velocities solving W(V) = [gamma] -/+ sigma * slope term at -ell / +ell.

    ``slope_terms`` holds ``zeta'/sqrt(1+zeta'^2)`` at the left and right
    contact points.  Safeguarded Newton on the monotone law.
    """
    s = np.asarray(slope_terms, dtype=float)
    targets = params.jump_gamma + params.sigma * np.array([s[0], -s[1]])
    out = np.empty(2)
    for k, target in enumerate(targets):
        out[k] = _invert_law(law, target, tol, maxit)
    return out


def _invert_law(law, target, tol, maxit):
    if target == 0:
        return 0.0
    lo, hi = 0.0, target / law.kappa
    # W(z) >= kappa z with the same sign, so the root lies between 0 and target/kappa
    lo, hi = min(lo, hi), max(lo, hi)
    if (law.W(lo) - target) * (law.W(hi) - target) > 0:
        raise RootBracketFailure(f"cannot bracket a root for target {target!r}")
    v = 0.5 * (lo + hi)
    for _ in range(maxit):
        f = law.W(v) - target
        if abs(f) <= tol * max(1.0, abs(target)):
            return v
        if f > 0:
            hi = v
        else:
            lo = v
        step = v - f / law.W_prime(v)
        v = step if lo < step < hi else 0.5 * (lo + hi)
    return v


# ---------------------------------------------------------------- decay

def measure_decay(records):
    """Decay rate and R^2 of a least-squares fit of log energy over the last half."""
    if len(records) < 20:
        raise ValueError("need at least 20 records")
    t = np.array([r.t for r in records], dtype=float)
    e = np.array([r.energy_total for r in records], dtype=float)
    if np.all(e <= 1e-300):
        raise EmptySignal("all energies vanish")
    if np.any(e <= 0):
        raise NonPositiveEnergy("energy must be positive to take logarithms")
    half = len(records) // 2
    tt, ly = t[half:], np.log(e[half:])
    slope, intercept = np.polyfit(tt, ly, 1)
    fit = slope * tt + intercept
    ss_res = float(np.sum((ly - fit) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(-slope), r2


# ------------------------------------------------------------------- I/O

def write_csv(records, path) -> None:
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            fh.write(r.csv_row() + "\n")


MAGIC = b"CAPVSL\x00\x00"
VERSION = 1


def save_checkpoint(state: SimState, path) -> None:
    ny, nx = state.p.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, 0))
        fh.write(struct.pack("<qq", nx, ny))
        fh.write(struct.pack("<d", state.t))
        for arr in (state.u1, state.u2, state.p, state.eta, state.contact_rates):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if head[:8] != MAGIC:
            raise ValueError("not a checkpoint file")
        version, _ = struct.unpack("<II", head[8:])
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        nx, ny = struct.unpack("<qq", fh.read(16))
        (t,) = struct.unpack("<d", fh.read(8))
        out = {"t": t, "nx": nx, "ny": ny}
        for name, shape in (("u1", (ny, nx + 1)), ("u2", (ny + 1, nx)), ("p", (ny, nx)),
                            ("eta", (nx + 1,)), ("contact_rates", (2,))):
            n = int(np.prod(shape))
            out[name] = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
    return out
