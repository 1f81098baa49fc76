"""Invariant suites of every module, run at small sizes with a fixed seed.

Each check yields a :class:`Check` with the measured value and its bound;
the report is deterministic for a given seed (no timings, fixed formatting).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics as dyn
from . import geometry as geo
from . import spectral as spc
from .core_params import PhysicalParams, make_params
from .equilibrium import minimality_panel, solve_equilibrium


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    bound: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.bound)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.3e} <= {self.bound:.1e}"


FAULTS = ("none", "corrupt_weights")


def _base(params: PhysicalParams | None):
    return params or make_params(g=1.0, sigma=1.0, gamma_sv=0.3, ell=1.0)


def equilibrium_suite(params: PhysicalParams | None = None, M_top: float = 2.0):
    p = _base(params)
    flat = solve_equilibrium(make_params(g=p.g, sigma=p.sigma, ell=p.ell), 2.0 * p.ell,
                             n=128, check_minimality=False)
    prof = solve_equilibrium(p, M_top, n=256, check_minimality=False)
    yield Check("equilibrium.flat_deviation", float(np.max(np.abs(flat.zeta0 - 1.0))), 1e-10)
    yield Check("equilibrium.mass_error", abs(prof.mass - M_top), 1e-10)
    yield Check("equilibrium.evenness", float(np.max(np.abs(prof.zeta0 - prof.zeta0[::-1]))), 1e-10)
    yield Check("equilibrium.balance_residual", prof.residual, 1e-10)
    yield Check("equilibrium.minimality", float(max(0.0, -np.min(minimality_panel(prof)))), 0.0)


def spectral_suite(rng, params: PhysicalParams | None = None, fault: str = "none"):
    p = _base(params)
    prof = solve_equilibrium(p, 2.0 * p.ell, n=512, check_minimality=False)
    op = spc.assemble(prof, p, 256)
    basis = spc.eigendecompose(op, 40)
    if fault == "corrupt_weights":
        w = basis.w.copy()
        w[:, 1] *= 1.01
        basis = spc.EigenBasis(basis.lam, w, op)
    yield Check("spectral.orthonormality", basis.orthonormality_error(), 1e-10)
    yield Check("spectral.lambda0_minus_g", abs(basis.lam[0] - p.g), 1e-10)
    res = spc.property_suite(basis, rng, 50)
    for key, tol in spc.SUITE_TOLERANCES.items():
        yield Check(f"spectral.{key}", res[key], tol)


def geometry_suite(rng, params: PhysicalParams | None = None):
    p = _base(params)
    prof = solve_equilibrium(p, 2.0 * p.ell, n=512, check_minimality=False)
    grid = geo.VesselGrid(prof, 32, 32)
    ident = geo.build_geometry(prof, geo.SurfacePerturbation.zero(32), grid)
    yield Check("geometry.identity_A", float(np.max(np.abs(ident.A))), 0.0)
    yield Check("geometry.identity_J", float(np.max(np.abs(ident.J - 1.0))), 0.0)
    x = grid.x1
    c = rng.uniform(-1.0, 1.0, 3)
    eta = 0.01 * (c[0] * np.cos(np.pi * x) + c[1] * np.sin(np.pi * x) + c[2] * np.cos(2 * np.pi * x))
    fields = geo.build_geometry(prof, geo.SurfacePerturbation.from_samples(eta, p.ell), grid)
    yield Check("geometry.JK_product", float(np.max(np.abs(fields.J * fields.K - 1.0))), 1e-14)
    top = fields.mapped_height()[-1]
    yield Check("geometry.surface_trace", float(np.max(np.abs(top - prof.height(x) - eta))), 1e-12)
    y = np.linspace(-2.0, 2.0, 41)
    h = 1e-4
    d = (geo.remainder_R(y, h) - geo.remainder_R(y, -h)) / (2 * h)
    yield Check("geometry.remainder_flat_slope", float(np.max(np.abs(d))), 1e-6)


def dynamics_suite(rng, params: PhysicalParams | None = None):
    p = _base(params)
    prof = solve_equilibrium(p, 2.0 * p.ell, n=256, check_minimality=False)
    run = dyn.Dynamics(prof, p, 16, 16)
    state = run.initial_state(np.zeros(17))
    dt = 0.9 * run.cfl_bound(state)
    for _ in range(10):
        state, _rec = run.step(state, dt)
    yield Check("dynamics.fixed_point", float(max(np.max(np.abs(state.u1)), np.max(np.abs(state.u2)),
                                                   np.max(np.abs(state.eta)))), 1e-12)
    x = run.grid.x1
    amp = 1e-3 * rng.uniform(0.5, 1.0)
    eta0 = amp * np.cos(np.pi * x / p.ell)
    eta0 -= run.surface.mass(eta0) / (2 * p.ell)
    state = run.initial_state(eta0)
    dt = 0.9 * run.cfl_bound(state)
    state, recs = run.run(state, dt, 40)
    e = np.array([r.energy_total for r in recs])
    yield Check("dynamics.energy_increase", float(max(0.0, np.max(np.diff(e)))) / e[0], 1e-12)
    yield Check("dynamics.mass_drift", abs(recs[-1].mass - recs[0].mass), 1e-8)
    ops = run.operators(state.Z_prev)
    X = ops.unknowns_from(state.u1, state.u2)
    yield Check("dynamics.divergence", float(np.max(np.abs(ops.B @ X))), 1e-8)
    law = p.law
    v = dyn.contact_update([-p.jump_gamma / p.sigma, p.jump_gamma / p.sigma], law, p)
    yield Check("dynamics.pinned_contact_rate", float(np.max(np.abs(v))), 1e-14)


def run_all(seed: int = 0, fault: str = "none", params: PhysicalParams | None = None):
    if fault not in FAULTS:
        raise ValueError(f"unknown fault hook {fault!r}")
    rng = np.random.default_rng(seed)
    checks = []
    checks += list(equilibrium_suite(params))
    checks += list(spectral_suite(rng, params, fault))
    checks += list(geometry_suite(rng, params))
    checks += list(dynamics_suite(rng, params))
    return checks
