import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from capillary_vessel import dynamics as dyn
from capillary_vessel.core_params import CUBIC, make_params
from capillary_vessel.equilibrium import energy_I, solve_equilibrium
import manufactured as mf


@pytest.fixture(scope="module")
def flat():
    p = make_params()
    return p, solve_equilibrium(p, 2.0, n=256)


@pytest.fixture(scope="module")
def curved():
    p = make_params(gamma_sv=0.3)
    return p, solve_equilibrium(p, 2.0, n=256, check_minimality=False)


def _cos_start(run, amp):
    x = run.grid.x1
    eta = amp * np.cos(np.pi * x / run.params.ell)
    return eta - run.surface.mass(eta) / (2 * run.params.ell)


def _orders(errs):
    return [np.log2(a / b) for a, b in zip(errs[0], errs[1])]


def test_manufactured_solution_second_order(flat):
    p, prof = flat
    F = mf.fields(1.0, 1.0)
    errs = [mf.interior_errors(dyn.Dynamics(prof, p, n, n), F) for n in (16, 32)]
    assert min(_orders(errs)) >= 1.8


def test_manufactured_solution_other_slip(flat):
    # a different friction and viscosity exercise the wall coefficients
    p = make_params(mu=0.5, beta=4.0)
    prof = solve_equilibrium(p, 2.0, n=256)
    F = mf.fields(0.5, 4.0)
    errs = [mf.interior_errors(dyn.Dynamics(prof, p, n, n), F) for n in (16, 32)]
    assert min(_orders(errs)) >= 1.8


def test_homogeneous_stokes_problem_has_zero_solution(curved):
    p, prof = curved
    run = dyn.Dynamics(prof, p, 16, 16)
    ops = run.operators(run.geometry(np.zeros(17))[1])
    u1, u2, pr = dyn.stokes_solve(ops)
    assert max(np.max(np.abs(u1)), np.max(np.abs(u2)), np.max(np.abs(pr))) == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_stream_function_fields_are_discretely_solenoidal(seed):
    p = make_params(gamma_sv=0.3)
    prof = _PROF.setdefault("c", solve_equilibrium(p, 2.0, n=128, check_minimality=False))
    run = dyn.Dynamics(prof, p, 8, 8)
    rng = np.random.default_rng(seed)
    eta = 0.01 * rng.standard_normal(9)
    ops = run.operators(run.geometry(eta - run.surface.mass(eta) / 2)[1])
    psi = np.zeros((9, 9))                      # nodes, zero on the boundary
    psi[1:-1, 1:-1] = rng.standard_normal((7, 7))
    u1 = np.diff(psi, axis=0) / ops.L1          # vertical faces
    U2 = -np.diff(psi, axis=1) / ops.h1         # horizontal faces (normal flux)
    X = np.r_[u1[:, 1:-1].ravel(), U2[1:].ravel()]
    assert np.max(np.abs(ops.B @ X)) < 1e-12 * max(1.0, np.max(np.abs(X)))


_PROF = {}


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_forms_are_symmetric_and_dissipative(seed):
    p = make_params(gamma_sv=0.3)
    prof = _PROF.setdefault("c", solve_equilibrium(p, 2.0, n=128, check_minimality=False))
    run = dyn.Dynamics(prof, p, 8, 8)
    ops = run.operators(run.geometry(np.zeros(9))[1])
    X = np.random.default_rng(seed).standard_normal(ops.nX)
    for A in (ops.M, ops.Av, ops.Sw):
        assert abs(A - A.T).max() < 1e-12
    visc, slip = ops.dissipation(X)
    assert visc >= 0 and slip >= 0
    assert ops.kinetic(X) > 0
    assert visc + slip == pytest.approx(float(X @ ((ops.Av + ops.Sw) @ X)), rel=1e-12)


def test_equilibrium_is_a_fixed_point(curved):
    p, prof = curved
    run = dyn.Dynamics(prof, p, 16, 16)
    state = run.initial_state(np.zeros(17))
    state, recs = run.run(state, 0.9 * run.cfl_bound(state), 100)
    assert max(np.max(np.abs(state.u1)), np.max(np.abs(state.u2)), np.max(np.abs(state.eta))) <= 1e-12
    assert all(r.energy_total == 0.0 for r in recs)


def test_small_run_dissipates_energy(curved):
    p, prof = curved
    run = dyn.Dynamics(prof, p, 16, 16)
    state = run.initial_state(_cos_start(run, 1e-3))
    state, recs = run.run(state, 0.9 * run.cfl_bound(state), 40)
    e = np.array([r.energy_total for r in recs])
    assert np.all(np.diff(e) <= 1e-12 * e[0])
    assert abs(recs[-1].mass - recs[0].mass) <= 1e-12
    assert all(r.visc_diss >= 0 and r.slip_diss >= 0 and r.contact_diss >= 0 for r in recs[1:])
    # discrete balance residual: first order in the grid, a fraction of the energy at 16x16
    assert max(abs(r.residual) for r in recs[1:]) <= 0.25 * e[0]
    assert run.solver.factorizations <= 3


def test_even_start_stays_even(flat):
    p, prof = flat
    run = dyn.Dynamics(prof, p, 16, 16)
    state = run.initial_state(_cos_start(run, 1e-2))
    state, _ = run.run(state, 0.9 * run.cfl_bound(state), 15)
    assert np.max(np.abs(state.eta - state.eta[::-1])) < 1e-13
    assert np.max(np.abs(state.u1 + state.u1[:, ::-1])) < 1e-12


def test_step_beyond_bound_raises(flat):
    p, prof = flat
    run = dyn.Dynamics(prof, p, 8, 8)
    state = run.initial_state(_cos_start(run, 1e-2))
    with pytest.raises(dyn.CFLViolation, match="CFL"):
        run.step(state, 2.0 * run.cfl_bound(state))


def test_equilibrium_contact_angle(flat, curved):
    for p, prof in (flat, curved):
        run = dyn.Dynamics(prof, p, 16, 16)
        state = run.initial_state(np.zeros(17))
        cos_eq = -p.jump_gamma / p.sigma
        assert run.contact_angle_gap(state) < 1e-3
    p, prof = flat
    run = dyn.Dynamics(prof, p, 16, 16)
    assert run.contact_angle_gap(run.initial_state(np.zeros(17))) == 0.0


def test_surface_energy_splits_exactly(curved):
    p, prof = curved
    surf = dyn.SurfaceForms.build(prof, p, 256)
    eta = 1e-3 * np.cos(np.pi * surf.x) + 4e-4 * np.sin(2 * np.pi * surf.x)
    eta -= surf.mass(eta) / 2.0
    full = energy_I(prof.zeta0 + eta, p) - energy_I(prof.zeta0, p)
    assert abs(surf.quadratic(eta) + surf.remainder_energy(eta) - full) < 1e-11


def test_remainder_force_is_the_gradient(curved):
    p, prof = curved
    surf = dyn.SurfaceForms.build(prof, p, 32)
    eta = 0.05 * np.sin(np.pi * surf.x)
    f = surf.remainder_force(eta)
    h = 1e-6
    for i in (0, 7, 32):
        e = np.zeros(33)
        e[i] = h
        fd = (surf.remainder_energy(eta + e) - surf.remainder_energy(eta - e)) / (2 * h)
        assert f[i] == pytest.approx(fd, abs=1e-9)


def test_linear_contact_update():
    p = make_params(kappa=2.0)
    v = dyn.contact_update([0.1, -0.1], p.law, p)
    assert np.allclose(v, 0.05, atol=1e-15)


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0.0, 10.0))
def test_cubic_contact_update_matches_root_finder(sl, sr, c):
    p = make_params(CUBIC, c, gamma_sv=0.2)
    law = p.law
    v = dyn.contact_update([sl, sr], law, p)
    targets = [0.2 + sl, 0.2 - sr]
    for vk, tk in zip(v, targets):
        ref = 0.0 if tk == 0 else brentq(lambda z: law.W(z) - tk, -abs(tk), abs(tk), xtol=1e-15)
        assert vk == pytest.approx(ref, abs=1e-12)


def test_contact_update_frozen_value():
    # root of z + z^3 = 0.2
    p = make_params(CUBIC, 1.0)
    v = dyn.contact_update([0.2, -0.2], p.law, p)
    assert v[0] == pytest.approx(0.19282993096291295, abs=1e-15)
    assert v[1] == v[0]


def _records(energies, dt=0.01):
    return [dyn.DiagnosticRecord(k * dt, 0, 0, 0, 0, 0, 0, 0, e) for k, e in enumerate(energies)]


def test_decay_rate_of_synthetic_exponential():
    t = np.arange(100) * 0.01
    lam, r2 = dyn.measure_decay(_records(3.0 * np.exp(-1.7 * t)))
    assert lam == pytest.approx(1.7, rel=1e-10)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_decay_rate_two_and_constant_signal():
    t = np.arange(100) * 0.01
    lam, r2 = dyn.measure_decay(_records(np.exp(-2.0 * t)))
    assert abs(lam - 2.0) <= 1e-6 and r2 >= 1 - 1e-12
    lam, _ = dyn.measure_decay(_records(np.full(40, 0.7)))
    assert abs(lam) <= 1e-12


def test_decay_errors():
    with pytest.raises(ValueError):
        dyn.measure_decay(_records(np.ones(5)))
    with pytest.raises(dyn.EmptySignal):
        dyn.measure_decay(_records(np.zeros(30)))
    with pytest.raises(dyn.NonPositiveEnergy):
        dyn.measure_decay(_records(np.r_[np.ones(29), -1.0]))


def test_checkpoint_round_trip(tmp_path, curved):
    p, prof = curved
    run = dyn.Dynamics(prof, p, 8, 8)
    state = run.initial_state(_cos_start(run, 1e-2))
    state, _ = run.step(state, 0.9 * run.cfl_bound(state))
    path = tmp_path / "c.bin"
    dyn.save_checkpoint(state, path)
    back = dyn.load_checkpoint(path)
    assert back["t"] == state.t and (back["nx"], back["ny"]) == (8, 8)
    for name in ("u1", "u2", "p", "eta", "contact_rates"):
        assert np.array_equal(back[name], getattr(state, name))
    raw = path.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(ValueError):
        dyn.load_checkpoint(tmp_path / "bad.bin")


def test_csv_layout(tmp_path):
    path = tmp_path / "ts.csv"
    dyn.write_csv(_records([1.0, 0.5]), path)
    lines = path.read_text().splitlines()
    assert lines[0] == dyn.CSV_HEADER
    assert lines[2].split(",")[-1] == "0.5"


def test_singular_saddle_system_is_reported():
    import scipy.sparse as sp
    H = sp.csr_matrix((2, 2))
    B = sp.csr_matrix(np.array([[1.0, 0.0]]))
    with pytest.raises(dyn.SimulationError):
        dyn.SaddleSolver().solve(H, B, np.ones(2), np.zeros(1))


def _shear_data(ops, n):
    x = np.tile(ops.grid.x1, (n, 1))
    return dyn.StokesData(np.cos(np.pi * x / 2) * (ops.zf1 + 1), np.zeros((n + 1, n)), np.zeros((n, n)),
                          np.zeros((2, n)), np.zeros(n - 1), np.zeros(n + 1), np.zeros(n))


def _slip_defect(p, prof, n):
    run = dyn.Dynamics(prof, p, n, n)
    ops = run.operators(run.initial_state(np.zeros(n + 1)).Z)
    u1, _, _ = dyn.stokes_solve(ops, _shear_data(ops, n))
    zw = ops.Z[0, 1:n]
    # quadratic in height through the three lowest rows, evaluated at the wall
    uw, duw = [], []
    for i in range(1, n):
        c = np.polyfit(ops.zf1[:3, i], u1[:3, i], 2)
        uw.append(np.polyval(c, zw[i - 1]))
        duw.append(np.polyval(np.polyder(c), zw[i - 1]))
    uw, duw = np.array(uw), np.array(duw)
    return np.max(np.abs(p.beta * uw - p.mu * duw)) / np.max(np.abs(p.mu * duw))


def test_navier_slip_length_at_the_wall(flat):
    p, prof = flat
    e32, e64 = _slip_defect(p, prof, 32), _slip_defect(p, prof, 64)
    assert e64 < 0.05 and e32 / e64 > 2.0


def test_equilibrium_pair_has_zero_diagnostics(curved):
    p, prof = curved
    run = dyn.Dynamics(prof, p, 12, 12)
    s = run.initial_state(np.zeros(13))
    rec = run.diagnostics(s, s, 0.01)
    vals = [rec.kinetic, rec.surface_quadratic, rec.surface_remainder, rec.visc_diss, rec.slip_diss,
            rec.contact_diss, rec.mass, rec.energy_total, rec.residual]
    assert max(abs(v) for v in vals) <= 1e-12


def test_balance_constant_is_stable_under_refinement(curved):
    p, prof = curved
    consts = []
    for n in (16, 32):
        run = dyn.Dynamics(prof, p, n, n)
        s = run.initial_state(_cos_start(run, 1e-3))
        steps = int(np.ceil(0.05 / (0.9 * run.cfl_bound(s))))
        dt = 0.05 / steps
        _, recs = run.run(s, dt, steps)
        r = max(abs(q.residual) for q in recs[1:]) / recs[0].energy_total
        consts.append(r / (dt + (2.0 / n) ** 2))
    assert 0.5 <= consts[1] / consts[0] <= 2.0


def test_slip_walls_are_impermeable(curved):
    p, prof = curved
    run = dyn.Dynamics(prof, p, 16, 16)
    s = run.initial_state(_cos_start(run, 1e-2))
    s, _ = run.run(s, 0.9 * run.cfl_bound(s), 10)
    assert np.all(s.u1[:, 0] == 0) and np.all(s.u1[:, -1] == 0) and np.all(s.U2[0] == 0)
    # solenoidal on the geometry the step was solved on
    ops = run.operators(s.Z_prev)
    assert np.max(np.abs(ops.B @ ops.unknowns_from(s.u1, s.u2))) < 1e-8


def test_cubic_law_integrated_energy_bound(curved):
    _, prof = curved
    p = make_params(CUBIC, 1.0, gamma_sv=0.3)
    run = dyn.Dynamics(prof, p, 16, 16)
    s = run.initial_state(_cos_start(run, 2e-2))
    dt = 0.9 * run.cfl_bound(s)
    _, recs = run.run(s, dt, 60)
    e = np.array([r.energy_total for r in recs])
    d = np.array([0.0] + [r.visc_diss + r.slip_diss + r.contact_diss for r in recs[1:]])
    spent = np.cumsum(d) * dt
    for i in range(len(e)):
        assert np.all(e[i:] + spent[i:] - spent[i] <= 1.05 * e[i])


@pytest.mark.parametrize("shape,settle", [("sin", 0.0), ("cos", 0.5)])
def test_contact_angle_relaxes_monotonically(curved, shape, settle):
    p, prof = curved
    run = dyn.Dynamics(prof, p, 16, 16)
    x = run.grid.x1
    eta = 0.02 * (np.sin(np.pi * x) if shape == "sin" else np.cos(np.pi * x))
    s = run.initial_state(eta - run.surface.mass(eta) / 2.0)
    dt = 0.9 * run.cfl_bound(s)
    t, gap = [], []
    run.run(s, dt, int(2.0 / dt), callback=lambda st, _: (t.append(st.t), gap.append(run.contact_angle_gap(st))))
    t, gap = np.array(t), np.array(gap)
    late = gap[t >= settle]
    assert np.all(np.diff(late) <= 0) and late[-1] < 0.5 * late[0]


def test_negated_velocity_gives_mirrored_step(curved):
    p, prof = curved
    run = dyn.Dynamics(prof, p, 16, 16)
    s0 = run.initial_state(np.zeros(17))
    u1, u2, _ = dyn.stokes_solve(run.operators(s0.Z), _shear_data(run.operators(s0.Z), 16))
    errs = []
    for a in (1e-3, 1e-6):
        plus = run.initial_state(np.zeros(17), a * u1, a * u2)
        minus = run.initial_state(np.zeros(17), -a * u1, -a * u2)
        dt = 0.9 * min(run.cfl_bound(plus), run.cfl_bound(minus))
        up, _ = run.step(plus, dt)
        um, _ = run.step(minus, dt)
        errs.append(np.max(np.abs(up.u1 + um.u1)) / np.max(np.abs(up.u1)))
    # the only even part is advection, quadratic in the amplitude
    assert errs[1] < 1e-8 and errs[0] / errs[1] > 500
