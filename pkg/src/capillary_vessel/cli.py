"""Command-line entry point.

Usage::

    capillary-vessel {equilibrium,spectrum,simulate,decay,verify} --config run.cfg [--out DIR] [--seed N]

The config file holds ``key = value`` lines with ``#`` comments.  Exit codes:
0 success, 1 verification failure, 2 configuration error, 3 equilibrium
failure, 4 simulation guard.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import MISSING, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import spectral as spc
from . import verification
from .core_params import CUBIC, LINEAR, ModelError, PhysicalParams, contact_angles, make_params, validate_params
from .equilibrium import EquilibriumError, energy_I, solve_equilibrium
from .geometry import NonInvertibleMap, SmallnessViolated

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_EQUILIBRIUM, EXIT_GUARD = 0, 1, 2, 3, 4


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    g: float
    sigma: float
    gamma_sv: float
    gamma_sf: float
    mu: float
    beta: float
    ell: float
    kappa: float
    M_top: float
    channel_height: float = 3.0
    vessel_depth: float = 1.0
    n_surface: int = 256
    n_x: int = 32
    n_y: int = 32
    j_max: int = 16
    dt: float = 0.0                 # 0 selects 0.9 of the initial stability bound
    t_end: float = 1.0
    eta0_mode: int = 1
    eta0_amplitude: float = 0.0
    eta0_shape: str = "cos"
    response_law: str = LINEAR
    response_c: float = 0.0
    output_dir: str = "."
    seed: int = 0
    verify_fault: str = "none"

    def params(self) -> PhysicalParams:
        return make_params(self.response_law, self.response_c, g=self.g, sigma=self.sigma,
                           gamma_sv=self.gamma_sv, gamma_sf=self.gamma_sf, mu=self.mu, beta=self.beta,
                           ell=self.ell, kappa=self.kappa, channel_height=self.channel_height,
                           vessel_depth=self.vessel_depth)


_FIELDS = {f.name: f for f in fields(RunConfig)}
REQUIRED = tuple(name for name, f in _FIELDS.items() if f.default is MISSING)


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        kind = _FIELDS[key].type
        try:
            if kind == "float":
                values[key] = float(val)
            elif kind == "int":
                values[key] = int(val)
            else:
                values[key] = val
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {val!r}") from exc
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    cfg = RunConfig(**values)
    if cfg.response_law not in (LINEAR, CUBIC):
        raise ConfigError(f"response_law must be {LINEAR!r} or {CUBIC!r}")
    if cfg.eta0_shape not in ("cos", "sin"):
        raise ConfigError("eta0_shape must be 'cos' or 'sin'")
    if cfg.eta0_mode < 1:
        raise ConfigError("eta0_mode must be at least 1")
    if cfg.verify_fault not in verification.FAULTS:
        raise ConfigError(f"verify_fault must be one of {verification.FAULTS}")
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_manifest(path, items: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in items.items():
            fh.write(f"{k}={_fmt(v)}\n")


# ---------------------------------------------------------------- commands

def _profile(cfg: RunConfig, params):
    return solve_equilibrium(params, cfg.M_top, n=cfg.n_surface)


def cmd_equilibrium(cfg: RunConfig, out: Path) -> int:
    params = cfg.params()
    prof = _profile(cfg, params)
    prof.to_csv(out / "profile.csv")
    ang = contact_angles(params)
    write_manifest(out / "equilibrium_manifest.txt", {
        "P0": prof.P0, "theta_eq": ang.theta_eq, "omega_eq": ang.omega_eq, "eps_max": ang.eps_max,
        "I": energy_I(prof.zeta0, params), "M_top": cfg.M_top, "n_surface": cfg.n_surface,
        "residual": prof.residual, "iterations": prof.iterations})
    return EXIT_OK


def cmd_spectrum(cfg: RunConfig, out: Path) -> int:
    params = cfg.params()
    prof = _profile(cfg, params)
    op = spc.assemble(prof, params, cfg.n_surface)
    basis = spc.eigendecompose(op, cfg.j_max)
    spc.spectrum_csv(basis, out / "spectrum.csv")
    res = spc.property_suite(basis, np.random.default_rng(cfg.seed), 50)
    items = {"m": cfg.n_surface, "j_max": cfg.j_max, "seed": cfg.seed,
             "orthonormality_err": basis.orthonormality_error()}
    names = {"parseval_s0": "parseval_s0_max_err", "parseval_s1": "parseval_s1_max_err",
             "dsj_symmetry": "dsj_symmetry_max_err", "interpolation_excess": "interpolation_max_excess",
             "mean_zero_drift": "mean_zero_max_drift"}
    ok = True
    for key, tol in spc.SUITE_TOLERANCES.items():
        items[names[key]] = res[key]
        passed = res[key] <= tol
        ok &= passed
        items[names[key] + "_pass"] = "true" if passed else "false"
    items["suite_pass"] = "true" if ok else "false"
    write_manifest(out / "spectrum_manifest.txt", items)
    return EXIT_OK


def initial_surface(cfg: RunConfig, run: dyn.Dynamics) -> np.ndarray:
    x = run.grid.x1
    arg = cfg.eta0_mode * np.pi * x / cfg.ell
    eta = cfg.eta0_amplitude * (np.cos(arg) if cfg.eta0_shape == "cos" else np.sin(arg))
    return eta - run.surface.mass(eta) / (2.0 * cfg.ell)


def _simulate(cfg: RunConfig, out: Path, csv_name: str, extra=None):
    """Shared driver; returns (exit code, run, records, final state, dt)."""
    params = cfg.params()
    prof = _profile(cfg, params)
    run = dyn.Dynamics(prof, params, cfg.n_x, cfg.n_y)
    state = run.initial_state(initial_surface(cfg, run))
    dt = cfg.dt if cfg.dt > 0 else 0.9 * run.cfl_bound(state)
    steps = max(1, int(math.ceil(cfg.t_end / dt - 1e-9)))
    records = [run.record(state)]
    code = EXIT_OK
    csv = open(out / csv_name, "w", encoding="utf-8")
    csv.write(dyn.CSV_HEADER + "\n")
    csv.write(records[0].csv_row() + "\n")
    try:
        for _ in range(steps):
            try:
                state, rec = run.step(state, dt)
            except (dyn.CFLViolation, SmallnessViolated, NonInvertibleMap, dyn.SimulationError) as exc:
                print(f"simulation guard: {exc}", file=sys.stderr)
                code = EXIT_GUARD
                break
            records.append(rec)
            csv.write(rec.csv_row() + "\n")
            if extra is not None:
                extra(run, state, rec)
    finally:
        csv.close()
    dyn.save_checkpoint(state, out / "checkpoint.bin")
    return code, run, records, state, dt


def _decay_items(records):
    try:
        lam, r2 = dyn.measure_decay(records)
    except (ValueError, ModelError):
        lam, r2 = float("nan"), float("nan")
    return lam, r2


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    code, run, records, state, dt = _simulate(cfg, out, "timeseries.csv")
    lam, r2 = _decay_items(records)
    e = np.array([r.energy_total for r in records])
    res = np.array([r.residual for r in records[1:]]) if len(records) > 1 else np.zeros(1)
    write_manifest(out / "simulate_manifest.txt", {
        "lambda": lam, "fit_quality": r2, "dt": dt, "steps": len(records) - 1, "t_final": state.t,
        "energy_initial": e[0], "energy_final": e[-1],
        "max_energy_increase": float(np.max(np.diff(e))) if e.size > 1 else 0.0,
        "mass_drift": abs(records[-1].mass - records[0].mass),
        "max_abs_residual": float(np.max(np.abs(res))),
        "contact_gap_final": run.contact_angle_gap(state),
        "status": "ok" if code == EXIT_OK else "guard"})
    return code


def cmd_decay(cfg: RunConfig, out: Path) -> int:
    gaps = []

    def track(run, state, rec):
        gaps.append((state.t, rec.energy_total, run.contact_angle_gap(state)))

    code, run, records, state, dt = _simulate(cfg, out, "timeseries.csv", track)
    with open(out / "decay.csv", "w", encoding="utf-8") as fh:
        fh.write("t,energy_total,contact_gap\n")
        for row in gaps:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    lam, r2 = _decay_items(records)
    e = np.array([r.energy_total for r in records])
    t = np.array([r.t for r in records])
    half = np.nonzero(e <= 0.5 * e[0])[0] if e[0] > 0 else np.array([], dtype=int)
    t_half = float(t[half[0]]) if half.size else float("nan")
    write_manifest(out / "decay_manifest.txt", {
        "lambda": lam, "fit_quality": r2, "half_life": t_half,
        "lambda_from_half_life": math.log(2.0) / t_half if half.size else float("nan"),
        "energy_ratio": e[-1] / e[0] if e[0] > 0 else float("nan"),
        "contact_gap_initial": run.contact_angle_gap(run.initial_state(initial_surface(cfg, run))),
        "contact_gap_final": run.contact_angle_gap(state),
        "status": "ok" if code == EXIT_OK else "guard"})
    return code


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    checks = verification.run_all(cfg.seed, cfg.verify_fault, cfg.params())
    lines = [c.line() for c in checks]
    for line in lines:
        print(line)
    with open(out / "verify_report.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


COMMANDS = {"equilibrium": cmd_equilibrium, "spectrum": cmd_spectrum, "simulate": cmd_simulate,
            "decay": cmd_decay, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="capillary-vessel", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="key = value configuration file")
    ap.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, default=None, help="seed for randomized suites (overrides seed)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be nonnegative")
            cfg = replace(cfg, seed=args.seed)
        validate_params(cfg.params())
    except (ConfigError, ModelError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, out)
    except EquilibriumError as exc:
        print(f"equilibrium failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_EQUILIBRIUM
    except (spc.ResolutionGuard, spc.GridTooCoarse) as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SmallnessViolated, NonInvertibleMap, dyn.SimulationError) as exc:
        print(f"simulation guard: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GUARD


if __name__ == "__main__":
    sys.exit(main())
