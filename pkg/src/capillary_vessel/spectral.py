"""Spectral calculus of the gravity-capillary operator on the equilibrium surface.

The operator ``K phi = g*phi - sigma*(z(x) phi')'`` with weight
``z = (1+zeta0'^2)^(-3/2)`` and natural boundary conditions is discretized by
continuous piecewise-linear elements on ``m+1`` nodes.  With the consistent
mass matrix ``Mass`` and the energy matrix ``Energy`` (gravity plus weighted
stiffness) the discrete eigenpairs solve ``Energy w = lam Mass w``.  All
inner products below are the discrete ones: ``(u, v)_0 = u.Mass.v`` and
``(u, v)_1 = u.Energy.v``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core_params import ModelError, PhysicalParams
from .equilibrium import EquilibriumProfile, GridMismatch


class GridTooCoarse(ModelError):
    pass


class ResolutionGuard(ModelError):
    pass


class SolverFailure(ModelError):
    pass


@dataclass(frozen=True)
class GravityCapillaryOperator:
    x: np.ndarray
    weight: np.ndarray          # element averages of z
    g: float
    sigma: float
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix    # weighted, without sigma

    @property
    def m(self) -> int:
        return len(self.x) - 1

    @property
    def energy(self) -> sp.csr_matrix:
        return (self.g * self.mass + self.sigma * self.stiffness).tocsr()

    def apply_energy(self, v):
        # gravity and stiffness applied separately: the stiffness annihilates
        # constants exactly, the summed matrix only up to rounding
        return self.g * (self.mass @ v) + self.sigma * (self.stiffness @ v)

    def form(self, u, v) -> float:
        return float(u @ self.apply_energy(v))

    def inner0(self, u, v) -> float:
        return float(u @ (self.mass @ v))

    def integral(self, u) -> float:
        return float(np.sum(self.mass @ u))


def _p1_matrices(x, weight):
    m = len(x) - 1
    h = np.diff(x)
    i = np.arange(m)
    rows = np.concatenate([i, i, i + 1, i + 1])
    cols = np.concatenate([i, i + 1, i, i + 1])
    kloc = weight / h
    kvals = np.concatenate([kloc, -kloc, -kloc, kloc])
    mvals = np.concatenate([h / 3, h / 6, h / 6, h / 3])
    K = sp.coo_matrix((kvals, (rows, cols)), shape=(m + 1, m + 1)).tocsr()
    M = sp.coo_matrix((mvals, (rows, cols)), shape=(m + 1, m + 1)).tocsr()
    return M, K


def assemble(profile: EquilibriumProfile, params: PhysicalParams, m: int) -> GravityCapillaryOperator:
    if m < 32:
        raise GridTooCoarse(f"m = {m} < 32")
    ell = params.ell
    x = np.linspace(-ell, ell, m + 1)
    mid = 0.5 * (x[1:] + x[:-1])
    half = 0.5 * np.diff(x)
    # element averages of z by 3-point Gauss, so the form is exact on linear elements
    nodes, wts = np.polynomial.legendre.leggauss(3)
    # (averaging z - 1 keeps a flat surface's weight exactly one)
    weight = 1.0 + sum(0.5 * wq * ((1.0 + profile.slope(mid + xq * half) ** 2) ** -1.5 - 1.0)
                       for xq, wq in zip(nodes, wts))
    M, K = _p1_matrices(x, weight)
    return GravityCapillaryOperator(x, weight, params.g, params.sigma, M, K)


@dataclass(frozen=True)
class EigenBasis:
    lam: np.ndarray
    w: np.ndarray               # columns are eigenvectors
    op: GravityCapillaryOperator

    @property
    def j_max(self) -> int:
        return len(self.lam) - 1

    def orthonormality_error(self) -> float:
        G = self.w.T @ (self.op.mass @ self.w)
        return float(np.max(np.abs(G - np.eye(len(self.lam)))))

    def energy_orthogonality_error(self) -> float:
        G = self.w.T @ self.op.apply_energy(self.w)
        return float(np.max(np.abs(G - np.diag(self.lam))))


def _ritz(op, V):
    a = V.T @ op.apply_energy(V)
    b = V.T @ (op.mass @ V)
    return sla.eigh(0.5 * (a + a.T), 0.5 * (b + b.T))


def eigendecompose(op: GravityCapillaryOperator, j_max: int, refine_steps: int = 2) -> EigenBasis:
    """Lowest ``j_max+1`` eigenpairs, mass-orthonormal.

    A dense generalized solve gives the starting block; a few steps of inverse
    subspace iteration with Rayleigh-Ritz then remove the eigenvalue error that
    scales with the largest stiffness entry.
    """
    if not 0 <= j_max < op.m / 4:
        raise ResolutionGuard(f"j_max = {j_max} must be below m/4 = {op.m / 4}")
    try:
        lam, w = sla.eigh(op.energy.toarray(), op.mass.toarray(), subset_by_index=[0, j_max])
        lu = spla.splu(op.energy.tocsc())
        for _ in range(refine_steps):
            V = lu.solve(op.mass @ w)
            lam, y = _ritz(op, V)
            w = V @ y
    except (sla.LinAlgError, ValueError, RuntimeError) as exc:
        raise SolverFailure(str(exc)) from exc
    if not np.all(np.isfinite(lam)):
        raise SolverFailure("non-finite eigenvalues")
    # deterministic signs: positive integral, else positive leading entry
    for k in range(w.shape[1]):
        col = w[:, k]
        ref = np.sum(op.mass @ col)
        if abs(ref) < 1e-8:
            ref = col[np.argmax(np.abs(col) > 1e-8 * np.max(np.abs(col)))]
        if ref < 0:
            w[:, k] = -col
    return EigenBasis(lam, w, op)


def _check(u, basis):
    u = np.asarray(u, dtype=float)
    if u.shape[0] != basis.w.shape[0]:
        raise GridMismatch(f"function has {u.shape[0]} samples, basis has {basis.w.shape[0]}")
    return u


def analyze(u, basis: EigenBasis) -> np.ndarray:
    u = _check(u, basis)
    return basis.w.T @ (basis.op.mass @ u)


def synthesize(coeffs, basis: EigenBasis) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[0] != basis.w.shape[1]:
        raise GridMismatch("coefficient count differs from basis size")
    return basis.w @ coeffs


def sobolev_norm(coeffs, s: float, basis: EigenBasis) -> float:
    if not -2.0 <= s <= 4.0:
        raise ValueError("s must lie in [-2, 4]")
    c = np.asarray(coeffs, dtype=float)
    lam = basis.lam[: c.shape[0]]
    return float(np.sqrt(np.sum(lam ** s * c * c)))


def apply_Dsj(u, basis: EigenBasis, s: float, j: int) -> np.ndarray:
    """Finite fractional power: sum over k <= j of lam_k^(s/2) u_hat(k) w_k."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    if not 0 <= j <= basis.j_max:
        raise ValueError(f"j must lie in [0, {basis.j_max}]")
    c = analyze(u, basis)[: j + 1]
    return basis.w[:, : j + 1] @ (basis.lam[: j + 1] ** (0.5 * s) * c)


def apply_f_of_K(u, basis: EigenBasis, f) -> np.ndarray:
    c = analyze(u, basis)
    vals = np.asarray(f(basis.lam), dtype=float) * np.ones_like(basis.lam)
    if not np.all(np.isfinite(vals)):
        raise ValueError("symbol is not finite on the retained spectrum")
    return basis.w @ (vals * c)


def spectrum_csv(basis: EigenBasis, path) -> None:
    k = np.arange(len(basis.lam))
    with open(path, "w") as fh:
        fh.write("k,lambda\n")
        for kk, lam in zip(k, basis.lam):
            fh.write(f"{kk},{lam:.17g}\n")


def _mean_zero(u, op):
    return u - op.integral(u) / op.integral(np.ones_like(u))


def property_suite(basis: EigenBasis, rng: np.random.Generator, count: int = 50) -> dict:
    """Worst-case errors of the spectral identities over random band-limited functions.

    Functions are synthesized from random coefficients with a decaying
    envelope, so every identity below holds exactly up to rounding.
    """
    op = basis.op
    n = basis.j_max + 1
    env = 1.0 / (1.0 + np.arange(n)) ** 1.5
    out = {"parseval_s0": 0.0, "parseval_s1": 0.0, "dsj_symmetry": 0.0,
           "interpolation_excess": -np.inf, "mean_zero_drift": 0.0}
    j = max(1, basis.j_max // 2)
    for _ in range(count):
        cu = rng.standard_normal(n) * env
        cv = rng.standard_normal(n) * env
        u, v = synthesize(cu, basis), synthesize(cv, basis)
        scale0 = float(cu @ cu)
        out["parseval_s0"] = max(out["parseval_s0"], abs(op.inner0(u, u) - scale0) / scale0)
        e1 = float(np.sum(basis.lam * cu * cu))
        out["parseval_s1"] = max(out["parseval_s1"], abs(op.form(u, u) - e1) / e1)
        s = 2.0 * rng.uniform(0.0, 2.0)
        a = op.inner0(apply_Dsj(u, basis, s, j), v)
        b = op.inner0(u, apply_Dsj(v, basis, s, j))
        out["dsj_symmetry"] = max(out["dsj_symmetry"], abs(a - b) / max(1.0, abs(a)))
        s0, s1 = -1.0, 3.0
        theta = rng.uniform(0.0, 1.0)
        mid = (1 - theta) * s0 + theta * s1
        lhs = sobolev_norm(cu, mid, basis) ** 2
        rhs = sobolev_norm(cu, s0, basis) ** (2 * (1 - theta)) * sobolev_norm(cu, s1, basis) ** (2 * theta)
        out["interpolation_excess"] = max(out["interpolation_excess"], (lhs - rhs) / rhs)
        w = _mean_zero(u, op)
        fw = apply_f_of_K(w, basis, lambda lam: np.exp(-0.1 * lam))
        out["mean_zero_drift"] = max(out["mean_zero_drift"],
                                     abs(op.integral(fw)) / max(1.0, float(np.max(np.abs(w)))))
    return out


SUITE_TOLERANCES = {"parseval_s0": 1e-10, "parseval_s1": 1e-8, "dsj_symmetry": 1e-10,
                    "interpolation_excess": 1e-12, "mean_zero_drift": 1e-12}
