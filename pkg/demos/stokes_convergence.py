"""Steady Stokes flow with Navier slip: convergence on a manufactured solution.

The velocity comes from a stream function, so it is exactly divergence free;
forcing, wall friction data and surface traction are derived symbolically.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
import manufactured as mf  # noqa: E402

from capillary_vessel.core_params import make_params  # noqa: E402
from capillary_vessel.dynamics import Dynamics  # noqa: E402
from capillary_vessel.equilibrium import solve_equilibrium  # noqa: E402

for mu, beta in ((1.0, 1.0), (0.5, 4.0)):
    p = make_params(mu=mu, beta=beta)
    prof = solve_equilibrium(p, 2.0, n=256)
    F = mf.fields(mu, beta)
    print(f"mu = {mu}, beta = {beta}")
    prev = None
    for n in (16, 32, 64):
        err = mf.interior_errors(Dynamics(prof, p, n, n), F)
        line = "  ".join(f"{name} {e:.2e}" for name, e in zip(("u1", "u2", "p"), err))
        if prev:
            line += "   orders " + " ".join(f"{np.log2(a / b):.2f}" for a, b in zip(prev, err))
        print(f"  {n:3d}^2  {line}")
        prev = err
