"""Gravity-capillary modes of the resting surface.

Compares the flat-surface spectrum with its closed form, then shows how
a curved meniscus lowers every mode, and applies a smooth function of the
operator (a heat-type filter) to a rough signal.
"""

import numpy as np

from capillary_vessel.core_params import make_params
from capillary_vessel.equilibrium import solve_equilibrium
from capillary_vessel import spectral as spc

flat_p = make_params()
flat = spc.eigendecompose(spc.assemble(solve_equilibrium(flat_p, 2.0, n=1024), flat_p, 1024), 8)
curved_p = make_params(gamma_sv=0.4)
curved = spc.eigendecompose(
    spc.assemble(solve_equilibrium(curved_p, 2.0, n=1024), curved_p, 1024), 8)

print(f"{'k':>2} {'g+sigma(k pi/2)^2':>18} {'flat':>12} {'curved':>12}")
for k in range(9):
    exact = 1.0 + (k * np.pi / 2) ** 2
    print(f"{k:2d} {exact:18.6f} {flat.lam[k]:12.6f} {curved.lam[k]:12.6f}")

x = curved.op.x
rough = np.sign(np.sin(3 * np.pi * x)) + 0.3 * x
smooth = spc.apply_f_of_K(rough, curved, lambda lam: np.exp(-0.05 * lam))
c = spc.analyze(rough, curved)
print(f"\nH^1 norm of the projection {spc.sobolev_norm(c, 1.0, curved):.4f}, "
      f"after filtering {spc.sobolev_norm(spc.analyze(smooth, curved), 1.0, curved):.4f}")
print(f"mean preserved: {curved.op.integral(rough):+.3e} -> {curved.op.integral(smooth):+.3e}")
