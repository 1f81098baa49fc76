"""Capillary meniscus in a vessel: how wetting shapes the resting surface.

Solves for the equilibrium height over a range of wall wettabilities at fixed
fluid volume, and prints the contact height, the pressure constant and the
equilibrium contact angle for each.
"""

import numpy as np

from capillary_vessel.core_params import contact_angles, make_params
from capillary_vessel.equilibrium import solve_equilibrium

M_TOP = 2.0

print(f"{'jump':>6} {'theta_eq/deg':>13} {'zeta(-ell)':>11} {'zeta(0)':>9} {'P0':>8} {'newton its':>10}")
for jump in (-0.6, -0.3, 0.0, 0.3, 0.6):
    p = make_params(gamma_sv=jump)
    prof = solve_equilibrium(p, M_TOP, n=512)
    theta = np.degrees(contact_angles(p).theta_eq)
    print(f"{jump:6.2f} {theta:13.2f} {prof.zeta0[0]:11.6f} {prof.zeta0[256]:9.6f} {prof.P0:8.4f} {prof.iterations:10d}")

# a wetting wall lifts the contact line; the centre sags to keep the volume fixed
p = make_params(gamma_sv=0.3)
prof = solve_equilibrium(p, M_TOP, n=512)
print(f"\nvolume check: {prof.mass:.15f} (target {M_TOP})")
print(f"contact slope {prof.zeta0_prime[-1]:.6f}, Young slope {0.3 / np.sqrt(1 - 0.09):.6f}")
