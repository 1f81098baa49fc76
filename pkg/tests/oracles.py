"""Independent reference computations used only by the test-suite."""

import warnings

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import bisect


def shooting_profile(g, sigma, jump, ell, M_top, x_eval):
    """Integrate the meniscus ODE from the left wall, bisecting on the wall height.

    State is (height, sin of inclination, running mass).
    """
    P0 = (g * M_top - 2.0 * jump) / (2.0 * ell)

    def rhs(x, y):
        z, F, m = y
        return [F / np.sqrt(1.0 - F * F), (g * z - P0) / sigma, z]

    def run(z_left, dense=False):
        return solve_ivp(rhs, (-ell, ell), [z_left, -jump / sigma, 0.0], method="DOP853",
                         rtol=1e-13, atol=1e-14, dense_output=dense)

    def mass_gap(z_left):
        return run(z_left).y[2, -1] - M_top

    guess = M_top / (2.0 * ell)
    lo, hi = 0.5 * guess, 1.5 * guess
    while mass_gap(lo) > 0:
        lo *= 0.5
    while mass_gap(hi) < 0:
        hi *= 1.5
    z_left = bisect(mass_gap, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=200)
    sol = run(z_left, dense=True)
    return sol.sol(x_eval)[0]


def remainder_integral(y, z):
    """Taylor remainder of s -> (y+s)/sqrt(1+(y+s)^2) in integral form."""
    f = lambda s: 3.0 * (s - z) * (s + y) / (1.0 + (y + s) ** 2) ** 2.5
    with warnings.catch_warnings():
        # tiny steps trip the round-off detector long after the answer is exact
        warnings.simplefilter("ignore")
        val, _ = quad(f, 0.0, z, epsabs=1e-15, epsrel=1e-14, limit=200)
    return val
