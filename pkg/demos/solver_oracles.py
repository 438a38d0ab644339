"""Solver sanity: closed-form decay and the time-stepping order.

Shear flow (sin y, 0) is an exact NSE solution decaying like exp(-nu t);
a single sine mode of the heat equation decays like exp(-a (pi/ell)^2 t).
The RK4 order is read off a forced nonlinear run with Richardson ratios.

    python demos/solver_oracles.py
"""
import math

import numpy as np

from evosys import nse2d, rds
from evosys.forcing import builtin_force


def main():
    p = nse2d.NseParams(nu=0.5, K=16, dt=1e-3)
    u0 = nse2d.shear_mode(p.basis, 1.0)
    u = nse2d.integrate(p, u0, None, (0.0, 1.0), sample_every=100)
    print("NSE shear decay   t    |u|/|u0|     exp(-nu t)")
    for t, n in zip(u.times, u.norms() / u0.norm()):
        print(f"               {t:5.2f}  {n:.12f}  {math.exp(-p.nu * t):.12f}")

    q = rds.RdsParams(ell=1.0, a=1.0, M=64, dt=1e-3)
    v = rds.integrate(q, rds.sine_mode(q.basis, 1), None, (0.0, 1.0), sample_every=1000)
    print(f"heat mode at t=1: {v.coeffs[-1, 0]:.14e} vs {math.exp(-math.pi**2):.14e}")

    g = builtin_force("quasiperiodic", p.basis, amplitude=5.0)
    w0 = nse2d.random_state(p.basis, np.random.default_rng(0), 5.0)
    ends = [nse2d.integrate(nse2d.NseParams(K=16, dt=dt), w0, g, (0.0, 1.0), sample_every=round(1 / dt)).coeffs[-1]
            for dt in (0.02, 0.01, 0.005)]
    ratio = np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])
    print(f"Richardson order estimate: {math.log2(ratio):.3f}")


if __name__ == "__main__":
    main()
