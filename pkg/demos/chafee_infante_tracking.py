"""Finite tracking for the Chafee-Infante equation u_t = u_xx + 2.5 u - u^3 on (0, pi).

The attractor consists of 0, the two stable states +-u_s and the heteroclinic
orbits from 0 to them.  Long runs are cut into unit-length pieces, a greedy
net at epsilon = 0.1 diam is built, and fresh trajectories are matched
window by window against the net.

    python demos/chafee_infante_tracking.py
"""
import math

import numpy as np

from evosys import attractor, rds
from evosys.forcing import Symbol
from evosys.phase import SetSample
from evosys.systems import SystemHandle


def main(seed=7):
    params = rds.RdsParams(ell=math.pi, M=32, dt=0.01)
    sys = SystemHandle("rds", params, Symbol(None, rds.builtin_nonlinearity("cubic", lam=2.5), id="ci"),
                       sample_every=5)
    ball = sys.absorbing_ball(0.0)
    print(f"absorbing radius R = {ball.R:.3f}, entry time from 10R = {ball.entry_time(10 * ball.R):.2f}")

    rng = np.random.default_rng(seed)
    b = params.basis
    init = [sys.random_initial(rng, 5.0) for _ in range(2)]
    init += [rds.sine_mode(b, 1, s * 1e-6) for s in (1.0, -1.0)]  # leave 0 along the unstable mode
    lib = attractor.harvest_pieces(sys, SetSample.from_vectors(init), 6.0, 1.0, 0.25, 60.0)
    diam = attractor.library_diameter(lib)
    net = attractor.build_tracking_net(lib, 0.1 * diam)
    print(f"{len(lib)} pieces, diameter {diam:.3f}; net of {len(net)} members at epsilon {net.epsilon:.3f}")

    tests = [sys.integrate(sys.random_initial(rng, 5.0), (0.0, 14.0), run_id=f"fresh{i}") for i in range(3)]
    rep = attractor.verify_tracking(net, tests, t0=6.0)
    for t in rep.tests:
        print(f"  {t['run_id']}: worst window distance {t['worst_distance']:.4f} at t = {t['worst_start']:.2f}")
    print("tracking", "PASS" if rep.passed else "FAIL")

    sch = attractor.tracking_schedule(net, tests[0], j0=6)
    print("schedule (0-based net indices per unit window):", sch.indices.tolist())


if __name__ == "__main__":
    main()
