"""Classifier ground truths for forces and nonlinearities.

A constant force is normal; the spike train has unit mass on ever thinner
windows, so it is translation bounded but not normal.  Example I of the
reaction-diffusion catalogue converges pointwise to a function with a unit
jump, and Example II oscillates ever faster inside its plateau: both break
the uniform equicontinuity that translation compactness needs.

    python demos/classify_symbols.py
"""
import math

import numpy as np

from evosys import forcing, rds
from evosys.phase import SineBasis


def main():
    basis = SineBasis(1.0, 8)
    for name in ("constant", "spike_train"):
        c = forcing.classify_force(forcing.builtin_force(name, basis, amplitude=1.0),
                                   probe=forcing.ProbeGrid(horizon=30.0))
        print(f"{name:12s} translation bounded {c.translation_bounded}, normal {c.normal}")
        for delta, defect in c.normality.table[::6]:
            print(f"    delta {delta:.2e}  window defect {defect:.3f}")

    for name in ("example1", "example2"):
        tab = forcing.equicontinuity_modulus(rds.builtin_nonlinearity(name), R=4.0)
        print(f"{name}: theta(l) for l = {np.array2string(tab.l_grid[::3], precision=3)}")
        print(f"          {np.array2string(tab.theta[::3], precision=3)}  passes {tab.passes}")

    jump = forcing.pointwise_limit_probe(rds.builtin_nonlinearity("example1"), np.linspace(-1, 1, 2001), jump_tol=0.5)
    print("Example I limit jumps:", jump.jumps)
    div = forcing.pointwise_limit_probe(rds.builtin_nonlinearity("example2"), np.array([math.pi / 2]))
    print("Example II diverges at pi/2:", div.diverges_at(math.pi / 2))


if __name__ == "__main__":
    main()
