"""evosys: numerical laboratory for attractors of evolutionary systems.

Spectral solvers for the 2D Navier-Stokes equations and a 1D
reaction-diffusion equation, force and nonlinearity classifiers, and
finite tracking nets built from post-transient trajectory pieces.
"""

from .attractor import (
    PieceLibrary,
    TrackingNet,
    build_tracking_net,
    equicontinuity_modulus,
    harvest_pieces,
    invariance_check,
    multiscale_schedule,
    section_check,
    tracking_schedule,
    translate_covering,
    verify_tracking,
)
from .forcing import Symbol, builtin_force, classify_force, is_normal
from .phase import (
    STRONG,
    WEAK,
    FourierBasis2D,
    MetricSpec,
    PhaseVector,
    SetSample,
    SineBasis,
    hausdorff,
    strong_dist,
    weak_dist,
)
from .systems import SystemHandle, Trajectory, omega_limit_sample, reach_sample, translate

__version__ = "0.1.0"
