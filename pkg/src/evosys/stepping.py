"""Integrating-factor Runge-Kutta 4 stepper shared by the spectral solvers.

For a diagonal semilinear system ``du/dt = -Lambda u + N(u, t)`` the
substitution ``v = exp(Lambda t) u`` removes the stiff linear part, and the
classical RK4 tableau is applied to ``v``.  Written back in ``u`` this gives
the familiar IF-RK4 update with the factors ``E = exp(-Lambda h)`` and
``E2 = exp(-Lambda h / 2)``.  The linear part is integrated exactly, so pure
Stokes/heat decay is reproduced to round-off.
"""

from __future__ import annotations

import numpy as np

# The RK4 stability region reaches about 2.78 on the imaginary axis and
# 2.78 on the negative real axis; explicit terms must satisfy h*|rate| below it.
RK4_STABILITY_LIMIT = 2.78


class SolverInstabilityError(RuntimeError):
    """A run left the admissible region (non-finite or beyond the guard radius)."""

    def __init__(self, message: str, t: float | None = None, u0=None, run_id: str | None = None):
        super().__init__(message)
        self.t = t
        self.u0 = u0
        self.run_id = run_id


class StepSizeError(ValueError):
    """The requested step violates the documented stability bound."""


class IFRK4:
    """IF-RK4 for ``du/dt = -rates * u + N(u, t)`` with fixed step ``h``."""

    def __init__(self, rates: np.ndarray, h: float):
        if not h > 0:
            raise StepSizeError("time step must be positive")
        self.h = float(h)
        rates = np.asarray(rates, dtype=float)
        self.E = np.exp(-rates * self.h)
        self.E2 = np.exp(-rates * self.h / 2)

    def step(self, u: np.ndarray, t: float, N) -> np.ndarray:
        h, E, E2 = self.h, self.E, self.E2
        a = N(u, t)
        b = N(E2 * (u + 0.5 * h * a), t + 0.5 * h)
        c = N(E2 * u + 0.5 * h * b, t + 0.5 * h)
        d = N(E * u + h * E2 * c, t + h)
        return E * u + (h / 6.0) * (E * a + 2.0 * E2 * (b + c) + d)


def step_count(t0: float, t1: float, dt: float, sample_every: int = 1) -> int:
    """Number of steps of size ``dt`` spanning ``[t0, t1]`` (must be whole)."""
    if t1 < t0:
        raise ValueError("t_span must satisfy t0 <= t1")
    n = (t1 - t0) / dt
    k = int(round(n))
    if abs(n - k) > 1e-6 * max(1.0, n):
        raise ValueError(f"t_span length {t1 - t0} is not a multiple of dt = {dt}")
    if sample_every < 1 or k % sample_every:
        raise ValueError(f"{k} steps cannot be sampled every {sample_every} steps")
    return k


def march(stepper: IFRK4, u0: np.ndarray, t0: float, n_steps: int, N, sample_every: int = 1,
          guard: float = np.inf, u0_vector=None) -> np.ndarray:
    """Advance ``n_steps`` steps and return the stacked samples (first = ``u0``).

    Times are ``t0 + n h`` (never accumulated).  After every sample the
    state is checked for non-finite entries and for ``|u| > guard``.
    """
    h = stepper.h
    out = np.empty((n_steps // sample_every + 1,) + u0.shape, dtype=u0.dtype)
    u = np.array(u0, copy=True)
    out[0] = u
    for n in range(n_steps):
        u = stepper.step(u, t0 + n * h, N)
        if (n + 1) % sample_every == 0:
            t = t0 + (n + 1) * h
            nrm = float(np.linalg.norm(u))
            if not np.isfinite(nrm) or nrm > guard:
                raise SolverInstabilityError(
                    f"run diverged at t = {t:.6g} (|u| = {nrm:.3e}, guard {guard:.3e})", t=t, u0=u0_vector
                )
            out[(n + 1) // sample_every] = u
    return out
