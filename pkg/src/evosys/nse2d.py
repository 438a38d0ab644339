"""Pseudospectral solver for the 2D space-periodic Navier-Stokes equations.

Functional form: ``du/dt + nu A u + B(u, u) = g`` on divergence-free,
zero-mean fields in ``[0, L]^2``.  Coefficients are orthonormal Fourier
coefficients (see :class:`evosys.phase.FourierBasis2D`).

The advection term is evaluated in rotational form: ``u . grad u`` and
``omega x u = (-omega u_y, omega u_x)`` differ by a gradient, which the Leray
projector removes, so ``B(u, u) = P(omega x u)``.  Products are formed on a
padded grid of ``N >= 3K + 1`` points per direction, which makes the
retained modes of every quadratic product alias-free (the padded form of
the 2/3 rule).  Time stepping is integrating-factor RK4 with the exact
viscous factor ``exp(-nu |k|^2 dt)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy.integrate import cumulative_simpson

from .forcing import Force, ProbeGrid, Symbol, translate_symbol, translation_bound_norm
from .phase import FourierBasis2D, PhaseVector, check_same_basis
from .stepping import IFRK4, RK4_STABILITY_LIMIT, StepSizeError, march, step_count
from .systems import AbsorbingBall, Trajectory


@dataclass(frozen=True)
class NseParams:
    """Box side ``L``, viscosity ``nu``, truncation ``K``, step ``dt``.

    Stability: the viscous part is integrated exactly, so the only step
    restriction is the advective one, ``dt * k_max * max|u| <= 2.78``
    (RK4 imaginary-axis limit, with ``k_max = 2 pi K / L``).
    """

    L: float = 2 * math.pi
    nu: float = 1.0
    K: int = 16
    dt: float = 1e-3
    dealias: bool = True

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("viscosity nu must be positive")
        if self.K < 4:
            raise ValueError("truncation K must be >= 4")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.L > 0:
            raise ValueError("L must be positive")

    @property
    def basis(self) -> FourierBasis2D:
        return FourierBasis2D(float(self.L), int(self.K))

    @property
    def grid_size(self) -> int:
        if self.dealias:
            return sfft.next_fast_len(3 * self.K + 1, real=True)
        return 2 * self.K + 2

    @property
    def k_max(self) -> float:
        return 2 * math.pi * self.K / self.L


# ---------------------------------------------------------------------------
# Projection and nonlinear term
# ---------------------------------------------------------------------------


def _project(c: np.ndarray, k1: np.ndarray, k2: np.ndarray, ksq: np.ndarray) -> np.ndarray:
    inv = np.zeros_like(ksq)
    np.divide(1.0, ksq, out=inv, where=ksq > 0)
    return _project_inv(c, k1, k2, inv)


def _project_inv(c: np.ndarray, k1: np.ndarray, k2: np.ndarray, inv_ksq: np.ndarray) -> np.ndarray:
    """Leray projection with precomputed ``1/|k|^2`` (0 at the mean mode)."""
    c0, c1 = c[..., 0, :, :], c[..., 1, :, :]
    q = (k1 * c0 + k2 * c1) * inv_ksq
    out = np.empty_like(c)
    out[..., 0, :, :] = c0 - k1 * q
    out[..., 1, :, :] = c1 - k2 * q
    K = (c.shape[-1] - 1) // 2
    out[..., :, K, K] = 0.0
    return out


def leray_project(field, basis: FourierBasis2D | NseParams | None = None) -> PhaseVector:
    """Orthogonal projection onto divergence-free, zero-mean fields.

    ``field`` is a coefficient array (or a PhaseVector); each mode is
    projected onto the plane orthogonal to its wave vector.
    """
    if isinstance(field, PhaseVector):
        basis = field.basis
        field = field.coeffs
    if isinstance(basis, NseParams):
        basis = basis.basis
    if basis is None:
        K = (np.shape(field)[-1] - 1) // 2
        basis = FourierBasis2D(2 * math.pi, K)
    k1, k2 = basis.wavenumbers
    return PhaseVector(basis, _project(np.asarray(field, dtype=complex), k1, k2, k1**2 + k2**2))


class NseOperator:
    """Precomputed transforms for one ``(L, K, N)`` configuration."""

    def __init__(self, params: NseParams):
        self.params = params
        self.basis = params.basis
        K, N, L = params.K, params.grid_size, params.L
        self.K, self.N, self.L = K, N, L
        self.k1, self.k2 = self.basis.wavenumbers
        self.ksq = self.k1**2 + self.k2**2
        self.inv_ksq = np.zeros_like(self.ksq)
        np.divide(1.0, self.ksq, out=self.inv_ksq, where=self.ksq > 0)
        # flat scatter/gather positions of the retained half spectrum in the padded array
        half_cols = N // 2 + 1
        self._flat = (np.arange(-K, K + 1) % N)[:, None] * half_cols + np.arange(K + 1)[None, :]
        self._X = np.zeros((3, N * half_cols), dtype=complex)
        self.rows = np.arange(-K, K + 1) % N
        s = 2 * math.pi / L
        self.hk1 = s * np.arange(-K, K + 1)[:, None] * np.ones((1, K + 1))
        self.hk2 = s * np.ones((2 * K + 1, 1)) * np.arange(0, K + 1)[None, :]
        self._to_grid = N * N / L
        self._from_grid = L / (N * N)

    def _half(self, c: np.ndarray) -> np.ndarray:
        return c[..., :, self.K :]

    def _full(self, h: np.ndarray) -> np.ndarray:
        """Rebuild the centred array from its ``kappa_2 >= 0`` half (Hermitian)."""
        K = self.K
        out = np.empty(h.shape[:-1] + (2 * K + 1,), dtype=complex)
        out[..., K:] = h
        out[..., :K] = np.conj(h[..., ::-1, K:0:-1])
        col = out[..., K]
        out[..., K] = 0.5 * (col + np.conj(col[..., ::-1]))
        return out

    def grid_fields(self, c: np.ndarray) -> np.ndarray:
        """``(u_x, u_y, omega)`` on the padded ``N x N`` grid."""
        N, K = self.N, self.K
        h = c[..., :, K:] * self._to_grid
        X = self._X
        X[0, self._flat] = h[0]
        X[1, self._flat] = h[1]
        X[2, self._flat] = 1j * (self.hk1 * h[1] - self.hk2 * h[0])
        return sfft.irfft2(X.reshape(3, N, N // 2 + 1), s=(N, N), axes=(-2, -1))

    def advection(self, c: np.ndarray) -> np.ndarray:
        """``B(u, u) = P(omega x u)`` as a centred coefficient array."""
        ux, uy, om = self.grid_fields(c)
        n = np.empty((2,) + ux.shape)
        np.multiply(om, uy, out=n[0])
        np.negative(n[0], out=n[0])
        np.multiply(om, ux, out=n[1])
        Y = sfft.rfft2(n, axes=(-2, -1)).reshape(2, -1)
        h = Y[:, self._flat] * self._from_grid
        return _project_inv(self._full(h), self.k1, self.k2, self.inv_ksq)

    def max_velocity(self, c: np.ndarray) -> float:
        ux, uy, _ = self.grid_fields(c)
        return float(np.max(np.abs(ux)) + np.max(np.abs(uy)))


def nonlinear_term(u: PhaseVector, params: NseParams | None = None) -> np.ndarray:
    """Pseudospectral ``B(u, u) = P_sigma(u . grad u)`` for a divergence-free ``u``."""
    if params is None:
        params = NseParams(L=u.basis.L, K=u.basis.K)
    check_same_basis(u, params.basis)
    return NseOperator(params).advection(u.coeffs)


def bilinear_pairing(u: PhaseVector, v: PhaseVector) -> complex:
    """``(u, v) = sum conj(u_k) . v_k`` in the orthonormal basis."""
    check_same_basis(u, v)
    return complex(np.sum(np.conj(u.coeffs) * v.coeffs))


# ---------------------------------------------------------------------------
# Time integration
# ---------------------------------------------------------------------------


def _force_eval(sigma: Symbol | None, basis: FourierBasis2D, op: NseOperator):
    if sigma is None or sigma.force is None:
        return None
    check_same_basis(sigma.force.basis, basis)
    force = sigma.force
    prof = _project(np.asarray(force.profiles), op.k1, op.k2, op.ksq)
    shift = sigma.shift

    def g(t):
        a = force.amplitudes(t + shift)
        return np.tensordot(a, prof, axes=(0, 0))

    return g


def default_guard(params: NseParams, u0: PhaseVector, sigma: Symbol | None, t_span) -> float:
    """Divergence guard ``10^3 max(R, |u0|)`` with R from the probed force bound."""
    R = 0.0
    if sigma is not None and sigma.force is not None:
        H = max(1.0, float(t_span[1] - t_span[0]))
        G = translation_bound_norm(translate_symbol(sigma, t_span[0]), ProbeGrid(horizon=H, step=0.25))
        R = absorbing_radius(params, G).R
    return 1e3 * max(R, u0.norm(), 1e-12)


def integrate(params: NseParams, u0: PhaseVector, g: Symbol | None, t_span, sample_every: int = 1,
              guard_radius: float | None = None, run_id: str = "") -> Trajectory:
    """Integrate from ``u0`` over ``t_span = (t0, t1)`` with IF-RK4.

    Samples every ``sample_every`` steps are returned; the result is a pure
    function of the inputs.  ``dt`` violating the advective bound at ``u0``
    raises :class:`StepSizeError`; a run whose norm exceeds the guard radius
    raises :class:`SolverInstabilityError`.
    """
    basis = params.basis
    check_same_basis(u0, basis)
    t0, t1 = float(t_span[0]), float(t_span[1])
    n = step_count(t0, t1, params.dt, sample_every)
    op = NseOperator(params)
    c0 = np.array(u0.coeffs)
    cfl = params.dt * params.k_max * op.max_velocity(c0)
    if cfl > RK4_STABILITY_LIMIT:
        raise StepSizeError(f"dt = {params.dt} gives advective CFL {cfl:.3g} > {RK4_STABILITY_LIMIT}")
    gfun = _force_eval(g, basis, op)
    if gfun is None:
        def rhs(c, t):
            return -op.advection(c)
    else:
        def rhs(c, t):
            return gfun(t) - op.advection(c)
    guard = default_guard(params, u0, g, (t0, t1)) if guard_radius is None else guard_radius
    stepper = IFRK4(params.nu * op.ksq, params.dt)
    try:
        stack = march(stepper, c0, t0, n, rhs, sample_every, guard, u0)
    except Exception as exc:
        if hasattr(exc, "run_id"):
            exc.run_id = run_id
        raise
    sid = "zero" if g is None else g.id
    meta = {"solver": "nse2d", "nu": params.nu, "step": params.dt, "sample_every": sample_every}
    return Trajectory(basis, t0, params.dt * sample_every, stack, sid, run_id, meta)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass
class EnergyBudgetReport:
    """Residuals of ``|u(t)|^2 + 2 nu int ||u||^2 - 2 int (g, u)`` between grid times.

    ``max_violation`` is ``max_{t0 < t}`` of the positive part of
    ``F(t) - F(t0)`` (the energy inequality requires it to be <= 0);
    ``identity_residual`` is ``max_t |F(t) - F(t_start)|`` (zero for the
    exact Galerkin identity).
    """

    max_violation: float
    typical_residual: float
    identity_residual: float
    times: np.ndarray
    F: np.ndarray

    def as_dict(self) -> dict:
        return {"max_violation": self.max_violation, "typical_residual": self.typical_residual,
                "identity_residual": self.identity_residual}


def _cumint(y: np.ndarray, dx: float) -> np.ndarray:
    """Cumulative integral of samples by per-interval cubic interpolation.

    Interior intervals use the centred four-point rule
    ``(-y[i-1] + 13 y[i] + 13 y[i+1] - y[i+2]) dx / 24``; the end intervals
    use the one-sided four-point rules.  Every interval gets a fourth-order
    rule, unlike cumulative Simpson, whose odd points are lower order.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    out = np.zeros_like(y)
    if n < 4:
        if n >= 2:
            out[1:] = cumulative_simpson(y, dx=dx) if n == 3 else 0.5 * dx * (y[0] + y[1])
        return out
    seg = np.empty(n - 1)
    seg[1:-1] = (-y[:-3] + 13 * y[1:-2] + 13 * y[2:-1] - y[3:]) / 24
    seg[0] = (9 * y[0] + 19 * y[1] - 5 * y[2] + y[3]) / 24
    seg[-1] = (9 * y[-1] + 19 * y[-2] - 5 * y[-3] + y[-4]) / 24
    out[1:] = np.cumsum(seg) * dx
    return out


def budget_from_terms(E, D, P, dt, nu) -> EnergyBudgetReport:
    """Shared residual computation from sampled energy, dissipation and power."""
    F = E + 2 * nu * _cumint(D, dt) - 2 * _cumint(P, dt)
    run_min = np.minimum.accumulate(F)
    viol = F[1:] - run_min[:-1] if F.size > 1 else np.zeros(1)
    dev = np.abs(F - F[0])
    return EnergyBudgetReport(max(0.0, float(viol.max())), float(np.median(dev)), float(dev.max()),
                              np.arange(F.size) * dt, F)


def energy_budget(u: Trajectory, g: Symbol | None, params: NseParams | float) -> EnergyBudgetReport:
    """Check the energy inequality along a stored run (quadrature: cumulative Simpson)."""
    nu = params.nu if isinstance(params, NseParams) else float(params)
    basis = u.basis
    c = u.coeffs
    E = np.sum(np.abs(c) ** 2, axis=(1, 2, 3))
    D = np.sum(basis.eigenvalues * np.abs(c) ** 2, axis=(1, 2, 3))
    if g is None or g.force is None:
        P = np.zeros_like(E)
    else:
        k1, k2 = basis.wavenumbers
        prof = _project(np.asarray(g.force.profiles), k1, k2, k1**2 + k2**2)
        a = g.force.amplitudes(u.times + g.shift)
        inner = np.real(np.einsum("jcab,ncab->nj", np.conj(prof), c))
        P = np.sum(a * inner, axis=1)
    rep = budget_from_terms(E, D, P, u.dt, nu)
    rep.times = rep.times + u.t_start
    return rep


def absorbing_radius(params: NseParams, g_bound: float, margin: float = 2.0) -> AbsorbingBall:
    """Absorbing ball of the truncated system.

    From ``d/dt |u|^2 + nu ||u||^2 <= ||g||_{V'}^2 / nu`` and Poincaré
    (``||u||^2 >= lambda_1 |u|^2``, ``lambda_1 = (2 pi / L)^2``),
    ``|u(t)|^2 <= |u0|^2 e^{-alpha t} + G / (nu (1 - e^{-alpha}))`` with
    ``alpha = nu lambda_1`` and ``G = sup_t int_t^{t+1} ||g||_{V'}^2``
    (the unit-window sum of the Grönwall kernel).  The ball radius is
    ``R = sqrt(margin) R_inf``.
    """
    if g_bound < 0:
        raise ValueError("g_bound must be nonnegative")
    if margin <= 1:
        raise ValueError("margin must exceed 1")
    alpha = params.nu * params.basis.lambda1
    R_inf2 = g_bound / (params.nu * (1 - math.exp(-alpha)))
    return AbsorbingBall(math.sqrt(margin * R_inf2), math.sqrt(R_inf2), alpha, margin,
                         "R_inf^2 = G / (nu (1 - exp(-nu lambda_1)))")


# ---------------------------------------------------------------------------
# Convenience constructors
# ---------------------------------------------------------------------------


def shear_mode(basis: FourierBasis2D, amplitude: float = 1.0, k: int = 1) -> PhaseVector:
    """``u = amplitude (sin(2 pi k y / L), 0)``."""
    c = np.zeros(basis.shape, dtype=complex)
    K = basis.K
    c[0, K, K + k] = amplitude * basis.L / 2j
    c[0, K, K - k] = -amplitude * basis.L / 2j
    return PhaseVector(basis, c)


def random_state(basis: FourierBasis2D, rng: np.random.Generator, radius: float, k0: float = 3.0) -> PhaseVector:
    """Random divergence-free field with spectrum ``exp(-|kappa|^2 / k0^2)``, scaled to ``|u| = radius``."""
    k1, k2 = basis.kappa
    env = np.exp(-(k1**2 + k2**2) / k0**2)
    z = (rng.standard_normal(basis.shape) + 1j * rng.standard_normal(basis.shape)) * env
    z = 0.5 * (z + np.conj(z[:, ::-1, ::-1]))
    u = leray_project(z, basis).coeffs
    return PhaseVector(basis, u * (radius / np.linalg.norm(u)))


def steady_force(params: NseParams, u_star: PhaseVector, id: str = "steady") -> Symbol:
    """Constant force ``g = nu A u* + B(u*, u*)`` making ``u*`` a steady state."""
    op = NseOperator(params)
    g = params.nu * op.ksq * u_star.coeffs + op.advection(u_star.coeffs)
    force = Force(params.basis, [g], (lambda t: np.ones_like(np.asarray(t, dtype=float)),), id)
    return Symbol(force, None, id=id, truth=dict(translation_compact=True, normal=True, translation_bounded=True))
