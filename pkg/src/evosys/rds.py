"""Scalar reaction-diffusion equation on an interval with Dirichlet conditions.

    u_t - a u_xx + f(u, t) = g(x, t)   on (0, ell),   u(0) = u(ell) = 0.

The state is the vector of orthonormal sine coefficients.  Diffusion is
integrated exactly by the factors ``exp(-a (m pi / ell)^2 dt)`` inside an
IF-RK4 step; ``f`` is collocated on the ``2M + 1`` interior points of a
uniform grid with ``2M + 2`` intervals and projected back with a type-I DST,
which is exact for products up to the grid's resolution.

Nonlinearities carry their declared structural constants: with ``T = max(0, t)``,

    dissipativity   f(v, t) v >= gamma |v|^p - Cdiss
    growth          |f(v, t)|^{p/(p-1)} <= Cgrow (|v|^p + 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import fft as sfft

from .expr import compile_expr
from .forcing import ProbeGrid, Symbol, translate_symbol, translation_bound_norm
from .nse2d import _cumint
from .phase import PhaseVector, SineBasis, check_same_basis
from .stepping import IFRK4, RK4_STABILITY_LIMIT, StepSizeError, march, step_count
from .systems import AbsorbingBall, Trajectory


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """``f(v, t)`` with declared exponent and structural constants."""

    eval: Callable
    p: float
    gamma: float
    Cdiss: float
    Cgrow: float
    tag: str = "user"

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("growth exponent p must be >= 2")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    def __call__(self, v, t):
        v = np.asarray(v, dtype=float)
        return np.broadcast_to(np.asarray(self.eval(v, t), dtype=float), v.shape)


def _T(t):
    return np.maximum(0.0, t)


def smooth_step(s):
    """C-infinity step: 0 for ``s <= 0``, 1 for ``s >= 1``, ``e^{-1/s}`` blend between."""
    s = np.asarray(s, dtype=float)
    a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def rho_example2(v):
    """Plateau bump: 1 on ``[-pi, pi]``, support ``(-2 pi, 2 pi)``."""
    return smooth_step((2 * np.pi - np.abs(v)) / np.pi)


def rho_example3(v, t):
    """1 on ``|v| < 2 - 1/(1+T)``, supported in ``|v| < 2 - 1/(2(1+T))``."""
    T = _T(t)
    h1 = 2.0 - 1.0 / (1.0 + T)
    h0 = 2.0 - 0.5 / (1.0 + T)
    return smooth_step((h0 - np.abs(v)) / (h0 - h1))


def _example1(p):
    def f(v, t):
        w = 1.0 / (1.0 + _T(t))
        left = np.abs(v) ** (p - 2) * v
        mid = -v / w
        right = np.abs(v - w) ** (p - 1) - 1.0
        return np.where(v <= 0, left, np.where(v <= w, mid, right))

    return f


def _example2(p):
    tp = 2 * np.pi

    def f(v, t):
        T = _T(t)
        left = np.abs(v + tp) ** (p - 2) * (v + tp)
        mid = rho_example2(v) * np.sin((1.0 + T) * v)
        right = np.abs(v - tp) ** (p - 1)
        return np.where(v <= -tp, left, np.where(v < tp, mid, right))

    return f


def _example3(p):
    def f(v, t):
        T = _T(t)
        left = np.abs(v + 2) ** (p - 2) * (v + 2)
        mid = rho_example3(v, t) * np.sin(T**2)
        right = np.abs(v - 2) ** (p - 1)
        return np.where(v <= -2, left, np.where(v < 2, mid, right))

    return f


NONLINEARITIES = ("example1", "example2", "example3", "cubic", "linear")


def builtin_nonlinearity(name: str, p: float | None = None, lam: float = 0.0) -> Nonlinearity:
    """Built-in interaction functions with valid structural constants.

    ``example1..3`` follow the piecewise definitions with ``T = max(0, t)``
    (default ``p = 2``); ``cubic`` is ``v^3 - lam v`` (``p = 4``);
    ``linear`` is ``v`` (``p = 2``).
    """
    if name in ("example1", "example2", "example3"):
        p = 2.0 if p is None else float(p)
        if p < 2:
            raise ValueError("p must be >= 2")
        gamma = 2.0**-p
        if name == "example1":
            C = max(3.0, (1 - 1 / p) * (2**p / p) ** (1 / (p - 1)))
            return Nonlinearity(_example1(p), p, gamma, C, 2.0, name)
        if name == "example2":
            return Nonlinearity(_example2(p), p, gamma, 2 ** (p - 1) * np.pi**p + 2 * np.pi, 1.0, name)
        return Nonlinearity(_example3(p), p, gamma, 2 ** (2 * p - 1) + 2.0, 1.0, name)
    if name == "cubic":
        if p not in (None, 4, 4.0):
            raise ValueError("cubic nonlinearity has p = 4")
        lam = float(lam)
        gamma, C = (1.0, 0.0) if lam <= 0 else (0.5, lam**2 / 2)
        cg = 2 ** (1 / 3) * (1 + abs(lam) ** (4 / 3))
        return Nonlinearity(lambda v, t: v**3 - lam * v, 4.0, gamma, C, cg, "cubic" if lam == 0 else f"cubic:lam={lam!r}")
    if name == "linear":
        if p not in (None, 2, 2.0):
            raise ValueError("linear nonlinearity has p = 2")
        return Nonlinearity(lambda v, t: v, 2.0, 1.0, 0.0, 1.0, "linear")
    raise ValueError(f"unknown nonlinearity {name!r}; choose from {NONLINEARITIES}")


def nonlinearity_from_expr(src: str, p: float, gamma: float, Cdiss: float, Cgrow: float,
                           tag: str = "user") -> Nonlinearity:
    """User nonlinearity from the manifest expression grammar (variables v, t, T)."""
    e = compile_expr(src, ("v", "t"))
    return Nonlinearity(lambda v, t: e(v=v, t=t), p, gamma, Cdiss, Cgrow, tag)


@dataclass
class ValidationReport:
    dissipativity_margin: float
    dissipativity_worst: tuple
    growth_margin: float
    growth_worst: tuple
    max_adjacent_jump: float
    passes: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def validate_nonlinearity(f: Nonlinearity, v_grid, t_grid, rtol: float = 1e-12) -> ValidationReport:
    """Worst-case margins of the dissipativity and growth inequalities on a grid.

    Margins are ``min(f v - gamma |v|^p + Cdiss)`` and
    ``min(Cgrow (|v|^p + 1) - |f|^{p/(p-1)})``; the constants pass when
    both are nonnegative (up to ``rtol`` relative round-off).
    """
    v = np.asarray(v_grid, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    if v.size == 0 or t.size == 0:
        raise ValueError("empty grid")
    V, Tm = np.meshgrid(v, t, indexing="ij")
    F = f(V, Tm)
    vp = np.abs(V) ** f.p
    dis = F * V - f.gamma * vp + f.Cdiss
    gro = f.Cgrow * (vp + 1) - np.abs(F) ** (f.p / (f.p - 1))
    i = np.unravel_index(np.argmin(dis), dis.shape)
    j = np.unravel_index(np.argmin(gro), gro.shape)
    scale_d = rtol * (np.abs(F * V) + f.gamma * vp + f.Cdiss + 1)
    scale_g = rtol * (f.Cgrow * (vp + 1) + 1)
    ok = bool(np.all(dis >= -scale_d) and np.all(gro >= -scale_g))
    jump = float(np.abs(np.diff(F, axis=0)).max()) if v.size > 1 else 0.0
    return ValidationReport(float(dis[i]), (float(V[i]), float(Tm[i])), float(gro[j]),
                            (float(V[j]), float(Tm[j])), jump, ok)


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RdsParams:
    """Domain length ``ell``, diffusion ``a``, sine modes ``M``, step ``dt``.

    ``p, gamma, Cdiss, Cgrow`` override the nonlinearity's declared constants
    when given.  Stability: diffusion is exact; the explicit reaction term
    needs ``dt * max|d f / d v| <= 2.78`` over the range of the data
    (checked at the start of every run).
    """

    ell: float = 1.0
    a: float = 1.0
    M: int = 64
    dt: float = 1e-3
    p: float | None = None
    gamma: float | None = None
    Cdiss: float | None = None
    Cgrow: float | None = None

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("diffusion a must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.p is not None and self.p < 2:
            raise ValueError("p must be >= 2")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def basis(self) -> SineBasis:
        return SineBasis(float(self.ell), int(self.M))

    @property
    def n_interior(self) -> int:
        return 2 * self.M + 1


class RdsOperator:
    """Sine-coefficient / interior-grid transforms (orthonormal DST-I)."""

    def __init__(self, params: RdsParams):
        self.params = params
        self.basis = params.basis
        M, N, ell = params.M, params.n_interior, params.ell
        self.M, self.N = M, N
        self.x = ell * np.arange(1, N + 1) / (N + 1)
        self._to_grid = math.sqrt((N + 1) / ell)
        self._from_grid = math.sqrt(ell / (N + 1))
        self.lam = self.basis.eigenvalues

    def to_grid(self, c: np.ndarray) -> np.ndarray:
        pad = np.zeros(c.shape[:-1] + (self.N,))
        pad[..., : self.M] = c
        return sfft.dst(pad, type=1, norm="ortho", axis=-1) * self._to_grid

    def from_grid(self, u: np.ndarray) -> np.ndarray:
        return sfft.dst(u, type=1, norm="ortho", axis=-1)[..., : self.M] * self._from_grid


def _lipschitz(f: Callable, vmax: float, t: float) -> float:
    v = np.linspace(-vmax, vmax, 4001)
    fv = f(v, t)
    return float(np.max(np.abs(np.diff(fv)) / (v[1] - v[0])))


def _constants(params: RdsParams, f: Nonlinearity | None) -> dict:
    out = {}
    for k in ("p", "gamma", "Cdiss", "Cgrow"):
        val = getattr(params, k)
        if val is None and f is not None:
            val = getattr(f, k, None)
        out[k] = val
    return out


def default_guard(params: RdsParams, u0: PhaseVector, sigma: Symbol, t_span) -> float:
    G = 0.0
    if sigma is not None and sigma.force is not None:
        H = max(1.0, float(t_span[1] - t_span[0]))
        G = translation_bound_norm(translate_symbol(sigma, t_span[0]), ProbeGrid(horizon=H, step=0.25))
    nl = None if sigma is None else sigma.nonlinearity
    R = 0.0
    if _constants(params, nl)["Cdiss"] is not None:
        R = absorbing_radius_rds(params, G, nl).R
    return 1e3 * max(R, u0.norm(), 1.0)


def integrate(params: RdsParams, u0: PhaseVector, sigma: Symbol | None, t_span, sample_every: int = 1,
              guard_radius: float | None = None, run_id: str = "") -> Trajectory:
    """Integrate ``u_t - a u_xx + f(u, t) = g`` over ``t_span`` (IF-RK4, collocated f)."""
    basis = params.basis
    check_same_basis(u0, basis)
    t0, t1 = float(t_span[0]), float(t_span[1])
    n = step_count(t0, t1, params.dt, sample_every)
    op = RdsOperator(params)
    sigma = sigma if sigma is not None else Symbol(None, None, id="zero")
    c0 = np.array(u0.coeffs, dtype=float)
    f = sigma.nonlinearity
    if f is not None:
        vmax = 1.5 * float(np.max(np.abs(op.to_grid(c0)))) + 1.0
        lip = max(_lipschitz(sigma.f, vmax, t0), _lipschitz(sigma.f, vmax, t1))
        if params.dt * lip > RK4_STABILITY_LIMIT:
            raise StepSizeError(
                f"dt = {params.dt} too large for the reaction term: dt * Lip(f) = {params.dt * lip:.3g} > {RK4_STABILITY_LIMIT}"
            )
    force = sigma.force
    if force is not None:
        check_same_basis(force.basis, basis)
        prof = np.asarray(force.profiles, dtype=float)
        shift = sigma.shift

        def gfun(t):
            return force.amplitudes(t + shift) @ prof
    else:
        gfun = None

    def rhs(c, t):
        out = np.zeros_like(c) if gfun is None else gfun(t)
        if f is not None:
            ug = op.to_grid(c)
            fv = sigma.f(ug, t)
            if not np.all(np.isfinite(fv)):
                raise FloatingPointError(f"nonlinearity returned non-finite values at t = {t}")
            out = out - op.from_grid(fv)
        return out

    guard = default_guard(params, u0, sigma, (t0, t1)) if guard_radius is None else guard_radius
    stepper = IFRK4(params.a * op.lam, params.dt)
    try:
        stack = march(stepper, c0, t0, n, rhs, sample_every, guard, u0)
    except Exception as exc:
        if hasattr(exc, "run_id"):
            exc.run_id = run_id
        raise
    meta = {"solver": "rds", "a": params.a, "step": params.dt, "sample_every": sample_every}
    return Trajectory(basis, t0, params.dt * sample_every, stack, sigma.id, run_id, meta)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass
class EnergyIdentityReport:
    """Residual of ``|u|^2/2 + int (a |u_x|^2 + (f(u), u) - <g, u>) = const``."""

    max_residual: float
    residual: np.ndarray
    times: np.ndarray
    scale: float

    def as_dict(self) -> dict:
        return {"max_residual": self.max_residual, "scale": self.scale}


def energy_identity_check(u: Trajectory, sigma: Symbol | None, params: RdsParams) -> EnergyIdentityReport:
    """Energy identity along a stored run, integrals by cumulative Simpson.

    ``(f(u), u)`` uses the same collocation as the solver, so for the
    semi-discrete system the identity is exact and the residual measures
    time-stepping plus quadrature error.
    """
    check_same_basis(u, params.basis)
    op = RdsOperator(params)
    c = u.coeffs
    E = 0.5 * np.sum(c**2, axis=1)
    D = params.a * np.sum(op.lam * c**2, axis=1)
    Q = np.zeros_like(E)
    P = np.zeros_like(E)
    if sigma is not None:
        if sigma.nonlinearity is not None:
            for i, t in enumerate(u.times):
                Q[i] = c[i] @ op.from_grid(sigma.f(op.to_grid(c[i]), t))
        if sigma.force is not None:
            a = sigma.force.amplitudes(u.times + sigma.shift)
            P = np.sum(a * (c @ np.asarray(sigma.force.profiles, dtype=float).T), axis=1)
    F = E + _cumint(D + Q - P, u.dt)
    res = F - F[0]
    scale = float(max(E.max(), np.finfo(float).tiny))
    return EnergyIdentityReport(float(np.abs(res).max()), res, u.times, scale)


def absorbing_radius_rds(params: RdsParams, g_bound: float, nonlinearity: Nonlinearity | None = None,
                         margin: float = 2.0) -> AbsorbingBall:
    """Absorbing ball from the energy identity and dissipativity.

    ``d/dt |u|^2 + a lambda_1 |u|^2 <= 2 Cdiss |Omega| + ||g||_{V'}^2 / a``, so
    ``|u(t)|^2 <= |u0|^2 e^{-alpha t} + 2 Cdiss ell / alpha + (G / a) / (1 - e^{-alpha})``
    with ``alpha = a lambda_1``, ``lambda_1 = (pi / ell)^2`` and ``G`` the
    unit-window bound of the force.
    """
    if g_bound < 0:
        raise ValueError("g_bound must be nonnegative")
    if margin <= 1:
        raise ValueError("margin must exceed 1")
    C = _constants(params, nonlinearity)["Cdiss"]
    C = 0.0 if C is None else float(C)
    alpha = params.a * params.basis.lambda1
    R_inf2 = 2 * C * params.ell / alpha + (g_bound / params.a) / (1 - math.exp(-alpha))
    return AbsorbingBall(math.sqrt(margin * R_inf2), math.sqrt(R_inf2), alpha, margin,
                         "R_inf^2 = 2 Cdiss ell / (a lambda_1) + (G / a) / (1 - exp(-a lambda_1))")


# ---------------------------------------------------------------------------
# Convenience constructors
# ---------------------------------------------------------------------------


def sine_mode(basis: SineBasis, m: int = 1, amplitude: float = 1.0) -> PhaseVector:
    c = np.zeros(basis.shape)
    c[m - 1] = amplitude
    return PhaseVector(basis, c)


def random_state(basis: SineBasis, rng: np.random.Generator, radius: float, decay: float = 1.0) -> PhaseVector:
    """Random coefficients ``~ N(0, 1) / m^decay`` scaled to ``|u| = radius``."""
    c = rng.standard_normal(basis.M) / basis.modes**decay
    return PhaseVector(basis, c * (radius / np.linalg.norm(c)))
