"""Evolutionary-system plumbing: trajectories, translations, reach maps.

A :class:`Trajectory` is a uniformly sampled solution path stored as one
stacked coefficient array.  :class:`SystemHandle` binds a solver, its
discretisation parameters and a base symbol, and is what the reach-map,
omega-limit and attractor routines integrate.

Ensembles run one initial point per task.  With ``workers > 1`` the tasks are
distributed over forked processes; results are collected in input order, so
outputs do not depend on the worker count.
"""

from __future__ import annotations

import json
import math
import multiprocessing as mp
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .forcing import Symbol
from .io import read_coeff_stream, write_coeff_stream
from .stepping import StepSizeError
from .phase import (
    WEAK,
    Basis,
    MetricSpec,
    PhaseVector,
    SetSample,
    _stack_dist,
    check_same_basis,
)

KERNEL_PROXY_NOTE = (
    "empirical: complete trajectories are replaced by post-transient windows of long forward runs"
)

_GRID_TOL = 1e-9


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Samples ``coeffs[i]`` of a solution at times ``t_start + i * dt``."""

    basis: Basis
    t_start: float
    dt: float
    coeffs: np.ndarray
    symbol_id: str = ""
    run_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=self.basis.dtype)
        if c.ndim == len(self.basis.shape):
            c = c[None]
        if c.shape[1:] != self.basis.shape:
            raise ValueError("sample shape does not match the basis")
        if c.shape[0] == 0:
            raise ValueError("a trajectory needs at least one sample")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if c.flags.writeable:
            c = c.copy()
            c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def basis_id(self) -> str:
        return self.basis.basis_id

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    @property
    def t_end(self) -> float:
        return self.t_start + (len(self) - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t_start + np.arange(len(self)) * self.dt

    @property
    def samples(self) -> list[PhaseVector]:
        return [PhaseVector(self.basis, c) for c in self.coeffs]

    def at(self, i: int) -> PhaseVector:
        return PhaseVector(self.basis, self.coeffs[i])

    def norms(self) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(self.coeffs) ** 2, axis=tuple(range(1, self.coeffs.ndim))))

    def index_of(self, t: float) -> int:
        """Grid index of time ``t`` (must lie on the grid)."""
        x = (t - self.t_start) / self.dt
        i = int(round(x))
        if abs(x - i) > 1e-6 or i < 0 or i >= len(self):
            raise ValueError(f"time {t} is not a grid point of [{self.t_start}, {self.t_end}]")
        return i

    def window(self, a: float, b: float) -> "Trajectory":
        """Restriction to ``[a, b]`` (both ends on the grid)."""
        i, j = self.index_of(a), self.index_of(b)
        if j < i:
            raise ValueError("empty window")
        return Trajectory(self.basis, self.t_start + i * self.dt, self.dt, self.coeffs[i : j + 1],
                          self.symbol_id, self.run_id, dict(self.meta))


@dataclass(frozen=True, eq=False)
class TrajectoryPiece(Trajectory):
    """A window ``[t*, t* + T]`` of a run renormalised to start at 0."""

    source_run: str = ""
    offset: float = 0.0

    @property
    def T(self) -> float:
        return self.t_end

    @property
    def provenance(self) -> tuple[str, float]:
        return (self.source_run, self.offset)


def cut_piece(u: Trajectory, t_star: float, T: float) -> TrajectoryPiece:
    """The piece ``u|_[t*, t*+T]`` shifted to ``[0, T]``."""
    w = u.window(t_star, t_star + T)
    return TrajectoryPiece(u.basis, 0.0, u.dt, w.coeffs, u.symbol_id, u.run_id, {},
                           source_run=u.run_id, offset=float(t_star))


def translate(u: Trajectory, s: float) -> Trajectory:
    """``(T(s) u)(t) = u(t + s)`` on the same time origin: an exact index shift.

    The result keeps ``t_start``; its sample ``i`` is sample ``i + s/dt`` of
    ``u``.  Shifts compose by adding offsets, so ``T(s) T(r) = T(s + r)``
    holds bit-for-bit.
    """
    if s < 0:
        raise ValueError("translation amount must be nonnegative")
    k = s / u.dt
    ki = int(round(k))
    if abs(k - ki) > 1e-6:
        raise ValueError(f"shift {s} is not a multiple of dt = {u.dt}")
    if ki >= len(u):
        raise ValueError(f"shift {s} exceeds the trajectory length {u.t_end - u.t_start}")
    if ki == 0:
        return u
    meta = dict(u.meta)
    meta["shift"] = meta.get("shift", 0.0) + ki * u.dt
    base = u.symbol_id.split("@")[0]
    return Trajectory(u.basis, u.t_start, u.dt, u.coeffs[ki:], f"{base}@{meta['shift']!r}", u.run_id, meta)


def save_trajectory(directory, u: Trajectory, **manifest) -> Path:
    """Write a run directory: ``manifest.json`` plus ``coeffs.bin``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    desc = write_coeff_stream(d / "coeffs.bin", u.basis, u.coeffs)
    man = {
        "run_id": u.run_id,
        "symbol": u.symbol_id,
        "t_start": u.t_start,
        "dt": u.dt,
        "coeffs": desc,
    }
    man.update({k: v for k, v in u.meta.items() if isinstance(v, (int, float, str, bool, list))})
    man.update(manifest)
    (d / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True))
    return d


def load_trajectory(directory) -> Trajectory:
    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    basis, stack = read_coeff_stream(d / "coeffs.bin")
    return Trajectory(basis, man["t_start"], man["dt"], stack, man.get("symbol", ""), man.get("run_id", ""))


# ---------------------------------------------------------------------------
# Absorbing-ball bookkeeping shared by both solvers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AbsorbingBall:
    """Grönwall bound ``|u(t)|^2 <= |u0|^2 exp(-alpha t) + R_inf^2``.

    ``R`` is the absorbing radius (``R^2 = margin * R_inf^2``); the entry
    time of data of size ``r0`` into the ball of radius ``radius`` is the
    first time the bound drops below ``radius^2``.
    """

    R: float
    R_inf: float
    alpha: float
    margin: float
    derivation: str = ""

    def entry_time(self, r0: float, radius: float | None = None) -> float:
        rad = self.R if radius is None else float(radius)
        gap = rad**2 - self.R_inf**2
        if gap <= 0:
            return math.inf
        if r0 <= 0:
            return 0.0
        return max(0.0, math.log(r0**2 / gap) / self.alpha)

    def as_dict(self) -> dict:
        return {"R": self.R, "R_inf": self.R_inf, "alpha": self.alpha, "margin": self.margin,
                "derivation": self.derivation}


# ---------------------------------------------------------------------------
# System handle and ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SystemHandle:
    """Solver name (``"nse2d"`` or ``"rds"``), parameters and base symbol."""

    solver: str
    params: object
    symbol: Symbol
    sample_every: int = 1
    guard_radius: float | None = None
    refine: bool = True

    def __post_init__(self):
        if self.solver not in ("nse2d", "rds"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")

    @property
    def module(self):
        if self.solver == "nse2d":
            from . import nse2d

            return nse2d
        from . import rds

        return rds

    @property
    def basis(self) -> Basis:
        return self.params.basis

    @property
    def sample_dt(self) -> float:
        return self.params.dt * self.sample_every

    def integrate(self, u0: PhaseVector, t_span, sample_every: int | None = None, run_id: str = "") -> Trajectory:
        """Integrate on the sample grid ``t0 + k dt sample_every``.

        With ``refine`` set, data violating the step bound at ``dt`` are
        advanced one sample interval at a time with ``dt / 2^j`` (smallest
        ``j <= 10`` that passes, searched from one below the previous
        interval's ``j``) until ``dt`` itself is admissible.  The sample grid
        is the same either way.
        """
        se = self.sample_every if sample_every is None else sample_every
        mod, params = self.module, self.params
        if not self.refine:
            return mod.integrate(params, u0, self.symbol, t_span, sample_every=se,
                                 guard_radius=self.guard_radius, run_id=run_id)
        t0, t1 = float(t_span[0]), float(t_span[1])
        guard = self.guard_radius
        if guard is None:
            guard = mod.default_guard(params, u0, self.symbol, (t0, t1))
        h = params.dt * se
        total = int(round((t1 - t0) / h))
        parts, done, u, fine_until, j_prev = [], 0, u0, None, 1
        while True:
            t = t0 + done * h
            try:
                r = mod.integrate(params, u, self.symbol, (t, t1), sample_every=se, guard_radius=guard, run_id=run_id)
                parts.append(r.coeffs if not parts else r.coeffs[1:])
                break
            except StepSizeError:
                if done >= total:
                    raise
            for j in range(max(1, j_prev - 1), 11):
                m = 2**j
                try:
                    r = mod.integrate(replace(params, dt=params.dt / m), u, self.symbol, (t, t + h),
                                      sample_every=se * m, guard_radius=guard, run_id=run_id)
                    break
                except StepSizeError:
                    if j == 10:
                        raise
            j_prev = j
            parts.append(r.coeffs if not parts else r.coeffs[1:])
            done += 1
            fine_until = t0 + done * h
            u = PhaseVector(self.basis, r.coeffs[-1])
        meta = dict(r.meta)
        meta.update(step=params.dt, sample_every=se)
        if fine_until is not None:
            meta["refined_until"] = fine_until
        return Trajectory(self.basis, t0, h, np.concatenate(parts), r.symbol_id, run_id, meta)

    def absorbing_ball(self, g_bound: float) -> AbsorbingBall:
        if self.solver == "nse2d":
            return self.module.absorbing_radius(self.params, g_bound)
        return self.module.absorbing_radius_rds(self.params, g_bound, self.symbol.nonlinearity)

    def random_initial(self, rng: np.random.Generator, radius: float) -> PhaseVector:
        return self.module.random_state(self.basis, rng, radius)


_TASK: Callable | None = None


def _run_task(i):
    return _TASK(i)


def parallel_map(fn: Callable, n: int, workers: int | None = None) -> list:
    """``[fn(0), ..., fn(n-1)]``, optionally on forked worker processes."""
    global _TASK
    if not workers or workers <= 1 or n <= 1 or "fork" not in mp.get_all_start_methods():
        return [fn(i) for i in range(n)]
    _TASK = fn
    try:
        with mp.get_context("fork").Pool(min(workers, n)) as pool:
            return pool.map(_run_task, range(n))
    finally:
        _TASK = None


def _steps(sys: SystemHandle, t: float) -> int:
    k = t / sys.params.dt
    ki = int(round(k))
    if abs(k - ki) > 1e-6 * max(1.0, k):
        raise ValueError(f"time {t} is not a multiple of the step {sys.params.dt}")
    return ki


def integrate_ensemble(sys: SystemHandle, A: SetSample, t_span, sample_every: int | None = None,
                       workers: int | None = None, run_prefix: str = "run") -> list[Trajectory]:
    check_same_basis(sys.basis, A)

    def one(i):
        return sys.integrate(A[i], t_span, sample_every, run_id=f"{run_prefix}{i}")

    return parallel_map(one, len(A), workers)


def reach_sample(sys: SystemHandle, A: SetSample, t: float, workers: int | None = None) -> SetSample:
    """Finite image ``R(t) A``: every point of ``A`` integrated over ``[0, t]``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    check_same_basis(sys.basis, A)
    n = _steps(sys, t)
    if n == 0:
        return SetSample(A.basis, A.points.copy())
    runs = integrate_ensemble(sys, A, (0.0, t), sample_every=n, workers=workers, run_prefix="reach")
    return SetSample(A.basis, np.stack([r.coeffs[-1] for r in runs]))


def omega_limit_sample(sys: SystemHandle, A: SetSample, t_transient: float, t_horizon: float,
                       stride: float, workers: int | None = None) -> SetSample:
    """Snapshots ``R(t) a`` for ``t = t_transient + k stride <= t_horizon``, a in A.

    An outer finite stand-in for the omega-limit set; the nested-closure
    intersection is approximated by comparing samples for several transients.
    """
    if not t_horizon > t_transient >= 0:
        raise ValueError("need t_horizon > t_transient >= 0")
    check_same_basis(sys.basis, A)
    n0 = _steps(sys, t_transient)
    ns = _steps(sys, stride)
    if ns < 1:
        raise ValueError("stride must be at least one step")
    kmax = int(math.floor((t_horizon - t_transient) / stride + 1e-9))
    t_end = t_transient + kmax * stride

    def one(i):
        u0 = A[i]
        if n0:
            u0 = PhaseVector(A.basis, sys.integrate(u0, (0.0, t_transient), sample_every=n0).coeffs[-1])
        if kmax == 0:
            return u0.coeffs[None]
        r = sys.integrate(u0, (t_transient, t_end), sample_every=ns, run_id=f"omega{i}")
        return r.coeffs

    parts = parallel_map(one, len(A), workers)
    return SetSample(A.basis, np.concatenate(parts))


# ---------------------------------------------------------------------------
# Numeric proxies for the structural assumptions
# ---------------------------------------------------------------------------


@dataclass
class A2Report:
    eps: float
    delta: float
    worst_violation: float
    worst_time: float | None
    violations: int
    min_eps: float
    window_samples: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def check_A2_energy(u: Trajectory, eps: float, delta: float) -> A2Report:
    """Energy-inequality proxy: for each sample t, some grid t0 in [t - delta, t)
    with ``|u(t)| <= |u(t0)| + eps``.

    ``min_eps`` is the smallest ``eps`` that would give zero violations.
    """
    if delta < u.dt * (1 - 1e-9):
        raise ValueError("delta must be at least dt")
    k = int(math.floor(delta / u.dt + 1e-9))
    nr = u.norms()
    if len(nr) < 2:
        return A2Report(eps, delta, 0.0, None, 0, 0.0, k)
    # best earlier norm among the k predecessors (window truncated at the start)
    padded = np.concatenate((np.full(k - 1, -np.inf), nr[:-1]))
    best = sliding_window_view(padded, k).max(axis=1)  # max(nr[i-k .. i-1])
    excess = nr[1:] - best
    viol = excess - eps
    i = int(np.argmax(viol))
    worst = max(0.0, float(viol[i]))
    return A2Report(eps, delta, worst, float(u.times[i + 1]) if worst > 0 else None,
                    int(np.sum(viol > 0)), max(0.0, float(excess.max())), k)


def a2_epsilon_from_defect(defect: float, nu: float) -> float:
    """A2 slack implied by a force window defect: ``sqrt(defect / nu)``.

    From the energy inequality, ``|u(t)|^2 <= |u(t0)|^2 + defect / nu`` for
    ``t - t0 <= delta``, hence ``|u(t)| <= |u(t0)| + sqrt(defect / nu)``.
    """
    return math.sqrt(max(defect, 0.0) / nu)


@dataclass
class A3Report:
    tol_w: float
    tol_s: float
    weak_max: float
    strong_fraction: float
    strong_max: np.ndarray
    times: np.ndarray
    pairs: int

    def as_dict(self) -> dict:
        return {
            "tol_w": self.tol_w,
            "tol_s": self.tol_s,
            "weak_max": self.weak_max,
            "strong_cauchy_fraction": self.strong_fraction,
            "strong_max": self.strong_max.tolist(),
            "times": self.times.tolist(),
            "pairs": self.pairs,
            "note": "diagnostic only; the exceptional null set is replaced by a measured fraction of grid times",
        }


def check_A3_cauchy(runs: Sequence[Trajectory], T: float, tol_w: float, tol_s: float | None = None,
                    spec: MetricSpec = WEAK) -> A3Report:
    """Strong-Cauchy fraction of a weakly Cauchy sequence of runs on ``[t_start, t_start + T]``.

    The sequence tail (last half of ``runs``, at least two) must be pairwise
    weak-close below ``tol_w`` on the window.  At each grid time the tail is
    called strong-Cauchy when all pairwise strong distances are below
    ``tol_s`` (default ``sqrt(tol_w)``).
    """
    if len(runs) < 2:
        raise ValueError("need at least two runs")
    tail = list(runs[len(runs) // 2 :]) if len(runs) >= 4 else list(runs)
    r0 = tail[0]
    for r in tail[1:]:
        check_same_basis(r0, r)
        if not math.isclose(r.dt, r0.dt, rel_tol=1e-12) or abs(r.t_start - r0.t_start) > _GRID_TOL:
            raise ValueError("runs must share the time grid")
    n = r0.index_of(r0.t_start + T) + 1
    if any(len(r) < n for r in tail):
        raise ValueError("a run does not cover the window")
    tol_s = math.sqrt(tol_w) if tol_s is None else tol_s
    weak_max = 0.0
    strong = np.zeros(n)
    npairs = 0
    for i in range(len(tail)):
        for j in range(i + 1, len(tail)):
            a, b = tail[i].coeffs[:n], tail[j].coeffs[:n]
            weak_max = max(weak_max, float(_stack_dist(r0.basis, a, b, spec).max()))
            strong = np.maximum(strong, _stack_dist(r0.basis, a, b, MetricSpec("strong")))
            npairs += 1
    if weak_max > tol_w:
        raise ValueError(f"runs are not weak-Cauchy below tol_w = {tol_w} (max {weak_max:.3g})")
    frac = float(np.mean(strong <= tol_s))
    return A3Report(tol_w, tol_s, weak_max, frac, strong, r0.times[:n], npairs)
