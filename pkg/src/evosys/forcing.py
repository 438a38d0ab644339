"""Time-dependent symbols: forces, translation, and their classification.

A force is stored in separable form ``g(t) = sum_j a_j(t) phi_j`` with fixed
spatial profiles ``phi_j`` (coefficient arrays in a Galerkin basis) and scalar
time profiles ``a_j``.  This makes ``||g(t)||_{V'}^2 = a(t)^T G a(t)`` cheap to
evaluate on long probe horizons, with ``G`` the V'-Gram matrix of the
profiles.

Every sup-over-time quantity here is measured on a finite probe horizon and
is therefore a lower bound of the true supremum; the classifiers report
sampled necessary conditions, not proofs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .expr import compile_expr
from .phase import Basis, FourierBasis2D, SineBasis

PROBE_DISCLAIMER = (
    "sup over t measured on a finite probe horizon; values are lower bounds "
    "and verdicts are sampled necessary conditions"
)


# ---------------------------------------------------------------------------
# Forces and symbols
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Force:
    """Separable force ``sum_j a_j(t) profiles[j]``."""

    basis: Basis
    profiles: np.ndarray
    time_fns: tuple
    name: str = "force"
    breakpoints: Callable[[float, float], np.ndarray] | None = None

    def __post_init__(self):
        p = np.asarray(self.profiles, dtype=self.basis.dtype)
        if p.ndim == len(self.basis.shape):
            p = p[None]
        if p.shape[1:] != self.basis.shape or p.shape[0] != len(self.time_fns):
            raise ValueError("profiles and time functions do not match")
        p.flags.writeable = False
        object.__setattr__(self, "profiles", p)
        object.__setattr__(self, "time_fns", tuple(self.time_fns))
        J = p.shape[0]
        lam = self.basis.eigenvalues
        inv = np.where(lam > 0, 1.0 / np.where(lam > 0, lam, 1.0), 0.0)
        if isinstance(self.basis, FourierBasis2D):
            inv = np.broadcast_to(inv, self.basis.shape)
        flat = p.reshape(J, -1)
        G = np.real(flat @ (np.conj(flat) * inv.reshape(-1)).T)
        object.__setattr__(self, "_gram", 0.5 * (G + G.T))

    def amplitudes(self, t) -> np.ndarray:
        """Time coefficients, shape ``(len(t), J)`` (or ``(J,)`` for scalar t)."""
        t_arr = np.asarray(t, dtype=float)
        cols = [np.broadcast_to(np.asarray(fn(t_arr), dtype=float), t_arr.shape) for fn in self.time_fns]
        return np.stack(cols, axis=-1)

    def __call__(self, t: float) -> np.ndarray:
        a = self.amplitudes(float(t))
        return np.tensordot(a, self.profiles, axes=(0, 0))

    def dual_norm2(self, t) -> np.ndarray:
        """``||g(t)||_{V'}^2`` for an array of times."""
        a = self.amplitudes(t)
        return np.einsum("...i,ij,...j->...", a, self._gram, a)

    def breaks(self, t0: float, t1: float) -> np.ndarray:
        if self.breakpoints is None:
            return np.empty(0)
        b = np.asarray(self.breakpoints(t0, t1), dtype=float)
        return np.sort(b[(b >= t0) & (b <= t1)])


@dataclass(frozen=True, eq=False)
class Symbol:
    """Time symbol ``sigma = (f, g)`` with translation offset ``shift``.

    ``force`` may be ``None`` (zero force); ``nonlinearity`` is any callable
    ``f(v, t)`` (RDS only).  ``truth`` carries analytic ground-truth class
    labels for catalogue entries.
    """

    force: Force | None = None
    nonlinearity: object | None = None
    id: str = "sigma0"
    shift: float = 0.0
    truth: dict = field(default_factory=dict)

    def g(self, t: float, basis: Basis | None = None) -> np.ndarray:
        if self.force is None:
            if basis is None:
                raise ValueError("zero force needs a basis to evaluate")
            return np.zeros(basis.shape, dtype=basis.dtype)
        return self.force(t + self.shift)

    def f(self, v, t):
        if self.nonlinearity is None:
            return np.zeros_like(np.asarray(v, dtype=float))
        return self.nonlinearity(v, t + self.shift)

    def force_norm2(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.force is None:
            return np.zeros_like(t)
        return self.force.dual_norm2(t + self.shift)

    @property
    def basis(self) -> Basis | None:
        return None if self.force is None else self.force.basis


def translate_symbol(sigma: Symbol, h: float) -> Symbol:
    """``T(h) sigma = sigma(. + h)``; offsets add, so composition is exact."""
    return replace(sigma, shift=sigma.shift + h, id=f"{sigma.id.split('@')[0]}@{sigma.shift + h!r}")


def zero_symbol(nonlinearity=None, id: str = "zero") -> Symbol:
    return Symbol(None, nonlinearity, id=id, truth=dict(translation_compact=True, normal=True, translation_bounded=True))


# ---------------------------------------------------------------------------
# Window integrals of ||g||_{V'}^2
# ---------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class ProbeGrid:
    """Window starts ``0, step, 2 step, ... <= horizon`` (plus breakpoints)."""

    horizon: float = 1000.0
    step: float = 0.05
    max_panel: float = 0.125

    def starts(self) -> np.ndarray:
        n = int(math.floor(self.horizon / self.step + 1e-9))
        return np.arange(n + 1) * self.step


def _gl_integral(norm2: Callable, a: np.ndarray, b: np.ndarray, max_panel: float) -> np.ndarray:
    """Composite Gauss-Legendre integral of ``norm2`` over ``[a_i, b_i]``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.zeros(a.shape)
    if a.size == 0:
        return out
    length = b - a
    npanel = np.maximum(1, np.ceil(length.max() / max_panel)).astype(int)
    h = length / npanel
    for k in range(npanel):
        lo = a + k * h
        mid = lo + 0.5 * h
        nodes = mid[:, None] + 0.5 * h[:, None] * _GL_X[None, :]
        out += 0.5 * h * (norm2(nodes) @ _GL_W)
    return out


def window_integrals(sigma, starts, delta: float, max_panel: float = 0.125) -> np.ndarray:
    """``int_s^{s+delta} ||g(r)||_{V'}^2 dr`` for every start ``s``.

    Windows containing breakpoints of the force (discontinuities) are split
    there, so piecewise-smooth profiles are integrated to quadrature accuracy.
    """
    if not isinstance(sigma, Symbol):
        sigma = Symbol(sigma)
    starts = np.asarray(starts, dtype=float)
    out = np.zeros(starts.shape)
    if sigma.force is None:
        return out
    norm2 = sigma.force_norm2
    bps = np.empty(0)
    if sigma.force.breakpoints is not None and starts.size:
        lo, hi = starts.min() + sigma.shift, starts.max() + delta + sigma.shift
        bps = sigma.force.breaks(lo, hi) - sigma.shift
    if bps.size == 0:
        return _gl_integral(norm2, starts, starts + delta, max_panel)
    first = np.searchsorted(bps, starts, side="right")
    last = np.searchsorted(bps, starts + delta, side="left")
    plain = last <= first
    out[plain] = _gl_integral(norm2, starts[plain], starts[plain] + delta, max_panel)
    for i in np.flatnonzero(~plain):
        cuts = np.concatenate(([starts[i]], bps[first[i] : last[i]], [starts[i] + delta]))
        out[i] = _gl_integral(norm2, cuts[:-1], cuts[1:], max_panel).sum()
    return out


def _probe_starts(sigma, probe: ProbeGrid, delta: float) -> np.ndarray:
    s = probe.starts()
    if isinstance(sigma, Symbol) and sigma.force is not None and sigma.force.breakpoints is not None:
        b = sigma.force.breaks(sigma.shift, probe.horizon + sigma.shift) - sigma.shift
        extra = np.clip(np.concatenate((b, b - delta)), 0.0, probe.horizon)
        s = np.unique(np.concatenate((s, extra)))
    return s


def _as_symbol(g) -> Symbol:
    return g if isinstance(g, Symbol) else Symbol(g)


def translation_bound_norm(g, probe: ProbeGrid | None = None) -> float:
    """Probe estimate of ``sup_t int_t^{t+1} ||g||_{V'}^2`` (a lower bound)."""
    sigma = _as_symbol(g)
    probe = probe or ProbeGrid()
    s = _probe_starts(sigma, probe, 1.0)
    return float(window_integrals(sigma, s, 1.0, probe.max_panel).max())


def normal_defect(g, delta: float, probe: ProbeGrid | None = None) -> float:
    """``sup_t int_t^{t+delta} ||g||_{V'}^2`` over the probe window starts."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    sigma = _as_symbol(g)
    probe = probe or ProbeGrid()
    s = _probe_starts(sigma, probe, delta)
    return float(window_integrals(sigma, s, delta, probe.max_panel).max())


DEFAULT_DELTAS = tuple(2.0**-k for k in range(31))


@dataclass
class NormalityReport:
    normal: bool
    eps: float
    delta: float | None
    table: list
    horizon: float
    note: str = PROBE_DISCLAIMER

    def as_dict(self) -> dict:
        return {
            "normal": self.normal,
            "eps": self.eps,
            "delta_found": self.delta,
            "defect_table": [{"delta": d, "defect": v} for d, v in self.table],
            "probe_horizon": self.horizon,
            "note": self.note,
        }


def is_normal(g, eps: float, deltas: Sequence[float] = DEFAULT_DELTAS, probe: ProbeGrid | None = None) -> NormalityReport:
    """Sweep ``delta`` downwards until the defect falls below ``eps``."""
    probe = probe or ProbeGrid()
    table = []
    found = None
    for d in sorted(deltas, reverse=True):
        v = normal_defect(g, d, probe)
        table.append((d, v))
        if v <= eps:
            found = d
            break
    return NormalityReport(found is not None, eps, found, table, probe.horizon)


@dataclass
class ForceClassification:
    translation_bounded: bool
    tb_norm: float
    normal: bool
    normality: NormalityReport
    growth_ratio: float

    def as_dict(self) -> dict:
        return {
            "translation_bounded": self.translation_bounded,
            "tb_norm_lower_bound": self.tb_norm,
            "growth_ratio": self.growth_ratio,
            "normal": self.normal,
            "normality": self.normality.as_dict(),
        }


def classify_force(g, eps: float = 1e-2, probe: ProbeGrid | None = None, growth_tol: float = 0.1) -> ForceClassification:
    """Translation-boundedness and normality verdicts on a probe horizon.

    Translation bounded: unit-window integrals are finite and do not grow
    between the first and second half of the horizon (ratio within
    ``1 + growth_tol``).  Normal: some probed ``delta`` brings the defect
    below ``eps``.  Normality is only reported for translation-bounded forces.
    """
    sigma = _as_symbol(g)
    probe = probe or ProbeGrid()
    s = _probe_starts(sigma, probe, 1.0)
    w = window_integrals(sigma, s, 1.0, probe.max_panel)
    half = s <= 0.5 * probe.horizon
    early, late = w[half].max(), w[~half].max() if (~half).any() else w.max()
    tb_norm = float(w.max())
    growth = float(late / early) if early > 0 else (0.0 if late == 0 else np.inf)
    tb = bool(np.isfinite(tb_norm) and (late <= (1 + growth_tol) * early + 1e-12))
    rep = is_normal(sigma, eps, probe=probe)
    return ForceClassification(tb, tb_norm, tb and rep.normal, rep, growth)


# ---------------------------------------------------------------------------
# Nonlinearity classifiers (translation compactness, pointwise limits)
# ---------------------------------------------------------------------------


@dataclass
class ModulusTable:
    """Equicontinuity modulus ``theta(l, R)`` of ``{f(., t)}`` over sampled t."""

    l_grid: np.ndarray
    theta: np.ndarray
    theta_per_t: np.ndarray
    t_samples: np.ndarray
    R: float
    passes: bool
    shrink_ratio: float
    tol: float
    note: str = PROBE_DISCLAIMER

    def as_dict(self) -> dict:
        return {
            "R": self.R,
            "l": self.l_grid.tolist(),
            "theta": self.theta.tolist(),
            "t_samples": self.t_samples.tolist(),
            "passes": self.passes,
            "shrink_ratio": self.shrink_ratio,
            "tol": self.tol,
            "verdict": "sampled necessary condition",
            "note": self.note,
        }


DEFAULT_T_SAMPLES = tuple(np.concatenate(([0.0], np.geomspace(0.1, 1000.0, 41))))


def equicontinuity_modulus(
    f,
    R: float,
    t_samples: Sequence[float] = DEFAULT_T_SAMPLES,
    v_resolution: float = 2.5e-5,
    l_grid: Sequence[float] | None = None,
    tol: float = 0.05,
) -> ModulusTable:
    """Sampled modulus ``max_t max_{|v1-v2|<=l, |v_i|<=R} |f(v1,t)-f(v2,t)|``.

    The family passes the (sampled) uniform-continuity condition when the
    modulus at the smallest probed gap is below ``tol`` times its value at
    the largest gap, i.e. it shrinks as ``l -> 0`` uniformly in the sampled t.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    n = int(math.ceil(2 * R / v_resolution))
    v = np.linspace(-R, R, n + 1)
    h = v[1] - v[0]
    if l_grid is None:
        l_grid = np.geomspace(min(1.0, R), 1e-3, 13)
    l_grid = np.asarray(sorted(l_grid, reverse=True), dtype=float)
    gaps = np.maximum(1, np.round(l_grid / h).astype(int))
    mmax = int(gaps.max())
    t_samples = np.asarray(t_samples, dtype=float)
    per_t = np.empty((t_samples.size, l_grid.size))
    for i, t in enumerate(t_samples):
        fv = np.broadcast_to(np.asarray(f(v, t), dtype=float), v.shape)
        # modulus at each integer gap m, then running max for |v1 - v2| <= l
        mod = np.zeros(mmax + 1)
        for m in range(1, mmax + 1):
            if m > 64 and m not in set(gaps):
                continue
            mod[m] = np.max(np.abs(fv[m:] - fv[:-m]))
        mod = np.maximum.accumulate(mod)
        per_t[i] = mod[gaps]
    theta = per_t.max(axis=0)
    ratio = float(theta[-1] / theta[0]) if theta[0] > 0 else 0.0
    return ModulusTable(l_grid, theta, per_t, t_samples, float(R), ratio <= tol, ratio, tol)


@dataclass
class PointwiseLimitReport:
    v_grid: np.ndarray
    converged: np.ndarray
    limit: np.ndarray
    spread: np.ndarray
    jumps: list
    note: str = PROBE_DISCLAIMER

    def as_dict(self) -> dict:
        return {
            "v": self.v_grid.tolist(),
            "converged": self.converged.tolist(),
            "limit": [None if not c else float(x) for c, x in zip(self.converged, self.limit)],
            "tail_spread": self.spread.tolist(),
            "jumps": self.jumps,
            "note": self.note,
        }

    def diverges_at(self, v: float) -> bool:
        i = int(np.argmin(np.abs(self.v_grid - v)))
        return not bool(self.converged[i])


DEFAULT_T_SEQUENCE = tuple(np.geomspace(1.0, 1e7, 57))


def pointwise_limit_probe(
    f,
    v_grid: Sequence[float],
    t_sequence: Sequence[float] = DEFAULT_T_SEQUENCE,
    tail: float = 0.25,
    cauchy_tol: float = 1e-3,
    jump_tol: float = 0.1,
) -> PointwiseLimitReport:
    """Per-v Cauchy test of ``f(v, t_n)`` along an increasing time sequence.

    The last ``tail`` fraction of the sequence is tested for Cauchy-ness; the
    last value is reported as the limit candidate.  Jumps of the candidate
    between neighbouring converged v's larger than ``jump_tol`` are listed.
    """
    v = np.asarray(v_grid, dtype=float)
    ts = np.asarray(t_sequence, dtype=float)
    if np.any(np.diff(ts) <= 0):
        raise ValueError("t_sequence must be increasing")
    vals = np.stack([np.broadcast_to(np.asarray(f(v, t), dtype=float), v.shape) for t in ts])
    k = max(2, int(math.ceil(tail * ts.size)))
    tailv = vals[-k:]
    spread = tailv.max(axis=0) - tailv.min(axis=0)
    conv = spread <= cauchy_tol
    limit = vals[-1]
    jumps = []
    order = np.argsort(v)
    for a, b in zip(order[:-1], order[1:]):
        if conv[a] and conv[b]:
            size = abs(limit[b] - limit[a])
            if size > jump_tol:
                jumps.append({"between": [float(v[a]), float(v[b])], "size": float(size)})
    return PointwiseLimitReport(v, conv, limit, spread, jumps)


# ---------------------------------------------------------------------------
# Built-in force catalogue
# ---------------------------------------------------------------------------


def _unit_profile(basis: Basis, which: int) -> np.ndarray:
    """Default spatial profiles, normalised to ``||phi||_{V'} = 1``."""
    c = np.zeros(basis.shape, dtype=basis.dtype)
    if isinstance(basis, SineBasis):
        m = min(which + 1, basis.M)
        c[m - 1] = 1.0
    else:
        K, L = basis.K, basis.L
        # which=0: (sin 2y, 0); which=1: (0, sin 3x)
        k = min(2 + which, K)
        if which == 0:
            c[0, K, K + k] = L / 2j
            c[0, K, K - k] = -L / 2j
        else:
            c[1, K + k, K] = L / 2j
            c[1, K - k, K] = -L / 2j
    scale = math.sqrt(float(basis.dual_norm2(c)))
    return c / scale


def unit_profile(basis: Basis, which: int = 0) -> np.ndarray:
    return _unit_profile(basis, which)


def _spike_fn(n_max: int):
    def a(t):
        t = np.asarray(t, dtype=float)
        n = np.floor(t)
        width = np.power(4.0, -np.clip(n, 0, 1023))
        on = (n >= 1) & (n <= n_max) & (t < n + width)
        return np.where(on, np.power(2.0, np.clip(n, 0, 1023)), 0.0)

    def bps(t0, t1):
        ns = np.arange(max(1, int(math.floor(t0)) - 1), min(n_max, int(math.ceil(t1))) + 1)
        return np.concatenate((ns, ns + 4.0**-ns))

    return a, bps


CATALOG = ("constant", "quasiperiodic", "decaying", "spike_train")


def builtin_force(name: str, basis: Basis, amplitude: float = 1.0, **params) -> Symbol:
    """Closed-form force profiles with analytic class labels.

    ``constant``       amplitude * phi_0
    ``quasiperiodic``  amplitude * (cos(w1 t) phi_0 + sin(w2 t) phi_1), w2/w1 = sqrt(2)
    ``decaying``       amplitude / (1 + t^2) * phi_0
    ``spike_train``    amplitude * sum_{n=1}^{n_max} 2^n 1_[n, n + 4^-n](t) phi_0
    """
    phi0 = _unit_profile(basis, 0)
    amp = float(amplitude)
    if name == "constant":
        force = Force(basis, [amp * phi0], (lambda t: np.ones_like(np.asarray(t, dtype=float)),), name)
        truth = dict(translation_compact=True, normal=True, translation_bounded=True)
    elif name == "quasiperiodic":
        w1 = float(params.get("omega1", 1.0))
        w2 = float(params.get("omega2", math.sqrt(2.0) * w1))
        phi1 = _unit_profile(basis, 1)
        force = Force(
            basis,
            [amp * phi0, amp * phi1],
            (lambda t: np.cos(w1 * np.asarray(t, dtype=float)), lambda t: np.sin(w2 * np.asarray(t, dtype=float))),
            name,
        )
        truth = dict(translation_compact=True, normal=True, translation_bounded=True)
    elif name == "decaying":
        force = Force(basis, [amp * phi0], (lambda t: 1.0 / (1.0 + np.asarray(t, dtype=float) ** 2),), name)
        truth = dict(translation_compact=True, normal=True, translation_bounded=True)
    elif name == "spike_train":
        n_max = int(params.get("n_max", 20))
        a, bps = _spike_fn(n_max)
        force = Force(basis, [amp * phi0], (a,), name, breakpoints=bps)
        truth = dict(translation_compact=False, normal=False, translation_bounded=True)
    else:
        raise ValueError(f"unknown built-in force {name!r}; choose from {CATALOG}")
    return Symbol(force, None, id=name, truth=truth)


def force_from_terms(basis: Basis, terms: Sequence[tuple[np.ndarray, str]], name: str = "user") -> Force:
    """Force ``sum_j a_j(t) phi_j`` from profiles and time expressions in ``t``/``T``."""
    profiles = [np.asarray(p) for p, _ in terms]
    fns = []
    for _, src in terms:
        e = compile_expr(src, ("t",))
        fns.append(lambda t, e=e: e(t=t))
    return Force(basis, profiles, tuple(fns), name)
