"""Phase-space points, strong/weak metrics and trajectory-space metrics.

Two Galerkin bases are supported:

* :class:`FourierBasis2D` -- divergence-free, zero-mean velocity fields on the
  periodic box ``[0, L]^2`` with modes ``|kappa_i| <= K``.  Coefficients are
  stored as a complex array of shape ``(2, 2K+1, 2K+1)``; axis 0 is the
  velocity component, axes 1 and 2 are ``kappa_1 + K`` and ``kappa_2 + K``.
* :class:`SineBasis` -- scalar fields on ``[0, ell]`` with Dirichlet
  conditions, real coefficients of the modes ``m = 1..M``.

In both cases the coefficients are taken with respect to an *orthonormal*
basis of L^2, so the strong distance is the plain Euclidean norm of the
coefficient difference (Parseval).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial.distance import cdist


class BasisMismatchError(ValueError):
    """Raised when two objects living in different Galerkin bases are compared."""


class GridMismatchError(ValueError):
    """Raised when two trajectories do not share a uniform time grid."""


# ---------------------------------------------------------------------------
# Bases
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FourierBasis2D:
    """Orthonormal Fourier basis ``exp(i k.x) / L`` on the periodic box."""

    L: float
    K: int

    kind = "fourier2d"

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("box side L must be positive")
        if self.K < 1:
            raise ValueError("truncation K must be >= 1")

    @property
    def basis_id(self) -> str:
        return f"fourier2d:L={self.L!r}:K={self.K}"

    @property
    def shape(self) -> tuple[int, ...]:
        n = 2 * self.K + 1
        return (2, n, n)

    @property
    def dtype(self):
        return np.complex128

    @property
    def kappa(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer mode indices ``(kappa_1, kappa_2)`` on the centred grid."""
        r = np.arange(-self.K, self.K + 1)
        return np.meshgrid(r, r, indexing="ij")

    @property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        k1, k2 = self.kappa
        s = 2.0 * np.pi / self.L
        return s * k1, s * k2

    @property
    def mode_norm(self) -> np.ndarray:
        k1, k2 = self.kappa
        return np.abs(k1) + np.abs(k2)

    @property
    def eigenvalues(self) -> np.ndarray:
        """Stokes eigenvalues ``|k|^2`` per mode (zero at the mean mode)."""
        k1, k2 = self.wavenumbers
        return k1**2 + k2**2

    @property
    def lambda1(self) -> float:
        return (2.0 * np.pi / self.L) ** 2

    def mode_amplitudes(self, coeffs: np.ndarray) -> np.ndarray:
        """Per-mode magnitude ``|u_kappa|`` (C^2 norm over the components)."""
        return np.sqrt(np.sum(np.abs(coeffs) ** 2, axis=-3))

    def embed(self, coeffs: np.ndarray) -> np.ndarray:
        """Real vectors whose Euclidean distances equal strong distances."""
        coeffs = np.asarray(coeffs)
        lead = coeffs.shape[: coeffs.ndim - 3]
        flat = coeffs.reshape(lead + (-1,))
        return np.ascontiguousarray(flat).view(np.float64)

    def dual_norm2(self, coeffs: np.ndarray) -> np.ndarray:
        """``||g||_{V'}^2 = sum |g_kappa|^2 / |k|^2`` (mean mode ignored)."""
        lam = self.eigenvalues
        inv = np.zeros_like(lam)
        inv[lam > 0] = 1.0 / lam[lam > 0]
        return np.sum(np.abs(coeffs) ** 2 * inv, axis=(-3, -2, -1))

    def weak_tail_bound(self, weight_base: float) -> float:
        """Upper bound of the weak-metric terms dropped by the truncation."""
        q = 1.0 / weight_base
        full = (1.0 + q) / (1.0 - q)
        kept = 1.0 + 2.0 * sum(q**j for j in range(1, self.K + 1))
        return full**2 - kept**2

    def to_grid(self, coeffs: np.ndarray, n: int | None = None) -> np.ndarray:
        """Velocity field on an ``n x n`` uniform grid (FFT based)."""
        K = self.K
        n = 2 * K + 2 if n is None else n
        if n <= 2 * K:
            raise ValueError("grid too coarse for the retained modes")
        spec = np.zeros((2, n, n), dtype=complex)
        idx = np.arange(-K, K + 1) % n
        spec[:, idx[:, None], idx[None, :]] = coeffs / self.L
        return np.real(np.fft.ifft2(spec, axes=(-2, -1))) * n * n


@dataclass(frozen=True)
class SineBasis:
    """Orthonormal Dirichlet basis ``sqrt(2/ell) sin(m pi x / ell)``, m = 1..M."""

    ell: float
    M: int

    kind = "sine"

    def __post_init__(self):
        if self.ell <= 0:
            raise ValueError("domain length ell must be positive")
        if self.M < 1:
            raise ValueError("truncation M must be >= 1")

    @property
    def basis_id(self) -> str:
        return f"sine:ell={self.ell!r}:M={self.M}"

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.M,)

    @property
    def dtype(self):
        return np.float64

    @property
    def modes(self) -> np.ndarray:
        return np.arange(1, self.M + 1)

    @property
    def mode_norm(self) -> np.ndarray:
        # lowest mode gets |kappa| = 0, i.e. weight 1
        return self.modes - 1

    @property
    def eigenvalues(self) -> np.ndarray:
        return (self.modes * np.pi / self.ell) ** 2

    @property
    def lambda1(self) -> float:
        return (np.pi / self.ell) ** 2

    def mode_amplitudes(self, coeffs: np.ndarray) -> np.ndarray:
        return np.abs(coeffs)

    def embed(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs, dtype=np.float64)

    def dual_norm2(self, coeffs: np.ndarray) -> np.ndarray:
        return np.sum(np.asarray(coeffs) ** 2 / self.eigenvalues, axis=-1)

    def weak_tail_bound(self, weight_base: float) -> float:
        q = 1.0 / weight_base
        return q**self.M / (1.0 - q)

    def to_grid(self, coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Evaluate the field at points ``x`` by direct summation."""
        x = np.asarray(x, dtype=float)
        phi = np.sqrt(2.0 / self.ell) * np.sin(np.outer(x, self.modes) * np.pi / self.ell)
        return phi @ np.asarray(coeffs)


Basis = FourierBasis2D | SineBasis

_ID_RE = re.compile(r"^(fourier2d):L=([^:]+):K=(\d+)$|^(sine):ell=([^:]+):M=(\d+)$")


def basis_from_id(basis_id: str) -> Basis:
    m = _ID_RE.match(basis_id)
    if m is None:
        raise ValueError(f"unrecognised basis id {basis_id!r}")
    if m.group(1):
        return FourierBasis2D(float(m.group(2)), int(m.group(3)))
    return SineBasis(float(m.group(5)), int(m.group(6)))


def check_same_basis(a, b) -> None:
    if a.basis_id != b.basis_id:
        raise BasisMismatchError(f"basis mismatch: {a.basis_id} vs {b.basis_id}")


# ---------------------------------------------------------------------------
# Points and sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhaseVector:
    """A point of the phase space given by its Galerkin coefficients."""

    basis: Basis
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=self.basis.dtype, copy=True)
        if c.shape != self.basis.shape:
            raise ValueError(
                f"coefficient shape {c.shape} does not match {self.basis.basis_id} {self.basis.shape}"
            )
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def basis_id(self) -> str:
        return self.basis.basis_id

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def __add__(self, other: "PhaseVector") -> "PhaseVector":
        check_same_basis(self, other)
        return PhaseVector(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other: "PhaseVector") -> "PhaseVector":
        check_same_basis(self, other)
        return PhaseVector(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "PhaseVector":
        return PhaseVector(self.basis, self.coeffs * s)

    __rmul__ = __mul__

    def invariant_defects(self) -> dict:
        """Sizes of the basis invariants' violations (all ~0 for valid vectors)."""
        out = {}
        if isinstance(self.basis, FourierBasis2D):
            k1, k2 = self.basis.kappa
            K = self.basis.K
            c = self.coeffs
            out["mean_mode"] = float(np.abs(c[:, K, K]).max())
            out["divergence"] = float(np.abs(k1 * c[0] + k2 * c[1]).max())
            out["hermitian"] = float(np.abs(c - np.conj(c[:, ::-1, ::-1])).max())
        return out

    @classmethod
    def zeros(cls, basis: Basis) -> "PhaseVector":
        return cls(basis, np.zeros(basis.shape, dtype=basis.dtype))


@dataclass(frozen=True, eq=False)
class SetSample:
    """Finite sample of phase points sharing one basis (stacked coefficients)."""

    basis: Basis
    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=self.basis.dtype)
        if p.ndim == len(self.basis.shape):
            p = p[None]
        if p.shape[1:] != self.basis.shape:
            raise ValueError("point shape does not match basis")
        object.__setattr__(self, "points", p)

    @classmethod
    def from_vectors(cls, vectors: Sequence[PhaseVector]) -> "SetSample":
        if not vectors:
            raise ValueError("cannot infer the basis of an empty list")
        b = vectors[0].basis
        for v in vectors[1:]:
            check_same_basis(vectors[0], v)
        return cls(b, np.stack([v.coeffs for v in vectors]))

    @property
    def basis_id(self) -> str:
        return self.basis.basis_id

    def __len__(self) -> int:
        return self.points.shape[0]

    def __iter__(self):
        for p in self.points:
            yield PhaseVector(self.basis, p)

    def __getitem__(self, i: int) -> PhaseVector:
        return PhaseVector(self.basis, self.points[i])


# ---------------------------------------------------------------------------
# Point metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricSpec:
    """Choice of metric: ``kind`` is ``"strong"`` or ``"weak"``.

    ``weight_base`` is the base of the weak-metric weights ``base**-|kappa|``
    (``|kappa|`` is the l1 mode norm, or ``m - 1`` for sine modes) and
    ``L_max`` truncates the half-line trajectory metric series.
    """

    kind: str = "strong"
    weight_base: float = 2.0
    L_max: int = 20

    def __post_init__(self):
        if self.kind not in ("strong", "weak"):
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if not self.weight_base > 1.0:
            raise ValueError("weight_base must exceed 1")
        if int(self.L_max) != self.L_max or self.L_max < 1:
            raise ValueError("L_max must be a positive integer")


STRONG = MetricSpec("strong")
WEAK = MetricSpec("weak")


def strong_dist(u: PhaseVector, v: PhaseVector) -> float:
    """L^2 distance ``|u - v|`` via Parseval."""
    check_same_basis(u, v)
    return float(np.linalg.norm(u.coeffs - v.coeffs))


def _weak_terms(basis: Basis, diff: np.ndarray, base: float) -> np.ndarray:
    delta = basis.mode_amplitudes(diff)
    w = float(base) ** (-basis.mode_norm.astype(float))
    return w * delta / (1.0 + delta)


def weak_dist(u: PhaseVector, v: PhaseVector, spec: MetricSpec = WEAK) -> float:
    """Weighted sum ``sum_k base^-|k| d_k / (1 + d_k)`` over retained modes."""
    check_same_basis(u, v)
    terms = _weak_terms(u.basis, u.coeffs - v.coeffs, spec.weight_base)
    return float(np.sum(terms))


def weak_dist_upper(basis: Basis, spec: MetricSpec = WEAK) -> float:
    """Supremum of the truncated weak metric (sum of the weights)."""
    return float(np.sum(float(spec.weight_base) ** (-basis.mode_norm.astype(float))))


def point_dist(u: PhaseVector, v: PhaseVector, spec: MetricSpec = STRONG) -> float:
    if spec.kind == "strong":
        return strong_dist(u, v)
    return weak_dist(u, v, spec)


def _stack_dist(basis: Basis, a: np.ndarray, b: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """Metric between stacked coefficient arrays ``a[i]`` and ``b[i]`` (broadcast)."""
    d = a - b
    if spec.kind == "strong":
        nd = len(basis.shape)
        return np.sqrt(np.sum(np.abs(d) ** 2, axis=tuple(range(-nd, 0))))
    terms = _weak_terms(basis, d, spec.weight_base)
    nd = terms.ndim - (d.ndim - len(basis.shape))
    return np.sum(terms, axis=tuple(range(-nd, 0)))


# ---------------------------------------------------------------------------
# Pairwise machinery used by set and net computations
# ---------------------------------------------------------------------------


def pairwise_strong(a: np.ndarray, b: np.ndarray, exact: bool | None = None) -> np.ndarray:
    """Euclidean distance matrix between rows of two real arrays.

    Small problems use exact differences; large ones use the Gram expansion
    after subtracting the joint centroid, which keeps the cancellation error
    at roughly ``1e-16 * diam**2 / d``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if exact is None:
        exact = a.shape[0] * b.shape[0] * a.shape[1] <= 2_000_000
    if exact:
        return cdist(a, b)
    c = 0.5 * (a.mean(axis=0) + b.mean(axis=0))
    a = a - c
    b = b - c
    d2 = np.einsum("ij,ij->i", a, a)[:, None] + np.einsum("ij,ij->i", b, b)[None, :]
    d2 -= 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def pairwise_dist(
    basis: Basis, a: np.ndarray, b: np.ndarray, spec: MetricSpec = STRONG
) -> np.ndarray:
    """Distance matrix between two stacks of coefficient arrays."""
    if spec.kind == "strong":
        return pairwise_strong(basis.embed(a), basis.embed(b))
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        out[i] = _stack_dist(basis, a[i][None], b, spec)
    return out


def hausdorff(A: SetSample, B: SetSample, spec: MetricSpec = STRONG) -> float:
    """Symmetric Hausdorff distance ``max(sup_a inf_b d, sup_b inf_a d)``."""
    d = directed_hausdorff_pair(A, B, spec)
    return max(d)


def directed_hausdorff_pair(
    A: SetSample, B: SetSample, spec: MetricSpec = STRONG
) -> tuple[float, float]:
    """Return ``(sup_a inf_b d(a, b), sup_b inf_a d(a, b))``."""
    if len(A) == 0 or len(B) == 0:
        raise ValueError("Hausdorff distance of an empty set is undefined")
    check_same_basis(A, B)
    D = pairwise_dist(A.basis, A.points, B.points, spec)
    return float(D.min(axis=1).max()), float(D.min(axis=0).max())


# ---------------------------------------------------------------------------
# Trajectory-space metrics
# ---------------------------------------------------------------------------

_GRID_TOL = 1e-9


def shared_window(u, v, a: float, b: float) -> tuple[slice, slice]:
    """Index slices of the samples of ``u`` and ``v`` lying in ``[a, b]``.

    Both trajectories must cover ``[a, b]`` and sit on the same uniform grid;
    nothing is interpolated.
    """
    check_same_basis(u, v)
    if not math.isclose(u.dt, v.dt, rel_tol=1e-12, abs_tol=0.0):
        raise GridMismatchError(f"time steps differ: {u.dt} vs {v.dt}")
    off = (v.t_start - u.t_start) / u.dt
    if abs(off - round(off)) > _GRID_TOL:
        raise GridMismatchError("sample times are not aligned")
    if b < a:
        raise ValueError("empty window: b < a")
    tol = _GRID_TOL * u.dt
    for w in (u, v):
        if a < w.t_start - tol or b > w.t_end + tol:
            raise ValueError(
                f"window [{a}, {b}] not covered by trajectory on [{w.t_start}, {w.t_end}]"
            )
    i0 = math.ceil((a - u.t_start) / u.dt - _GRID_TOL)
    i1 = math.floor((b - u.t_start) / u.dt + _GRID_TOL)
    if i1 < i0:
        raise GridMismatchError("window contains no grid sample")
    j0 = i0 - int(round(off))
    return slice(i0, i1 + 1), slice(j0, j0 + i1 - i0 + 1)


def traj_dist_window(u, v, a: float, b: float, spec: MetricSpec = STRONG) -> float:
    """``sup_{t in [a, b]} d(u(t), v(t))`` over the shared grid samples."""
    su, sv = shared_window(u, v, a, b)
    d = _stack_dist(u.basis, u.coeffs[su], v.coeffs[sv], spec)
    return float(np.max(d))


class SeriesValue(NamedTuple):
    value: float
    tail_bound: float


def traj_dist_halfline(u, v, a: float, spec: MetricSpec = STRONG) -> SeriesValue:
    """Truncated series ``sum_{l<=L_max} 2^-l d_l / (1 + d_l)`` on ``[a, a+l]``.

    The omitted tail is bounded by ``2**-L_max`` and returned alongside.
    """
    total = 0.0
    for l in range(1, spec.L_max + 1):
        d = traj_dist_window(u, v, a, a + l, spec)
        total += 2.0**-l * d / (1.0 + d)
    return SeriesValue(total, 2.0 ** -spec.L_max)
