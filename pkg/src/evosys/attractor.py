"""Attractor pieces, tracking nets and the diagnostics built on them.

All distances between pieces are the windowed sup metric
``d(u, v) = max_{t in [0, T]} d_s(u(t), v(t))`` on the shared sample grid.

Sup distances between many pieces are computed slice by slice with Gram
(BLAS) products, which carry a small cancellation error.  Every decision
that falls within that error of its threshold (a covering radius, or a tie
for the nearest member) is re-evaluated with exact differences, and every
reported distance is an exact evaluation.

"Attractor" in this module always means the empirical proxy: pieces are
post-transient windows of long forward runs.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .io import read_coeff_stream, write_coeff_stream
from .phase import (
    STRONG,
    Basis,
    FourierBasis2D,
    GridMismatchError,
    MetricSpec,
    SetSample,
    _stack_dist,
    check_same_basis,
    directed_hausdorff_pair,
    pairwise_dist,
    pairwise_strong,
)
from .systems import (
    KERNEL_PROXY_NOTE,
    SystemHandle,
    Trajectory,
    TrajectoryPiece,
    integrate_ensemble,
    parallel_map,
    reach_sample,
)

STRIDE_NOTE = "tracking must hold for all window starts; only starts on the stride grid are checked"


# ---------------------------------------------------------------------------
# Window stacks
# ---------------------------------------------------------------------------


class WindowStack:
    """Read-only stack of ``P`` windows of ``nt`` samples cut from source runs.

    Window ``p`` is ``base[run[p], off[p] : off[p] + nt]``.  Overlapping
    windows share storage; indexing with piece indices gathers copies, and
    ``stack[:, j]`` / ``stack[idx, j]`` gather single time sections without
    materialising whole windows.
    """

    def __init__(self, base: np.ndarray, run, off, nt: int):
        self.base = base
        self.run = np.asarray(run, dtype=np.intp)
        self.off = np.asarray(off, dtype=np.intp)
        self.nt = int(nt)
        if self.run.shape != self.off.shape or self.run.ndim != 1:
            raise ValueError("run and offset index arrays must be 1D and equal length")
        if self.run.size and (self.off.min() < 0 or self.off.max() + self.nt > base.shape[1]):
            raise ValueError("window extends beyond its source run")

    @classmethod
    def from_array(cls, c: np.ndarray) -> "WindowStack":
        c = np.asarray(c)
        return cls(c, np.arange(c.shape[0]), np.zeros(c.shape[0], dtype=np.intp), c.shape[1])

    @property
    def shape(self) -> tuple:
        return (self.run.size, self.nt) + self.base.shape[2:]

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def dtype(self):
        return self.base.dtype

    def __len__(self) -> int:
        return self.run.size

    def map(self, fn) -> "WindowStack":
        """Apply a per-sample map ``fn`` (acting on trailing axes) to the sources."""
        return WindowStack(fn(self.base), self.run, self.off, self.nt)

    def subset(self, idx) -> "WindowStack":
        idx = np.asarray(idx, dtype=np.intp)
        return WindowStack(self.base, self.run[idx], self.off[idx], self.nt)

    def take(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.intp)
        steps = np.arange(self.nt)
        return self.base[self.run[idx][:, None], self.off[idx][:, None] + steps]

    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        first, rest = key[0], key[1:]
        single = isinstance(first, (int, np.integer))
        idx = np.arange(len(self))[first] if not isinstance(first, np.ndarray) else first
        idx = np.atleast_1d(np.asarray(idx, dtype=np.intp))
        if rest and isinstance(rest[0], (int, np.integer)):
            j = int(rest[0]) % self.nt
            out = self.base[self.run[idx], self.off[idx] + j][(slice(None),) + rest[1:]]
            return out[0] if single else out
        out = self.take(idx)
        if rest:
            out = out[(slice(None),) + rest]
        return out[0] if single else out

    def __array__(self, dtype=None, copy=None):
        out = self.take(np.arange(len(self)))
        return out if dtype is None else out.astype(dtype)

    def chunks(self, size: int):
        """Yield ``(indices, windows)`` blocks of at most ``size`` pieces."""
        for s in range(0, len(self), size):
            idx = np.arange(s, min(len(self), s + size))
            yield idx, self.take(idx)


def _chunk_size(X) -> int:
    per = int(np.prod(X.shape[1:])) * 16
    return max(1, 64_000_000 // per)


# ---------------------------------------------------------------------------
# Piece libraries
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PieceLibrary:
    """``P`` pieces of common length ``T`` stacked as ``coeffs[P, n_t, ...]``."""

    basis: Basis
    dt: float
    T: float
    coeffs: np.ndarray
    provenance: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = self.coeffs
        if not isinstance(c, WindowStack):
            c = WindowStack.from_array(np.asarray(c, dtype=self.basis.dtype))
        elif c.dtype != self.basis.dtype:
            raise ValueError("window stack dtype does not match the basis")
        if c.ndim != len(self.basis.shape) + 2 or c.shape[2:] != self.basis.shape:
            raise ValueError("library array must have shape (P, n_t, *basis.shape)")
        nt = int(round(self.T / self.dt)) + 1
        if c.shape[1] != nt:
            raise ValueError(f"pieces hold {c.shape[1]} samples, expected {nt} for T = {self.T}")
        prov = tuple(self.provenance) or tuple(("", 0.0) for _ in range(c.shape[0]))
        if len(prov) != c.shape[0]:
            raise ValueError("one provenance entry per piece is required")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "provenance", prov)

    @property
    def basis_id(self) -> str:
        return self.basis.basis_id

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_times(self) -> int:
        return self.coeffs.shape[1]

    def piece(self, i: int) -> TrajectoryPiece:
        run, off = self.provenance[i]
        return TrajectoryPiece(self.basis, 0.0, self.dt, self.coeffs[i], "", run, {}, source_run=run, offset=off)

    @property
    def pieces(self) -> list[TrajectoryPiece]:
        return [self.piece(i) for i in range(len(self))]

    def subset(self, idx) -> "PieceLibrary":
        idx = np.asarray(idx, dtype=int)
        return PieceLibrary(self.basis, self.dt, self.T, self.coeffs.subset(idx),
                            tuple(self.provenance[i] for i in idx), dict(self.meta))

    def section(self, t: float) -> SetSample:
        """The set ``{piece_i(t)}``."""
        j = _grid_index(t, self.dt, self.n_times)
        return SetSample(self.basis, self.coeffs[:, j])

    def save(self, stem) -> tuple[Path, Path]:
        """Write ``stem.json`` (metadata, window index) and ``stem.bin`` (source samples)."""
        stem = Path(stem)
        c = self.coeffs
        flat = c.base.reshape((-1,) + self.basis.shape)
        desc = write_coeff_stream(stem.with_suffix(".bin"), self.basis, flat)
        d = {"dt": self.dt, "T": self.T, "basis_id": self.basis_id, "n_pieces": len(self),
             "source_shape": list(c.base.shape[:2]), "run_index": c.run.tolist(), "offset_index": c.off.tolist(),
             "provenance": [list(p) for p in self.provenance], "meta": self.meta, "coeffs": desc}
        stem.with_suffix(".json").write_text(json.dumps(d, indent=2, sort_keys=True))
        return stem.with_suffix(".json"), stem.with_suffix(".bin")

    @classmethod
    def load(cls, stem) -> "PieceLibrary":
        stem = Path(stem)
        d = json.loads(stem.with_suffix(".json").read_text())
        basis, flat = read_coeff_stream(stem.with_suffix(".bin"))
        nt = int(round(d["T"] / d["dt"])) + 1
        base = flat.reshape(tuple(d["source_shape"]) + basis.shape)
        stack = WindowStack(base, d["run_index"], d["offset_index"], nt)
        return cls(basis, d["dt"], d["T"], stack, tuple(tuple(p) for p in d["provenance"]), d.get("meta", {}))

    @classmethod
    def from_pieces(cls, pieces: Sequence[TrajectoryPiece], **meta) -> "PieceLibrary":
        if not pieces:
            raise ValueError("no pieces")
        p0 = pieces[0]
        for p in pieces[1:]:
            check_same_basis(p0, p)
            if len(p) != len(p0) or not math.isclose(p.dt, p0.dt, rel_tol=1e-12):
                raise GridMismatchError("pieces must share length and dt")
        prov = tuple((getattr(p, "source_run", p.run_id), getattr(p, "offset", p.t_start)) for p in pieces)
        return cls(p0.basis, p0.dt, p0.t_end - p0.t_start, np.stack([p.coeffs for p in pieces]), prov, meta)


def _grid_index(t: float, dt: float, n: int) -> int:
    x = t / dt
    i = int(round(x))
    if abs(x - i) > 1e-6 or not 0 <= i < n:
        raise ValueError(f"time {t} is not on the piece grid (dt = {dt}, {n} samples)")
    return i


def library_from_runs(runs: Sequence[Trajectory], t0: float, T: float, stride: float) -> PieceLibrary:
    """Windows ``[t*, t* + T]`` with ``t* = t0 + k stride`` of every run."""
    if not runs:
        raise ValueError("no runs")
    dt = runs[0].dt
    if stride < dt * (1 - 1e-9):
        raise ValueError("stride must be at least dt")
    prov = []
    m = int(round(T / dt))
    s = int(round(stride / dt))
    if abs(T / dt - m) > 1e-6 or abs(stride / dt - s) > 1e-6:
        raise ValueError("T and stride must be multiples of the sample step")
    bases, run_idx, offs = [], [], []
    n_max = max(len(r) for r in runs)
    for k, r in enumerate(runs):
        check_same_basis(runs[0], r)
        if not math.isclose(r.dt, dt, rel_tol=1e-12):
            raise GridMismatchError("runs must share dt")
        i0 = r.index_of(t0)
        count = (len(r) - 1 - i0 - m) // s + 1
        if count <= 0:
            raise ValueError(f"run {r.run_id!r} too short for t0 + T")
        idx = i0 + s * np.arange(count)
        pad = np.zeros((n_max - len(r),) + r.coeffs.shape[1:], dtype=r.coeffs.dtype)
        bases.append(np.concatenate((r.coeffs, pad)) if len(pad) else r.coeffs)
        run_idx.append(np.full(count, k))
        offs.append(idx)
        prov += [(r.run_id, float(r.t_start + i * dt)) for i in idx]
    stack = WindowStack(np.stack(bases), np.concatenate(run_idx), np.concatenate(offs), m + 1)
    meta = {"t0": t0, "stride": stride, "runs": [r.run_id for r in runs], "note": KERNEL_PROXY_NOTE}
    return PieceLibrary(runs[0].basis, dt, m * dt, stack, tuple(prov), meta)


def harvest_pieces(sys: SystemHandle, ensemble: SetSample, t0: float, T: float, stride: float,
                   horizon: float, workers: int | None = None, return_runs: bool = False):
    """Integrate the ensemble to ``horizon`` and cut all post-transient windows.

    Each run yields ``floor((horizon - t0 - T) / stride) + 1`` pieces.
    """
    if horizon < t0 + T:
        raise ValueError("horizon must be at least t0 + T")
    if stride < sys.sample_dt * (1 - 1e-9):
        raise ValueError("stride must be at least the sample step")
    runs = integrate_ensemble(sys, ensemble, (0.0, horizon), workers=workers, run_prefix="harvest")
    lib = library_from_runs(runs, t0, T, stride)
    lib.meta.update({"horizon": horizon, "ensemble_size": len(ensemble)})
    return (lib, runs) if return_runs else lib


# ---------------------------------------------------------------------------
# Sup-metric geometry
# ---------------------------------------------------------------------------


def _is_hermitian(basis: Basis, c: np.ndarray) -> bool:
    if not isinstance(basis, FourierBasis2D):
        return False
    flip = np.conj(c[..., ::-1, ::-1])
    return bool(np.max(np.abs(c - flip)) <= 1e-12 * max(1.0, float(np.max(np.abs(c)))))


def _embed(basis: Basis, c: np.ndarray, hermitian: bool) -> np.ndarray:
    """Real vectors with Euclidean distance equal to the strong distance.

    For Hermitian Fourier data only the half plane ``kappa_2 > 0`` (plus the
    positive ``kappa_1`` axis, weighted by sqrt 2) is kept.
    """
    lead = c.shape[: c.ndim - len(basis.shape)]
    if not hermitian:
        return basis.embed(c).reshape(lead + (-1,))
    K = basis.K
    w = math.sqrt(2.0)
    upper = c[..., :, :, K + 1 :].reshape(lead + (-1,)) * w
    axis = c[..., :, K + 1 :, K].reshape(lead + (-1,)) * w
    mean = c[..., :, K, K].reshape(lead + (-1,))
    z = np.concatenate((upper, axis, mean), axis=-1)
    return np.ascontiguousarray(z).view(np.float64)


class SupGeometry:
    """Pruned sup-over-time distances between stacks of pieces."""

    def __init__(self, basis: Basis, spec: MetricSpec = STRONG):
        self.basis = basis
        self.spec = spec

    def prepare(self, c):
        if self.spec.kind != "strong":
            return c
        if isinstance(c, WindowStack):
            herm = _is_hermitian(self.basis, c.base)
            return c.map(lambda b: _embed(self.basis, b, herm))
        return _embed(self.basis, c, _is_hermitian(self.basis, c))

    def slice_dist(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Distance matrix between two stacks of single-time points."""
        if self.spec.kind == "strong":
            return pairwise_strong(a, b)
        return pairwise_dist(self.basis, a, b, self.spec)

    def pair_dist(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """``max_t d(X[i, t], Y[i, t])`` row by row (broadcasting)."""
        if self.spec.kind == "strong":
            d = X - Y
            return np.sqrt(np.max(np.einsum("...td,...td->...t", d, d), axis=-1))
        return np.max(_stack_dist(self.basis, X, Y, self.spec), axis=-1)

    def pairs(self, X: np.ndarray, Y: np.ndarray, ii: np.ndarray, jj: np.ndarray, chunk: int | None = None) -> np.ndarray:
        out = np.empty(len(ii))
        per = max(1, int(np.prod(X.shape[1:])))
        chunk = chunk or max(1, 4_000_000 // per)
        for s in range(0, len(ii), chunk):
            out[s : s + chunk] = self.pair_dist(X[ii[s : s + chunk]], Y[jj[s : s + chunk]])
        return out

    def variation(self, X) -> np.ndarray:
        """``max_t d(X[i, t], X[i, 0])`` per piece."""
        out = np.empty(len(X))
        size = _chunk_size(X)
        for s in range(0, len(X), size):
            Xc = X[np.arange(s, min(len(X), s + size))]
            out[s : s + size] = self.pair_dist(Xc, np.broadcast_to(Xc[:, :1], Xc.shape))
        return out

    def slack(self, *stacks: np.ndarray) -> float:
        """Bound on the Gram-expansion error of slice distances."""
        if self.spec.kind != "strong":
            return 1e-12
        r = max(float(np.sqrt(np.max(np.sum(X[:, 0] ** 2, axis=-1)))) + float(np.max(self.variation(X)))
                for X in stacks)
        return 1e-6 * max(r, 1e-300) + 1e-12


def sup_distance(u: Trajectory, v: Trajectory, spec: MetricSpec = STRONG) -> float:
    """Windowed sup distance between two equal-length sample stacks."""
    check_same_basis(u, v)
    if len(u) != len(v):
        raise GridMismatchError("pieces differ in length")
    return float(np.max(_stack_dist(u.basis, u.coeffs, v.coeffs, spec)))


def library_distance_matrix(lib: PieceLibrary, spec: MetricSpec = STRONG, workers: int | None = None) -> np.ndarray:
    """Full exact ``P x P`` sup-distance matrix (row blocks, optionally parallel)."""
    geo = SupGeometry(lib.basis, spec)
    X = geo.prepare(lib.coeffs)
    P = len(lib)
    block = 64
    starts = list(range(0, P, block))

    def rows(b):
        i0 = starts[b]
        ii, jj = np.meshgrid(np.arange(i0, min(P, i0 + block)), np.arange(P), indexing="ij")
        return geo.pairs(X, X, ii.ravel(), jj.ravel()).reshape(ii.shape)

    D = np.concatenate(parallel_map(rows, len(starts), workers))
    return np.maximum(D, D.T)


def library_diameter(lib: PieceLibrary, spec: MetricSpec = STRONG) -> float:
    """``max_{i,k} d(u_i, u_k)`` = the largest diameter of any time section."""
    geo = SupGeometry(lib.basis, spec)
    X = geo.prepare(lib.coeffs)
    best = 0.0
    for j in range(X.shape[1]):
        best = max(best, _set_diameter(geo, X[:, j], best))
    return best


def _set_diameter(geo: SupGeometry, pts: np.ndarray, lower: float = 0.0) -> float:
    n = pts.shape[0]
    if n < 2:
        return 0.0
    if geo.spec.kind == "strong":
        # pairs exceeding `lower` need r_i + r_k > lower around the centroid
        c = pts.mean(axis=0)
        r = np.sqrt(np.sum((pts - c) ** 2, axis=1))
        far = int(np.argmax(r))
        lower = max(lower, float(np.max(geo.slice_dist(pts[far : far + 1], pts))))
        cand = np.flatnonzero(r >= lower - r.max() - 1e-12 * (1 + lower))
        pts = pts[cand]
    best = lower
    block = 512
    for s in range(0, pts.shape[0], block):
        best = max(best, float(geo.slice_dist(pts[s : s + block], pts).max()))
    return best


def _sup_block(geo: "SupGeometry", Q, R, rows: np.ndarray) -> np.ndarray:
    """``max_t`` of the slice distance matrices for query rows ``rows`` (Gram based)."""
    out = None
    for j in range(Q.shape[1]):
        d = geo.slice_dist(Q[rows, j], R[:, j])
        out = d if out is None else np.maximum(out, d, out=out)
    return out


def neighbor_graph(lib: PieceLibrary, radius: float, spec: MetricSpec = STRONG) -> sparse.csr_matrix:
    """Boolean adjacency ``d(u_i, u_k) <= radius`` (diagonal included).

    Pairs whose Gram-based sup distance lies within the round-off slack of
    ``radius`` are re-evaluated exactly.
    """
    geo = SupGeometry(lib.basis, spec)
    X = geo.prepare(lib.coeffs)
    P = X.shape[0]
    slack = geo.slack(X)
    rows_out, cols_out = [], []
    block = 512
    for s0 in range(0, P, block):
        rows = np.arange(s0, min(P, s0 + block))
        D = _sup_block(geo, X, X, rows)
        sure = D <= radius - slack
        ii, jj = np.nonzero((~sure) & (D <= radius + slack))
        if ii.size:
            keep = geo.pairs(X, X, rows[ii], jj) <= radius
            ii, jj = ii[keep], jj[keep]
        si, sj = np.nonzero(sure)
        rows_out += [rows[si], rows[ii]]
        cols_out += [sj, jj]
    r = np.concatenate(rows_out)
    c = np.concatenate(cols_out)
    A = sparse.csr_matrix((np.ones(r.size, dtype=np.int32), (r, c)), shape=(P, P))
    A = ((A + A.T + sparse.identity(P, dtype=np.int32, format="csr")) > 0).astype(np.int32)
    return A.tocsr()


def greedy_cover(adj) -> list[int]:
    """Greedy centres: repeatedly pick the uncovered vertex covering most
    uncovered vertices (ties: lowest index) until everything is covered."""
    A = sparse.csr_matrix(adj, dtype=np.int32)
    n = A.shape[0]
    uncovered = np.ones(n, dtype=bool)
    chosen = []
    while uncovered.any():
        gain = A @ uncovered.astype(np.int32)
        gain = np.where(uncovered, gain, -1)
        k = int(np.argmax(gain))
        chosen.append(k)
        uncovered[A.indices[A.indptr[k] : A.indptr[k + 1]]] = False
    return chosen


def minimum_cover_size(adj) -> int:
    """Exact minimum number of centres covering all vertices (exhaustive, small n)."""
    A = np.asarray(sparse.csr_matrix(adj).todense()) > 0
    n = A.shape[0]
    if n > 20:
        raise ValueError("exhaustive cover search is limited to 20 vertices")
    full = (1 << n) - 1
    masks = [sum(1 << j for j in np.flatnonzero(A[i])) for i in range(n)]
    for k in range(1, n + 1):
        for combo in itertools.combinations(range(n), k):
            m = 0
            for i in combo:
                m |= masks[i]
            if m == full:
                return k
    return n


# ---------------------------------------------------------------------------
# Tracking nets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrackingNet:
    """Net members (library pieces) covering the library within ``epsilon / 2``."""

    epsilon: float
    T: float
    dt: float
    basis: Basis
    members: tuple
    coeffs: np.ndarray
    provenance: tuple
    build: dict = field(default_factory=dict)

    @property
    def basis_id(self) -> str:
        return self.basis.basis_id

    def __len__(self) -> int:
        return len(self.members)

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "T": self.T,
            "dt": self.dt,
            "basis_id": self.basis_id,
            "members": list(self.members),
            "provenance": [list(p) for p in self.provenance],
            "build": self.build,
            "note": KERNEL_PROXY_NOTE,
        }

    def save(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        flat = self.coeffs.reshape((-1,) + self.basis.shape)
        desc = write_coeff_stream(stem.with_suffix(".bin"), self.basis, flat)
        d = self.as_dict()
        d["coeffs"] = desc
        stem.with_suffix(".json").write_text(json.dumps(d, indent=2, sort_keys=True))
        return stem.with_suffix(".json"), stem.with_suffix(".bin")

    @classmethod
    def load(cls, stem) -> "TrackingNet":
        stem = Path(stem)
        d = json.loads(stem.with_suffix(".json").read_text())
        basis, flat = read_coeff_stream(stem.with_suffix(".bin"))
        nt = int(round(d["T"] / d["dt"])) + 1
        coeffs = flat.reshape((len(d["members"]), nt) + basis.shape)
        return cls(d["epsilon"], d["T"], d["dt"], basis, tuple(d["members"]), coeffs,
                   tuple(tuple(p) for p in d["provenance"]), d.get("build", {}))


def build_tracking_net(lib: PieceLibrary, epsilon: float, spec: MetricSpec = STRONG) -> TrackingNet:
    """Greedy ``epsilon/2``-cover of the library in the windowed sup metric."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if len(lib) == 0:
        raise ValueError("empty library")
    A = neighbor_graph(lib, epsilon / 2, spec)
    members = greedy_cover(A)
    geo = SupGeometry(lib.basis, spec)
    X = geo.prepare(lib.coeffs)
    _, cover = nearest_members(X, X[members], geo, prepared=True)
    build = {"radius": epsilon / 2, "library_size": len(lib), "metric": spec.kind,
             "coverage_max": float(cover.max()), "rule": "greedy uncovered-centre, ties by lowest index"}
    return TrackingNet(float(epsilon), lib.T, lib.dt, lib.basis, tuple(int(m) for m in members),
                       lib.coeffs[np.asarray(members)], tuple(lib.provenance[m] for m in members), build)


def nearest_members(Q, R, geo: SupGeometry, prepared: bool = False):
    """For each query piece the nearest reference piece and its sup distance.

    Ties resolve to the lowest reference index.  References whose Gram-based
    distance is within the round-off slack of the best one are re-evaluated
    exactly, so the returned distances are exact.
    """
    if not prepared:
        Q, R = geo.prepare(Q), geo.prepare(R)
    nq, nt = Q.shape[0], Q.shape[1]
    if R.shape[1] != nt:
        raise GridMismatchError("query and reference pieces differ in length")
    slack = geo.slack(Q, R)
    idx = np.empty(nq, dtype=int)
    dist = np.empty(nq)
    block = 512
    for s0 in range(0, nq, block):
        rows = np.arange(s0, min(nq, s0 + block))
        D = _sup_block(geo, Q, R, rows)
        best = D.min(axis=1)
        for k, q in enumerate(rows):
            cand = np.flatnonzero(D[k] <= best[k] + 2 * slack)
            d = geo.pairs(Q, R, np.full(cand.size, q), cand)
            j = int(np.argmin(d))
            idx[q], dist[q] = cand[j], d[j]
    return idx, dist


def _check_compatible(net: TrackingNet, u: Trajectory) -> None:
    check_same_basis(net, u)
    if not math.isclose(net.dt, u.dt, rel_tol=1e-9):
        raise GridMismatchError(f"net dt {net.dt} differs from trajectory dt {u.dt}")


def _windows(u: Trajectory, starts: np.ndarray, nt: int) -> WindowStack:
    idx = [u.index_of(float(s)) for s in starts]
    return WindowStack(u.coeffs[None], np.zeros(len(idx), dtype=np.intp), idx, nt)


@dataclass
class TrackingReport:
    epsilon: float
    t0: float
    stride: float
    tests: list
    passed: bool
    note: str = KERNEL_PROXY_NOTE + "; " + STRIDE_NOTE

    @property
    def n_pass(self) -> int:
        return sum(t["pass"] for t in self.tests)

    @property
    def max_distance(self) -> float:
        return max(t["worst_distance"] for t in self.tests)

    def as_dict(self, full: bool = True) -> dict:
        tests = self.tests if full else [{k: v for k, v in t.items() if k not in ("window_starts", "distances", "argmin")}
                                         for t in self.tests]
        return {"epsilon": self.epsilon, "t0": self.t0, "stride": self.stride, "pass": self.passed,
                "n_pass": self.n_pass, "n_tests": len(self.tests), "max_distance": self.max_distance,
                "tests": tests, "note": self.note}


def verify_tracking(net: TrackingNet, tests: Sequence[Trajectory], t0: float, stride: float | None = None,
                    spec: MetricSpec = STRONG) -> TrackingReport:
    """Check ``min_net sup_window d < epsilon`` for every window start ``t* > t0``.

    Window starts are ``t0 + k stride`` (``k >= 1``, default stride ``T/4``)
    with ``t* + T`` inside the test run.
    """
    stride = net.T / 4 if stride is None else stride
    nt = net.coeffs.shape[1]
    geo = SupGeometry(net.basis, spec)
    R = geo.prepare(net.coeffs)
    out = []
    for u in tests:
        _check_compatible(net, u)
        kmax = int(math.floor((u.t_end - net.T - t0) / stride + 1e-9))
        if kmax < 1:
            raise ValueError(f"test {u.run_id!r} does not extend beyond t0 + T + stride")
        starts = t0 + stride * np.arange(1, kmax + 1)
        W = geo.prepare(_windows(u, starts, nt))
        idx, dist = nearest_members(W, R, geo, prepared=True)
        w = int(np.argmax(dist))
        out.append({
            "run_id": u.run_id,
            "pass": bool(np.all(dist < net.epsilon)),
            "worst_start": float(starts[w]),
            "worst_distance": float(dist[w]),
            "n_windows": int(starts.size),
            "window_starts": starts.tolist(),
            "distances": dist.tolist(),
            "argmin": idx.tolist(),
        })
    return TrackingReport(net.epsilon, float(t0), float(stride), out, all(t["pass"] for t in out))


@dataclass
class Schedule:
    """Net indices (0-based) per window with the achieved sup distances."""

    starts: np.ndarray
    indices: np.ndarray
    distances: np.ndarray
    epsilon: float
    T: float

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def within_eps(self) -> np.ndarray:
        return self.distances < self.epsilon

    def as_dict(self) -> dict:
        return {"T": self.T, "epsilon": self.epsilon, "starts": self.starts.tolist(),
                "indices": self.indices.tolist(), "distances": self.distances.tolist(),
                "within_eps": self.within_eps.tolist()}


def _schedule(net: TrackingNet, u: Trajectory, starts: np.ndarray, spec: MetricSpec) -> Schedule:
    _check_compatible(net, u)
    nt = net.coeffs.shape[1]
    geo = SupGeometry(net.basis, spec)
    if starts.size == 0:
        return Schedule(starts, np.empty(0, int), np.empty(0), net.epsilon, net.T)
    idx, dist = nearest_members(_windows(u, starts, nt), net.coeffs, geo)
    return Schedule(starts, idx, dist, net.epsilon, net.T)


def tracking_schedule(net: TrackingNet, u: Trajectory, j0: int, J: int | None = None,
                      spec: MetricSpec = STRONG) -> Schedule:
    """Argmin net index for the windows ``[jT, (j+1)T]``, ``j = j0..J``.

    ``J`` defaults to the last window inside the run.  Indices are 0-based
    positions in ``net.members``.
    """
    if j0 < 0:
        raise ValueError("j0 must be nonnegative")
    Jmax = int(math.floor(u.t_end / net.T + 1e-9)) - 1
    J = Jmax if J is None else J
    if J > Jmax or J < j0 or j0 * net.T < u.t_start - 1e-9 * net.T:
        raise ValueError(f"windows j0 = {j0} .. J = {J} exceed the run [{u.t_start}, {u.t_end}]")
    starts = net.T * np.arange(j0, J + 1)
    return _schedule(net, u, starts, spec)


def measure_entry_time(net: TrackingNet, u: Trajectory, stride: float | None = None,
                       spec: MetricSpec = STRONG) -> float:
    """First start ``t`` after which every checked window is tracked below epsilon."""
    stride = net.T / 4 if stride is None else stride
    nt = net.coeffs.shape[1]
    kmax = int(math.floor((u.t_end - net.T - u.t_start) / stride + 1e-9))
    starts = u.t_start + stride * np.arange(kmax + 1)
    _check_compatible(net, u)
    _, dist = nearest_members(_windows(u, starts, nt), net.coeffs, SupGeometry(net.basis, spec))
    bad = np.flatnonzero(dist >= net.epsilon)
    if bad.size == 0:
        return float(starts[0])
    if bad[-1] == starts.size - 1:
        return math.inf
    return float(starts[bad[-1] + 1])


@dataclass
class MultiscaleSchedule:
    t0: float
    entry_times: list
    J: list
    boundaries: list
    stages: list

    def as_dict(self) -> dict:
        return {"t0": self.t0, "entry_times": self.entry_times, "J": self.J, "boundaries": self.boundaries,
                "stages": [s.as_dict() for s in self.stages]}


def multiscale_schedule(nets: Sequence[TrackingNet], u: Trajectory, t0: float | None = None,
                        entry_times: Sequence[float] | None = None, spec: MetricSpec = STRONG) -> MultiscaleSchedule:
    """Staged schedule with decreasing accuracies and increasing window lengths.

    With entry times ``t_n`` (measured per net on ``u`` unless given, then
    adjusted so that ``t_2 - t_1 > 1`` and ``t_{n+1} - t_n > T_{n-1}``), the
    start is ``t0 = t_1 + 1`` and stage ``n`` covers ``J_n`` windows of length
    ``T_n`` from ``t0 + sum_{l<n} J_l T_l``, where
    ``J_n = floor((t_{n+1} - start_n) / T_n) + 1``.  The last stage has no
    ``t_{n+1}`` and uses every window that fits in the run.
    """
    if not nets:
        raise ValueError("need at least one net")
    eps = [n.epsilon for n in nets]
    Ts = [n.T for n in nets]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be strictly decreasing")
    if any(b <= a for a, b in zip(Ts, Ts[1:])):
        raise ValueError("window lengths must be strictly increasing")
    for n in nets:
        _check_compatible(n, u)
    dt = u.dt
    if entry_times is None:
        entry_times = [measure_entry_time(n, u, spec=spec) for n in nets]
    tn = [float(x) for x in entry_times]
    if any(not math.isfinite(x) for x in tn):
        raise ValueError("a net never tracks the trajectory; cannot schedule")
    for n in range(1, len(tn)):
        gap = 1.0 if n == 1 else Ts[n - 2]
        tn[n] = max(tn[n], tn[n - 1] + gap + dt)
    tn = [dt * math.ceil(x / dt - 1e-9) for x in tn]
    start = tn[0] + 1.0 if t0 is None else float(t0)
    t0_used = start
    J, bounds, stages = [], [start], []
    for n, net in enumerate(nets):
        if n + 1 < len(nets):
            Jn = int(math.floor((tn[n + 1] - start) / net.T)) + 1
        else:
            Jn = int(math.floor((u.t_end - start) / net.T + 1e-9))
        if Jn < 1 or start + Jn * net.T > u.t_end + 1e-9 * net.T:
            raise ValueError(f"trajectory too short for stage {n + 1}")
        starts = start + net.T * np.arange(Jn)
        stages.append(_schedule(net, u, starts, spec))
        J.append(Jn)
        start = start + Jn * net.T
        bounds.append(start)
    return MultiscaleSchedule(t0_used, tn, J, bounds, stages)


# ---------------------------------------------------------------------------
# Equicontinuity, sections, invariance, translation covering
# ---------------------------------------------------------------------------


@dataclass
class ThetaTable:
    l: np.ndarray
    theta: np.ndarray

    def as_dict(self) -> dict:
        return {"l": self.l.tolist(), "theta": self.theta.tolist()}


def equicontinuity_modulus(lib: PieceLibrary, l_grid: Sequence[float] | None = None,
                           spec: MetricSpec = STRONG) -> ThetaTable:
    """``theta(l) = max_pieces max_{|t1 - t2| <= l} d(v(t1), v(t2))`` on the sample grid.

    The running maximum over lags makes the table nondecreasing; ``theta(0) = 0``.
    """
    nt = lib.n_times
    if l_grid is None:
        lags = np.arange(nt)
    else:
        lags = np.array([_grid_index(l, lib.dt, nt) for l in l_grid], dtype=int)
    geo = SupGeometry(lib.basis, spec)
    X = geo.prepare(lib.coeffs)
    per_lag = np.zeros(nt)
    mmax = int(lags.max()) if lags.size else 0
    for _, Xc in X.chunks(_chunk_size(X)) if isinstance(X, WindowStack) else [(None, X)]:
        for m in range(1, mmax + 1):
            per_lag[m] = max(per_lag[m], float(np.max(geo.pair_dist(Xc[:, m:], Xc[:, :-m]))))
    theta = np.maximum.accumulate(per_lag)
    return ThetaTable(lags * lib.dt, theta[lags])


@dataclass
class SectionReport:
    times: list
    distances: list
    directed: list
    tol: float
    passed: bool
    spread: float
    note: str = KERNEL_PROXY_NOTE

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def section_check(lib: PieceLibrary, times: Sequence[float], omega: SetSample, tol: float,
                  spec: MetricSpec = STRONG) -> SectionReport:
    """Hausdorff distance between ``{piece(t)}`` and the omega-limit sample for each t."""
    check_same_basis(lib, omega)
    ds, dirs = [], []
    for t in times:
        a, b = directed_hausdorff_pair(lib.section(t), omega, spec)
        ds.append(max(a, b))
        dirs.append((a, b))
    mx = max(ds)
    return SectionReport([float(t) for t in times], ds, dirs, float(tol), mx <= tol, mx - min(ds))


@dataclass
class InvarianceReport:
    t: float
    forward: float
    reverse: float
    tol: float
    passed: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def invariance_check(omega: SetSample, sys: SystemHandle, t: float, tol: float,
                     spec: MetricSpec = STRONG, workers: int | None = None) -> InvarianceReport:
    """Forward image ``R(t) omega`` against ``omega``.

    ``forward`` is ``sup_{image} inf_{omega} d`` (the checkable containment);
    ``reverse`` is ``sup_{omega} inf_{image} d`` (surjectivity proxy).
    """
    image = reach_sample(sys, omega, t, workers=workers)
    fwd, rev = directed_hausdorff_pair(image, omega, spec)
    return InvarianceReport(float(t), fwd, rev, float(tol), fwd <= tol)


@dataclass
class CoveringTable:
    epsilon: float
    window: float
    shifts: np.ndarray
    counts: np.ndarray

    def as_dict(self) -> dict:
        return {"epsilon": self.epsilon, "window": self.window, "shifts": self.shifts.tolist(),
                "counts": self.counts.tolist()}


def translate_covering(u: Trajectory, epsilon: float, shifts: Sequence[float], window: float | None = None,
                       checkpoints: Sequence[int] | None = None, spec: MetricSpec = STRONG) -> CoveringTable:
    """Greedy cover counts (radius ``epsilon``) of ``{T(h) u : h in shifts}``.

    Translates are compared on the window ``[t_start, t_start + window]``
    (default: the longest window common to all shifts).  ``counts[k]`` is the
    cover count of the first ``checkpoints[k]`` shifts (default: every prefix),
    so saturation of the counts signals a precompact translation family.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    shifts = np.sort(np.asarray(shifts, dtype=float))
    if shifts.size == 0:
        raise ValueError("no shifts")
    if shifts[0] < 0 or shifts[-1] > u.t_end - u.t_start:
        raise ValueError("shift out of range")
    if window is None:
        window = u.t_end - u.t_start - shifts[-1]
    nt = int(round(window / u.dt)) + 1
    starts = u.t_start + shifts
    if np.any(starts + window > u.t_end + 1e-9 * u.dt):
        raise ValueError("shift out of range for the requested window")
    lib = PieceLibrary(u.basis, u.dt, (nt - 1) * u.dt, _windows(u, starts, nt))
    A = neighbor_graph(lib, epsilon, spec)
    n = len(lib)
    checkpoints = np.arange(1, n + 1) if checkpoints is None else np.asarray(checkpoints, dtype=int)
    counts = np.array([len(greedy_cover(A[:k, :k])) for k in checkpoints])
    return CoveringTable(float(epsilon), float(window), shifts[checkpoints - 1], counts)
