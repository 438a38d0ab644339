"""Batch experiments: TOML manifests in, persisted runs and JSON/CSV reports out.

A manifest has four parts::

    seed = 0
    [system]                  # solver and its parameters
    solver = "rds"
    ell = 3.141592653589793
    M = 32
    dt = 0.01
    sample_every = 5
    [symbol]                  # force and (RDS) nonlinearity
    force = "none"
    nonlinearity = "cubic"
    lam = 2.5
    [pipeline.harvest]        # one table per stage
    ensemble = 4
    ...

Stages run in dependency order.  Each stage directory under the output
directory holds its artifacts plus ``stage.json`` with a content hash of
everything the stage depends on; re-running skips stages whose hash is
unchanged.  Every subcommand is a one-stage pipeline whose flags mirror the
manifest fields, so ``evosys build-net --library lib --epsilon 0.2`` is the
same as a manifest with ``[pipeline.net] library = "lib"; epsilon = 0.2``.

Exit codes: 0 success, 1 validation error, 2 solver failure,
3 verification failure (tracking or section check failed).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import re
import sys
from dataclasses import replace
from graphlib import TopologicalSorter
from importlib import resources
from pathlib import Path

import numpy as np

from . import attractor, forcing, nse2d, rds
from .io import read_coeff_stream, write_coeff_stream
from .phase import BasisMismatchError, GridMismatchError, SetSample, check_same_basis
from .stepping import SolverInstabilityError, StepSizeError
from .systems import KERNEL_PROXY_NOTE, SystemHandle, load_trajectory, omega_limit_sample, save_trajectory

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3


class ManifestError(ValueError):
    """Invalid manifest; the message names the field (and line when known)."""


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

NUM, INT, STR, BOOL, LIST = "number", "integer", "string", "boolean", "list of numbers"
AUTO = "number or 'auto'"

TOP_KEYS = {"seed": INT, "output": STR, "workers": INT}
SYSTEM_KEYS = {
    "solver": STR, "dt": NUM, "sample_every": INT, "guard_radius": NUM,
    "L": NUM, "nu": NUM, "K": INT, "dealias": BOOL,
    "ell": NUM, "a": NUM, "M": INT,
}
NSE_ONLY, RDS_ONLY = {"L", "nu", "K", "dealias"}, {"ell", "a", "M"}
SYMBOL_KEYS = {
    "force": STR, "amplitude": NUM, "omega1": NUM, "n_max": INT,
    "nonlinearity": STR, "lam": NUM, "p": NUM,
    "expr": STR, "gamma": NUM, "Cdiss": NUM, "Cgrow": NUM,
}
STAGES = {
    "simulate": {"runs": INT, "radius": AUTO, "t_end": NUM},
    "harvest": {"ensemble": INT, "radius": AUTO, "t0": AUTO, "T": NUM, "stride": NUM, "horizon": AUTO},
    "net": {"epsilon": NUM, "epsilon_frac": NUM, "library": STR, "dump_distances": BOOL},
    "verify": {"tests": INT, "radius": AUTO, "t0": NUM, "stride": NUM, "horizon": NUM,
               "net": STR, "tests_dir": STR},
    "schedule": {"j0": INT, "J": INT, "radius": AUTO, "horizon": NUM, "net": STR, "trajectory": STR},
    "classify_force": {"eps": NUM, "probe_horizon": NUM, "probe_step": NUM},
    "classify_nonlinearity": {"R": NUM, "tol": NUM, "v": LIST},
    "equicontinuity": {"l": LIST, "library": STR},
    "section": {"times": LIST, "tol": NUM, "tol_factor": NUM, "omega_size": INT, "radius": AUTO,
                "transient": NUM, "omega_horizon": NUM, "omega_stride": NUM,
                "library": STR, "net": STR, "omega": STR},
}
# stage -> (artifact it needs, producing stage, manifest key that replaces it)
NEEDS = {
    "net": [("library", "harvest", "library")],
    "verify": [("net", "net", "net")],
    "schedule": [("net", "net", "net")],
    "equicontinuity": [("library", "harvest", "library")],
    "section": [("library", "harvest", "library"), ("net", "net", "net")],
}
SEED_CODES = {"simulate": 1, "harvest": 2, "verify": 3, "schedule": 4, "section": 5}


def _locate(text: str | None, table: str, key: str | None) -> str:
    """Best-effort ``line N`` for a key inside a TOML table."""
    if not text:
        return ""
    current = ""
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip()
            if key is None and current == table:
                return f" (line {n})"
            continue
        if key is not None and current == table and re.match(rf"^{re.escape(key)}\s*=", s):
            return f" (line {n})"
    return ""


def _check_type(value, kind: str) -> bool:
    if kind == NUM:
        return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    if kind == INT:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == STR:
        return isinstance(value, str)
    if kind == BOOL:
        return isinstance(value, bool)
    if kind == AUTO:
        return value == "auto" or _check_type(value, NUM)
    if kind == LIST:
        return isinstance(value, list) and all(_check_type(v, NUM) for v in value)
    return False


def _check_block(block, schema: dict, table: str, text: str | None) -> None:
    if not isinstance(block, dict):
        raise ManifestError(f"{table}: expected a table{_locate(text, table, None)}")
    for k, v in block.items():
        where = f"{table}.{k}" if table else k
        if k not in schema:
            raise ManifestError(f"{where}: unknown field{_locate(text, table, k)}")
        if not _check_type(v, schema[k]):
            raise ManifestError(f"{where}: expected {schema[k]}, got {v!r}{_locate(text, table, k)}")


def validate_manifest(m: dict, text: str | None = None) -> dict:
    """Check fields, builtins and stage dependencies; returns the manifest."""
    top = {k: v for k, v in m.items() if k not in ("system", "symbol", "pipeline")}
    _check_block(top, TOP_KEYS, "", text)
    system = m.get("system")
    if system is None:
        raise ManifestError("system: missing table")
    _check_block(system, SYSTEM_KEYS, "system", text)
    solver = system.get("solver")
    if solver not in ("nse2d", "rds"):
        raise ManifestError(f"system.solver: expected 'nse2d' or 'rds', got {solver!r}{_locate(text, 'system', 'solver')}")
    wrong = (RDS_ONLY if solver == "nse2d" else NSE_ONLY) & set(system)
    if wrong:
        k = sorted(wrong)[0]
        raise ManifestError(f"system.{k}: not a parameter of solver {solver!r}{_locate(text, 'system', k)}")
    symbol = m.get("symbol", {})
    _check_block(symbol, SYMBOL_KEYS, "symbol", text)
    force = symbol.get("force", "none")
    if force != "none" and force not in forcing.CATALOG:
        raise ManifestError(f"symbol.force: unknown built-in {force!r}{_locate(text, 'symbol', 'force')}")
    nl = symbol.get("nonlinearity")
    if nl is not None:
        if solver != "rds":
            raise ManifestError(f"symbol.nonlinearity: only the rds solver takes a nonlinearity{_locate(text, 'symbol', 'nonlinearity')}")
        if nl not in rds.NONLINEARITIES + ("none", "expr"):
            raise ManifestError(f"symbol.nonlinearity: unknown built-in {nl!r}{_locate(text, 'symbol', 'nonlinearity')}")
        if nl == "expr":
            for k in ("expr", "p", "gamma", "Cdiss", "Cgrow"):
                if k not in symbol:
                    raise ManifestError(f"symbol.{k}: required for nonlinearity = 'expr'")
    pipeline = m.get("pipeline", {})
    if not isinstance(pipeline, dict):
        raise ManifestError("pipeline: expected a table")
    for name, cfg in pipeline.items():
        if name not in STAGES:
            raise ManifestError(f"pipeline.{name}: unknown stage; choose from {sorted(STAGES)}{_locate(text, 'pipeline.' + name, None)}")
        _check_block(cfg, STAGES[name], f"pipeline.{name}", text)
        for art, producer, key in NEEDS.get(name, []):
            if art == "net" and name == "section" and "tol" in cfg:
                continue
            if key not in cfg and producer not in pipeline:
                raise ManifestError(f"pipeline.{name}: needs a {art}; add a [pipeline.{producer}] stage or set {key} = <path>")
    for name in ("net",):
        cfg = pipeline.get(name, {})
        if "epsilon" in cfg and not cfg["epsilon"] > 0:
            raise ManifestError(f"pipeline.net.epsilon: must be positive{_locate(text, 'pipeline.net', 'epsilon')}")
    try:
        _ = build_system(m)
    except (ValueError, TypeError) as exc:
        raise ManifestError(f"system/symbol: {exc}") from exc
    return m


def load_manifest(path) -> tuple[dict, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"{path}: cannot read manifest ({exc})") from exc
    try:
        m = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    return validate_manifest(m, text), text


def manifest_hash(m: dict) -> str:
    body = {k: v for k, v in m.items() if k not in ("output", "workers")}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def bundled_manifest(name: str) -> Path:
    """Path of a manifest shipped with the package (``singleton-attractor`` ...)."""
    p = resources.files("evosys") / "manifests" / f"{name}.toml"
    if not p.is_file():
        raise ManifestError(f"no bundled manifest {name!r}")
    return Path(str(p))


# ---------------------------------------------------------------------------
# System construction
# ---------------------------------------------------------------------------


def build_system(m: dict) -> SystemHandle:
    s = dict(m["system"])
    solver = s.pop("solver")
    se = s.pop("sample_every", 1)
    guard = s.pop("guard_radius", None)
    params = nse2d.NseParams(**s) if solver == "nse2d" else rds.RdsParams(**s)
    sym = m.get("symbol", {})
    force = sym.get("force", "none")
    if force == "none":
        symbol = forcing.zero_symbol()
    else:
        extra = {k: sym[k] for k in ("omega1", "n_max") if k in sym}
        symbol = forcing.builtin_force(force, params.basis, sym.get("amplitude", 1.0), **extra)
    nl = sym.get("nonlinearity", "none")
    if nl == "expr":
        f = rds.nonlinearity_from_expr(sym["expr"], sym["p"], sym["gamma"], sym["Cdiss"], sym["Cgrow"])
    elif nl != "none":
        f = rds.builtin_nonlinearity(nl, sym.get("p"), sym.get("lam", 0.0))
    else:
        f = None
    symbol = replace(symbol, nonlinearity=f, id=symbol.id if f is None else f"{symbol.id}+{f.tag}")
    return SystemHandle(solver, params, symbol, sample_every=se, guard_radius=guard)


def _on_grid(t: float, step: float) -> float:
    return step * math.ceil(t / step - 1e-9)


class Context:
    """State shared by the stages of one pipeline run."""

    def __init__(self, m: dict, out: Path, workers: int | None):
        self.m = m
        self.out = out
        self.workers = workers
        self.sys = build_system(m)
        self.seed = int(m.get("seed", 0))
        self.hash = manifest_hash(m)
        self.artifacts: dict = {}
        self._ball = None

    def rng(self, stage: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, SEED_CODES.get(stage, 0)])

    @property
    def ball(self):
        if self._ball is None:
            G = forcing.translation_bound_norm(self.sys.symbol) if self.sys.symbol.force is not None else 0.0
            self._ball = self.sys.absorbing_ball(G)
        return self._ball

    def radius(self, value, field: str) -> float:
        if value == "auto":
            if not self.ball.R > 0:
                raise ManifestError(f"{field}: 'auto' needs a positive absorbing radius; give a number")
            return 10 * self.ball.R
        return float(value)

    def entry_time(self) -> float:
        """Predicted entry time from ``|u0| = 10 R`` into the absorbing ball."""
        if not self.ball.R > 0:
            raise ManifestError("'auto' times need a positive absorbing radius; give numbers")
        return self.ball.entry_time(10 * self.ball.R)

    def ensemble(self, stage: str, n: int, radius: float) -> SetSample:
        rng = self.rng(stage)
        return SetSample.from_vectors([self.sys.random_initial(rng, radius) for _ in range(n)])

    def report(self, body: dict, **tolerances) -> dict:
        body = dict(body)
        body["manifest_hash"] = self.hash
        body["tolerances"] = tolerances
        body.setdefault("note", KERNEL_PROXY_NOTE)
        return body


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def _harvest_times(ctx: Context, cfg: dict) -> tuple[float, float, float, float]:
    T = float(cfg.get("T", 1.0))
    stride = float(cfg.get("stride", T / 4))
    step = ctx.sys.sample_dt
    t0 = cfg.get("t0", "auto")
    if t0 == "auto":
        # larger of 5x the R -> R entry time and the 10R -> R entry time
        t0 = max(5 * ctx.ball.entry_time(ctx.ball.R), ctx.entry_time())
    t0 = _on_grid(float(t0), stride)
    horizon = cfg.get("horizon", "auto")
    horizon = 50 * ctx.entry_time() if horizon == "auto" else float(horizon)
    horizon = _on_grid(max(horizon, t0 + T), step)
    return t0, T, stride, horizon


def stage_simulate(ctx: Context, cfg: dict, d: Path) -> dict:
    n = int(cfg.get("runs", 1))
    radius = ctx.radius(cfg.get("radius", "auto"), "pipeline.simulate.radius")
    t_end = float(cfg.get("t_end", 1.0))
    A = ctx.ensemble("simulate", n, radius)
    rows, runs = [], []
    for i in range(n):
        u = ctx.sys.integrate(A[i], (0.0, t_end), run_id=f"sim{i}")
        save_trajectory(d / f"run{i}", u, manifest_hash=ctx.hash)
        rows += [(u.run_id, float(t), float(x)) for t, x in zip(u.times, u.norms())]
        runs.append({"run_id": u.run_id, "norm_start": float(u.norms()[0]), "norm_end": float(u.norms()[-1])})
    _write_csv(d / "norms.csv", ["run_id", "t", "norm"], rows)
    rep = ctx.report({"runs": runs, "t_end": t_end, "radius": radius}, dt=ctx.sys.params.dt)
    _write_json(d / "simulate.json", rep)
    return {"summary": f"{n} run(s) to t = {t_end}"}


def stage_harvest(ctx: Context, cfg: dict, d: Path) -> dict:
    t0, T, stride, horizon = _harvest_times(ctx, cfg)
    n = int(cfg.get("ensemble", 4))
    radius = ctx.radius(cfg.get("radius", "auto"), "pipeline.harvest.radius")
    A = ctx.ensemble("harvest", n, radius)
    lib = attractor.harvest_pieces(ctx.sys, A, t0, T, stride, horizon, workers=ctx.workers)
    lib.save(d / "library")
    diam = attractor.library_diameter(lib)
    rep = ctx.report({"t0": t0, "T": T, "stride": stride, "horizon": horizon, "ensemble": n, "radius": radius,
                      "pieces": len(lib), "diameter": diam, "absorbing_ball": ctx.ball.as_dict()},
                     dt=ctx.sys.params.dt)
    _write_json(d / "harvest.json", rep)
    ctx.artifacts["library"] = lib
    ctx.artifacts["t0"] = t0
    return {"summary": f"{len(lib)} pieces, diameter {diam:.6g}"}


def _library(ctx: Context, cfg: dict) -> attractor.PieceLibrary:
    if "library" in cfg:
        return attractor.PieceLibrary.load(cfg["library"])
    return ctx.artifacts["library"]


def _net(ctx: Context, cfg: dict) -> attractor.TrackingNet:
    if "net" in cfg:
        return attractor.TrackingNet.load(cfg["net"])
    return ctx.artifacts["net"]


def stage_net(ctx: Context, cfg: dict, d: Path) -> dict:
    lib = _library(ctx, cfg)
    diam = attractor.library_diameter(lib)
    eps = float(cfg["epsilon"]) if "epsilon" in cfg else float(cfg.get("epsilon_frac", 0.1)) * diam
    if not eps > 0:
        raise ManifestError("pipeline.net: epsilon is zero (library diameter 0); set epsilon explicitly")
    net = attractor.build_tracking_net(lib, eps)
    net.save(d / "net")
    if cfg.get("dump_distances", False):
        D = attractor.library_distance_matrix(lib, workers=ctx.workers)
        np.savetxt(d / "distances.csv", D, delimiter=",", fmt="%.17g")
    rep = ctx.report({"net": net.as_dict(), "library_diameter": diam, "size": len(net)},
                     epsilon=eps, cover_radius=eps / 2)
    _write_json(d / "net_report.json", rep)
    ctx.artifacts["net"] = net
    return {"summary": f"net of {len(net)} member(s) at epsilon {eps:.6g}"}


def stage_verify(ctx: Context, cfg: dict, d: Path) -> dict:
    net = _net(ctx, cfg)
    check_same_basis(net, ctx.sys.basis)
    t0 = cfg.get("t0", ctx.artifacts.get("t0"))
    if t0 is None:
        raise ManifestError("pipeline.verify.t0: required when the net is loaded from a file")
    stride = float(cfg.get("stride", net.T / 4))
    if "tests_dir" in cfg:
        tests = [load_trajectory(p.parent) for p in sorted(Path(cfg["tests_dir"]).glob("*/manifest.json"))]
        if not tests:
            raise ManifestError(f"pipeline.verify.tests_dir: no runs found in {cfg['tests_dir']}")
    else:
        n = int(cfg.get("tests", 10))
        radius = ctx.radius(cfg.get("radius", "auto"), "pipeline.verify.radius")
        horizon = cfg.get("horizon")
        horizon = _on_grid(float(horizon) if horizon is not None else float(t0) + 2 * net.T + stride,
                           ctx.sys.sample_dt)
        A = ctx.ensemble("verify", n, radius)
        tests = [ctx.sys.integrate(A[i], (0.0, horizon), run_id=f"test{i}") for i in range(n)]
    rep = attractor.verify_tracking(net, tests, float(t0), stride)
    rows = [(t["run_id"], s, x, k) for t in rep.tests for s, x, k in zip(t["window_starts"], t["distances"], t["argmin"])]
    _write_csv(d / "distances.csv", ["run_id", "window_start", "distance", "argmin"], rows)
    _write_json(d / "tracking_report.json", ctx.report(rep.as_dict(full=False), epsilon=net.epsilon, stride=stride))
    summary = f"tracking: {'PASS' if rep.passed else 'FAIL'} ({rep.n_pass}/{len(rep.tests)}, max distance {rep.max_distance:.6g} vs epsilon {net.epsilon:.6g})"
    return {"summary": summary, "failed": not rep.passed}


def stage_schedule(ctx: Context, cfg: dict, d: Path) -> dict:
    net = _net(ctx, cfg)
    check_same_basis(net, ctx.sys.basis)
    j0 = int(cfg.get("j0", 0))
    if "trajectory" in cfg:
        u = load_trajectory(cfg["trajectory"])
    else:
        radius = ctx.radius(cfg.get("radius", "auto"), "pipeline.schedule.radius")
        horizon = float(cfg.get("horizon", (j0 + 4) * net.T))
        u = ctx.sys.integrate(ctx.ensemble("schedule", 1, radius)[0], (0.0, _on_grid(horizon, ctx.sys.sample_dt)),
                              run_id="schedule0")
    s = attractor.tracking_schedule(net, u, j0, cfg.get("J"))
    _write_json(d / "schedule.json", ctx.report(s.as_dict(), epsilon=net.epsilon))
    _write_csv(d / "schedule.csv", ["window_start", "index", "distance"],
               zip(s.starts.tolist(), s.indices.tolist(), s.distances.tolist()))
    return {"summary": f"{len(s)} window(s), {int(s.within_eps.sum())} within epsilon"}


def stage_classify_force(ctx: Context, cfg: dict, d: Path) -> dict:
    if ctx.sys.symbol.force is None:
        raise ManifestError("pipeline.classify_force: the symbol has no force")
    probe = forcing.ProbeGrid(horizon=float(cfg.get("probe_horizon", 1000.0)), step=float(cfg.get("probe_step", 0.05)))
    eps = float(cfg.get("eps", 1e-2))
    c = forcing.classify_force(ctx.sys.symbol, eps=eps, probe=probe)
    body = c.as_dict()
    body["truth"] = ctx.sys.symbol.truth
    _write_json(d / "classification.json", ctx.report(body, eps=eps, probe_horizon=probe.horizon, probe_step=probe.step))
    _write_csv(d / "defect.csv", ["delta", "defect"], c.normality.table)
    tb = "yes" if c.translation_bounded else "no"
    return {"summary": f"translation bounded: {tb}; normal: {'yes' if c.normal else 'no'} (defect table attached)"}


def stage_classify_nonlinearity(ctx: Context, cfg: dict, d: Path) -> dict:
    f = ctx.sys.symbol.nonlinearity
    if f is None:
        raise ManifestError("pipeline.classify_nonlinearity: the symbol has no nonlinearity")
    R = float(cfg.get("R", 4.0))
    tol = float(cfg.get("tol", 0.05))
    tab = forcing.equicontinuity_modulus(f, R, tol=tol)
    v = np.asarray(cfg.get("v", np.linspace(-R, R, 65)), dtype=float)
    pl = forcing.pointwise_limit_probe(f, v)
    val = rds.validate_nonlinearity(f, np.linspace(-2 * R, 2 * R, 801), np.linspace(0.0, 50.0, 51))
    body = {"nonlinearity": f.tag, "equicontinuity": tab.as_dict(), "pointwise_limit": pl.as_dict(),
            "constants": {"p": f.p, "gamma": f.gamma, "Cdiss": f.Cdiss, "Cgrow": f.Cgrow},
            "constants_check": val.as_dict()}
    _write_json(d / "classification.json", ctx.report(body, tol=tol, R=R))
    _write_csv(d / "theta.csv", ["l", "theta"], zip(tab.l_grid.tolist(), tab.theta.tolist()))
    verdict = "PASS" if tab.passes else "FAIL"
    return {"summary": f"equicontinuity: {verdict} (θ table attached)"}


def stage_equicontinuity(ctx: Context, cfg: dict, d: Path) -> dict:
    lib = _library(ctx, cfg)
    tab = attractor.equicontinuity_modulus(lib, cfg.get("l"))
    diam = attractor.library_diameter(lib)
    _write_json(d / "theta.json", ctx.report({**tab.as_dict(), "library_diameter": diam}))
    _write_csv(d / "theta.csv", ["l", "theta"], zip(tab.l.tolist(), tab.theta.tolist()))
    return {"summary": f"theta({tab.l[-1]:.6g}) = {tab.theta[-1]:.6g}, diameter {diam:.6g}"}


def stage_section(ctx: Context, cfg: dict, d: Path) -> dict:
    lib = _library(ctx, cfg)
    if "tol" in cfg:
        tol = float(cfg["tol"])
    else:
        tol = float(cfg.get("tol_factor", 2.0)) * _net(ctx, cfg).epsilon
    times = cfg.get("times", [0.0, lib.T / 2, lib.T])
    if "omega" in cfg:
        basis, pts = read_coeff_stream(cfg["omega"])
        omega = SetSample(basis, pts)
    else:
        t0 = float(lib.meta.get("t0", 0.0))
        transient = float(cfg.get("transient", t0))
        horizon = float(cfg.get("omega_horizon", transient + 10 * lib.T))
        stride = float(cfg.get("omega_stride", lib.T / 4))
        radius = ctx.radius(cfg.get("radius", "auto"), "pipeline.section.radius")
        A = ctx.ensemble("section", int(cfg.get("omega_size", 4)), radius)
        omega = omega_limit_sample(ctx.sys, A, transient, horizon, stride, workers=ctx.workers)
        write_coeff_stream(d / "omega.bin", omega.basis, omega.points)
    rep = attractor.section_check(lib, times, omega, tol)
    _write_json(d / "section.json", ctx.report(rep.as_dict(), tol=tol))
    return {"summary": f"section: {'PASS' if rep.passed else 'FAIL'} (max Hausdorff {max(rep.distances):.6g} vs tol {tol:.6g})",
            "failed": not rep.passed}


STAGE_FUNCS = {
    "simulate": stage_simulate, "harvest": stage_harvest, "net": stage_net, "verify": stage_verify,
    "schedule": stage_schedule, "classify_force": stage_classify_force,
    "classify_nonlinearity": stage_classify_nonlinearity, "equicontinuity": stage_equicontinuity,
    "section": stage_section,
}


def _loader(name: str, d: Path, ctx: Context) -> None:
    """Rehydrate the in-memory artifacts of a skipped stage."""
    if name == "harvest":
        ctx.artifacts["library"] = attractor.PieceLibrary.load(d / "library")
        ctx.artifacts["t0"] = json.loads((d / "harvest.json").read_text())["t0"]
    elif name == "net":
        ctx.artifacts["net"] = attractor.TrackingNet.load(d / "net")


# ---------------------------------------------------------------------------
# Pipeline driver
# ---------------------------------------------------------------------------


def stage_order(pipeline: dict) -> list[str]:
    graph = {}
    for name, cfg in pipeline.items():
        deps = set()
        for _, producer, key in NEEDS.get(name, []):
            if key not in cfg and producer in pipeline:
                deps.add(producer)
        graph[name] = deps
    return list(TopologicalSorter(graph).static_order())


def run_manifest(m: dict, out, workers: int | None = None, echo=print) -> int:
    """Execute a validated manifest into ``out``; returns the exit code."""
    out = Path(out)
    ctx = Context(m, out, workers)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "manifest.json", {"manifest": m, "manifest_hash": ctx.hash})
    pipeline = m.get("pipeline", {})
    hashes: dict = {}
    code = EXIT_OK
    for name in stage_order(pipeline):
        cfg = pipeline[name]
        deps = [hashes[p] for _, p, k in NEEDS.get(name, []) if k not in cfg and p in hashes]
        h = hashlib.sha256(json.dumps({"seed": ctx.seed, "system": m["system"], "symbol": m.get("symbol", {}),
                                       "stage": name, "cfg": cfg, "deps": deps}, sort_keys=True).encode()).hexdigest()
        hashes[name] = h
        d = out / name
        marker = d / "stage.json"
        if marker.is_file() and json.loads(marker.read_text()).get("hash") == h:
            _loader(name, d, ctx)
            info = json.loads(marker.read_text())
            echo(f"[{name}] up to date: {info.get('summary', '')}")
            if info.get("failed"):
                code = EXIT_VERIFY
            continue
        d.mkdir(parents=True, exist_ok=True)
        info = STAGE_FUNCS[name](ctx, cfg, d)
        _write_json(marker, {"hash": h, "manifest_hash": ctx.hash, **info})
        echo(f"[{name}] {info['summary']}")
        if info.get("failed"):
            code = EXIT_VERIFY
    return code


def summarize(out) -> dict:
    """Collect the ``stage.json`` summaries of an output directory."""
    out = Path(out)
    if not (out / "manifest.json").is_file():
        raise ManifestError(f"{out}: not an evosys output directory")
    stages = {}
    for marker in sorted(out.glob("*/stage.json")):
        stages[marker.parent.name] = json.loads(marker.read_text())
    man = json.loads((out / "manifest.json").read_text())
    return {"manifest_hash": man["manifest_hash"], "stages": stages,
            "all_pass": not any(s.get("failed") for s in stages.values())}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

SUBCOMMANDS = {
    "simulate": "simulate", "harvest": "harvest", "build-net": "net", "verify-tracking": "verify",
    "schedule": "schedule", "classify-force": "classify_force",
    "classify-nonlinearity": "classify_nonlinearity", "equicontinuity": "equicontinuity",
    "section-check": "section",
}

HELP = {
    "dt": "time step (time units)", "sample_every": "steps between stored samples",
    "guard_radius": "abort radius for |u| (L2 norm)", "L": "box side (length)", "nu": "viscosity",
    "K": "Fourier truncation |k_i| <= K", "dealias": "dealias the nonlinear term (true/false)",
    "ell": "interval length", "a": "diffusion coefficient", "M": "number of sine modes",
    "force": f"built-in force: none or one of {', '.join(forcing.CATALOG)}", "amplitude": "force amplitude (V' norm)",
    "omega1": "quasiperiodic base frequency (rad / time)", "n_max": "spike-train spike count",
    "nonlinearity": f"built-in nonlinearity: none, expr or one of {', '.join(rds.NONLINEARITIES)}",
    "lam": "cubic: f = v^3 - lam v", "p": "growth exponent", "expr": "f(v, t) expression",
    "gamma": "dissipativity constant", "Cdiss": "dissipativity offset", "Cgrow": "growth constant",
    "runs": "number of runs", "radius": "initial-data norm (L2) or 'auto' = 10 R",
    "t_end": "final time", "ensemble": "number of harvest runs", "t0": "transient (time) or 'auto'",
    "T": "piece length (time)", "stride": "window-start spacing (time)", "horizon": "run length (time) or 'auto'",
    "epsilon": "net accuracy (L2 sup distance)", "epsilon_frac": "epsilon as a fraction of the library diameter",
    "library": "library stem (library.json/.bin)", "dump_distances": "write the library distance matrix CSV",
    "tests": "number of fresh test runs", "net": "net stem (net.json/.bin)", "tests_dir": "directory of saved runs",
    "j0": "first window index", "J": "last window index", "trajectory": "saved run directory",
    "eps": "normality threshold on window integrals", "probe_horizon": "probe horizon (time)",
    "probe_step": "probe spacing of window starts (time)", "R": "value range |v| <= R",
    "tol": "pass tolerance", "v": "values for the pointwise-limit probe", "l": "gaps (time, multiples of dt)",
    "times": "section times in [0, T]", "tol_factor": "tol as a multiple of the net epsilon",
    "omega_size": "omega-limit ensemble size", "transient": "omega-limit transient (time)",
    "omega_horizon": "omega-limit horizon (time)", "omega_stride": "omega-limit snapshot spacing (time)",
    "seed": "seed fixing all initial data", "workers": "cap on worker processes",
}


def _parse_value(kind: str):
    def conv(s: str):
        if kind == INT:
            return int(s)
        if kind == NUM:
            return float(s)
        if kind == BOOL:
            if s.lower() not in ("true", "false"):
                raise argparse.ArgumentTypeError("expected true or false")
            return s.lower() == "true"
        if kind == AUTO:
            return s if s == "auto" else float(s)
        if kind == LIST:
            return [float(x) for x in s.split(",") if x.strip()]
        return s

    conv.__name__ = kind
    return conv


def _add_fields(p: argparse.ArgumentParser, schema: dict, prefix: str) -> None:
    for k, kind in schema.items():
        if k == "solver":
            continue
        flag = "--" + k.replace("_", "-")
        p.add_argument(flag, dest=f"{prefix}{k}", type=_parse_value(kind), default=None,
                       help=f"{HELP.get(k, k)} [{kind}]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evosys", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: manifest 'output' or ./evosys-out)")
    common.add_argument("--workers", type=int, default=None, help=HELP["workers"])

    r = sub.add_parser("run", parents=[common], help="execute a manifest (path or bundled name)")
    r.add_argument("manifest", help="TOML manifest path or bundled manifest name")

    rep = sub.add_parser("report", help="summarise an output directory")
    rep.add_argument("out", help="output directory of a previous run")

    system = argparse.ArgumentParser(add_help=False)
    g = system.add_argument_group("system and symbol (mirror the [system] and [symbol] tables)")
    g.add_argument("--manifest", help="take system/symbol/stage defaults from this manifest")
    g.add_argument("--solver", dest="system.solver", choices=("nse2d", "rds"), default=None, help="solver")
    g.add_argument("--seed", type=int, default=None, help=HELP["seed"])
    _add_fields(g, SYSTEM_KEYS, "system.")
    _add_fields(g, SYMBOL_KEYS, "symbol.")
    for cmd, stage in SUBCOMMANDS.items():
        sp = sub.add_parser(cmd, parents=[common, system], help=f"one-stage pipeline: [pipeline.{stage}]")
        sg = sp.add_argument_group(f"stage fields (mirror [pipeline.{stage}])")
        _add_fields(sg, STAGES[stage], "stage.")
    return parser


def _manifest_from_args(args, stage: str) -> tuple[dict, str | None]:
    text = None
    if args.manifest:
        m, text = load_manifest(args.manifest)
        m = json.loads(json.dumps(m))
    else:
        m = {"system": {}, "symbol": {}}
    m.setdefault("system", {})
    m.setdefault("symbol", {})
    base_stage = m.get("pipeline", {}).get(stage, {})
    m["pipeline"] = {stage: dict(base_stage)}
    for key, val in vars(args).items():
        if val is None or "." not in key:
            continue
        block, field = key.split(".", 1)
        if block == "stage":
            m["pipeline"][stage][field] = val
        else:
            m[block][field] = val
    if args.seed is not None:
        m["seed"] = args.seed
    if not m["system"].get("solver"):
        raise ManifestError("system.solver: required (use --solver or --manifest)")
    return validate_manifest(m, text), text


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; here 2 means solver failure
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    try:
        if args.command == "report":
            s = summarize(args.out)
            _write_json(Path(args.out) / "summary.json", s)
            for name, info in s["stages"].items():
                print(f"[{name}] {info.get('summary', '')}")
            return EXIT_OK if s["all_pass"] else EXIT_VERIFY
        if args.command == "run":
            path = Path(args.manifest)
            if not path.exists() and not path.suffix:
                path = bundled_manifest(args.manifest)
            m, _ = load_manifest(path)
        else:
            m, _ = _manifest_from_args(args, SUBCOMMANDS[args.command])
        out = args.out or m.get("output") or "evosys-out"
        return run_manifest(m, out, args.workers or m.get("workers"))
    except (ManifestError, BasisMismatchError, GridMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverInstabilityError, StepSizeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
