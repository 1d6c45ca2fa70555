"""Config-driven pipeline: CEM basis -> POD -> reduced sweep -> fine reference -> report.

Configs are INI files (see ``configs/`` in the package).  Phase outputs are
cached under a content hash of the inputs they depend on, so parameter
sweeps reuse bases and references.
"""

import argparse
import configparser
import logging
import sys
import time
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import io as pio
from ._parallel import WORKERS_ENV
from .assembly import BasisSet, h1_gram, mass_matrix
from .cem import layer_cem, build_vcem
from .evolve import SolveConfig, cfl_check, fine_reference, sweep_z
from .grid import build_grids
from .media import (
    MediumField,
    equal_bands,
    band_representatives,
    experiment1_pattern,
    field_from_raster,
    layered_field,
    read_raster,
    synthetic_marmousi,
)
from .metrics import ErrorReport, energy_series, layer_errors
from .pod import build_snapshots, orthonormal_span, pod

log = logging.getLogger("parawave")

BUNDLED = ("experiment1", "experiment1-desk", "experiment2")


class PhaseError(RuntimeError):
    def __init__(self, phase, cause):
        super().__init__(f"phase {phase} failed: {cause}")
        self.phase = phase


# -- configuration --------------------------------------------------------------


@dataclass
class ExperimentConfig:
    n_coarse: int
    refine: int
    medium: str
    pattern: str
    contrasts: tuple
    background: float
    raster: str
    raster_size: tuple
    seed: int
    fresh_per_layer: bool
    dt: float
    n_steps: int
    dz: float
    K: int
    start_order: int
    ell: int
    m: int
    layers: str
    include_boundary_nodes: bool
    rank: int | None
    zeta: float | None
    inner_product: str
    snapshot_mode: str
    stride: int
    reference: bool
    output: str
    source: str = ""

    def grid_params(self):
        return {"n_coarse": self.n_coarse, "refine": self.refine}

    def medium_params(self):
        params = {"kind": self.medium, "K": self.K, "dz": self.dz}
        if self.medium == "layered":
            params.update(pattern=self.pattern, contrasts=list(self.contrasts), background=self.background)
        else:
            params.update(raster=self.raster, raster_size=list(self.raster_size), seed=self.seed,
                          fresh_per_layer=self.fresh_per_layer)
        return params

    def basis_params(self):
        return {"ell": self.ell, "m": self.m, "layers": self.layers, "include_boundary_nodes": self.include_boundary_nodes}

    def pod_params(self):
        params = {"rank": self.rank, "zeta": self.zeta, "inner_product": self.inner_product, "snapshot_mode": self.snapshot_mode}
        if self.snapshot_mode == "trajectory":
            params.update(stride=self.stride, **self.time_params())
        return params

    def time_params(self):
        return {"dt": self.dt, "n_steps": self.n_steps, "dz": self.dz, "K": self.K, "start_order": self.start_order}

    def solve_config(self) -> SolveConfig:
        return SolveConfig(dt=self.dt, n_steps=self.n_steps, dz=self.dz, K=self.K, start_order=self.start_order)


def _resolve_path(value, base: Path) -> str:
    p = Path(value)
    return str(p if p.is_absolute() else (base / p))


def config_path(name) -> Path:
    """A file path, or the name of a bundled config (``experiment1`` ...)."""
    p = Path(name)
    if p.exists():
        return p
    stem = p.name[:-4] if p.name.endswith(".cfg") else p.name
    if stem in BUNDLED:
        return Path(str(resources.files("parawave") / "configs" / f"{stem}.cfg"))
    raise FileNotFoundError(f"no config file {name!r}")


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def load_config(name, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate an INI config; ``overrides`` maps 'section.key' to text."""
    path = config_path(name)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    with open(path) as fh:
        cp.read_file(fh)
    for key, value in (overrides or {}).items():
        section, option = key.split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, option, str(value))
    base = path.parent

    def get(section, key, fallback=None):
        return cp.get(section, key, fallback=fallback)

    rank = get("pod", "rank")
    zeta = get("pod", "zeta")
    medium = get("medium", "kind", "layered")
    pattern = get("medium", "pattern", "experiment1")
    if medium == "layered" and pattern not in ("experiment1", "empty"):
        pattern = _resolve_path(pattern, base)
    raster = get("medium", "raster", "synthetic")
    if medium == "raster" and raster != "synthetic":
        raster = _resolve_path(raster, base)
    cfg = ExperimentConfig(
        n_coarse=cp.getint("grid", "n_coarse"),
        refine=cp.getint("grid", "refine"),
        medium=medium,
        pattern=pattern,
        contrasts=_floats(get("medium", "contrasts", "1")),
        background=float(get("medium", "background", "1")),
        raster=raster,
        raster_size=tuple(int(v) for v in _floats(get("medium", "raster_size", "600 600"))),
        seed=int(get("medium", "seed", "0")),
        fresh_per_layer=cp.getboolean("medium", "fresh_per_layer", fallback=True),
        dt=cp.getfloat("discretization", "dt"),
        n_steps=cp.getint("discretization", "n_steps"),
        dz=cp.getfloat("discretization", "dz"),
        K=cp.getint("discretization", "K"),
        start_order=cp.getint("discretization", "start_order", fallback=1),
        ell=cp.getint("basis", "ell", fallback=1),
        m=cp.getint("basis", "m", fallback=3),
        layers=get("basis", "layers", "bands"),
        include_boundary_nodes=cp.getboolean("basis", "include_boundary_nodes", fallback=False),
        rank=None if rank in (None, "") else int(rank),
        zeta=None if zeta in (None, "") else float(zeta),
        inner_product=get("pod", "inner_product", "h1"),
        snapshot_mode=get("pod", "snapshot_mode", "basis"),
        stride=cp.getint("pod", "stride", fallback=1),
        reference=cp.getboolean("run", "reference", fallback=True),
        output=_resolve_path(get("run", "output", "out"), Path.cwd()),
        source=str(path),
    )
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    positive = {"dt": cfg.dt, "dz": cfg.dz, "n_steps": cfg.n_steps, "K": cfg.K, "ell": cfg.ell, "stride": cfg.stride}
    for name, value in positive.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")
    if cfg.m < 0:
        raise ValueError("m must be non-negative")
    if (cfg.rank is None) == (cfg.zeta is None):
        raise ValueError("set exactly one of pod.rank and pod.zeta")
    if cfg.medium not in ("layered", "raster"):
        raise ValueError(f"unknown medium kind {cfg.medium!r}")
    if cfg.inner_product not in ("h1", "l2"):
        raise ValueError(f"unknown inner product {cfg.inner_product!r}")
    if cfg.snapshot_mode not in ("basis", "trajectory"):
        raise ValueError(f"unknown snapshot mode {cfg.snapshot_mode!r}")
    for p in ([cfg.pattern] if cfg.medium == "layered" and cfg.pattern not in ("experiment1", "empty") else []) + (
        [cfg.raster] if cfg.medium == "raster" and cfg.raster != "synthetic" else []
    ):
        if not Path(p).exists():
            raise FileNotFoundError(f"referenced file {p} does not exist")
    if cfg.layers not in ("bands", "all"):
        _layer_list(cfg.layers, cfg.K)


def _layer_list(text, K):
    layers = [int(v) for v in text.replace(",", " ").split()]
    if not layers or any(k < 0 or k > K for k in layers):
        raise ValueError(f"CEM layers {text!r} must lie in 0..{K}")
    return layers


# -- phases ---------------------------------------------------------------------


def build_medium(cfg: ExperimentConfig, grid) -> MediumField:
    n_layers = cfg.K + 1
    if cfg.medium == "layered":
        if cfg.pattern == "experiment1":
            pattern = experiment1_pattern(grid)
        elif cfg.pattern == "empty":
            pattern = np.zeros(grid.n_cells)
        else:
            pattern = read_raster(cfg.pattern)[::-1].ravel()
        bounds = equal_bands(n_layers, len(cfg.contrasts))
        return layered_field(grid, pattern, cfg.contrasts, bounds, cfg.background, dz=cfg.dz)
    if cfg.raster == "synthetic":
        raster = synthetic_marmousi(cfg.raster_size, seed=cfg.seed)
    else:
        raster = read_raster(cfg.raster)
        if raster.shape != tuple(cfg.raster_size):
            raise ValueError(f"raster is {raster.shape}, config says {cfg.raster_size}")
    return field_from_raster(raster, grid, cfg.seed, n_layers, dz=cfg.dz, fresh_per_layer=cfg.fresh_per_layer)


def cem_layers(cfg: ExperimentConfig) -> list[int]:
    if cfg.layers == "all":
        return list(range(cfg.K + 1))
    if cfg.layers == "bands":
        if cfg.medium != "layered":
            raise ValueError("layers = bands needs a layered medium")
        return band_representatives(equal_bands(cfg.K + 1, len(cfg.contrasts)))
    return _layer_list(cfg.layers, cfg.K)


class Cache:
    """Content-addressed store of phase artifacts (``None`` disables it)."""

    def __init__(self, root):
        self.root = None if root is None else Path(root)
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def path(self, phase, key):
        return None if self.root is None else self.root / f"{phase}-{key}.npz"

    def get(self, phase, key, loader):
        p = self.path(phase, key)
        if p is not None and p.exists():
            log.info("%s: reusing cached %s", phase, p.name)
            return loader(p)
        return None


def _key(*parts):
    return pio.content_hash({"version": __version__, "parts": parts})


def phase_build_basis(cfg, grid, medium, cache: Cache, workers=None) -> BasisSet:
    key = _key(cfg.grid_params(), cfg.medium_params(), cfg.basis_params())
    hit = cache.get("cem", key, pio.load_basis)
    if hit is not None:
        return hit
    sets, lam = [], []
    for k in cem_layers(cfg):
        _, basis, results = layer_cem(grid, medium.layer(k), k, cfg.ell, cfg.m, cfg.include_boundary_nodes, workers)
        sets.append(basis)
        nxt = [r.next_eigenvalue for r in results if np.isfinite(r.next_eigenvalue)]
        lam.append(min(nxt) if nxt else float("nan"))
    vcem = build_vcem(sets)
    vcem.info["Lambda"] = lam
    vcem.info["ell"] = cfg.ell
    if cache.root is not None:
        pio.save_basis(cache.path("cem", key), vcem)
    return vcem


def _gram(cfg, grid):
    return h1_gram(grid) if cfg.inner_product == "h1" else mass_matrix(grid)


def phase_pod(cfg, grid, medium, vcem: BasisSet, cache: Cache) -> BasisSet:
    key = _key(cfg.grid_params(), cfg.medium_params(), cfg.basis_params(), cfg.pod_params())
    hit = cache.get("pod", key, pio.load_basis)
    if hit is not None:
        return hit
    X = _gram(cfg, grid)
    if cfg.snapshot_mode == "basis":
        Y, weights, _ = build_snapshots("basis", vcem)
        Y = grid.restrict(Y)
        scale = None
    else:
        Q = orthonormal_span(grid.restrict(vcem.vectors), mass_matrix(grid))
        sweep = sweep_z(grid, medium, Q, cfg.solve_config())
        trajs = [sweep.boundary] + [t.states @ Q.T for t in sweep.layers]
        Y, weights, n_fam = build_snapshots("trajectory", trajs, dz=cfg.dz, dt=cfg.dt, stride=cfg.stride)
        scale = 1.0 / n_fam
    result = pod(Y, X, rank=cfg.rank, zeta=cfg.zeta, weights=weights, scale=scale, inner_product=cfg.inner_product)
    basis = BasisSet(
        grid.extend(result.basis),
        "pod",
        meta={"index": np.arange(result.rank)},
        info={
            "eigenvalues": result.eigenvalues,
            "zeta": result.zeta,
            "rank": result.rank,
            "inner_product": cfg.inner_product,
            "snapshot_mode": cfg.snapshot_mode,
            "snapshots": int(Y.shape[1]),
        },
    )
    if cache.root is not None:
        pio.save_basis(cache.path("pod", key), basis)
    return basis


@dataclass
class Solution:
    layers: np.ndarray
    terminal: np.ndarray
    energy_final: np.ndarray
    cfl_delta: float
    cfl_passed: bool
    stable: bool
    cfl: dict


def phase_solve(cfg, grid, medium, basis: BasisSet) -> Solution:
    config = cfg.solve_config()
    R = grid.restrict(basis.vectors)
    sweep = sweep_z(grid, medium, R, config)
    report = cfl_check(sweep.reduced_ops, cfg.dt, grid.H, medium.c_max)
    energy = np.array([energy_series(t, o, cfg.dt)[-1] for t, o in zip(sweep.layers, sweep.reduced_ops)])
    terminal = sweep.terminal_fine()
    stable = bool(np.all(np.isfinite(terminal)) and np.all(energy >= 0))
    if not stable:
        log.warning("reduced solution is unstable (non-finite states or negative energy)")
    return Solution(
        layers=np.arange(1, cfg.K + 1),
        terminal=terminal,
        energy_final=energy,
        cfl_delta=report.delta,
        cfl_passed=report.passed,
        stable=stable,
        cfl=asdict(report) | {"dt_limit": report.dt_limit},
    )


def save_solution(path, sol: Solution) -> None:
    pio.save_states(
        path, sol.terminal, sol.layers, energy_final=sol.energy_final, cfl_delta=sol.cfl_delta,
        cfl_passed=sol.cfl_passed, stable=sol.stable,
    )


def load_solution(path) -> Solution:
    d = pio.load_states(path)
    return Solution(d["layers"], d["terminal"], d["energy_final"], float(d["cfl_delta"]), bool(d["cfl_passed"]),
                    bool(d["stable"]), {})


def phase_reference(cfg, grid, medium, cache: Cache) -> np.ndarray:
    key = _key(cfg.grid_params(), cfg.medium_params(), cfg.time_params())
    hit = cache.get("reference", key, lambda p: pio.load_states(p)["terminal"])
    if hit is not None:
        return hit
    terminal = fine_reference(grid, medium, cfg.solve_config()).terminal
    if cache.root is not None:
        pio.save_states(cache.path("reference", key), terminal, np.arange(1, cfg.K + 1))
    return terminal


def phase_report(cfg, grid, sol: Solution, reference=None, pod_basis: BasisSet | None = None, timings=None) -> ErrorReport:
    e2 = None if reference is None else layer_errors(sol.terminal, reference, mass_matrix(grid))
    info = {} if pod_basis is None else pod_basis.info
    return ErrorReport(
        k=sol.layers,
        z=np.array([cfg.solve_config().z(int(k)) for k in sol.layers]),
        e2=e2,
        energy_final=sol.energy_final,
        cfl_delta=sol.cfl_delta,
        pod_eigenvalues=np.asarray(info.get("eigenvalues", [])),
        zeta=float(info.get("zeta", np.nan)),
        timings=timings or {},
    )


@dataclass
class RunResult:
    report: ErrorReport
    solution: Solution
    cem: BasisSet
    pod: BasisSet
    output: Path


def _phase(name, timings, func, *args, **kwargs):
    t0 = time.perf_counter()
    try:
        out = func(*args, **kwargs)
    except Exception as exc:
        raise PhaseError(name, f"{type(exc).__name__}: {exc}") from exc
    timings[name] = time.perf_counter() - t0
    log.info("%s done in %.2f s", name, timings[name])
    return out


def run(cfg: ExperimentConfig, output=None, cache_dir="default", workers=None) -> RunResult:
    """build-basis -> pod -> solve -> (reference) -> report, writing artifacts to ``output``."""
    out = Path(output or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    cache = Cache(out / "cache" if cache_dir == "default" else cache_dir)
    timings = {}
    grid = _phase("grid", timings, build_grids, cfg.n_coarse, cfg.refine)
    medium = _phase("medium", timings, build_medium, cfg, grid)
    vcem = _phase("build-basis", timings, phase_build_basis, cfg, grid, medium, cache, workers)
    basis = _phase("pod", timings, phase_pod, cfg, grid, medium, vcem, cache)
    sol = _phase("solve", timings, phase_solve, cfg, grid, medium, basis)
    reference = _phase("reference", timings, phase_reference, cfg, grid, medium, cache) if cfg.reference else None
    report = _phase("report", timings, phase_report, cfg, grid, sol, reference, basis, timings)

    artifacts = {"cem.npz": vcem, "pod.npz": basis}
    for name, b in artifacts.items():
        pio.save_basis(out / name, b)
    save_solution(out / "solution.npz", sol)
    if reference is not None:
        pio.save_states(out / "reference.npz", reference, sol.layers)
    report.write_csv(out / "report.csv")
    report.write_gnuplot(out / "errors.dat")
    metadata = {
        "dt": cfg.dt, "dz": cfg.dz, "tau": cfg.dt * cfg.dz, "n_steps": cfg.n_steps, "K": cfg.K,
        "ell": cfg.ell, "m": cfg.m, "cem_layers": cem_layers(cfg), "cem_count": len(vcem),
        "Lambda": vcem.info.get("Lambda"), "pod_rank": basis.info["rank"], "zeta": basis.info["zeta"],
        "cfl": sol.cfl, "stable": sol.stable, "c_max": medium.c_max, "H": grid.H, "h": grid.h,
        "timings": timings,
    }
    pio.write_json(out / "metadata.json", metadata)
    files = sorted(p.name for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
    pio.write_json(out / "manifest.json", {
        "version": __version__,
        "config": cfg.source,
        "parameters": asdict(cfg),
        "artifacts": {name: pio.file_hash(out / name) for name in files},
    })
    if not sol.cfl_passed:
        log.warning("run used a time step beyond the CFL estimate (delta = %.3e)", sol.cfl_delta)
    return RunResult(report, sol, vcem, basis, out)


# -- command line ---------------------------------------------------------------


def _parser():
    p = argparse.ArgumentParser(prog="parawave", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    p.add_argument("--workers", type=int, default=None, help=f"parallel workers (default ${WORKERS_ENV} or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="INI config path or bundled name: " + ", ".join(BUNDLED))
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")

    r = sub.add_parser("run", help="full pipeline")
    common(r)
    r.add_argument("-o", "--output", help="output directory (default: run.output)")
    r.add_argument("--no-reference", action="store_true", help="skip the fine reference solve")
    r.add_argument("--no-cache", action="store_true", help="recompute every phase")

    b = sub.add_parser("build-basis", help="CEM basis over the configured layers")
    common(b)
    b.add_argument("-o", "--output", required=True)

    q = sub.add_parser("pod", help="POD basis from a CEM basis file")
    common(q)
    q.add_argument("--cem", required=True, help="CEM basis file")
    q.add_argument("-o", "--output", required=True)
    g = q.add_mutually_exclusive_group()
    g.add_argument("--rank", type=int)
    g.add_argument("--zeta", type=float)

    s = sub.add_parser("solve", help="reduced sweep in a basis, or the fine reference")
    common(s)
    what = s.add_mutually_exclusive_group(required=True)
    what.add_argument("--basis", help="basis file (POD or CEM)")
    what.add_argument("--fine", action="store_true", help="fine-grid reference solve")
    s.add_argument("-o", "--output", required=True)

    rp = sub.add_parser("report", help="CSV and gnuplot report from a solution file")
    common(rp)
    rp.add_argument("--solution", required=True)
    rp.add_argument("--reference", help="reference states file; e2 is 'unavailable' without it")
    rp.add_argument("-o", "--output", required=True, help="CSV path; the gnuplot file gets suffix .dat")
    return p


def _overrides(pairs):
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or "." not in key:
            raise ValueError(f"bad override {pair!r}, expected SECTION.KEY=VALUE")
        out[key.strip()] = value.strip()
    return out


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = _overrides(args.set)
        if getattr(args, "rank", None) is not None:
            overrides.update({"pod.rank": str(args.rank), "pod.zeta": ""})
        if getattr(args, "zeta", None) is not None:
            overrides.update({"pod.zeta": str(args.zeta), "pod.rank": ""})
        cfg = load_config(args.config, overrides)
    except (OSError, ValueError, configparser.Error) as exc:
        print(f"parawave: config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _dispatch(args, cfg)
    except PhaseError as exc:
        print(f"parawave: {exc}", file=sys.stderr)
        return 1


def _dispatch(args, cfg) -> int:
    timings = {}
    if args.command == "run":
        if args.no_reference:
            cfg.reference = False
        result = run(cfg, args.output, None if args.no_cache else "default", args.workers)
        print(result.report.to_csv(), end="")
        if not result.solution.cfl_passed:
            print(f"warning: CFL condition violated (delta = {result.solution.cfl_delta:.3e})", file=sys.stderr)
        return 0
    grid = _phase("grid", timings, build_grids, cfg.n_coarse, cfg.refine)
    medium = _phase("medium", timings, build_medium, cfg, grid)
    if args.command == "build-basis":
        vcem = _phase("build-basis", timings, phase_build_basis, cfg, grid, medium, Cache(None), args.workers)
        pio.save_basis(args.output, vcem)
        print(f"{len(vcem)} CEM vectors from layers {cem_layers(cfg)} -> {args.output}")
    elif args.command == "pod":
        vcem = _phase("pod", timings, pio.load_basis, args.cem)
        basis = _phase("pod", timings, phase_pod, cfg, grid, medium, vcem, Cache(None))
        pio.save_basis(args.output, basis)
        print(f"{len(vcem)} snapshots -> {len(basis)} POD vectors (zeta = {basis.info['zeta']:.3e}) -> {args.output}")
    elif args.command == "solve":
        if args.fine:
            ref = _phase("reference", timings, phase_reference, cfg, grid, medium, Cache(None))
            pio.save_states(args.output, ref, np.arange(1, cfg.K + 1))
        else:
            basis = _phase("solve", timings, pio.load_basis, args.basis)
            sol = _phase("solve", timings, phase_solve, cfg, grid, medium, basis)
            save_solution(args.output, sol)
            if not sol.cfl_passed:
                print(f"warning: CFL condition violated (delta = {sol.cfl_delta:.3e})", file=sys.stderr)
        print(f"solution -> {args.output}")
    elif args.command == "report":
        sol = _phase("report", timings, load_solution, args.solution)
        ref = None if args.reference is None else _phase("report", timings, lambda p: pio.load_states(p)["terminal"], args.reference)
        report = _phase("report", timings, phase_report, cfg, grid, sol, ref)
        report.write_csv(args.output)
        report.write_gnuplot(str(Path(args.output).with_suffix(".dat")))
        print(report.to_csv(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
