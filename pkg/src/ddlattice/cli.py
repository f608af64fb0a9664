"""Batch front end: ``ddlattice --config run.toml --out results/``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io as dio
from .analysis import detect_limit_cycle, fit_correlation_profile, fit_relaxation
from .config import ConfigError, RunConfig, load_config
from .meanfield import (
    IntegrationError,
    locate_cusp,
    mf_basin_scan,
    mf_bistability_region,
    mf_steady_states,
)
from .mfqf import (
    COMPONENTS,
    Classification,
    MfqfError,
    MfqfState,
    Seeding,
    branch_sweep,
    classify_run,
    mfqf_integrate,
    relaxation_rate,
    total_correlation,
)
from .oracle import BondList, OracleError, hierarchy_check, random_density_matrix
from .params import ParameterError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("ddlattice")


class NumericalFailure(RuntimeError):
    pass


class Context:
    def __init__(self, cfg: RunConfig, out: Path, workers: int, seed: int, dt: float | None):
        self.cfg = cfg
        self.out = out
        self.workers = max(1, workers)
        self.seed = seed
        self.dt = dt if dt is not None else cfg.get("run.dt")
        self.files: list[str] = []
        self.summary: dict = {}
        self.point_times: list[float] = []

    def csv(self, name: str, header, rows):
        dio.write_csv(self.out / name, header, rows)
        self.files.append(name)


# ---------------------------------------------------------------------------
# modes


def run_mf_steady(ctx: Context) -> int:
    cfg = ctx.cfg
    deltas = cfg.sweep_values()
    deltas = [cfg["delta"]] if deltas is None else deltas
    rows = []
    for d in deltas:
        p = cfg.params(float(d))
        rows += dio.mf_rows(float(d), p.effective_coupling, mf_steady_states(p))
    ctx.csv("results.csv", dio.MF_HEADER, rows)
    ctx.summary["steady_states"] = len(rows)
    return EXIT_OK


def run_mf_region(ctx: Context) -> int:
    v = ctx.cfg.values
    ks = np.linspace(v["region.jz_min"], v["region.jz_max"], v["region.jz_points"])
    ds = np.linspace(v["region.delta_min"], v["region.delta_max"], v["region.delta_points"])
    reg = mf_bistability_region(v["omega"], v["gamma"], ks, ds)
    rows = ((k, d, reg.discriminant[i, j], int(reg.root_count[i, j]), bool(reg.boundary[i, j]))
            for i, k in enumerate(ks) for j, d in enumerate(ds))
    ctx.csv("results.csv", ["jz_product", "delta", "discriminant", "root_count", "boundary"], rows)
    ctx.summary["bistable_points"] = int(reg.bistable.sum())
    if v["region.locate_cusp"]:
        c = locate_cusp(v["omega"], v["gamma"])
        ctx.summary["cusp"] = {"jz_product": c.jz_product, "delta": c.delta}
        ctx.csv("cusp.csv", ["jz_product", "delta"], [[c.jz_product, c.delta]])
    return EXIT_OK


def run_mf_basins(ctx: Context) -> int:
    v = ctx.cfg.values
    scan = mf_basin_scan(ctx.cfg.params(), tuple(v["basins.axes"]), v["basins.resolution"],
                         offset=v["basins.offset"], radius=v["basins.radius"],
                         t_max=v["basins.t_max"], dt=ctx.dt)
    ctx.csv("results.csv", dio.BASIN_HEADER, scan.rows())
    counts = {}
    for s in scan.status.ravel():
        counts[str(s)] = counts.get(str(s), 0) + 1
    ctx.summary["status_counts"] = dict(sorted(counts.items()))
    return EXIT_OK


def _seed(cfg: RunConfig, p, lattice):
    if cfg["run.seeding"] == "mf_root":
        roots = mf_steady_states(p)
        return MfqfState.product(lattice, roots[min(cfg["run.root"], len(roots) - 1)].mu)
    return MfqfState.product(lattice)


def run_mfqf_run(ctx: Context) -> int:
    cfg = ctx.cfg
    lat = cfg.lattice
    p = cfg.params()
    started = time.perf_counter()
    run = mfqf_integrate(_seed(cfg, p, lat), p, cfg["run.t_end"], ctx.dt,
                         window=cfg["run.window"], kappa_tol=cfg["run.kappa_tol"])
    run = classify_run(run, tail=cfg["run.cycle_tail"])
    st = run.state
    row = {"delta": p.delta, "mu_x": st.mu[0], "mu_y": st.mu[1], "mu_z": st.mu[2]}
    for c, s in zip(COMPONENTS, total_correlation(st)):
        row[f"sigma_{c}"] = s
    for c, s in zip(COMPONENTS, run.theta_max):
        row[f"theta_max_{c}"] = s
    row.update(kappa_tilde=run.kappa_tilde, kappa=relaxation_rate(run), classification=run.status.value)
    header = [h for h in dio.SWEEP_HEADER if h != "wall_time"]
    ctx.csv("results.csv", header, [[row[h] for h in header]])
    if cfg["output.correlators"]:
        dio.write_correlators(ctx.out / "correlators.csv", st)
        ctx.files.append("correlators.csv")
    if cfg["output.trajectory"]:
        dio.write_trajectory(ctx.out / "trajectory.csv", run)
        ctx.files.append("trajectory.csv")
    ctx.point_times.append(time.perf_counter() - started)
    ctx.summary.update(classification=run.status.value, t_final=st.time, dt=run.dt, message=run.message)
    if run.cycle is not None:
        ctx.summary["cycle"] = {"period": run.cycle.period, "amplitude": run.cycle.amplitude,
                                "is_cycle": run.cycle.is_cycle}
    if run.status in (Classification.BREAKDOWN, Classification.NON_CONVERGED):
        log.error("delta=%g: %s %s", p.delta, run.status.value, run.message)
        return EXIT_NUMERICAL
    return EXIT_OK


def _sweep_point(args):
    p, d, seeding, root, t_end, dt, tail = args
    return branch_sweep(p, [d], seeding, root_index=root, t_end=t_end, dt=dt, cycle_tail=tail)[0]


def run_mfqf_sweep(ctx: Context) -> int:
    cfg = ctx.cfg
    ds = cfg.sweep_values()
    seeding = Seeding(cfg["sweep.seeding"])
    p = cfg.params(float(ds[0]))
    t_end, tail = cfg["run.t_end"], cfg["run.cycle_tail"]

    def report(pt):
        log.info("delta=%g %s (%.1fs)", pt.delta, pt.classification.value, pt.wall_time)

    if seeding is Seeding.CONTINUATION or ctx.workers == 1:
        points = branch_sweep(p, ds, seeding, root_index=cfg["sweep.root"], t_end=t_end,
                              dt=ctx.dt, cycle_tail=tail, progress=report)
    else:
        # independent points: order of results follows the sweep, not completion
        jobs = [(p, float(d), seeding, cfg["sweep.root"], t_end, ctx.dt, tail) for d in ds]
        with ProcessPoolExecutor(max_workers=ctx.workers) as pool:
            points = list(pool.map(_sweep_point, jobs))
        for pt in points:
            report(pt)
    header = [h for h in dio.SWEEP_HEADER if h != "wall_time"]
    ctx.csv("results.csv", header, ([r[h] for h in header] for r in (pt.row() for pt in points)))
    ctx.point_times += [pt.wall_time for pt in points]
    counts = {}
    for pt in points:
        counts[pt.classification.value] = counts.get(pt.classification.value, 0) + 1
    ctx.summary["classification_counts"] = dict(sorted(counts.items()))
    ctx.summary["errors"] = [{"delta": pt.delta, "message": pt.message} for pt in points
                             if pt.classification is Classification.ERROR]
    return EXIT_OK


def run_oracle_validate(ctx: Context) -> int:
    cfg = ctx.cfg
    v = cfg.values
    n = v["oracle.sites"]
    bonds = BondList.ring(n) if v["oracle.geometry"] == "ring" else BondList.chain(n)
    p = cfg.params()
    if v["jz_product"] is not None:
        # J Z refers to the connectivity of the small system
        p = replace(p, j=v["jz_product"] / bonds.connectivity)
    rho0 = None
    if v["oracle.random_initial"]:
        rho0 = random_density_matrix(n, np.random.default_rng(ctx.seed))
    dt = v["oracle.dt"] if ctx.dt is None else ctx.dt
    chk = hierarchy_check(p, bonds, rho0, v["oracle.t_end"], dt)
    ctx.csv("results.csv", ["time", "err_x", "err_y", "err_z"], ([t, *e] for t, e in zip(chk.times, chk.errors)))
    passed = chk.max_error < v["oracle.tolerance"]
    ctx.summary.update(check="hierarchy_exactness", max_error=chk.max_error,
                       tolerance=v["oracle.tolerance"], passed=passed)
    (ctx.out / "report.txt").write_text(
        f"hierarchy exactness: {'PASS' if passed else 'FAIL'} max error {chk.max_error:.3e} "
        f"(tolerance {v['oracle.tolerance']:.1e})\n", encoding="utf-8")
    ctx.files.append("report.txt")
    return EXIT_OK if passed else EXIT_NUMERICAL


def run_analyze(ctx: Context) -> int:
    v = ctx.cfg.values
    src = Path(v["analyze.input"])
    if not src.is_absolute() and ctx.cfg.source != "<dict>":
        src = Path(ctx.cfg.source).parent / src
    kind = v["analyze.kind"]
    if kind == "profile":
        prof = dio.read_correlator_profile(src, v["analyze.axis"])
        fits = {c: fit_correlation_profile(prof[c], prof["r"], r_min=v["analyze.r_min"]) for c in COMPONENTS}
        dio.write_fit_table(ctx.out / "results.csv", fits)
        ctx.files.append("results.csv")
        return EXIT_OK
    cols = dio.read_numeric_columns(src)
    t = cols["time"]
    if kind == "relaxation":
        col = v["analyze.column"]
        if col not in cols:
            raise ConfigError(f"{src} has no column {col!r}")
        fit = fit_relaxation(t, cols[col], v["analyze.tail_fraction"])
        ctx.csv("results.csv", ["column", "kappa", "amplitude", "asymptote", "ok"],
                [[col, fit.kappa, fit.amplitude, fit.asymptote, fit.ok]])
        ctx.summary["message"] = fit.message
        return EXIT_OK
    mu = np.stack([cols["mu_x"], cols["mu_y"], cols["mu_z"]], axis=1)
    start = int(len(t) * (1 - v["analyze.tail_fraction"]))
    rep = detect_limit_cycle(t[start:], mu[start:])
    ctx.csv("results.csv", ["period", "amp_x", "amp_y", "amp_z", "mean_x", "mean_y", "mean_z", "is_cycle", "drift"],
            [[rep.period, *rep.amplitude, *rep.mean, rep.is_cycle, rep.drift]])
    return EXIT_OK


MODES = {
    "mf-steady": run_mf_steady,
    "mf-region": run_mf_region,
    "mf-basins": run_mf_basins,
    "mfqf-run": run_mfqf_run,
    "mfqf-sweep": run_mfqf_sweep,
    "oracle-validate": run_oracle_validate,
    "analyze": run_analyze,
}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ddlattice", description=__doc__)
    ap.add_argument("--config", required=True, type=Path, help="TOML run configuration")
    ap.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    ap.add_argument("--workers", type=int, default=1, help="processes for independent sweep points")
    ap.add_argument("--seed", type=int, default=0, help="seed for random initial states")
    ap.add_argument("--dt", type=float, default=None, help="override the integration step")
    ap.add_argument("--quiet", action="store_true")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.dt is not None and not args.dt > 0:
            raise ConfigError("--dt must be positive")
    except ConfigError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    try:
        args.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("cannot create %s: %s", args.out, exc)
        return EXIT_IO
    ctx = Context(cfg, args.out, args.workers, args.seed, args.dt)
    started = time.perf_counter()
    try:
        code = MODES[cfg.mode](ctx)
    except ConfigError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O: %s", exc)
        return EXIT_IO
    except (MfqfError, IntegrationError, OracleError, ParameterError, FloatingPointError, ValueError) as exc:
        log.error("%s failed: %s", cfg.mode, exc)
        code = EXIT_NUMERICAL
        ctx.summary["error"] = f"{type(exc).__name__}: {exc}"
    manifest = {
        "version": __version__,
        "mode": cfg.mode,
        "config_file": str(args.config),
        "config": cfg.resolved(),
        "flags": {"workers": args.workers, "seed": args.seed, "dt": args.dt},
        "files": ctx.files,
        "summary": ctx.summary,
        "wall_time": time.perf_counter() - started,
        "point_wall_times": ctx.point_times,
        "exit_code": code,
    }
    try:
        dio.write_json(args.out / "manifest.json", manifest)
    except OSError as exc:
        log.error("I/O: %s", exc)
        return EXIT_IO
    return code


if __name__ == "__main__":
    sys.exit(main())
