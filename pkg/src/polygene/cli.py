"""Command-line entry point: ``polygene {simulate,meanfield,stationary,bifurcation,verify}``."""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .forward import run_simulation
from .meanfield import evolve_density, evolve_particles, lande_residual
from .outputs import columns_to_rows, csv_text, header_lines, json_text, write_outputs
from .rng import GENERATOR_FAMILY, replicate_rng, replicate_seed
from .stationary import bifurcation_scan, fixed_points, kappa_c


def max_workers() -> int:
    env = os.environ.get("POLYGENE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("POLYGENE_THREADS", f"not an integer: {env!r}") from None
    return os.cpu_count() or 1


def _map_replicates(fn, args: list):
    workers = min(max_workers(), len(args))
    if workers <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, args))


# -- mode runners: each returns ({file name: text}, summary lines) -------------

def _simulate_one(job):
    cfg, i = job
    rec = run_simulation(cfg.sim_config(), replicate_rng(cfg.seed, i))
    return i, rec


def run_simulate(cfg: ExperimentConfig, header):
    results = _map_replicates(_simulate_one, [(cfg, i) for i in range(cfg.replicates)])
    traj_rows, freq_rows = [], []
    traj_cols = freq_cols = None
    for i, rec in results:
        cols = rec.columns()
        traj_cols = ["replicate", *cols]
        traj_rows += [(i, *row) for row in columns_to_rows(cols)]
        freq_cols = ["replicate", "gen", "t", *[f"p{l}" for l in range(rec.L)]]
        freq_rows += [(i, g, t, *p) for g, t, p in zip(rec.gen, rec.t, rec.p)]
    ratio = results[0][1].meta["recombination_ratio"]
    hdr = header + [f"recombination_ratio={ratio:.17g}"]
    files = {
        "trajectory.csv": csv_text(hdr, traj_cols, traj_rows),
        "freqs.csv": csv_text(hdr, freq_cols, freq_rows),
    }
    last = results[0][1]
    summary = [f"replicates={cfg.replicates} final trait mean (replicate 0) = {last.trait_mean[-1]:.6g}",
               f"rho r** / (L^2 ln rho) = {ratio:.4g}"]
    return files, summary


def _meanfield_one(job):
    cfg, i = job
    mf = cfg.meanfield_config()
    snaps = cfg.get("meanfield.snapshots")
    if cfg.get("meanfield.solver") == "grid":
        return i, evolve_density(mf, snaps)
    return i, evolve_particles(mf, replicate_rng(cfg.seed, i), snaps)


def run_meanfield(cfg: ExperimentConfig, header):
    n = 1 if cfg.get("meanfield.solver") == "grid" else cfg.replicates
    results = _map_replicates(_meanfield_one, [(cfg, i) for i in range(n)])
    spec, theta = cfg.fitness(), cfg.theta()
    rows = []
    files = {}
    for i, run in results:
        resid = np.full(len(run.t), np.nan)
        if len(run.t) >= 3:
            resid[1:-1] = lande_residual(run.t, run.mean_trait, run.sigma2, spec, theta, run.mean_f).residual
        rows += [(i, *r) for r in zip(run.t, run.mean_trait, run.sbar, run.sigma2, resid)]
        for t_snap, data in sorted(run.snapshots.items()):
            name = f"density_t{t_snap:g}_r{i}.csv"
            if cfg.get("meanfield.solver") == "grid":
                K = len(data)
                files[name] = csv_text(header, ["x", "u"], zip((np.arange(K) + 0.5) / K, data))
            else:
                counts, edges = np.histogram(data, bins=100, range=(0.0, 1.0), density=True)
                files[name] = csv_text(header, ["x", "u"], zip(0.5 * (edges[1:] + edges[:-1]), counts))
    files["meanfield.csv"] = csv_text(header, ["replicate", "t", "mean_trait", "sbar", "sigma2", "lande_residual"], rows)
    final = results[0][1]
    return files, [f"final mean trait = {final.mean_trait[-1]:.6g}, sigma2 = {final.sigma2[-1]:.6g}"]


def run_stationary(cfg: ExperimentConfig, header):
    theta = cfg.theta()
    kappa, z_star = cfg.get("stationary.kappa"), cfg.get("stationary.z_star")
    fps = fixed_points(kappa, z_star, theta, cfg.get("stationary.y_max"), cfg.get("stationary.grid_n"))
    symmetric = theta.theta_plus == theta.theta_minus
    kc = kappa_c(theta) if symmetric else float("nan")
    rows = [(kappa, z_star, fp.y, fp.branch, fp.slope, int(fp.slope < 1)) for fp in fps]
    files = {"stationary.csv": csv_text(header + [f"kappa_c={kc:.17g}"],
                                        ["kappa", "z_star", "y", "branch", "chi_slope", "iteration_stable"], rows)}
    summary = [f"kappa_c = {kc:.17g}" if symmetric else "kappa_c undefined for asymmetric mutation",
               f"{len(fps)} root(s) at kappa = {kappa:g}"]
    summary += [f"  y = {fp.y:.10g}  branch <Pi_y, 2x-1> = {fp.branch:.10g}" for fp in fps]
    return files, summary


def run_bifurcation(cfg: ExperimentConfig, header):
    theta = cfg.theta()
    scan = bifurcation_scan(theta, cfg.get("bifurcation.kappa_min"), cfg.get("bifurcation.kappa_max"),
                            cfg.get("bifurcation.steps"), cfg.get("stationary.z_star"),
                            cfg.get("stationary.y_max"), cfg.get("stationary.grid_n"))
    rows = [(r.kappa, r.n_roots, j, y, b) for r in scan for j, (y, b) in enumerate(zip(r.roots, r.branches))]
    files = {"bifurcation.csv": csv_text(header, ["kappa", "n_roots", "root_index", "y", "branch"], rows)}
    counts = " ".join(f"{r.kappa:.3g}:{r.n_roots}" for r in scan)
    return files, [f"root counts {counts}"]


def run_verify(cfg: ExperimentConfig, header):
    from .verify import run_checks
    results = run_checks(cfg.get("verify.filter"))
    rows = [(r.suite, r.check, r.observed, r.tolerance.replace(",", ";"), r.verdict) for r in results]
    files = {"verify.csv": csv_text(header, ["suite", "check", "observed", "tolerance", "verdict"], rows)}
    summary = [f"{r.verdict:4s}  {r.suite}/{r.check}: observed {r.observed:.6g} (tolerance {r.tolerance})"
               for r in results]
    ok = bool(results) and all(r.passed for r in results)
    summary.append(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return files, summary, ok


RUNNERS = {"simulate": run_simulate, "meanfield": run_meanfield, "stationary": run_stationary,
           "bifurcation": run_bifurcation, "verify": run_verify}


def run_experiment(cfg: ExperimentConfig, out_dir=None):
    """Run one mode, write every output plus ``manifest.json``; returns (manifest, summary, ok)."""
    out_dir = Path(out_dir or cfg.out or ".")
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    header = header_lines(cfg.checksum(), cfg.seed, {"mode": cfg.mode})
    result = RUNNERS[cfg.mode](cfg, header)
    files, summary = result[0], result[1]
    ok = result[2] if len(result) > 2 else True
    files["config.echo.json"] = json_text(header, {"config": cfg.resolved()})
    n_rep = cfg.replicates
    manifest = {
        "version": __version__,
        "mode": cfg.mode,
        "config": cfg.resolved(),
        "config_sha256": cfg.checksum(),
        "root_seed": cfg.seed,
        "rng": GENERATOR_FAMILY,
        "replicate_seeds": [{"replicate": i, "spawn_key": [i], "fingerprint": replicate_seed(cfg.seed, i)}
                            for i in range(n_rep)],
        "started_at": started,
        "wall_clock_seconds": time.perf_counter() - t0,
        "ok": ok,
    }
    checksums = write_outputs(out_dir, files)
    manifest["files"] = checksums
    write_outputs(out_dir, {"manifest.json": json_text(header, manifest)})
    return manifest, summary, ok


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polygene", description=__doc__)
    parser.add_argument("--version", action="version", version=f"polygene {__version__}")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in RUNNERS:
        p = sub.add_parser(mode)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--out", default=None, help="output directory (default: current directory)")
        p.add_argument("--seed", type=int, help="root seed (overrides run.seed)")
        p.add_argument("--replicates", type=int, help="number of replicates (overrides run.replicates)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any configuration key; repeatable")
        if mode in ("stationary", "bifurcation", "meanfield", "simulate"):
            p.add_argument("--theta", type=float, help="symmetric mutation rate theta+ = theta-")
        if mode in ("stationary", "bifurcation"):
            p.add_argument("--kappa", type=float, help="mean-field kappa in sbar = -2 kappa (m - z*)")
        if mode == "bifurcation":
            p.add_argument("--kappa-min", type=float)
            p.add_argument("--kappa-max", type=float)
            p.add_argument("--steps", type=int)
        if mode == "verify":
            p.add_argument("--filter", default=None, help="substring of suite/check names to run")
    return parser


def _overrides(args) -> dict:
    o = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(item, "expected KEY=VALUE")
        k, v = item.split("=", 1)
        o[k.strip()] = v.strip()
    if args.seed is not None:
        o["run.seed"] = args.seed
    if args.replicates is not None:
        o["run.replicates"] = args.replicates
    if getattr(args, "theta", None) is not None:
        o["mutation.theta_plus"] = o["mutation.theta_minus"] = args.theta
    if getattr(args, "kappa", None) is not None:
        o["stationary.kappa"] = args.kappa
    for flag, key in (("kappa_min", "bifurcation.kappa_min"), ("kappa_max", "bifurcation.kappa_max"),
                      ("steps", "bifurcation.steps"), ("filter", "verify.filter")):
        if getattr(args, flag, None) is not None:
            o[key] = getattr(args, flag)
    return o


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.mode, args.config, _overrides(args), args.out)
        manifest, summary, ok = run_experiment(cfg)
    except ConfigError as exc:
        print(f"polygene: configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"polygene: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for line in summary:
        print(line)
    print(f"outputs: {', '.join(sorted(manifest['files']))} + manifest.json")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
