"""Command-line entry point.

Exit codes: 0 ok, 2 configuration or usage error, 3 numerical abort,
4 embedded check failure (only with ``--check``).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis as an
from .config import dump_config, load_config
from .dynamics import evolve_deterministic
from .errors import ConfigError, DomainError, NumericalAbort, QNDError
from .geometry import cached_overlap_tables, make_basis, CloudGeometry
from .oracle import compare_gaussian_vs_exact
from .pipelines import (PIPELINES, Artifacts, StageError, _jsonable, build_model, csv_payload, resolve_probe,
                        run_pipeline, species_for, squeezing_curves)
from .probe import D2, optimize_design, scan_strength
from .pumping import averaged_map_generator, two_color_tables
from .trajectories import BatchResult, TrajectoryRecord, batch_simulate

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4

ORACLE_BETAS = {1: [1.0], 2: [1.0, 0.7], 3: [1.0, 0.8, 0.6]}


def _emit(obj, out: Path | None, name: str) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, base_seed=args.seed)
    return cfg


def _out(args, cfg, sub: str) -> Path:
    return Path(args.out or cfg.out_dir) / sub


# -- subcommands -----------------------------------------------------------

def cmd_scan_strength(args):
    cfg = _config(args)
    o = cfg.fig1b
    dr = np.geomspace(o["delta_ratio_min"], o["delta_ratio_max"], o["n_delta"])
    pr = np.geomspace(o["power_ratio_min"], o["power_ratio_max"], o["n_power"])
    scan = scan_strength(species_for(cfg), cfg.delta_d2, dr, pr, sign=-1)
    art = Artifacts(_out(args, cfg, "scan"))
    art.write("scan_strength.csv", csv_payload(["signed_delta_ratio", "power_ratio", "r_over_rmax", "residual"],
                                               scan.rows(), {"config_hash": cfg.hash}))
    art.manifest(cfg, "scan-strength")
    return EXIT_OK


def cmd_design_point(args):
    cfg = _config(args)
    d = optimize_design(species_for(cfg), cfg.delta_d2)
    _emit(d.__dict__ | {"r_squared": d.r_squared, "delta_d2": cfg.delta_d2}, args.out and Path(args.out),
          "design_point.json")
    return EXIT_OK


def cmd_build_tables(args):
    cfg = _config(args)
    sp = species_for(cfg)
    cloud = CloudGeometry(1.0, cfg.w_perp, cfg.w_z)
    basis = make_basis(cfg.waist, sp.manifold(D2).wavelength, cloud, p_max=cfg.p_max, l_max=cfg.l_max,
                       n_slices=cfg.n_slices, n_radial=cfg.n_radial, n_angular=cfg.n_angular)
    ov = cached_overlap_tables(basis, args.cache_dir, args.no_cache)
    _emit({"fingerprint": basis.fingerprint(), "n_modes": ov.n_modes, "n_slices": ov.n_slices},
          args.out and Path(args.out), "tables.json")
    return EXIT_OK


def cmd_dump_pumping_tables(args):
    cfg = _config(args)
    sp = species_for(cfg)
    probe, _ = resolve_probe(cfg, sp)
    _emit({"units": "1/s at peak intensity", **two_color_tables(sp, probe).as_dict()},
          args.out and Path(args.out), "pumping_tables.json")
    return EXIT_OK


def cmd_evolve(args):
    cfg = _config(args)
    m = build_model(cfg, cache_dir=args.cache_dir, no_cache=args.no_cache)
    p = evolve_deterministic(m.state, m.engine, cfg.T, m.dt)
    stride = max(len(p.t) // 1000, 1)
    sl = slice(None, None, stride)
    art = Artifacts(_out(args, cfg, "evolve"))
    art.write("evolve.csv", csv_payload(
        ["t_s", "F_x", "F_z", "var_Fz", "xi_m_sq_dB", "n_up", "n_down", "n_T", "loss"],
        zip(p.t[sl], p.fx[sl], np.zeros_like(p.t[sl]), p.var_fz[sl], an.to_db(p.xi_m_sq[sl]),
            *p.populations[sl].T, p.loss()[sl]),
        {"config_hash": cfg.hash, "units": "t in s; spin components in units of hbar"}))
    art.manifest(cfg, "evolve")
    return EXIT_OK


def _write_records(art: Artifacts, batch: BatchResult, cfg) -> None:
    for r in batch.records:
        art.write(f"traj_{r.seed}.csv", csv_payload(
            ["t_s", "dM", "F_z_cond"], zip(r.times, r.dM, r.fz_mean),
            {"config_hash": cfg.hash, "seed": r.seed, "dt_s": repr(r.dt), "units": "dM in F_z*s"}))


def cmd_simulate(args):
    cfg = _config(args)
    m = build_model(cfg, cache_dir=args.cache_dir, no_cache=args.no_cache)
    batch = batch_simulate(m.state, m.engine, cfg.T, m.dt, cfg.n_traj, cfg.base_seed, cfg.hash)
    art = Artifacts(_out(args, cfg, "simulate"))
    _write_records(art, batch, cfg)
    art.summary = {"n_traj": len(batch.records), "failures": batch.failures, "kappa": m.kappa, "dt": m.dt}
    art.manifest(cfg, "simulate")
    return EXIT_NUMERICAL if batch.failures and not batch.records else EXIT_OK


def _load_records(directory: Path) -> list[TrajectoryRecord]:
    recs = []
    for f in sorted(directory.glob("traj_*.csv")):
        lines = f.read_text().splitlines()
        meta = dict(line[2:].split(": ", 1) for line in lines if line.startswith("# "))
        body = [line for line in lines if not line.startswith("#")][1:]
        data = np.loadtxt(body, delimiter=",", ndmin=2)
        recs.append(TrajectoryRecord(int(meta["seed"]), float(meta["dt_s"]), data[:, 0], data[:, 1], data[:, 2],
                                     config_hash=meta.get("config_hash", "")))
    if not recs:
        raise DomainError(f"no trajectory files in {directory}")
    recs.sort(key=lambda r: r.seed)
    return recs


def cmd_analyze(args):
    cfg = _config(args)
    m = build_model(cfg, cache_dir=args.cache_dir, no_cache=args.no_cache)
    recs = _load_records(Path(args.records))
    path = evolve_deterministic(m.state, m.engine, recs[0].T, recs[0].dt)
    batch = BatchResult(recs, path, seeds=[r.seed for r in recs])
    grid = [T for T in cfg.T_grid if 2 * T <= recs[0].T * (1 + 1e-9)]
    if not grid:
        raise DomainError("records are too short for any window in the T grid")
    c = squeezing_curves(m, batch, grid, cfg.spin_ratio, cfg.n_boot, cfg.base_seed)
    _emit({"T_s": c.T, "xi2_records": c.xi_records, "xi2_sigma": c.xi_sigma, "xi_m2": c.xi_model,
           "spin_ratio": c.spin_ratio, "n_traj": len(recs), "config_hash": cfg.hash},
          args.out and Path(args.out), "analysis.json")
    return EXIT_OK


def cmd_oracle(args):
    cfg = _config(args)
    if args.which == "fig1c":
        art = run_pipeline("fig1c", cfg, args.out, args.cache_dir, args.no_cache)
        return _check_exit(args, art)
    sp = species_for(cfg)
    probe, _ = resolve_probe(cfg, sp)
    beta = np.array(ORACLE_BETAS[args.atoms])
    T = args.T
    kappa = args.r / (T * 2 * np.sum(beta**2))
    rep = compare_gaussian_vs_exact(averaged_map_generator(sp, probe), two_color_tables(sp, probe), beta,
                                    kappa, T, args.n_traj, cfg.base_seed, args.kind, probe.gamma_total)
    _emit(rep.as_dict(), args.out and Path(args.out), "oracle_compare.json")
    if args.check and not rep.passed():
        return EXIT_CHECK
    return EXIT_OK


def _check_exit(args, art: Artifacts) -> int:
    if args.check and not art.all_checks_pass:
        failed = [k for k, v in art.checks.items() if not v.get("pass", True)]
        print(f"checks failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_pipeline(args):
    cfg = _config(args)
    art = run_pipeline(args.name, cfg, args.out, args.cache_dir, args.no_cache)
    print(f"{args.name}: wrote {len(art.files)} files to {art.out_dir}")
    return _check_exit(args, art)


def cmd_show_config(args):
    sys.stdout.write(dump_config(_config(args)))
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults to the nominal set)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the base seed")
    common.add_argument("--threads", type=int, default=1,
                        help="worker count; stages run serially, so this is recorded only")
    common.add_argument("--no-cache", action="store_true", help="rebuild overlap tables")
    common.add_argument("--cache-dir", help="overlap-table cache directory")
    common.add_argument("--check", action="store_true", help="exit 4 when an embedded check fails")

    p = argparse.ArgumentParser(prog="qndspin", description="Two-color QND spin-squeezing simulator")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("scan-strength", parents=[common]).set_defaults(fn=cmd_scan_strength)
    sub.add_parser("design-point", parents=[common]).set_defaults(fn=cmd_design_point)
    sub.add_parser("build-tables", parents=[common]).set_defaults(fn=cmd_build_tables)
    sub.add_parser("dump-pumping-tables", parents=[common]).set_defaults(fn=cmd_dump_pumping_tables)
    sub.add_parser("evolve", parents=[common]).set_defaults(fn=cmd_evolve)
    sub.add_parser("simulate", parents=[common]).set_defaults(fn=cmd_simulate)
    a = sub.add_parser("analyze", parents=[common])
    a.add_argument("records", help="directory written by 'simulate'")
    a.set_defaults(fn=cmd_analyze)
    o = sub.add_parser("oracle", parents=[common])
    o.add_argument("which", choices=["compare", "fig1c"])
    o.add_argument("--atoms", type=int, choices=[1, 2, 3], default=1)
    o.add_argument("--kind", choices=["qutrit", "full"], default="qutrit")
    o.add_argument("--n-traj", type=int, default=8)
    o.add_argument("--r", type=float, default=0.2, help="kappa T <F_z^2> at the end of the window")
    o.add_argument("--T", type=float, default=35e-6, help="window length in s")
    o.set_defaults(fn=cmd_oracle)
    pl = sub.add_parser("pipeline", parents=[common])
    pl.add_argument("name", choices=PIPELINES)
    pl.set_defaults(fn=cmd_pipeline)
    sub.add_parser("show-config", parents=[common]).set_defaults(fn=cmd_show_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if isinstance(exc.cause, NumericalAbort) else EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QNDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
