"""Command line entry point: ``vmlimit {kernels,simulate,experiment,check}``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np
from scipy import integrate

from . import __version__


def _load_config(path, seed=None):
    from .config import parse_config

    with open(path) as fh:
        cfg = parse_config(fh.read())
    if seed is not None:
        cfg = cfg.with_(seed=int(seed))
    return cfg


def _run_dir(cfg, name):
    d = os.path.join(cfg.output_dir, name)
    os.makedirs(d, exist_ok=True)
    return d


def _freeze_config(cfg, directory):
    from .config import config_hash, emit_config

    with open(os.path.join(directory, "config.toml"), "w") as fh:
        fh.write(f"# config_hash={config_hash(cfg)}\n")
        fh.write(emit_config(cfg))


def cmd_kernels(args):
    from .config import config_hash
    from .kernels import cached_wave_kernel

    cfg = _load_config(args.config, args.seed)
    out = _run_dir(cfg, "kernels")
    h = config_hash(cfg)
    rows = []
    for rung in range(len(cfg.n_ladder)):
        p = cfg.params(rung)
        tau_max = cfg.horizon if args.tau_max is None else args.tau_max
        k = cached_wave_kernel(p, tau_max, cache_dir=os.path.join(out, "cache"))
        tau = k.tau_grid[len(k.tau_grid) // 2]
        r = k.r_grid
        y = k.table[0, len(k.tau_grid) // 2]
        mass = float(integrate.trapezoid(4 * math.pi * r * r * y, r))
        rows.append({"N": p.n_particles, "c": p.light_speed, "width": p.mollifier_width,
                     "table_shape": list(k.table.shape), "tau": float(tau), "Y_mass": mass})
        print(f"N={p.n_particles:<6d} c={p.light_speed:<8.4g} width={p.mollifier_width:<9.5f} "
              f"table={k.table.shape} int Y(tau={tau:.3g}) = {mass:.6f}")
    with open(os.path.join(out, "kernels.json"), "w") as fh:
        json.dump({"schema_version": 1, "config_hash": h, "kernels": rows}, fh, indent=2)
    return 0


def cmd_simulate(args):
    from .config import config_hash, trial_seed
    from .experiments import _assemble_report, rung_context, run_coupled_trial, summarize_rung
    from .initial_data import dump_ensembles_csv
    from .maxwell import save_checkpoint, write_trajectory_csv

    cfg = _load_config(args.config, args.seed)
    rung = args.rung
    if not 0 <= rung < len(cfg.n_ladder):
        raise IndexError(f"rung {rung} outside the ladder of {len(cfg.n_ladder)}")
    h = config_hash(cfg)
    out = _run_dir(cfg, f"simulate-seed{cfg.seed}-rung{rung}")
    _freeze_config(cfg, out)
    seed = trial_seed(cfg.seed, rung, 0)
    tr = run_coupled_trial(cfg, seed, rung, threads=args.threads, record_stride=cfg.trajectory_stride,
                           keep_history=True, trial=0)
    tag = f"config_hash={h}"
    write_trajectory_csv(os.path.join(out, "trajectories.csv"), tr.snapshots, tag)
    dump_ensembles_csv(os.path.join(out, "ensemble.csv"), {0: (tr.initial_positions, tr.initial_velocities)}, tag)
    if tr.maxwell_history is not None:
        save_checkpoint(os.path.join(out, "checkpoint.npz"), tr.maxwell_final, tr.maxwell_history, config_hash=h)
    summary = {"rung": rung, "trial": 0, "seed": seed, "error": tr.error, "times": tr.times,
               "deviation": tr.deviation, "S": tr.S, "d_final": tr.d_final, "S_final": tr.S_final,
               "exceeded": None if tr.error else bool(tr.exceeded)}
    row = summarize_rung(cfg, rung, [summary], {"cloud_bias": rung_context(cfg, rung).cloud_bias})
    report = _assemble_report(cfg, [row], [summary], 0.0, 1, args.threads)
    report.runtime["seconds"] = None
    report.write(out)
    print(f"d(T) = {tr.d_final:.6g}  threshold N^-alpha = {tr.threshold:.6g}  S_T = {tr.S_final:.4f}"
          + (f"  ABORTED: {tr.error}" if tr.error else ""))
    print(f"outputs in {out}")
    return 0 if tr.error is None else 3


def cmd_experiment(args):
    from .experiments import estimate_exceedance, field_comparison_diagnostic, fluctuation_scaling_experiment

    cfg = _load_config(args.config, args.seed)
    out = _run_dir(cfg, "experiment")
    _freeze_config(cfg, out)
    report = estimate_exceedance(cfg, workers=args.workers, threads=args.threads)
    if args.fluctuation:
        report.fluctuation = fluctuation_scaling_experiment(seed=cfg.seed, resamples=args.resamples,
                                                            threads=args.threads)
    if cfg.maxwell_meanfield:
        report.field_comparison = field_comparison_diagnostic(cfg, threads=args.threads)
    report.write(out)
    sys.stdout.write(report.to_text())
    return 0


def cmd_check(args):
    from .checks import format_table, run_checks

    rows = run_checks()
    print(format_table(rows))
    return 0 if all(ok for _, ok, _ in rows) else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="vmlimit", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", "-c", required=True, help="TOML experiment config")
            p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--threads", type=int, default=1, help="force-evaluation threads per trial")

    p = sub.add_parser("kernels", help="build, cache and inspect kernel tables")
    common(p)
    p.add_argument("--tau-max", type=float, default=None, help="table extent in lag time (default: horizon)")
    p.set_defaults(func=cmd_kernels)

    p = sub.add_parser("simulate", help="one coupled trial with trajectory dumps")
    common(p)
    p.add_argument("--rung", type=int, default=0, help="ladder index")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="exceedance estimates over the full ladder")
    common(p)
    p.add_argument("--workers", type=int, default=1, help="trial-level worker processes")
    p.add_argument("--fluctuation", action="store_true", help="also run the fluctuation-scaling measurement")
    p.add_argument("--resamples", type=int, default=1000, help="resamples per rung for --fluctuation")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("check", help="run the fast invariant suite")
    common(p, config=False)
    p.set_defaults(func=cmd_check)
    return ap


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}", file=sys.stderr)
        return 2


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
