"""Command line entry point: ``tensemap run|sweep|metrics|plots|repeatability``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .bridge import ProtocolError, RemoteError
from .config import ConfigError, default_config_path, load_config

# exit codes by error category
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_EVALUATOR = 3
EXIT_SIMULATION = 4
EXIT_DATA = 5

log = logging.getLogger("tensemap")


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    ev = cfg.evaluator
    if getattr(args, "backend", None):
        ev = dataclasses.replace(ev, backend=args.backend)
    if getattr(args, "endpoint", None):
        ev = dataclasses.replace(ev, endpoint=args.endpoint)
    if getattr(args, "duration", None) is not None:
        ev = dataclasses.replace(ev, trial_duration_s=args.duration)
    cfg = cfg.replace(evaluator=ev)
    if getattr(args, "out", None):
        cfg = cfg.replace(out_dir=str(args.out))
    return cfg


def cmd_run(args) -> int:
    from .harness import load_manifest_config, run_experiment

    if args.resume:
        cfg = load_manifest_config(args.resume)
        if args.backend or args.endpoint:
            cfg = _apply_overrides(cfg, argparse.Namespace(backend=args.backend,
                                                           endpoint=args.endpoint))
    else:
        cfg = _apply_overrides(load_config(args.config), args)
    log.info("running seed %d into %s", cfg.seed, cfg.out_dir)
    result = run_experiment(cfg, resume=bool(args.resume), plots=not args.no_plots)
    print(result.metrics.format())
    print(f"artifacts in {result.out_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .harness import run_experiment, summarize_seeds

    base = _apply_overrides(load_config(args.config), argparse.Namespace(
        backend=args.backend, endpoint=args.endpoint, duration=args.duration))
    root = Path(args.out or Path(base.out_dir).with_name(Path(base.out_dir).name + "_sweep"))
    tables = []
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        cfg = base.replace(seed=seed, out_dir=str(root / f"seed_{seed:03d}"))
        resume = (Path(cfg.out_dir) / "manifest.json").exists()
        tables.append(run_experiment(cfg, resume=resume, plots=not args.no_plots).metrics)
        m, c = tables[-1]["mutation_400"], tables[-1]["random_400"]
        print(f"seed {seed}: mutation {m.unique_behaviors} new bins, "
              f"control {c.unique_behaviors} new bins", flush=True)
    summary = summarize_seeds(tables)
    (root / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .harness import metrics_from_dir

    table = metrics_from_dir(args.run_dir)
    if args.csv:
        table.to_csv(args.csv)
    print(table.format())
    return EXIT_OK


def cmd_plots(args) -> int:
    from .harness import RunLayout, archives_from_dir
    from .plots import emit_branch_plots

    layout = RunLayout(args.run_dir)
    archives = archives_from_dir(args.run_dir)
    for name in ("mutation", "random_control"):
        paths = emit_branch_plots(archives[name], layout.plots(name))
        print(f"{name}: {len(archives[name])} elites, {len(paths)} files in {layout.plots(name)}")
    return EXIT_OK


def cmd_repeatability(args) -> int:
    from .repeatability import (RepeatabilityConfig, default_params_path, run_repeatability,
                                trials_to_rows, widths_satisfy_rule)

    cfg = RepeatabilityConfig.from_file(args.params or default_params_path(), seed=args.seed)
    print(f"{len(cfg.params)} parameter sets x {len(cfg.durations_s)} durations x "
          f"{cfg.replicates} replicates = {cfg.n_trials} trials", flush=True)
    report, trials = run_repeatability(cfg)
    doc = {"config": cfg.to_dict(), **report.to_dict(),
           "widths_satisfy_2sigma": widths_satisfy_rule(report)}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2) + "\n")
    if args.trials_csv:
        with Path(args.trials_csv).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["f1", "f2", "f3", "duration_s", "dx_mm", "dy_mm", "dpsi_deg"])
            w.writerows(trials_to_rows(trials))
    wx, wy, wpsi = report.suggested_widths
    print(f"suggested duration: {report.suggested_duration_s:g} s")
    print(f"suggested widths: dx {wx:.2f} mm, dy {wy:.2f} mm, dpsi {wpsi:.2f} deg")
    for d, s in sorted(report.duration_scores.items()):
        print(f"  {d:g} s: median noise/signal {s:.5f}")
    print(f"report written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tensemap", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add_eval_opts(sp):
        sp.add_argument("--backend", choices=("surrogate", "external"))
        sp.add_argument("--endpoint", help="host:port or serial device path")
        sp.add_argument("--duration", type=float, help="trial duration in seconds")
        sp.add_argument("--no-plots", action="store_true")

    r = sub.add_parser("run", help="shared random phase, then mutation and control branches")
    r.add_argument("--config", default=None,
                   help=f"YAML experiment config (default {default_config_path().name})")
    r.add_argument("--seed", type=int, help="master seed override")
    r.add_argument("--resume", metavar="DIR", help="continue an interrupted run directory")
    r.add_argument("--out", help="output directory override")
    add_eval_opts(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run several master seeds and summarize")
    s.add_argument("--config", default=None)
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--first-seed", type=int, default=0)
    s.add_argument("--out")
    add_eval_opts(s)
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("metrics", help="recompute the metrics table from trial logs")
    m.add_argument("run_dir")
    m.add_argument("--csv", help="also write the table to this CSV")
    m.set_defaults(func=cmd_metrics)

    pl = sub.add_parser("plots", help="re-emit rotation grids and arrow maps from trial logs")
    pl.add_argument("run_dir")
    pl.set_defaults(func=cmd_plots)

    rp = sub.add_parser("repeatability", help="replicated trials to size bins and pick a duration")
    rp.add_argument("--params", help="YAML list of parameter sets (default: bundled 15 sets)")
    rp.add_argument("--seed", type=int)
    rp.add_argument("--out", default="repeatability_report.json")
    rp.add_argument("--trials-csv")
    rp.set_defaults(func=cmd_repeatability)
    return p


def main(argv=None) -> int:
    from .harness import MetricsError
    from .repertoire import EmptyArchiveError, EvaluationError
    from .sim import SimulationError, StructureError
    from .trials import TrialLogError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, StructureError, FileExistsError) as exc:
        print(f"tensemap: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EvaluationError, ProtocolError, RemoteError) as exc:
        print(f"tensemap: evaluator error: {exc} (completed trials are saved; rerun with "
              f"--resume)", file=sys.stderr)
        return EXIT_EVALUATOR
    except SimulationError as exc:
        print(f"tensemap: simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except (MetricsError, TrialLogError, EmptyArchiveError, FileNotFoundError) as exc:
        print(f"tensemap: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
