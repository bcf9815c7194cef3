"""Command-line entry point: ``scalegan {train,sweep,verify-theory,resume,eval}``.

Exit codes: 0 success, 1 config error, 2 numerical abort, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import trainer
from .models import CheckpointError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3

SUMMARY_HEADER = ["preset", "seed", "status", "final_precision", "final_recall",
                  "min_recall_after_half", "max_grad_norm", "max_recall_drop", "error"]


def out_root(arg: str | None) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get("SCALEGAN_OUT", "runs"))


def _overrides(items) -> dict:
    d = {}
    for text in items or []:
        key, value = trainer.parse_override(text)
        # dotted keys address the flat config by their last component
        d[key.rsplit(".", 1)[-1]] = value
    return d


def _build_config(args) -> trainer.RunConfig:
    if bool(args.preset) == bool(args.config):
        raise trainer.ConfigError("config", "give exactly one of --preset or --config")
    cfg = trainer.preset_config(args.preset) if args.preset else trainer.load_config(args.config)
    over = _overrides(args.set)
    if args.seed is not None:
        over["seed"] = args.seed
    return cfg.with_overrides(over) if over else cfg


def cmd_train(args) -> int:
    cfg = _build_config(args)
    run_dir = Path(args.run_dir) if args.run_dir else out_root(args.out) / cfg.name / f"seed{cfg.seed}"
    trainer.run(cfg, run_dir)
    print(run_dir)
    return EXIT_OK


def _sweep_job(job) -> dict:
    preset, seed, overrides, run_dir = job
    row = {"preset": preset, "seed": seed, "status": "ok", "error": ""}
    try:
        cfg = trainer.preset_config(preset, seed=seed, **overrides)
        trainer.run(cfg, run_dir)
        row.update(trainer.summarize(Path(run_dir) / "metrics.csv"))
    except trainer.TrainingDiverged as exc:
        row.update(status="diverged", error=str(exc))
        if (Path(run_dir) / "metrics.csv").exists():
            try:
                row.update(trainer.summarize(Path(run_dir) / "metrics.csv"))
            except ValueError:
                pass
    except Exception as exc:  # recorded per row, the sweep continues
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def cmd_sweep(args) -> int:
    if args.name not in trainer.SWEEPS:
        raise trainer.ConfigError("sweep", f"unknown sweep {args.name!r}; "
                                           f"choose from {sorted(trainer.SWEEPS)}")
    overrides = _overrides(args.set)
    for bad in ("seed", "name"):
        if bad in overrides:
            raise trainer.ConfigError(bad, "cannot be overridden in a sweep")
    # validate once up front so a typo fails fast instead of once per row
    trainer.preset_config(trainer.SWEEPS[args.name][0], **overrides)
    root = out_root(args.out) / f"sweep-{args.name}"
    jobs = [(p, s, overrides, str(root / p / f"seed{s}"))
            for p in trainer.SWEEPS[args.name] for s in args.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_HEADER, restval="")
        w.writeheader()
        w.writerows(rows)
    print(root / "summary.csv")
    return EXIT_OK


def cmd_verify_theory(args) -> int:
    from . import theory_checks

    tol = {}
    if args.tol_all is not None:
        tol = {k: args.tol_all for k in theory_checks.DEFAULT_TOLERANCES}
    for text in args.tol or []:
        key, value = trainer.parse_override(text)
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise trainer.ConfigError(key, f"tolerance must be a number, got {value!r}")
        tol[key] = float(value)
    try:
        results = theory_checks.run_checks(tol, lam=args.lam, delta=args.delta, seed=args.seed,
                                           with_trend=args.with_trend)
    except KeyError as exc:
        raise trainer.ConfigError("tol", str(exc)) from None
    rep = theory_checks.report(results, args.lam, args.delta)
    text = json.dumps(rep, indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)
    return EXIT_OK if rep["all_passed"] else EXIT_VERIFY


def cmd_resume(args) -> int:
    ckpt = Path(args.checkpoint)
    state = trainer.resume(ckpt)
    if args.iterations is not None:
        if args.iterations < state.iteration:
            raise trainer.ConfigError("iterations", "must be >= the checkpoint iteration")
        state.config.iterations = args.iterations
    run_dir = Path(args.run_dir) if args.run_dir else ckpt.parent.parent
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(state.config.to_dict(), indent=2, sort_keys=True))
    trainer.train_loop(state, run_dir)
    print(run_dir)
    return EXIT_OK


def cmd_eval(args) -> int:
    state = trainer.resume(args.checkpoint)
    result = {"iteration": state.iteration, "T": state.strategy.current_T,
              **trainer.evaluate(state, args.samples)}
    text = json.dumps(result, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scalegan", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run")
    p.add_argument("--preset", choices=sorted(trainer.PRESETS))
    p.add_argument("--config", help="JSON config file (may name a base 'preset')")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    p.add_argument("--out", help="output root (default $SCALEGAN_OUT or ./runs)")
    p.add_argument("--run-dir", help="exact run directory, bypassing the output root layout")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run a named grid of presets over seeds")
    p.add_argument("name", help=", ".join(sorted(trainer.SWEEPS)))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-theory", help="run the oracle check suite, print a JSON report")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0027)
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", action="append", metavar="CHECK=VALUE", help="override one tolerance")
    p.add_argument("--tol-all", type=float, help="set every tolerance to this value")
    p.add_argument("--with-trend", action="store_true",
                   help="also run the slow q_lambda monotonicity check")
    p.add_argument("--report", help="also write the JSON report to this file")
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("resume", help="continue a run from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--iterations", type=int, help="train up to this iteration")
    p.add_argument("--run-dir")
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("eval", help="recompute metrics from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--samples", type=int)
    p.add_argument("--output")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (trainer.ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except trainer.TrainingDiverged as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
