"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .. import obd
from ..oracle import run_verification
from .config import PRESETS, SWEEP_PARAMS, ConfigError, ExperimentConfig, load_config
from .experiment import relative_error_cdf, run_obd, run_synthetic, squared_errors
from .output import emit_outputs, format_table, plot_cdf, plot_metrics, read_cdf, read_metrics

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3

logger = logging.getLogger("caelmips")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a named preset instead of the defaults")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--num-actions", type=int)
    p.add_argument("--context-dim", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--reward-std", type=float)
    p.add_argument("--estimators", nargs="+")
    p.add_argument("--rho", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--iterations", type=int, help="training iterations per network")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--gt-mc-samples", type=int)
    p.add_argument("--bootstrap-resamples", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--independent-dm-head", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caelmips", description="Off-policy evaluation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the exact-oracle identity suite")
    v.add_argument("--instances", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("synth", help="one synthetic experiment")
    _add_common(s)

    w = sub.add_parser("sweep", help="synthetic experiment over a parameter grid")
    _add_common(w)
    w.add_argument("--param", dest="sweep_param", choices=SWEEP_PARAMS)
    w.add_argument("--values", dest="sweep_values", nargs="+", type=float)

    o = sub.add_parser("obd", help="real-data protocol on a logged CSV")
    _add_common(o)
    o.add_argument("--data")
    o.add_argument("--mapping")
    o.add_argument("--target-probs")
    o.add_argument("--target-log")
    o.add_argument("--ground-truth", type=float)
    o.add_argument("--max-rows", type=int)

    r = sub.add_parser("report", help="re-draw charts and print the metrics of an output directory")
    r.add_argument("dir")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    keys = (
        "out_dir", "seed", "trials", "n", "num_actions", "context_dim", "epsilon", "reward_std", "estimators",
        "rho", "gamma", "gt_mc_samples", "bootstrap_resamples", "workers", "independent_dm_head",
        "sweep_param", "sweep_values",
    )
    out = {k: getattr(args, k) for k in keys if hasattr(args, k)}
    train = {k: getattr(args, k) for k in ("iterations", "learning_rate") if getattr(args, k, None) is not None}
    if train:
        out["train"] = train
    if args.command == "obd":
        out["obd"] = {
            "data": args.data,
            "mapping": args.mapping,
            "target_probs": args.target_probs,
            "target_log": args.target_log,
            "ground_truth": args.ground_truth,
            "max_rows": args.max_rows,
        }
    return out


def _config(args: argparse.Namespace) -> ExperimentConfig:
    base = PRESETS[args.preset].to_dict() if args.preset else None
    return load_config(args.config, _overrides(args), base=base)


def _cmd_verify(args) -> int:
    report = run_verification(args.instances, seed=args.seed)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_VERIFY


def _save_config(cfg: ExperimentConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def _cmd_synth(cfg: ExperimentConfig) -> int:
    result = run_synthetic(cfg)
    cdf = None
    if cfg.sweep_param is None:
        truth = result.ground_truth[None]
        cdf = relative_error_cdf(squared_errors(result.trials[None], truth, cfg.estimators), baseline="ips")
    out = Path(cfg.out_dir)
    _save_config(cfg, out)
    emit_outputs(result.rows, cdf, out, trials=result.trials)
    print(format_table(result.rows))
    return EXIT_OK


def _cmd_obd(cfg: ExperimentConfig) -> int:
    result, cdf = run_obd(cfg)
    out = Path(cfg.out_dir)
    _save_config(cfg, out)
    emit_outputs(result.rows, cdf, out, trials=result.trials)
    print(format_table(result.rows))
    print(f"ground truth {result.ground_truth[None]:.6g}")
    for name, t in cdf.items():
        print(f"{name}: fraction of runs with error <= ips error: {t.at(1.0):.3f}")
    return EXIT_OK


def _cmd_report(directory: str) -> int:
    d = Path(directory)
    metrics = d / "metrics.csv"
    if not metrics.exists():
        raise FileNotFoundError(f"{metrics} not found")
    rows = read_metrics(metrics)
    plot_metrics(rows, d)
    print(format_table(rows))
    if (d / "cdf.csv").exists():
        tables = read_cdf(d / "cdf.csv")
        plot_cdf(tables, d)
        for name, t in tables.items():
            print(f"{name}: CDF at ratio 1 = {t.at(1.0):.3f}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    logging.captureWarnings(True)
    try:
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "report":
            return _cmd_report(args.dir)
        cfg = _config(args)
        if args.command == "sweep" and cfg.sweep_param is None:
            raise ConfigError("sweep needs --param and --values (or sweep_param in the config)")
        if args.command == "synth" and cfg.sweep_param is not None:
            cfg = replace(cfg, sweep_param=None, sweep_values=())
        if args.command == "obd":
            return _cmd_obd(cfg)
        return _cmd_synth(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (obd.DataError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
