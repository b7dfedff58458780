"""CSV and SVG output of harness runs, and reading them back for ``report``."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .experiment import CdfTable, MetricsRow, TrialResult

METRICS_HEADER = ("estimator", "sweep_param", "sweep_value", "mse", "bias_sq", "variance", "ci_low", "ci_high", "trials")
CDF_HEADER = ("estimator", "ratio", "cdf")
TRIALS_HEADER = ("sweep_value", "trial", "seed", "estimator", "value", "status")

# fixed ids and no timestamp keep the SVG bytes reproducible
matplotlib.rcParams["svg.hashsalt"] = "caelmips"
_SVG_META = {"Date": None, "Creator": None}


def _num(x: Optional[float]) -> str:
    return "" if x is None else repr(float(x))


def write_metrics(rows: Sequence[MetricsRow], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow(
                [r.estimator, r.sweep_param, _num(r.sweep_value), _num(r.mse), _num(r.bias_sq), _num(r.variance),
                 _num(r.ci_low), _num(r.ci_high), r.trials]
            )


def read_metrics(path) -> list[MetricsRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            MetricsRow(
                estimator=r["estimator"],
                sweep_param=r["sweep_param"],
                sweep_value=float(r["sweep_value"]) if r["sweep_value"] else None,
                mse=float(r["mse"]),
                bias_sq=float(r["bias_sq"]),
                variance=float(r["variance"]),
                ci_low=float(r["ci_low"]),
                ci_high=float(r["ci_high"]),
                trials=int(r["trials"]),
            )
            for r in reader
        ]


def write_cdf(tables: Mapping[str, CdfTable], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CDF_HEADER)
        for name, t in tables.items():
            for ratio, c in zip(t.ratio, t.cdf):
                w.writerow([name, _num(ratio), _num(c)])


def read_cdf(path) -> dict:
    grouped: dict = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CDF_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for r in reader:
            grouped.setdefault(r["estimator"], []).append((float(r["ratio"]), float(r["cdf"])))
    return {k: CdfTable(k, np.array([a for a, _ in v]), np.array([b for _, b in v])) for k, v in grouped.items()}


def write_trials(trials: Mapping[Optional[float], Sequence[TrialResult]], path) -> None:
    """Per-trial estimates; failed trials get one row with the failure reason."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIALS_HEADER)
        for value, results in trials.items():
            for r in results:
                if r.failed:
                    w.writerow([_num(value), r.index, r.seed, "", "", "failed: " + r.failure])
                    continue
                for name, v in r.values.items():
                    w.writerow([_num(value), r.index, r.seed, name, _num(v), "ok"])


def _save(fig: Figure, path: Path) -> None:
    fig.savefig(path, format="svg", metadata=_SVG_META)


def plot_metrics(rows: Sequence[MetricsRow], out_dir) -> list[Path]:
    """Bar chart of MSE / bias^2 / variance for a single setting, line chart of MSE for a sweep."""
    out_dir = Path(out_dir)
    if not rows:
        return []
    names = list(dict.fromkeys(r.estimator for r in rows))
    swept = rows[0].sweep_param != "none"
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.add_subplot()
    if swept:
        param = rows[0].sweep_param
        for name in names:
            sub = sorted((r for r in rows if r.estimator == name), key=lambda r: r.sweep_value)
            x = [r.sweep_value for r in sub]
            ax.plot(x, [r.mse for r in sub], marker="o", label=name)
            ax.fill_between(x, [r.ci_low for r in sub], [r.ci_high for r in sub], alpha=0.15)
        ax.set_xlabel(param)
        if param in ("n", "num_actions"):
            ax.set_xscale("log")
        ax.set_ylabel("MSE")
        target = out_dir / f"mse_vs_{param}.svg"
    else:
        x = np.arange(len(names))
        width = 0.27
        by_name = {r.estimator: r for r in rows}
        for k, (field_name, label) in enumerate((("mse", "MSE"), ("bias_sq", "squared bias"), ("variance", "variance"))):
            heights = [max(getattr(by_name[nm], field_name), 1e-12) for nm in names]
            ax.bar(x + (k - 1) * width, heights, width, label=label)
        ax.set_xticks(x)
        ax.set_xticklabels(names)
        target = out_dir / "bias_variance_mse.svg"
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    _save(fig, target)
    return [target]


def plot_cdf(tables: Mapping[str, CdfTable], out_dir) -> list[Path]:
    """Step plot of each estimator's relative squared-error CDF (log ratio axis)."""
    tables = {k: t for k, t in tables.items() if t.ratio.size}
    if not tables:
        return []
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.add_subplot()
    for name, t in tables.items():
        ratio = np.maximum(t.ratio, 1e-12)
        ax.step(np.concatenate([[ratio[0]], ratio]), np.concatenate([[0.0], t.cdf]), where="post", label=name)
    ax.axvline(1.0, color="grey", linewidth=0.8, linestyle="--")
    ax.set_xscale("log")
    ax.set_xlabel("squared error / squared error of ips")
    ax.set_ylabel("CDF")
    ax.legend()
    fig.tight_layout()
    target = Path(out_dir) / "relative_error_cdf.svg"
    _save(fig, target)
    return [target]


def emit_outputs(
    rows: Sequence[MetricsRow],
    cdf_tables: Optional[Mapping[str, CdfTable]],
    out_dir,
    trials: Optional[Mapping] = None,
) -> list[Path]:
    """Write metrics.csv, cdf.csv (and trials.csv when given) plus charts; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "metrics.csv", out_dir / "cdf.csv"]
    write_metrics(rows, written[0])
    write_cdf(cdf_tables or {}, written[1])
    if trials is not None:
        written.append(out_dir / "trials.csv")
        write_trials(trials, written[-1])
    written += plot_metrics(rows, out_dir)
    written += plot_cdf(cdf_tables or {}, out_dir)
    return written


def format_table(rows: Sequence[MetricsRow]) -> str:
    lines = [f"{'estimator':<10} {'param':<12} {'value':>8} {'mse':>10} {'bias^2':>10} {'var':>10} {'95% CI':>23} {'n':>4}"]
    for r in rows:
        value = "" if r.sweep_value is None else f"{r.sweep_value:g}"
        lines.append(
            f"{r.estimator:<10} {r.sweep_param:<12} {value:>8} {r.mse:>10.4g} {r.bias_sq:>10.4g} {r.variance:>10.4g} "
            f"[{r.ci_low:>9.4g}, {r.ci_high:>9.4g}] {r.trials:>4}"
        )
    return "\n".join(lines)
