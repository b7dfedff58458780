"""Seeded Monte Carlo trials, metric aggregation, sweeps and relative-error CDFs."""
from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .. import obd
from ..core import Dataset, PolicyLike, derive_seed, make_rng, uniform_policy
from ..estimators import dm_estimate, ips_estimate
from ..models import TrainingDivergedError, cael_mips_estimate, train_embeddings
from ..synthetic import SyntheticEnv, generate_dataset, true_value
from .config import ExperimentConfig, ObdConfig

logger = logging.getLogger(__name__)

_GT_KEY = 0x67
_DATA_KEY = 0xDA
_CAEL_KEY = 0xCA
_AEL_KEY = 0xAE
_DM_KEY = 0xD0
_BOOT_KEY = 0xB0


@dataclass(frozen=True)
class TrialResult:
    """Outcome of one trial: estimates by estimator, or the failure reason."""

    index: int
    seed: int
    values: dict
    failure: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.failure is not None


@dataclass(frozen=True)
class MetricsRow:
    estimator: str
    sweep_param: str
    sweep_value: Optional[float]
    mse: float
    bias_sq: float
    variance: float
    ci_low: float
    ci_high: float
    trials: int


@dataclass
class RunResult:
    """Rows, per-trial records and ground truths of a run, keyed by sweep value."""

    rows: list = field(default_factory=list)
    trials: dict = field(default_factory=dict)
    ground_truth: dict = field(default_factory=dict)


def trial_seed(seed: int, trial_index: int) -> int:
    return derive_seed(seed, trial_index)


def make_env(cfg: ExperimentConfig) -> SyntheticEnv:
    return SyntheticEnv(cfg.context_dim, cfg.num_actions, cfg.reward_std, seed=cfg.env_seed)


def ground_truth(cfg: ExperimentConfig) -> float:
    env = make_env(cfg)
    return true_value(env, env.target_policy(cfg.epsilon), cfg.gt_mc_samples, seed=derive_seed(cfg.seed, _GT_KEY)).value


def estimate_all(
    cfg: ExperimentConfig, data: Dataset, pi: PolicyLike, mu: Optional[PolicyLike], seed: int
) -> dict:
    """Every configured estimator on one dataset; trains each network once.

    Raises :class:`TrainingDivergedError` if any training fails.
    """
    names = cfg.estimators
    out = {"ips": ips_estimate(data, pi).value}
    cael_net = None
    if "cael-mips" in names or ("dm" in names and not cfg.independent_dm_head):
        cael_net, cael_post, _ = train_embeddings(data, pi, mu, cfg.train_config(derive_seed(seed, _CAEL_KEY)))
    if "dm" in names:
        if cfg.independent_dm_head:
            dm_net = train_embeddings(data, pi, mu, cfg.train_config(derive_seed(seed, _DM_KEY), ael=True)).net
        else:
            dm_net = cael_net
        out["dm"] = dm_estimate(data.contexts, pi, dm_net.reward_matrix, data.num_actions).value
    if "ael-mips" in names:
        net, post, _ = train_embeddings(data, pi, mu, cfg.train_config(derive_seed(seed, _AEL_KEY), ael=True))
        out["ael-mips"] = cael_mips_estimate(data, pi, mu, net, post, name="ael-mips").value
    if "cael-mips" in names:
        out["cael-mips"] = cael_mips_estimate(data, pi, mu, cael_net, cael_post).value
    return {k: out[k] for k in names}


def run_trial(cfg: ExperimentConfig, trial_index: int) -> TrialResult:
    """Generate one synthetic dataset and apply every estimator to it."""
    seed = trial_seed(cfg.seed, trial_index)
    env = make_env(cfg)
    mu = uniform_policy(cfg.num_actions)
    pi = env.target_policy(cfg.epsilon)
    data = generate_dataset(env, mu, cfg.n, seed=derive_seed(seed, _DATA_KEY))
    try:
        values = estimate_all(cfg, data, pi, mu, seed)
    except (TrainingDivergedError, FloatingPointError) as exc:
        return TrialResult(trial_index, seed, {}, failure=str(exc))
    return TrialResult(trial_index, seed, values)


def _run_trials(cfg: ExperimentConfig, fn, indices: Sequence[int]) -> list[TrialResult]:
    if cfg.workers > 1 and len(indices) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(fn, [cfg] * len(indices), indices))
    else:
        results = [fn(cfg, i) for i in indices]
    # reduce in trial order regardless of completion order
    results.sort(key=lambda r: r.index)
    for r in results:
        if r.failed:
            warnings.warn(f"trial {r.index} (seed {r.seed}) failed and is excluded: {r.failure}", stacklevel=2)
    return results


def bootstrap_mse_ci(
    errors: np.ndarray, resamples: int, rng: np.random.Generator, level: float = 0.95
) -> tuple[float, float]:
    """Percentile bootstrap interval of the mean squared error."""
    sq = np.asarray(errors, dtype=float) ** 2
    idx = rng.integers(0, sq.size, size=(resamples, sq.size))
    stats = sq[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(stats, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def aggregate(
    values: Mapping[str, Sequence[float]],
    truth: float,
    sweep_param: str = "none",
    sweep_value: Optional[float] = None,
    resamples: int = 10_000,
    seed: int = 0,
) -> list[MetricsRow]:
    """MSE, squared bias and population variance per estimator, with a bootstrap CI on the MSE."""
    rows = []
    for k, (name, vals) in enumerate(values.items()):
        v = np.asarray(vals, dtype=float)
        if v.size < 2:
            raise ValueError(f"{name}: need at least 2 trials, got {v.size}")
        err = v - truth
        rng = make_rng(derive_seed(seed, _BOOT_KEY, k))
        lo, hi = bootstrap_mse_ci(err, resamples, rng)
        rows.append(
            MetricsRow(
                estimator=name,
                sweep_param=sweep_param,
                sweep_value=sweep_value,
                mse=float(np.mean(err**2)),
                bias_sq=float(np.mean(err) ** 2),
                variance=float(np.var(v)),
                ci_low=lo,
                ci_high=hi,
                trials=int(v.size),
            )
        )
    return rows


def _collect(results: Sequence[TrialResult], names: Sequence[str]) -> dict:
    ok = [r for r in results if not r.failed]
    return {name: [r.values[name] for r in ok] for name in names}


def run_synthetic(cfg: ExperimentConfig) -> RunResult:
    """One configuration, or a grid when ``cfg.sweep_param`` is set."""
    out = RunResult()
    if cfg.sweep_param is None:
        grid = [(None, cfg)]
    else:
        grid = [(float(v), cfg.with_value(cfg.sweep_param, v)) for v in cfg.sweep_values]
    for value, sub in grid:
        truth = ground_truth(sub)
        results = _run_trials(sub, run_trial, list(range(cfg.num_trials)))
        out.trials[value] = results
        out.ground_truth[value] = truth
        out.rows += aggregate(
            _collect(results, sub.estimators),
            truth,
            sweep_param=cfg.sweep_param or "none",
            sweep_value=value,
            resamples=cfg.bootstrap_resamples,
            seed=cfg.seed,
        )
    return out


def squared_errors(results: Sequence[TrialResult], truth: float, names: Sequence[str]) -> dict:
    """Squared error per estimator keyed by trial seed, successful trials only."""
    return {name: {r.seed: (r.values[name] - truth) ** 2 for r in results if not r.failed} for name in names}


@dataclass(frozen=True)
class CdfTable:
    """Empirical CDF of error ratios: ``cdf[i]`` is the fraction of runs with ratio <= ``ratio[i]``."""

    estimator: str
    ratio: np.ndarray
    cdf: np.ndarray

    def at(self, x: float) -> float:
        k = np.searchsorted(self.ratio, x, side="right")
        return 0.0 if k == 0 else float(self.cdf[k - 1])


def relative_error_cdf(errors: Mapping[str, Mapping], baseline: str = "ips") -> dict:
    """CDF of each estimator's squared error divided by the baseline's, paired by trial key.

    ``errors`` maps estimator name to {trial key: squared error}; plain
    sequences are keyed by position. Runs where the baseline error is zero
    are dropped with a warning.
    """
    keyed = {name: (dict(e) if isinstance(e, Mapping) else dict(enumerate(e))) for name, e in errors.items()}
    if baseline not in keyed:
        raise ValueError(f"baseline {baseline!r} not among {sorted(keyed)}")
    keys = list(keyed[baseline])
    for name, e in keyed.items():
        if set(e) != set(keys):
            raise ValueError(f"{name} and {baseline} were not evaluated on the same runs")
    zero = [k for k in keys if keyed[baseline][k] == 0.0]
    if zero:
        warnings.warn(f"{len(zero)} run(s) with zero {baseline} error excluded from the CDF", stacklevel=2)
    keys = [k for k in keys if keyed[baseline][k] != 0.0]
    tables = {}
    for name, e in keyed.items():
        ratios = np.sort(np.array([e[k] / keyed[baseline][k] for k in keys], dtype=float))
        uniq, last = np.unique(ratios, return_index=False, return_counts=True)
        cdf = np.cumsum(last) / max(ratios.size, 1)
        tables[name] = CdfTable(name, uniq, cdf)
    return tables


# --- real-data protocol -------------------------------------------------


@dataclass(frozen=True)
class ObdInputs:
    data: Dataset
    target_probs: np.ndarray
    truth: float


def load_obd_inputs(cfg: ExperimentConfig) -> ObdInputs:
    """Read the log, target probabilities and ground truth named by ``cfg.obd``."""
    o = cfg.obd
    if not o.data or not o.target_probs:
        raise obd.DataError("the obd run needs both a data file and a target-probability file")
    mapping = obd.ColumnMapping.from_json(o.mapping) if o.mapping else obd.default_mapping()
    data = obd.load_csv(o.data, mapping, max_rows=o.max_rows)
    keys = obd.load_keys(o.data, mapping, max_rows=o.max_rows) if mapping.key_column else None
    probs = obd.load_target_probs(o.target_probs, data.num_actions, data.n, keys=keys, delimiter=mapping.delimiter)
    if o.target_log:
        truth = float(np.mean(obd.load_csv(o.target_log, mapping).rewards))
    elif o.ground_truth is not None:
        truth = float(o.ground_truth)
    else:
        raise obd.DataError("no ground truth: supply obd.target_log or obd.ground_truth")
    return ObdInputs(data, probs, truth)


def obd_trial(cfg: ExperimentConfig, inputs: ObdInputs, trial_index: int) -> TrialResult:
    """Estimate on ``cfg.n`` rows drawn from the log.

    Rows are drawn without replacement when the log is larger than ``n``,
    otherwise with replacement. The log is treated as uniformly random
    with its recorded propensities.
    """
    seed = trial_seed(cfg.seed, trial_index)
    rng = make_rng(derive_seed(seed, _DATA_KEY))
    N = inputs.data.n
    idx = rng.choice(N, size=cfg.n, replace=cfg.n >= N)
    data = inputs.data.subset(idx)
    pi = inputs.target_probs[idx]
    try:
        values = estimate_all(cfg, data, pi, None, seed)
    except (TrainingDivergedError, FloatingPointError) as exc:
        return TrialResult(trial_index, seed, {}, failure=str(exc))
    return TrialResult(trial_index, seed, values)


def run_obd(cfg: ExperimentConfig, inputs: Optional[ObdInputs] = None) -> tuple[RunResult, dict]:
    """Real-data protocol: repeated subsample runs, metrics and the CDF relative to IPS."""
    inputs = load_obd_inputs(cfg) if inputs is None else inputs
    results = [obd_trial(cfg, inputs, i) for i in range(cfg.num_trials)]
    for r in results:
        if r.failed:
            warnings.warn(f"trial {r.index} (seed {r.seed}) failed and is excluded: {r.failure}", stacklevel=2)
    out = RunResult(trials={None: results}, ground_truth={None: inputs.truth})
    out.rows = aggregate(
        _collect(results, cfg.estimators), inputs.truth, resamples=cfg.bootstrap_resamples, seed=cfg.seed
    )
    cdf = relative_error_cdf(squared_errors(results, inputs.truth, cfg.estimators), baseline="ips")
    return out, cdf


def write_obd_surrogate(cfg: ExperimentConfig, directory, rows: int) -> ExperimentConfig:
    """Write a synthetic log in the real-data CSV layout and point ``cfg.obd`` at it.

    The log, its target probabilities and the Monte Carlo ground truth
    come from the synthetic environment of ``cfg``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    env = make_env(cfg)
    data = generate_dataset(env, uniform_policy(cfg.num_actions), rows, seed=derive_seed(cfg.seed, _DATA_KEY, rows))
    mapping = obd.save_csv(data, directory / "log.csv")
    with (directory / "mapping.json").open("w") as fh:
        json.dump(
            {
                "action_column": mapping.action_column,
                "reward_column": mapping.reward_column,
                "propensity_column": mapping.propensity_column,
                "context_columns": list(mapping.context_columns),
                "num_actions": cfg.num_actions,
                "expect_uniform": True,
            },
            fh,
            indent=2,
        )
    probs = env.target_policy(cfg.epsilon).action_dist(data.contexts)
    with (directory / "target_probs.csv").open("w") as fh:
        fh.write("row," + ",".join(f"p{a}" for a in range(cfg.num_actions)) + "\n")
        for i in range(rows):
            fh.write(f"{i}," + ",".join(repr(float(p)) for p in probs[i]) + "\n")
    return replace(
        cfg,
        obd=ObdConfig(
            data=str(directory / "log.csv"),
            mapping=str(directory / "mapping.json"),
            target_probs=str(directory / "target_probs.csv"),
            ground_truth=ground_truth(cfg),
        ),
    )
