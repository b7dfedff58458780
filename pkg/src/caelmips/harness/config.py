"""Experiment configuration: JSON file plus command-line overrides."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from ..models import TrainConfig

ESTIMATORS = ("ips", "dm", "ael-mips", "cael-mips")
SWEEP_PARAMS = ("n", "num_actions", "epsilon", "reward_std")
N_SWEEP_TRIALS = 100
DEFAULT_TRIALS = 30


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ObdConfig:
    """Inputs of a real-data run. Relative paths resolve against the config file."""

    data: Optional[str] = None
    mapping: Optional[str] = None  # None selects the bundled default mapping
    target_probs: Optional[str] = None
    target_log: Optional[str] = None  # on-policy log of the target policy
    ground_truth: Optional[float] = None  # used when no target log is given
    max_rows: Optional[int] = None


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one run of the harness.

    ``trials=None`` picks 100 for n-sweeps and 30 otherwise. ``train``
    holds :class:`TrainConfig` overrides; ``rho`` and ``gamma`` apply to the
    CAEL network (the AEL network always uses zero).
    """

    context_dim: int = 5
    num_actions: int = 100
    epsilon: float = 0.2
    reward_std: float = 1.0
    n: int = 1000
    trials: Optional[int] = None
    estimators: tuple = ESTIMATORS
    train: dict = field(default_factory=dict)
    rho: float = 10.0
    gamma: float = 0.1
    independent_dm_head: bool = False
    gt_mc_samples: int = 1_000_000
    bootstrap_resamples: int = 10_000
    seed: int = 0
    env_seed: int = 0
    sweep_param: Optional[str] = None
    sweep_values: tuple = ()
    out_dir: str = "results"
    workers: int = 1
    obd: ObdConfig = field(default_factory=ObdConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        if isinstance(self.obd, dict):
            object.__setattr__(self, "obd", _build(ObdConfig, self.obd, "obd"))
        if self.trials is not None and self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.n < 1 or self.num_actions < 1 or self.context_dim < 1:
            raise ConfigError("n, num_actions and context_dim must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if self.reward_std < 0:
            raise ConfigError("reward_std must be >= 0")
        if not self.estimators:
            raise ConfigError("estimator list is empty")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown:
            raise ConfigError(f"unknown estimators {unknown}; choose from {list(ESTIMATORS)}")
        if "ips" not in self.estimators:
            raise ConfigError("ips is required as the reference estimator")
        if self.sweep_param is not None:
            if self.sweep_param not in SWEEP_PARAMS:
                raise ConfigError(f"sweep_param must be one of {list(SWEEP_PARAMS)}")
            if not self.sweep_values:
                raise ConfigError("sweep_values must be non-empty when sweeping")
        if self.gt_mc_samples < 1 or self.bootstrap_resamples < 1 or self.workers < 1:
            raise ConfigError("gt_mc_samples, bootstrap_resamples and workers must be >= 1")
        try:
            self.train_config(0)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train settings: {exc}") from None

    @property
    def num_trials(self) -> int:
        if self.trials is not None:
            return self.trials
        return N_SWEEP_TRIALS if self.sweep_param == "n" else DEFAULT_TRIALS

    def train_config(self, seed: int, ael: bool = False) -> TrainConfig:
        extra = {k: v for k, v in self.train.items() if k not in ("seed", "rho", "gamma")}
        rho, gamma = (0.0, 0.0) if ael else (self.rho, self.gamma)
        return TrainConfig(seed=seed, rho=rho, gamma=gamma, **extra)

    def with_value(self, param: str, value) -> "ExperimentConfig":
        """Copy with one environment parameter replaced (used by sweeps)."""
        if param not in SWEEP_PARAMS:
            raise ConfigError(f"cannot sweep {param!r}")
        cast = int if param in ("n", "num_actions") else float
        if cast is int and float(value) != int(value):
            raise ConfigError(f"{param} must be an integer, got {value}")
        return replace(self, **{param: cast(value)})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimators"] = list(self.estimators)
        d["sweep_values"] = list(self.sweep_values)
        return d


def _build(cls, values: dict, where: str):
    known = {f.name for f in fields(cls)}
    extra = sorted(set(values) - known)
    if extra:
        raise ConfigError(f"unknown {where} keys: {extra}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _resolve_paths(obd: dict, base: Path) -> dict:
    out = dict(obd)
    for key in ("data", "mapping", "target_probs", "target_log"):
        if out.get(key) and not Path(out[key]).is_absolute():
            out[key] = str(base / out[key])
    return out


def _merge(values: dict, extra: dict) -> dict:
    """Apply ``extra`` over ``values``; ``train`` and ``obd`` merge key by key, ``None`` is skipped."""
    out = dict(values)
    for key, val in extra.items():
        if val is None:
            continue
        if key in ("train", "obd") and isinstance(val, dict):
            out[key] = {**(out.get(key) or {}), **{k: v for k, v in val.items() if v is not None}}
        else:
            out[key] = val
    return out


def load_config(
    path: Optional[str] = None, overrides: Optional[dict] = None, base: Optional[dict] = None
) -> ExperimentConfig:
    """Build a config from ``base`` values, then the JSON file, then ``overrides``."""
    values: dict = dict(base or {})
    if path is not None:
        p = Path(path)
        try:
            loaded = json.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        if isinstance(loaded.get("obd"), dict):
            loaded["obd"] = _resolve_paths(loaded["obd"], p.parent)
        values = _merge(values, loaded)
    values = _merge(values, overrides or {})
    return _build(ExperimentConfig, values, "config")


# Desk scale keeps the acceptance suite on one CPU; full scale uses K = 500
# and the slower, smaller-step training schedule (30 trials, 100 for n-sweeps).
DESK_PRESET = ExperimentConfig()
FULL_PRESET = ExperimentConfig(num_actions=500, train={"iterations": 2000, "learning_rate": 1e-3})
PRESETS = {"desk": DESK_PRESET, "full": FULL_PRESET}
