"""Loading logged bandit data in the Open Bandit Dataset CSV layout.

A :class:`ColumnMapping` says which columns hold the action, reward,
propensity and context features. Context columns are numeric by default;
a column listed in ``categorical`` is one-hot encoded against a vocabulary
file (one level per line), and levels outside the vocabulary encode as all
zeros.
"""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import Dataset, check_distribution

logger = logging.getLogger(__name__)

DEFAULT_MAPPING = "obd_random_default.json"


class DataError(ValueError):
    """Logged data violates a documented requirement."""


class SchemaError(DataError):
    """A required column is missing, or the encoded context has the wrong length."""


class DataParseError(DataError):
    """A cell could not be parsed as a number."""


class EmptyDatasetError(DataError):
    """The file holds a header but no data rows."""


@dataclass(frozen=True)
class ColumnMapping:
    """Where each field of a logged sample lives in a delimited text file.

    Parameters
    ----------
    action_column, reward_column, propensity_column : str
    context_columns : sequence of str
        Ordered context feature columns.
    delimiter : str
    has_header : bool
        Without a header, columns are addressed by their 0-based index
        written as a string ("0", "1", ...).
    categorical : mapping of column name to vocabulary
        Columns to one-hot encode. Each vocabulary is a tuple of levels.
    num_actions : int, optional
        Overrides K inferred as ``max(action) + 1``.
    context_dim : int, optional
        Declared length of the encoded context; checked on every row.
    key_column : str, optional
        Column matched against the keys of a target-probability file.
    expect_uniform : bool
        Warn when propensities are not 1/K (uniformly random logs).
    """

    action_column: str
    reward_column: str
    propensity_column: str
    context_columns: tuple
    delimiter: str = ","
    has_header: bool = True
    categorical: Mapping[str, tuple] = field(default_factory=dict)
    num_actions: Optional[int] = None
    context_dim: Optional[int] = None
    key_column: Optional[str] = None
    expect_uniform: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "context_columns", tuple(self.context_columns))
        object.__setattr__(self, "categorical", {k: tuple(v) for k, v in dict(self.categorical).items()})
        if not self.context_columns:
            raise SchemaError("context_columns must be non-empty")
        names = [self.action_column, self.reward_column, self.propensity_column, *self.context_columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"column names must be distinct, got {names}")
        unknown = set(self.categorical) - set(self.context_columns)
        if unknown:
            raise SchemaError(f"categorical columns {sorted(unknown)} are not context columns")
        if len(self.delimiter) != 1:
            raise SchemaError("delimiter must be a single character")
        if self.num_actions is not None and self.num_actions < 1:
            raise SchemaError("num_actions must be >= 1")

    @property
    def encoded_dim(self) -> int:
        return sum(len(self.categorical[c]) if c in self.categorical else 1 for c in self.context_columns)

    @classmethod
    def from_dict(cls, cfg: dict, base_dir: Optional[Path] = None) -> "ColumnMapping":
        """Build a mapping from parsed JSON.

        ``categorical`` values are either inline lists of levels or paths to
        vocabulary files, resolved against ``base_dir``.
        """
        cfg = dict(cfg)
        required = ("action_column", "reward_column", "propensity_column", "context_columns")
        missing = [k for k in required if k not in cfg]
        if missing:
            raise SchemaError(f"mapping is missing {missing}")
        cats = {}
        for col, vocab in dict(cfg.pop("categorical", {}) or {}).items():
            if isinstance(vocab, str):
                path = Path(vocab)
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                vocab = load_vocabulary(path)
            cats[col] = tuple(str(v) for v in vocab)
        known = set(cls.__dataclass_fields__)
        extra = set(cfg) - known
        if extra:
            raise SchemaError(f"unknown mapping keys {sorted(extra)}")
        return cls(categorical=cats, **cfg)

    @classmethod
    def from_json(cls, path) -> "ColumnMapping":
        path = Path(path)
        with path.open() as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)


def load_vocabulary(path) -> tuple:
    """Levels of a categorical column, one per non-empty line, in file order."""
    with Path(path).open() as fh:
        levels = [line.strip() for line in fh if line.strip()]
    if len(set(levels)) != len(levels):
        raise SchemaError(f"vocabulary {path} has duplicate levels")
    return tuple(levels)


def default_mapping() -> ColumnMapping:
    """Bundled mapping for the uniformly random campaign (K = 240, d = 20)."""
    text = resources.files("caelmips.data").joinpath(DEFAULT_MAPPING).read_text()
    return ColumnMapping.from_dict(json.loads(text))


def _to_float(cell: str, column: str, row: int) -> float:
    try:
        value = float(cell)
    except (TypeError, ValueError):
        raise DataParseError(f"row {row}: column {column!r} has non-numeric value {cell!r}") from None
    if not np.isfinite(value):
        raise DataParseError(f"row {row}: column {column!r} is not finite ({cell!r})")
    return value


def encode_context(raw: Mapping[str, str], mapping: ColumnMapping, row: int = 0) -> np.ndarray:
    """Fixed-length context vector of one row.

    Numeric columns pass through; categorical ones become a one-hot block
    over their vocabulary, with unknown levels left as zeros.
    """
    parts = []
    for col in mapping.context_columns:
        if col not in raw:
            raise SchemaError(f"missing context column {col!r}")
        cell = raw[col]
        if col in mapping.categorical:
            vocab = mapping.categorical[col]
            block = np.zeros(len(vocab))
            key = str(cell).strip()
            if key in vocab:
                block[vocab.index(key)] = 1.0
            parts.append(block)
        else:
            parts.append(np.array([_to_float(cell, col, row)]))
    vec = np.concatenate(parts)
    if mapping.context_dim is not None and vec.shape[0] != mapping.context_dim:
        raise SchemaError(f"encoded context has length {vec.shape[0]}, mapping declares {mapping.context_dim}")
    return vec


def _header(reader, mapping: ColumnMapping, path) -> list[str]:
    if mapping.has_header:
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDatasetError(f"{path} is empty") from None
    else:
        header = None
    return header


def _check_columns(header: Sequence[str], needed: Sequence[str], path) -> None:
    for col in needed:
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r}")


def load_csv(path, mapping: ColumnMapping, max_rows: Optional[int] = None) -> Dataset:
    """Read a delimited log file into a :class:`Dataset`, preserving row order.

    Rewards are read as reals (binary clicks become 0.0/1.0). Row numbers
    in error messages count data rows from 1.
    """
    if max_rows is not None and max_rows < 1:
        raise DataError("max_rows must be positive")
    needed = [mapping.action_column, mapping.reward_column, mapping.propensity_column, *mapping.context_columns]
    contexts, actions, rewards, props = [], [], [], []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh, delimiter=mapping.delimiter)
        header = _header(reader, mapping, path)
        if header is not None:
            _check_columns(header, needed, path)
        for row_no, cells in enumerate(reader, start=1):
            if max_rows is not None and len(actions) >= max_rows:
                break
            if not cells or all(not c.strip() for c in cells):
                continue
            if header is None:
                header = [str(i) for i in range(len(cells))]
                _check_columns(header, needed, path)
            if len(cells) != len(header):
                raise DataParseError(f"row {row_no}: expected {len(header)} fields, got {len(cells)}")
            raw = dict(zip(header, cells))
            action = _to_float(raw[mapping.action_column], mapping.action_column, row_no)
            if action != int(action) or action < 0:
                raise DataParseError(f"row {row_no}: action {raw[mapping.action_column]!r} is not a non-negative integer")
            prop = _to_float(raw[mapping.propensity_column], mapping.propensity_column, row_no)
            if prop <= 0.0:
                raise DataError(f"row {row_no}: propensity {prop} must be strictly positive")
            if prop > 1.0:
                raise DataError(f"row {row_no}: propensity {prop} exceeds 1")
            actions.append(int(action))
            rewards.append(_to_float(raw[mapping.reward_column], mapping.reward_column, row_no))
            props.append(prop)
            contexts.append(encode_context(raw, mapping, row_no))
    if not actions:
        raise EmptyDatasetError(f"{path} has no data rows")
    inferred = max(actions) + 1
    K = mapping.num_actions if mapping.num_actions is not None else inferred
    if inferred > K:
        raise DataError(f"action id {inferred - 1} does not fit num_actions={K}")
    props_arr = np.array(props)
    if mapping.expect_uniform and not np.allclose(props_arr, 1.0 / K, rtol=1e-3, atol=0.0):
        warnings.warn(
            f"propensities differ from 1/K = {1.0 / K:.6g} (range {props_arr.min():.6g}..{props_arr.max():.6g}); "
            "the log may not come from a uniformly random policy",
            stacklevel=2,
        )
    return Dataset(
        contexts=np.vstack(contexts),
        actions=np.array(actions, dtype=np.int64),
        rewards=np.array(rewards),
        propensities=props_arr,
        num_actions=K,
    )


def load_keys(path, mapping: ColumnMapping, max_rows: Optional[int] = None) -> list[str]:
    """Values of ``mapping.key_column`` for the rows :func:`load_csv` would read."""
    if mapping.key_column is None:
        raise SchemaError("mapping has no key_column")
    keys = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter=mapping.delimiter)
        if reader.fieldnames is None or mapping.key_column not in [f.strip() for f in reader.fieldnames]:
            raise SchemaError(f"{path}: missing column {mapping.key_column!r}")
        for row in reader:
            if max_rows is not None and len(keys) >= max_rows:
                break
            if not any((v or "").strip() for v in row.values()):
                continue
            keys.append(row[mapping.key_column].strip())
    return keys


def load_target_probs(
    path,
    num_actions: int,
    n: int,
    keys: Optional[Sequence[str]] = None,
    delimiter: str = ",",
) -> np.ndarray:
    """Target-policy action probabilities for each logged row, shape (n, K).

    The first column of the file is the row key. With ``keys=None`` it is
    a 0-based row index into the log; otherwise it is matched against
    ``keys`` (one per logged row), so several rows may share a line. The
    remaining K columns are probabilities.
    """
    table: dict[str, np.ndarray] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{path} is empty") from None
        if len(header) != num_actions + 1:
            raise SchemaError(f"{path}: expected a key column and {num_actions} probability columns, got {len(header)} columns")
        for row_no, cells in enumerate(reader, start=1):
            if not cells:
                continue
            if len(cells) != num_actions + 1:
                raise DataParseError(f"row {row_no}: expected {num_actions + 1} fields, got {len(cells)}")
            probs = np.array([_to_float(c, header[j + 1], row_no) for j, c in enumerate(cells[1:])])
            try:
                check_distribution(probs, f"row {row_no} probabilities")
            except ValueError as exc:
                raise DataError(str(exc)) from None
            table[cells[0].strip()] = probs
    if not table:
        raise EmptyDatasetError(f"{path} has no data rows")
    lookup = [str(i) for i in range(n)] if keys is None else [str(k) for k in keys]
    if len(lookup) != n:
        raise DataError(f"got {len(lookup)} keys for {n} logged rows")
    missing = [k for k in lookup if k not in table]
    if missing:
        raise DataError(f"{path}: no target probabilities for key {missing[0]!r} ({len(missing)} missing)")
    return np.vstack([table[k] for k in lookup])


def save_csv(data: Dataset, path, mapping: Optional[ColumnMapping] = None) -> ColumnMapping:
    """Write a numeric-context dataset so that :func:`load_csv` reads it back exactly.

    Floats are written with ``repr`` precision. Returns the mapping used.
    """
    if mapping is None:
        mapping = ColumnMapping(
            action_column="action",
            reward_column="reward",
            propensity_column="propensity",
            context_columns=tuple(f"x{j}" for j in range(data.context_dim)),
            num_actions=data.num_actions,
        )
    if mapping.categorical:
        raise SchemaError("save_csv only writes numeric context columns")
    if len(mapping.context_columns) != data.context_dim:
        raise SchemaError(f"mapping has {len(mapping.context_columns)} context columns, data has {data.context_dim}")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter=mapping.delimiter, lineterminator="\n")
        if mapping.has_header:
            writer.writerow([mapping.action_column, mapping.reward_column, mapping.propensity_column, *mapping.context_columns])
        for i in range(data.n):
            writer.writerow(
                [int(data.actions[i]), repr(float(data.rewards[i])), repr(float(data.propensities[i]))]
                + [repr(float(v)) for v in data.contexts[i]]
            )
    return mapping
