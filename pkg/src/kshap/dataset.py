"""Observation/action datasets, schemas, CSV I/O and feature standardization.

A dataset is stored column-wise: ``states`` (T, F), ``actions`` (T, d) and
optional integer ``labels``, ``agent_ids`` and ``timestamps``. Arrays are made
read-only so a dataset can be shared between stages without copies.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (EmptyDataset, InvalidDataset, IoFailure, MissingColumn, NonFiniteValue,
                     SchemaMismatch, TypeMismatch)
from .seeding import stream

LABEL_COL = "label"
AGENT_COL = "agent_id"
TIME_COL = "timestamp"
_OPTIONAL = (LABEL_COL, AGENT_COL, TIME_COL)


@dataclass(frozen=True)
class Schema:
    """Ordered feature and action column names plus action constraints.

    ``size_col`` must hold integers >= 1 and ``binary_cols`` must hold 0/1.
    """

    id: str
    features: tuple
    actions: tuple
    size_col: str | None = None
    binary_cols: tuple = ()

    @property
    def n_features(self):
        return len(self.features)

    @property
    def n_actions(self):
        return len(self.actions)

    def to_json(self):
        return {"id": self.id, "features": list(self.features), "actions": list(self.actions),
                "size_col": self.size_col, "binary_cols": list(self.binary_cols)}

    @classmethod
    def from_json(cls, obj):
        return cls(id=obj["id"], features=tuple(obj["features"]), actions=tuple(obj["actions"]),
                   size_col=obj.get("size_col"), binary_cols=tuple(obj.get("binary_cols", ())))


_WINDOWS_MIN = ("1min", "5min", "12min", "26min")
_MA_WINDOWS = ("12s", "26s", "60s", "5min", "12min", "26min", "48min", "96min")

MARKET_FEATURES = (
    ("spread",)
    + tuple(f"volume_imbalance_l{n}" for n in (1, 2, 5))
    + tuple(f"exec_volume_imbalance_{w}" for w in _WINDOWS_MIN)
    + tuple(f"price_return_{w}" for w in _WINDOWS_MIN)
    + tuple(f"price_ma_{w}" for w in _MA_WINDOWS)
    + tuple(f"spread_ma_{w}" for w in _MA_WINDOWS[:6])
    + ("price_ma_diff_12s_26s", "price_ma_diff_12min_26min", "price_ma_diff_48min_96min")
)
assert len(MARKET_FEATURES) == 29

MARKET_SCHEMA = Schema("market-v1", MARKET_FEATURES, ("order_size", "order_depth", "order_direction"),
                       size_col="order_size", binary_cols=("order_direction",))
PD_SCHEMA = Schema("pd-v1", ("timestep", "prev_action"), ("action",), binary_cols=("action",))
PD_NULL_SCHEMA = Schema("pd-v1-null", ("null_state",), ("action",), binary_cols=("action",))

SCHEMAS = {s.id: s for s in (MARKET_SCHEMA, PD_SCHEMA, PD_NULL_SCHEMA)}


def get_schema(schema):
    """Resolve a schema object, a built-in id, or a path to a schema JSON file."""
    if isinstance(schema, Schema):
        return schema
    if schema in SCHEMAS:
        return SCHEMAS[schema]
    path = Path(schema)
    if path.suffix == ".json" and path.exists():
        try:
            return Schema.from_json(json.loads(path.read_text()))
        except (OSError, KeyError, ValueError) as exc:
            raise SchemaMismatch(f"cannot read schema file {path}: {exc}") from exc
    raise SchemaMismatch(f"unknown schema {schema!r}; known: {sorted(SCHEMAS)}")


@dataclass(frozen=True)
class Observation:
    state: np.ndarray
    action: np.ndarray
    label: int | None = None
    agent_id: int | None = None
    timestamp: int | None = None


def _frozen(a, dtype):
    if a is None:
        return None
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    states: np.ndarray
    actions: np.ndarray
    schema: Schema
    labels: np.ndarray | None = None
    agent_ids: np.ndarray | None = None
    timestamps: np.ndarray | None = None
    label_names: tuple | None = field(default=None)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        actions = np.asarray(self.actions, dtype=float)
        if states.ndim == 1:
            states = states.reshape(-1, self.schema.n_features)
        if actions.ndim == 1:
            actions = actions.reshape(-1, self.schema.n_actions)
        object.__setattr__(self, "states", _frozen(states, float))
        object.__setattr__(self, "actions", _frozen(actions, float))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        object.__setattr__(self, "agent_ids", _frozen(self.agent_ids, np.int64))
        object.__setattr__(self, "timestamps", _frozen(self.timestamps, np.int64))
        self._check_shapes()

    def _check_shapes(self):
        T = self.states.shape[0]
        if self.states.shape[1] != self.schema.n_features:
            raise SchemaMismatch(f"{self.states.shape[1]} state columns, schema "
                                 f"{self.schema.id} has {self.schema.n_features}")
        if self.actions.shape != (T, self.schema.n_actions):
            raise SchemaMismatch(f"actions shape {self.actions.shape}, expected "
                                 f"({T}, {self.schema.n_actions})")
        for name in ("labels", "agent_ids", "timestamps"):
            a = getattr(self, name)
            if a is not None and a.shape != (T,):
                raise InvalidDataset(f"{name} has shape {a.shape}, expected ({T},)")
        if not (np.isfinite(self.states).all() and np.isfinite(self.actions).all()):
            raise InvalidDataset("states and actions must be finite")
        for col in self.schema.binary_cols:
            a = self.actions[:, self.schema.actions.index(col)]
            if not np.isin(a, (0.0, 1.0)).all():
                raise InvalidDataset(f"action {col!r} must be 0 or 1")
        if self.schema.size_col is not None:
            a = self.actions[:, self.schema.actions.index(self.schema.size_col)]
            if (a < 1).any() or (a != np.round(a)).any():
                raise InvalidDataset(f"action {self.schema.size_col!r} must be an integer >= 1")

    def validate(self):
        """Full invariant check, including contiguous labels ``0..L-1``."""
        if self.labels is not None and len(self):
            present = np.unique(self.labels)
            if present[0] != 0 or present[-1] != len(present) - 1:
                raise InvalidDataset(f"labels must cover 0..L-1 contiguously, got {present.tolist()}")
        return self

    # container protocol
    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray, list)):
            return self.take(np.arange(len(self))[i] if isinstance(i, slice) else np.asarray(i))
        opt = lambda a: None if a is None else int(a[i])  # noqa: E731
        return Observation(self.states[i], self.actions[i], opt(self.labels), opt(self.agent_ids),
                           opt(self.timestamps))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def n_features(self):
        return self.states.shape[1]

    @property
    def n_actions(self):
        return self.actions.shape[1]

    @property
    def n_labels(self):
        return 0 if self.labels is None or not len(self) else int(self.labels.max()) + 1

    def take(self, idx):
        """Subset by row index. Subsets may leave gaps in the label range."""
        idx = np.asarray(idx, dtype=np.int64)
        opt = lambda a: None if a is None else a[idx]  # noqa: E731
        return Dataset(self.states[idx], self.actions[idx], self.schema, opt(self.labels),
                       opt(self.agent_ids), opt(self.timestamps), self.label_names)

    def anonymized(self):
        """Copy without labels or agent ids; the only view the pipeline consumes."""
        return Dataset(self.states, self.actions, self.schema, timestamps=self.timestamps)

    def with_states(self, states, schema=None):
        return Dataset(states, self.actions, schema or self.schema, self.labels, self.agent_ids,
                       self.timestamps, self.label_names)

    def with_labels(self, labels, label_names=None):
        return Dataset(self.states, self.actions, self.schema, labels, self.agent_ids,
                       self.timestamps, label_names)

    def state_action_matrix(self):
        return np.hstack([self.states, self.actions])


def concat(datasets):
    datasets = list(datasets)
    if not datasets:
        raise EmptyDataset("nothing to concatenate")
    schema = datasets[0].schema
    for d in datasets[1:]:
        if d.schema != schema:
            raise SchemaMismatch(f"cannot concatenate {schema.id} with {d.schema.id}")

    def cat(name):
        parts = [getattr(d, name) for d in datasets]
        return None if any(p is None for p in parts) else np.concatenate(parts)

    return Dataset(np.vstack([d.states for d in datasets]), np.vstack([d.actions for d in datasets]),
                   schema, cat("labels"), cat("agent_ids"), cat("timestamps"),
                   datasets[0].label_names)


# ------------------------------------------------------------------ CSV I/O


def _fmt_float(v):
    # repr gives the shortest string that round-trips exactly
    return repr(float(v))


def save_csv(dataset, path):
    """Write ``dataset`` as CSV: features, actions, then optional columns."""
    schema = dataset.schema
    header = list(schema.features) + list(schema.actions)
    extras = [(n, getattr(dataset, a)) for n, a in
              ((LABEL_COL, "labels"), (AGENT_COL, "agent_ids"), (TIME_COL, "timestamps"))
              if getattr(dataset, a) is not None]
    header += [n for n, _ in extras]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(dataset)):
                row = [_fmt_float(v) for v in dataset.states[i]]
                row += [_fmt_float(v) for v in dataset.actions[i]]
                row += [str(int(a[i])) for _, a in extras]
                w.writerow(row)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_header(path):
    try:
        with open(path, newline="") as fh:
            return next(csv.reader(fh), [])
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def detect_schema(header):
    """The built-in schema whose columns prefix ``header``, else None."""
    for schema in SCHEMAS.values():
        cols = list(schema.features) + list(schema.actions)
        if header[:len(cols)] == cols and all(h in _OPTIONAL for h in header[len(cols):]):
            return schema
    return None


def _parse_float(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise TypeMismatch(row, col, text) from None
    if not math.isfinite(v):
        raise NonFiniteValue(row, col, text)
    return v


def _parse_int(text, row, col):
    try:
        return int(text)
    except ValueError:
        pass
    v = _parse_float(text, row, col)
    if v != int(v):
        raise TypeMismatch(row, col, text)
    return int(v)


def load_csv(path, schema="auto"):
    """Read a dataset written by :func:`save_csv` (or any conforming CSV).

    Required columns must appear in schema order; ``label``, ``agent_id`` and
    ``timestamp`` may follow in any order.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDataset(f"{path} is empty")
        header = [h.strip() for h in header]
        if schema == "auto":
            schema = detect_schema(header)
            if schema is None:
                raise SchemaMismatch(f"{path}: header matches no known schema")
        schema = get_schema(schema)
        required = list(schema.features) + list(schema.actions)
        for j, col in enumerate(required):
            if j >= len(header) or header[j] != col:
                raise MissingColumn(col, str(path))
        extra = header[len(required):]
        for col in extra:
            if col not in _OPTIONAL:
                raise SchemaMismatch(f"{path}: unexpected column {col!r}")
        nf, na = schema.n_features, schema.n_actions
        states, actions = [], []
        opt = {c: [] for c in extra}
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaMismatch(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
            states.append([_parse_float(row[j], r, header[j]) for j in range(nf)])
            actions.append([_parse_float(row[j], r, header[j]) for j in range(nf, nf + na)])
            for j, col in enumerate(extra, start=nf + na):
                opt[col].append(_parse_int(row[j], r, col))
    states = np.array(states, dtype=float).reshape(-1, nf)
    actions = np.array(actions, dtype=float).reshape(-1, na)
    ds = Dataset(states, actions, schema, opt.get(LABEL_COL),
                 opt.get(AGENT_COL), opt.get(TIME_COL))
    return ds.validate()


# ----------------------------------------------------------------- scaling


@dataclass(frozen=True)
class FeatureScaler:
    """Per-column standardization. Constant columns map to 0 and back to the mean."""

    means: np.ndarray
    stds: np.ndarray
    constant_mask: np.ndarray

    @classmethod
    def fit(cls, matrix):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] < 2:
            raise EmptyDataset("fitting a scaler needs at least 2 rows")
        means = m.mean(axis=0)
        stds = m.std(axis=0)
        const = stds <= 1e-12 * np.maximum(1.0, np.abs(means))
        stds = np.where(const, 0.0, stds)
        return cls(_frozen(means, float), _frozen(stds, float), _frozen(const, bool))

    def transform(self, matrix):
        m = np.asarray(matrix, dtype=float)
        safe = np.where(self.constant_mask, 1.0, self.stds)
        return np.where(self.constant_mask, 0.0, (m - self.means) / safe)

    def inverse(self, matrix):
        m = np.asarray(matrix, dtype=float)
        return np.where(self.constant_mask, self.means, m * self.stds + self.means)


def fit_scaler(dataset):
    return FeatureScaler.fit(dataset.states)


def apply_scaler(scaler, dataset):
    return dataset.with_states(scaler.transform(dataset.states))


def invert_scaler(scaler, dataset):
    return dataset.with_states(scaler.inverse(dataset.states))


def split_indices(T, fraction, seed):
    """Sorted row indices of the two parts produced by :func:`split`."""
    if T == 0:
        raise EmptyDataset("cannot split an empty dataset")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    perm = stream(seed, "split").permutation(T)
    n_first = int(math.floor(fraction * T))
    return np.sort(perm[:n_first]), np.sort(perm[n_first:])


def split(dataset, fraction, seed):
    """Random partition into (first, second) with ``floor(fraction * T)`` rows first.

    Both parts keep the original row order.
    """
    first, second = split_indices(len(dataset), fraction, seed)
    return dataset.take(first), dataset.take(second)
