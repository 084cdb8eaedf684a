"""Turn a RawTable into a dense, finite feature matrix.

All statistics (medians, clip bounds, means, deviations, category maps) are
fitted on training-split rows only and reused unchanged for every other row.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, SchemaViolation

SPLITS = ("train", "val", "test")
TRAIN, VAL, TEST = 0, 1, 2
RARE = "__RARE__"
MISSING = "__MISSING__"
DAY_SECONDS = 86400.0
WEEK_SECONDS = 604800.0


@dataclass
class PreprocessConfig:
    max_missing_frac: float = 0.9
    q_low: float = 0.005
    q_high: float = 0.995
    rare_min_count: int = 10
    onehot_max_cardinality: int = 16
    split_fractions: tuple = (0.7, 0.1, 0.2)
    std_epsilon: float = 1e-8

    def __post_init__(self):
        self.split_fractions = tuple(float(f) for f in self.split_fractions)
        if not 0.0 <= self.max_missing_frac <= 1.0:
            raise ConfigError("max_missing_frac must lie in [0, 1]")
        if not 0.0 <= self.q_low < self.q_high <= 1.0:
            raise ConfigError("need 0 <= q_low < q_high <= 1")
        if len(self.split_fractions) != 3 or min(self.split_fractions) <= 0:
            raise ConfigError("split_fractions must be three positive numbers")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError("split_fractions must sum to 1")
        if self.std_epsilon <= 0:
            raise ConfigError("std_epsilon must be positive")
        if self.rare_min_count < 1 or self.onehot_max_cardinality < 0:
            raise ConfigError("rare_min_count must be >= 1 and onehot_max_cardinality >= 0")


@dataclass
class NumericStats:
    median: float
    clip_lo: float
    clip_hi: float
    mean: float
    std: float


@dataclass
class CategoricalStats:
    codes: dict
    frequencies: dict
    n_train: int
    onehot: bool

    @property
    def cardinality(self):
        return len(self.codes)

    def block_names(self, column):
        if not self.onehot:
            return [f"{column}__freq"]
        names = sorted(self.codes, key=self.codes.get)
        return [f"{column}={v}" for v in names] + [f"{column}={RARE}", f"{column}={MISSING}"]


@dataclass
class FittedTransform:
    numeric: dict = field(default_factory=dict)
    categorical: dict = field(default_factory=dict)
    retained: list = field(default_factory=list)
    kinds: dict = field(default_factory=dict)
    time_column: str = None
    feature_names: list = field(default_factory=list)

    def to_dict(self):
        return {
            "numeric": {k: asdict(v) for k, v in self.numeric.items()},
            "categorical": {k: asdict(v) for k, v in self.categorical.items()},
            "retained": list(self.retained),
            "kinds": dict(self.kinds),
            "time_column": self.time_column,
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            numeric={k: NumericStats(**v) for k, v in data["numeric"].items()},
            categorical={k: CategoricalStats(**v) for k, v in data["categorical"].items()},
            retained=list(data["retained"]),
            kinds=dict(data["kinds"]),
            time_column=data["time_column"],
            feature_names=list(data["feature_names"]),
        )


@dataclass
class FeatureMatrix:
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    split: np.ndarray
    feature_names: list
    ids: np.ndarray

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    def mask(self, name):
        return self.split == SPLITS.index(name)

    def save(self, path):
        np.savez(path, x=self.x, y=self.y, t=self.t, split=self.split, ids=self.ids,
                 feature_names=np.array(self.feature_names, dtype=str))

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            return cls(x=z["x"], y=z["y"], t=z["t"], split=z["split"],
                       feature_names=[str(s) for s in z["feature_names"]], ids=z["ids"])


def _feature_columns(table):
    return [c for c in table.columns if c.kind in ("numeric", "categorical")]


def drop_high_missing(table, max_missing_frac):
    """Drop feature columns whose missing fraction strictly exceeds the threshold.

    Identifier, label and time columns are always kept.
    """
    keep = []
    for c in table.columns:
        if c.kind in ("numeric", "categorical"):
            if table.missing_fraction(c.name) > max_missing_frac:
                continue
        keep.append(c.name)
    return table.select_columns(keep)


def quantile(values, q):
    """Linear-interpolation quantile of a 1-D array (position ``q * (n - 1)`` in sorted order)."""
    return float(np.quantile(values, q, method="linear"))


def encode_time(t):
    """Return ``(sin_day, cos_day, sin_week, cos_week)`` for times in seconds.

    Works elementwise on arrays; returns a tuple of floats for a scalar.
    """
    t = np.asarray(t, dtype=np.float64)
    day = 2.0 * np.pi * t / DAY_SECONDS
    week = 2.0 * np.pi * t / WEEK_SECONDS
    out = (np.sin(day), np.cos(day), np.sin(week), np.cos(week))
    if t.ndim == 0:
        return tuple(float(v) for v in out)
    return out


def time_split(t, fractions, ids):
    """Chronological split codes (0 train, 1 val, 2 test), ordering rows by ``(t, id)``."""
    t = np.asarray(t, dtype=np.float64)
    ids = np.asarray(ids)
    n = len(t)
    order = np.lexsort((ids, t))
    n_train = math.floor(fractions[0] * n)
    n_val = math.floor(fractions[1] * n)
    split = np.full(n, TEST, dtype=np.int8)
    split[order[:n_train]] = TRAIN
    split[order[n_train:n_train + n_val]] = VAL
    return split


def _fit_numeric(values, config):
    present = values[~np.isnan(values)]
    median = float(np.median(present)) if len(present) else 0.0
    filled = np.where(np.isnan(values), median, values)
    lo = quantile(filled, config.q_low)
    hi = quantile(filled, config.q_high)
    clipped = np.clip(filled, lo, hi)
    mean = float(clipped.mean())
    std = max(float(clipped.std()), config.std_epsilon)
    return NumericStats(median=median, clip_lo=lo, clip_hi=hi, mean=mean, std=std)


def _fit_categorical(values, config):
    counts = {}
    for v in values:
        if v is not None:
            counts[v] = counts.get(v, 0) + 1
    kept = sorted((v for v, c in counts.items() if c >= config.rare_min_count),
                  key=lambda v: (-counts[v], v))
    codes = {v: i for i, v in enumerate(kept)}
    return CategoricalStats(codes=codes, frequencies=dict(sorted(counts.items())),
                            n_train=len(values),
                            onehot=len(codes) <= config.onehot_max_cardinality)


def fit(table, config, train_mask):
    """Fit imputation, clipping, scaling and category maps on the rows selected by ``train_mask``."""
    train_mask = np.asarray(train_mask, dtype=bool)
    if train_mask.sum() < 2:
        raise ConfigError("training split needs at least 2 rows")
    features = _feature_columns(table)
    if not features and table.time_column is None:
        raise ConfigError("no feature columns left to fit")
    fitted = FittedTransform(time_column=table.time_column)
    for c in features:
        fitted.retained.append(c.name)
        fitted.kinds[c.name] = c.kind
        train_values = table.cells[c.name][train_mask]
        if c.kind == "numeric":
            fitted.numeric[c.name] = _fit_numeric(train_values, config)
            fitted.feature_names.append(c.name)
        else:
            stats = _fit_categorical(train_values, config)
            fitted.categorical[c.name] = stats
            fitted.feature_names.extend(stats.block_names(c.name))
    if table.time_column is not None:
        fitted.feature_names.extend(["time_sin_day", "time_cos_day",
                                     "time_sin_week", "time_cos_week"])
    return fitted


def _transform_numeric(values, s):
    filled = np.where(np.isnan(values), s.median, values)
    return (np.clip(filled, s.clip_lo, s.clip_hi) - s.mean) / s.std


def _transform_categorical(values, s):
    n = len(values)
    if s.onehot:
        width = s.cardinality + 2
        rare, missing = s.cardinality, s.cardinality + 1
        idx = np.array([missing if v is None else s.codes.get(v, rare) for v in values],
                       dtype=np.int64)
        block = np.zeros((n, width))
        block[np.arange(n), idx] = 1.0
        return block
    freq = np.array([0.0 if v is None else s.frequencies.get(v, 0) / s.n_train
                     for v in values])
    return freq[:, None]


def transform(table, fitted, split=None):
    """Apply a fitted transform to every row of ``table``."""
    blocks = []
    for name in fitted.retained:
        try:
            spec = table.spec(name)
        except KeyError:
            raise SchemaViolation("column missing at transform time", column=name) from None
        if spec.kind != fitted.kinds[name]:
            raise SchemaViolation(f"column kind {spec.kind!r} differs from fitted "
                                  f"{fitted.kinds[name]!r}", column=name)
        values = table.cells[name]
        if spec.kind == "numeric":
            blocks.append(_transform_numeric(values, fitted.numeric[name])[:, None])
        else:
            blocks.append(_transform_categorical(values, fitted.categorical[name]))
    if fitted.time_column is not None:
        if table.time_column != fitted.time_column:
            raise SchemaViolation("time column differs from fitted", column=fitted.time_column)
        blocks.append(np.column_stack(encode_time(table.times)))
    x = np.concatenate(blocks, axis=1) if blocks else np.zeros((table.n_rows, 0))
    if x.shape[1] != len(fitted.feature_names):
        raise SchemaViolation(f"produced {x.shape[1]} features, fitted {len(fitted.feature_names)}")
    if not np.isfinite(x).all():
        raise SchemaViolation("transform produced non-finite values")
    t = table.times if table.times is not None else np.zeros(table.n_rows)
    if split is None:
        split = np.full(table.n_rows, TEST, dtype=np.int8)
    return FeatureMatrix(x=x, y=np.asarray(table.labels, dtype=np.int64).copy(),
                         t=np.asarray(t, dtype=np.float64).copy(), split=np.asarray(split),
                         feature_names=list(fitted.feature_names),
                         ids=np.asarray(table.ids).copy())


def split_table(table, config):
    times = table.times if table.times is not None else np.zeros(table.n_rows)
    return time_split(times, config.split_fractions, table.ids)


def fit_transform(table, config):
    """Split chronologically, drop sparse columns, fit on train rows, and transform all rows.

    Returns ``(features, fitted, filtered_table)``.  The missing-rate filter is
    evaluated on training rows only so that no statistic sees val/test data.
    """
    split = split_table(table, config)
    train = split == TRAIN
    keep = drop_high_missing(table.take(train), config.max_missing_frac)
    filtered = table.select_columns([c.name for c in keep.columns])
    fitted = fit(filtered, config, train)
    return transform(filtered, fitted, split), fitted, filtered


def _summary(values):
    values = values[~np.isnan(values)] if values.dtype.kind == "f" else values
    if len(values) == 0:
        return None
    names = ("min", "q01", "q25", "q50", "q75", "q99", "max")
    qs = np.quantile(values, (0.0, 0.01, 0.25, 0.5, 0.75, 0.99, 1.0))
    out = {name: float(v) for name, v in zip(names, qs)}
    out["mean"] = float(np.mean(values))
    return out


def preprocess_report(before, after, fitted, amount_column="TransactionAmt"):
    """Before/after statistics: missing rates, amount distribution, kept and dropped columns."""
    before_missing = {c.name: before.missing_fraction(c.name)
                      for c in before.columns if c.kind in ("numeric", "categorical")}
    dropped = {k: v for k, v in before_missing.items() if k not in fitted.retained}
    report = {
        "n_rows": int(before.n_rows),
        "n_features": int(after.d),
        "missing_before": before_missing,
        "missing_after": {name: float(np.isnan(after.x[:, j]).mean()) if after.n else 0.0
                          for j, name in enumerate(after.feature_names)},
        "retained": list(fitted.retained),
        "dropped": dropped,
    }
    if amount_column in fitted.numeric:
        s = fitted.numeric[amount_column]
        raw = before.cells[amount_column]
        clipped = np.clip(np.where(np.isnan(raw), s.median, raw), s.clip_lo, s.clip_hi)
        report["amount"] = {
            "column": amount_column,
            "before": _summary(raw),
            "after": _summary(clipped),
            "clip_lo": s.clip_lo,
            "clip_hi": s.clip_hi,
        }
    return report
