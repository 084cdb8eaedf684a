import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskgraph.errors import ConfigError, SchemaViolation
from riskgraph.ingest import ColumnSpec, RawTable
from riskgraph.preprocess import (MISSING, RARE, TEST, TRAIN, VAL, PreprocessConfig,
                                  drop_high_missing, encode_time, fit, fit_transform,
                                  preprocess_report, time_split, transform)


def make_table(numeric=None, categorical=None, t=None, n=None):
    numeric = numeric or {}
    categorical = categorical or {}
    n = n if n is not None else len(next(iter({**numeric, **categorical}.values())))
    cols = [ColumnSpec("id", "identifier"), ColumnSpec("y", "label"), ColumnSpec("t", "time")]
    cells = {"id": np.arange(n, dtype=np.int64), "y": np.arange(n) % 2,
             "t": np.arange(n, dtype=float) if t is None else np.asarray(t, dtype=float)}
    for name, v in numeric.items():
        cols.append(ColumnSpec(name, "numeric"))
        cells[name] = np.asarray(v, dtype=float)
    for name, v in categorical.items():
        cols.append(ColumnSpec(name, "categorical"))
        cells[name] = np.asarray(v, dtype=object)
    return RawTable(tuple(cols), n, cells)


def sort_quantile(values, q):
    s = sorted(values)
    pos = q * (len(s) - 1)
    lo = math.floor(pos)
    hi = math.ceil(pos)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


def all_rows(n):
    return np.ones(n, dtype=bool)


# ----------------------------------------------------------- drop filter


def test_drop_is_strictly_above_threshold():
    n = 20
    cols = {"a": np.where(np.arange(n) < 19, np.nan, 1.0),   # 95% missing
            "b": np.ones(n),                                   # 0% missing
            "c": np.where(np.arange(n) < 18, np.nan, 1.0)}     # exactly 90%
    out = drop_high_missing(make_table(cols), 0.9)
    names = [c.name for c in out.columns]
    assert "a" not in names and "b" in names and "c" in names
    assert {"id", "y", "t"} <= set(names)


# -------------------------------------------------------------- fitting


def test_constant_column_maps_to_zero():
    table = make_table({"c": np.full(10, 3.0)})
    fitted = fit(table, PreprocessConfig(), all_rows(10))
    assert fitted.numeric["c"].std == 1e-8
    assert np.all(transform(table, fitted).x[:, 0] == 0.0)


def test_rare_categories_fold_into_rare():
    values = ["A"] * 5 + ["B"]
    table = make_table(categorical={"k": values})
    fitted = fit(table, PreprocessConfig(rare_min_count=2), all_rows(6))
    stats = fitted.categorical["k"]
    assert stats.codes == {"A": 0}
    assert fitted.feature_names[:3] == ["k=A", f"k={RARE}", f"k={MISSING}"]
    x = transform(table, fitted).x
    assert x[5, :3].tolist() == [0, 1, 0]


def test_clip_bounds_match_sort_oracle():
    values = np.arange(1.0, 1001.0)
    table = make_table({"v": values})
    s = fit(table, PreprocessConfig(), all_rows(1000)).numeric["v"]
    assert s.clip_lo == pytest.approx(sort_quantile(values, 0.005), abs=1e-12)
    assert s.clip_hi == pytest.approx(sort_quantile(values, 0.995), abs=1e-12)


def test_quantile_oracle_on_random_values():
    rng = np.random.default_rng(3)
    for _ in range(50):
        v = rng.normal(size=rng.integers(2, 60))
        table = make_table({"v": v})
        q_lo, q_hi = sorted(rng.random(2))
        cfg = PreprocessConfig(q_low=q_lo, q_high=max(q_hi, q_lo + 1e-3))
        s = fit(table, cfg, all_rows(len(v))).numeric["v"]
        assert s.clip_lo == pytest.approx(sort_quantile(v, cfg.q_low), abs=1e-12)
        assert s.clip_hi == pytest.approx(sort_quantile(v, cfg.q_high), abs=1e-12)


def test_empty_train_split_rejected():
    table = make_table({"v": np.ones(5)})
    with pytest.raises(ConfigError):
        fit(table, PreprocessConfig(), np.zeros(5, dtype=bool))


# ------------------------------------------------------------- transform


def test_value_below_clip_is_clipped_then_standardized():
    rng = np.random.default_rng(0)
    train = rng.normal(size=200)
    table = make_table({"v": np.r_[train, -1e6]})
    mask = np.r_[np.ones(200, bool), False]
    fitted = fit(table, PreprocessConfig(), mask)
    s = fitted.numeric["v"]
    x = transform(table, fitted).x
    assert x[-1, 0] == pytest.approx((s.clip_lo - s.mean) / s.std)


def test_unseen_category_is_rare():
    table = make_table(categorical={"k": ["A"] * 12 + ["Z"]})
    mask = np.r_[np.ones(12, bool), False]
    fitted = fit(table, PreprocessConfig(), mask)
    x = transform(table, fitted).x
    j = fitted.feature_names.index(f"k={RARE}")
    assert x[-1, j] == 1.0


def test_frequency_encoding_on_590_rows():
    # 59 rows share one category; the other 531 cycle through 531 singletons
    values = ["hot"] * 59 + [f"v{i}" for i in range(531)]
    table = make_table(categorical={"k": values})
    cfg = PreprocessConfig(rare_min_count=1, onehot_max_cardinality=16)
    fitted = fit(table, cfg, all_rows(590))
    assert fitted.feature_names[0] == "k__freq"
    x = transform(table, fitted).x
    assert x[0, 0] == pytest.approx(59 / 590) and x[0, 0] == pytest.approx(0.1)
    assert x[100, 0] == pytest.approx(1 / 590)


def test_missing_category_in_frequency_mode_is_zero():
    values = [f"v{i}" for i in range(30)] + [None]
    table = make_table(categorical={"k": values})
    fitted = fit(table, PreprocessConfig(rare_min_count=1, onehot_max_cardinality=4),
                 all_rows(31))
    assert transform(table, fitted).x[-1, 0] == 0.0


def test_kind_mismatch_raises():
    table = make_table({"v": np.arange(5.0)})
    fitted = fit(table, PreprocessConfig(), all_rows(5))
    other = make_table(categorical={"v": list("abcde")})
    with pytest.raises(SchemaViolation):
        transform(other, fitted)


def test_train_rows_are_standardized():
    rng = np.random.default_rng(1)
    n = 500
    table = make_table({"a": rng.lognormal(size=n), "b": rng.normal(5, 3, n),
                        "c": np.full(n, 2.0)})
    mask = rng.random(n) < 0.7
    fitted = fit(table, PreprocessConfig(), mask)
    x = transform(table, fitted).x[mask]
    for j in range(2):
        assert abs(x[:, j].mean()) <= 1e-6
        assert abs(x[:, j].std() - 1) <= 1e-3
    assert np.all(x[:, 2] == 0.0)


# ------------------------------------------------------------------ time


def test_encode_time_phases():
    assert encode_time(0) == pytest.approx((0, 1, 0, 1))
    sd, cd, _, _ = encode_time(21600)
    assert (sd, cd) == pytest.approx((1, 0), abs=1e-12)
    _, _, sw, cw = encode_time(302400)
    assert (sw, cw) == pytest.approx((0, -1), abs=1e-12)


def test_time_split_counts():
    split = time_split(np.arange(10.0), (0.7, 0.1, 0.2), np.arange(10))
    assert [int((split == s).sum()) for s in (TRAIN, VAL, TEST)] == [7, 1, 2]


def test_equal_times_split_by_id():
    ids = np.array([5, 3, 9, 1, 7])
    split = time_split(np.zeros(5), (0.6, 0.2, 0.2), ids)
    # id order 1, 3, 5, 7, 9 -> train 1, 3, 5; val 7; test 9
    assert split.tolist() == [TRAIN, TRAIN, TEST, TRAIN, VAL]


def test_shuffled_split_matches_sort_then_assign():
    rng = np.random.default_rng(2)
    t = rng.integers(0, 8, 20).astype(float)
    ids = rng.permutation(100)[:20]
    # oracle: sort row indices by (t, id), label positions, map back to rows
    order = sorted(range(20), key=lambda r: (t[r], ids[r]))
    oracle = {}
    for pos, r in enumerate(order):
        oracle[ids[r]] = TRAIN if pos < 14 else VAL if pos < 16 else TEST
    for _ in range(5):
        perm = rng.permutation(20)
        split = time_split(t[perm], (0.7, 0.1, 0.2), ids[perm])
        assert all(split[k] == oracle[ids[perm][k]] for k in range(20))


def test_split_masks_are_chronological():
    rng = np.random.default_rng(4)
    t = rng.permutation(1000).astype(float)
    split = time_split(t, (0.7, 0.1, 0.2), np.arange(1000))
    assert t[split == TRAIN].max() <= t[split == VAL].min()
    assert t[split == VAL].max() <= t[split == TEST].min()


# ----------------------------------------------------------- properties


cell_float = st.one_of(st.just(np.nan), st.floats(-1e12, 1e12, allow_nan=False))
cell_cat = st.one_of(st.none(), st.sampled_from(["a", "b", "c", "d", "e", "f"]))


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 40).flatmap(lambda n: st.tuples(
    st.lists(cell_float, min_size=n, max_size=n),
    st.lists(cell_cat, min_size=n, max_size=n),
    st.lists(cell_cat, min_size=n, max_size=n))))
def test_features_are_always_finite(cols):
    num, cat, unseen = cols
    n = len(num)
    table = make_table({"v": num}, {"k": cat})
    features, _, _ = fit_transform(table, PreprocessConfig(rare_min_count=1))
    assert np.isfinite(features.x).all()
    # categories never seen in training still encode finitely
    shifted = table.with_cells(k=np.array([None if v is None else v + "!" for v in unseen],
                                          dtype=object))
    _, fitted, _ = fit_transform(table, PreprocessConfig())
    assert np.isfinite(transform(shifted, fitted).x).all()
    assert features.split.shape == (n,)


def test_fit_ignores_val_and_test_cells():
    rng = np.random.default_rng(6)
    n = 100
    table = make_table({"v": rng.normal(size=n)},
                       {"k": rng.choice(list("abcdefg"), n).astype(object)})
    cfg = PreprocessConfig(rare_min_count=2)
    _, base, _ = fit_transform(table, cfg)
    split = time_split(table.times, cfg.split_fractions, table.ids)
    held = np.flatnonzero(split != TRAIN)
    for _ in range(10):
        v = table.cells["v"].copy()
        k = table.cells["k"].copy()
        r = rng.choice(held)
        v[r] = rng.normal() * 1e6
        k[r] = "zzz"
        _, fitted, _ = fit_transform(table.with_cells(v=v, k=k), cfg)
        assert fitted.to_dict() == base.to_dict()


# -------------------------------------------------------------- report


def test_report_on_long_tailed_amounts():
    rng = np.random.default_rng(7)
    amounts = rng.lognormal(3.0, 1.5, 1000)
    sparse = np.where(rng.random(1000) < 0.95, np.nan, 1.0)
    cols = [ColumnSpec("id", "identifier"), ColumnSpec("y", "label"),
            ColumnSpec("TransactionAmt", "numeric"), ColumnSpec("s", "numeric")]
    table = RawTable(tuple(cols), 1000, {"id": np.arange(1000), "y": np.zeros(1000, int),
                                         "TransactionAmt": amounts, "s": sparse})
    features, fitted, _ = fit_transform(table, PreprocessConfig())
    report = preprocess_report(table, features, fitted)
    assert "s" in report["dropped"]
    assert report["dropped"]["s"] == pytest.approx(np.isnan(sparse).mean())
    assert all(v == 0.0 for v in report["missing_after"].values())
    amt = report["amount"]
    assert amt["before"]["max"] == amounts.max()
    assert amt["before"]["max"] > amt["clip_hi"]
    assert amt["after"]["max"] == amt["clip_hi"]
    train = features.split == TRAIN
    assert amt["clip_hi"] == pytest.approx(sort_quantile(amounts[train], 0.995), abs=1e-9)
