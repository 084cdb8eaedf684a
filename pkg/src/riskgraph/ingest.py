"""Loading and joining the transaction and identity tables."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DuplicateKey, SchemaViolation

log = logging.getLogger(__name__)

KINDS = ("numeric", "categorical", "identifier", "time", "label")
SOURCES = ("transaction", "identity")
MISSING_TOKENS = frozenset(["", "NaN"])


@dataclass(frozen=True)
class ColumnSpec:
    """One declared column.

    ``source`` names the file the column is read from; identity columns are
    all-missing for transactions without an identity row.
    """

    name: str
    kind: str
    source: str = "transaction"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaViolation(f"unknown column kind {self.kind!r}", column=self.name)
        if self.source not in SOURCES:
            raise SchemaViolation(f"unknown column source {self.source!r}", column=self.name)
        if self.kind in ("identifier", "label", "time") and self.source != "transaction":
            raise SchemaViolation(f"{self.kind} column must come from the transaction file",
                                  column=self.name)


def validate_schema(schema):
    kinds = [c.kind for c in schema]
    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        raise SchemaViolation("schema declares a column twice")
    if kinds.count("label") != 1:
        raise SchemaViolation("schema needs exactly one label column")
    if kinds.count("identifier") != 1:
        raise SchemaViolation("schema needs exactly one identifier column")
    if kinds.count("time") > 1:
        raise SchemaViolation("schema allows at most one time column")


def _default_schema_rows():
    rows = [("TransactionID", "identifier"), ("isFraud", "label"),
            ("TransactionDT", "time"), ("TransactionAmt", "numeric"),
            ("ProductCD", "categorical")]
    rows += [(f"card{i}", "categorical") for i in range(1, 7)]
    rows += [("addr1", "categorical"), ("addr2", "categorical"),
             ("P_emaildomain", "categorical"), ("R_emaildomain", "categorical")]
    rows += [(f"C{i}", "numeric") for i in range(1, 15)]
    rows += [(f"D{i}", "numeric") for i in range(1, 7)]
    return rows


def default_schema():
    """The shipped column subset: amount, card/address/email keys, device info, C/D counters."""
    schema = [ColumnSpec(name, kind) for name, kind in _default_schema_rows()]
    schema += [ColumnSpec(name, "categorical", "identity")
               for name in ("DeviceType", "DeviceInfo", "id_30", "id_31")]
    return schema


@dataclass(frozen=True)
class RawTable:
    """Joined, typed table.

    ``cells`` maps column name to an array: float64 with NaN for missing
    numeric/time values, int64 for identifier and label, object (``str`` or
    ``None``) for categorical values.
    """

    columns: tuple
    n_rows: int
    cells: dict

    def __post_init__(self):
        for spec in self.columns:
            arr = self.cells[spec.name]
            if len(arr) != self.n_rows:
                raise SchemaViolation(f"column has {len(arr)} rows, expected {self.n_rows}",
                                      column=spec.name)
            arr.flags.writeable = False
        ids = self.cells[self.id_column]
        if len(np.unique(ids)) != len(ids):
            raise DuplicateKey(f"duplicate {self.id_column} values")

    def spec(self, name):
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def _single(self, kind):
        for c in self.columns:
            if c.kind == kind:
                return c.name
        return None

    @property
    def id_column(self):
        return self._single("identifier")

    @property
    def label_column(self):
        return self._single("label")

    @property
    def time_column(self):
        return self._single("time")

    @property
    def ids(self):
        return self.cells[self.id_column]

    @property
    def labels(self):
        return self.cells[self.label_column]

    @property
    def times(self):
        return None if self.time_column is None else self.cells[self.time_column]

    def missing_mask(self, name):
        arr = self.cells[name]
        if arr.dtype == object:
            return np.array([v is None for v in arr], dtype=bool)
        if arr.dtype.kind == "f":
            return np.isnan(arr)
        return np.zeros(len(arr), dtype=bool)

    def missing_fraction(self, name):
        if self.n_rows == 0:
            return 0.0
        return float(self.missing_mask(name).mean())

    def select_columns(self, names):
        keep = set(names)
        cols = tuple(c for c in self.columns if c.name in keep)
        return RawTable(cols, self.n_rows, {c.name: self.cells[c.name] for c in cols})

    def take(self, rows):
        rows = np.asarray(rows)
        cells = {c.name: self.cells[c.name][rows] for c in self.columns}
        n = int(rows.sum()) if rows.dtype == bool else len(rows)
        return RawTable(self.columns, n, cells)

    def with_cells(self, **replacements):
        cells = dict(self.cells)
        cells.update(replacements)
        return RawTable(self.columns, self.n_rows, cells)


def _parse_column(raw, spec):
    missing = np.isin(raw, list(MISSING_TOKENS))
    if spec.kind == "categorical":
        out = raw.astype(object)
        out[missing] = None
        return out
    if spec.kind in ("identifier", "label"):
        if missing.any():
            row = int(np.flatnonzero(missing)[0])
            raise SchemaViolation(f"{spec.kind} value is missing", row=row, column=spec.name)
    values = np.empty(len(raw), dtype=np.float64)
    values[missing] = np.nan
    present = np.flatnonzero(~missing)
    try:
        values[present] = raw[present].astype(np.float64)
    except ValueError:
        for r in present:
            try:
                float(raw[r])
            except ValueError:
                raise SchemaViolation(f"cannot parse {raw[r]!r} as {spec.kind}",
                                      row=int(r), column=spec.name) from None
        raise
    if spec.kind == "time" and missing.any():
        row = int(np.flatnonzero(missing)[0])
        raise SchemaViolation("time value is missing", row=row, column=spec.name)
    if spec.kind in ("numeric", "time"):
        bad = ~np.isfinite(values[present])
        if bad.any():
            row = int(present[np.flatnonzero(bad)[0]])
            raise SchemaViolation(f"non-finite {spec.kind} value", row=row, column=spec.name)
        return values
    if not np.all(values == np.round(values)):
        row = int(np.flatnonzero(values != np.round(values))[0])
        raise SchemaViolation(f"{spec.kind} value is not an integer", row=row, column=spec.name)
    ints = values.astype(np.int64)
    if spec.kind == "label" and not np.isin(ints, (0, 1)).all():
        row = int(np.flatnonzero(~np.isin(ints, (0, 1)))[0])
        raise SchemaViolation("label must be 0 or 1", row=row, column=spec.name)
    return ints


def _read(path, specs, id_name):
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    wanted = {s.name for s in specs} | {id_name}
    extra = [c for c in frame.columns if c not in wanted]
    if extra:
        log.warning("%s: ignoring %d undeclared columns", path, len(extra))
    for name in sorted(wanted):
        if name not in frame.columns:
            raise SchemaViolation(f"required column absent from {path}", column=name)
    return {name: frame[name].to_numpy(dtype=object).astype(str) for name in wanted}


def load_tables(transaction_path, identity_path=None, schema=None):
    """Read the transaction file (and optional identity file) and left-join on the identifier.

    Row order follows the transaction file.  Transactions with no identity
    row receive MISSING in every identity column.
    """
    schema = list(schema) if schema is not None else default_schema()
    validate_schema(schema)
    id_spec = next(c for c in schema if c.kind == "identifier")
    tx_specs = [c for c in schema if c.source == "transaction"]
    idn_specs = [c for c in schema if c.source == "identity"]

    with ThreadPoolExecutor(max_workers=2) as pool:
        tx_future = pool.submit(_read, transaction_path, tx_specs, id_spec.name)
        idn_future = (pool.submit(_read, identity_path, idn_specs, id_spec.name)
                      if identity_path is not None else None)
        tx_raw = tx_future.result()
        idn_raw = idn_future.result() if idn_future is not None else None

    n = len(tx_raw[id_spec.name])
    cells = {}
    for spec in tx_specs:
        cells[spec.name] = _parse_column(tx_raw[spec.name], spec)
    tx_ids = cells[id_spec.name]
    _check_unique(tx_ids, id_spec.name, "transaction")

    if idn_raw is None:
        for spec in idn_specs:
            cells[spec.name] = _missing_column(spec, n)
    else:
        idn_ids = _parse_column(idn_raw[id_spec.name], id_spec)
        _check_unique(idn_ids, id_spec.name, "identity")
        position = {int(k): i for i, k in enumerate(idn_ids)}
        src = np.array([position.get(int(k), -1) for k in tx_ids], dtype=np.int64)
        matched = src >= 0
        for spec in idn_specs:
            parsed = _parse_column(idn_raw[spec.name], spec)
            col = _missing_column(spec, n)
            col[matched] = parsed[src[matched]]
            cells[spec.name] = col

    return RawTable(tuple(schema), n, cells)


def _missing_column(spec, n):
    if spec.kind == "categorical":
        return np.full(n, None, dtype=object)
    return np.full(n, np.nan)


def _check_unique(ids, name, which):
    uniq, counts = np.unique(ids, return_counts=True)
    if (counts > 1).any():
        raise DuplicateKey(f"{which} table repeats {name} {uniq[counts > 1][0]}")


def _format_cell(value, kind):
    if kind == "categorical":
        return "" if value is None else str(value)
    if kind in ("identifier", "label"):
        return str(int(value))
    if np.isnan(value):
        return ""
    return repr(float(value))


def write_tables(table, transaction_path, identity_path=None):
    """Write ``table`` back out as the comma-separated file pair that ``load_tables`` reads.

    Identity rows are written only for transactions with at least one
    non-missing identity cell.
    """
    id_name = table.id_column
    tx_cols = [c for c in table.columns if c.source == "transaction"]
    idn_cols = [c for c in table.columns if c.source == "identity"]
    _write_frame(table, tx_cols, np.ones(table.n_rows, dtype=bool), transaction_path)
    if identity_path is not None:
        has_identity = np.zeros(table.n_rows, dtype=bool)
        for c in idn_cols:
            has_identity |= ~table.missing_mask(c.name)
        id_spec = table.spec(id_name)
        _write_frame(table, [id_spec] + idn_cols, has_identity, identity_path)


def _write_frame(table, specs, rows, path):
    data = {}
    for spec in specs:
        values = table.cells[spec.name][rows]
        data[spec.name] = [_format_cell(v, spec.kind) for v in values]
    pd.DataFrame(data, columns=[s.name for s in specs]).to_csv(path, index=False)
