import numpy as np
import pytest

from riskgraph.errors import DuplicateKey, SchemaViolation
from riskgraph.ingest import ColumnSpec, load_tables, validate_schema, write_tables

SCHEMA = [
    ColumnSpec("TransactionID", "identifier"),
    ColumnSpec("isFraud", "label"),
    ColumnSpec("TransactionDT", "time"),
    ColumnSpec("TransactionAmt", "numeric"),
    ColumnSpec("card1", "categorical"),
    ColumnSpec("DeviceInfo", "categorical", "identity"),
    ColumnSpec("id_30", "categorical", "identity"),
]

TX = """TransactionID,isFraud,TransactionDT,TransactionAmt,card1,extra
10,0,100,12.5,A,x
11,1,200,NaN,B,y
12,0,300,7,,z
"""
IDN = """TransactionID,DeviceInfo,id_30
12,phone,iOS
10,laptop,
"""


@pytest.fixture
def files(tmp_path):
    tx = tmp_path / "tx.csv"
    idn = tmp_path / "id.csv"
    tx.write_text(TX)
    idn.write_text(IDN)
    return tx, idn


def test_left_join_keeps_every_transaction(files):
    tx, idn = files
    t = load_tables(tx, idn, SCHEMA)
    assert t.n_rows == 3
    assert t.ids.tolist() == [10, 11, 12]
    assert t.cells["DeviceInfo"].tolist() == ["laptop", None, "phone"]
    assert t.cells["id_30"].tolist() == [None, None, "iOS"]
    assert t.labels.tolist() == [0, 1, 0]


def test_missing_tokens(files):
    tx, idn = files
    t = load_tables(tx, idn, SCHEMA)
    assert np.isnan(t.cells["TransactionAmt"][1])
    assert t.cells["card1"][2] is None
    assert t.missing_fraction("card1") == pytest.approx(1 / 3)


def test_without_identity_file_identity_columns_are_missing(files):
    tx, _ = files
    t = load_tables(tx, None, SCHEMA)
    assert t.missing_mask("DeviceInfo").all()
    assert t.missing_mask("id_30").all()


def test_undeclared_columns_warn(files, caplog):
    tx, idn = files
    load_tables(tx, idn, SCHEMA)
    assert "undeclared" in caplog.text


def test_duplicate_transaction_id(tmp_path):
    p = tmp_path / "tx.csv"
    p.write_text("TransactionID,isFraud,TransactionDT,TransactionAmt,card1\n"
                 "1,0,1,1,A\n1,0,2,2,B\n")
    with pytest.raises(DuplicateKey):
        load_tables(p, None, SCHEMA)


def test_duplicate_identity_id(files, tmp_path):
    tx, _ = files
    idn = tmp_path / "dup.csv"
    idn.write_text("TransactionID,DeviceInfo,id_30\n10,a,b\n10,c,d\n")
    with pytest.raises(DuplicateKey):
        load_tables(tx, idn, SCHEMA)


def test_unparsable_numeric_names_row_and_column(tmp_path):
    p = tmp_path / "tx.csv"
    p.write_text("TransactionID,isFraud,TransactionDT,TransactionAmt,card1\n"
                 "1,0,1,1,A\n2,0,2,abc,B\n")
    with pytest.raises(SchemaViolation) as exc:
        load_tables(p, None, SCHEMA)
    assert exc.value.row == 1 and exc.value.column == "TransactionAmt"


def test_bad_label_value(tmp_path):
    p = tmp_path / "tx.csv"
    p.write_text("TransactionID,isFraud,TransactionDT,TransactionAmt,card1\n1,2,1,1,A\n")
    with pytest.raises(SchemaViolation):
        load_tables(p, None, SCHEMA)


def test_missing_required_column(tmp_path):
    p = tmp_path / "tx.csv"
    p.write_text("TransactionID,isFraud,TransactionDT,card1\n1,0,1,A\n")
    with pytest.raises(SchemaViolation, match="TransactionAmt"):
        load_tables(p, None, SCHEMA)


def test_schema_validation():
    with pytest.raises(SchemaViolation):
        validate_schema([ColumnSpec("a", "identifier")])
    with pytest.raises(SchemaViolation):
        validate_schema([ColumnSpec("a", "identifier"), ColumnSpec("b", "label"),
                         ColumnSpec("c", "time"), ColumnSpec("d", "time")])
    with pytest.raises(SchemaViolation):
        ColumnSpec("a", "float")


def test_table_is_immutable(files):
    tx, idn = files
    t = load_tables(tx, idn, SCHEMA)
    with pytest.raises(ValueError):
        t.cells["TransactionAmt"][0] = 1.0


def test_loading_twice_is_identical(files):
    tx, idn = files
    a = load_tables(tx, idn, SCHEMA)
    b = load_tables(tx, idn, SCHEMA)
    for name in a.cells:
        assert a.cells[name].tobytes() == b.cells[name].tobytes() or \
            a.cells[name].tolist() == b.cells[name].tolist()


def test_write_then_load_round_trip(files, tmp_path):
    tx, idn = files
    a = load_tables(tx, idn, SCHEMA)
    write_tables(a, tmp_path / "a.csv", tmp_path / "b.csv")
    b = load_tables(tmp_path / "a.csv", tmp_path / "b.csv", SCHEMA)
    for name in a.cells:
        left, right = a.cells[name], b.cells[name]
        if left.dtype == object:
            assert left.tolist() == right.tolist()
        else:
            assert np.array_equal(left, right, equal_nan=left.dtype.kind == "f")


def test_join_preserves_labels_for_random_identity_tables(tmp_path):
    rng = np.random.default_rng(5)
    n = 40
    ids = rng.permutation(1000)[:n]
    labels = rng.integers(0, 2, n)
    lines = ["TransactionID,isFraud,TransactionDT,TransactionAmt,card1"]
    lines += [f"{i},{y},{k},1.0,A" for k, (i, y) in enumerate(zip(ids, labels))]
    tx = tmp_path / "tx.csv"
    tx.write_text("\n".join(lines) + "\n")
    for trial in range(5):
        chosen = rng.choice(ids, rng.integers(0, n), replace=False)
        idn = tmp_path / f"id{trial}.csv"
        idn.write_text("TransactionID,DeviceInfo,id_30\n"
                       + "".join(f"{i},d{i},\n" for i in chosen))
        t = load_tables(tx, idn, SCHEMA)
        assert t.n_rows == n
        assert t.ids.tolist() == ids.tolist()
        assert t.labels.tolist() == labels.tolist()
        present = ~t.missing_mask("DeviceInfo")
        assert set(t.ids[present].tolist()) == set(chosen.tolist())
