import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npgap.reporting import SCHEMA_VERSION, ExperimentReport, read_csv, rows_to_csv, write_csv, write_manifest
from npgap.seeding import as_rng, rng_for

cells = st.one_of(
    st.integers(-10**12, 10**12),
    st.floats(allow_nan=False, allow_infinity=True),
    st.text(alphabet="abcdefghij ,\"_-", min_size=1, max_size=8).filter(lambda s: s.strip(" ") == s and s not in ("inf", "nan")),
    st.none(),
)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.fixed_dictionaries({"a": cells, "b": cells, "c": cells}), min_size=1, max_size=6))
def test_csv_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "r.csv"
    write_csv(path, rows)
    back = read_csv(path)
    assert len(back) == len(rows)
    for got, want in zip(back, rows):
        for k, w in want.items():
            assert got[k] == w and type(got[k]) is type(w)


def test_empty_table_rejected():
    with pytest.raises(ValueError):
        rows_to_csv([])


def test_report_sets_seed_on_rows():
    rep = ExperimentReport("x", {}, [{"a": 1}, {"a": 2, "seed": 9}], seed=4)
    assert [r["seed"] for r in rep.rows] == [4, 9]
    entry = rep.manifest_entry("ok", "x.csv")
    assert entry["rows"] == 2 and entry["csv"] == "x.csv" and entry["artifact_version"]


def test_manifest_schema(tmp_path):
    path = tmp_path / "m.json"
    write_manifest(path, [{"command": "a"}], {"suite_seed": 1})
    doc = json.loads(path.read_text())
    assert doc["schema_version"] == SCHEMA_VERSION and doc["suite_seed"] == 1


def test_rng_streams():
    a = rng_for(0, "full", 5, 1).standard_normal(4)
    np.testing.assert_array_equal(a, rng_for(0, "full", 5, 1).standard_normal(4))
    assert not np.array_equal(a, rng_for(0, "noise_only", 5, 1).standard_normal(4))
    assert not np.array_equal(a, rng_for(1, "full", 5, 1).standard_normal(4))
    g = np.random.default_rng(0)
    assert as_rng(g) is g
    with pytest.raises(ValueError):
        rng_for(0, -1)
