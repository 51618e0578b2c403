import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from buildsentinel.core import (AlignedFrame, AnomalyVerdict, SensorReading, StreamEntry,
                                StreamInventory, config_hash, format_timestamp, frame_from_csv,
                                frame_to_csv, load_inventory, parse_timestamp, read_meta,
                                reference_inventory, reference_inventory_path, save_inventory,
                                sort_columns, verdicts_from_csv, verdicts_to_csv)
from buildsentinel.errors import ParseError, ValidationError

from conftest import make_frame


def test_reference_inventory_counts():
    inv = reference_inventory()
    assert len(inv) == 32
    assert len(inv.unique_columns) == 14
    assert sorted(inv.device_counts().values()) == sorted([6, 3, 1, 2, 5, 1, 3, 9, 1, 1])


def test_load_inventory_from_file_matches_bundled():
    inv = load_inventory(reference_inventory_path())
    assert inv.entries == reference_inventory().entries


def test_empty_inventory_file(tmp_path):
    p = tmp_path / "inv.csv"
    p.write_text("")
    assert len(load_inventory(p)) == 0
    p.write_text("device_id,topic,stream,unique_sensor,edge_process\n")
    assert len(load_inventory(p)) == 0


def test_duplicate_stream_rejected(tmp_path):
    p = tmp_path / "inv.csv"
    p.write_text("device_id,topic,stream,unique_sensor,edge_process\n"
                 "h7,sense-hat,temp,true,none\n"
                 "h7,sense-hat,temp,false,none\n")
    with pytest.raises(ValidationError, match="duplicate"):
        load_inventory(p)


def test_malformed_row_names_line(tmp_path):
    p = tmp_path / "inv.csv"
    p.write_text("device_id,topic,stream,unique_sensor,edge_process\n"
                 "h7,sense-hat,temp,true,none\n"
                 "h7,sense-hat,humidity,true\n")
    with pytest.raises(ParseError) as exc:
        load_inventory(p)
    assert exc.value.line == 3
    assert "line 3" in str(exc.value)


def test_inventory_round_trip(tmp_path):
    inv = reference_inventory()
    p = tmp_path / "inv.csv"
    save_inventory(inv, p)
    assert load_inventory(p).entries == inv.entries


def test_timestamps_round_trip():
    assert parse_timestamp("2021-06-14T00:00:00Z") == 1623628800
    assert format_timestamp(1623628800) == "2021-06-14T00:00:00Z"
    assert parse_timestamp(format_timestamp(1_700_000_123)) == 1_700_000_123
    with pytest.raises(ValueError):
        parse_timestamp(float("nan"))


def test_column_order_is_topic_then_stream():
    cols = ["sound3/p", "all-in-1/M", "all-in-1/A", "co2/C"]
    assert sort_columns(cols) == ["all-in-1/A", "all-in-1/M", "co2/C", "sound3/p"]


def test_frame_rejects_bad_grid():
    with pytest.raises(ValidationError):
        AlignedFrame(np.array([0, 60, 60]), 60, ("a/x",), np.zeros((3, 1)))
    with pytest.raises(ValidationError):
        AlignedFrame(np.array([0, 90]), 60, ("a/x",), np.zeros((2, 1)))


def test_frame_rejects_nonfinite_observed_cell():
    with pytest.raises(ValidationError):
        make_frame([[1.0], [np.inf]])


def test_frame_is_immutable():
    f = make_frame([[1.0, 2.0], [3.0, 4.0]])
    with pytest.raises(ValueError):
        f.values[0, 0] = 9.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(1, 5), st.integers(0, 2**32 - 1), st.booleans())
def test_frame_csv_round_trip(tmp_path_factory, R, D, seed, holes):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(R, D)) * 10 ** rng.uniform(-5, 5)
    mask = rng.random((R, D)) > 0.2 if holes else None
    f = make_frame(values, mask=mask)
    p = tmp_path_factory.mktemp("rt") / "f.csv"
    frame_to_csv(f, p, {"config_hash": "abc"})
    g = frame_from_csv(p)
    assert g == f
    np.testing.assert_array_equal(g.values[g.mask], f.values[f.mask])
    assert read_meta(p)["config_hash"] == "abc"


def test_verdict_invariants():
    AnomalyVerdict(0, ("a/x", "b/y"), 2.0, 1.0, True, "combined", "ocsvm")
    with pytest.raises(ValidationError):
        AnomalyVerdict(0, ("a/x",), 2.0, 1.0, True, "combined", "ocsvm")
    with pytest.raises(ValidationError):
        AnomalyVerdict(0, ("a/x",), 1.0, 1.0, True, "point", "ocsvm")
    with pytest.raises(ValidationError):
        AnomalyVerdict(0, ("a/x",), 1.0, 1.0, False, "weird", "ocsvm")


def test_verdict_csv_round_trip(tmp_path):
    vs = [AnomalyVerdict(1623628800 + 60 * i, ("a/x", "b/y"), 0.1 * i, 0.25, 0.1 * i > 0.25,
                         "combined", "recurrent_forecaster", "cfg") for i in range(6)]
    p = tmp_path / "v.csv"
    verdicts_to_csv(vs, p)
    assert verdicts_from_csv(p) == vs


def test_config_hash_is_order_insensitive():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_sensor_reading_and_entry_columns():
    r = SensorReading(0, "h7", "sense-hat", "temp", 22.5)
    e = StreamEntry("h7", "sense-hat", "temp", True, "none")
    assert r.column == e.column == "sense-hat/temp"
    inv = StreamInventory((e,))
    assert inv.lookup("sense-hat", "temp") is e
    assert inv.device_for_topic("sense-hat") == "h7"
