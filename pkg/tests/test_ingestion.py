import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from buildsentinel.core import SensorReading, StreamEntry, StreamInventory
from buildsentinel.errors import EmptyFrameError, ParseError, ValidationError
from buildsentinel.ingestion import (IngestConfig, align, clean, frame_to_readings, read_replay_csv,
                                     write_replay_csv)
from buildsentinel.mqtt import ReadingBuffer, parse_payload, subscribe

import oracles

T0 = 1_600_000_020  # on the 60 s lattice


def inventory(*cols):
    entries = []
    for c in cols:
        topic, stream = c.split("/")
        entries.append(StreamEntry(f"d-{topic}", topic, stream, True, "none"))
    return StreamInventory(tuple(entries))


def reading(ts, col, v):
    topic, stream = col.split("/")
    return SensorReading(ts, f"d-{topic}", topic, stream, v)


# -- clean ---------------------------------------------------------------------------

def test_clean_drops_null_and_text():
    rs = [reading(T0 + i, "s/t", v) for i, v in enumerate([22.5, None, "abc", 23.0])]
    kept, dropped = clean(rs)
    assert [r.value for r in kept] == [22.5, 23.0]
    assert dropped == 2


def test_clean_empty():
    assert clean([]) == ([], 0)


def test_clean_coerces_integer_payload():
    kept, dropped = clean([reading(T0, "s/t", 22)])
    assert dropped == 0
    assert kept[0].value == 22.0 and type(kept[0].value) is float


def test_clean_rejects_nonfinite_and_bool():
    kept, dropped = clean([reading(T0, "s/t", v) for v in (float("nan"), float("inf"), True, "1e3")])
    assert [r.value for r in kept] == [1000.0]
    assert dropped == 3


# -- align ---------------------------------------------------------------------------

def test_two_rates_fully_populated():
    rs = [reading(T0 + 10 * k, "a/fast", float(k)) for k in range(60)]
    rs += [reading(T0 + 60 * k, "b/slow", 100.0 + k) for k in range(10)]
    f = align(rs, IngestConfig(60, max_gap_fill=5), inventory("a/fast", "b/slow"))
    assert f.n_rows == 10 and f.complete
    # last write in each tick of the fast stream is the sample at +50 s
    np.testing.assert_array_equal(f.column("a/fast"), [6.0 * k + 5 for k in range(10)])
    grid, vals = oracles.brute_align(rs, list(f.columns), 60, 5, True)
    assert list(f.grid) == grid
    np.testing.assert_array_equal(f.values, np.array(vals))


def test_single_stream_identity():
    rs = [reading(T0 + 60 * k, "a/x", float(k)) for k in range(7)]
    f = align(rs, IngestConfig(60), inventory("a/x"))
    assert f.n_rows == 7
    assert f.mask.all()
    assert not f.filled.any()


def test_long_outage_rows_dropped():
    rs = [reading(T0 + 60 * k, "a/x", float(k)) for k in range(30)]
    rs += [reading(T0 + 60 * k, "b/y", float(k)) for k in range(30) if not 10 <= k < 20]
    f = align(rs, IngestConfig(60, max_gap_fill=5), inventory("a/x", "b/y"))
    assert f.n_rows == 20
    missing = set(T0 + 60 * k for k in range(10, 20))
    assert not missing & set(f.grid.tolist())


def test_short_gap_forward_filled():
    rs = [reading(T0 + 60 * k, "a/x", float(k)) for k in range(10) if k not in (4, 5)]
    f = align(rs, IngestConfig(60, max_gap_fill=5), inventory("a/x"))
    assert f.n_rows == 10
    np.testing.assert_array_equal(f.column("a/x")[3:7], [3.0, 3.0, 3.0, 6.0])
    np.testing.assert_array_equal(np.flatnonzero(f.filled[:, 0]), [4, 5])


def test_align_errors():
    with pytest.raises(EmptyFrameError):
        align([], IngestConfig(60), inventory("a/x"))
    with pytest.raises(ValidationError, match="not in the inventory"):
        align([reading(T0, "z/q", 1.0)], IngestConfig(60), inventory("a/x"))


def test_ingest_config_validation():
    with pytest.raises(ValidationError):
        IngestConfig(0)
    with pytest.raises(ValidationError):
        IngestConfig(60, max_gap_fill=-1)
    with pytest.raises(ValidationError):
        IngestConfig(60, mode="live")


readings_strategy = st.lists(
    st.tuples(st.integers(0, 1500), st.sampled_from(["a/x", "b/y", "c/z"]),
              st.one_of(st.floats(-1e6, 1e6), st.none(), st.just("oops"), st.integers(-50, 50))),
    min_size=1, max_size=80)


@settings(max_examples=150, deadline=None)
@given(readings_strategy, st.sampled_from([10, 30, 60]), st.integers(0, 6), st.booleans())
def test_align_matches_brute_force(raw, period, gap, drop):
    rs = [reading(T0 + t, c, v) for t, c, v in raw]
    inv = inventory("a/x", "b/y", "c/z")
    kept, _ = clean(rs)
    if not kept:
        return
    cfg = IngestConfig(period, max_gap_fill=gap, drop_incomplete_rows=drop)
    f = align(kept, cfg, inv)
    grid, vals = oracles.brute_align(kept, list(f.columns), period, gap, drop)
    assert list(f.grid) == grid
    expect = np.array([[np.nan if v is None else v for v in row] for row in vals]).reshape(len(grid), 3)
    np.testing.assert_array_equal(f.values, expect)
    # conservation: every cell is some input value
    inputs = {r.value for r in kept}
    assert set(f.values[f.mask].tolist()) <= inputs
    # idempotence of cleaning
    assert align(clean(kept)[0], cfg, inv) == f
    # monotone grid on the period lattice
    assert np.all(np.diff(f.grid) > 0) and np.all(np.diff(f.grid) % period == 0)


# -- replay files ---------------------------------------------------------------------

def test_replay_round_trip(tmp_path):
    rs = [reading(T0 + 7 * k, "a/x", v) for k, v in enumerate([1.5, None, "abc", 22, -0.25])]
    p = tmp_path / "r.csv"
    write_replay_csv(rs, p)
    back = read_replay_csv(p)
    assert [r.timestamp for r in back] == [r.timestamp for r in rs]
    assert clean(back)[0] == clean(rs)[0]
    assert clean(back)[1] == 2


def test_replay_bad_header(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("when,what\n1,2\n")
    with pytest.raises(ParseError):
        read_replay_csv(p)


def test_frame_to_readings_round_trip():
    rs = [reading(T0 + 60 * k, "a/x", float(k)) for k in range(5)]
    rs += [reading(T0 + 60 * k, "b/y", 2.0 * k) for k in range(5)]
    inv = inventory("a/x", "b/y")
    f = align(rs, IngestConfig(60), inv)
    assert align(frame_to_readings(f, inv), IngestConfig(60), inv) == f


# -- live ----------------------------------------------------------------------------

def test_payload_parsing():
    rs = parse_payload("sense-hat", b'{"temp": 22.5, "humidity": 38.1}', T0 + 0.7, "h7")
    assert [(r.stream, r.value) for r in rs] == [("temp", 22.5), ("humidity", 38.1)]
    assert rs[0].timestamp == rs[1].timestamp == T0
    rs = parse_payload("co2", '{"timestamp": "2021-06-14T00:00:00Z", "C": 0.3}', T0)
    assert rs[0].timestamp == 1623628800
    from buildsentinel.mqtt import PayloadError
    with pytest.raises(PayloadError):
        parse_payload("co2", b"{{{", T0)
    with pytest.raises(PayloadError):
        parse_payload("co2", b"[1, 2]", T0)


def _wait(pred, timeout=10.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if pred():
            return True
        time.sleep(0.02)
    return pred()


def test_live_matches_replay():
    broker = oracles.TinyBroker()
    try:
        inv = inventory("sense-hat/temp", "sense-hat/humidity", "co2/C")
        cfg = IngestConfig(60, "live", broker.uri, ("sense-hat", "co2"))
        buf = ReadingBuffer()
        sub = subscribe(cfg, buf, inv)
        assert sub.wait_connected(10)
        assert broker.subscribed.wait(10)
        sent = []
        for k in range(40):
            ts = T0 + 20 * k
            broker.publish("sense-hat", f'{{"timestamp": {ts}, "temp": {20 + k * 0.1}, "humidity": {40 - k}}}')
            sent += [reading(ts, "sense-hat/temp", 20 + k * 0.1), reading(ts, "sense-hat/humidity", 40.0 - k)]
            if k % 3 == 0:
                broker.publish("co2", f'{{"timestamp": {ts}, "C": {k}}}')
                sent.append(reading(ts, "co2/C", k))
        broker.publish("co2", b"{{{")
        assert _wait(lambda: sub.received == 40 + 14 + 1)
        sub.stop()
        assert sub.status == "stopped"
        assert sub.malformed == 1
        live = buf.snapshot()
        assert len(live) == len(sent)
        f_live = align(clean(live)[0], IngestConfig(60), inv)
        f_replay = align(clean(sent)[0], IngestConfig(60), inv)
        assert f_live == f_replay
    finally:
        broker.close()


def test_broker_down_reports_reconnecting():
    port = oracles.free_port()
    cfg = IngestConfig(60, "live", f"mqtt://127.0.0.1:{port}", ("co2",))
    buf = ReadingBuffer()
    sub = subscribe(cfg, buf, min_backoff=0.1, max_backoff=0.2)
    try:
        assert _wait(lambda: sub.status == "reconnecting", 10)
        assert sub.connect_failures >= 1
        assert len(buf) == 0
    finally:
        sub.stop()
    assert sub.status == "stopped"
