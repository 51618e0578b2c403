"""Reading cleanup and master-table alignment."""

from __future__ import annotations

import csv
import math
import numbers
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (AlignedFrame, SensorReading, StreamInventory, format_timestamp,
                   parse_timestamp, sort_columns)
from .errors import EmptyFrameError, ParseError, ValidationError

REPLAY_HEADER = ["timestamp", "device_id", "topic", "stream", "value"]


@dataclass(frozen=True)
class IngestConfig:
    grid_period: int
    mode: str = "replay"
    broker_uri: str | None = None
    topics: tuple[str, ...] = ()
    max_gap_fill: int = 5
    drop_incomplete_rows: bool = True

    def __post_init__(self):
        object.__setattr__(self, "topics", tuple(self.topics))
        if self.mode not in ("replay", "live"):
            raise ValidationError(f"mode must be 'replay' or 'live', got {self.mode!r}")
        if not isinstance(self.grid_period, numbers.Integral) or self.grid_period <= 0:
            raise ValidationError("grid_period must be a positive integer number of seconds")
        if self.max_gap_fill < 0:
            raise ValidationError("max_gap_fill must be >= 0")
        if self.mode == "live" and not self.broker_uri:
            raise ValidationError("live mode requires broker_uri")


def coerce_value(value) -> float | None:
    """Finite float for numeric payloads, ``None`` for anything else."""
    if value is None or isinstance(value, (bool, np.bool_)):
        return None
    if isinstance(value, numbers.Real):
        v = float(value)
    elif isinstance(value, (str, bytes)):
        try:
            v = float(value)
        except ValueError:
            return None
    else:
        return None
    return v if math.isfinite(v) else None


def clean(readings: Iterable[SensorReading]) -> tuple[list[SensorReading], int]:
    """Drop null / non-numeric / non-finite readings and coerce the rest to float.

    Returns ``(kept, dropped_count)``; order is preserved.
    """
    kept = []
    dropped = 0
    for r in readings:
        v = coerce_value(r.value)
        if v is None:
            dropped += 1
            continue
        if type(r.value) is float:
            kept.append(r)
        else:
            kept.append(SensorReading(r.timestamp, r.device_id, r.topic, r.stream, v))
    return kept, dropped


def frame_columns(cfg: IngestConfig, inventory: StreamInventory) -> list[str]:
    topics = set(cfg.topics)
    return sort_columns(e.column for e in inventory.entries if not topics or e.topic in topics)


def align(readings: Sequence[SensorReading], cfg: IngestConfig,
          inventory: StreamInventory) -> AlignedFrame:
    """Build the master table on a fixed grid.

    Each cell takes the latest reading inside its tick (ties go to the later
    reading in input order).  Gaps of at most ``cfg.max_gap_fill`` ticks are
    forward-filled; longer outages stay missing, and rows with any missing cell
    are dropped when ``cfg.drop_incomplete_rows`` is set.
    """
    topics = set(cfg.topics)
    readings = [r for r in readings if not topics or r.topic in topics]
    if not readings:
        raise EmptyFrameError("no readings to align")
    columns = frame_columns(cfg, inventory)
    col_index = {c: j for j, c in enumerate(columns)}

    n = len(readings)
    ts = np.empty(n, dtype=np.int64)
    cols = np.empty(n, dtype=np.int64)
    vals = np.empty(n, dtype=np.float64)
    for k, r in enumerate(readings):
        j = col_index.get(r.column)
        if j is None:
            raise ValidationError(f"stream {r.column} is not in the inventory")
        if not isinstance(r.value, numbers.Real) or not math.isfinite(r.value):
            raise ValidationError(f"uncleaned value {r.value!r} on {r.column}; run clean() first")
        ts[k] = r.timestamp
        cols[k] = j
        vals[k] = r.value

    period = cfg.grid_period
    ticks = (ts // period) * period
    start = int(ticks.min())
    n_rows = int((ticks.max() - start) // period) + 1
    D = len(columns)
    rows = (ticks - start) // period

    # last write wins: order by (timestamp, input position), keep the last per cell
    order = np.lexsort((np.arange(n), ts))
    keys = (rows * D + cols)[order]
    _, first_in_reversed = np.unique(keys[::-1], return_index=True)
    winners = order[n - 1 - first_in_reversed]

    values = np.full((n_rows, D), np.nan)
    values[rows[winners], cols[winners]] = vals[winners]
    mask = ~np.isnan(values)
    filled = np.zeros_like(mask)
    if cfg.max_gap_fill > 0:
        _forward_fill(values, mask, filled, cfg.max_gap_fill)

    grid = start + period * np.arange(n_rows, dtype=np.int64)
    if cfg.drop_incomplete_rows:
        keep = mask.all(axis=1)
        grid, values, mask, filled = grid[keep], values[keep], mask[keep], filled[keep]
    return AlignedFrame(grid, period, tuple(columns), values, mask, filled)


def _forward_fill(values, mask, filled, limit):
    R = values.shape[0]
    for j in range(values.shape[1]):
        observed = np.flatnonzero(mask[:, j])
        if len(observed) == 0:
            continue
        # gap after each observation runs up to the next one (or the frame end)
        ends = np.append(observed[1:], R)
        for obs, nxt in zip(observed, ends):
            gap = nxt - obs - 1
            if 0 < gap <= limit:
                values[obs + 1:nxt, j] = values[obs, j]
                mask[obs + 1:nxt, j] = True
                filled[obs + 1:nxt, j] = True


def read_replay_csv(path) -> list[SensorReading]:
    """Raw readings from a replay file; empty values come back as ``None``."""
    path = Path(path)
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        if [h.strip() for h in header] != REPLAY_HEADER:
            raise ParseError(f"expected header {','.join(REPLAY_HEADER)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(REPLAY_HEADER):
                raise ParseError(f"expected {len(REPLAY_HEADER)} fields, got {len(row)}", lineno)
            try:
                ts = parse_timestamp(row[0])
            except ValueError as exc:
                raise ParseError(f"bad timestamp {row[0]!r}", lineno) from exc
            raw = row[4].strip()
            out.append(SensorReading(ts, row[1].strip(), row[2].strip(), row[3].strip(),
                                     raw if raw else None))
    return out


def write_replay_csv(readings: Iterable[SensorReading], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLAY_HEADER)
        for r in readings:
            if r.value is None:
                value = ""
            elif isinstance(r.value, float):
                value = repr(r.value)
            else:
                value = str(r.value)
            w.writerow([format_timestamp(r.timestamp), r.device_id, r.topic, r.stream, value])


def frame_to_readings(frame: AlignedFrame, inventory: StreamInventory | None = None) -> list[SensorReading]:
    """Flatten a frame back into readings (observed, non-filled cells only)."""
    out = []
    devices = {}
    for c in frame.columns:
        topic, _, stream = c.partition("/")
        dev = inventory.device_for_topic(topic) if inventory is not None else None
        devices[c] = (dev or topic, topic, stream)
    for i in range(frame.n_rows):
        ts = int(frame.grid[i])
        for j, c in enumerate(frame.columns):
            if frame.mask[i, j] and not frame.filled[i, j]:
                dev, topic, stream = devices[c]
                out.append(SensorReading(ts, dev, topic, stream, float(frame.values[i, j])))
    return out
