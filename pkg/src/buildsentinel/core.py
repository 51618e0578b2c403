"""Domain types shared across the package, plus their CSV formats.

Timestamps are integer seconds since the epoch, UTC.  Streams are addressed
as ``"topic/stream"`` and frame columns are ordered lexicographically by
``(topic, stream)``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from functools import reduce
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, ValidationError

EDGE_PROCESSES = ("none", "atan", "scale", "gaussian")
CONDITIONS = ("UC", "DT", "NT")
TAXONOMIES = ("point", "contextual", "combined")
DETECTORS = ("isolation_forest", "ocsvm", "conv_forecaster", "recurrent_forecaster")

INVENTORY_HEADER = ["device_id", "topic", "stream", "unique_sensor", "edge_process"]


# -- timestamps ---------------------------------------------------------------

def parse_timestamp(value) -> int:
    """ISO-8601 string or epoch seconds -> integer epoch seconds (floored)."""
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise ValueError(f"non-finite timestamp {value!r}")
        return int(math.floor(value))
    text = str(value).strip()
    try:
        return int(math.floor(float(text)))
    except ValueError:
        pass
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(math.floor(dt.timestamp()))


def format_timestamp(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def column_id(topic: str, stream: str) -> str:
    return f"{topic}/{stream}"


def split_column_id(col: str) -> tuple[str, str]:
    topic, _, stream = col.partition("/")
    return topic, stream


def sort_columns(columns: Iterable[str]) -> list[str]:
    return sorted(columns, key=split_column_id)


# -- readings and inventory -----------------------------------------------------

@dataclass(frozen=True)
class SensorReading:
    """One measurement.  ``value`` is a float once cleaned; raw readings coming
    off the wire may still carry ``None`` or strings."""

    timestamp: int
    device_id: str
    topic: str
    stream: str
    value: object

    @property
    def column(self) -> str:
        return column_id(self.topic, self.stream)


@dataclass(frozen=True)
class StreamEntry:
    device_id: str
    topic: str
    stream: str
    unique_sensor: bool = False
    edge_process: str = "none"

    @property
    def column(self) -> str:
        return column_id(self.topic, self.stream)


@dataclass(frozen=True)
class StreamInventory:
    entries: tuple[StreamEntry, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for e in self.entries:
            if e.edge_process not in EDGE_PROCESSES:
                raise ValidationError(f"unknown edge_process {e.edge_process!r} for {e.column}")
            if (e.topic, e.stream) in seen:
                raise ValidationError(f"duplicate stream {e.column}")
            seen.add((e.topic, e.stream))

    def __len__(self):
        return len(self.entries)

    @property
    def columns(self) -> list[str]:
        return sort_columns(e.column for e in self.entries)

    @property
    def unique_columns(self) -> list[str]:
        return sort_columns(e.column for e in self.entries if e.unique_sensor)

    def device_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for e in self.entries:
            counts[e.device_id] = counts.get(e.device_id, 0) + 1
        return counts

    def lookup(self, topic: str, stream: str) -> StreamEntry | None:
        for e in self.entries:
            if e.topic == topic and e.stream == stream:
                return e
        return None

    def device_for_topic(self, topic: str) -> str | None:
        for e in self.entries:
            if e.topic == topic:
                return e.device_id
        return None

    def subset(self, columns: Iterable[str]) -> "StreamInventory":
        wanted = set(columns)
        return StreamInventory(tuple(e for e in self.entries if e.column in wanted))


def _parse_bool(text: str, line: int) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "y", "t"):
        return True
    if t in ("false", "0", "no", "n", "f", ""):
        return False
    raise ParseError(f"bad boolean {text!r}", line)


def load_inventory(path) -> StreamInventory:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_inventory(text)


def parse_inventory(text: str) -> StreamInventory:
    rows = list(csv.reader(text.splitlines()))
    if not rows or all(not r for r in rows):
        return StreamInventory()
    header = [h.strip() for h in rows[0]]
    if header != INVENTORY_HEADER:
        raise ParseError(f"expected header {','.join(INVENTORY_HEADER)}", 1)
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(INVENTORY_HEADER):
            raise ParseError(f"expected {len(INVENTORY_HEADER)} fields, got {len(row)}", lineno)
        device_id, topic, stream, unique, process = (c.strip() for c in row)
        if not device_id or not topic or not stream:
            raise ParseError("empty identifier", lineno)
        process = process.lower() or "none"
        if process not in EDGE_PROCESSES:
            raise ParseError(f"unknown edge_process {process!r}", lineno)
        entries.append(StreamEntry(device_id, topic, stream, _parse_bool(unique, lineno), process))
    return StreamInventory(tuple(entries))


def save_inventory(inventory: StreamInventory, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INVENTORY_HEADER)
        for e in inventory.entries:
            w.writerow([e.device_id, e.topic, e.stream, "true" if e.unique_sensor else "false",
                        e.edge_process])


def reference_inventory() -> StreamInventory:
    """The 32-stream, 10-device building inventory shipped with the package."""
    text = resources.files("buildsentinel.data").joinpath("inventory.csv").read_text("utf-8")
    return parse_inventory(text)


def reference_inventory_path() -> Path:
    return Path(str(resources.files("buildsentinel.data").joinpath("inventory.csv")))


# -- aligned frames -------------------------------------------------------------

def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AlignedFrame:
    """Master table: one row per grid tick, one column per stream.

    Rows sit on the lattice ``grid[0] + k * period``; rows dropped for being
    incomplete (or split off into a sub-dataset) leave holes in that lattice,
    so consecutive rows are not always exactly one period apart.
    ``mask`` is true where a cell holds an observed (or forward-filled) value;
    ``filled`` marks the forward-filled subset.
    """

    grid: np.ndarray
    period: int
    columns: tuple[str, ...]
    values: np.ndarray
    mask: np.ndarray | None = None
    filled: np.ndarray | None = None

    def __post_init__(self):
        grid = _frozen(self.grid, np.int64).reshape(-1)
        columns = tuple(self.columns)
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(len(grid), len(columns))
        if self.period is None or int(self.period) <= 0:
            raise ValidationError("period must be positive")
        period = int(self.period)
        if len(set(columns)) != len(columns):
            raise ValidationError("duplicate column identifiers")
        if len(grid) > 1:
            d = np.diff(grid)
            if np.any(d <= 0):
                raise ValidationError("grid must be strictly increasing")
            if np.any(d % period):
                raise ValidationError("grid timestamps must lie on the period lattice")
        if self.mask is None:
            mask = ~np.isnan(values)
        else:
            mask = np.array(self.mask, dtype=bool).reshape(values.shape)
        if not np.all(np.isfinite(values[mask])):
            raise ValidationError("non-finite value in an observed cell")
        values[~mask] = np.nan
        values.setflags(write=False)
        filled = np.zeros_like(mask) if self.filled is None else np.array(self.filled, dtype=bool).reshape(mask.shape)
        filled &= mask
        mask = _frozen(mask, bool)
        filled = _frozen(filled, bool)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "period", period)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "filled", filled)

    @property
    def n_rows(self) -> int:
        return len(self.grid)

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    @property
    def shape(self):
        return self.values.shape

    @property
    def complete(self) -> bool:
        return bool(self.mask.all())

    def column_index(self, column: str) -> int:
        try:
            return self.columns.index(column)
        except ValueError:
            raise ValidationError(f"unknown column {column!r}") from None

    def column(self, column: str) -> np.ndarray:
        return self.values[:, self.column_index(column)]

    def select_rows(self, rows) -> "AlignedFrame":
        rows = np.asarray(rows)
        return AlignedFrame(self.grid[rows], self.period, self.columns, self.values[rows],
                            self.mask[rows], self.filled[rows])

    def select_columns(self, columns: Sequence[str]) -> "AlignedFrame":
        idx = [self.column_index(c) for c in columns]
        return AlignedFrame(self.grid, self.period, tuple(columns), self.values[:, idx],
                            self.mask[:, idx], self.filled[:, idx])

    def with_values(self, values, columns=None) -> "AlignedFrame":
        """Same grid, new values; missing cells stay missing."""
        columns = self.columns if columns is None else tuple(columns)
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[1] == self.n_columns:
            mask, filled = self.mask, self.filled
        else:
            mask = self.mask.all(axis=1, keepdims=True) & np.isfinite(values)
            filled = np.zeros_like(mask)
        values = np.where(mask, values, np.nan)
        return AlignedFrame(self.grid, self.period, columns, values, mask, filled)

    def equals(self, other: "AlignedFrame") -> bool:
        return (
            isinstance(other, AlignedFrame)
            and self.period == other.period
            and self.columns == other.columns
            and np.array_equal(self.grid, other.grid)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values[self.mask], other.values[other.mask])
        )

    __eq__ = equals
    __hash__ = None


def frame_to_csv(frame: AlignedFrame, path, meta: dict | None = None) -> None:
    """Write ``frame`` as CSV and, alongside it, ``<path>.meta.json`` holding the
    period and any provenance given in ``meta``."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *frame.columns])
        for i in range(frame.n_rows):
            row = [format_timestamp(frame.grid[i])]
            for j in range(frame.n_columns):
                row.append(repr(float(frame.values[i, j])) if frame.mask[i, j] else "")
            w.writerow(row)
    sidecar = {"period": frame.period, "columns": list(frame.columns)}
    if meta:
        sidecar.update(meta)
    write_meta(path, sidecar)


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_meta(path, meta: dict) -> None:
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_meta(path) -> dict:
    mp = meta_path(path)
    if not mp.exists():
        return {}
    return json.loads(mp.read_text(encoding="utf-8"))


def frame_from_csv(path, period: int | None = None) -> AlignedFrame:
    """Read a frame CSV.  The period comes from the argument, the sidecar, or the
    gcd of timestamp differences, in that order."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty frame file", 1)
    header = rows[0]
    if not header or header[0].strip() != "timestamp":
        raise ParseError("first column must be 'timestamp'", 1)
    columns = tuple(h.strip() for h in header[1:])
    grid = []
    values = np.full((len(rows) - 1, len(columns)), np.nan)
    mask = np.zeros(values.shape, dtype=bool)
    for i, row in enumerate(rows[1:]):
        lineno = i + 2
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
        try:
            grid.append(parse_timestamp(row[0]))
        except ValueError as exc:
            raise ParseError(f"bad timestamp {row[0]!r}", lineno) from exc
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell == "":
                continue
            try:
                v = float(cell)
            except ValueError as exc:
                raise ParseError(f"bad value {cell!r}", lineno) from exc
            if not math.isfinite(v):
                raise ParseError(f"non-finite value {cell!r}", lineno)
            values[i, j] = v
            mask[i, j] = True
    if period is None:
        period = read_meta(path).get("period")
    if period is None:
        diffs = np.diff(np.asarray(grid, dtype=np.int64))
        if len(diffs) == 0:
            raise ParseError("cannot infer period from a single-row frame; pass period")
        period = int(reduce(math.gcd, (int(d) for d in diffs)))
    return AlignedFrame(np.asarray(grid, dtype=np.int64), int(period), columns, values, mask)


# -- windows, conditions, verdicts -------------------------------------------------

@dataclass(frozen=True, eq=False)
class WindowTensor:
    """``data[i]`` is rows ``[i, i+T)`` of the source frame; ``targets[i]`` is the
    row right after the window (the one-step-ahead forecasting target)."""

    data: np.ndarray
    targets: np.ndarray
    origin_timestamps: np.ndarray
    target_timestamps: np.ndarray
    columns: tuple[str, ...]
    period: int

    @property
    def samples(self) -> int:
        return self.data.shape[0]

    @property
    def time_steps(self) -> int:
        return self.data.shape[1]

    @property
    def streams(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True, eq=False)
class ConditionMask:
    flags: np.ndarray
    condition: str
    source_stream: str
    threshold: float

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValidationError(f"unknown condition {self.condition!r}")
        object.__setattr__(self, "flags", _frozen(self.flags, bool))


@dataclass(frozen=True)
class AnomalyVerdict:
    """One decision.  ``is_anomaly`` is always ``score > threshold``; detectors
    whose natural output points the other way negate it into ``score``."""

    timestamp: int
    streams: tuple[str, ...]
    score: float
    threshold: float
    is_anomaly: bool
    taxonomy: str
    detector: str
    config_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "streams", tuple(self.streams))
        if self.taxonomy not in TAXONOMIES:
            raise ValidationError(f"unknown taxonomy {self.taxonomy!r}")
        if self.detector not in DETECTORS:
            raise ValidationError(f"unknown detector {self.detector!r}")
        if self.taxonomy == "combined" and len(self.streams) < 2:
            raise ValidationError("combined verdicts need at least two streams")
        if bool(self.is_anomaly) != bool(self.score > self.threshold):
            raise ValidationError("is_anomaly disagrees with score > threshold")


VERDICT_HEADER = ["timestamp", "streams", "score", "threshold", "is_anomaly", "taxonomy",
                  "detector", "config_id"]


def verdicts_to_csv(verdicts: Sequence[AnomalyVerdict], path, meta: dict | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VERDICT_HEADER)
        for v in verdicts:
            w.writerow([format_timestamp(v.timestamp), ";".join(v.streams), repr(float(v.score)),
                        repr(float(v.threshold)), int(v.is_anomaly), v.taxonomy, v.detector,
                        v.config_id])
    if meta is not None:
        write_meta(path, meta)


def verdicts_from_csv(path) -> list[AnomalyVerdict]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != VERDICT_HEADER:
            raise ParseError("bad verdict header", 1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(VERDICT_HEADER):
                raise ParseError("wrong field count", lineno)
            out.append(AnomalyVerdict(parse_timestamp(row[0]), tuple(s for s in row[1].split(";") if s),
                                      float(row[2]), float(row[3]), bool(int(row[4])), row[5],
                                      row[6], row[7]))
    return out


def config_hash(config) -> str:
    """Short, stable digest of a JSON-able configuration."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
