"""Synthetic building telemetry with ground-truth anomaly injection.

Streams follow one of four shapes:

``diurnal``    smooth 24 h cosine around a baseline (temperature, humidity)
``occupancy``  baseline plus a step while the office is occupied, optionally
               low-pass filtered (CO2 builds up, lights switch)
``daylight``   half-sine between sunrise and sunset (natural light)
``walk``       mean-reverting bounded random walk pulled up by occupancy
               (BLE / WiFi presence probabilities)

Times of day are taken in UTC.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import AlignedFrame, format_timestamp, parse_timestamp, sort_columns
from .errors import ValidationError

SHAPES = ("diurnal", "occupancy", "daylight", "walk")
INJECTION_KINDS = ("point", "contextual", "collective")
DAY = 86400

# Monday 14 June 2021, 00:00 UTC
DEFAULT_START = 1623628800


@dataclass
class StreamProfile:
    column: str
    shape: str
    baseline: float = 0.0
    amplitude: float = 1.0
    phase: float = 15.0  # hour of the diurnal peak
    noise_sd: float = 0.0
    smoothing_minutes: float = 0.0
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValidationError(f"unknown stream shape {self.shape!r}")
        if self.noise_sd < 0:
            raise ValidationError(f"noise_sd must be >= 0 for {self.column}")


@dataclass
class ScenarioConfig:
    streams: list[StreamProfile]
    duration: int = 7 * DAY
    grid_period: int = 60
    start: int = DEFAULT_START
    occupancy_start: float = 7.0
    occupancy_end: float = 18.0
    occupancy_jitter_minutes: float = 10.0
    weekdays: tuple[int, ...] = (0, 1, 2, 3, 4)
    sunrise: float = 5.0
    sunset: float = 21.0
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValidationError("duration must be positive")
        if self.grid_period <= 0:
            raise ValidationError("grid_period must be positive")
        self.streams = [s if isinstance(s, StreamProfile) else StreamProfile(**s) for s in self.streams]
        self.weekdays = tuple(self.weekdays)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weekdays"] = list(self.weekdays)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "start" in d:
            d["start"] = parse_timestamp(d["start"])
        return cls(**d)


def default_streams() -> list[StreamProfile]:
    """Fourteen streams named after the unique sensors of the reference inventory."""
    return [
        StreamProfile("all-in-1/A", "diurnal", 0.75, 0.01, 14.0, 0.002),
        StreamProfile("all-in-1/L", "occupancy", 0.01, 0.6, noise_sd=0.02, lo=0.0, hi=1.0),
        StreamProfile("all-in-1/M", "occupancy", 0.01, 0.05, noise_sd=0.004, smoothing_minutes=20, lo=0.0),
        StreamProfile("ble_devices/p", "walk", 0.2, 0.35, noise_sd=0.01, lo=0.0, hi=1.0),
        StreamProfile("co2/C", "occupancy", 0.2, 0.15, noise_sd=0.005, smoothing_minutes=45, lo=0.0),
        StreamProfile("infra/max", "occupancy", 0.002, 0.04, noise_sd=0.004, lo=0.0, hi=1.0),
        StreamProfile("nir/artificial", "occupancy", 0.0, 0.9, noise_sd=0.02, lo=0.0, hi=1.0),
        StreamProfile("nir/natural", "daylight", 0.0, 0.6, noise_sd=0.01, lo=0.0, hi=1.0),
        StreamProfile("pir/Q", "occupancy", 0.03, 0.1, noise_sd=0.008, lo=0.0, hi=1.0),
        StreamProfile("sense-hat/humidity", "diurnal", 38.4, 1.5, 5.0, 0.1),
        StreamProfile("sense-hat/temp", "diurnal", 22.5, 1.5, 15.0, 0.08),
        StreamProfile("sound3/p", "occupancy", 0.02, 0.45, noise_sd=0.05, lo=0.0, hi=1.0),
        StreamProfile("sound4/score", "occupancy", 0.51, 0.03, noise_sd=0.003),
        StreamProfile("wifi_devices/p", "walk", 0.15, 0.45, noise_sd=0.01, lo=0.0, hi=1.0),
    ]


def default_scenario(days: int = 7, grid_period: int = 60, seed: int = 0, **kwargs) -> ScenarioConfig:
    return ScenarioConfig(default_streams(), duration=days * DAY, grid_period=grid_period, seed=seed, **kwargs)


def hour_of_day(grid) -> np.ndarray:
    return (np.asarray(grid) % DAY) / 3600.0


def occupancy(cfg: ScenarioConfig, grid, rng) -> np.ndarray:
    """0/1 occupancy per tick, with a per-day jitter on arrival and departure."""
    grid = np.asarray(grid)
    day_index = (grid - grid[0] // DAY * DAY) // DAY
    n_days = int(day_index.max()) + 1
    jitter = rng.normal(0.0, cfg.occupancy_jitter_minutes / 60.0, size=(n_days, 2))
    weekday = ((grid // DAY) + 3) % 7  # epoch day 0 was a Thursday
    h = hour_of_day(grid)
    start = cfg.occupancy_start + jitter[day_index, 0]
    end = cfg.occupancy_end + jitter[day_index, 1]
    on = np.isin(weekday, cfg.weekdays) & (h >= start) & (h < end)
    return on.astype(np.float64)


def _lowpass(x, tau_steps):
    if tau_steps <= 0:
        return x
    a = 1.0 / (1.0 + tau_steps)
    out = np.empty_like(x)
    acc = x[0]
    for i, v in enumerate(x):
        acc += a * (v - acc)
        out[i] = acc
    return out


def generate(cfg: ScenarioConfig) -> AlignedFrame:
    """Deterministic for a given seed.  Columns come out in (topic, stream) order."""
    if not cfg.streams:
        raise ValidationError("scenario has no streams")
    n = cfg.duration // cfg.grid_period
    if n < 1:
        raise ValidationError("duration shorter than one grid period")
    start = cfg.start // cfg.grid_period * cfg.grid_period
    grid = start + cfg.grid_period * np.arange(n, dtype=np.int64)
    h = hour_of_day(grid)
    rng_occ = np.random.default_rng([cfg.seed, 0])
    occ = occupancy(cfg, grid, rng_occ)
    steps_per_minute = 60.0 / cfg.grid_period

    profiles = {p.column: p for p in cfg.streams}
    columns = sort_columns(profiles)
    values = np.empty((n, len(columns)))
    for j, col in enumerate(columns):
        p = profiles[col]
        # one generator per stream, keyed by column name, so adding a stream
        # leaves the others unchanged
        rng = np.random.default_rng([cfg.seed, 1, *col.encode()])
        noise = rng.normal(0.0, 1.0, n) * p.noise_sd if p.noise_sd > 0 else np.zeros(n)
        if p.shape == "diurnal":
            x = p.baseline + p.amplitude * np.cos(2 * np.pi * (h - p.phase) / 24.0) + noise
        elif p.shape == "occupancy":
            level = _lowpass(occ, p.smoothing_minutes * steps_per_minute)
            x = p.baseline + p.amplitude * level + noise
        elif p.shape == "daylight":
            frac = (h - cfg.sunrise) / (cfg.sunset - cfg.sunrise)
            x = p.baseline + p.amplitude * np.where((frac > 0) & (frac < 1), np.sin(np.pi * frac), 0.0)
            x = x + noise * (x > p.baseline)
        else:
            target = p.baseline + p.amplitude * _lowpass(occ, 30 * steps_per_minute)
            x = np.empty(n)
            cur = p.baseline
            for i in range(n):
                cur += 0.05 * (target[i] - cur) + noise[i]
                x[i] = cur
        if p.lo is not None or p.hi is not None:
            x = np.clip(x, p.lo, p.hi)
        values[:, j] = x
    return AlignedFrame(grid, cfg.grid_period, tuple(columns), values)


# -- injection ---------------------------------------------------------------------

@dataclass
class Injection:
    """``magnitude`` is in column standard deviations for point and collective
    entries, and a quantile of the column's own values for contextual ones."""

    kind: str
    streams: tuple[str, ...]
    start: int
    end: int
    magnitude: float = 10.0

    def __post_init__(self):
        if self.kind not in INJECTION_KINDS:
            raise ValidationError(f"unknown injection kind {self.kind!r}")
        self.streams = tuple(self.streams)
        self.start = parse_timestamp(self.start)
        self.end = parse_timestamp(self.end)
        if self.end < self.start:
            raise ValidationError("injection ends before it starts")
        if not self.streams:
            raise ValidationError("injection lists no streams")
        if self.kind == "point" and (self.start != self.end or len(self.streams) != 1):
            raise ValidationError("a point injection covers one tick of one stream")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "streams": list(self.streams), "start": format_timestamp(self.start),
                "end": format_timestamp(self.end), "magnitude": self.magnitude}


@dataclass
class InjectionLog:
    entries: list[Injection] = field(default_factory=list)

    def __post_init__(self):
        self.entries = [e if isinstance(e, Injection) else Injection(**e) for e in self.entries]
        by_stream: dict[str, list[tuple[int, int]]] = {}
        for e in self.entries:
            for s in e.streams:
                for a, b in by_stream.get(s, []):
                    if e.start <= b and a <= e.end:
                        raise ValidationError(f"overlapping injections on {s}")
                by_stream.setdefault(s, []).append((e.start, e.end))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "InjectionLog":
        return cls([Injection(**e) for e in d.get("entries", [])])

    def save(self, path, meta: dict | None = None) -> None:
        d = self.to_dict()
        if meta:
            d["meta"] = meta
        Path(path).write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "InjectionLog":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _rows_for(frame: AlignedFrame, e: Injection) -> np.ndarray:
    if e.start < frame.grid[0] or e.end > frame.grid[-1]:
        raise ValidationError(
            f"{e.kind} injection [{format_timestamp(e.start)}, {format_timestamp(e.end)}] "
            "lies outside the frame")
    rows = np.flatnonzero((frame.grid >= e.start) & (frame.grid <= e.end))
    if len(rows) == 0:
        raise ValidationError("injection interval contains no frame rows")
    return rows


def inject(frame: AlignedFrame, log: InjectionLog, seed: int = 0) -> AlignedFrame:
    """Apply every logged anomaly.  Cells outside logged intervals are untouched.

    Statistics used to size the anomalies (column SD, quantiles, range) come
    from the input frame, so entries do not influence each other.
    """
    if len(log) == 0:
        return frame
    rng = np.random.default_rng(seed)
    src = frame.values
    out = np.array(src)
    for e in log:
        rows = _rows_for(frame, e)
        for s in e.streams:
            j = frame.column_index(s)
            col = src[frame.mask[:, j], j]
            if e.kind == "point":
                out[rows, j] = src[rows, j] + e.magnitude * col.std()
            elif e.kind == "collective":
                out[rows, j] = src[rows, j] + e.magnitude * col.std()
            else:
                level = np.quantile(col, e.magnitude)
                jitter = rng.normal(0.0, 0.05 * col.std(), len(rows))
                out[rows, j] = np.clip(level + jitter, col.min(), col.max())
    return frame.with_values(out)


def plan_injections(frame: AlignedFrame, n_point: int = 5, n_contextual: int = 3, seed: int = 0,
                    point_streams: Sequence[str] | None = None,
                    contextual_streams: Sequence[str] = ("all-in-1/L", "nir/artificial", "sound3/p"),
                    contextual_hour: float = 21.0, contextual_minutes: int = 15,
                    point_sigma: float = 10.0, contextual_quantile: float = 0.9,
                    margin: int = 120) -> InjectionLog:
    """Scatter point spikes and 21:00 sound-and-light bursts over a frame.

    Bursts go on distinct evenings; spikes land at least ``margin`` ticks from
    the frame edges and from every other planned event.
    """
    rng = np.random.default_rng(seed)
    period = frame.period
    grid = frame.grid
    entries = []
    taken: list[int] = []

    days = np.unique(grid // DAY)
    evenings = [d * DAY + int(contextual_hour * 3600) for d in days]
    evenings = [t for t in evenings
                if t - margin * period >= grid[0] and t + (contextual_minutes * 60) + margin * period <= grid[-1]]
    if len(evenings) < n_contextual:
        raise ValidationError("frame too short for the requested contextual injections")
    for t in sorted(rng.choice(evenings, size=n_contextual, replace=False)):
        t = int(t) // period * period
        entries.append(Injection("contextual", tuple(contextual_streams), t,
                                 t + contextual_minutes * 60 - period, contextual_quantile))
        taken.append(t)

    candidates = list(point_streams) if point_streams else [
        c for c in frame.columns if c not in contextual_streams]
    open_ticks = grid[margin:frame.n_rows - margin].astype(np.int64)
    for t in taken:
        open_ticks = open_ticks[np.abs(open_ticks - t) > margin * period]
    for _ in range(n_point):
        if len(open_ticks) == 0:
            raise ValidationError("frame too short for the requested point injections; lower margin")
        ts = int(open_ticks[rng.integers(len(open_ticks))])
        col = candidates[int(rng.integers(len(candidates)))]
        entries.append(Injection("point", (col,), ts, ts, point_sigma))
        open_ticks = open_ticks[np.abs(open_ticks - ts) > margin * period]
    entries.sort(key=lambda e: e.start)
    return InjectionLog(entries)
