"""Scoring against injected ground truth, stream-combination counts and
training-time benchmarks."""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import reduce
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .core import (CONDITIONS, DETECTORS, AlignedFrame, AnomalyVerdict, StreamInventory,
                   config_hash, write_meta)
from .errors import ValidationError
from .synth import InjectionLog

RESULTS_HEADER = ["config_id", "condition", "pipeline", "detector", "wall_seconds", "epochs",
                  "anomaly_count", "tp", "fp", "tn", "fn"]


# -- scoring -----------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    """Event-level confusion counts.

    ``tp`` and ``fn`` count truth events, ``fp`` and ``tn`` count verdicts that
    lie outside every event's tolerance zone.  Verdicts inside a zone are
    neither, so ``tp + fp + tn + fn == n_evaluated`` counts events plus
    background verdicts.
    """

    tp: int
    fp: int
    tn: int
    fn: int
    n_verdicts: int = 0

    @property
    def n_evaluated(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else math.nan

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else math.nan

    @property
    def fp_rate(self) -> float:
        """False flags per background verdict."""
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else math.nan

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "n_verdicts": self.n_verdicts, "n_evaluated": self.n_evaluated,
                "precision": self.precision, "recall": self.recall, "fp_rate": self.fp_rate}


def _timeline_period(ts: np.ndarray) -> int:
    d = np.diff(np.unique(ts))
    return int(reduce(math.gcd, (int(x) for x in d))) if len(d) else 0


def score(verdicts: Sequence[AnomalyVerdict], truth: InjectionLog, tolerance_ticks: int = 2,
          period: int | None = None) -> ConfusionCounts:
    """Match flagged verdicts to truth intervals.

    A flag matches an event when its timestamp lies within ``tolerance_ticks``
    grid periods of the event interval and the two share at least one stream.
    ``period`` defaults to the spacing of the verdict timeline.
    """
    if tolerance_ticks < 0:
        raise ValidationError("tolerance_ticks must be >= 0")
    events = list(truth)
    if not verdicts:
        if events:
            raise ValidationError("no verdicts to score against a non-empty truth log")
        return ConfusionCounts(0, 0, 0, 0, 0)
    ts = np.array([v.timestamp for v in verdicts], dtype=np.int64)
    flagged = np.array([v.is_anomaly for v in verdicts], dtype=bool)
    if period is None:
        period = _timeline_period(ts)
        if period == 0:
            raise ValidationError("cannot infer the grid period from a single verdict; pass period")
    tol = tolerance_ticks * period
    lo, hi = ts.min(), ts.max()
    for e in events:
        if e.end < lo - tol or e.start > hi + tol:
            raise ValidationError(f"truth interval starting {e.start} lies outside the verdict timeline")
        if (e.start - lo) % period:
            raise ValidationError(f"truth interval starting {e.start} is off the verdict grid")

    stream_sets = [frozenset(v.streams) for v in verdicts]
    covered = np.zeros(len(verdicts), dtype=bool)
    tp = fn = 0
    for e in events:
        es = set(e.streams)
        near = (ts >= e.start - tol) & (ts <= e.end + tol)
        near &= np.fromiter((not es.isdisjoint(s) for s in stream_sets), bool, len(stream_sets))
        covered |= near
        if np.any(flagged & near):
            tp += 1
        else:
            fn += 1
    background = ~covered
    fp = int(np.sum(flagged & background))
    tn = int(np.sum(~flagged & background))
    return ConfusionCounts(tp, fp, tn, fn, len(verdicts))


# -- combinations ---------------------------------------------------------------------

def _listing(groups, unique) -> Iterator[tuple[str, str | None, tuple[str, ...]]]:
    for device, cols in groups:
        for k in range(1, len(cols) + 1):
            for combo in itertools.combinations(cols, k):
                yield "intra", device, combo
    for k in range(1, len(unique) + 1):
        for combo in itertools.combinations(unique, k):
            yield "inter", None, combo


def enumerate_combinations(inventory: StreamInventory):
    """``(intra, inter, listing)``.  The counts are closed-form; ``listing`` is a
    lazy iterator of ``(scope, device_id, columns)`` over every non-empty subset."""
    groups: dict[str, list[str]] = {}
    for e in inventory.entries:
        groups.setdefault(e.device_id, []).append(e.column)
    unique = list(inventory.unique_columns)
    intra = sum((1 << len(c)) - 1 for c in groups.values())
    inter = (1 << len(unique)) - 1
    return intra, inter, _listing(list(groups.items()), unique)


# -- benchmark ----------------------------------------------------------------------

@dataclass
class RunRecord:
    config_id: str
    condition: str
    pipeline: str
    detector: str
    wall_seconds: float | None = None
    epochs: int | None = None
    anomaly_count: int | None = None
    tp: int | None = None
    fp: int | None = None
    tn: int | None = None
    fn: int | None = None
    error: str | None = None

    def __post_init__(self):
        if self.wall_seconds is not None and self.wall_seconds < 0:
            raise ValidationError("wall time must be >= 0")
        if self.epochs is not None and self.epochs > 100:
            raise ValidationError("epochs must not exceed 100")

    @property
    def ok(self) -> bool:
        return self.error is None

    def row(self) -> list:
        return ["" if getattr(self, k) is None else getattr(self, k) for k in RESULTS_HEADER]


@dataclass
class RunSpec:
    """One benchmark run.  ``train`` and ``test`` are frames; ``test`` defaults
    to ``train``.  ``params`` go to the detector's training call."""

    train: AlignedFrame
    detector: str
    condition: str = "UC"
    stages: tuple = ()
    params: dict | None = None
    test: AlignedFrame | None = None
    truth: InjectionLog | None = None
    condition_source: str = "nir/natural"
    condition_threshold: float = 0.02
    tolerance_ticks: int = 2
    seed: int = 0
    config_id: str | None = None

    def describe(self) -> dict:
        return {"detector": self.detector, "condition": self.condition, "stages": list(self.stages),
                "params": self.params or {}, "condition_source": self.condition_source,
                "condition_threshold": self.condition_threshold, "seed": self.seed,
                "tolerance_ticks": self.tolerance_ticks}

    @property
    def run_id(self) -> str:
        return self.config_id or config_hash(self.describe())


def train_detector(detector: str, frame: AlignedFrame, params: dict, seed: int):
    """Fit one detector.  Returns ``(model, threshold_or_None, epochs)``."""
    from .detect import forecaster_train, if_fit, ocsvm_fit
    from .preprocess import to_windows

    params = dict(params)
    if detector == "isolation_forest":
        return if_fit(frame.values, seed=seed, **params), None, 0
    if detector == "ocsvm":
        return ocsvm_fit(frame.values, **params), None, 0
    if detector in ("conv_forecaster", "recurrent_forecaster"):
        kind = "conv1d" if detector == "conv_forecaster" else "recurrent"
        contiguous = params.pop("contiguous", False)
        windows = to_windows(frame, params.get("time_steps", 74), contiguous=contiguous)
        model, thr = forecaster_train(windows, kind, seed=seed, **params)
        return model, thr, model.epochs_run
    raise ValidationError(f"unknown detector {detector!r}; expected one of {DETECTORS}")


def run_detector(detector: str, model, threshold, frame: AlignedFrame, config_id: str = ""):
    from .detect import forecaster_detect, if_detect, ocsvm_detect
    from .preprocess import to_windows

    if detector == "isolation_forest":
        return if_detect(model, frame, config_id)
    if detector == "ocsvm":
        return ocsvm_detect(model, frame, config_id)
    windows = to_windows(frame, model.config.time_steps)
    return forecaster_detect(model, threshold, windows, config_id)


def execute_run(spec: RunSpec) -> RunRecord:
    """Run one spec; any exception becomes a failure record."""
    from .preprocess import Pipeline, condition_frame

    pipe = Pipeline([dict(s) for s in spec.stages])
    rec = RunRecord(spec.run_id, spec.condition, pipe.name, spec.detector)
    try:
        if spec.condition not in CONDITIONS:
            raise ValidationError(f"unknown condition {spec.condition!r}")
        train = condition_frame(spec.train, spec.condition, spec.condition_source, spec.condition_threshold)
        test = spec.test if spec.test is not None else spec.train
        test = condition_frame(test, spec.condition, spec.condition_source, spec.condition_threshold)
        pipe.fit(train)
        train_p, test_p = pipe.apply(train), pipe.apply(test)
        t0 = time.perf_counter()
        model, thr, epochs = train_detector(spec.detector, train_p, spec.params or {}, spec.seed)
        rec.wall_seconds = time.perf_counter() - t0
        rec.epochs = epochs
        verdicts = run_detector(spec.detector, model, thr, test_p, rec.config_id)
        rec.anomaly_count = sum(v.is_anomaly for v in verdicts)
        if spec.truth is not None:
            c = score(verdicts, spec.truth, spec.tolerance_ticks, spec.train.period)
            rec.tp, rec.fp, rec.tn, rec.fn = c.tp, c.fp, c.tn, c.fn
    except Exception as exc:  # recorded, never raised: one bad run must not stop a sweep
        rec.wall_seconds = None
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def append_results(path, records: Sequence[RunRecord]) -> None:
    """Append rows to the results CSV, writing the header for a new file."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(RESULTS_HEADER)
        for r in records:
            w.writerow(r.row())


def read_results(path) -> list[RunRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            def num(k, cast):
                return cast(row[k]) if row[k] != "" else None
            out.append(RunRecord(row["config_id"], row["condition"], row["pipeline"], row["detector"],
                                 num("wall_seconds", float), num("epochs", int),
                                 num("anomaly_count", int), num("tp", int), num("fp", int),
                                 num("tn", int), num("fn", int)))
    return out


def plot_data(records: Sequence[RunRecord]) -> dict:
    """Training times grouped by detector and by scaled vs non-scaled pipeline."""
    groups: dict[str, dict] = {}
    for r in records:
        if not r.ok:
            continue
        scaled = any(k in r.pipeline.split("+") for k in ("standard", "minmax"))
        name = f"{r.detector}/{'scaled' if scaled else 'non-scaled'}"
        g = groups.setdefault(name, {"name": name, "detector": r.detector, "scaled": scaled,
                                     "config_id": [], "condition": [], "wall_seconds": [],
                                     "epochs": []})
        g["config_id"].append(r.config_id)
        g["condition"].append(r.condition)
        g["wall_seconds"].append(r.wall_seconds)
        g["epochs"].append(r.epochs)
    series = []
    for name in sorted(groups):
        g = groups[name]
        g["mean_wall_seconds"] = float(np.mean(g["wall_seconds"]))
        series.append(g)
    return {"quantity": "training wall time (s)", "series": series}


def benchmark(plan: Sequence[RunSpec], workers: int = 1, results_path=None, plot_path=None,
              meta: dict | None = None) -> list[RunRecord]:
    """Execute every spec and return one record per spec, in plan order.

    With ``workers > 1`` runs go to a process pool; results are still written
    by this process alone, in plan order.  Failures are kept as records with
    an ``error`` and blank measurements, and listed in the results sidecar.
    """
    if workers > 1 and len(plan) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(execute_run, plan))
    else:
        records = [execute_run(s) for s in plan]
    if results_path is not None:
        append_results(results_path, records)
        failures = {r.config_id: r.error for r in records if not r.ok}
        write_meta(results_path, {**(meta or {}), "failures": failures})
    if plot_path is not None:
        Path(plot_path).write_text(json.dumps(plot_data(records), indent=2) + "\n", encoding="utf-8")
    return records

