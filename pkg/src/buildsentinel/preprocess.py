"""Scaling, row reductions, edge-style transforms, daylight splits and windowing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import AlignedFrame, ConditionMask, WindowTensor
from .errors import DegenerateError, InsufficientRowsError, ValidationError

SCALER_KINDS = ("standard", "minmax")
REDUCTIONS = ("average", "sd", "mad", "kurtosis", "skewness")


# -- scalers ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FittedScaler:
    """Per-column parameters: ``(mean, sd)`` for standard, ``(min, max)`` for minmax."""

    kind: str
    columns: tuple[str, ...]
    a: np.ndarray
    b: np.ndarray

    @property
    def mean(self):
        return self.a if self.kind == "standard" else None

    @property
    def sd(self):
        return self.b if self.kind == "standard" else None

    @property
    def d_min(self):
        return self.a if self.kind == "minmax" else None

    @property
    def d_max(self):
        return self.b if self.kind == "minmax" else None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "columns": list(self.columns),
                "a": self.a.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FittedScaler":
        return cls(d["kind"], tuple(d["columns"]), np.asarray(d["a"], float), np.asarray(d["b"], float))


def fit_scaler(frame: AlignedFrame, kind: str = "standard") -> FittedScaler:
    """Fit over observed cells only.  Standard uses the population SD."""
    if kind not in SCALER_KINDS:
        raise ValidationError(f"unknown scaler kind {kind!r}")
    if frame.n_rows < 2:
        raise InsufficientRowsError("scaler needs at least 2 rows")
    a = np.empty(frame.n_columns)
    b = np.empty(frame.n_columns)
    for j, col in enumerate(frame.columns):
        x = frame.values[frame.mask[:, j], j]
        if len(x) < 2:
            raise InsufficientRowsError(f"column {col} has fewer than 2 observed values")
        if kind == "standard":
            a[j] = x.mean()
            b[j] = np.sqrt(np.mean((x - a[j]) ** 2))
            degenerate = not b[j] > 0
        else:
            a[j] = x.min()
            b[j] = x.max()
            degenerate = not b[j] > a[j]
        if degenerate:
            raise DegenerateError(f"column {col} is constant; cannot {kind}-scale it", column=col)
    return FittedScaler(kind, frame.columns, a, b)


def _check_columns(frame, scaler):
    if tuple(frame.columns) != tuple(scaler.columns):
        raise ValidationError(
            f"frame columns {list(frame.columns)} do not match scaler columns {list(scaler.columns)}")


def apply_scaler(frame: AlignedFrame, scaler: FittedScaler) -> AlignedFrame:
    _check_columns(frame, scaler)
    if scaler.kind == "standard":
        out = (frame.values - scaler.a) / scaler.b
    else:
        out = (frame.values - scaler.a) / (scaler.b - scaler.a)
    return frame.with_values(out)


def invert_scaler(frame: AlignedFrame, scaler: FittedScaler) -> AlignedFrame:
    _check_columns(frame, scaler)
    if scaler.kind == "standard":
        out = frame.values * scaler.b + scaler.a
    else:
        out = frame.values * (scaler.b - scaler.a) + scaler.a
    return frame.with_values(out)


# -- reductions ---------------------------------------------------------------------

def _pass(passes, name):
    if passes is not None:
        passes.append(name)


def _mean(x, passes):
    _pass(passes, "mean")
    return float(np.sum(x) / len(x))


def _population_sd(x, m, passes):
    _pass(passes, "spread")
    return float(np.sqrt(np.sum((x - m) ** 2) / len(x)))


def reduce(sample, kind: str, excess: bool = False, passes: list | None = None) -> float:
    """Collapse one multi-stream sample to a scalar.

    ``mad`` is the median of absolute deviations from the median (no
    consistency constant).  ``kurtosis`` is Pearson's (non-excess) unless
    ``excess`` is set.  If ``passes`` is a list, the name of each pass over the
    data is appended to it.
    """
    x = np.asarray(sample, dtype=np.float64).reshape(-1)
    if kind not in REDUCTIONS:
        raise ValidationError(f"unknown reduction {kind!r}")
    if len(x) < 1:
        raise ValidationError("cannot reduce an empty sample")
    if not np.all(np.isfinite(x)):
        raise ValidationError("sample contains non-finite values")
    if kind == "average":
        return _mean(x, passes)
    if kind == "mad":
        _pass(passes, "median")
        med = np.median(x)
        _pass(passes, "median_abs_dev")
        return float(np.median(np.abs(x - med)))
    m = _mean(x, passes)
    s = _population_sd(x, m, passes)
    if kind == "sd":
        return s
    if not s > 0:
        raise DegenerateError(f"{kind} undefined for a sample with zero spread")
    z = (x - m) / s
    if kind == "skewness":
        _pass(passes, "moment3")
        return float(np.sum(z * z * z) / len(x))
    _pass(passes, "moment4")
    z2 = z * z
    k = float(np.sum(z2 * z2) / len(x))
    return k - 3.0 if excess else k


def reduce_rows(values, kind: str, excess: bool = False) -> np.ndarray:
    """Vectorised :func:`reduce` over the rows of a 2-D array."""
    x = np.asarray(values, dtype=np.float64)
    if kind not in REDUCTIONS:
        raise ValidationError(f"unknown reduction {kind!r}")
    if kind == "average":
        return x.mean(axis=1)
    if kind == "mad":
        med = np.median(x, axis=1, keepdims=True)
        return np.median(np.abs(x - med), axis=1)
    m = x.mean(axis=1, keepdims=True)
    s = np.sqrt(np.mean((x - m) ** 2, axis=1, keepdims=True))
    if kind == "sd":
        return s[:, 0]
    if np.any(s == 0):
        raise DegenerateError(f"{kind} undefined for rows with zero spread")
    z = (x - m) / s
    if kind == "skewness":
        return np.mean(z * z * z, axis=1)
    z2 = z * z
    k = np.mean(z2 * z2, axis=1)
    return k - 3.0 if excess else k


def reduce_frame(frame: AlignedFrame, kind: str, excess: bool = False) -> AlignedFrame:
    """Row-wise reduction of a complete frame to a one-column frame named after ``kind``."""
    if not frame.complete:
        raise ValidationError("reduction needs a frame without missing cells")
    return AlignedFrame(frame.grid, frame.period, (kind,), reduce_rows(frame.values, kind, excess)[:, None])


# -- transforms ---------------------------------------------------------------------

def atan_norm(x, scale: float = 1.0, signed: bool = False):
    """``arctan(x / scale) * 2/pi``.  Signed streams are shifted into [0, 1]
    with ``(v + 1) / 2``; non-negative streams use ``v`` directly, clipped at 0."""
    if not scale > 0:
        raise ValidationError("atan scale must be positive")
    v = np.clip(np.arctan(np.asarray(x, dtype=np.float64) / scale) * (2.0 / np.pi), -1.0, 1.0)
    return (v + 1.0) / 2.0 if signed else np.clip(v, 0.0, 1.0)


def gaussian_score(x, mu: float, sigma: float):
    if not sigma > 0:
        raise DegenerateError("gaussian_score needs sigma > 0")
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-((x - mu) ** 2) / (2.0 * sigma * sigma))


@dataclass(frozen=True)
class TransformSpec:
    """``kind`` is ``atan_norm`` or ``gaussian_score``.  ``columns=None`` means
    every column.  Gaussian parameters are per column, fitted with
    :func:`fit_gaussian`."""

    kind: str
    columns: tuple[str, ...] | None = None
    scale: float = 1.0
    signed: bool = False
    mu: tuple[float, ...] | None = None
    sigma: tuple[float, ...] | None = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "columns": None if self.columns is None else list(self.columns),
                "scale": self.scale, "signed": self.signed,
                "mu": None if self.mu is None else list(self.mu),
                "sigma": None if self.sigma is None else list(self.sigma)}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformSpec":
        tup = lambda v: None if v is None else tuple(v)  # noqa: E731
        return cls(d["kind"], tup(d.get("columns")), d.get("scale", 1.0), d.get("signed", False),
                   tup(d.get("mu")), tup(d.get("sigma")))


def fit_gaussian(frame: AlignedFrame, columns: Sequence[str] | None = None) -> TransformSpec:
    columns = tuple(frame.columns if columns is None else columns)
    mu, sigma = [], []
    for c in columns:
        j = frame.column_index(c)
        x = frame.values[frame.mask[:, j], j]
        mu.append(float(x.mean()))
        sigma.append(float(np.sqrt(np.mean((x - x.mean()) ** 2))))
    return TransformSpec("gaussian_score", columns, mu=tuple(mu), sigma=tuple(sigma))


def transform(frame: AlignedFrame, spec: TransformSpec) -> AlignedFrame:
    columns = frame.columns if spec.columns is None else spec.columns
    out = np.array(frame.values)
    for k, c in enumerate(columns):
        j = frame.column_index(c)
        if spec.kind == "atan_norm":
            out[:, j] = atan_norm(frame.values[:, j], spec.scale, spec.signed)
        elif spec.kind == "gaussian_score":
            if spec.mu is None or spec.sigma is None:
                raise ValidationError("gaussian_score needs fitted mu and sigma")
            out[:, j] = gaussian_score(frame.values[:, j], spec.mu[k], spec.sigma[k])
        else:
            raise ValidationError(f"unknown transform {spec.kind!r}")
    return frame.with_values(out)


# -- conditional sub-datasets ----------------------------------------------------------

def split_condition(frame: AlignedFrame, source_stream: str, threshold: float):
    """Daytime rows are those whose ``source_stream`` value exceeds ``threshold``.

    Returns ``(day_mask, DT frame, NT frame)``.  Missing source cells count as
    night so the two sub-frames always partition the input rows.
    """
    if source_stream not in frame.columns:
        raise ValidationError(f"condition source {source_stream!r} not in frame columns")
    src = frame.column(source_stream)
    with np.errstate(invalid="ignore"):
        day = np.where(np.isnan(src), False, src > threshold)
    cmask = ConditionMask(day, "DT", source_stream, float(threshold))
    return cmask, frame.select_rows(np.flatnonzero(day)), frame.select_rows(np.flatnonzero(~day))


def condition_frame(frame: AlignedFrame, condition: str, source_stream: str,
                    threshold: float) -> AlignedFrame:
    if condition == "UC":
        return frame
    _, dt, nt = split_condition(frame, source_stream, threshold)
    if condition == "DT":
        return dt
    if condition == "NT":
        return nt
    raise ValidationError(f"unknown condition {condition!r}")


# -- windowing -----------------------------------------------------------------------

def to_windows(frame: AlignedFrame, time_steps: int, contiguous: bool = False) -> WindowTensor:
    """Sliding windows over rows: ``N = R - T`` windows of shape ``(T, D)``.

    The data array is a strided view of ``frame.values``; nothing is copied.
    With ``contiguous=True`` windows whose rows (target included) straddle a
    hole in the grid lattice are dropped, so ``N`` may be smaller than ``R - T``.
    """
    T = int(time_steps)
    R = frame.n_rows
    if T < 1:
        raise ValidationError("time_steps must be >= 1")
    if R <= T:
        raise InsufficientRowsError(f"need more than {T} rows for {T}-step windows, got {R}")
    if not frame.complete:
        raise ValidationError("windowing needs a frame without missing cells")
    values = frame.values
    data = sliding_window_view(values, T, axis=0)[: R - T].transpose(0, 2, 1)
    targets = values[T:]
    origins = frame.grid[: R - T]
    target_ts = frame.grid[T:]
    if contiguous:
        keep = np.flatnonzero(target_ts - origins == T * frame.period)
        data, targets, origins, target_ts = data[keep], targets[keep], origins[keep], target_ts[keep]
    return WindowTensor(data, targets, origins, target_ts, frame.columns, frame.period)


# -- pipelines -----------------------------------------------------------------------

@dataclass
class Pipeline:
    """Ordered preprocessing stages, fitted on training data and then frozen.

    Stage dicts (as they appear in config files)::

        {"stage": "scale", "kind": "standard" | "minmax"}
        {"stage": "transform", "kind": "atan_norm", "scale": 1.0, "signed": false, "columns": [...]}
        {"stage": "transform", "kind": "gaussian_score", "columns": [...]}
        {"stage": "reduce", "kind": "average" | "sd" | "mad" | "kurtosis" | "skewness"}
    """

    stages: list[dict] = field(default_factory=list)
    fitted: list[dict] | None = None

    @property
    def name(self) -> str:
        if not self.stages:
            return "raw"
        parts = []
        for s in self.stages:
            parts.append(s["kind"] if s["stage"] != "transform" else s["kind"].split("_")[0])
        return "+".join(parts)

    def fit(self, frame: AlignedFrame) -> "Pipeline":
        fitted = []
        for s in self.stages:
            stage = s["stage"]
            if stage == "scale":
                scaler = fit_scaler(frame, s.get("kind", "standard"))
                fitted.append({"stage": "scale", "scaler": scaler.to_dict()})
                frame = apply_scaler(frame, scaler)
            elif stage == "transform":
                if s["kind"] == "gaussian_score":
                    spec = fit_gaussian(frame, s.get("columns"))
                else:
                    cols = s.get("columns")
                    spec = TransformSpec(s["kind"], None if cols is None else tuple(cols),
                                         s.get("scale", 1.0), s.get("signed", False))
                fitted.append({"stage": "transform", "spec": spec.to_dict()})
                frame = transform(frame, spec)
            elif stage == "reduce":
                fitted.append({"stage": "reduce", "kind": s["kind"], "excess": s.get("excess", False)})
                frame = reduce_frame(frame, s["kind"], s.get("excess", False))
            else:
                raise ValidationError(f"unknown pipeline stage {stage!r}")
        self.fitted = fitted
        return self

    def apply(self, frame: AlignedFrame) -> AlignedFrame:
        if self.fitted is None:
            raise ValidationError("pipeline has not been fitted")
        for s in self.fitted:
            if s["stage"] == "scale":
                frame = apply_scaler(frame, FittedScaler.from_dict(s["scaler"]))
            elif s["stage"] == "transform":
                frame = transform(frame, TransformSpec.from_dict(s["spec"]))
            else:
                frame = reduce_frame(frame, s["kind"], s["excess"])
        return frame

    def fit_apply(self, frame: AlignedFrame) -> AlignedFrame:
        return self.fit(frame).apply(frame)

    def to_dict(self) -> dict:
        return {"stages": self.stages, "fitted": self.fitted}

    @classmethod
    def from_dict(cls, d: dict) -> "Pipeline":
        return cls(list(d.get("stages", [])), d.get("fitted"))
