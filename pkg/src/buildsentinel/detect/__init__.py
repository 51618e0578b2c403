"""Detector families: isolation forest, one-class SVM and two forecasters."""

from __future__ import annotations

from ..core import AlignedFrame, AnomalyVerdict
from .forecaster import (EarlyStopping, ForecasterConfig, ForecasterModel, LossThreshold,
                         compute_threshold, forecaster_detect, forecaster_train)
from .iforest import IsolationForestModel, average_path_length, if_fit, if_score
from .io import load_model, save_model
from .ocsvm import OcsvmModel, ocsvm_fit, ocsvm_predict


def if_detect(model: IsolationForestModel, frame: AlignedFrame, config_id: str = "") -> list[AnomalyVerdict]:
    scores = model.score(frame.values)
    return [AnomalyVerdict(int(ts), frame.columns, float(s), model.threshold, bool(s > model.threshold),
                           "point", "isolation_forest", config_id)
            for ts, s in zip(frame.grid, scores)]


def ocsvm_detect(model: OcsvmModel, frame: AlignedFrame, config_id: str = "") -> list[AnomalyVerdict]:
    """Score is the negated decision value, so ``score > 0`` is the -1 class."""
    f = model.decision_function(frame.values)
    return [AnomalyVerdict(int(ts), frame.columns, float(-v), 0.0, bool(v < 0.0), "point", "ocsvm",
                           config_id)
            for ts, v in zip(frame.grid, f)]


__all__ = [
    "EarlyStopping", "ForecasterConfig", "ForecasterModel", "IsolationForestModel", "LossThreshold",
    "OcsvmModel", "average_path_length", "compute_threshold", "forecaster_detect", "forecaster_train",
    "if_detect", "if_fit", "if_score", "load_model", "ocsvm_detect", "ocsvm_fit", "ocsvm_predict",
    "save_model",
]
