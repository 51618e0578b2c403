"""Model files: a ``.npz`` container with a JSON header plus raw arrays.

The header records the detector kind, its configuration, the fitted
preprocessing pipeline, the threshold and any provenance the caller adds.
Arrays are stored as float64/int64 so reloaded models score bit-for-bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..preprocess import Pipeline
from .forecaster import ForecasterConfig, ForecasterModel, LossThreshold, build_net, compute_threshold
from .iforest import IsolationForestModel, IsolationTree
from .ocsvm import OcsvmModel

FORMAT_VERSION = 1
TREE_FIELDS = ("feature", "threshold", "left", "right", "size", "depth")


def detector_name(model) -> str:
    if isinstance(model, IsolationForestModel):
        return "isolation_forest"
    if isinstance(model, OcsvmModel):
        return "ocsvm"
    if isinstance(model, ForecasterModel):
        return "conv_forecaster" if model.kind == "conv1d" else "recurrent_forecaster"
    raise ValidationError(f"not a detector model: {type(model).__name__}")


def save_model(path, model, threshold: LossThreshold | None = None,
               pipeline: Pipeline | None = None, meta: dict | None = None) -> None:
    header = {"format": FORMAT_VERSION, "detector": detector_name(model),
              "pipeline": None if pipeline is None else pipeline.to_dict(), "meta": meta or {}}
    arrays: dict[str, np.ndarray] = {}
    if isinstance(model, IsolationForestModel):
        header["config"] = {"n_features": model.n_features, "subsample_size": model.subsample_size,
                            "tree_count": model.tree_count, "seed": model.seed,
                            "threshold": model.threshold}
        sizes = [len(t.feature) for t in model.trees]
        arrays["tree_offsets"] = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        for f in TREE_FIELDS:
            arrays[f"tree_{f}"] = np.concatenate([getattr(t, f) for t in model.trees])
    elif isinstance(model, OcsvmModel):
        header["config"] = {"rho": model.rho, "gamma": model.gamma, "nu": model.nu,
                            "n_train": model.n_train, "kkt_residual": model.kkt_residual,
                            "iterations": model.iterations}
        arrays["support_vectors"] = model.support_vectors
        arrays["alpha"] = model.alpha
    else:
        header["config"] = model.config.to_dict()
        header["n_streams"] = model.n_streams
        header["columns"] = list(model.columns)
        header["history"] = list(model.history)
        header["epochs_run"] = model.epochs_run
        header["stopped_early"] = model.stopped_early
        for k, v in model.params.items():
            arrays[f"param_{k}"] = v
    if threshold is not None:
        header["threshold"] = threshold.to_dict()
        arrays["train_losses"] = threshold.losses
    arrays["header"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path):
    """Returns ``(model, threshold_or_None, pipeline_or_None, header)``."""
    path = Path(path)
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        arrays = {k: z[k] for k in z.files if k != "header"}
    det = header["detector"]
    cfg = header["config"]
    if det == "isolation_forest":
        off = arrays["tree_offsets"]
        trees = []
        for a, b in zip(off[:-1], off[1:]):
            trees.append(IsolationTree(*(arrays[f"tree_{f}"][a:b] for f in TREE_FIELDS)))
        model = IsolationForestModel(trees, cfg["n_features"], cfg["subsample_size"],
                                     cfg["tree_count"], cfg["seed"], cfg["threshold"])
    elif det == "ocsvm":
        model = OcsvmModel(arrays["support_vectors"], arrays["alpha"], cfg["rho"], cfg["gamma"],
                           cfg["nu"], cfg["n_train"], cfg["kkt_residual"], cfg["iterations"])
    elif det in ("conv_forecaster", "recurrent_forecaster"):
        fc = ForecasterConfig(**cfg)
        net = build_net(fc, header["n_streams"], 0)
        for k in net.params:
            net.params[k] = arrays[f"param_{k}"]
        model = ForecasterModel(fc, header["n_streams"], tuple(header["columns"]), net,
                                list(header["history"]), header["epochs_run"], header["stopped_early"])
    else:
        raise ValidationError(f"unknown detector {det!r} in {path}")
    threshold = compute_threshold(arrays["train_losses"]) if "train_losses" in arrays else None
    pipeline = Pipeline.from_dict(header["pipeline"]) if header.get("pipeline") else None
    return model, threshold, pipeline, header
