"""One-step-ahead forecasters and the loss-threshold decision rule."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import AnomalyVerdict, WindowTensor
from ..errors import InsufficientRowsError, TrainingError, ValidationError
from .nets import Adam, Conv1DNet, LSTMNet, loss_and_grad, per_sample_loss

KINDS = ("conv1d", "recurrent")
DETECTOR_NAMES = {"conv1d": "conv_forecaster", "recurrent": "recurrent_forecaster"}
THRESHOLD_SIGMAS = 8.0


@dataclass
class ForecasterConfig:
    kind: str = "recurrent"
    time_steps: int = 74
    kernel_size: int = 32
    filters: int = 5
    activation: str = "relu"
    units: int = 32
    max_epochs: int = 100
    batch_size: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    min_delta: float = 1e-2
    patience: int = 3
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"forecaster kind must be one of {KINDS}, got {self.kind!r}")
        if not 1 <= self.max_epochs <= 100:
            raise ValidationError(f"max_epochs must be in [1, 100], got {self.max_epochs}")
        for name in ("time_steps", "kernel_size", "filters", "units", "batch_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.patience < 0 or self.min_delta < 0 or self.learning_rate <= 0:
            raise ValidationError("patience and min_delta must be >= 0, learning_rate > 0")

    @property
    def loss(self) -> str:
        return "mse" if self.kind == "conv1d" else "mae"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossThreshold:
    losses: np.ndarray
    mae: float
    sigma: float
    threshold: float

    def to_dict(self) -> dict:
        return {"mae": self.mae, "sigma": self.sigma, "threshold": self.threshold}


def compute_threshold(losses) -> LossThreshold:
    """Mean per-sample loss plus eight population standard deviations."""
    L = np.asarray(losses, dtype=np.float64).reshape(-1)
    if L.size == 0:
        raise ValidationError("threshold needs at least one loss")
    if not np.all(np.isfinite(L)):
        raise ValidationError("losses must be finite")
    if np.any(L < 0):
        raise ValidationError("losses must be non-negative")
    mae = float(np.mean(L))
    sigma = float(np.std(L))
    return LossThreshold(L.copy(), mae, sigma, mae + THRESHOLD_SIGMAS * sigma)


@dataclass
class ForecasterModel:
    config: ForecasterConfig
    n_streams: int
    columns: tuple[str, ...]
    net: object
    history: list = field(default_factory=list)
    epochs_run: int = 0
    stopped_early: bool = False
    optimizer: Adam | None = None

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def params(self) -> dict:
        return self.net.params

    def predict(self, data, batch: int = 512) -> np.ndarray:
        data = np.asarray(data, dtype=np.float64)
        out = np.empty((data.shape[0], self.n_streams))
        for s in range(0, data.shape[0], batch):
            out[s:s + batch] = self.net.forward(np.ascontiguousarray(data[s:s + batch]))[0]
        return out

    def sample_losses(self, windows: WindowTensor) -> np.ndarray:
        check_windows(self, windows)
        return per_sample_loss(self.predict(windows.data), windows.targets, self.config.loss)


def build_net(cfg: ForecasterConfig, n_streams: int, rng):
    if cfg.kind == "conv1d":
        return Conv1DNet(cfg.time_steps, n_streams, cfg.kernel_size, cfg.filters, cfg.activation, rng)
    return LSTMNet(cfg.time_steps, n_streams, cfg.units, rng)


def check_windows(model: ForecasterModel, windows: WindowTensor):
    if windows.time_steps != model.config.time_steps or windows.streams != model.n_streams:
        raise ValidationError(
            f"windows shaped (T={windows.time_steps}, D={windows.streams}) but model expects "
            f"(T={model.config.time_steps}, D={model.n_streams})")


class EarlyStopping:
    """Stop once the monitored loss has failed to beat the best value by
    ``min_delta`` for ``patience`` consecutive epochs."""

    def __init__(self, min_delta: float, patience: int):
        self.min_delta = min_delta
        self.patience = patience
        self.best = math.inf
        self.wait = 0
        self.last_improvement = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best - self.min_delta:
            self.best = loss
            self.wait = 0
            self.last_improvement = epoch
            return False
        self.wait += 1
        return self.wait >= self.patience


def forecaster_train(windows: WindowTensor, cfg: ForecasterConfig | str = "recurrent",
                     **overrides) -> tuple[ForecasterModel, LossThreshold]:
    """Train on ``windows`` and derive the anomaly threshold from training losses."""
    if isinstance(cfg, str):
        cfg = ForecasterConfig(kind=cfg, **overrides)
    elif overrides:
        cfg = ForecasterConfig(**{**cfg.to_dict(), **overrides})
    if windows.time_steps != cfg.time_steps:
        raise ValidationError(f"windows have T={windows.time_steps}, config expects {cfg.time_steps}")
    N, _, D = windows.shape
    if N < cfg.batch_size:
        raise InsufficientRowsError(f"need at least batch_size={cfg.batch_size} windows, got {N}")

    rng = np.random.default_rng(cfg.seed)
    net = build_net(cfg, D, rng)
    opt = Adam(net.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    stopper = EarlyStopping(cfg.min_delta, cfg.patience)
    model = ForecasterModel(cfg, D, tuple(windows.columns), net, optimizer=opt)
    data, targets = windows.data, windows.targets

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(N) if cfg.shuffle else np.arange(N)
        total = 0.0
        for s in range(0, N, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            # overflow is caught by the finiteness check below
            with np.errstate(over="ignore", invalid="ignore"):
                y, cache = net.forward(data[idx])
                loss, dy = loss_and_grad(y, targets[idx], cfg.loss)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss in epoch {epoch}", epoch=epoch)
            opt.step(net.params, net.backward(dy, cache))
            total += loss * len(idx)
        epoch_loss = total / N
        model.history.append(epoch_loss)
        model.epochs_run = epoch
        if stopper.update(epoch, epoch_loss):
            model.stopped_early = True
            break

    losses = model.sample_losses(windows)
    if not np.all(np.isfinite(losses)):
        raise TrainingError("non-finite per-sample loss after training", epoch=model.epochs_run)
    return model, compute_threshold(losses)


def forecaster_detect(model: ForecasterModel, threshold: LossThreshold, windows: WindowTensor,
                      config_id: str = "") -> list[AnomalyVerdict]:
    """One verdict per window, stamped with the window's target timestamp.

    A window is anomalous when its loss is strictly greater than the threshold.
    """
    losses = model.sample_losses(windows)
    detector = DETECTOR_NAMES[model.kind]
    streams = tuple(windows.columns)
    taxonomy = "combined" if len(streams) >= 2 else "contextual"
    thr = threshold.threshold
    return [AnomalyVerdict(int(ts), streams, float(L), thr, bool(L > thr), taxonomy, detector, config_id)
            for ts, L in zip(windows.target_timestamps, losses)]
