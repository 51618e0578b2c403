"""Anomaly detection for multi-sensor building telemetry."""

from .core import (AlignedFrame, AnomalyVerdict, ConditionMask, SensorReading, StreamEntry,
                   StreamInventory, WindowTensor, config_hash, frame_from_csv, frame_to_csv,
                   load_inventory, reference_inventory)
from .errors import (ConvergenceError, DegenerateError, EmptyFrameError, InsufficientRowsError,
                     ParseError, SentinelError, TrainingError, ValidationError)

__version__ = "0.1.0"

__all__ = [
    "AlignedFrame", "AnomalyVerdict", "ConditionMask", "ConvergenceError", "DegenerateError",
    "EmptyFrameError", "InsufficientRowsError", "ParseError", "SensorReading", "SentinelError",
    "StreamEntry", "StreamInventory", "TrainingError", "ValidationError", "WindowTensor",
    "config_hash", "frame_from_csv", "frame_to_csv", "load_inventory", "reference_inventory",
]
