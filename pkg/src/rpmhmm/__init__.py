"""Hidden-Markov-model anomaly detection over smart-home and medical-device event logs."""

from .alphabet import ALPHABET, DEFAULT_REGISTRY, DeviceRegistry, SymbolAlphabet
from .detector import AnomalyAlert, DetectorConfig, Threshold, calibrate_threshold, detect_stream, score_window
from .discretizer import DeviceProfile, discretize, fit_profile
from .errors import RpmHmmError
from .evaluation import ConfusionMatrix, Interval, evaluate, split
from .events import (LogRecord, ObservationVector, SensorEvent, SequenceSegment, coalesce, expand, merge_logs,
                     segment)
from .hmm import (HmmModel, TrainConfig, TrainResult, deserialize_model, forward_log_likelihood, serialize_model,
                  train_baum_welch)

__version__ = "0.1.0"

__all__ = [
    "ALPHABET", "DEFAULT_REGISTRY", "DeviceRegistry", "SymbolAlphabet",
    "AnomalyAlert", "DetectorConfig", "Threshold", "calibrate_threshold", "detect_stream", "score_window",
    "DeviceProfile", "discretize", "fit_profile", "RpmHmmError",
    "ConfusionMatrix", "Interval", "evaluate", "split",
    "LogRecord", "ObservationVector", "SensorEvent", "SequenceSegment", "coalesce", "expand", "merge_logs", "segment",
    "HmmModel", "TrainConfig", "TrainResult", "deserialize_model", "forward_log_likelihood", "serialize_model",
    "train_baum_welch",
]
