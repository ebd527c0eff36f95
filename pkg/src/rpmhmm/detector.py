"""Threshold calibration and sliding-window anomaly detection."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Iterable, Sequence

import numpy as np

from .alphabet import ALPHABET
from .errors import CalibrationError, InvalidInputError
from .events import (DEFAULT_EXPANSION_CAP, ObservationVector, SequenceSegment, expand, format_ts,
                     parse_ts, sliding_windows)
from .hmm import HmmModel, sequence_log_likelihoods

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectorConfig:
    window_len: int = 5
    threshold_margin: float = 0.0
    expansion_cap: int = DEFAULT_EXPANSION_CAP

    def __post_init__(self):
        if self.window_len < 2:
            raise InvalidInputError("window_len must be at least 2")
        if self.threshold_margin < 0:
            raise InvalidInputError("threshold_margin must be non-negative")
        if self.expansion_cap < 1:
            raise InvalidInputError("expansion_cap must be positive")


@dataclass(frozen=True)
class Threshold:
    cutoff: float
    min_logprob: float
    max_logprob: float
    n_windows: int
    n_sequences: int
    window_len: int
    margin: float = 0.0
    alphabet_tag: str = ALPHABET.tag

    def __post_init__(self):
        if self.cutoff > self.max_logprob:
            raise CalibrationError("cutoff exceeds the largest training log-probability")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Threshold":
        try:
            doc = json.loads(text)
            return cls(**doc)
        except (json.JSONDecodeError, TypeError) as exc:
            raise CalibrationError(f"malformed threshold document: {exc}") from None


@dataclass(frozen=True)
class AnomalyAlert:
    start: datetime
    end: datetime
    window_index: int
    sequence: tuple[int, ...]
    logprob: float
    cutoff: float
    stream: str = ""

    def __post_init__(self):
        if not self.logprob < self.cutoff:
            raise InvalidInputError("an alert's log-probability must be below its cutoff")

    def to_json(self) -> str:
        return json.dumps({
            "stream": self.stream,
            "window_index": self.window_index,
            "window_start": format_ts(self.start),
            "window_end": format_ts(self.end),
            "logprob": self.logprob,
            "threshold": self.cutoff,
            "sequence": ALPHABET.names_of(self.sequence),
        })

    @classmethod
    def from_json(cls, text: str) -> "AnomalyAlert":
        doc = json.loads(text)
        return cls(
            start=parse_ts(doc["window_start"]),
            end=parse_ts(doc["window_end"]),
            window_index=int(doc["window_index"]),
            sequence=tuple(ALPHABET.code(n) for n in doc["sequence"]),
            logprob=float(doc["logprob"]),
            cutoff=float(doc["threshold"]),
            stream=doc.get("stream", ""),
        )


@dataclass(frozen=True)
class WindowScore:
    index: int
    start: datetime
    end: datetime
    sequence: tuple[int, ...]  # the minimum-scoring expansion
    logprob: float
    n_sequences: int


def _score_expansions(model: HmmModel, windows, cap: int):
    """Expand every window and score all expansions in one batch.

    Returns a list (per window) of ``(sequences, logprobs)``.
    """
    expanded = [expand(w, cap) for w in windows]
    if not expanded:
        return []
    flat = np.array([s for seqs in expanded for s in seqs], dtype=np.int64)
    scores = sequence_log_likelihoods(model, flat)
    out, pos = [], 0
    for seqs in expanded:
        out.append((seqs, scores[pos:pos + len(seqs)]))
        pos += len(seqs)
    return out


def score_window(model: HmmModel, window: Sequence[ObservationVector], cfg: DetectorConfig) -> list[tuple[tuple[int, ...], float]]:
    """Score every expansion of one window, in expansion order."""
    if len(window) != cfg.window_len:
        raise InvalidInputError(f"window has {len(window)} vectors, expected {cfg.window_len}")
    [(seqs, scores)] = _score_expansions(model, [window], cfg.expansion_cap)
    return [(s, float(v)) for s, v in zip(seqs, scores)]


def window_scores(model: HmmModel, vectors: Sequence[ObservationVector], cfg: DetectorConfig) -> list[WindowScore]:
    """Minimum expansion score of every length-m window of the stream."""
    windows = sliding_windows(vectors, cfg.window_len)
    results = []
    for i, (w, (seqs, scores)) in enumerate(zip(windows, _score_expansions(model, windows, cfg.expansion_cap))):
        j = int(np.argmin(scores))
        results.append(WindowScore(i, w[0].ts, w[-1].ts, seqs[j], float(scores[j]), len(seqs)))
    return results


def training_stream(segments: Iterable[SequenceSegment]) -> list[ObservationVector]:
    return [v for seg in segments for v in seg.vectors]


def training_sequences(segments: Sequence[SequenceSegment], cfg: DetectorConfig) -> list[tuple[int, ...]]:
    """Expanded length-m windows of the training stream (the HMM's training set)."""
    stream = training_stream(segments)
    return [s for w in sliding_windows(stream, cfg.window_len) for s in expand(w, cfg.expansion_cap)]


def calibrate_threshold(model: HmmModel, training_segments: Sequence[SequenceSegment], cfg: DetectorConfig) -> Threshold:
    """Cutoff = lowest log-probability among the expanded training windows, minus the margin.

    The segments are read as one contiguous stream, matching how
    :func:`detect_stream` slides over live data.
    """
    if not training_segments:
        raise CalibrationError("no training segments to calibrate on")
    stream = training_stream(training_segments)
    windows = sliding_windows(stream, cfg.window_len)
    if not windows:
        raise CalibrationError(
            f"training stream has {len(stream)} vectors, fewer than window_len={cfg.window_len}"
        )
    scored = _score_expansions(model, windows, cfg.expansion_cap)
    all_scores = np.concatenate([s for _, s in scored])
    lo, hi = float(all_scores.min()), float(all_scores.max())
    return Threshold(
        cutoff=lo - cfg.threshold_margin,
        min_logprob=lo,
        max_logprob=hi,
        n_windows=len(windows),
        n_sequences=int(all_scores.size),
        window_len=cfg.window_len,
        margin=cfg.threshold_margin,
    )


def detect_stream(
    model: HmmModel,
    threshold: Threshold,
    vectors: Sequence[ObservationVector],
    cfg: DetectorConfig,
    stream: str = "",
) -> list[AnomalyAlert]:
    """Slide a length-m window one vector at a time; a window alerts when any
    expansion scores strictly below the cutoff.  Each alerting window yields
    one alert carrying its lowest-scoring sequence."""
    if threshold.window_len != cfg.window_len:
        raise InvalidInputError(
            f"threshold was calibrated for window_len={threshold.window_len}, config uses {cfg.window_len}"
        )
    if len(vectors) < cfg.window_len:
        log.warning("stream %r has %d vectors, fewer than window_len=%d; nothing scored",
                    stream, len(vectors), cfg.window_len)
        return []
    alerts = []
    for ws in window_scores(model, vectors, cfg):
        if ws.logprob < threshold.cutoff:
            alerts.append(AnomalyAlert(ws.start, ws.end, ws.index, ws.sequence, ws.logprob, threshold.cutoff, stream))
    return alerts


@dataclass(frozen=True)
class AlertSpan:
    start: datetime
    end: datetime
    first_window: int
    last_window: int
    n_windows: int
    min_logprob: float
    sequence: tuple[int, ...]


def merge_alert_spans(alerts: Sequence[AnomalyAlert], window_len: int) -> list[AlertSpan]:
    """Merge consecutive alerting windows that share at least one vector."""
    spans: list[AlertSpan] = []
    group: list[AnomalyAlert] = []

    def flush():
        if group:
            worst = min(group, key=lambda a: a.logprob)
            spans.append(AlertSpan(group[0].start, group[-1].end, group[0].window_index,
                                   group[-1].window_index, len(group), worst.logprob, worst.sequence))

    for alert in sorted(alerts, key=lambda a: (a.stream, a.window_index)):
        if group and (alert.stream != group[-1].stream or alert.window_index - group[-1].window_index >= window_len):
            flush()
            group = []
        group.append(alert)
    flush()
    return spans
