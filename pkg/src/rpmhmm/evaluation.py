"""Chronological splitting, confusion matrices and report emitters."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence, TypeVar

from .alphabet import ALPHABET
from .errors import InvalidInputError, ProtocolError
from .events import format_ts, parse_ts

T = TypeVar("T")


def split(segments: Sequence[T], fraction: float) -> tuple[list[T], list[T]]:
    """Chronological split: the first ``fraction`` of segments train, the rest test."""
    if not 0.0 < fraction < 1.0:
        raise InvalidInputError(f"split fraction must lie in (0, 1), got {fraction}")
    n = len(segments)
    if n < 2:
        raise InvalidInputError("need at least 2 segments to split")
    n_train = min(max(round(fraction * n), 1), n - 1)
    return list(segments[:n_train]), list(segments[n_train:])


@dataclass(frozen=True)
class Interval:
    """A labelled or evaluated stretch of one stream (closed interval)."""

    stream: str
    start: datetime
    end: datetime
    scenario: str = ""

    def __post_init__(self):
        if self.end < self.start:
            raise InvalidInputError("interval end precedes its start")

    def overlaps(self, other) -> bool:
        return self.stream == other.stream and self.start <= other.end and other.start <= self.end

    def to_json(self) -> str:
        doc = {"stream": self.stream, "start": format_ts(self.start), "end": format_ts(self.end)}
        if self.scenario:
            doc["scenario"] = self.scenario
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "Interval":
        doc = json.loads(text)
        if not isinstance(doc, dict) or not {"start", "end"} <= doc.keys():
            raise InvalidInputError("interval record needs 'start' and 'end'")
        unknown = set(doc) - {"stream", "start", "end", "scenario"}
        if unknown:
            raise InvalidInputError(f"unknown interval field(s): {', '.join(sorted(unknown))}")
        return cls(str(doc.get("stream", "")), parse_ts(doc["start"]), parse_ts(doc["end"]),
                   str(doc.get("scenario", "")))


def read_intervals(path: str | Path) -> list[Interval]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(Interval.from_json(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise ProtocolError(f"{path}:{lineno}: {exc}") from None
    return out


def write_jsonl(items: Iterable, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for item in items:
            fh.write(item.to_json() + "\n")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise InvalidInputError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def precision(self) -> float | None:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else None

    @property
    def recall(self) -> float | None:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    @property
    def fpr(self) -> float | None:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else None

    def metrics(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn, "total": self.total,
            "accuracy": self.accuracy, "precision": self.precision,
            "recall": self.recall, "fpr": self.fpr,
        }


@dataclass(frozen=True)
class WindowOutcome:
    window: Interval
    labeled: bool
    alerted: bool

    @property
    def kind(self) -> str:
        return {(True, True): "TP", (False, True): "FP", (True, False): "FN", (False, False): "TN"}[
            (self.labeled, self.alerted)
        ]


def evaluate(alerts: Sequence, labels: Sequence[Interval], windows: Sequence[Interval]) -> tuple[ConfusionMatrix, list[WindowOutcome]]:
    """Score evaluated windows against ground truth.

    ``alerts`` may be any objects with ``stream``, ``start`` and ``end``.  A
    window is labelled if a label interval intersects it and alerted if an
    alert window intersects it.
    """
    if not windows:
        raise ProtocolError("no evaluated windows")
    keys = [(w.stream, w.start, w.end) for w in windows]
    if len(set(keys)) != len(keys):
        raise ProtocolError("a window was evaluated more than once")
    for lab in labels:
        if not any(lab.overlaps(w) for w in windows):
            raise ProtocolError(f"label {lab.stream}:{format_ts(lab.start)} matches no evaluated window")
    ordered = sorted(windows, key=lambda w: (w.stream, w.start, w.end))
    outcomes = []
    for w in ordered:
        labeled = any(lab.overlaps(w) for lab in labels)
        alerted = any(a.stream == w.stream and a.start <= w.end and w.start <= a.end for a in alerts)
        outcomes.append(WindowOutcome(w, labeled, alerted))
    counts = {k: 0 for k in ("TP", "FP", "FN", "TN")}
    for o in outcomes:
        counts[o.kind] += 1
    return ConfusionMatrix(counts["TP"], counts["FP"], counts["FN"], counts["TN"]), outcomes


def confusion_table(cm: ConfusionMatrix) -> str:
    """Plain-text 2x2 table with margins."""
    rows = [
        ("", "Actual: Yes", "Actual: No", "Total"),
        ("Predicted: Yes", f"TP={cm.tp}", f"FP={cm.fp}", str(cm.tp + cm.fp)),
        ("Predicted: No", f"FN={cm.fn}", f"TN={cm.tn}", str(cm.fn + cm.tn)),
        ("Total", str(cm.tp + cm.fn), str(cm.fp + cm.tn), f"N={cm.total}"),
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for r in rows:
        lines.append(" | ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip())
    lines.insert(1, "-+-".join("-" * w for w in widths))
    lines.append("")
    lines.append(f"accuracy  {cm.accuracy:.4f}")
    for name in ("precision", "recall", "fpr"):
        value = getattr(cm, name)
        lines.append(f"{name:<9} {'n/a' if value is None else f'{value:.4f}'}")
    return "\n".join(lines) + "\n"


def write_metrics(cm: ConfusionMatrix, path: str | Path, extra: dict | None = None) -> None:
    doc = cm.metrics()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_window_scores(scores: Iterable, cutoff: float, path: str | Path, stream: str = "") -> None:
    """Per-window minimum log-probabilities as CSV, for external plotting."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["stream", "window_index", "window_start", "window_end", "min_logprob",
                         "threshold", "alert", "n_sequences", "min_sequence"])
        for ws in scores:
            writer.writerow([stream, ws.index, format_ts(ws.start), format_ts(ws.end), repr(ws.logprob),
                             repr(cutoff), int(ws.logprob < cutoff), ws.n_sequences,
                             " ".join(ALPHABET.names_of(ws.sequence))])
