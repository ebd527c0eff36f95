"""Stage glue shared by the CLI and the benchmark: records -> vectors -> segments -> model."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Mapping, Sequence

from .alphabet import ALPHABET, DEFAULT_REGISTRY, HEALTH_KINDS, DeviceRegistry
from .detector import DetectorConfig, calibrate_threshold, training_sequences
from .discretizer import DeviceProfile, fit_profile
from .errors import InvalidInputError
from .evaluation import split
from .events import (LogRecord, ObservationVector, SensorEvent, SequenceSegment, coalesce, drop_repeats,
                     merge_logs, resolve_records, segment)
from .hmm import TrainConfig, TrainResult, train_baum_welch


@dataclass(frozen=True)
class EventSettings:
    coalesce_window_s: float = 30.0
    gap_threshold_min: float = 45.0
    max_len: int = 24
    heartbeat_tolerance_s: float = 45.0
    max_clock_skew_s: float = 60.0

    def __post_init__(self):
        if self.coalesce_window_s < 0 or self.heartbeat_tolerance_s < 0 or self.max_clock_skew_s < 0:
            raise InvalidInputError("event time settings must be non-negative")
        if self.gap_threshold_min <= 0 or self.max_len < 1:
            raise InvalidInputError("gap_threshold_min and max_len must be positive")

    @property
    def coalesce_window(self) -> timedelta:
        return timedelta(seconds=self.coalesce_window_s)

    @property
    def gap_threshold(self) -> timedelta:
        return timedelta(minutes=self.gap_threshold_min)

    @property
    def heartbeat_tolerance(self) -> timedelta:
        return timedelta(seconds=self.heartbeat_tolerance_s)

    @property
    def max_skew(self) -> timedelta:
        return timedelta(seconds=self.max_clock_skew_s)


def fit_profiles(
    records: Sequence[LogRecord],
    registry: DeviceRegistry = DEFAULT_REGISTRY,
    before: datetime | None = None,
) -> dict[str, DeviceProfile]:
    """One profile per health-device kind, from readings strictly before ``before``."""
    readings: dict[str, list[float]] = {}
    for rec in records:
        if rec.reading is None or (before is not None and rec.ts >= before):
            continue
        kind = registry.kind(rec.device)
        if kind in HEALTH_KINDS:
            readings.setdefault(kind, []).append(rec.reading)
    return {kind: fit_profile(kind, vals) for kind, vals in sorted(readings.items())}


def build_timeline(
    behavior: Sequence[LogRecord],
    presence: Sequence[LogRecord],
    profiles: Mapping[str, DeviceProfile],
    registry: DeviceRegistry = DEFAULT_REGISTRY,
    settings: EventSettings = EventSettings(),
) -> list[SensorEvent]:
    return merge_logs(
        resolve_records(behavior, registry, profiles),
        resolve_records(presence, registry, profiles),
        registry,
        settings.max_skew,
    )


def vectors_from_timeline(timeline: Sequence[SensorEvent], settings: EventSettings = EventSettings()) -> list[ObservationVector]:
    return coalesce(drop_repeats(timeline, settings.heartbeat_tolerance), settings.coalesce_window)


def build_segments(vectors: Sequence[ObservationVector], settings: EventSettings = EventSettings()) -> list[SequenceSegment]:
    return segment(vectors, settings.gap_threshold, settings.max_len)


def records_between(records: Sequence[LogRecord], start: datetime | None = None, end: datetime | None = None) -> list[LogRecord]:
    return [r for r in records if (start is None or r.ts >= start) and (end is None or r.ts < end)]


@dataclass
class PreparedSplit:
    profiles: dict[str, DeviceProfile]
    train_segments: list[SequenceSegment]
    test_segments: list[SequenceSegment]
    test_start: datetime

    @property
    def n_segments(self) -> int:
        return len(self.train_segments) + len(self.test_segments)


def prepare_split(
    behavior: Sequence[LogRecord],
    presence: Sequence[LogRecord],
    fraction: float,
    registry: DeviceRegistry = DEFAULT_REGISTRY,
    settings: EventSettings = EventSettings(),
) -> PreparedSplit:
    """Chronological split with profiles fitted on the training period only.

    Segment boundaries depend on timing alone, so a first pass (with profiles
    fitted on everything, used for nothing else) locates the cut; the real
    profiles are then fitted on readings before the cut.
    """
    provisional = fit_profiles([*behavior, *presence], registry)
    vectors = vectors_from_timeline(build_timeline(behavior, presence, provisional, registry, settings), settings)
    _, test = split(build_segments(vectors, settings), fraction)
    cut = test[0].start

    profiles = fit_profiles([*behavior, *presence], registry, before=cut)
    vectors = vectors_from_timeline(build_timeline(behavior, presence, profiles, registry, settings), settings)
    segments = build_segments(vectors, settings)
    train = [s for s in segments if s.start < cut]
    test = [s for s in segments if s.start >= cut]
    return PreparedSplit(profiles, train, test, cut)


def train_on_segments(
    segments: Sequence[SequenceSegment],
    n_states: int,
    train_cfg: TrainConfig,
    det_cfg: DetectorConfig,
) -> TrainResult:
    """Baum-Welch over the expanded length-m windows of the training stream."""
    seqs = training_sequences(segments, det_cfg)
    if not seqs:
        raise InvalidInputError("training stream is shorter than one window")
    return train_baum_welch(seqs, n_states, len(ALPHABET), train_cfg)


def train_and_calibrate(segments, n_states, train_cfg, det_cfg):
    result = train_on_segments(segments, n_states, train_cfg, det_cfg)
    return result, calibrate_threshold(result.model, segments, det_cfg)
