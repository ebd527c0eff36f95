"""Event logs, observation vectors and sequence expansion.

Log files are line-delimited JSON.  Each line carries ``ts`` (ISO-8601 UTC,
whole seconds), ``device`` and either ``status`` (a symbol name) or, for
health devices, a numeric ``reading`` that is banded by a DeviceProfile.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .alphabet import ALPHABET, DEFAULT_REGISTRY, HEALTH_KINDS, SYMBOL_KIND, DeviceRegistry
from .discretizer import DeviceProfile, discretize
from .errors import ExpansionOverflowError, IngestionError, InvalidInputError, InvalidReadingError

log = logging.getLogger(__name__)

LOG_FIELDS = ("ts", "device", "status", "reading")
DEFAULT_EXPANSION_CAP = 4096


def parse_ts(text: str) -> datetime:
    if not isinstance(text, str):
        raise IngestionError(f"timestamp must be a string, got {text!r}")
    try:
        ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise IngestionError(f"invalid ISO-8601 timestamp {text!r}") from None
    if ts.tzinfo is None:
        raise IngestionError(f"timestamp {text!r} has no UTC offset")
    if ts.microsecond:
        raise IngestionError(f"timestamp {text!r} has sub-second precision")
    return ts.astimezone(timezone.utc)


def format_ts(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class LogRecord:
    """One raw line of an event or presence log."""

    ts: datetime
    device: str
    status: str | None = None
    reading: float | None = None

    def to_json(self) -> str:
        doc = {"ts": format_ts(self.ts), "device": self.device}
        if self.status is not None:
            doc["status"] = self.status
        if self.reading is not None:
            doc["reading"] = self.reading
        return json.dumps(doc)


def parse_log_lines(lines: Iterable[str], source: str = "<log>") -> list[LogRecord]:
    records = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestionError(f"{where}: not valid JSON ({exc.msg})") from None
        if not isinstance(doc, dict):
            raise IngestionError(f"{where}: record must be a JSON object")
        unknown = set(doc) - set(LOG_FIELDS)
        if unknown:
            raise IngestionError(f"{where}: unknown field(s) {', '.join(sorted(unknown))}")
        for key in ("ts", "device"):
            if key not in doc:
                raise IngestionError(f"{where}: missing field {key!r}")
        if not isinstance(doc["device"], str) or not doc["device"]:
            raise IngestionError(f"{where}: device must be a non-empty string")
        status, reading = doc.get("status"), doc.get("reading")
        if (status is None) == (reading is None):
            raise IngestionError(f"{where}: exactly one of 'status' or 'reading' is required")
        if status is not None and not isinstance(status, str):
            raise IngestionError(f"{where}: status must be a string")
        if reading is not None:
            if isinstance(reading, bool) or not isinstance(reading, (int, float)) or not math.isfinite(reading):
                raise IngestionError(f"{where}: reading must be a finite number")
            reading = float(reading)
        try:
            ts = parse_ts(doc["ts"])
        except IngestionError as exc:
            raise IngestionError(f"{where}: {exc}") from None
        records.append(LogRecord(ts, doc["device"], status, reading))
    return records


def read_log(path: str | Path) -> list[LogRecord]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_log_lines(fh, source=str(path))


def write_log(records: Iterable[LogRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


@dataclass(frozen=True, order=True)
class SensorEvent:
    ts: datetime
    device: str
    symbol: int

    @property
    def name(self) -> str:
        return ALPHABET.name(self.symbol)


def resolve_records(
    records: Iterable[LogRecord],
    registry: DeviceRegistry = DEFAULT_REGISTRY,
    profiles: Mapping[str, DeviceProfile] | None = None,
) -> list[SensorEvent]:
    """Turn raw records into coded events, banding readings by device kind."""
    profiles = profiles or {}
    events = []
    for rec in records:
        kind = registry.kind(rec.device)
        if rec.reading is not None:
            if kind not in HEALTH_KINDS:
                raise IngestionError(f"device {rec.device!r} ({kind}) does not produce readings")
            if kind not in profiles:
                raise IngestionError(f"no profile bound for {kind} readings")
            try:
                status = discretize(profiles[kind], rec.reading)
            except InvalidReadingError as exc:
                raise IngestionError(f"{rec.device} at {format_ts(rec.ts)}: {exc}") from None
        else:
            status = rec.status
        events.append(SensorEvent(rec.ts, rec.device, registry.check_status(rec.device, status)))
    return events


def _check_clock(events: Sequence[SensorEvent], label: str, max_skew: timedelta) -> None:
    for prev, cur in zip(events, events[1:]):
        if cur.ts < prev.ts - max_skew:
            log.warning(
                "%s log clock went backwards by %s at %s (device %s); event reordered",
                label, prev.ts - cur.ts, format_ts(cur.ts), cur.device,
            )


def merge_logs(
    behavior_events: Sequence[SensorEvent],
    presence_events: Sequence[SensorEvent],
    registry: DeviceRegistry = DEFAULT_REGISTRY,
    max_skew: timedelta = timedelta(seconds=60),
) -> list[SensorEvent]:
    """Merge both logs into one timestamp-ordered timeline.

    Ties are broken behavioural-before-presence, then by device and symbol,
    so input order never leaks into the result.  Out-of-order input beyond
    ``max_skew`` is logged as a warning and fixed by the sort.
    """
    tagged = []
    for rank, (label, events) in enumerate((("behavior", behavior_events), ("presence", presence_events))):
        for ev in events:
            if ev.device not in registry:
                raise IngestionError(f"unregistered device {ev.device!r} in {label} log")
        _check_clock(events, label, max_skew)
        tagged.extend((ev.ts, rank, ev.device, ev.symbol, ev) for ev in events)
    tagged.sort(key=lambda t: t[:4])
    return [t[4] for t in tagged]


def drop_repeats(timeline: Sequence[SensorEvent], tolerance: timedelta = timedelta(seconds=45)) -> list[SensorEvent]:
    """Remove heartbeat repeats: a device re-reporting its current status
    within ``tolerance`` of its previous report is dropped."""
    last: dict[str, SensorEvent] = {}
    kept = []
    for ev in timeline:
        prev = last.get(ev.device)
        last[ev.device] = ev
        if prev is not None and prev.symbol == ev.symbol and ev.ts - prev.ts <= tolerance:
            continue
        kept.append(ev)
    return kept


@dataclass(frozen=True)
class ObservationVector:
    """Symbols observed together at one hidden-state step (sorted codes)."""

    index: int
    ts: datetime
    symbols: tuple[int, ...]
    events: tuple[SensorEvent, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if not self.symbols:
            raise InvalidInputError("observation vector must hold at least one symbol")
        if self.events:
            owners = [e.device for e in self.events]
        else:
            owners = [SYMBOL_KIND[ALPHABET.name(s)] for s in self.symbols]
        if len(set(owners)) != len(owners):
            raise InvalidInputError("observation vector holds two symbols for one device")

    @property
    def names(self) -> list[str]:
        return ALPHABET.names_of(self.symbols)


def coalesce(timeline: Sequence[SensorEvent], window: timedelta = timedelta(seconds=30)) -> list[ObservationVector]:
    """Group events within ``window`` of a group's first event into one vector.

    Within a group a later event from the same device replaces the earlier one.
    """
    vectors: list[ObservationVector] = []
    group: dict[str, SensorEvent] = {}
    start = None

    def flush():
        if group:
            evs = tuple(sorted(group.values(), key=lambda e: e.symbol))
            vectors.append(ObservationVector(len(vectors), start, tuple(e.symbol for e in evs), evs))

    for ev in timeline:
        if start is None or ev.ts - start > window:
            flush()
            group = {}
            start = ev.ts
        group.pop(ev.device, None)
        group[ev.device] = ev
    flush()
    return vectors


def flatten(vectors: Iterable[ObservationVector]) -> list[SensorEvent]:
    """Events of each vector, re-stamped at the vector's timestamp."""
    out = []
    for vec in vectors:
        if vec.events:
            out.extend(SensorEvent(vec.ts, e.device, e.symbol) for e in vec.events)
        else:
            out.extend(
                SensorEvent(vec.ts, DEFAULT_REGISTRY.device_for_kind(SYMBOL_KIND[ALPHABET.name(s)]), s)
                for s in vec.symbols
            )
    return out


@dataclass(frozen=True)
class SequenceSegment:
    vectors: tuple[ObservationVector, ...]

    def __post_init__(self):
        if not self.vectors:
            raise InvalidInputError("segment must contain at least one vector")
        for a, b in zip(self.vectors, self.vectors[1:]):
            if not a.ts < b.ts:
                raise InvalidInputError("segment timestamps must be strictly increasing")

    @property
    def start(self) -> datetime:
        return self.vectors[0].ts

    @property
    def end(self) -> datetime:
        return self.vectors[-1].ts

    @property
    def day(self) -> date:
        return self.start.date()

    def __len__(self) -> int:
        return len(self.vectors)


def segment(
    vectors: Sequence[ObservationVector],
    gap_threshold: timedelta = timedelta(minutes=45),
    max_len: int = 24,
) -> list[SequenceSegment]:
    if max_len < 1:
        raise InvalidInputError("max_len must be positive")
    segments = []
    current: list[ObservationVector] = []
    for vec in vectors:
        if current and (vec.ts - current[-1].ts > gap_threshold or len(current) >= max_len):
            segments.append(SequenceSegment(tuple(current)))
            current = []
        current.append(vec)
    if current:
        segments.append(SequenceSegment(tuple(current)))
    return segments


def sliding_windows(vectors: Sequence[ObservationVector], m: int) -> list[Sequence[ObservationVector]]:
    """All length-m runs of consecutive vectors, in stream order."""
    return [vectors[i:i + m] for i in range(len(vectors) - m + 1)]


def expansion_count(window: Sequence[ObservationVector]) -> int:
    return math.prod(len(v.symbols) for v in window)


def expand(window: Sequence[ObservationVector], cap: int = DEFAULT_EXPANSION_CAP) -> list[tuple[int, ...]]:
    """Cartesian product of the window's vectors: one scalar sequence per
    choice of a symbol at every step, in lexicographic code order."""
    if not window:
        raise InvalidInputError("cannot expand an empty window")
    count = expansion_count(window)
    if count > cap:
        raise ExpansionOverflowError(
            f"window {format_ts(window[0].ts)}..{format_ts(window[-1].ts)} expands to "
            f"{count} sequences (cap {cap})",
            count=count, window_start=window[0].ts, window_end=window[-1].ts,
        )
    return list(itertools.product(*(sorted(v.symbols) for v in window)))


def build_vectors(
    behavior: Sequence[SensorEvent],
    presence: Sequence[SensorEvent],
    registry: DeviceRegistry = DEFAULT_REGISTRY,
    coalesce_window: timedelta = timedelta(seconds=30),
    heartbeat_tolerance: timedelta = timedelta(seconds=45),
    max_skew: timedelta = timedelta(seconds=60),
) -> list[ObservationVector]:
    """merge -> heartbeat filter -> coalesce."""
    timeline = merge_logs(behavior, presence, registry, max_skew)
    return coalesce(drop_repeats(timeline, heartbeat_tolerance), coalesce_window)


def reindex(vectors: Iterable[ObservationVector]) -> list[ObservationVector]:
    return [replace(v, index=i) for i, v in enumerate(vectors)]
