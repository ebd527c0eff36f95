"""Synthetic daily routines and labelled anomaly injection.

A day is built from a schedule of activities (wake, vitals, meals, leaving
and returning home, bedtime), each jittered around a nominal time of day.
Free at-home time is filled with short bedroom/fridge visits and the night
with occasional awakenings.  Every day draws from its own RNG derived from
``(seed, day_index)`` so days are independent and reproducible.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field, replace
from datetime import date, datetime, time, timedelta, timezone
from typing import Mapping, Sequence

import numpy as np

from .alphabet import ALPHABET, DEVICE_KINDS
from .errors import InvalidInputError, ScenarioError
from .evaluation import Interval
from .events import LogRecord, SensorEvent, coalesce, drop_repeats, format_ts, sliding_windows


ACTIVITIES = ("wake", "bed", "door", "fridge", "vitals", "oximeter", "leave", "return")


@dataclass(frozen=True)
class ScheduleEntry:
    name: str
    activity: str
    at: str  # "HH:MM"
    jitter: float  # minutes, standard deviation
    days: str = "all"  # all | weekday | weekend

    def __post_init__(self):
        if self.activity not in ACTIVITIES:
            raise InvalidInputError(f"unknown activity {self.activity!r}")
        if self.days not in ("all", "weekday", "weekend"):
            raise InvalidInputError(f"unknown day selector {self.days!r}")
        if self.jitter < 0:
            raise InvalidInputError("jitter must be non-negative")
        hh, mm = self.at.split(":")
        if not (0 <= int(hh) < 24 and 0 <= int(mm) < 60):
            raise InvalidInputError(f"bad time of day {self.at!r}")

    @property
    def minute(self) -> int:
        hh, mm = self.at.split(":")
        return int(hh) * 60 + int(mm)

    def applies(self, day: date) -> bool:
        if self.days == "all":
            return True
        return (day.weekday() < 5) == (self.days == "weekday")


DEFAULT_SCHEDULE = (
    ScheduleEntry("wake", "wake", "07:00", 10),
    ScheduleEntry("morning vitals", "vitals", "07:30", 5),
    ScheduleEntry("breakfast", "fridge", "08:00", 5),
    ScheduleEntry("leave for work", "leave", "09:00", 10, "weekday"),
    ScheduleEntry("lunch", "fridge", "12:30", 10, "weekend"),
    ScheduleEntry("errand out", "leave", "14:30", 20, "weekend"),
    ScheduleEntry("errand back", "return", "16:30", 20, "weekend"),
    ScheduleEntry("back from work", "return", "17:30", 15, "weekday"),
    ScheduleEntry("dinner", "fridge", "19:00", 10),
    ScheduleEntry("evening oximetry", "oximeter", "21:30", 10),
    ScheduleEntry("bedtime", "bed", "23:00", 10),
)


@dataclass(frozen=True)
class RoutineSpec:
    start: date = date(2024, 1, 1)
    schedule: tuple[ScheduleEntry, ...] = DEFAULT_SCHEDULE
    # gap range (minutes) between filler visits while awake at home
    filler_gap: tuple[float, float] = (46.0, 52.0)
    filler_door_share: float = 0.6
    # gap range (minutes) between night-time awakenings
    night_gap: tuple[float, float] = (46.0, 56.0)
    clearance: float = 12.0  # minutes kept free around scheduled entries
    min_spacing: float = 3.0  # minutes between consecutive scheduled entries
    oximeter_mu: float = 97.0
    oximeter_sigma: float = 1.15
    scale_mu: float = 80.0
    scale_sigma: float = 1.0
    reading_clip: float = 1.25  # readings clipped to mu +- clip * sigma
    scenario_frame: float = 10.0  # minutes, "within a time frame" for scenarios 2 and 5
    devices: Mapping[str, str] = field(default_factory=lambda: {k: k for k in DEVICE_KINDS})

    def __post_init__(self):
        if self.oximeter_sigma <= 0 or self.scale_sigma <= 0:
            raise InvalidInputError("vital distributions need sigma > 0")
        for lo, hi in (self.filler_gap, self.night_gap):
            if not 0 < lo <= hi:
                raise InvalidInputError("gap ranges must satisfy 0 < lo <= hi")
        if self.reading_clip <= 0:
            raise InvalidInputError("reading_clip must be positive")
        acts = [e.activity for e in self.schedule]
        if acts.count("wake") != 1 or acts.count("bed") != 1:
            raise InvalidInputError("schedule needs exactly one wake and one bed entry")

    def entry(self, activity: str) -> ScheduleEntry:
        return next(e for e in self.schedule if e.activity == activity)

    def device(self, kind: str) -> str:
        return self.devices[kind]


# activity -> duration in seconds (used for spacing and clearance)
_DURATION = {"wake": 120, "bed": 120, "door": 120, "fridge": 120, "vitals": 420, "oximeter": 120,
             "leave": 0, "return": 0}


def _reading(rng, mu, sigma, clip):
    x = rng.normal(mu, sigma)
    return round(float(np.clip(x, mu - clip * sigma, mu + clip * sigma)), 1)


def _activity_records(activity: str, t: datetime, rng, spec: RoutineSpec):
    """Records produced by one activity starting at ``t`` -> (behavior, presence)."""
    dev = spec.device
    s = timedelta(seconds=1)
    beh, pres = [], []
    if activity in ("wake", "bed", "door"):
        beh += [LogRecord(t, dev("bedroom_door"), "bd_open"),
                LogRecord(t + int(rng.integers(50, 120)) * s, dev("bedroom_door"), "bd_close")]
    elif activity == "fridge":
        beh += [LogRecord(t, dev("fridge_door"), "fd_open"),
                LogRecord(t + int(rng.integers(45, 110)) * s, dev("fridge_door"), "fd_close")]
    elif activity in ("vitals", "oximeter"):
        ox = _reading(rng, spec.oximeter_mu, spec.oximeter_sigma, spec.reading_clip)
        beh += [LogRecord(t, dev("oximeter"), reading=ox),
                LogRecord(t, dev("phone2"), "ph2_on"),
                LogRecord(t + 120 * s, dev("oximeter"), "ox_off"),
                LogRecord(t + 120 * s, dev("phone2"), "ph2_off")]
        if activity == "vitals":
            t2 = t + 300 * s
            sc = _reading(rng, spec.scale_mu, spec.scale_sigma, spec.reading_clip)
            beh += [LogRecord(t2, dev("scale"), reading=sc),
                    LogRecord(t2, dev("phone2"), "ph2_on"),
                    LogRecord(t2 + 120 * s, dev("scale"), "sc_off"),
                    LogRecord(t2 + 120 * s, dev("phone2"), "ph2_off")]
    elif activity == "leave":
        pres.append(LogRecord(t, dev("phone1"), "ph1_out"))
    elif activity == "return":
        pres.append(LogRecord(t, dev("phone1"), "ph1_in"))
    return beh, pres


def _midnight(day: date) -> datetime:
    return datetime.combine(day, time(0, 0), tzinfo=timezone.utc)


def _schedule_day(day: date, rng, spec: RoutineSpec):
    """Jittered, non-overlapping (time, entry) pairs for one day."""
    entries = sorted((e for e in spec.schedule if e.applies(day)), key=lambda e: e.minute)
    out = []
    prev_end = None
    for e in entries:
        jitter = float(np.clip(rng.normal(0.0, e.jitter), -3 * e.jitter, 3 * e.jitter)) if e.jitter else 0.0
        t = _midnight(day) + timedelta(seconds=round((e.minute + jitter) * 60))
        if prev_end is not None and t < prev_end + timedelta(minutes=spec.min_spacing):
            t = prev_end + timedelta(minutes=spec.min_spacing)
        out.append((t, e))
        prev_end = t + timedelta(seconds=_DURATION[e.activity])
    return out


def _fill(start: datetime, end: datetime, gap, busy, rng, clearance: timedelta):
    """Filler start times in (start, end), each gap drawn from ``gap`` minutes,
    skipping any candidate that falls within ``clearance`` of a busy span."""
    times = []
    t = start + timedelta(minutes=float(rng.uniform(*gap)))
    while t < end - clearance:
        if not any(b0 - clearance <= t <= b1 + clearance for b0, b1 in busy):
            times.append(t.replace(microsecond=0))
        t += timedelta(minutes=float(rng.uniform(*gap)))
    return times


def simulate_day(day_index: int, spec: RoutineSpec, seed: int):
    rng = np.random.default_rng(np.random.SeedSequence([seed, day_index]))
    day = spec.start + timedelta(days=day_index)
    plan = _schedule_day(day, rng, spec)
    behavior, presence = [], []
    busy = []
    for t, e in plan:
        b, p = _activity_records(e.activity, t, rng, spec)
        behavior += b
        presence += p
        busy.append((t, t + timedelta(seconds=_DURATION[e.activity])))

    clearance = timedelta(minutes=spec.clearance)
    wake_t = next(t for t, e in plan if e.activity == "wake")
    bed_t = next(t for t, e in plan if e.activity == "bed")
    # awake-at-home intervals: wake..bed minus away spans
    home = []
    cursor = wake_t
    away_from = None
    for t, e in plan:
        if e.activity == "leave" and away_from is None:
            home.append((cursor, t))
            away_from = t
        elif e.activity == "return" and away_from is not None:
            cursor = t
            away_from = None
    home.append((cursor, bed_t))
    for h0, h1 in home:
        for t in _fill(h0, h1, spec.filler_gap, busy, rng, clearance):
            activity = "door" if rng.random() < spec.filler_door_share else "fridge"
            behavior += _activity_records(activity, t, rng, spec)[0]

    wake = spec.entry("wake")
    next_wake = _midnight(day + timedelta(days=1)) + timedelta(minutes=wake.minute - 3 * wake.jitter)
    for t in _fill(bed_t, next_wake - clearance, spec.night_gap, [], rng, clearance):
        behavior += _activity_records("door", t, rng, spec)[0]
    return behavior, presence


def simulate_days(spec: RoutineSpec, days: int, seed: int) -> tuple[list[LogRecord], list[LogRecord]]:
    """Generate ``days`` days of behaviour and presence logs, sorted by time."""
    if days < 1:
        raise InvalidInputError("days must be at least 1")
    behavior, presence = [], [LogRecord(_midnight(spec.start), spec.device("phone1"), "ph1_in")]
    for d in range(days):
        b, p = simulate_day(d, spec, seed)
        behavior += b
        presence += p
    key = lambda r: (r.ts, r.device)
    return sorted(behavior, key=key), sorted(presence, key=key)


# -- crafted scenarios ----------------------------------------------------

@dataclass(frozen=True)
class AnomalyScenario:
    ident: int
    description: str
    requires: str  # away | home | night


SCENARIOS = {
    1: AnomalyScenario(1, "scale reading arrives while the occupant's phone is away from home", "away"),
    2: AnomalyScenario(2, "very low SpO2 (ox3) with no bedroom-door activity in the following frame", "home"),
    3: AnomalyScenario(3, "scale, oximeter and fridge door fire together while the occupant is away", "away"),
    4: AnomalyScenario(4, "scale, oximeter and fridge door fire together while the occupant is home", "home"),
    5: AnomalyScenario(5, "oximeter reports ox2 and is not switched off within the frame", "home"),
    6: AnomalyScenario(6, "out-of-band weight (sc3) followed by very low SpO2 (ox3) at home", "home"),
    7: AnomalyScenario(7, "bedroom and fridge doors open while the occupant is away", "away"),
    8: AnomalyScenario(8, "repeated night-time bedroom-door openings with very low SpO2", "night"),
}


def catalog_text(spec: RoutineSpec | None = None) -> str:
    spec = spec or RoutineSpec()
    lines = ["# anomaly scenario catalog", f"frame_minutes: {spec.scenario_frame}", "scenarios:"]
    for s in SCENARIOS.values():
        lines += [f"  - id: {s.ident}", f"    requires: {s.requires}", f"    description: \"{s.description}\""]
    lines += ["random_substitutions:"]
    lines += [f"  {k}: {v}" for k, v in DEFAULT_SUBSTITUTIONS.items()]
    return "\n".join(lines) + "\n"


# offsets in seconds: (offset, device kind, status)
_INSERTS = {
    1: [(0, "scale", "sc2"), (0, "phone2", "ph2_on"), (60, "scale", "sc_off"), (60, "phone2", "ph2_off")],
    2: [(0, "oximeter", "ox3"), (0, "phone2", "ph2_on"), (120, "oximeter", "ox_off"), (120, "phone2", "ph2_off")],
    3: [(0, "scale", "{sc}"), (0, "oximeter", "{ox}"), (0, "fridge_door", "fd_open"), (0, "phone2", "ph2_on"),
        (60, "scale", "sc_off"), (60, "oximeter", "ox_off"), (60, "fridge_door", "fd_close"), (60, "phone2", "ph2_off")],
    6: [(0, "scale", "sc3"), (0, "phone2", "ph2_on"), (60, "scale", "sc_off"), (60, "phone2", "ph2_off"),
        (180, "oximeter", "ox3"), (180, "phone2", "ph2_on"), (300, "oximeter", "ox_off"), (300, "phone2", "ph2_off")],
    7: [(0, "bedroom_door", "bd_open"), (0, "fridge_door", "fd_open"),
        (60, "bedroom_door", "bd_close"), (60, "fridge_door", "fd_close")],
    8: [(0, "bedroom_door", "bd_open"), (60, "bedroom_door", "bd_close"),
        (240, "bedroom_door", "bd_open"), (240, "oximeter", "ox3"), (240, "phone2", "ph2_on"),
        (360, "oximeter", "ox_off"), (360, "phone2", "ph2_off"), (420, "bedroom_door", "bd_close")],
}
_INSERTS[4] = _INSERTS[3]

QUIET_MARGIN = timedelta(minutes=3)


@dataclass
class Injection:
    behavior: list[LogRecord]
    presence: list[LogRecord]
    label: Interval


def presence_at(presence: Sequence[LogRecord], at: datetime) -> str | None:
    """Occupant presence status in effect at ``at`` (None before the first record)."""
    state = None
    for rec in presence:
        if rec.ts > at:
            break
        if rec.status in ("ph1_in", "ph1_out"):
            state = rec.status
    return state


def is_night(at: datetime, spec: RoutineSpec) -> bool:
    minute = at.hour * 60 + at.minute
    bed, wake = spec.entry("bed"), spec.entry("wake")
    lo = (bed.minute + 3 * bed.jitter + 20) % 1440
    hi = wake.minute - 3 * wake.jitter - 20
    return minute >= lo or minute < hi if lo > hi else lo <= minute < hi


class _Index:
    """Sorted behaviour timestamps (for quiet-period checks) and the log's time range."""

    def __init__(self, behavior: Sequence[LogRecord], presence: Sequence[LogRecord]):
        self.ts = sorted(r.ts for r in behavior)
        every = self.ts + [r.ts for r in presence]
        self.first = min(every) if every else None
        self.last = max(every) if every else None

    def any_between(self, lo: datetime, hi: datetime) -> bool:
        i = bisect.bisect_left(self.ts, lo)
        return i < len(self.ts) and self.ts[i] <= hi


def _check_precondition(sid, at, behavior, presence, spec, index=None):
    if sid not in SCENARIOS:
        raise ScenarioError(f"unknown scenario id {sid!r}; valid ids are 1-8")
    index = index or _Index(behavior, presence)
    if index.first is None:
        raise ScenarioError("cannot inject into empty logs")
    if not index.first <= at <= index.last:
        raise ScenarioError(f"{format_ts(at)} lies outside the log's time range")
    req = SCENARIOS[sid].requires
    state = presence_at(presence, at)
    if req == "away" and state != "ph1_out":
        raise ScenarioError(f"scenario {sid} needs the occupant away at {format_ts(at)}")
    if req in ("home", "night") and state != "ph1_in":
        raise ScenarioError(f"scenario {sid} needs the occupant home at {format_ts(at)}")
    if req == "night" and not is_night(at, spec):
        raise ScenarioError(f"scenario {sid} needs a night-time injection point, got {format_ts(at)}")
    if sid == 5:
        return
    span = timedelta(seconds=max(off for off, _, _ in _INSERTS[sid]))
    if sid == 2:
        span = max(span, timedelta(minutes=spec.scenario_frame))
    if index.any_between(at - QUIET_MARGIN, at + span + QUIET_MARGIN):
        raise ScenarioError(f"logs are not quiet around {format_ts(at)}; scenario {sid} would overlap normal events")
    # presence must not change during the injected span
    if presence_at(presence, at + span) != state:
        raise ScenarioError(f"presence changes during scenario {sid} at {format_ts(at)}")


def _oximeter_target(behavior, at, spec):
    """First oximeter reading in [at, at + 3h]: (index, off-record indices to drop)."""
    ox_dev, ph_dev = spec.device("oximeter"), spec.device("phone2")
    frame = timedelta(minutes=spec.scenario_frame)
    for i, rec in enumerate(behavior):
        if rec.ts < at or rec.device != ox_dev or rec.status == "ox_off":
            continue
        if rec.ts > at + timedelta(hours=3):
            break
        offs = [j for j, r in enumerate(behavior)
                if r.device == ox_dev and r.status == "ox_off" and rec.ts < r.ts <= rec.ts + frame]
        drop = set(offs)
        for j in offs:
            drop |= {k for k, r in enumerate(behavior)
                     if r.device == ph_dev and r.status == "ph2_off" and abs(r.ts - behavior[j].ts) <= timedelta(seconds=30)}
        if offs:
            return i, sorted(drop)
    return None


def inject_scenario(
    behavior: Sequence[LogRecord],
    presence: Sequence[LogRecord],
    scenario_id: int,
    at: datetime,
    seed: int = 0,
    spec: RoutineSpec | None = None,
) -> Injection:
    """Apply crafted scenario ``scenario_id`` at ``at``; returns mutated logs and the label.

    Injection points that violate the scenario's precondition are rejected
    with :class:`ScenarioError`, never shifted.
    """
    spec = spec or RoutineSpec()
    _check_precondition(scenario_id, at, behavior, presence, spec)
    rng = np.random.default_rng(np.random.SeedSequence([seed, scenario_id]))
    label = f"S{scenario_id}"
    if scenario_id == 5:
        target = _oximeter_target(behavior, at, spec)
        if target is None:
            raise ScenarioError(f"no oximeter reading with a following ox_off after {format_ts(at)}")
        i, drop = target
        new_beh = [r for j, r in enumerate(behavior) if j not in drop]
        reading = behavior[i]
        new_beh[new_beh.index(reading)] = LogRecord(reading.ts, reading.device, "ox2")
        end = max(behavior[j].ts for j in drop)
        return Injection(new_beh, list(presence), Interval("", reading.ts, end, label))

    upper = rng.random() < 0.5
    fill = {"{sc}": "sc1" if upper else "sc2", "{ox}": "ox1" if upper else "ox2"}
    added = [
        LogRecord(at + timedelta(seconds=off), spec.device(kind), fill.get(status, status))
        for off, kind, status in _INSERTS[scenario_id]
    ]
    new_beh = sorted([*behavior, *added], key=lambda r: (r.ts, r.device))
    return Injection(new_beh, list(presence), Interval("", added[0].ts, added[-1].ts, label))


def injection_candidates(
    behavior: Sequence[LogRecord],
    presence: Sequence[LogRecord],
    scenario_id: int,
    start: datetime,
    end: datetime,
    spec: RoutineSpec | None = None,
    step: timedelta = timedelta(minutes=5),
) -> list[datetime]:
    """Every grid point in [start, end] where the scenario's precondition holds."""
    spec = spec or RoutineSpec()
    if scenario_id == 5:
        ox_dev = spec.device("oximeter")
        out = []
        for rec in behavior:
            if start <= rec.ts <= end and rec.device == ox_dev and rec.status != "ox_off":
                try:
                    _check_precondition(5, rec.ts, behavior, presence, spec)
                except ScenarioError:
                    continue
                if _oximeter_target(behavior, rec.ts, spec):
                    out.append(rec.ts)
        return out
    index = _Index(behavior, presence)
    out = []
    t = start
    while t <= end:
        try:
            _check_precondition(scenario_id, t, behavior, presence, spec, index)
            out.append(t)
        except ScenarioError:
            pass
        t += step
    return out


# -- random perturbations -------------------------------------------------

DEFAULT_SUBSTITUTIONS = {
    "ox2": "ox3", "ph2_on": "ph2_off", "ph1_in": "ph1_out",
    "ox1": "ox3", "sc1": "sc3", "sc2": "sc3", "ph1_out": "ph1_in",
}


@dataclass(frozen=True)
class Perturbation:
    ident: str
    window_start: datetime
    window_end: datetime
    flips: tuple[tuple[int, int, int], ...]  # (event index, old code, new code)
    label: Interval

    def apply(self, events: Sequence[SensorEvent]) -> list[SensorEvent]:
        out = list(events)
        for idx, old, new in self.flips:
            ev = out[idx]
            if ev.symbol != old:
                raise ScenarioError(f"{self.ident}: event {idx} no longer carries {ALPHABET.name(old)}")
            out[idx] = replace(ev, symbol=new)
        return out


def generate_random_anomalies(
    events: Sequence[SensorEvent],
    count: int,
    seed: int,
    window_len: int = 5,
    coalesce_window: timedelta = timedelta(seconds=30),
    heartbeat_tolerance: timedelta = timedelta(seconds=45),
    substitutions: Mapping[str, str] = DEFAULT_SUBSTITUTIONS,
    max_flips: int = 1,
) -> list[Perturbation]:
    """Pick ``count`` distinct windows of the (merged) timeline and flip between
    one and ``max_flips`` eligible statuses in each.  No event is flipped by two
    perturbations."""
    if count < 1 or max_flips < 1:
        raise InvalidInputError("count and max_flips must be at least 1")
    subs = {ALPHABET.code(k): ALPHABET.code(v) for k, v in substitutions.items()}
    position = {id(ev): i for i, ev in enumerate(events)}
    vectors = coalesce(drop_repeats(events, heartbeat_tolerance), coalesce_window)
    windows = sliding_windows(vectors, window_len)
    candidates = [
        (w, [position[id(e)] for v in w for e in v.events if e.symbol in subs])
        for w in windows
    ]
    candidates = [(w, idx) for w, idx in candidates if idx]
    if count > len(candidates):
        raise InvalidInputError(f"only {len(candidates)} eligible windows, {count} requested")
    rng = np.random.default_rng(seed)
    used: set[int] = set()
    out = []
    for c in rng.permutation(len(candidates)):
        w, idx = candidates[int(c)]
        avail = [i for i in idx if i not in used]
        if not avail:
            continue
        k = int(rng.integers(1, min(max_flips, len(avail)) + 1))
        chosen = sorted(int(i) for i in rng.choice(avail, size=k, replace=False))
        used.update(chosen)
        flips = tuple((i, events[i].symbol, subs[events[i].symbol]) for i in chosen)
        ident = f"R{len(out) + 1:02d}"
        label = Interval("", events[chosen[0]].ts, events[chosen[-1]].ts, ident)
        out.append(Perturbation(ident, w[0].ts, w[-1].ts, flips, label))
        if len(out) == count:
            return out
    raise InvalidInputError(f"only {len(out)} non-overlapping perturbations available, {count} requested")
