import json
import logging
import random
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, strategies as st

from oracles import cartesian_names
from rpmhmm.alphabet import ALPHABET, DEFAULT_REGISTRY
from rpmhmm.discretizer import DeviceProfile
from rpmhmm.errors import ExpansionOverflowError, IngestionError, InvalidInputError
from rpmhmm.events import (LogRecord, ObservationVector, SensorEvent, coalesce, drop_repeats, expand,
                           expansion_count, flatten, format_ts, merge_logs, parse_log_lines, parse_ts, read_log,
                           resolve_records, segment, write_log)

T0 = datetime(2024, 1, 8, 0, 0, tzinfo=timezone.utc)
DEVICE_OF = {"bd": "bedroom_door", "fd": "fridge_door", "sc": "scale", "ox": "oximeter", "ph2": "phone2",
             "ph1": "phone1"}


def ev(hhmmss, name, device=None):
    h, m, s = (int(x) for x in hhmmss.split(":"))
    device = device or DEVICE_OF[name.rsplit("_", 1)[0] if name.startswith("ph") else name[:2]]
    return SensorEvent(T0.replace(hour=h, minute=m, second=s), device, ALPHABET.code(name))


def vec(i, *names, minute=0):
    return ObservationVector(i, T0 + timedelta(minutes=minute + i), tuple(sorted(ALPHABET.code(n) for n in names)))


def names(vectors):
    return [v.names for v in vectors]


# sample morning log: presence arrives, oximeter with phone-2, doors, scale with phone-2, fridge
SAMPLE_BEHAVIOR = [ev("08:04:00", "ox1"), ev("08:04:10", "ph2_on"), ev("08:06:00", "bd_open"),
                  ev("08:07:00", "bd_close"), ev("08:24:00", "sc2"), ev("08:24:05", "ph2_on"),
                  ev("08:32:00", "fd_open"), ev("08:33:00", "fd_close")]
SAMPLE_PRESENCE = [ev("08:02:00", "ph1_in")]


def test_sample_log_merges_into_seven_steps():
    timeline = merge_logs(SAMPLE_BEHAVIOR, SAMPLE_PRESENCE)
    vectors = coalesce(drop_repeats(timeline))
    assert names(vectors) == [["ph1_in"], ["ox1", "ph2_on"], ["bd_open"], ["bd_close"], ["sc2", "ph2_on"],
                              ["fd_open"], ["fd_close"]]


def test_merge_is_independent_of_input_order():
    expected = merge_logs(SAMPLE_BEHAVIOR, SAMPLE_PRESENCE)
    shuffled = SAMPLE_BEHAVIOR[:]
    random.Random(3).shuffle(shuffled)
    assert merge_logs(shuffled, SAMPLE_PRESENCE) == expected


def test_merge_ties_put_behavior_first():
    b = [ev("09:00:00", "bd_open")]
    p = [ev("09:00:00", "ph1_out")]
    assert [e.name for e in merge_logs(b, p)] == ["bd_open", "ph1_out"]


def test_merge_empty_and_unregistered():
    assert merge_logs([], []) == []
    with pytest.raises(IngestionError):
        merge_logs([SensorEvent(T0, "toaster", 0)], [])


def test_merge_warns_on_clock_skew(caplog):
    b = [ev("09:00:00", "bd_open"), ev("08:50:00", "bd_close")]
    with caplog.at_level(logging.WARNING):
        out = merge_logs(b, [])
    assert [e.name for e in out] == ["bd_close", "bd_open"]
    assert "backwards" in caplog.text


def test_coalesce_window():
    together = coalesce([ev("08:04:00", "ox1"), ev("08:04:10", "ph2_on")], timedelta(seconds=30))
    assert names(together) == [["ox1", "ph2_on"]]
    apart = coalesce([ev("08:04:00", "ox1"), ev("08:09:00", "ph2_on")], timedelta(seconds=30))
    assert names(apart) == [["ox1"], ["ph2_on"]]
    assert coalesce([]) == []


def test_coalesce_multi_device_step():
    # oximeter, scale, phone-2 and bedroom door all firing together
    step = [ev("03:10:00", "bd_open"), ev("03:10:05", "ox3"), ev("03:10:10", "sc2"), ev("03:10:20", "ph2_off")]
    [v] = coalesce(step)
    assert sorted(v.names) == sorted(["bd_open", "ox3", "sc2", "ph2_off"])


def test_coalesce_later_event_replaces_earlier_from_same_device():
    [v] = coalesce([ev("08:00:00", "bd_open"), ev("08:00:20", "bd_close")])
    assert v.names == ["bd_close"]


def test_vector_rejects_two_symbols_for_one_device():
    with pytest.raises(InvalidInputError):
        ObservationVector(0, T0, (ALPHABET.code("bd_open"), ALPHABET.code("bd_close")))
    with pytest.raises(InvalidInputError):
        ObservationVector(0, T0, ())


def test_drop_repeats_only_removes_heartbeats():
    timeline = [ev("08:00:00", "bd_open"), ev("08:00:30", "bd_open"), ev("08:05:00", "bd_open")]
    assert [e.ts.minute for e in drop_repeats(timeline, timedelta(seconds=45))] == [0, 5]


event_names = st.sampled_from(["bd_open", "bd_close", "fd_open", "ox1", "ox2", "sc2", "ph2_on", "ph2_off", "ph1_in"])


@st.composite
def timelines(draw):
    offsets = sorted(draw(st.lists(st.integers(0, 4 * 3600), max_size=40)))
    return [ev(f"{o // 3600:02d}:{o % 3600 // 60:02d}:{o % 60:02d}", draw(event_names)) for o in offsets]


@given(timelines())
def test_coalesce_accounts_for_every_event(timeline):
    vectors = coalesce(timeline)
    placed = [id(e) for v in vectors for e in v.events]
    assert len(placed) == len(set(placed))
    holder = {id(e): v for v in vectors for e in v.events}
    for i, e in enumerate(timeline):
        if id(e) in holder:
            continue
        # only an event superseded by a later same-device event of its own vector may be missing
        later = [x for x in timeline[i + 1:] if x.device == e.device and id(x) in holder]
        assert later and holder[id(later[0])].ts <= e.ts


@given(timelines())
def test_coalesce_is_idempotent(timeline):
    once = coalesce(timeline)
    twice = coalesce(flatten(once))
    assert [(v.ts, v.symbols) for v in twice] == [(v.ts, v.symbols) for v in once]


def test_segment_by_gap():
    vectors = [vec(i, "bd_open", minute=180 if i >= 5 else 0) for i in range(10)]
    segs = segment(vectors, timedelta(hours=1), 24)
    assert [len(s) for s in segs] == [5, 5]


def test_segment_by_length_and_empty():
    vectors = [ObservationVector(i, T0 + timedelta(minutes=i), (0,)) for i in range(25)]
    assert [len(s) for s in segment(vectors, timedelta(hours=1), 20)] == [20, 5]
    assert segment([], timedelta(hours=1), 20) == []


@given(timelines(), st.integers(1, 30), st.integers(1, 120))
def test_segment_keeps_every_vector(timeline, max_len, gap_min):
    vectors = coalesce(timeline)
    segs = segment(vectors, timedelta(minutes=gap_min), max_len)
    assert [v for s in segs for v in s.vectors] == vectors
    assert all(len(s) <= max_len for s in segs)


def test_expand_single_multi_symbol_step():
    window = [vec(0, "bd_open"), vec(1, "ox3", "sc2", "ph2_off")]
    got = [ALPHABET.names_of(s) for s in expand(window)]
    assert got == [["bd_open", "sc2"], ["bd_open", "ox3"], ["bd_open", "ph2_off"]]
    assert sorted(map(tuple, got)) == sorted(map(tuple, cartesian_names([["bd_open"], ["ox3", "sc2", "ph2_off"]])))


def test_expand_five_step_window():
    window = [vec(0, "ox2", "ph2_on"), vec(1, "ox_off", "ph2_off"), vec(2, "bd_open"), vec(3, "bd_close"),
              vec(4, "bd_open")]
    got = [ALPHABET.names_of(s) for s in expand(window)]
    assert len(got) == 4
    assert ["ox2", "ox_off", "bd_open", "bd_close", "bd_open"] in got


def test_expand_singletons_and_errors():
    window = [vec(i, n) for i, n in enumerate(["bd_open", "bd_close", "fd_open"])]
    assert [ALPHABET.names_of(s) for s in expand(window)] == [["bd_open", "bd_close", "fd_open"]]
    with pytest.raises(InvalidInputError):
        expand([])
    wide = [vec(i, "ox1", "sc1", "ph2_on", "bd_open") for i in range(7)]  # 4**7 = 16384
    with pytest.raises(ExpansionOverflowError) as info:
        expand(wide)
    assert info.value.count == 16384 and info.value.window_start == wide[0].ts


@given(st.lists(st.lists(st.sampled_from(["bd_open", "fd_open", "ox1", "sc2", "ph2_on", "ph1_in"]),
                         min_size=1, max_size=4, unique=True), min_size=1, max_size=5))
def test_expansion_cardinality(steps):
    window = [vec(i, *names_) for i, names_ in enumerate(steps)]
    seqs = expand(window)
    assert len(seqs) == expansion_count(window) == len(cartesian_names(steps))
    assert len(set(seqs)) == len(seqs)
    assert seqs == sorted(seqs)


def test_log_round_trip(tmp_path):
    records = [LogRecord(T0, "oximeter", reading=97.4), LogRecord(T0 + timedelta(seconds=5), "phone2", "ph2_on")]
    write_log(records, tmp_path / "b.jsonl")
    assert read_log(tmp_path / "b.jsonl") == records


@pytest.mark.parametrize("line,fragment", [
    ('{"ts": "2024-01-08T08:00:00Z", "device": "bedroom_door"}', "exactly one"),
    ('{"ts": "2024-01-08T08:00:00Z", "device": "scale", "status": "sc1", "reading": 80}', "exactly one"),
    ('{"ts": "2024-01-08T08:00:00Z", "device": "scale", "status": "sc1", "room": 1}', "unknown field"),
    ('{"device": "scale", "status": "sc1"}', "missing field"),
    ('{"ts": "2024-01-08T08:00:00", "device": "scale", "status": "sc1"}', "UTC offset"),
    ('not json', "not valid JSON"),
])
def test_malformed_log_lines(line, fragment):
    with pytest.raises(IngestionError, match=fragment):
        parse_log_lines(["", line], "x.jsonl")
    with pytest.raises(IngestionError, match="x.jsonl:2"):
        parse_log_lines(["", line], "x.jsonl")


def test_resolve_records_bands_readings_and_checks_status():
    profiles = {"oximeter": DeviceProfile("oximeter", 97.0, 1.15)}
    recs = [LogRecord(T0, "oximeter", reading=98.0), LogRecord(T0, "oximeter", status="ox_off")]
    assert [e.name for e in resolve_records(recs, DEFAULT_REGISTRY, profiles)] == ["ox1", "ox_off"]
    with pytest.raises(IngestionError):
        resolve_records([LogRecord(T0, "scale", reading=80.0)], DEFAULT_REGISTRY, profiles)
    with pytest.raises(IngestionError):
        resolve_records([LogRecord(T0, "fridge_door", status="ox1")], DEFAULT_REGISTRY, profiles)
    with pytest.raises(IngestionError):
        resolve_records([LogRecord(T0, "toaster", status="bd_open")])


def test_timestamps_normalised_to_utc():
    ts = parse_ts("2024-01-08T09:00:00+01:00")
    assert format_ts(ts) == "2024-01-08T08:00:00Z"
    assert json.loads(LogRecord(ts, "phone1", "ph1_in").to_json())["ts"] == "2024-01-08T08:00:00Z"
