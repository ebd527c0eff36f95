import pytest

from rpmhmm.benchmark import CLEAN_STREAM, run_benchmark
from rpmhmm.config import BenchmarkSettings, PipelineConfig


@pytest.fixture(scope="module")
def result():
    return run_benchmark(PipelineConfig())


def test_anomaly_set_composition(result):
    names = [lab.scenario for lab in result.labels]
    assert names[:8] == [f"S{i}" for i in range(1, 9)]
    assert names[8:] == [f"R{i:02d}" for i in range(1, 39)]
    assert all(lab.stream == lab.scenario for lab in result.labels)
    assert all(lab.start >= result.split.test_start for lab in result.labels)


def test_units_are_clean_segments_plus_labels(result):
    clean = [u for u in result.units if u.stream == CLEAN_STREAM]
    assert len(clean) == len(result.split.test_segments)
    assert [(u.start, u.end) for u in clean] == [(s.start, s.end) for s in result.split.test_segments]
    assert result.confusion.total == len(clean) + 46


def test_alerts_reference_known_streams(result):
    streams = {CLEAN_STREAM} | {lab.stream for lab in result.labels}
    assert {a.stream for a in result.alerts} <= streams
    assert all(a.logprob < result.threshold.cutoff for a in result.alerts)


def test_subset_of_scenarios(result):
    small = run_benchmark(PipelineConfig(benchmark=BenchmarkSettings(random_anomalies=0, scenarios=(2, 6))))
    assert [lab.scenario for lab in small.labels] == ["S2", "S6"]
    assert small.threshold == result.threshold
