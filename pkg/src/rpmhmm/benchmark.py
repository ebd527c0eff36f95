"""End-to-end synthetic benchmark: simulate, split, train, calibrate, inject, evaluate.

Evaluation units are the normal test segments of the clean stream plus one
interval per injected anomaly.  Each anomaly is replayed in its own copy of
the test stream, so anomalies never mask or help one another.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path

import numpy as np

from .alphabet import DEVICE_KINDS
from .config import PipelineConfig
from .detector import AnomalyAlert, Threshold, detect_stream, window_scores
from .errors import ScenarioError
from .evaluation import (ConfusionMatrix, Interval, WindowOutcome, confusion_table, evaluate, write_jsonl,
                         write_metrics, write_window_scores)
from .events import LogRecord, SensorEvent
from .hmm import HmmModel, TrainResult, serialize_model
from .pipeline import (PreparedSplit, build_segments, build_timeline, prepare_split, train_and_calibrate,
                       vectors_from_timeline)
from .simulator import RoutineSpec, generate_random_anomalies, inject_scenario, injection_candidates, simulate_days

log = logging.getLogger(__name__)

CLEAN_STREAM = "clean"
# keep crafted injections clear of the split point and the end of the logs
INJECTION_MARGIN = timedelta(hours=2)


def routine_spec(cfg: PipelineConfig) -> RoutineSpec:
    registry = cfg.registry
    devices = {kind: registry.device_for_kind(kind) for kind in DEVICE_KINDS}
    return RoutineSpec(scenario_frame=cfg.simulation.scenario_frame_min, devices=devices)


@dataclass
class BenchmarkResult:
    split: PreparedSplit
    training: TrainResult
    threshold: Threshold
    alerts: list[AnomalyAlert]
    labels: list[Interval]
    units: list[Interval]
    confusion: ConfusionMatrix
    outcomes: list[WindowOutcome]
    clean_scores: list

    @property
    def model(self) -> HmmModel:
        return self.training.model

    @property
    def n_normal(self) -> int:
        return self.confusion.fp + self.confusion.tn

    def summary(self) -> dict:
        return {
            "n_segments": self.split.n_segments,
            "n_train_segments": len(self.split.train_segments),
            "n_test_segments": len(self.split.test_segments),
            "n_anomalies": len(self.labels),
            "n_normal_units": self.n_normal,
            "cutoff": self.threshold.cutoff,
            "train_iterations": self.training.n_iterations,
        }


def _test_events(timeline: list[SensorEvent], split: PreparedSplit) -> list[SensorEvent]:
    return [e for e in timeline if e.ts >= split.test_start]


def run_benchmark(cfg: PipelineConfig, behavior: list[LogRecord] | None = None,
                  presence: list[LogRecord] | None = None) -> BenchmarkResult:
    spec = routine_spec(cfg)
    registry = cfg.registry
    settings, det = cfg.events, cfg.detector
    if behavior is None or presence is None:
        behavior, presence = simulate_days(spec, cfg.simulation.days, cfg.simulation.seed)

    split = prepare_split(behavior, presence, cfg.train_fraction, registry, settings)
    profiles = cfg.profiles or split.profiles
    if cfg.profiles:
        # operator-supplied profiles win; segmentation is unaffected
        split = PreparedSplit(profiles, split.train_segments, split.test_segments, split.test_start)
    training, threshold = train_and_calibrate(split.train_segments, cfg.n_states, cfg.train, det)
    model = training.model

    def stream_vectors(beh, pres, events=None):
        timeline = events if events is not None else _test_events(
            build_timeline(beh, pres, profiles, registry, settings), split)
        return vectors_from_timeline(timeline, settings)

    clean_events = _test_events(build_timeline(behavior, presence, profiles, registry, settings), split)
    clean_vectors = stream_vectors(None, None, clean_events)
    alerts = detect_stream(model, threshold, clean_vectors, det, CLEAN_STREAM)
    clean_scores = window_scores(model, clean_vectors, det)
    units = [Interval(CLEAN_STREAM, s.start, s.end) for s in build_segments(clean_vectors, settings)]
    labels: list[Interval] = []

    lo = split.test_start + INJECTION_MARGIN
    hi = max(r.ts for r in [*behavior, *presence]) - INJECTION_MARGIN
    rng = np.random.default_rng(np.random.SeedSequence([cfg.benchmark.seed, 0]))
    for sid in cfg.benchmark.scenarios:
        candidates = injection_candidates(behavior, presence, sid, lo, hi, spec)
        if not candidates:
            raise ScenarioError(f"no valid injection point for scenario {sid} in the test period")
        at = candidates[int(rng.integers(len(candidates)))]
        inj = inject_scenario(behavior, presence, sid, at, cfg.benchmark.seed, spec)
        stream = inj.label.scenario
        alerts += detect_stream(model, threshold, stream_vectors(inj.behavior, inj.presence), det, stream)
        labels.append(Interval(stream, inj.label.start, inj.label.end, inj.label.scenario))

    if cfg.benchmark.random_anomalies:
        perturbations = generate_random_anomalies(
            clean_events, cfg.benchmark.random_anomalies, cfg.benchmark.seed, det.window_len,
            settings.coalesce_window, settings.heartbeat_tolerance,
        )
        for pert in perturbations:
            vectors = stream_vectors(None, None, pert.apply(clean_events))
            alerts += detect_stream(model, threshold, vectors, det, pert.ident)
            labels.append(Interval(pert.ident, pert.label.start, pert.label.end, pert.ident))

    confusion, outcomes = evaluate(alerts, labels, units + labels)
    return BenchmarkResult(split, training, threshold, alerts, labels, units + labels, confusion, outcomes,
                           clean_scores)


def train_report(training: TrainResult, threshold: Threshold, split: PreparedSplit | None = None) -> str:
    doc = {
        "loglik_trace": training.loglik_trace,
        "converged": training.converged,
        "n_iterations": training.n_iterations,
        "training_min_logprob": threshold.min_logprob,
        "training_max_logprob": threshold.max_logprob,
        "cutoff": threshold.cutoff,
        "n_windows": threshold.n_windows,
        "n_sequences": threshold.n_sequences,
    }
    if split is not None:
        doc["n_train_segments"] = len(split.train_segments)
        doc["n_test_segments"] = len(split.test_segments)
    return json.dumps(doc, indent=2) + "\n"


def profiles_json(profiles) -> str:
    return json.dumps({k: p.to_dict() for k, p in sorted(profiles.items())}, indent=2) + "\n"


def write_artifacts(result: BenchmarkResult, cfg: PipelineConfig, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.path("model", out).write_text(serialize_model(result.model), encoding="utf-8")
    cfg.path("threshold", out).write_text(result.threshold.to_json(), encoding="utf-8")
    cfg.path("profiles", out).write_text(profiles_json(result.split.profiles), encoding="utf-8")
    cfg.path("train_report", out).write_text(train_report(result.training, result.threshold, result.split),
                                             encoding="utf-8")
    write_jsonl(result.alerts, cfg.path("alerts", out))
    write_jsonl(result.labels, cfg.path("labels", out))
    write_jsonl(result.units, cfg.path("windows", out))
    write_metrics(result.confusion, cfg.path("metrics", out), result.summary())
    cfg.path("confusion", out).write_text(confusion_table(result.confusion), encoding="utf-8")
    write_window_scores(result.clean_scores, result.threshold.cutoff, cfg.path("window_scores", out), CLEAN_STREAM)
