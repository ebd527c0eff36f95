"""Command-line entry point (``rpmhmm``).

Exit codes: 0 success (``score``: no alerts), 1 ``score`` raised alerts,
2 usage, input or pipeline error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .alphabet import ALPHABET, PRESENCE_KIND
from .benchmark import profiles_json, routine_spec, run_benchmark, train_report, write_artifacts
from .config import PipelineConfig, dump_default_config, load_config, with_overrides
from .detector import Threshold, detect_stream, merge_alert_spans, training_sequences, window_scores
from .discretizer import DeviceProfile
from .errors import ProfileError, ProtocolError, RpmHmmError
from .evaluation import (Interval, confusion_table, evaluate, read_intervals, write_jsonl, write_metrics,
                         write_window_scores)
from .events import LogRecord, format_ts, parse_ts, read_log, write_log
from .hmm import deserialize_model, sequence_log_likelihoods, serialize_model
from .pipeline import (build_segments, build_timeline, fit_profiles, prepare_split, train_and_calibrate,
                       vectors_from_timeline)
from .simulator import catalog_text, generate_random_anomalies, inject_scenario, simulate_days

log = logging.getLogger("rpmhmm")

EXIT_OK, EXIT_ALERTS, EXIT_ERROR = 0, 1, 2


class UsageError(RpmHmmError):
    pass


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _scenario_id(text: str) -> int:
    value = int(text)
    if not 1 <= value <= 8:
        raise argparse.ArgumentTypeError(f"scenario id must be 1-8, got {text}")
    return value


def _timestamp(text: str):
    try:
        return parse_ts(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config (default: $RPMHMM_CONFIG, else built-in defaults)")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rpmhmm", description="HMM anomaly detection for RPM smart-home logs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate synthetic normal logs")
    p.add_argument("--days", type=_positive)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("inject", parents=[common], help="inject crafted or random anomalies into logs")
    p.add_argument("--in", dest="in_dir", default=".", help="directory holding the input logs")
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--scenario", type=_scenario_id)
    what.add_argument("--random", type=_positive, metavar="N", help="apply N random status flips")
    p.add_argument("--at", type=_timestamp, help="injection time for --scenario (UTC, e.g. 2024-01-17T14:00:00Z)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", parents=[common], help="train a model and calibrate the threshold")
    p.add_argument("--in", dest="in_dir", default=".", help="directory holding the logs")

    p = sub.add_parser("score", parents=[common], help="score logs against a trained model")
    p.add_argument("--in", dest="in_dir", default=".", help="directory holding the logs")
    p.add_argument("--model-dir", default=None, help="directory with model/threshold/profiles (default: --out)")

    p = sub.add_parser("evaluate", parents=[common], help="confusion matrix from alerts, labels and windows")
    p.add_argument("--in", dest="in_dir", default=".", help="directory holding alerts, labels and windows files")
    p.add_argument("--alerts")
    p.add_argument("--labels")
    p.add_argument("--windows")

    p = sub.add_parser("sweep", parents=[common], help="held-out log-likelihood per number of hidden states")
    p.add_argument("--in", dest="in_dir", default=".", help="directory holding the logs")
    p.add_argument("--states", type=_positive, nargs="+", default=[2, 4, 6, 8, 10, 12])

    p = sub.add_parser("benchmark", parents=[common], help="run the full synthetic evaluation protocol")
    p.add_argument("--days", type=_positive)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("scenarios", parents=[common], help="print the anomaly scenario catalog")
    sub.add_parser("config", parents=[common], help="print the default configuration")
    return parser


# -- helpers ---------------------------------------------------------------

def _read_logs(cfg: PipelineConfig, in_dir) -> tuple[list[LogRecord], list[LogRecord]]:
    return read_log(cfg.path("behavior_log", in_dir)), read_log(cfg.path("presence_log", in_dir))


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _load_profiles(path: Path) -> dict[str, DeviceProfile]:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ProfileError(f"{path}: {exc}") from None
    return {kind: DeviceProfile.from_dict(body) for kind, body in doc.items()}


# -- subcommands -----------------------------------------------------------

def cmd_simulate(args, cfg: PipelineConfig) -> int:
    cfg = with_overrides(cfg, days=args.days, seed=args.seed)
    behavior, presence = simulate_days(routine_spec(cfg), cfg.simulation.days, cfg.simulation.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_log(behavior, cfg.path("behavior_log", out))
    write_log(presence, cfg.path("presence_log", out))
    print(f"wrote {len(behavior)} behavior and {len(presence)} presence records "
          f"({cfg.simulation.days} days, seed {cfg.simulation.seed}) to {out}")
    return EXIT_OK


def _flip_records(behavior, presence, flips, events, cfg):
    """Rewrite the records behind flipped events as explicit status records."""
    presence_dev = cfg.registry.device_for_kind(PRESENCE_KIND)
    beh, pres = list(behavior), list(presence)
    for idx, _old, new in flips:
        ev = events[idx]
        records = pres if ev.device == presence_dev else beh
        pos = next(i for i, r in enumerate(records) if r.ts == ev.ts and r.device == ev.device)
        records[pos] = LogRecord(ev.ts, ev.device, ALPHABET.name(new))
    return beh, pres


def cmd_inject(args, cfg: PipelineConfig) -> int:
    behavior, presence = _read_logs(cfg, args.in_dir)
    if args.scenario is not None:
        if args.at is None:
            raise UsageError("--scenario needs --at")
        inj = inject_scenario(behavior, presence, args.scenario, args.at, args.seed, routine_spec(cfg))
        behavior, presence, labels = inj.behavior, inj.presence, [inj.label]
    else:
        if args.at is not None:
            raise UsageError("--at only applies to --scenario")
        profiles = cfg.profiles or fit_profiles([*behavior, *presence], cfg.registry)
        events = build_timeline(behavior, presence, profiles, cfg.registry, cfg.events)
        perts = generate_random_anomalies(events, args.random, args.seed, cfg.detector.window_len,
                                          cfg.events.coalesce_window, cfg.events.heartbeat_tolerance)
        labels = []
        for pert in perts:
            behavior, presence = _flip_records(behavior, presence, pert.flips, events, cfg)
            labels.append(pert.label)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_log(behavior, cfg.path("behavior_log", out))
    write_log(presence, cfg.path("presence_log", out))
    write_jsonl(labels, cfg.path("labels", out))
    for lab in labels:
        print(f"{lab.scenario}\t{format_ts(lab.start)}\t{format_ts(lab.end)}")
    return EXIT_OK


def cmd_train(args, cfg: PipelineConfig) -> int:
    behavior, presence = _read_logs(cfg, args.in_dir)
    split = prepare_split(behavior, presence, cfg.train_fraction, cfg.registry, cfg.events)
    if cfg.profiles:
        log.info("using profiles from config instead of fitted ones")
    profiles = cfg.profiles or split.profiles
    training, threshold = train_and_calibrate(split.train_segments, cfg.n_states, cfg.train, cfg.detector)
    out = Path(args.out)
    _write_text(cfg.path("model", out), serialize_model(training.model))
    _write_text(cfg.path("threshold", out), threshold.to_json())
    _write_text(cfg.path("profiles", out), profiles_json(profiles))
    _write_text(cfg.path("train_report", out), train_report(training, threshold, split))
    print(f"trained on {len(split.train_segments)} of {split.n_segments} segments "
          f"({training.n_iterations} iterations, converged={training.converged})")
    print(f"training log-prob range [{threshold.min_logprob:.4f}, {threshold.max_logprob:.4f}], "
          f"cutoff {threshold.cutoff:.4f}")
    return EXIT_OK


def cmd_score(args, cfg: PipelineConfig) -> int:
    model_dir = Path(args.model_dir or args.out)
    model = deserialize_model(cfg.path("model", model_dir).read_text(encoding="utf-8"), cfg.alphabet)
    threshold = Threshold.from_json(cfg.path("threshold", model_dir).read_text(encoding="utf-8"))
    profiles = cfg.profiles or _load_profiles(cfg.path("profiles", model_dir))
    behavior, presence = _read_logs(cfg, args.in_dir)
    vectors = vectors_from_timeline(build_timeline(behavior, presence, profiles, cfg.registry, cfg.events), cfg.events)
    alerts = detect_stream(model, threshold, vectors, cfg.detector)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(alerts, cfg.path("alerts", out))
    write_jsonl([Interval("", s.start, s.end) for s in build_segments(vectors, cfg.events)], cfg.path("windows", out))
    write_window_scores(window_scores(model, vectors, cfg.detector), threshold.cutoff, cfg.path("window_scores", out))
    spans = merge_alert_spans(alerts, cfg.detector.window_len)
    for span in spans:
        print(f"ALERT {format_ts(span.start)} .. {format_ts(span.end)}  windows={span.n_windows}  "
              f"min_logprob={span.min_logprob:.4f}  sequence={' '.join(ALPHABET.names_of(span.sequence))}")
    print(f"{len(alerts)} alerting window(s) in {len(spans)} span(s); cutoff {threshold.cutoff:.4f}")
    return EXIT_ALERTS if alerts else EXIT_OK


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    in_dir = Path(args.in_dir)
    alerts = read_intervals_from_alerts(Path(args.alerts) if args.alerts else cfg.path("alerts", in_dir))
    labels = read_intervals(Path(args.labels) if args.labels else cfg.path("labels", in_dir))
    windows = read_intervals(Path(args.windows) if args.windows else cfg.path("windows", in_dir))
    cm, _ = evaluate(alerts, labels, windows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(cm, cfg.path("metrics", out))
    table = confusion_table(cm)
    _write_text(cfg.path("confusion", out), table)
    print(table, end="")
    return EXIT_OK


def read_intervals_from_alerts(path: Path) -> list[Interval]:
    """Alert records reduced to (stream, window start, window end)."""
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                out.append(Interval(doc.get("stream", ""), parse_ts(doc["window_start"]), parse_ts(doc["window_end"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise ProtocolError(f"{path}:{lineno}: {exc}") from None
    return out


def cmd_sweep(args, cfg: PipelineConfig) -> int:
    behavior, presence = _read_logs(cfg, args.in_dir)
    split = prepare_split(behavior, presence, cfg.train_fraction, cfg.registry, cfg.events)
    held_out = training_sequences(split.test_segments, cfg.detector)
    if not held_out:
        raise UsageError("test split is shorter than one window")
    rows = []
    for n in args.states:
        training, threshold = train_and_calibrate(split.train_segments, n, cfg.train, cfg.detector)
        ll = sequence_log_likelihoods(training.model, np.array(held_out, dtype=np.int64))
        rows.append({"n_states": n, "train_loglik": training.loglik_trace[-1],
                     "heldout_mean_loglik": float(ll.mean()), "heldout_below_cutoff": int((ll < threshold.cutoff).sum()),
                     "cutoff": threshold.cutoff, "iterations": training.n_iterations})
    print(f"{'N':>3} {'train LL':>12} {'held-out mean':>14} {'below cutoff':>13} {'cutoff':>10}")
    for r in rows:
        print(f"{r['n_states']:>3} {r['train_loglik']:>12.3f} {r['heldout_mean_loglik']:>14.4f} "
              f"{r['heldout_below_cutoff']:>13} {r['cutoff']:>10.4f}")
    out = Path(args.out)
    _write_text(out / "sweep.json", json.dumps(rows, indent=2) + "\n")
    return EXIT_OK


def cmd_benchmark(args, cfg: PipelineConfig) -> int:
    cfg = with_overrides(cfg, days=args.days, seed=args.seed)
    t0 = time.perf_counter()
    result = run_benchmark(cfg)
    write_artifacts(result, cfg, args.out)
    elapsed = time.perf_counter() - t0
    s = result.summary()
    print(f"{s['n_segments']} segments: {s['n_train_segments']} train / {s['n_test_segments']} test; "
          f"cutoff {s['cutoff']:.4f}")
    print(f"{s['n_anomalies']} anomalies, {s['n_normal_units']} normal units")
    print(confusion_table(result.confusion), end="")
    print(f"elapsed {elapsed:.2f} s; artifacts in {args.out}")
    return EXIT_OK


def cmd_scenarios(args, cfg: PipelineConfig) -> int:
    print(catalog_text(routine_spec(cfg)), end="")
    return EXIT_OK


def cmd_config(args, cfg: PipelineConfig) -> int:
    print(dump_default_config(), end="")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "inject": cmd_inject, "train": cmd_train, "score": cmd_score,
    "evaluate": cmd_evaluate, "sweep": cmd_sweep, "benchmark": cmd_benchmark,
    "scenarios": cmd_scenarios, "config": cmd_config,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (RpmHmmError, OSError) as exc:
        print(f"rpmhmm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
