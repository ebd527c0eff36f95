"""Single YAML configuration driving every pipeline stage."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .alphabet import ALPHABET, DEVICE_KINDS, DeviceRegistry
from .detector import DetectorConfig
from .discretizer import DeviceProfile
from .errors import ConfigError, RpmHmmError
from .hmm import TrainConfig
from .pipeline import EventSettings

CONFIG_ENV = "RPMHMM_CONFIG"


@dataclass(frozen=True)
class SimulationSettings:
    days: int = 21
    seed: int = 7
    scenario_frame_min: float = 10.0


@dataclass(frozen=True)
class BenchmarkSettings:
    random_anomalies: int = 38
    scenarios: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    seed: int = 11


@dataclass(frozen=True)
class PathSettings:
    """Artifact file names, resolved against the ``--out`` directory."""

    behavior_log: str = "behavior.jsonl"
    presence_log: str = "presence.jsonl"
    model: str = "model.json"
    threshold: str = "threshold.json"
    profiles: str = "profiles.json"
    train_report: str = "train_report.json"
    alerts: str = "alerts.jsonl"
    labels: str = "labels.jsonl"
    windows: str = "windows.jsonl"
    metrics: str = "metrics.json"
    confusion: str = "confusion.txt"
    window_scores: str = "window_scores.csv"


@dataclass(frozen=True)
class PipelineConfig:
    alphabet: str = ALPHABET.tag
    devices: dict[str, str] = field(default_factory=lambda: {k: k for k in DEVICE_KINDS})
    profiles: dict[str, DeviceProfile] = field(default_factory=dict)
    events: EventSettings = EventSettings()
    n_states: int = 8
    train: TrainConfig = TrainConfig()
    detector: DetectorConfig = DetectorConfig()
    train_fraction: float = 0.7
    simulation: SimulationSettings = SimulationSettings()
    benchmark: BenchmarkSettings = BenchmarkSettings()
    paths: PathSettings = PathSettings()

    @property
    def registry(self) -> DeviceRegistry:
        return DeviceRegistry(self.devices)

    def path(self, name: str, out_dir: str | Path = ".") -> Path:
        return Path(out_dir) / getattr(self.paths, name)


# -- loading ---------------------------------------------------------------

def _line_index(node, prefix=()) -> dict[tuple, int]:
    """Map each key path in a composed YAML tree to its 1-based line."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = (*prefix, k.value)
            out[path] = k.start_mark.line + 1
            out.update(_line_index(v, path))
    return out


class _Reader:
    def __init__(self, doc: dict, lines: dict[tuple, int], source: str):
        self.doc, self.lines, self.source = doc, lines, source

    def fail(self, path: tuple, message: str):
        line = self.lines.get(path)
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: {'.'.join(map(str, path))}: {message}")

    def section(self, name: str) -> dict:
        value = self.doc.get(name, {})
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail((name,), "expected a mapping")
        return value

    def build(self, cls, name: str):
        """Instantiate a settings dataclass from section ``name``, type-checking each field."""
        raw = self.section(name)
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                self.fail((name, key), f"unknown key (expected one of: {', '.join(sorted(known))})")
            kwargs[key] = self.coerce((name, key), known[key], value)
        try:
            return cls(**kwargs)
        except (RpmHmmError, ValueError, TypeError) as exc:
            self.fail((name,), str(exc))

    def coerce(self, path, f, value):
        default = f.default
        if isinstance(default, bool):
            ok = isinstance(value, bool)
        elif isinstance(default, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif isinstance(default, float):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            value = float(value) if ok else value
        elif isinstance(default, str):
            ok = isinstance(value, str)
        elif isinstance(default, tuple):
            ok = isinstance(value, list)
            value = tuple(value) if ok else value
        else:
            ok = True
        if not ok:
            self.fail(path, f"expected {type(default).__name__}, got {value!r}")
        return value


_TOP_KEYS = {"alphabet", "devices", "profiles", "events", "hmm", "detector", "train_fraction",
             "simulation", "benchmark", "paths"}


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    try:
        node = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    r = _Reader(doc, _line_index(node), source)
    for key in doc:
        if key not in _TOP_KEYS:
            r.fail((key,), f"unknown key (expected one of: {', '.join(sorted(_TOP_KEYS))})")

    cfg = PipelineConfig()
    alphabet = doc.get("alphabet", cfg.alphabet)
    if alphabet != ALPHABET.tag:
        r.fail(("alphabet",), f"unsupported alphabet {alphabet!r}; this build provides {ALPHABET.tag!r}")

    devices = r.section("devices") or dict(cfg.devices)
    for dev, kind in devices.items():
        if kind not in DEVICE_KINDS:
            r.fail(("devices", dev), f"unknown device kind {kind!r}")

    profiles = {}
    for kind, body in r.section("profiles").items():
        if not isinstance(body, dict):
            r.fail(("profiles", kind), "expected a mapping with mu and sigma")
        try:
            profiles[kind] = DeviceProfile.from_dict({"kind": kind, **body})
        except RpmHmmError as exc:
            r.fail(("profiles", kind), str(exc))

    hmm_raw = r.section("hmm")
    n_states = hmm_raw.get("n_states", cfg.n_states)
    if not isinstance(n_states, int) or isinstance(n_states, bool) or n_states < 1:
        r.fail(("hmm", "n_states"), f"expected a positive integer, got {n_states!r}")
    r.doc = {**doc, "hmm": {k: v for k, v in hmm_raw.items() if k != "n_states"}}
    train = r.build(TrainConfig, "hmm")
    r.doc = doc

    fraction = doc.get("train_fraction", cfg.train_fraction)
    if not isinstance(fraction, (int, float)) or isinstance(fraction, bool) or not 0 < fraction < 1:
        r.fail(("train_fraction",), f"expected a number in (0, 1), got {fraction!r}")

    cfg = PipelineConfig(
        alphabet=alphabet,
        devices=dict(devices),
        profiles=profiles,
        events=r.build(EventSettings, "events"),
        n_states=n_states,
        train=train,
        detector=r.build(DetectorConfig, "detector"),
        train_fraction=float(fraction),
        simulation=r.build(SimulationSettings, "simulation"),
        benchmark=r.build(BenchmarkSettings, "benchmark"),
        paths=r.build(PathSettings, "paths"),
    )
    bad = [s for s in cfg.benchmark.scenarios if s not in range(1, 9)]
    if bad:
        r.fail(("benchmark", "scenarios"), f"scenario ids must be 1-8, got {bad}")
    names = [getattr(cfg.paths, f.name) for f in fields(PathSettings)]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        r.fail(("paths",), f"paths must be distinct; repeated: {', '.join(dupes)}")
    return cfg


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Load ``path``, else ``$RPMHMM_CONFIG``, else the built-in defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return PipelineConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def with_overrides(cfg: PipelineConfig, **sim) -> PipelineConfig:
    """Replace simulation settings given on the command line (None means keep)."""
    changes = {k: v for k, v in sim.items() if v is not None}
    return replace(cfg, simulation=replace(cfg.simulation, **changes)) if changes else cfg


def dump_default_config() -> str:
    cfg = PipelineConfig()
    doc: dict[str, Any] = {
        "alphabet": cfg.alphabet,
        "devices": cfg.devices,
        "events": {f.name: getattr(cfg.events, f.name) for f in fields(EventSettings)},
        "hmm": {"n_states": cfg.n_states, **{f.name: getattr(cfg.train, f.name) for f in fields(TrainConfig)}},
        "detector": {f.name: getattr(cfg.detector, f.name) for f in fields(DetectorConfig)},
        "train_fraction": cfg.train_fraction,
        "simulation": {f.name: getattr(cfg.simulation, f.name) for f in fields(SimulationSettings)},
        "benchmark": {"random_anomalies": cfg.benchmark.random_anomalies,
                      "scenarios": list(cfg.benchmark.scenarios), "seed": cfg.benchmark.seed},
        "paths": {f.name: getattr(cfg.paths, f.name) for f in fields(PathSettings)},
    }
    return yaml.safe_dump(doc, sort_keys=False)
