"""Experiment configuration files: INI-style sections, explicit units.

Every key is validated against a schema; unknown sections or keys are
rejected with a section/key diagnostic. Sizes accept B/KB/MB/GB
suffixes (binary units). One file describes one experiment.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import CacheGeometry
from .shutter import ShutterConfig
from .workload import Phase, Scheduler, TimingModel

KINDS = ("single", "interference", "repl_density", "way_freq")


class ConfigError(ValueError):
    """Invalid experiment config; message carries section/key context."""


def _parse_size(text: str) -> int:
    t = text.strip().upper().replace(" ", "")
    units = {"B": 1, "KB": 1024, "MB": 1024**2, "GB": 1024**3}
    for suffix in ("GB", "MB", "KB", "B"):
        if t.endswith(suffix):
            number = t[: -len(suffix)]
            try:
                return int(number) * units[suffix]
            except ValueError:
                raise ConfigError(f"bad size {text!r}") from None
    try:
        return int(t)
    except ValueError:
        raise ConfigError(f"bad size {text!r} (use e.g. '2 MB', '64 B')") from None


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"bad boolean {text!r}")


def _parse_int(text: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"bad integer {text!r}") from None


def _parse_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(t) for t in _parse_list(text)]
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


def _parse_phases(text: str) -> list[Phase]:
    """Phase DSL: 'region:start_pct:end_pct:passes', comma separated."""
    phases = []
    for part in _parse_list(text):
        bits = part.split(":")
        if len(bits) != 4:
            raise ConfigError(f"bad phase {part!r}; want region:start:end:passes")
        region = bits[0] if bits[0].startswith("[") or bits[0] in ("heap", "stack") else f"[{bits[0]}]"
        phases.append(Phase(region, float(bits[1]), float(bits[2]), int(bits[3])))
    return phases


@dataclass
class WorkloadSpec:
    name: str
    pid: int
    benchmark: str
    affinity: int = 0
    priority: int = 0
    params: dict = field(default_factory=dict)


@dataclass
class InterferenceSpec:
    workloads: list[str]
    observed: list[str]
    period: int = 32768
    snapshots: int = 100
    pair_accesses: int = 400_000


@dataclass
class TrialsSpec:
    count: int = 100
    iterations: int = 1
    jobs: int = 1


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    output: str
    geometry: CacheGeometry
    policy: str
    weights: list[float] | None
    pool_frames: int
    pool_huge_blocks: int
    timing: TimingModel
    scheduler: Scheduler
    trigger_mode: str
    trigger_period: int
    trigger_burst: int
    shutter: ShutterConfig
    workloads: list[WorkloadSpec]
    interference: InterferenceSpec | None
    trials: TrialsSpec | None
    raw_text: str


# Per-section key schema: key -> parser
_BENCH_PARAM_PARSERS = {
    "iterations": _parse_int,
    "buffer_kb": _parse_int,
    "repeats": _parse_int,
    "steps": _parse_int,
    "passes_per_step": _parse_int,
    "per_touch_signal": _parse_bool,
    "init_touch": _parse_bool,
    "phases": _parse_phases,
}

_SCHEMAS = {
    "experiment": {"kind": str.strip, "seed": _parse_int, "output": str.strip},
    "geometry": {
        "total_size": _parse_size,
        "ways": _parse_int,
        "line_size": _parse_size,
        "phys_addr_bits": _parse_int,
    },
    "cache": {"policy": str.strip, "weights": _parse_floats},
    "pool": {"frames": _parse_int, "huge_blocks": _parse_int},
    "timing": {"hit_cost": _parse_int, "miss_cost": _parse_int},
    "scheduler": {"kind": str.strip, "cores": _parse_int, "quantum": _parse_int},
    "trigger": {"mode": str.strip, "period": _parse_int, "burst": _parse_int},
    "shutter": {
        "flush": _parse_bool,
        "sync": _parse_bool,
        "resolve": _parse_bool,
        "layout": _parse_bool,
        "hard_invalidate": _parse_bool,
        "trash_lines": _parse_int,
        "pollution_lines": _parse_int,
        "reserved_snapshots": _parse_int,
        "async_activation_delay": _parse_int,
    },
    "interference": {
        "workloads": _parse_list,
        "observed": _parse_list,
        "period": _parse_int,
        "snapshots": _parse_int,
        "pair_accesses": _parse_int,
    },
    "trials": {"count": _parse_int, "iterations": _parse_int, "jobs": _parse_int},
}

_WORKLOAD_KEYS = {
    "pid": _parse_int,
    "benchmark": str.strip,
    "affinity": _parse_int,
    "priority": _parse_int,
}


def _section_dict(parser, section: str, schema: dict) -> dict:
    out = {}
    for key, raw in parser.items(section):
        if key not in schema:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        try:
            out[key] = schema[key](raw)
        except ConfigError as e:
            raise ConfigError(f"[{section}] {key}: {e}") from None
    return out


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=(";",)
    )
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as e:
        raise ConfigError(str(e)) from None

    sections = set(parser.sections())
    workload_sections = sorted(s for s in sections if s.startswith("workload:"))
    for s in sections:
        if s not in _SCHEMAS and not s.startswith("workload:"):
            raise ConfigError(f"unknown section [{s}]")
    if "experiment" not in sections:
        raise ConfigError("missing [experiment] section")

    exp = _section_dict(parser, "experiment", _SCHEMAS["experiment"])
    kind = exp.get("kind", "single")
    if kind not in KINDS:
        raise ConfigError(f"[experiment] kind: unknown kind {kind!r}; choose from {KINDS}")
    if "seed" not in exp:
        raise ConfigError("[experiment] seed is required")
    if "output" not in exp:
        raise ConfigError("[experiment] output is required")

    geom_kw = _section_dict(parser, "geometry", _SCHEMAS["geometry"]) if "geometry" in sections else {}
    try:
        geometry = CacheGeometry(**geom_kw)
    except ValueError as e:
        raise ConfigError(f"[geometry] {e}") from None

    cache_kw = _section_dict(parser, "cache", _SCHEMAS["cache"]) if "cache" in sections else {}
    policy = cache_kw.get("policy", "true_random")
    weights = cache_kw.get("weights")
    if policy == "biased_random":
        if weights is None:
            raise ConfigError("[cache] biased_random requires weights")
        if len(weights) != geometry.ways:
            raise ConfigError(f"[cache] weights: need {geometry.ways} values")
    elif weights is not None:
        raise ConfigError(f"[cache] weights only apply to biased_random, not {policy!r}")

    pool_kw = _section_dict(parser, "pool", _SCHEMAS["pool"]) if "pool" in sections else {}
    timing_kw = _section_dict(parser, "timing", _SCHEMAS["timing"]) if "timing" in sections else {}
    try:
        timing = TimingModel(**timing_kw)
    except ValueError as e:
        raise ConfigError(f"[timing] {e}") from None

    sched_kw = _section_dict(parser, "scheduler", _SCHEMAS["scheduler"]) if "scheduler" in sections else {}
    try:
        scheduler = Scheduler(**sched_kw)
    except ValueError as e:
        raise ConfigError(f"[scheduler] {e}") from None

    trig_kw = _section_dict(parser, "trigger", _SCHEMAS["trigger"]) if "trigger" in sections else {}
    trigger_mode = trig_kw.get("mode", "periodic")
    if trigger_mode not in ("periodic", "event"):
        raise ConfigError(f"[trigger] mode: unknown mode {trigger_mode!r}")
    trigger_period = trig_kw.get("period", 16384)
    if trigger_period < 1:
        raise ConfigError("[trigger] period must be >= 1")
    trigger_burst = trig_kw.get("burst", 1)
    if trigger_burst < 1:
        raise ConfigError("[trigger] burst must be >= 1")

    shut_kw = _section_dict(parser, "shutter", _SCHEMAS["shutter"]) if "shutter" in sections else {}
    reserved = shut_kw.pop("reserved_snapshots", 0)
    shutter = ShutterConfig(
        flush=shut_kw.pop("flush", False),
        sync=shut_kw.pop("sync", True),
        resolve=shut_kw.pop("resolve", True),
        capture_layout=shut_kw.pop("layout", False),
        trash_lines=shut_kw.pop("trash_lines", 0),
        hard_invalidate=shut_kw.pop("hard_invalidate", True),
        pollution_lines=shut_kw.pop("pollution_lines", 0),
        reserved_snapshots=reserved if reserved > 0 else None,
        async_activation_delay=shut_kw.pop("async_activation_delay", 0),
    )

    workloads = []
    for sec in workload_sections:
        name = sec.split(":", 1)[1]
        if not name:
            raise ConfigError(f"[{sec}] empty workload name")
        raw = dict(parser.items(sec))
        spec_kw = {}
        params = {}
        for key, value in raw.items():
            if key in _WORKLOAD_KEYS:
                spec_kw[key] = _WORKLOAD_KEYS[key](value)
            elif key in _BENCH_PARAM_PARSERS:
                try:
                    params[key] = _BENCH_PARAM_PARSERS[key](value)
                except ConfigError as e:
                    raise ConfigError(f"[{sec}] {key}: {e}") from None
            else:
                raise ConfigError(f"[{sec}] unknown key {key!r}")
        if "pid" not in spec_kw or "benchmark" not in spec_kw:
            raise ConfigError(f"[{sec}] needs pid and benchmark")
        workloads.append(WorkloadSpec(name=name, params=params, **spec_kw))
    pids = [w.pid for w in workloads]
    if len(set(pids)) != len(pids):
        raise ConfigError("workload pids must be unique")

    interference = None
    if "interference" in sections:
        ikw = _section_dict(parser, "interference", _SCHEMAS["interference"])
        if "workloads" not in ikw:
            raise ConfigError("[interference] workloads is required")
        interference = InterferenceSpec(
            workloads=ikw["workloads"],
            observed=ikw.get("observed", ikw["workloads"]),
            period=ikw.get("period", 32768),
            snapshots=ikw.get("snapshots", 100),
            pair_accesses=ikw.get("pair_accesses", 400_000),
        )
        for name in interference.observed:
            if name not in interference.workloads:
                raise ConfigError(f"[interference] observed {name!r} not in workloads")

    trials = None
    if "trials" in sections:
        tkw = _section_dict(parser, "trials", _SCHEMAS["trials"])
        trials = TrialsSpec(**tkw)
        if trials.count < 1:
            raise ConfigError("[trials] count must be >= 1")
        if trials.jobs < 1:
            raise ConfigError("[trials] jobs must be >= 1")

    if kind == "single" and not workloads:
        raise ConfigError("kind 'single' needs at least one [workload:*] section")
    if kind == "interference" and interference is None:
        raise ConfigError("kind 'interference' needs an [interference] section")
    if kind in ("repl_density", "way_freq") and trials is None:
        trials = TrialsSpec()

    return ExperimentConfig(
        kind=kind,
        seed=exp["seed"],
        output=exp["output"],
        geometry=geometry,
        policy=policy,
        weights=weights,
        pool_frames=pool_kw.get("frames", 65536),
        pool_huge_blocks=pool_kw.get("huge_blocks", 4),
        timing=timing,
        scheduler=scheduler,
        trigger_mode=trigger_mode,
        trigger_period=trigger_period,
        trigger_burst=trigger_burst,
        shutter=shutter,
        workloads=workloads,
        interference=interference,
        trials=trials,
        raw_text=text,
    )
