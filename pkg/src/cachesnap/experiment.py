"""Experiment orchestration: seeded machines, trigger wiring, the four
experiment kinds, and the on-disk snapshot store.

Store layout (under the experiment's output directory):
    manifest.json               config hash, seed, tool version, geometry
    runresult.json              per-pid stats and the event log
    snapshots/NNNNNN.cfsnap     one file per snapshot (+ .maps sidecar)
    profiles/<name>/...         interference kind: one store per workload
    slowdowns.csv               interference kind: measured ground truth
    trials/NNNN/NNNNNN.cfsnap   repl kinds: one store per trial
    reports/*.csv               written later by `analyze`

Everything is derived deterministically from the master seed, so a
store can be reproduced bit-identically from its config file alone.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .cache import CacheState, make_policy
from .config import ExperimentConfig, InterferenceSpec, WorkloadSpec
from .geometry import CacheGeometry
from .shutter import (
    ShutterConfig,
    Snapshot,
    SnapshotStore,
    acquire,
    deserialize,
    inject_pollution,
    parse_sidecar,
    render_sidecar,
    serialize,
)
from .vm import FramePool, VirtualMemory
from .workload import (
    AllocRegion,
    Engine,
    RunResult,
    Scheduler,
    TaskSpec,
    TimingModel,
    TouchLines,
    TriggerSpec,
    build_benchmark,
    program_access_count,
)


def derive_seed(master: int, *labels) -> int:
    """Stable sub-seed: collision-resistant, independent of hash randomization."""
    text = ":".join([str(master)] + [str(l) for l in labels])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


@dataclass
class Machine:
    geometry: CacheGeometry
    cache: CacheState
    vm: VirtualMemory


def make_machine(
    geometry: CacheGeometry,
    policy: str,
    policy_seed: int,
    pool_seed: int,
    weights=None,
    pool_frames: int = 65536,
    pool_huge_blocks: int = 4,
) -> Machine:
    pool = FramePool(frames=pool_frames, seed=pool_seed, huge_blocks=pool_huge_blocks)
    return Machine(
        geometry=geometry,
        cache=CacheState(geometry, make_policy(policy, policy_seed, weights=weights)),
        vm=VirtualMemory(pool),
    )


def make_trigger_hook(machine: Machine, shutter: ShutterConfig, store: SnapshotStore):
    """Standard acquisition hook: pause, sweep, attribute, post-process.

    In sync mode the observed tasks stay paused through post-processing
    (flush traffic runs atomically); in async mode other cores may
    advance during the activation window and while queued flush traffic
    drains.
    """

    def hook(engine: Engine, core: int) -> None:
        observed = engine.observed_pids()
        if shutter.sync:
            engine.log_signals("pause", engine.running_pids())
        elif shutter.async_activation_delay:
            engine.advance_other_cores(shutter.async_activation_delay, core)
        snap = acquire(
            machine.cache,
            machine.vm,
            shutter,
            sequence=len(store),
            timestamp=engine.workload_clock,
            observed_pids=observed,
        )
        store.add(snap)
        if shutter.pollution_lines:
            engine.do_trash(shutter.pollution_lines)
        if shutter.flush:
            if shutter.hard_invalidate:
                machine.cache.invalidate_all()
            if shutter.trash_lines:
                if shutter.sync:
                    engine.do_trash(shutter.trash_lines)
                else:
                    engine.queue_trash(shutter.trash_lines)
        if shutter.sync:
            engine.log_signals("resume", engine.running_pids())

    return hook


# -- single-run experiments --------------------------------------------------


def build_workload_program(spec: WorkloadSpec, geometry: CacheGeometry):
    return build_benchmark(spec.benchmark, geometry, **spec.params)


def run_single(cfg: ExperimentConfig) -> tuple[SnapshotStore, RunResult]:
    """Run one scheduled workload mix with the configured trigger."""
    machine = make_machine(
        cfg.geometry,
        cfg.policy,
        derive_seed(cfg.seed, "policy"),
        derive_seed(cfg.seed, "pool"),
        weights=cfg.weights,
        pool_frames=cfg.pool_frames,
        pool_huge_blocks=cfg.pool_huge_blocks,
    )
    store = SnapshotStore(capacity=None if cfg.shutter.flush else cfg.shutter.reserved_snapshots)
    trigger = TriggerSpec(
        mode=cfg.trigger_mode,
        period=cfg.trigger_period,
        burst=cfg.trigger_burst,
        hook=make_trigger_hook(machine, cfg.shutter, store),
    )
    tasks = [
        TaskSpec(w.pid, build_workload_program(w, cfg.geometry), w.affinity, w.priority)
        for w in cfg.workloads
    ]
    for t in tasks:
        machine.vm.register_process(t.pid)
    engine = Engine(
        tasks, cfg.scheduler, machine.cache, machine.vm, cfg.timing, trigger
    )
    result = engine.run()
    return store, result


# -- repl trial protocol -----------------------------------------------------

WARM_PID = 1
PROBE_PID = 2


def repl_trial(
    geometry: CacheGeometry,
    policy: str,
    policy_seed: int,
    iterations: int = 1,
    per_touch_signal: bool = False,
    weights=None,
    resolve: bool | None = None,
    pool_seed: int = 0,
) -> list[Snapshot]:
    """One replacement-policy probe trial; returns its snapshots.

    A warm task first fills the target set with its own colliding lines,
    so every probe touch forces a replacement decision. The probe task
    then touches the `ways` lines of its own cache-sized huge buffer
    that collide in set 0 and signals the trigger: once at the end
    (density protocol) or around every touch (way-frequency protocol,
    which needs one extra baseline snapshot before the first touch).
    """
    # both tasks live entirely in huge buffers; an all-huge pool keeps
    # per-trial setup cheap across thousands of trials (no shuffle)
    huge_blocks = 2 * max(1, geometry.total_size // (2 * 1024 * 1024))
    machine = make_machine(
        geometry,
        policy,
        policy_seed,
        pool_seed,
        weights=weights,
        pool_frames=huge_blocks * 512,
        pool_huge_blocks=huge_blocks,
    )
    offsets = tuple(i * geometry.way_size for i in range(geometry.ways))
    warm_prog = [
        AllocRegion("[anon]", geometry.total_size, huge=True),
        TouchLines("[anon]", offsets),
    ]
    probe_prog = build_benchmark(
        "repl", geometry, iterations=iterations, per_touch_signal=per_touch_signal
    )
    shutter = ShutterConfig(
        flush=False,
        sync=True,
        resolve=(not per_touch_signal) if resolve is None else resolve,
        capture_layout=False,
        reserved_snapshots=geometry.ways + 1 if per_touch_signal else 1,
    )
    store = SnapshotStore(capacity=shutter.reserved_snapshots)
    trigger = TriggerSpec(mode="event", hook=make_trigger_hook(machine, shutter, store))
    tasks = [
        TaskSpec(WARM_PID, warm_prog, 0, priority=2),
        TaskSpec(PROBE_PID, probe_prog, 0, priority=1),
    ]
    for t in tasks:
        machine.vm.register_process(t.pid)
    Engine(tasks, Scheduler("fixed_priority", 1), machine.cache, machine.vm, trigger=trigger).run()
    return store.snapshots


def density_trial_snapshots(
    geometry: CacheGeometry,
    policy: str,
    seed: int,
    iterations: int,
    trials: int,
    weights=None,
):
    """Generator of one snapshot per trial (density protocol)."""
    for i in range(trials):
        snaps = repl_trial(
            geometry,
            policy,
            derive_seed(seed, "trial", i, "policy"),
            iterations=iterations,
            weights=weights,
        )
        yield snaps[0]


def way_freq_trial_pairs(
    geometry: CacheGeometry,
    policy: str,
    seed: int,
    runs: int,
    weights=None,
):
    """Generator of consecutive snapshot pairs (way-frequency protocol)."""
    for i in range(runs):
        snaps = repl_trial(
            geometry,
            policy,
            derive_seed(seed, "trial", i, "policy"),
            per_touch_signal=True,
            weights=weights,
        )
        for before, after in zip(snaps, snaps[1:]):
            yield before, after


# -- interference suite -------------------------------------------------------


@dataclass
class InterferenceResult:
    """Isolation profiles plus measured pairwise slowdown ground truth."""

    profile_snapshots: dict[str, list[Snapshot]]
    profile_pids: dict[str, int]
    slowdowns: dict[tuple[str, str], float]
    geometry: CacheGeometry


def _sized_program(name, spec_by_name, geometry, target_accesses):
    """Build the named workload, repeated to cover target_accesses."""
    if name in spec_by_name:
        w = spec_by_name[name]
        bench, params = w.benchmark, dict(w.params)
    else:
        bench, params = name, {}
    key = "repeats" if bench not in ("synth", "bomb") else "iterations"
    params[key] = 1
    unit = program_access_count(build_benchmark(bench, geometry, **params),
                                geometry.line_size)
    params[key] = max(1, math.ceil(target_accesses / unit))
    return build_benchmark(bench, geometry, **params)


def interference_suite(
    cfg_geometry: CacheGeometry,
    spec: InterferenceSpec,
    seed: int,
    policy: str = "true_random",
    timing: TimingModel | None = None,
    workload_specs: list[WorkloadSpec] | None = None,
    weights=None,
) -> InterferenceResult:
    """Profile each workload in isolation, then measure pairwise slowdown.

    Isolation runs use flush-mode periodic snapshotting (hard
    invalidate), so each snapshot holds exactly the lines touched in its
    window. Slowdown runs use two cores, no snapshotting, and identical
    seeds for the alone/paired measurements of each observed workload.
    """
    timing = timing or TimingModel()
    spec_by_name = {w.name: w for w in (workload_specs or [])}
    geometry = cfg_geometry
    profile_snaps: dict[str, list[Snapshot]] = {}
    profile_pids: dict[str, int] = {}
    shutter = ShutterConfig(flush=True, sync=True, resolve=True, hard_invalidate=True)

    for i, name in enumerate(spec.workloads):
        pid = i + 1
        target = spec.snapshots * spec.period
        prog = _sized_program(name, spec_by_name, geometry, target)
        machine = make_machine(
            geometry,
            policy,
            derive_seed(seed, "profile", name, "policy"),
            derive_seed(seed, "profile", name, "pool"),
            weights=weights,
        )
        store = SnapshotStore()
        trigger = TriggerSpec(
            mode="periodic", period=spec.period, hook=make_trigger_hook(machine, shutter, store)
        )
        machine.vm.register_process(pid)
        Engine(
            [TaskSpec(pid, prog, 0)], Scheduler("cfs", 1), machine.cache, machine.vm,
            timing, trigger,
        ).run()
        profile_snaps[name] = store.snapshots
        profile_pids[name] = pid

    slowdowns: dict[tuple[str, str], float] = {}
    for obs in spec.observed:
        pool_seed = derive_seed(seed, "pair", obs, "pool")
        policy_seed = derive_seed(seed, "pair", obs, "policy")
        obs_prog = _sized_program(obs, spec_by_name, geometry, spec.pair_accesses)
        obs_len = program_access_count(obs_prog, geometry.line_size)

        def fresh_machine():
            return make_machine(geometry, policy, policy_seed, pool_seed, weights=weights)

        m = fresh_machine()
        m.vm.register_process(1)
        alone = Engine(
            [TaskSpec(1, obs_prog, 0)], Scheduler("cfs", 2), m.cache, m.vm, timing
        ).run()
        base_cycles = alone.cycles(1)
        for intf in spec.workloads:
            # interferer sized to outlast the observed program
            intf_prog = _sized_program(intf, spec_by_name, geometry, 2 * obs_len)
            m2 = fresh_machine()
            m2.vm.register_process(1)
            m2.vm.register_process(2)
            both = Engine(
                [TaskSpec(1, obs_prog, 0), TaskSpec(2, intf_prog, 1)],
                Scheduler("cfs", 2),
                m2.cache,
                m2.vm,
                timing,
                stop_on=1,
            ).run()
            slowdowns[(obs, intf)] = both.cycles(1) / base_cycles
    return InterferenceResult(
        profile_snapshots=profile_snaps,
        profile_pids=profile_pids,
        slowdowns=slowdowns,
        geometry=geometry,
    )


# -- store I/O ----------------------------------------------------------------


def write_snapshot_file(directory: Path, snap: Snapshot) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{snap.sequence:06d}.cfsnap"
    path.write_bytes(serialize(snap))
    if snap.layouts is not None:
        (directory / f"{snap.sequence:06d}.maps").write_text(render_sidecar(snap.layouts))
    return path


def load_snapshot_file(path: Path) -> Snapshot:
    snap = deserialize(path.read_bytes())
    sidecar = path.with_suffix(".maps")
    if sidecar.exists():
        snap.layouts = parse_sidecar(sidecar.read_text())
    return snap


def load_store_dir(directory: Path) -> list[Snapshot]:
    files = sorted(Path(directory).glob("*.cfsnap"))
    if not files:
        raise FileNotFoundError(f"no .cfsnap files under {directory}")
    return [load_snapshot_file(p) for p in files]


def _runresult_json(result: RunResult) -> str:
    doc = {
        "total_accesses": result.total_accesses,
        "snapshots_taken": result.snapshots_taken,
        "per_pid": {
            str(pid): {
                "accesses": st.accesses,
                "hits": st.hits,
                "misses": st.misses,
                "cycles": st.cycles,
            }
            for pid, st in sorted(result.per_pid.items())
        },
        "events": [[e.clock, e.kind, e.pid, e.core, e.info] for e in result.events],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def write_manifest(out: Path, cfg: ExperimentConfig, extra: dict | None = None) -> None:
    g = cfg.geometry
    doc = {
        "tool": "cachesnap",
        "version": __version__,
        "kind": cfg.kind,
        "seed": cfg.seed,
        "config_sha256": hashlib.sha256(cfg.raw_text.encode()).hexdigest(),
        "policy": cfg.policy,
        "geometry": {
            "total_size": g.total_size,
            "ways": g.ways,
            "line_size": g.line_size,
            "phys_addr_bits": g.phys_addr_bits,
        },
    }
    if extra:
        doc.update(extra)
    (out / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


# -- on-disk drivers per experiment kind ---------------------------------------


def _density_trial_bytes(args) -> tuple[int, bytes]:
    geom_kw, policy, weights, seed, iterations, index = args
    geometry = CacheGeometry(**geom_kw)
    snaps = repl_trial(
        geometry,
        policy,
        derive_seed(seed, "trial", index, "policy"),
        iterations=iterations,
        weights=weights,
    )
    return index, serialize(snaps[0])


def _way_freq_trial_bytes(args) -> tuple[int, list[bytes]]:
    geom_kw, policy, weights, seed, index = args
    geometry = CacheGeometry(**geom_kw)
    snaps = repl_trial(
        geometry,
        policy,
        derive_seed(seed, "trial", index, "policy"),
        per_touch_signal=True,
        weights=weights,
    )
    return index, [serialize(s) for s in snaps]


def _geom_kw(g: CacheGeometry) -> dict:
    return {
        "total_size": g.total_size,
        "ways": g.ways,
        "line_size": g.line_size,
        "phys_addr_bits": g.phys_addr_bits,
    }


def run_experiment(cfg: ExperimentConfig, out: Path) -> None:
    """Execute the experiment described by cfg, writing the store to out."""
    out.mkdir(parents=True, exist_ok=True)
    if cfg.kind == "single":
        store, result = run_single(cfg)
        for snap in store:
            write_snapshot_file(out / "snapshots", snap)
        (out / "runresult.json").write_text(_runresult_json(result))
        write_manifest(out, cfg, {"snapshots": len(store)})
        return
    if cfg.kind == "interference":
        res = interference_suite(
            cfg.geometry,
            cfg.interference,
            cfg.seed,
            policy=cfg.policy,
            timing=cfg.timing,
            workload_specs=cfg.workloads,
            weights=cfg.weights,
        )
        for name, snaps in res.profile_snapshots.items():
            for snap in snaps:
                write_snapshot_file(out / "profiles" / name / "snapshots", snap)
        rows = ["# schema: observed,interferer,slowdown"]
        rows.append("observed,interferer,slowdown")
        for (obs, intf), value in sorted(res.slowdowns.items()):
            rows.append(f"{obs},{intf},{value:.6f}")
        (out / "slowdowns.csv").write_text("\n".join(rows) + "\n")
        write_manifest(
            out,
            cfg,
            {
                "workloads": cfg.interference.workloads,
                "observed": cfg.interference.observed,
                "profile_pids": {
                    name: res.profile_pids[name] for name in cfg.interference.workloads
                },
            },
        )
        return
    if cfg.kind in ("repl_density", "way_freq"):
        trials = cfg.trials
        geom_kw = _geom_kw(cfg.geometry)
        if cfg.kind == "repl_density":
            worker = _density_trial_bytes
            args = [
                (geom_kw, cfg.policy, cfg.weights, cfg.seed, trials.iterations, i)
                for i in range(trials.count)
            ]
        else:
            worker = _way_freq_trial_bytes
            args = [
                (geom_kw, cfg.policy, cfg.weights, cfg.seed, i) for i in range(trials.count)
            ]
        if trials.jobs > 1:
            with ProcessPoolExecutor(max_workers=trials.jobs) as pool:
                results = list(pool.map(worker, args))
        else:
            results = [worker(a) for a in args]
        results.sort(key=lambda r: r[0])
        for index, payload in results:
            tdir = out / "trials" / f"{index:04d}"
            tdir.mkdir(parents=True, exist_ok=True)
            blobs = payload if isinstance(payload, list) else [payload]
            for snap_bytes in blobs:
                seq = deserialize(snap_bytes).sequence
                (tdir / f"{seq:06d}.cfsnap").write_bytes(snap_bytes)
        write_manifest(
            out,
            cfg,
            {
                "trials": trials.count,
                "iterations": trials.iterations if cfg.kind == "repl_density" else None,
                "probe_pid": PROBE_PID,
            },
        )
        return
    raise ValueError(f"unknown experiment kind {cfg.kind!r}")
