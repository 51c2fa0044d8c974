"""Synthetic workloads, deterministic scheduling, and the access-driven engine.

Time is counted in memory accesses, one line-granular access per step;
a timing model converts per-pid hit/miss counts into cycles after the
fact. The engine interleaves simulated cores round-robin one access at
a time, fires the snapshot trigger periodically or on request, and logs
faults, signals, context switches, and pause/resume pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .cache import CacheState
from .geometry import CacheGeometry, DEFAULT_GEOMETRY
from .vm import VirtualMemory


# -- program model --------------------------------------------------------


@dataclass(frozen=True)
class WriteRange:
    region: str
    start: int
    length: int


@dataclass(frozen=True)
class ReadRange:
    region: str
    start: int
    length: int


@dataclass(frozen=True)
class TouchLines:
    """Read a list of line offsets (bytes, line aligned) within a region."""

    region: str
    offsets: tuple[int, ...]


@dataclass(frozen=True)
class Loop:
    count: int
    body: tuple


@dataclass(frozen=True)
class SignalTrigger:
    """Ask the trigger for a snapshot (event-based activation)."""


@dataclass(frozen=True)
class AllocRegion:
    name: str
    size: int
    huge: bool = False


Program = list


def _check_instruction(ins, known_regions: set, line_size: int) -> None:
    if isinstance(ins, AllocRegion):
        if ins.size <= 0:
            raise ValueError(f"AllocRegion {ins.name}: size must be positive")
        known_regions.add(ins.name)
    elif isinstance(ins, (WriteRange, ReadRange)):
        if ins.length <= 0:
            raise ValueError("range length must be positive")
        if ins.region not in known_regions:
            raise ValueError(f"range references region {ins.region!r} before allocation")
    elif isinstance(ins, TouchLines):
        if ins.region not in known_regions:
            raise ValueError(f"touch references region {ins.region!r} before allocation")
    elif isinstance(ins, Loop):
        if ins.count <= 0:
            raise ValueError("loop count must be positive")
        for sub in ins.body:
            _check_instruction(sub, known_regions, line_size)
    elif not isinstance(ins, SignalTrigger):
        raise TypeError(f"unknown instruction {ins!r}")


def validate_program(program: Program, line_size: int = 64) -> None:
    """Static checks: positive lengths, regions allocated before use.

    The default process layout (text/heap/glibc/stack) counts as
    pre-allocated.
    """
    known = {"text", "heap", "glibc", "stack"}
    for ins in program:
        _check_instruction(ins, known, line_size)


def program_access_count(program: Program, line_size: int = 64) -> int:
    """Number of memory accesses the program expands to."""
    total = 0
    for ins in program:
        if isinstance(ins, (WriteRange, ReadRange)):
            total += math.ceil(ins.length / line_size)
        elif isinstance(ins, TouchLines):
            total += len(ins.offsets)
        elif isinstance(ins, Loop):
            total += ins.count * program_access_count(list(ins.body), line_size)
    return total


# -- benchmark builders ----------------------------------------------------

KB = 1024


@dataclass(frozen=True)
class Phase:
    """One scan phase of a vision-style benchmark.

    Scans [start_pct, end_pct) of the region `passes` times; the first
    pass writes, the rest read.
    """

    region: str
    start_pct: float
    end_pct: float
    passes: int


_VISION_PRESETS: dict[str, tuple[int, tuple[Phase, ...]]] = {
    # buffer bytes, phase script (percentages of the region size)
    "disparity_like": (
        1280 * KB,
        (
            Phase("[anon]", 0, 100, 2),
            Phase("[anon]", 35, 80, 12),
            Phase("heap", 0, 25, 2),
        ),
    ),
    "mser_like": (
        512 * KB,
        (
            Phase("[anon]", 0, 100, 2),
            Phase("[anon]", 20, 45, 6),
            Phase("[anon]", 60, 100, 3),
        ),
    ),
    "sift_like": (
        1024 * KB,
        (
            Phase("[anon]", 0, 100, 1),
            Phase("[anon]", 10, 35, 5),
            Phase("[anon]", 55, 80, 5),
            Phase("[anon]", 25, 100, 2),
        ),
    ),
    "track_like": (
        256 * KB,
        (
            Phase("[anon]", 0, 100, 6),
            Phase("[anon]", 40, 60, 6),
        ),
    ),
}

BENCHMARK_NAMES = ("synth", "synth_step", "bomb", "repl", "vision_analogue") + tuple(
    _VISION_PRESETS
)


def _phase_instructions(phase: Phase, region_size: int, line_size: int) -> tuple:
    span = region_size
    start = int(span * phase.start_pct / 100) // line_size * line_size
    end = int(span * phase.end_pct / 100) // line_size * line_size
    length = end - start
    if length <= 0:
        raise ValueError(f"phase {phase} selects an empty span")
    out = [WriteRange(phase.region, start, length)]
    out.extend(ReadRange(phase.region, start, length) for _ in range(phase.passes - 1))
    return tuple(out)


def build_benchmark(
    name: str, geometry: CacheGeometry = DEFAULT_GEOMETRY, **params
) -> Program:
    """Construct one of the named synthetic workloads.

    synth: two half-buffer scans, full write then full read on each
        buffer per iteration (params: buffer_kb=512, iterations=3,
        init_touch=True).
    synth_step: staircase working set; step i scans the first
        i/steps fraction of the buffer (params: buffer_kb, steps,
        passes_per_step).
    bomb: sequential read loop over a buffer larger than the cache
        (params: buffer_kb=2560, iterations=4).
    repl: cache-sized huge allocation; touches the `ways` lines that
        collide in one set a configurable number of times, then signals
        the trigger (params: iterations=1, per_touch_signal=False).
    vision_analogue: phase-scripted scan mix (params: buffer_kb,
        phases=[Phase...], repeats=1). The *_like presets are canned
        vision_analogue parameterizations.
    """
    ls = geometry.line_size
    if name == "synth":
        buffer_kb = params.pop("buffer_kb", 512)
        iterations = params.pop("iterations", 3)
        init_touch = params.pop("init_touch", True)
        _reject_extras(name, params)
        buf = buffer_kb * KB
        prog: Program = []
        if init_touch:
            prog += [
                ReadRange("text", 0, 128 * KB),
                ReadRange("stack", 0, 64 * KB),
                ReadRange("glibc", 0, 256 * KB),
            ]
        prog.append(AllocRegion("[anon]", 2 * buf))
        prog.append(
            Loop(
                iterations,
                (
                    WriteRange("[anon]", 0, buf),
                    ReadRange("[anon]", 0, buf),
                    WriteRange("[anon]", buf, buf),
                    ReadRange("[anon]", buf, buf),
                ),
            )
        )
        return prog
    if name == "synth_step":
        buffer_kb = params.pop("buffer_kb", 512)
        steps = params.pop("steps", 8)
        passes = params.pop("passes_per_step", 2)
        _reject_extras(name, params)
        buf = buffer_kb * KB
        prog = [AllocRegion("[anon]", buf)]
        for i in range(1, steps + 1):
            length = (buf * i // steps) // ls * ls
            prog.append(Loop(passes, (WriteRange("[anon]", 0, length),)))
        return prog
    if name == "bomb":
        buffer_kb = params.pop("buffer_kb", 2560)
        iterations = params.pop("iterations", 4)
        huge = params.pop("huge", False)
        _reject_extras(name, params)
        buf = buffer_kb * KB
        return [
            AllocRegion("[anon]", buf, huge=huge),
            Loop(iterations, (ReadRange("[anon]", 0, buf),)),
        ]
    if name == "repl":
        iterations = params.pop("iterations", 1)
        per_touch_signal = params.pop("per_touch_signal", False)
        _reject_extras(name, params)
        # cache-sized, cache-aligned huge buffer: line i*way_size of the
        # buffer maps to the same set for every i
        offsets = tuple(i * geometry.way_size for i in range(geometry.ways))
        prog = [AllocRegion("[anon]", geometry.total_size, huge=True)]
        if per_touch_signal:
            body: list = [SignalTrigger()]
            for off in offsets:
                body.append(TouchLines("[anon]", (off,)))
                body.append(SignalTrigger())
            prog.extend(body)
        else:
            prog.append(Loop(iterations, (TouchLines("[anon]", offsets),)))
            prog.append(SignalTrigger())
        return prog
    if name == "vision_analogue":
        buffer_kb = params.pop("buffer_kb")
        phases = params.pop("phases")
        repeats = params.pop("repeats", 1)
        _reject_extras(name, params)
        buf = buffer_kb * KB
        body: list = []
        for ph in phases:
            region_size = buf if ph.region == "[anon]" else 2048 * KB
            body.extend(_phase_instructions(ph, region_size, ls))
        return [AllocRegion("[anon]", buf), Loop(repeats, tuple(body))]
    if name in _VISION_PRESETS:
        buf, phases = _VISION_PRESETS[name]
        repeats = params.pop("repeats", 1)
        _reject_extras(name, params)
        return build_benchmark(
            "vision_analogue",
            geometry,
            buffer_kb=buf // KB,
            phases=list(phases),
            repeats=repeats,
        )
    raise ValueError(f"unknown benchmark {name!r}; choose from {BENCHMARK_NAMES}")


def _reject_extras(name: str, params: dict) -> None:
    if params:
        raise ValueError(f"benchmark {name!r} got unknown params {sorted(params)}")


# -- scheduler, timing, run result ----------------------------------------


@dataclass(frozen=True)
class Scheduler:
    """kind 'cfs': rotate runnable pids per core every `quantum` accesses.
    kind 'fixed_priority': highest priority runs to completion."""

    kind: str = "cfs"
    cores: int = 1
    quantum: int = 256

    def __post_init__(self) -> None:
        if self.kind not in ("cfs", "fixed_priority"):
            raise ValueError(f"unknown scheduler kind {self.kind!r}")
        if self.cores < 1:
            raise ValueError("cores must be >= 1")
        if self.quantum < 1:
            raise ValueError("quantum must be >= 1")


@dataclass(frozen=True)
class TaskSpec:
    pid: int
    program: Program
    affinity: int = 0
    priority: int = 0


@dataclass(frozen=True)
class TimingModel:
    hit_cost: int = 1
    miss_cost: int = 30

    def __post_init__(self) -> None:
        if not self.miss_cost > self.hit_cost >= 1:
            raise ValueError("require miss_cost > hit_cost >= 1")


@dataclass(frozen=True)
class TriggerSpec:
    """mode 'periodic': fire every `period` accesses per core.
    mode 'event': fire on SignalTrigger instructions only.
    `burst` acquisitions happen back-to-back per activation (the
    overhead-measurement protocol uses 2). The hook is called as
    hook(engine, core)."""

    mode: str = "periodic"
    period: int = 50_000
    hook: object = None
    burst: int = 1

    def __post_init__(self) -> None:
        if self.mode not in ("periodic", "event"):
            raise ValueError(f"unknown trigger mode {self.mode!r}")
        if self.mode == "periodic" and self.period < 1:
            raise ValueError("period must be >= 1")
        if self.burst < 1:
            raise ValueError("burst must be >= 1")


@dataclass(frozen=True, slots=True)
class Event:
    clock: int
    kind: str  # fault | signal | switch | complete | pause | resume
    pid: int = -1
    core: int = -1
    info: str = ""


@dataclass
class PidStats:
    accesses: int = 0
    hits: int = 0
    misses: int = 0
    cycles: int = 0


@dataclass
class RunResult:
    per_pid: dict[int, PidStats]
    events: list[Event]
    total_accesses: int
    snapshots_taken: int

    def cycles(self, pid: int) -> int:
        return self.per_pid[pid].cycles


# -- engine -----------------------------------------------------------------


class _Task:
    __slots__ = ("spec", "pid", "gen", "done", "stats", "pt")

    def __init__(self, spec: TaskSpec, vm: VirtualMemory, line_size: int):
        self.spec = spec
        self.pid = spec.pid
        self.gen = _walk_program(spec.program, spec.pid, vm, line_size)
        self.done = False
        self.stats = PidStats()
        # direct page-table reference keeps the per-access translation
        # down to one dict lookup
        self.pt = vm._procs[spec.pid].page_table


def _walk_program(program: Program, pid: int, vm: VirtualMemory, line_size: int):
    """Expand a program into a stream of ('a', vaddr, is_write) | ('t',).

    AllocRegion executes inline (no access); region bases are resolved
    when the referencing instruction starts, so allocations made earlier
    in the same program are visible.
    """
    for ins in program:
        if isinstance(ins, AllocRegion):
            vm.add_region(pid, ins.name, ins.size, huge=ins.huge)
        elif isinstance(ins, WriteRange) or isinstance(ins, ReadRange):
            base = vm.find_region(pid, ins.region).start + ins.start
            is_write = isinstance(ins, WriteRange)
            for off in range(0, ins.length, line_size):
                yield ("a", base + off, is_write)
        elif isinstance(ins, TouchLines):
            base = vm.find_region(pid, ins.region).start
            for off in ins.offsets:
                yield ("a", base + off, False)
        elif isinstance(ins, Loop):
            for _ in range(ins.count):
                yield from _walk_program(list(ins.body), pid, vm, line_size)
        elif isinstance(ins, SignalTrigger):
            yield ("t",)
        else:
            raise TypeError(f"unknown instruction {ins!r}")


class Engine:
    """Deterministic multi-core interpreter for a set of programs.

    One outer round executes at most one access per core, cores in
    ascending order. The trigger hook runs with the world quiesced; in
    async mode queued post-processing traffic (queue_trash) is drained
    one line per round while other cores keep running.
    """

    def __init__(
        self,
        tasks: list[TaskSpec],
        scheduler: Scheduler,
        cache: CacheState,
        vm: VirtualMemory,
        timing: TimingModel | None = None,
        trigger: TriggerSpec | None = None,
        stop_on: int | None = None,
        touch_log: bool = False,
    ):
        pids = [t.pid for t in tasks]
        if len(set(pids)) != len(pids):
            raise ValueError("pids must be unique")
        if scheduler.kind == "fixed_priority":
            prios = [t.priority for t in tasks]
            if len(set(prios)) != len(prios):
                raise ValueError("fixed_priority requires unique priorities")
        for t in tasks:
            if not 0 <= t.affinity < scheduler.cores:
                raise ValueError(f"pid {t.pid}: affinity {t.affinity} outside cores")
        self.scheduler = scheduler
        self.cache = cache
        self.vm = vm
        self.timing = timing or TimingModel()
        self.trigger = trigger
        self.stop_on = stop_on
        self.events: list[Event] = []
        self.workload_clock = 0  # total workload accesses executed
        self.mono_time = 0  # every cacheable access, including trigger traffic
        self.rounds = 0
        self.snapshots_taken = 0
        self.trash_cursor = 0
        self.pending_trash = 0
        self._in_trigger = False
        self._line_size = cache.geometry.line_size
        self._line_mask = ~(self._line_size - 1)
        self._is_fp = scheduler.kind == "fixed_priority"
        self._cache_access = cache.access
        self._touch_enabled = touch_log
        self._tasks = [_Task(t, vm, self._line_size) for t in tasks]
        self._by_core: list[list[_Task]] = [[] for _ in range(scheduler.cores)]
        for task in self._tasks:
            self._by_core[task.spec.affinity].append(task)
        if scheduler.kind == "fixed_priority":
            for lst in self._by_core:
                lst.sort(key=lambda t: -t.spec.priority)
        self._rr_index = [-1] * scheduler.cores
        self._quantum_left = [scheduler.quantum] * scheduler.cores
        self._current: list[_Task | None] = [None] * scheduler.cores
        self._stop_task = None
        if stop_on is not None:
            matches = [t for t in self._tasks if t.pid == stop_on]
            if not matches:
                raise ValueError(f"stop_on pid {stop_on} is not among the tasks")
            self._stop_task = matches[0]
        self.touch_windows: list[dict[int, set]] | None = [] if touch_log else None
        self._window: dict[int, set] = {}

    # -- public helpers used by trigger hooks ------------------------------

    def running_pids(self) -> tuple[int, ...]:
        return tuple(t.pid for t in self._tasks if not t.done)

    def observed_pids(self) -> tuple[int, ...]:
        return tuple(t.pid for t in self._tasks)

    def log_signals(self, kind: str, pids) -> None:
        for pid in pids:
            self.events.append(Event(self.workload_clock, kind, pid=pid))

    def do_trash(self, lines: int) -> None:
        """Synchronous post-processing traffic: world stays paused."""
        from .cache import flush_and_trash

        self.mono_time = flush_and_trash(
            self.cache, lines, time=self.mono_time, first_line=self.trash_cursor
        )
        self.trash_cursor += lines

    def queue_trash(self, lines: int) -> None:
        """Asynchronous post-processing traffic, drained while cores run."""
        self.pending_trash += lines

    def advance_other_cores(self, rounds: int, skip_core: int) -> None:
        """Async activation window: others progress before the quiesce."""
        for _ in range(rounds):
            for core in range(self.scheduler.cores):
                if core != skip_core:
                    self._step_core(core)

    def note_window_rotation(self) -> None:
        if self.touch_windows is not None:
            self.touch_windows.append(self._window)
            self._window = {}

    # -- core stepping ------------------------------------------------------

    def _pick(self, core: int) -> _Task | None:
        cur = self._current[core]
        if cur is not None and not cur.done and (self._is_fp or self._quantum_left[core] > 0):
            return cur
        tasks = self._by_core[core]
        if self._is_fp:
            for t in tasks:
                if not t.done:
                    self._current[core] = t
                    return t
            self._current[core] = None
            return None
        # cfs: rotate to the next runnable pid; a fresh quantum either way
        n = len(tasks)
        idx = self._rr_index[core]
        for probe in range(1, n + 1):
            cand = tasks[(idx + probe) % n]
            if not cand.done:
                self._rr_index[core] = (idx + probe) % n
                self._quantum_left[core] = self.scheduler.quantum
                if cur is not None and cand is not cur:
                    self.events.append(
                        Event(self.workload_clock, "switch", pid=cand.pid, core=core,
                              info="quantum" if not cur.done else "next")
                    )
                self._current[core] = cand
                return cand
        self._current[core] = None
        return None

    def _step_core(self, core: int) -> bool:
        task = self._pick(core)
        if task is None:
            return False
        while True:
            try:
                item = next(task.gen)
            except StopIteration:
                task.done = True
                self._current[core] = None
                self.events.append(Event(self.workload_clock, "complete", pid=task.pid, core=core))
                # completing counts as progress: other tasks may still run
                return True
            if item[0] == "a":
                _, vaddr, is_write = item
                vpn = vaddr >> 12
                frame = task.pt.get(vpn)
                if frame is None:
                    frame = self.vm.map_page(task.pid, vaddr)
                    self.events.append(
                        Event(self.workload_clock, "fault", pid=task.pid, core=core,
                              info=f"{vaddr:#x}")
                    )
                paddr = (frame << 12) | (vaddr & 4095)
                res = self._cache_access(paddr, is_write, self.mono_time)
                self.mono_time += 1
                self.workload_clock += 1
                st = task.stats
                st.accesses += 1
                if res.hit:
                    st.hits += 1
                else:
                    st.misses += 1
                if self._touch_enabled:
                    w = self._window.get(task.pid)
                    if w is None:
                        w = self._window[task.pid] = set()
                    w.add(paddr & self._line_mask)
                if not self._is_fp:
                    self._quantum_left[core] -= 1
                return True
            if item[0] == "t":
                self.events.append(Event(self.workload_clock, "signal", pid=task.pid, core=core))
                if (
                    self.trigger is not None
                    and self.trigger.mode == "event"
                    and not self._in_trigger
                ):
                    self._fire(core)
                # signal costs no access; continue to the next item
                continue
            raise AssertionError(f"unexpected item {item!r}")

    def _fire(self, core: int) -> None:
        self._in_trigger = True
        try:
            for _ in range(self.trigger.burst):
                if self.trigger.hook is not None:
                    self.trigger.hook(self, core)
                self.snapshots_taken += 1
                self.note_window_rotation()
        finally:
            self._in_trigger = False

    def run(self) -> RunResult:
        cores = self.scheduler.cores
        periodic = self.trigger is not None and self.trigger.mode == "periodic"
        while True:
            progressed = False
            stop = False
            for core in range(cores):
                if self._step_core(core):
                    progressed = True
                if self._stop_task is not None and self._stop_task.done:
                    stop = True
                    break
            if stop:
                break
            if self.pending_trash > 0:
                self.do_trash(1)
                self.pending_trash -= 1
                progressed = True
            self.rounds += 1
            if (
                periodic
                and progressed
                and self.pending_trash == 0
                and self.rounds % self.trigger.period == 0
            ):
                self._fire(0)
            if not progressed:
                break
        if self.touch_windows is not None and self._window:
            self.touch_windows.append(self._window)
        per_pid = {}
        for t in self._tasks:
            st = t.stats
            st.cycles = st.hits * self.timing.hit_cost + st.misses * self.timing.miss_cost
            per_pid[t.pid] = st
        return RunResult(
            per_pid=per_pid,
            events=self.events,
            total_accesses=self.workload_clock,
            snapshots_taken=self.snapshots_taken,
        )


def run(
    tasks: list[TaskSpec],
    scheduler: Scheduler,
    cache: CacheState,
    vm: VirtualMemory,
    timing: TimingModel | None = None,
    trigger: TriggerSpec | None = None,
    stop_on: int | None = None,
    touch_log: bool = False,
) -> RunResult:
    """Register the tasks' pids, execute until completion, return stats."""
    for t in tasks:
        vm.register_process(t.pid)
    engine = Engine(tasks, scheduler, cache, vm, timing, trigger, stop_on, touch_log)
    return engine.run()


def measure_slowdown(
    observed: Program,
    interfering: Program | None,
    *,
    geometry: CacheGeometry = DEFAULT_GEOMETRY,
    policy_kind: str = "true_random",
    policy_seed: int = 0,
    pool_seed: int = 0,
    timing: TimingModel | None = None,
    weights=None,
) -> float:
    """Cycles(observed beside interfering) / cycles(observed alone).

    Both measurements run in fresh, identically seeded two-core worlds:
    the observed program on core 0, the interferer (if any) on core 1.
    The parallel run stops the moment the observed program completes, so
    the interferer should be sized to outlast it.
    """
    from .cache import make_policy
    from .vm import FramePool

    timing = timing or TimingModel()

    def world():
        pool = FramePool(seed=pool_seed, huge_blocks=8)
        vmem = VirtualMemory(pool)
        cach = CacheState(geometry, make_policy(policy_kind, policy_seed, weights=weights))
        return cach, vmem

    sched = Scheduler(kind="cfs", cores=2)
    cache_a, vm_a = world()
    alone = run([TaskSpec(1, observed, 0)], sched, cache_a, vm_a, timing)
    base = alone.cycles(1)
    if interfering is None:
        return 1.0 if base == 0 else base / base
    cache_b, vm_b = world()
    both = run(
        [TaskSpec(1, observed, 0), TaskSpec(2, interfering, 1)],
        sched,
        cache_b,
        vm_b,
        timing,
        stop_on=1,
    )
    return both.cycles(1) / base
