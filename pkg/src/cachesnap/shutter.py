"""Snapshot acquisition, binary serialization, pollution, and the store.

A snapshot is one full sweep of the introspection port: ways*sets fixed
16-byte records in set-major, way-minor order, so the (set, way)
coordinate of every record is implicit in its position. Invalid lines
are kept as sentinel records rather than omitted, which keeps snapshots
fixed-size and lets way-level analyses read coordinates directly.

Record layout (little endian): 8-byte unsigned pid, 8-byte address.
Invalid lines carry the all-ones pid sentinel. When reverse resolution
is on, the address of an attributed line is its resolved virtual
address; unresolved lines get pid 0 and keep the raw physical address.
With resolution off, every valid line stores pid 0 plus the raw
physical line address.

The sweep itself performs zero cacheable accesses: the simulated
capture buffer is non-cacheable, so acquisition in transparent mode
leaves the cache bit-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .cache import CacheState, flush_and_trash
from .geometry import CacheGeometry
from .vm import PAGE_SHIFT, PAGE_SIZE, VMA, VirtualMemory, parse_layout, render_layout

MAGIC = b"CFSN"
VERSION = 1
HEADER_SIZE = 32
RECORD_SIZE = 16
# pid field of an invalid line: max 8-byte unsigned, stored as int64 -1
SENTINEL_PID = -1

_HEADER = struct.Struct("<4sHHIHHHHIQ")
_RECORD_DTYPE = np.dtype([("pid", "<i8"), ("addr", "<i8")])

FLAG_FLUSH = 1
FLAG_SYNC = 2
FLAG_RESOLVE = 4
FLAG_LAYOUT = 8


class SnapshotFormatError(ValueError):
    """Malformed snapshot bytes; `offset` names the failing byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class StoreFullError(RuntimeError):
    """Transparent-mode snapshot reserve exhausted."""


@dataclass
class ShutterConfig:
    """Acquisition mode switches.

    flush: destroy observed content after each snapshot (active-set
        analysis); transparent otherwise.
    sync: observed tasks stay paused through post-processing; in async
        mode only the trigger's core is preempted and other cores run
        during post-processing.
    hard_invalidate: flush via valid-bit clearing; trash_lines adds (or
        substitutes, when hard_invalidate is off) synthetic post-snapshot
        traffic of that many distinct trigger-owned lines.
    pollution_lines: transparent-mode injection that models resolution
        work as trigger-owned allocations spread over distinct sets.
    reserved_snapshots: capacity of the transparent-mode store; None
        means unbounded (flush mode reuses a single buffer).
    async_activation_delay: accesses other cores may execute between
        trigger activation and world quiesce in async mode.
    """

    flush: bool = False
    sync: bool = True
    resolve: bool = True
    capture_layout: bool = False
    trash_lines: int = 0
    hard_invalidate: bool = True
    pollution_lines: int = 0
    reserved_snapshots: int | None = None
    async_activation_delay: int = 0

    def flags(self) -> int:
        return (
            (FLAG_FLUSH if self.flush else 0)
            | (FLAG_SYNC if self.sync else 0)
            | (FLAG_RESOLVE if self.resolve else 0)
            | (FLAG_LAYOUT if self.capture_layout else 0)
        )


@dataclass(frozen=True, slots=True)
class SnapshotRecord:
    """One decoded line record; invalid lines have pid == SENTINEL_PID."""

    pid: int
    address: int
    valid: bool


@dataclass(eq=False)
class Snapshot:
    """One full cache sweep plus acquisition metadata.

    `pids` and `addrs` hold the serialized record content. `phys_lines`
    keeps the raw physical line base address per coordinate (-1 when
    invalid); it is captured at acquisition time, reconstructible from
    resolution-off files, but not recoverable from resolution-on files.
    Sidecar `layouts` are stored next to, not inside, the binary format.
    Equality compares header fields and record content.
    """

    geometry: CacheGeometry
    sequence: int
    timestamp: int
    flags: int
    pids: np.ndarray
    addrs: np.ndarray
    phys_lines: np.ndarray | None = None
    layouts: dict[int, list[VMA]] | None = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, Snapshot):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.sequence == other.sequence
            and self.timestamp == other.timestamp
            and self.flags == other.flags
            and np.array_equal(self.pids, other.pids)
            and np.array_equal(self.addrs, other.addrs)
        )

    @property
    def num_records(self) -> int:
        return len(self.pids)

    def valid_mask(self) -> np.ndarray:
        return self.pids != SENTINEL_PID

    def record(self, index: int) -> SnapshotRecord:
        pid = int(self.pids[index])
        return SnapshotRecord(pid=pid, address=int(self.addrs[index]), valid=pid != SENTINEL_PID)

    def records_of(self, pid: int) -> np.ndarray:
        """Indices of records attributed to a pid."""
        return np.flatnonzero(self.pids == pid)


def acquire(
    cache: CacheState,
    vm: VirtualMemory | None,
    cfg: ShutterConfig,
    sequence: int = 0,
    timestamp: int = 0,
    observed_pids: tuple[int, ...] = (),
) -> Snapshot:
    """Sweep every (way, set) coordinate and attribute the content.

    The world must be quiescent for the duration of the call; the sweep
    itself never mutates cache state. Post-snapshot flushing and
    pollution injection are separate steps driven by the engine, since
    their interleaving with the world depends on sync/async mode.
    """
    geom = cache.geometry
    valid, frames = cache.snapshot_arrays()
    n = geom.num_lines
    pids = np.full(n, SENTINEL_PID, dtype=np.int64)
    addrs = np.zeros(n, dtype=np.int64)
    phys = np.full(n, -1, dtype=np.int64)
    line_base = frames << geom.offset_bits
    phys[valid] = line_base[valid]
    if cfg.resolve and vm is not None:
        _attribute(vm, valid, line_base, geom, pids, addrs)
    else:
        pids[valid] = 0
        addrs[valid] = line_base[valid]
    layouts = None
    if cfg.capture_layout and vm is not None:
        wanted = observed_pids if observed_pids else tuple(vm.pids())
        layouts = {pid: vm.record_layout(pid) for pid in wanted}
    return Snapshot(
        geometry=geom,
        sequence=sequence,
        timestamp=timestamp,
        flags=cfg.flags(),
        pids=pids,
        addrs=addrs,
        phys_lines=phys,
        layouts=layouts,
    )


def _attribute(vm, valid, line_base, geom, pids, addrs) -> None:
    """Resolve each valid frame to (pid, vaddr); first mapping wins.

    Ties (shared frames) go to the lexicographically smallest
    (pid, vaddr). Unresolvable frames get pid 0 and keep the raw
    physical address.
    """
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return
    lines = line_base[idx]
    pfns = lines >> PAGE_SHIFT
    uniq = np.unique(pfns)
    upid = np.zeros(len(uniq), dtype=np.int64)
    uvbase = np.full(len(uniq), -1, dtype=np.int64)
    for i, pfn in enumerate(uniq):
        mappings = vm.resolve_frame(int(pfn))
        if mappings:
            pid, vaddr, _ = mappings[0]
            upid[i] = pid
            uvbase[i] = vaddr
    pos = np.searchsorted(uniq, pfns)
    rec_pids = upid[pos]
    vbases = uvbase[pos]
    page_off = lines & (PAGE_SIZE - 1)
    rec_addrs = np.where(vbases >= 0, vbases + page_off, lines)
    pids[idx] = rec_pids
    addrs[idx] = rec_addrs


def inject_pollution(cache: CacheState, lines: int, time: int, first_line: int = 0) -> int:
    """Model resolution/post-processing work as trigger-owned traffic.

    Allocates `lines` distinct lines over distinct sets (one per set,
    round-robin), so for lines <= sets exactly that many coordinates
    change. Returns the logical time after the traffic.
    """
    return flush_and_trash(cache, lines, hard_invalidate=False, time=time, first_line=first_line)


def pollution(a: Snapshot, b: Snapshot) -> float:
    """Fraction of coordinates whose (valid, physical line) differ."""
    if a.geometry != b.geometry:
        raise ValueError("snapshots have different geometries")
    if a.phys_lines is None or b.phys_lines is None:
        raise ValueError(
            "pollution needs raw physical line content; resolution-on snapshots "
            "loaded from disk do not retain it"
        )
    return float(np.count_nonzero(a.phys_lines != b.phys_lines)) / a.num_records


def serialize(snap: Snapshot) -> bytes:
    """Fixed-size binary form: 32-byte header plus 16 bytes per record."""
    g = snap.geometry
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        snap.flags,
        g.total_size,
        g.ways,
        g.line_size,
        g.phys_addr_bits,
        0,
        snap.sequence,
        snap.timestamp,
    )
    records = np.empty(snap.num_records, dtype=_RECORD_DTYPE)
    records["pid"] = snap.pids
    records["addr"] = snap.addrs
    return header + records.tobytes()


def deserialize(data: bytes) -> Snapshot:
    """Parse snapshot bytes, reporting the exact offset of any defect."""
    if len(data) < HEADER_SIZE:
        raise SnapshotFormatError(
            f"truncated header: {len(data)} of {HEADER_SIZE} bytes", len(data)
        )
    magic, version, flags, total_size, ways, line_size, phys_bits, _, seq, ts = _HEADER.unpack(
        data[:HEADER_SIZE]
    )
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported version {version}", 4)
    try:
        geom = CacheGeometry(total_size, ways, line_size, phys_bits)
    except ValueError as e:
        raise SnapshotFormatError(f"invalid geometry: {e}", 8) from None
    expect = HEADER_SIZE + geom.num_lines * RECORD_SIZE
    if len(data) != expect:
        bad = min(len(data), expect)
        raise SnapshotFormatError(
            f"payload is {len(data)} bytes, expected {expect}", bad
        )
    records = np.frombuffer(data, dtype=_RECORD_DTYPE, offset=HEADER_SIZE)
    pids = records["pid"].copy()
    addrs = records["addr"].copy()
    phys = None
    if not flags & FLAG_RESOLVE:
        phys = np.where(pids == SENTINEL_PID, np.int64(-1), addrs)
    return Snapshot(
        geometry=geom,
        sequence=seq,
        timestamp=ts,
        flags=flags,
        pids=pids,
        addrs=addrs,
        phys_lines=phys,
    )


def render_sidecar(layouts: dict[int, list[VMA]]) -> str:
    """Textual sidecar: per-pid VMA layout blocks."""
    parts = []
    for pid in sorted(layouts):
        parts.append(f"pid {pid}\n")
        parts.append(render_layout(layouts[pid]))
    return "".join(parts)


def parse_sidecar(text: str) -> dict[int, list[VMA]]:
    layouts: dict[int, list[VMA]] = {}
    current: list[str] = []
    pid = None
    for line in text.splitlines():
        if line.startswith("pid "):
            if pid is not None:
                layouts[pid] = parse_layout("\n".join(current))
            pid = int(line.split()[1])
            current = []
        elif line.strip():
            current.append(line)
    if pid is not None:
        layouts[pid] = parse_layout("\n".join(current))
    return layouts


@dataclass
class SnapshotStore:
    """Ordered snapshot collection with transparent-mode capacity.

    Flush mode reuses one capture buffer on real hardware, so capacity
    is unbounded there; transparent mode must pre-reserve room for every
    snapshot of the experiment and aborts cleanly when it runs out.
    """

    capacity: int | None = None
    snapshots: list[Snapshot] = field(default_factory=list)

    def add(self, snap: Snapshot) -> None:
        if self.capacity is not None and len(self.snapshots) >= self.capacity:
            raise StoreFullError(
                f"snapshot reserve full ({self.capacity} snapshots); "
                "raise reserved_snapshots or shorten the experiment"
            )
        self.snapshots.append(snap)

    def __len__(self) -> int:
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)

    def __getitem__(self, i):
        return self.snapshots[i]
