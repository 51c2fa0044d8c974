"""Demand-paged virtual memory model with reverse frame resolution.

Each process owns a list of VMAs and a page table. Physical frames come
from a seeded, shuffled pool so consecutive virtual pages land on
scattered frames, the way a long-running OS allocator behaves. A reverse
map (frame -> {(pid, virtual page)}) mirrors every live page-table entry
and answers the "who owns this cached line?" question during snapshot
attribution.

pid 0 is reserved for unresolved/kernel attribution; real pids start at 1.
"""

from __future__ import annotations

import bisect
import random
from dataclasses import dataclass

PAGE_SHIFT = 12
PAGE_SIZE = 1 << PAGE_SHIFT
HUGE_PAGE_FRAMES = 512  # 2 MB huge page

# Default per-process layout. Virtual bases mimic a typical 64-bit
# process image; all regions are demand paged.
_TEXT_BASE = 0x0000_0000_0040_0000
_TEXT_SIZE = 128 * 1024
_HEAP_BASE = 0x0000_0000_0200_0000
_HEAP_SIZE = 2 * 1024 * 1024
_GLIBC_BASE = 0x0000_7F7E_0000_0000
_GLIBC_SIZE = 1536 * 1024
_STACK_TOP = 0x0000_7FFF_FFE0_0000
_STACK_SIZE = 256 * 1024
_MMAP_BASE = 0x0000_7F00_0000_0000


class SegmentationFault(Exception):
    """Virtual address falls outside every VMA of the process."""


class PageFault(Exception):
    """Virtual page is inside a VMA but not yet mapped."""


class OutOfMemory(Exception):
    pass


@dataclass(frozen=True)
class VMA:
    """Contiguous virtual region: [start, end), page aligned."""

    name: str
    start: int
    end: int
    perms: str = "rw-p"

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise ValueError(f"VMA {self.name}: start must precede end")
        if self.start % PAGE_SIZE or self.end % PAGE_SIZE:
            raise ValueError(f"VMA {self.name}: bounds must be page aligned")

    def contains(self, vaddr: int) -> bool:
        return self.start <= vaddr < self.end

    @property
    def size(self) -> int:
        return self.end - self.start

    @property
    def pages(self) -> int:
        return self.size // PAGE_SIZE


def render_layout(vmas: list[VMA]) -> str:
    """One line per VMA: 'start-end perms name', hexadecimal addresses."""
    return "".join(f"{v.start:012x}-{v.end:012x} {v.perms} {v.name}\n" for v in vmas)


def parse_layout(text: str) -> list[VMA]:
    """Inverse of render_layout."""
    vmas = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        span, perms, name = line.split(" ", 2)
        start, end = span.split("-")
        vmas.append(VMA(name=name, start=int(start, 16), end=int(end, 16), perms=perms))
    return vmas


class FramePool:
    """Seeded pool of 4 KB physical frames plus reserved huge blocks.

    Small frames are handed out in a shuffled order (non-linear mapping).
    The top of the pool is carved into 2 MB blocks, each 512 consecutive
    frames aligned to a 512-frame boundary, for huge-page requests.
    """

    def __init__(self, frames: int = 65536, seed: int = 0, huge_blocks: int = 4):
        if frames % HUGE_PAGE_FRAMES != 0:
            raise ValueError("frames must be a multiple of 512 (2 MB granularity)")
        if huge_blocks * HUGE_PAGE_FRAMES > frames:
            raise ValueError("huge reserve exceeds pool size")
        self.frames = frames
        self.shuffle_seed = seed
        huge_base = frames - huge_blocks * HUGE_PAGE_FRAMES
        self._free = list(range(huge_base))
        random.Random(seed).shuffle(self._free)
        self._free_huge = [huge_base + i * HUGE_PAGE_FRAMES for i in range(huge_blocks)]
        self._free_huge.reverse()

    def alloc(self) -> int:
        if not self._free:
            raise OutOfMemory("4 KB frame pool exhausted")
        return self._free.pop()

    def alloc_huge(self) -> int:
        """Base frame of a free 2 MB block (512 contiguous, aligned frames)."""
        if not self._free_huge:
            raise OutOfMemory("huge block reserve exhausted")
        return self._free_huge.pop()

    @property
    def free_small(self) -> int:
        return len(self._free)

    @property
    def free_huge(self) -> int:
        return len(self._free_huge)


class _Process:
    def __init__(self, pid: int, vmas: list[VMA]):
        self.pid = pid
        self.vmas = sorted(vmas, key=lambda v: v.start)
        self.page_table: dict[int, int] = {}
        self.mmap_cursor = _MMAP_BASE


def default_layout() -> list[VMA]:
    return [
        VMA("text", _TEXT_BASE, _TEXT_BASE + _TEXT_SIZE, "r-xp"),
        VMA("heap", _HEAP_BASE, _HEAP_BASE + _HEAP_SIZE, "rw-p"),
        VMA("glibc", _GLIBC_BASE, _GLIBC_BASE + _GLIBC_SIZE, "r-xp"),
        VMA("stack", _STACK_TOP - _STACK_SIZE, _STACK_TOP, "rw-p"),
    ]


class VirtualMemory:
    """All process address spaces plus the frame pool and reverse map."""

    def __init__(self, pool: FramePool):
        self.pool = pool
        self._procs: dict[int, _Process] = {}
        # frame -> sorted list of (pid, vpn); multi-entry only for shared frames
        self._rmap: dict[int, list[tuple[int, int]]] = {}

    # -- process and region management ----------------------------------

    def register_process(self, pid: int, vmas: list[VMA] | None = None) -> None:
        if pid <= 0:
            raise ValueError("pids start at 1 (0 is reserved for unresolved)")
        if pid in self._procs:
            raise ValueError(f"pid {pid} already registered")
        self._procs[pid] = _Process(pid, vmas if vmas is not None else default_layout())

    def pids(self) -> list[int]:
        return sorted(self._procs)

    def add_region(self, pid: int, name: str, size: int, huge: bool = False) -> VMA:
        """Create an anonymous mapping, mmap style, at the next free base.

        Huge regions are mapped eagerly: each 2 MB chunk gets one
        physically contiguous, cache-size-aligned block of 512 frames.
        Plain regions are demand paged.
        """
        proc = self._proc(pid)
        if size <= 0:
            raise ValueError("region size must be positive")
        granule = HUGE_PAGE_FRAMES * PAGE_SIZE if huge else PAGE_SIZE
        if size % granule != 0:
            raise ValueError(f"region size must be a multiple of {granule} bytes")
        base = proc.mmap_cursor
        if huge and base % (HUGE_PAGE_FRAMES * PAGE_SIZE):
            base += (HUGE_PAGE_FRAMES * PAGE_SIZE) - base % (HUGE_PAGE_FRAMES * PAGE_SIZE)
        vma = VMA(name, base, base + size, "rw-p")
        proc.vmas.append(vma)
        proc.vmas.sort(key=lambda v: v.start)
        proc.mmap_cursor = vma.end + PAGE_SIZE  # guard page
        if huge:
            pt = proc.page_table
            rm = self._rmap
            for chunk in range(size // (HUGE_PAGE_FRAMES * PAGE_SIZE)):
                base_frame = self.pool.alloc_huge()
                first_vpn = (vma.start >> PAGE_SHIFT) + chunk * HUGE_PAGE_FRAMES
                # bulk install: huge frames come fresh from the pool, so
                # no rmap entry can exist yet
                vpns = range(first_vpn, first_vpn + HUGE_PAGE_FRAMES)
                frames = range(base_frame, base_frame + HUGE_PAGE_FRAMES)
                pt.update(zip(vpns, frames))
                for vpn, frame in zip(vpns, frames):
                    rm[frame] = [(pid, vpn)]
        return vma

    def find_region(self, pid: int, name: str) -> VMA:
        for v in self._proc(pid).vmas:
            if v.name == name:
                return v
        raise KeyError(f"pid {pid} has no region named {name!r}")

    def record_layout(self, pid: int) -> list[VMA]:
        """Point-in-time copy of the VMA list, ordered by start address."""
        return list(self._proc(pid).vmas)

    # -- mapping and translation -----------------------------------------

    def map_page(self, pid: int, vaddr: int) -> int:
        """Demand-map the page containing vaddr; returns the frame number."""
        proc = self._proc(pid)
        vma = self._vma_of(proc, vaddr)
        if vma is None:
            raise SegmentationFault(f"pid {pid}: {vaddr:#x} outside all VMAs")
        vpn = vaddr >> PAGE_SHIFT
        if vpn in proc.page_table:
            raise ValueError(f"pid {pid}: page {vpn:#x} already mapped")
        frame = self.pool.alloc()
        self._install(proc, vpn, frame)
        return frame

    def map_shared(self, pid: int, vaddr: int, frame: int) -> None:
        """Map an existing frame into pid's space (explicitly shared)."""
        proc = self._proc(pid)
        if self._vma_of(proc, vaddr) is None:
            raise SegmentationFault(f"pid {pid}: {vaddr:#x} outside all VMAs")
        vpn = vaddr >> PAGE_SHIFT
        if vpn in proc.page_table:
            raise ValueError(f"pid {pid}: page {vpn:#x} already mapped")
        self._install(proc, vpn, frame)

    def translate(self, pid: int, vaddr: int) -> int:
        """Virtual to physical, raising PageFault for unmapped pages."""
        proc = self._proc(pid)
        frame = proc.page_table.get(vaddr >> PAGE_SHIFT)
        if frame is None:
            if self._vma_of(proc, vaddr) is None:
                raise SegmentationFault(f"pid {pid}: {vaddr:#x} outside all VMAs")
            raise PageFault(f"pid {pid}: page of {vaddr:#x} not mapped")
        return (frame << PAGE_SHIFT) | (vaddr & (PAGE_SIZE - 1))

    def touch(self, pid: int, vaddr: int) -> tuple[int, bool]:
        """Translate, demand-mapping on first touch. Returns (paddr, faulted)."""
        proc = self._proc(pid)
        vpn = vaddr >> PAGE_SHIFT
        frame = proc.page_table.get(vpn)
        if frame is not None:
            return (frame << PAGE_SHIFT) | (vaddr & (PAGE_SIZE - 1)), False
        frame = self.map_page(pid, vaddr)
        return (frame << PAGE_SHIFT) | (vaddr & (PAGE_SIZE - 1)), True

    # -- reverse resolution ------------------------------------------------

    def resolve_frame(self, frame: int) -> list[tuple[int, int, VMA]]:
        """All current mappings of a frame as (pid, vaddr, vma) tuples.

        Deterministically ordered by (pid, vaddr). An empty list means
        the frame is kernel/free memory and unattributable.
        """
        out = []
        for pid, vpn in self._rmap.get(frame, ()):
            vaddr = vpn << PAGE_SHIFT
            vma = self._vma_of(self._procs[pid], vaddr)
            out.append((pid, vaddr, vma))
        return out

    def rmap_size(self) -> int:
        return sum(len(v) for v in self._rmap.values())

    def check_consistency(self) -> None:
        """Full cross-walk: reverse map and page tables must be inverses."""
        seen = 0
        for pid, proc in self._procs.items():
            for vpn, frame in proc.page_table.items():
                entries = self._rmap.get(frame, [])
                assert (pid, vpn) in entries, f"rmap misses pid {pid} vpn {vpn:#x}"
                seen += 1
        assert seen == self.rmap_size(), "rmap holds stale entries"

    # -- internals ---------------------------------------------------------

    def _proc(self, pid: int) -> _Process:
        try:
            return self._procs[pid]
        except KeyError:
            raise KeyError(f"unknown pid {pid}") from None

    @staticmethod
    def _vma_of(proc: _Process, vaddr: int) -> VMA | None:
        for v in proc.vmas:
            if v.contains(vaddr):
                return v
        return None

    def _install(self, proc: _Process, vpn: int, frame: int) -> None:
        proc.page_table[vpn] = frame
        entries = self._rmap.get(frame)
        if entries is None:
            self._rmap[frame] = [(proc.pid, vpn)]
        else:
            bisect.insort(entries, (proc.pid, vpn))
