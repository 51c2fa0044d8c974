"""Set-associative cache simulator with a coordinate-addressed introspection port.

The cache state is keyed by (set, way). Allocation prefers the
lowest-index invalid way; once a set is full a replacement policy picks
the victim. A dedicated, seedable victim RNG is advanced only by victim
selection so replacement decisions stay reproducible regardless of how
the surrounding workload changes.

The introspection port (`introspect`) reads one tag-memory entry by
(way, set) coordinates and reconstructs the physical line frame from the
stored tag plus the set index. It never mutates cache state.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass

import numpy as np

from .geometry import CacheGeometry, AddressRangeError


@dataclass(frozen=True, slots=True)
class AccessResult:
    """Outcome of one cache access.

    `victim_evicted` is (line frame number, dirty flag) when a valid line
    was replaced, else None. `uncached` marks a rejected access to a
    non-cacheable address; no state was changed.
    """

    hit: bool
    set_index: int
    way: int
    victim_evicted: tuple[int, bool] | None = None
    uncached: bool = False


UNCACHED = AccessResult(hit=False, set_index=-1, way=-1, uncached=True)


@dataclass(frozen=True, slots=True)
class LineState:
    """Per-(set, way) state as seen by tests and debugging tools.

    When `valid` is False every other field is meaningless. `frame` is
    the physical line frame number (line base address / line size).
    """

    valid: bool
    dirty: bool
    tag: int
    frame: int
    last_touch: int
    fill_order: int


class TrueRandom:
    """Uniform victim selection over all ways.

    Ways are a power of two, so getrandbits gives an exactly uniform
    draw at a fraction of randrange's cost.
    """

    kind = "true_random"

    def __init__(self, seed: int):
        self.seed = seed
        self._rng = random.Random(seed)

    def select_victim(self, state: "CacheState", set_index: int) -> int:
        return self._rng.getrandbits(state.geometry.ways.bit_length() - 1)


class BiasedRandom:
    """Victim selection proportional to fixed per-way weights.

    Emulates hardware whose nominally random policy picks some ways less
    often than others. Weights must be positive; any scale works.
    """

    kind = "biased_random"

    def __init__(self, seed: int, weights):
        weights = [float(w) for w in weights]
        if not weights or any(w <= 0 for w in weights):
            raise ValueError("weights must be a non-empty list of positive numbers")
        self.seed = seed
        self.weights = weights
        self._rng = random.Random(seed)
        self._cum = []
        total = 0.0
        for w in weights:
            total += w
            self._cum.append(total)
        self._total = total

    def select_victim(self, state: "CacheState", set_index: int) -> int:
        if len(self.weights) != state.geometry.ways:
            raise ValueError(
                f"{len(self.weights)} weights for a {state.geometry.ways}-way cache"
            )
        x = self._rng.random() * self._total
        for way, bound in enumerate(self._cum):
            if x < bound:
                return way
        return len(self._cum) - 1


class LRU:
    """Evict the way with the smallest last-touch time."""

    kind = "lru"

    def select_victim(self, state: "CacheState", set_index: int) -> int:
        base = set_index * state.geometry.ways
        touches = state._last_touch
        best_way = 0
        best = touches[base]
        for w in range(1, state.geometry.ways):
            t = touches[base + w]
            if t < best:
                best = t
                best_way = w
        return best_way


class FIFO:
    """Evict the way with the smallest fill order (oldest allocation)."""

    kind = "fifo"

    def select_victim(self, state: "CacheState", set_index: int) -> int:
        base = set_index * state.geometry.ways
        fills = state._fill_order
        best_way = 0
        best = fills[base]
        for w in range(1, state.geometry.ways):
            f = fills[base + w]
            if f < best:
                best = f
                best_way = w
        return best_way


POLICY_KINDS = ("true_random", "lru", "fifo", "biased_random")


def make_policy(kind: str, seed: int = 0, weights=None):
    """Build a replacement policy from its config name."""
    kind = kind.lower()
    if kind == "true_random":
        return TrueRandom(seed)
    if kind == "lru":
        return LRU()
    if kind == "fifo":
        return FIFO()
    if kind == "biased_random":
        if weights is None:
            raise ValueError("biased_random requires per-way weights")
        return BiasedRandom(seed, weights)
    raise ValueError(f"unknown replacement policy {kind!r}; choose from {POLICY_KINDS}")


class UncacheableAccess(Exception):
    pass


class CacheState:
    """Mutable state of one shared cache plus its lookup bookkeeping.

    Field arrays (valid/tag/dirty) are numpy-backed so full-cache sweeps
    are cheap; the per-access hot path goes through per-set tag->way
    dicts and flat Python lists, which are faster for scalar updates.
    """

    def __init__(self, geometry: CacheGeometry, policy, uncacheable: tuple = ()):
        g = geometry
        self.geometry = g
        self.policy = policy
        self.valid = np.zeros((g.sets, g.ways), dtype=bool)
        self.tag = np.zeros((g.sets, g.ways), dtype=np.int64)
        self.dirty = np.zeros((g.sets, g.ways), dtype=bool)
        # per-set tag->way maps, created on first use: probes that touch
        # few sets (and there are thousands of them in the replacement
        # experiments) skip most of the construction cost
        self._lookup: list[dict[int, int] | None] = [None] * g.sets
        self._valid_mask = [0] * g.sets
        self._last_touch = [0] * g.num_lines
        self._fill_order = [0] * g.num_lines
        self._fill_seq = 0
        self._uncacheable = tuple(uncacheable)
        # hot-path constants
        self._offset_bits = g.offset_bits
        self._index_bits = g.index_bits
        self._set_mask = g.sets - 1
        self._ways = g.ways
        self._full_mask = (1 << g.ways) - 1
        self._max_addr = g.max_address
        # set index per flat (set-major) slot, for bulk frame reconstruction
        self._flat_sets = np.repeat(np.arange(g.sets, dtype=np.int64), g.ways)
        # AccessResult is frozen, so hit results can be shared per coordinate
        self._hit_results: list[AccessResult | None] = [None] * g.num_lines
        # python mirror of the tag array; scalar reads beat numpy on evictions
        self._way_tag = [0] * g.num_lines
        # counters
        self.accesses = 0
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self.writebacks = 0
        self.uncached_rejects = 0

    def access(self, addr: int, is_write: bool, time: int) -> AccessResult:
        """Perform one cacheable access at logical time `time`.

        On a miss the line is allocated in its set: into the lowest-index
        invalid way if one exists, else into the policy's victim.
        """
        if self._uncacheable:
            for lo, hi in self._uncacheable:
                if lo <= addr < hi:
                    self.uncached_rejects += 1
                    return UNCACHED
        if addr < 0 or addr > self._max_addr:
            raise AddressRangeError(f"address {addr:#x} outside physical space")
        line = addr >> self._offset_bits
        si = line & self._set_mask
        tg = line >> self._index_bits
        lookup = self._lookup[si]
        if lookup is None:
            lookup = self._lookup[si] = {}
        way = lookup.get(tg)
        self.accesses += 1
        if way is not None:
            self.hits += 1
            flat = si * self._ways + way
            self._last_touch[flat] = time
            if is_write:
                self.dirty[si, way] = True
            res = self._hit_results[flat]
            if res is None:
                res = self._hit_results[flat] = AccessResult(True, si, way)
            return res
        self.misses += 1
        mask = self._valid_mask[si]
        victim_info = None
        if mask != self._full_mask:
            inv = ~mask & self._full_mask
            way = (inv & -inv).bit_length() - 1
            flat = si * self._ways + way
        else:
            way = self.policy.select_victim(self, si)
            flat = si * self._ways + way
            old_tag = self._way_tag[flat]
            old_dirty = bool(self.dirty[si, way])
            old_frame = (old_tag << self._index_bits) | si
            del lookup[old_tag]
            self.evictions += 1
            if old_dirty:
                self.writebacks += 1
            victim_info = (old_frame, old_dirty)
        self.valid[si, way] = True
        self.tag[si, way] = tg
        self.dirty[si, way] = is_write
        lookup[tg] = way
        self._way_tag[flat] = tg
        self._valid_mask[si] = mask | (1 << way)
        self._last_touch[flat] = time
        self._fill_order[flat] = self._fill_seq
        self._fill_seq += 1
        return AccessResult(False, si, way, victim_info)

    def introspect(self, way: int, set_index: int) -> tuple[bool, int | None]:
        """Read one tag-memory entry by (way, set) coordinates.

        Returns (valid, physical line frame number); the frame is None
        for invalid entries. Pure read: never mutates cache state.
        """
        g = self.geometry
        if not 0 <= way < g.ways:
            raise IndexError(f"way {way} out of range (ways={g.ways})")
        if not 0 <= set_index < g.sets:
            raise IndexError(f"set {set_index} out of range (sets={g.sets})")
        if not self.valid[set_index, way]:
            return False, None
        frame = (int(self.tag[set_index, way]) << self._index_bits) | set_index
        return True, frame

    def snapshot_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Bulk equivalent of sweeping introspect over all coordinates.

        Returns (valid, line frame number) flat arrays in set-major,
        way-minor order. Frames of invalid slots are meaningless.
        """
        valid = self.valid.reshape(-1).copy()
        frames = (self.tag.reshape(-1) << self._index_bits) | self._flat_sets
        return valid, frames

    def line(self, set_index: int, way: int) -> LineState:
        valid, frame = self.introspect(way, set_index)
        flat = set_index * self._ways + way
        return LineState(
            valid=valid,
            dirty=bool(self.dirty[set_index, way]),
            tag=int(self.tag[set_index, way]),
            frame=frame if frame is not None else 0,
            last_touch=self._last_touch[flat],
            fill_order=self._fill_order[flat],
        )

    def invalidate_all(self) -> None:
        """Clear every valid bit (idealized whole-cache flush)."""
        self.valid[:] = False
        self.dirty[:] = False
        for d in self._lookup:
            if d is not None:
                d.clear()
        self._valid_mask = [0] * self.geometry.sets

    def valid_per_set(self) -> np.ndarray:
        return self.valid.sum(axis=1)

    def valid_count(self) -> int:
        return int(self.valid.sum())

    def state_hash(self) -> str:
        """Digest of the complete cache state, for purity/determinism checks."""
        h = hashlib.sha256()
        h.update(self.valid.tobytes())
        h.update(self.tag.tobytes())
        h.update(self.dirty.tobytes())
        h.update(np.asarray(self._last_touch, dtype=np.int64).tobytes())
        h.update(np.asarray(self._fill_order, dtype=np.int64).tobytes())
        return h.hexdigest()


def trash_line_address(line_no: int, geom: CacheGeometry) -> int:
    """Physical address of the n-th distinct trigger-owned trash line.

    Consecutive line numbers walk the sets round-robin, so `sets` lines
    cover every set once. Trash tags occupy the top half of the tag
    space, far above any simulated DRAM frame, so trash never collides
    with workload-owned lines and stays unattributable.
    """
    set_index = line_no % geom.sets
    tag = (1 << (geom.tag_bits - 1)) + line_no // geom.sets
    if tag >= (1 << geom.tag_bits):
        raise ValueError(f"trash line {line_no} exceeds the tag space")
    return (tag << (geom.offset_bits + geom.index_bits)) | (set_index << geom.offset_bits)


def flush_and_trash(
    state: CacheState,
    trash_lines: int,
    hard_invalidate: bool = False,
    time: int = 0,
    first_line: int = 0,
) -> int:
    """Destroy observed cache content after a snapshot has been captured.

    `hard_invalidate` clears all valid bits outright (idealized flush).
    `trash_lines` then simulates the post-snapshot copy/post-processing
    traffic by allocating that many distinct trigger-owned lines
    round-robin over the sets. Under deterministic policies
    trash_lines >= ways*sets guarantees no prior line survives; under
    random policies residual survivors are expected and measurable.

    `first_line` continues the trash-line sequence across calls so
    repeated flushes never re-touch (and hit) an earlier trash line.
    Returns the logical time after the trash traffic.
    """
    if hard_invalidate:
        state.invalidate_all()
    for i in range(trash_lines):
        addr = trash_line_address(first_line + i, state.geometry)
        state.access(addr, False, time)
        time += 1
    return time
