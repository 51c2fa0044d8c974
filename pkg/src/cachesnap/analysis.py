"""Snapshot analyses: heat-maps, occupancy, set profiles, interference
metrics, correlation, and replacement-policy statistics.

Everything here is a pure function over immutable snapshot collections.
Per-snapshot quotas use the total number of cache lines (ways * sets) as
the denominator, and pairwise metrics truncate both profiles to the
shorter one; both choices are recorded in the CSV metadata emitted by
the report layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CacheGeometry
from .shutter import SENTINEL_PID, Snapshot
from .vm import PAGE_SIZE


@dataclass
class HeatMap:
    """Lines resident per 4 KB page of one region, per snapshot.

    matrix[page_offset][snapshot_index], each cell bounded by
    page_size / line_size (64 for the default geometry).
    """

    region: str
    matrix: np.ndarray


@dataclass
class Profile:
    """Per-snapshot active/reused line counts for one pid.

    active[t] is the number of lines owned at snapshot t; reused[t] is
    the number of those also present at snapshot t-1 (reused[0] = 0).
    """

    pid: int
    active: np.ndarray
    reused: np.ndarray


@dataclass
class ReplacementStats:
    """density[i] = P(i+1 colliding lines resident); way_freq[w] =
    fraction of replacement decisions that chose way w."""

    density: np.ndarray
    way_freq: np.ndarray


def _line_identity(snap: Snapshot, pid: int) -> np.ndarray:
    """Line identities owned by a pid in one snapshot.

    Physical line addresses when the snapshot retains them (reuse
    survives remapping and way migration); otherwise the resolved
    virtual line addresses, equivalent while mappings are stable.
    """
    idx = snap.records_of(pid)
    if snap.phys_lines is not None:
        return snap.phys_lines[idx]
    return snap.addrs[idx]


def heatmap(snapshots, pid: int, region: str) -> HeatMap:
    """Bin a pid's resolved addresses into 4 KB pages of one region.

    Needs resolution-on snapshots with captured layouts; the region is
    looked up by name in each snapshot's sidecar. Snapshots taken before
    the region was mapped contribute all-zero columns.
    """
    snaps = list(snapshots)
    if not snaps:
        raise ValueError("no snapshots")
    per_snap: list[tuple] = []
    pages = 0
    for snap in snaps:
        if not snap.layouts or pid not in snap.layouts:
            raise ValueError(f"snapshot {snap.sequence} has no recorded layout for pid {pid}")
        vma = next((v for v in snap.layouts[pid] if v.name == region), None)
        per_snap.append((snap, vma))
        if vma is not None:
            pages = max(pages, vma.pages)
    if pages == 0:
        raise ValueError(f"pid {pid} has no region named {region!r} in any snapshot")
    columns = []
    for snap, vma in per_snap:
        if vma is None:
            columns.append(np.zeros(pages, dtype=np.int64))
            continue
        idx = snap.records_of(pid)
        addrs = snap.addrs[idx]
        inside = (addrs >= vma.start) & (addrs < vma.end)
        offsets = (addrs[inside] - vma.start) // PAGE_SIZE
        columns.append(np.bincount(offsets, minlength=pages))
    return HeatMap(region=region, matrix=np.stack(columns, axis=1))


@dataclass
class OccupancyTable:
    """Per-pid line counts per snapshot plus the invalid-line count."""

    pids: list[int]
    counts: np.ndarray  # shape (len(pids), snapshots)
    invalid: np.ndarray  # shape (snapshots,)
    total_lines: int

    def series(self, pid: int) -> np.ndarray:
        return self.counts[self.pids.index(pid)]

    def check_conservation(self) -> None:
        total = self.counts.sum(axis=0) + self.invalid
        if not np.all(total == self.total_lines):
            raise AssertionError("occupancy does not sum to the line count")


def occupancy(snapshots) -> OccupancyTable:
    """Count records per pid per snapshot; pid 0 is unattributed.

    Per-pid counts plus unattributed plus invalid always sum to the
    total number of lines.
    """
    snaps = list(snapshots)
    if not snaps:
        raise ValueError("no snapshots")
    total = snaps[0].num_records
    all_pids = sorted(
        set().union(*(set(np.unique(s.pids).tolist()) for s in snaps)) - {SENTINEL_PID}
    )
    if 0 not in all_pids:
        all_pids = [0] + all_pids
    counts = np.zeros((len(all_pids), len(snaps)), dtype=np.int64)
    invalid = np.zeros(len(snaps), dtype=np.int64)
    index = {pid: i for i, pid in enumerate(all_pids)}
    for t, snap in enumerate(snaps):
        if snap.num_records != total:
            raise ValueError("snapshots have mixed geometries")
        pids, n = np.unique(snap.pids, return_counts=True)
        for pid, c in zip(pids.tolist(), n.tolist()):
            if pid == SENTINEL_PID:
                invalid[t] = c
            else:
                counts[index[pid], t] = c
    return OccupancyTable(pids=all_pids, counts=counts, invalid=invalid, total_lines=total)


def profiles(snapshots, pid: int) -> Profile:
    """Active and reused line counts per snapshot for one pid.

    Meaningful on flush-mode snapshots, where each snapshot holds only
    the lines allocated since the previous one.
    """
    active = []
    reused = []
    prev: set = set()
    first = True
    for snap in snapshots:
        lines = set(_line_identity(snap, pid).tolist())
        active.append(len(lines))
        reused.append(0 if first else len(lines & prev))
        prev = lines
        first = False
    if not active:
        raise ValueError("no snapshots")
    return Profile(pid=pid, active=np.array(active), reused=np.array(reused))


def _common_length(a: Profile, b: Profile) -> int:
    t = min(len(a.active), len(b.active))
    if t == 0:
        raise ValueError("profiles have no overlapping snapshots")
    return t


def active_set_excess(obs: Profile, intf: Profile, geom: CacheGeometry) -> float:
    """Mean over time of how far the summed active sets exceed the cache.

    max(0, (active_obs + active_intf) / total_lines - 1), averaged over
    the common profile length. Returned as a fraction, not a percent.
    """
    t = _common_length(obs, intf)
    total = geom.num_lines
    combined = (obs.active[:t] + intf.active[:t]) / total - 1.0
    return float(np.mean(np.maximum(0.0, combined)))


def reused_set_eviction(obs: Profile, intf: Profile, geom: CacheGeometry) -> float:
    """Mean over time of reused quota (observed) times active quota
    (interferer). Returned as a fraction, not a percent."""
    t = _common_length(obs, intf)
    total = geom.num_lines
    return float(np.mean((obs.reused[:t] / total) * (intf.active[:t] / total)))


def pearson(x, y) -> float:
    """Pearson product-moment correlation of two equal-length series."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("series must be one-dimensional and equal length")
    if len(x) < 2:
        raise ValueError("need at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt(np.sum(dx * dx)))
    sy = float(np.sqrt(np.sum(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("correlation undefined: a series has zero variance")
    return float(np.sum(dx * dy) / (sx * sy))


def replacement_density(snapshots, pid: int, target_set: int = 0) -> ReplacementStats:
    """Distribution of how many colliding lines survived, over trials.

    Each snapshot is one trial taken right after the probe workload
    touched its `ways` same-set lines; k counts the probe pid's lines
    found in the target set. density[k-1] is the fraction of trials
    with exactly k survivors.
    """
    counts = None
    trials = 0
    ways = None
    for snap in snapshots:
        g = snap.geometry
        if ways is None:
            ways = g.ways
            counts = np.zeros(ways + 1, dtype=np.int64)
        base = target_set * g.ways
        window = snap.pids[base : base + g.ways]
        k = int(np.count_nonzero(window == pid))
        counts[k] += 1
        trials += 1
    if not trials:
        raise ValueError("no trial snapshots")
    if counts[0]:
        raise ValueError(f"{counts[0]} trials found zero probe lines; wrong pid or set?")
    density = counts[1:] / trials
    return ReplacementStats(density=density, way_freq=np.zeros(ways))


def mean_resident(stats: ReplacementStats) -> float:
    k = np.arange(1, len(stats.density) + 1)
    return float(np.sum(k * stats.density))


def way_frequency(pairs) -> tuple[np.ndarray, int]:
    """Victim-way frequencies recovered from consecutive snapshot pairs.

    Each pair brackets exactly one probe access; the decision is the
    coordinate whose content changed. Pairs where zero or more than one
    way changed are protocol violations: excluded and counted.

    Returns (per-way frequency summing to 1, violation count).
    """
    counts = None
    violations = 0
    for before, after in pairs:
        if before.geometry != after.geometry:
            raise ValueError("snapshot pair has mixed geometries")
        g = before.geometry
        if counts is None:
            counts = np.zeros(g.ways, dtype=np.int64)
        if before.phys_lines is not None and after.phys_lines is not None:
            changed = np.flatnonzero(before.phys_lines != after.phys_lines)
        else:
            changed = np.flatnonzero(
                (before.pids != after.pids) | (before.addrs != after.addrs)
            )
        if len(changed) != 1:
            violations += 1
            continue
        counts[int(changed[0]) % g.ways] += 1
    if counts is None or counts.sum() == 0:
        raise ValueError("no usable snapshot pairs")
    return counts / counts.sum(), violations
