"""cachesnap: deterministic shared-cache snapshotting simulator and analyses."""

__version__ = "0.1.0"

from .geometry import CacheGeometry, DEFAULT_GEOMETRY, decompose_address, recompose_address
from .cache import (
    AccessResult,
    CacheState,
    LineState,
    flush_and_trash,
    make_policy,
)
from .vm import VMA, FramePool, VirtualMemory
from .workload import (
    Scheduler,
    TaskSpec,
    TimingModel,
    TriggerSpec,
    build_benchmark,
    measure_slowdown,
    program_access_count,
    run,
)
from .shutter import (
    Snapshot,
    SnapshotRecord,
    SnapshotStore,
    ShutterConfig,
    acquire,
    deserialize,
    pollution,
    serialize,
)
from .analysis import (
    HeatMap,
    Profile,
    ReplacementStats,
    active_set_excess,
    heatmap,
    occupancy,
    pearson,
    profiles,
    replacement_density,
    reused_set_eviction,
    way_frequency,
)

__all__ = [
    "CacheGeometry",
    "DEFAULT_GEOMETRY",
    "decompose_address",
    "recompose_address",
    "AccessResult",
    "CacheState",
    "LineState",
    "flush_and_trash",
    "make_policy",
    "VMA",
    "FramePool",
    "VirtualMemory",
    "Scheduler",
    "TaskSpec",
    "TimingModel",
    "TriggerSpec",
    "build_benchmark",
    "measure_slowdown",
    "program_access_count",
    "run",
    "Snapshot",
    "SnapshotRecord",
    "SnapshotStore",
    "ShutterConfig",
    "acquire",
    "deserialize",
    "pollution",
    "serialize",
    "HeatMap",
    "Profile",
    "ReplacementStats",
    "active_set_excess",
    "heatmap",
    "occupancy",
    "pearson",
    "profiles",
    "replacement_density",
    "reused_set_eviction",
    "way_frequency",
]
