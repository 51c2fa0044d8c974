"""
Cache model walkthrough: address fields, lookups, and the introspection port
=============================================================================

The simulated LLC is a 2 MB, 16-way, physically-indexed cache with 64 B
lines: 2048 sets, offset bits [0,5], index bits [6,16], tag bits [17,43].
This script decomposes a few addresses, performs some accesses, and reads
the tag memory back through (way, set) coordinates.
"""

from cachesnap import CacheState, DEFAULT_GEOMETRY, decompose_address, make_policy

g = DEFAULT_GEOMETRY
print(f"geometry: {g.total_size // 1024} KB, {g.ways} ways, {g.line_size} B lines "
      f"-> {g.sets} sets, way size {g.way_size // 1024} KB")

# Addresses one way-size (128 KB) apart collide in the same set.
for addr in (0x0, 0x20000, 0x40000, 0x10040, 0x7F):
    tag, set_index, offset = decompose_address(addr, g)
    print(f"  {addr:#08x} -> tag {tag:<4d} set {set_index:<5d} offset {offset}")

# A fresh cache prefers invalid ways; once the set fills, the policy
# picks victims. The RNG is seeded, so replays are identical.
cache = CacheState(g, make_policy("true_random", seed=1))
target_set = 0
for i in range(20):
    addr = i * g.way_size  # all map to set 0
    r = cache.access(addr, is_write=False, time=i)
    note = "evicted a line" if r.victim_evicted else "filled an invalid way"
    print(f"  access {i:2d}: set {r.set_index} way {r.way:2d} "
          f"{'hit ' if r.hit else 'miss'} ({note})")

# The introspection port reconstructs the cached physical line from the
# stored tag plus the set index, without touching cache state.
print("tag-memory sweep of set 0:")
for way in range(g.ways):
    valid, frame = cache.introspect(way, target_set)
    if valid:
        print(f"  way {way:2d}: line base {frame << g.offset_bits:#010x}")
print(f"valid lines in cache: {cache.valid_count()} "
      f"(evictions so far: {cache.evictions})")
