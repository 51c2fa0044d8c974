"""
Predicting shared-cache interference from isolation profiles
============================================================

Each workload is first profiled alone with flush-mode snapshots, giving
its active set (lines per snapshot window) and reused set (lines kept
across consecutive windows). Two predictors follow for any pair:

  active set excess   - how far the summed active sets overflow the cache
  reused set eviction - reused quota (observed) x active quota (interferer)

Ground truth is the measured slowdown when the pair actually co-runs on
two cores. This is a scaled-down suite, so it finishes in under a
minute; correlations land well above 0.5 for both predictors, with the
reuse-based one ahead.
"""

import time
from pathlib import Path

from cachesnap import DEFAULT_GEOMETRY
from cachesnap.analysis import active_set_excess, pearson, profiles, reused_set_eviction
from cachesnap.config import InterferenceSpec
from cachesnap.experiment import interference_suite

OUT = Path("demo_out")
OUT.mkdir(exist_ok=True)
g = DEFAULT_GEOMETRY

# the snapshot window must cover more than half the cache lines, or the
# summed active sets can never exceed the cache and ASE degenerates to 0
spec = InterferenceSpec(
    workloads=["disparity_like", "mser_like", "sift_like", "track_like", "bomb"],
    observed=["disparity_like", "mser_like", "sift_like", "track_like"],
    period=24576,
    snapshots=40,
    pair_accesses=120_000,
)
t0 = time.time()
res = interference_suite(g, spec, seed=2024)
profs = {n: profiles(res.profile_snapshots[n], res.profile_pids[n])
         for n in spec.workloads}

print(f"profiled {len(spec.workloads)} workloads and "
      f"{len(res.slowdowns)} pairs in {time.time() - t0:.0f}s\n")
print(f"{'observed':15s} {'interferer':15s} {'slowdown':>8s} {'ASE':>8s} {'RSE':>8s}")
rows = []
for (obs, intf), s in sorted(res.slowdowns.items()):
    a = active_set_excess(profs[obs], profs[intf], g)
    r = reused_set_eviction(profs[obs], profs[intf], g)
    rows.append((obs, intf, s, a, r))
    print(f"{obs:15s} {intf:15s} {s:8.3f} {a:8.4f} {r:8.4f}")

slowdowns = [r[2] for r in rows]
print(f"\ncorrelation with slowdown: "
      f"ASE r={pearson([r[3] for r in rows], slowdowns):.3f}, "
      f"RSE r={pearson([r[4] for r in rows], slowdowns):.3f}")
print("(the original hardware study reported 0.74 and 0.80)")

csv = OUT / "interference_metrics.csv"
with csv.open("w") as f:
    f.write("# schema: observed,interferer,slowdown,ase,rse\n")
    for obs, intf, s, a, r in rows:
        f.write(f"{obs},{intf},{s:.6f},{a:.6f},{r:.6f}\n")
print(f"wrote {csv}")
