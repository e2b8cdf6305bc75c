"""Log-odds occupancy updates for a single voxel.

Hits and misses add constants in log-odds space, clamped to a band so the
map can still change its mind.  Classification thresholds turn the value
back into occupied / free / unknown.
"""
from __future__ import annotations

from voxmap import OccupancyParams, classify, prob, update_hit, update_miss

p = OccupancyParams()
print(f"l_hit={p.l_hit:.4f} l_miss={p.l_miss:.4f} clamp=[{p.l_min}, {p.l_max}]")

v = 0.0
for step, obs in enumerate("HHMHHHHHHM", 1):
    v = update_hit(v, p) if obs == "H" else update_miss(v, p)
    print(f"{step:2d} {obs}  l={v:+.4f}  p={prob(v):.3f}  {classify(v, True, p).name}")

print("never observed:", classify(0.0, False, p).name)
