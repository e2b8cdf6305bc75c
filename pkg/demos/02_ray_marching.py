"""Voxel traversal along a ray.

The march yields the free chain: every voxel the segment passes through
before the endpoint voxel, as a 6-connected path.  The endpoint voxel is
returned separately because it receives the hit.
"""
from __future__ import annotations

from voxmap import Ray, TreeConfig, march_array

cfg = TreeConfig(voxel_size=0.1)

ray = Ray((0.05, 0.05, 0.05), (0.37, 0.21, 0.05))
chain, end = march_array(ray, cfg)
print("free chain:", chain.tolist())
print("endpoint  :", end)

# a diagonal through a voxel corner steps x before y before z
chain, end = march_array(Ray((0.05, 0.05, 0.05), (0.25, 0.15, 0.05)), cfg)
print("corner tie:", chain.tolist(), "->", end)

# ranges beyond the sensor limit are truncated and flagged as max-range rays
far = Ray.from_measurement((0.0, 0.0, 0.0), (100.0, 0.0, 0.0), max_range=6.0)
chain, end = march_array(far, cfg)
print(f"maxray: {far.is_maxray}, {len(chain)} voxels, endpoint {end}")
