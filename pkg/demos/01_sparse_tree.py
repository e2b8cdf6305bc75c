"""A sparse voxel tree: write a few voxels far apart, read them back.

Only the nodes along touched paths are allocated, so voxels millions of
cells apart cost a handful of nodes each.  Run: python3 demos/01_sparse_tree.py
"""
from __future__ import annotations

import numpy as np

from voxmap import Grid, TreeConfig, coalign, merge_or

cfg = TreeConfig(log2_branch=(5, 4, 3), voxel_size=0.1)
grid = Grid(cfg, background=0.0, dtype=np.float64)

acc = grid.accessor()  # caches the last leaf, so neighbouring reads are cheap
acc.set((0, 0, 0), 1.5)
acc.set((1, 0, 0), -0.4)
acc.set((-2_000_000, 7, 3_000_000), 2.0)

active, value = acc.get((0, 0, 0))
print(f"value at origin     : {value} (active={active})")
active, value = acc.get((5, 5, 5))
print(f"untouched voxel     : {value} (active={active}, reads background)")
print("world -> index      :", grid.world_to_index((0.15, -0.01, 0.0)))
print("active voxels       :", grid.active_count())
print("nodes per level     :", grid.node_counts())
print("memory (bytes)      :", grid.memory_bytes())

# boolean grids that share the layout can be OR-merged; this is how the
# per-thread scratch maps are folded together during integration
a, b = coalign(grid, 1, False), coalign(grid, 1, False)
a.set((0, 0, 0), True)
b.set((0, 0, 1), True)
merge_or(a, b)
coords, _ = a.active_voxels()
print("merged bit grid     :", coords.tolist())
