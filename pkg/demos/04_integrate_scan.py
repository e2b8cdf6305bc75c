"""Integrate synthetic scans with the four pipeline variants.

FMAP casts every ray on one worker, PAR splits the scan across workers and
merges per-worker scratch maps, SUB skips rays whose endpoint falls in an
already-cast cell of a finer grid, and BUN holds back the first rays per
endpoint cell and sends later ones toward the running average endpoint.
"""
from __future__ import annotations

import numpy as np

from voxmap import Grid, Scenario, TreeConfig, integrate_points
from voxmap.bench import count_occupied, variant_options
from voxmap.occupancy import OccupancyParams

params = OccupancyParams()
sc = Scenario("structured", 100_000, ray_length=6.0, seed=1)
pts = sc.points()
print(f"{sc.kind} scan: {len(pts)} points, rays up to {sc.ray_length} m")

for variant, threads in (("fmap", 1), ("par", 4), ("sub", 4), ("bun", 4)):
    occ = Grid(TreeConfig(voxel_size=sc.resolution), 0.0, np.float64)
    opts = variant_options(variant, threads, max_range=sc.ray_length)
    st = integrate_points(occ, pts, sc.origin, opts, params)
    print(f"{variant:4s} cast={st.rays_cast:6d} skip_sub={st.rays_skipped_sub:6d} "
          f"skip_bun={st.rays_skipped_bundle:6d} occupied={count_occupied(occ, params):6d} "
          f"insert={st.t_insert:7.1f} ms merge={st.t_merge:6.1f} ms "
          f"integrate={st.t_integrate:6.1f} ms")
