"""Parallel occupancy mapping on a sparse hierarchical voxel tree."""
from __future__ import annotations

from voxmap.bench import BenchResult, Scenario, gen_random, gen_structured, run_bench
from voxmap.dda import DDAState, Ray, dda_init, dda_step, march, march_array
from voxmap.integrator import (IntegrationOptions, ScanFilters, UpdateStats, integrate_points,
                               integrate_scan)
from voxmap.occupancy import (Occupancy, OccupancyParams, classify, logodds, prob, update_hit,
                              update_miss)
from voxmap.replay import (DatasetManifest, ScanFrame, VoxelList, export_map, read_frame,
                           read_voxlist, replay, write_frame)
from voxmap.tree import (Accessor, ConfigMismatchError, Grid, IndexOverflowError, TreeConfig,
                         coalign, merge_or, new_grid)

__version__ = "0.1.0"

__all__ = [
    "Accessor", "BenchResult", "ConfigMismatchError", "DDAState", "DatasetManifest", "Grid",
    "IndexOverflowError", "IntegrationOptions", "Occupancy", "OccupancyParams", "Ray",
    "ScanFilters", "ScanFrame", "Scenario", "TreeConfig", "UpdateStats", "VoxelList",
    "classify", "coalign", "dda_init", "dda_step", "export_map", "gen_random",
    "gen_structured", "integrate_points", "integrate_scan", "logodds", "march", "march_array",
    "merge_or", "new_grid", "prob", "read_frame", "read_voxlist", "replay", "run_bench",
    "update_hit", "update_miss", "write_frame",
]
