"""Synthetic scan scenarios and the timing harness.

Point generation is part of the output format, so it is pinned here:
numpy's PCG64 generator seeded with ``seed``; directions are normalized
standard-normal triples (drawn as one ``(n, 3)`` block), radii are
``R * u ** (1/3)`` with ``u`` uniform in [0, 1) (one ``(n,)`` block), and
``R = 1.2 * ray_length``.  The structured scenario then draws an ``(n,)``
block of uniform offsets in [-0.5, 0.5) and replaces z with
``origin_z + band_center + offset`` (a 1 m band).
"""
from __future__ import annotations

import csv
import gc
import io
import statistics
import time
from dataclasses import dataclass, field, replace

import numpy as np

from voxmap.integrator import IntegrationOptions, UpdateStats, integrate_points
from voxmap.occupancy import OccupancyParams, occupied_mask
from voxmap.tree import Grid, TreeConfig

BENCH_CSV_COLUMNS = (
    "variant", "kind", "n", "ray_m", "res_m", "threads", "run", "t_insert_ms",
    "t_merge_ms", "t_integrate_ms", "t_total_ms", "rays_cast", "occupied_voxels",
)

KINDS = ("random", "structured")


@dataclass(frozen=True)
class Scenario:
    kind: str = "random"
    n_points: int = 50_000
    ray_length: float = 6.0
    resolution: float = 0.1
    seed: int = 0
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    band_center: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.n_points < 1:
            raise ValueError("n_points must be positive")
        if not (self.ray_length > 0 and self.resolution > 0):
            raise ValueError("ray_length and resolution must be positive")

    @property
    def radius(self) -> float:
        return 1.2 * self.ray_length

    def points(self) -> np.ndarray:
        return gen_random(self) if self.kind == "random" else gen_structured(self)


def _ball(sc: Scenario, rng: np.random.Generator) -> np.ndarray:
    d = rng.standard_normal((sc.n_points, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = sc.radius * rng.random(sc.n_points) ** (1.0 / 3.0)
    return np.asarray(sc.origin) + d * r[:, None]


def gen_random(sc: Scenario) -> np.ndarray:
    """Points uniform in the ball of radius ``1.2 * ray_length``."""
    if sc.kind != "random":
        raise ValueError("gen_random needs a random scenario")
    return _ball(sc, np.random.default_rng(sc.seed))


def gen_structured(sc: Scenario) -> np.ndarray:
    """Ball-sampled x/y with z confined to a 1 m band (a wall-like slab)."""
    if sc.kind != "structured":
        raise ValueError("gen_structured needs a structured scenario")
    rng = np.random.default_rng(sc.seed)
    pts = _ball(sc, rng)
    pts[:, 2] = sc.origin[2] + sc.band_center + rng.uniform(-0.5, 0.5, sc.n_points)
    return pts


def wall_points(lo, hi, spacing: float) -> np.ndarray:
    """Regular grid of points filling the closed box ``[lo, hi]``.

    Each axis gets ``ceil(extent / spacing) + 1`` evenly spaced samples, so
    both faces are included and the actual spacing never exceeds
    ``spacing``.  With ``spacing`` below half a voxel every voxel the box
    touches receives at least one point.
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if np.any(hi < lo) or not spacing > 0:
        raise ValueError("need lo <= hi and a positive spacing")
    axes = [np.linspace(a, b, int(np.ceil((b - a) / spacing)) + 1) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)


def variant_options(variant: str, threads: int = 1, max_range: float = 60.0,
                    **overrides) -> IntegrationOptions:
    """Options for a named variant: ``fmap``, ``sub``, ``bun`` or ``par``.

    ``fmap`` is pinned to one worker; ``par`` uses ``threads`` workers with
    both optimizations off.
    """
    v = variant.lower()
    if v == "fmap":
        base = IntegrationOptions(chunks=1, max_range=max_range)
    elif v == "sub":
        base = IntegrationOptions(chunks=threads, max_range=max_range, enable_sub=True)
    elif v == "bun":
        base = IntegrationOptions(chunks=threads, max_range=max_range, enable_bundle=True)
    elif v == "par":
        base = IntegrationOptions(chunks=threads, max_range=max_range)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return replace(base, **overrides)


def variant_label(variant: str, threads: int) -> str:
    v = variant.upper()
    return f"PAR-{threads}" if v == "PAR" else v


@dataclass
class BenchResult:
    scenario: Scenario
    variant: str
    threads: int
    runs: list[UpdateStats] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    occupied_voxels: list[int] = field(default_factory=list)
    map_stats: dict = field(default_factory=dict)

    @property
    def repetitions(self) -> int:
        return len(self.runs)

    @property
    def mean_ms(self) -> float:
        return statistics.fmean(self.wall_ms)

    @property
    def min_ms(self) -> float:
        return min(self.wall_ms)

    def mean_phase(self, phase: str) -> float:
        return statistics.fmean(getattr(s, phase) for s in self.runs)

    def merge_share(self) -> float:
        """Mean merge time divided by mean total phase time."""
        total = self.mean_phase("t_total")
        return self.mean_phase("t_merge") / total if total > 0 else 0.0

    def csv_rows(self) -> list[list]:
        sc = self.scenario
        rows = []
        for i, (s, w, occ) in enumerate(zip(self.runs, self.wall_ms, self.occupied_voxels)):
            rows.append([
                variant_label(self.variant, self.threads), sc.kind, sc.n_points,
                f"{sc.ray_length:g}", f"{sc.resolution:g}", self.threads, i,
                f"{s.t_insert:.3f}", f"{s.t_merge:.3f}", f"{s.t_integrate:.3f}",
                f"{w:.3f}", s.rays_cast, occ,
            ])
        return rows


def bench_csv(results: list[BenchResult], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(BENCH_CSV_COLUMNS)
    for r in results:
        w.writerows(r.csv_rows())
    return buf.getvalue()


def count_occupied(occ: Grid, params: OccupancyParams) -> int:
    _, values = occ.active_voxels()
    return int(occupied_mask(values, params).sum())


def run_bench(scenario: Scenario, variant: str = "fmap", opts: IntegrationOptions | None = None,
              repetitions: int = 5, threads: int = 1, params: OccupancyParams | None = None,
              log2_branch: tuple[int, int, int] = (5, 4, 3), map_dtype=np.float64,
              count_occupancy: bool = True) -> BenchResult:
    """Integrate the scenario's scan into a fresh map ``repetitions`` times.

    When ``opts`` is omitted it is derived from ``variant``/``threads`` with
    ``max_range = ray_length``.  Wall time covers map allocation and the
    three phases.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    params = params or OccupancyParams()
    if opts is None:
        opts = variant_options(variant, threads, max_range=scenario.ray_length)
    threads = opts.chunks
    pts = scenario.points()
    cfg = TreeConfig(log2_branch, scenario.resolution)
    res = BenchResult(scenario, variant, threads)
    for _ in range(repetitions):
        occ = None
        gc.collect()
        t0 = time.perf_counter()
        occ = Grid(cfg, 0.0, map_dtype)
        st = integrate_points(occ, pts, scenario.origin, opts, params)
        res.wall_ms.append((time.perf_counter() - t0) * 1e3)
        res.runs.append(st)
        res.occupied_voxels.append(count_occupied(occ, params) if count_occupancy else -1)
        res.map_stats = occ.stats()
    return res
