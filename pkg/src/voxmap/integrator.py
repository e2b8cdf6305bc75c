"""Parallel scan integration into a log-odds map.

One scan is integrated in three phases:

1. *insert*: points are split into ``chunks`` contiguous pieces; each worker
   casts its rays into a private boolean temp grid (free chain marked
   active/false, endpoint marked active/true).
2. *merge*: each temp grid is ORed into a per-scan aggregation grid while
   holding the merge lock.  A voxel that is any ray's endpoint stays a hit.
3. *integrate*: one pass over the aggregation grid applies exactly one hit
   or miss update per observed voxel.

Two optional filters cut the number of cast rays.  Subsampling skips a
point whose endpoint falls in an already-cast cell of a ``sub_factor``
finer grid.  Bundling accumulates the first ``bundle_threshold`` points per
endpoint voxel without casting them; later points to that voxel are cast
towards the running-average endpoint.  Both filter tables are shared by all
workers of a scan; a worker checks and updates them for its whole chunk
under one lock before it starts marching.
"""
from __future__ import annotations

import csv
import io
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np
from numba import njit, types
from numba.typed import Dict

from voxmap import _treekern as K
from voxmap.dda import dda_advance, dda_setup
from voxmap.occupancy import OccupancyParams
from voxmap.tree import Grid, coalign, merge_or

UPDATE_CSV_COLUMNS = (
    "frame", "points_in", "rays_cast", "skip_sub", "skip_bundle", "voxels_hit",
    "voxels_freed", "t_insert_ms", "t_merge_ms", "t_integrate_ms",
)


@dataclass(frozen=True)
class IntegrationOptions:
    """Knobs of the update scheme.

    ``bundle_strict`` switches the bundle trigger from ``count >= threshold``
    (the first ``threshold`` rays of a voxel are held back) to
    ``count > threshold``.
    """

    chunks: int = 1
    max_range: float = 60.0
    enable_sub: bool = False
    sub_factor: int = 4
    enable_bundle: bool = False
    bundle_threshold: int = 1
    bundle_strict: bool = False
    maxray_as_free: bool = True
    flush_bundles: bool = False

    def __post_init__(self):
        if int(self.chunks) != self.chunks or self.chunks < 1:
            raise ValueError("chunks must be a positive integer")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        sf = int(self.sub_factor)
        if sf != self.sub_factor or sf < 1 or sf & (sf - 1):
            raise ValueError("sub_factor must be a power of two")
        if int(self.bundle_threshold) != self.bundle_threshold or self.bundle_threshold < 1:
            raise ValueError("bundle_threshold must be an integer >= 1")

    @property
    def filtered(self) -> bool:
        return self.enable_sub or self.enable_bundle


@dataclass
class UpdateStats:
    """Counters and phase timings (milliseconds) of one integrated scan."""

    points_in: int = 0
    rays_cast: int = 0
    rays_skipped_sub: int = 0
    rays_skipped_bundle: int = 0
    voxels_hit: int = 0
    voxels_freed: int = 0
    t_insert: float = 0.0
    t_merge: float = 0.0
    t_integrate: float = 0.0
    points_dropped: int = 0

    @property
    def t_total(self) -> float:
        return self.t_insert + self.t_merge + self.t_integrate

    @property
    def balanced(self) -> bool:
        return self.rays_cast + self.rays_skipped_sub + self.rays_skipped_bundle == self.points_in

    def __iadd__(self, other: UpdateStats) -> UpdateStats:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def csv_row(self, frame: int) -> list:
        return [
            frame, self.points_in, self.rays_cast, self.rays_skipped_sub,
            self.rays_skipped_bundle, self.voxels_hit, self.voxels_freed,
            f"{self.t_insert:.3f}", f"{self.t_merge:.3f}", f"{self.t_integrate:.3f}",
        ]


def stats_csv(rows: list[UpdateStats], start_frame: int = 0) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(UPDATE_CSV_COLUMNS)
    for i, s in enumerate(rows):
        w.writerow(s.csv_row(start_frame + i))
    return buf.getvalue()


# ---------------------------------------------------------------------------
# filters

_BUNDLE_VALUE = types.Tuple((types.int64, types.float64, types.float64,
                             types.float64, types.boolean, types.boolean))


class ScanFilters:
    """Per-scan subsample set and bundle table shared by all workers.

    The subsample set holds cells of the finer grid whose ray was cast.  A
    bundle entry is ``(count, sum_dx, sum_dy, sum_dz, maxray, fired)``
    where the sums accumulate endpoint offsets from the sensor origin.
    """

    def __init__(self):
        self.sub = Dict.empty(key_type=K.KEY_TYPE, value_type=types.boolean)
        self.bundles = Dict.empty(key_type=K.KEY_TYPE, value_type=_BUNDLE_VALUE)
        self.lock = threading.Lock()

    def clear(self) -> None:
        self.sub.clear()
        self.bundles.clear()


@njit(cache=True, nogil=True)
def _plan_chunk(points, origin, g0, voxel, sub_voxel, max_range, enable_sub,
                enable_bun, thresh, strict, hsub, hbun):
    """Truncate and filter one chunk; return the rays that must be cast.

    Returns ``(targets, maxray, dropped, skip_sub, skip_bun)`` with targets
    in world coordinates.
    """
    n = points.shape[0]
    targets = np.empty((n, 3), np.float64)
    maxray = np.zeros(n, np.bool_)
    m = 0
    dropped = 0
    skip_sub = 0
    skip_bun = 0
    lo = -2147483648.0
    hi = 2147483647.0
    sk = (np.int64(0), np.int64(0), np.int64(0))
    for i in range(n):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        if not (np.isfinite(px) and np.isfinite(py) and np.isfinite(pz)):
            dropped += 1
            continue
        dx, dy, dz = px - origin[0], py - origin[1], pz - origin[2]
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        if dist == 0.0:
            dropped += 1
            continue
        is_max = dist > max_range
        if is_max:
            s = max_range / dist
            dx, dy, dz = dx * s, dy * s, dz * s
            px, py, pz = origin[0] + dx, origin[1] + dy, origin[2] + dz
        ex = np.floor((px - g0[0]) / voxel)
        ey = np.floor((py - g0[1]) / voxel)
        ez = np.floor((pz - g0[2]) / voxel)
        if min(ex, ey, ez) < lo or max(ex, ey, ez) > hi:
            dropped += 1
            continue
        tx, ty, tz, tmax = px, py, pz, is_max
        if enable_sub:
            sk = (np.int64(np.floor((px - g0[0]) / sub_voxel)),
                  np.int64(np.floor((py - g0[1]) / sub_voxel)),
                  np.int64(np.floor((pz - g0[2]) / sub_voxel)))
            if sk in hsub:
                skip_sub += 1
                continue
        if enable_bun:
            ek = (np.int64(ex), np.int64(ey), np.int64(ez))
            if ek in hbun:
                cnt, sx, sy, sz, bmax, fired = hbun[ek]
            else:
                cnt, sx, sy, sz, bmax, fired = 0, 0.0, 0.0, 0.0, False, False
            trigger = cnt > thresh if strict else cnt >= thresh
            if trigger:
                tx = origin[0] + sx / cnt
                ty = origin[1] + sy / cnt
                tz = origin[2] + sz / cnt
                tmax = bmax
                if not fired:
                    hbun[ek] = (cnt, sx, sy, sz, bmax, True)
            else:
                hbun[ek] = (cnt + 1, sx + dx, sy + dy, sz + dz, bmax or is_max, False)
                skip_bun += 1
                continue
        targets[m, 0], targets[m, 1], targets[m, 2] = tx, ty, tz
        maxray[m] = tmax
        m += 1
        if enable_sub:
            hsub[sk] = True
    return targets[:m], maxray[:m], dropped, skip_sub, skip_bun


@njit(cache=True, nogil=True)
def _flush_plan(origin, hbun):
    n = 0
    for v in hbun.values():
        if v[0] > 0 and not v[5]:
            n += 1
    targets = np.empty((n, 3), np.float64)
    maxray = np.zeros(n, np.bool_)
    k = 0
    for v in hbun.values():
        if v[0] > 0 and not v[5]:
            targets[k, 0] = origin[0] + v[1] / v[0]
            targets[k, 1] = origin[1] + v[2] / v[0]
            targets[k, 2] = origin[2] + v[3] / v[0]
            maxray[k] = v[4]
            k += 1
    return targets, maxray


@njit(cache=True, nogil=True)
def _walk(lc, lam, uam, fam, fv, fo, cache, cur, step, tmax, tdelta, end,
          k, n, hit_end, l1, l2, l3):
    """Mark chain voxels ``k..n`` (index ``n`` is the endpoint).

    Works on bare arrays so the hot loop carries no state tuple.  Returns
    the step at which a leaf is missing from the cached path (the caller
    allocates it and resumes), or ``n + 1`` when the ray is done.
    """
    s2 = l2 + l3
    while k <= n:
        x, y, z = cur[0], cur[1], cur[2]
        fx, fy, fz = (x >> l3) << l3, (y >> l3) << l3, (z >> l3) << l3
        fi = cache[11]
        if fi < 0 or fx != cache[8] or fy != cache[9] or fz != cache[10]:
            li = cache[7]
            if li < 0 or (x >> s2) << s2 != cache[4] or (y >> s2) << s2 != cache[5] \
                    or (z >> s2) << s2 != cache[6]:
                return k
            fi = np.int64(lc[li, K.child_index(x, y, z, l3, l2)])
            if fi < 0:
                return k
            cache[8], cache[9], cache[10], cache[11] = fx, fy, fz, fi
        vi = K.child_index(x, y, z, 0, l3)
        w = vi >> 6
        b = K.bit(vi & 63)
        hit = k == n and hit_end
        if hit:
            fv[fi, w] |= b
        if not (fam[fi, w] & b):
            if not hit:
                fv[fi, w] &= ~b
            was_empty = K.row_empty(fam, fi)
            fam[fi, w] |= b
            if was_empty:
                li, ui = cache[7], cache[3]
                ci = K.child_index(fx, fy, fz, l3, l2)
                lower_was_empty = K.row_empty(lam, li)
                lam[li, ci >> 6] |= K.bit(ci & 63)
                if lower_was_empty:
                    cu = K.child_index(fx, fy, fz, s2, l1)
                    uam[ui, cu >> 6] |= K.bit(cu & 63)
        if k < n:
            dda_advance(cur, step, tmax, tdelta, end)
        k += 1
    return k


@njit(cache=True, nogil=True)
def _march_rays(st, cache, origin, targets, maxray, g0, voxel, maxray_as_free):
    """Mark every ray's free chain and endpoint in a boolean grid."""
    meta = st[0]
    l1, l2, l3 = meta[K.M_L1], meta[K.M_L2], meta[K.M_L3]
    oc = np.empty(3, np.float64)
    ec = np.empty(3, np.float64)
    cur = np.empty(3, np.int64)
    step = np.empty(3, np.int64)
    end = np.empty(3, np.int64)
    tmax = np.empty(3, np.float64)
    tdelta = np.empty(3, np.float64)
    for a in range(3):
        oc[a] = (origin[a] - g0[a]) / voxel
    visits = 0
    for r in range(targets.shape[0]):
        for a in range(3):
            ec[a] = (targets[r, a] - g0[a]) / voxel
        n = dda_setup(oc, ec, cur, step, tmax, tdelta, end)
        visits += n
        hit_end = not (maxray[r] and maxray_as_free)
        k = 0
        while True:
            k = _walk(st[6], st[8], st[4], st[10], st[11], st[12], cache, cur, step,
                      tmax, tdelta, end, k, n, hit_end, l1, l2, l3)
            if k > n:
                break
            st, _ = K.probe(st, cache, cur[0], cur[1], cur[2], True)
    return st, visits


# ---------------------------------------------------------------------------
# operations


def chunk_points(points, c: int) -> list:
    """Split into ``c`` contiguous chunks whose sizes differ by at most one."""
    if int(c) != c or c < 1:
        raise ValueError("chunk count must be >= 1")
    n = len(points)
    base, extra = divmod(n, c)
    out = []
    start = 0
    for i in range(c):
        size = base + (1 if i < extra else 0)
        out.append(points[start:start + size])
        start += size
    return out


@dataclass
class ChunkStats:
    points: int = 0
    dropped: int = 0
    rays_cast: int = 0
    skip_sub: int = 0
    skip_bundle: int = 0
    visits: int = 0


def _transform(grid: Grid):
    cfg = grid.config
    return np.asarray(cfg.origin, dtype=np.float64), cfg.voxel_size


def cast_chunk(chunk, origin, temp: Grid, filters: ScanFilters | None,
               opts: IntegrationOptions, cache: np.ndarray | None = None) -> ChunkStats:
    """Raycast one chunk of world points into the boolean grid ``temp``.

    ``filters`` may be ``None`` when neither optimization is enabled.
    """
    pts = np.ascontiguousarray(chunk, dtype=np.float64).reshape(-1, 3)
    origin = np.asarray(origin, dtype=np.float64)
    g0, voxel = _transform(temp)
    sub_voxel = voxel / opts.sub_factor
    if opts.filtered:
        if filters is None:
            raise ValueError("filters are required when an optimization is enabled")
        with filters.lock:
            plan = _plan_chunk(pts, origin, g0, voxel, sub_voxel, opts.max_range,
                               opts.enable_sub, opts.enable_bundle,
                               int(opts.bundle_threshold), opts.bundle_strict,
                               filters.sub, filters.bundles)
    else:
        plan = _plan_chunk(pts, origin, g0, voxel, sub_voxel, opts.max_range,
                           False, False, 1, False, _EMPTY_SUB, _EMPTY_BUN)
    targets, maxray, dropped, skip_sub, skip_bun = plan
    if cache is None:
        cache = K.new_cache()
    temp._st, visits = _march_rays(temp._st, cache, origin, targets, maxray, g0,
                                   voxel, opts.maxray_as_free)
    return ChunkStats(len(pts) - dropped, dropped, len(targets), skip_sub, skip_bun, visits)


_EMPTY_SUB = Dict.empty(key_type=K.KEY_TYPE, value_type=types.boolean)
_EMPTY_BUN = Dict.empty(key_type=K.KEY_TYPE, value_type=_BUNDLE_VALUE)


def merge_temp(agg: Grid, temp: Grid, lock: threading.Lock | None = None,
               cache: np.ndarray | None = None) -> float:
    """OR ``temp`` into ``agg`` under ``lock``; returns the time spent merging (ms)."""
    lock = lock or threading.Lock()
    with lock:
        t0 = time.perf_counter()
        merge_or(agg, temp, cache)
        return (time.perf_counter() - t0) * 1e3


def apply_aggregate(occ: Grid, agg: Grid, params: OccupancyParams,
                    cache: np.ndarray | None = None) -> tuple[int, int]:
    """Apply one hit or miss update per active aggregation voxel."""
    if occ.is_bitgrid or not agg.is_bitgrid:
        raise TypeError("need a float map and a boolean aggregation grid")
    if occ.config != agg.config:
        raise ValueError("map and aggregation grid are not coaligned")
    if cache is None:
        cache = K.new_cache()
    occ._st, hits, frees = K.apply_aggregate(
        occ._st, cache, agg._st, params.l_hit, params.l_miss, params.l_min, params.l_max)
    return int(hits), int(frees)


_POOLS: dict[int, ThreadPoolExecutor] = {}


def _pool(n: int) -> ThreadPoolExecutor:
    if n not in _POOLS:
        _POOLS[n] = ThreadPoolExecutor(max_workers=n, thread_name_prefix="voxmap")
    return _POOLS[n]


def integrate_points(occ: Grid, points, origin, opts: IntegrationOptions | None = None,
                     params: OccupancyParams | None = None) -> UpdateStats:
    """Integrate one scan given as world-space points seen from ``origin``."""
    opts = opts or IntegrationOptions()
    params = params or OccupancyParams()
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("empty scan")
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(origin)):
        raise ValueError("non-finite sensor origin")

    t0 = time.perf_counter()
    agg = coalign(occ, 1, False)
    filters = ScanFilters() if opts.filtered else None
    merge_lock = threading.Lock()
    agg_cache = K.new_cache()
    chunks = chunk_points(pts, opts.chunks)

    def work(chunk):
        temp = coalign(occ, 1, False)
        cs = cast_chunk(chunk, origin, temp, filters, opts)
        cs_merge = merge_temp(agg, temp, merge_lock, agg_cache)
        return cs, cs_merge

    if opts.chunks == 1:
        results = [work(chunks[0])]
    else:
        results = list(_pool(opts.chunks).map(work, chunks))

    st = UpdateStats()
    for cs, tm in results:
        st.points_in += cs.points
        st.points_dropped += cs.dropped
        st.rays_cast += cs.rays_cast
        st.rays_skipped_sub += cs.skip_sub
        st.rays_skipped_bundle += cs.skip_bundle
        st.t_merge += tm

    if opts.enable_bundle and opts.flush_bundles:
        targets, maxray = _flush_plan(origin, filters.bundles)
        if len(targets):
            temp = coalign(occ, 1, False)
            g0, voxel = _transform(temp)
            temp._st, _ = _march_rays(temp._st, K.new_cache(), origin, targets, maxray,
                                      g0, voxel, opts.maxray_as_free)
            st.t_merge += merge_temp(agg, temp, merge_lock, agg_cache)
            # each flushed bundle turns one held-back point into a cast ray
            st.rays_cast += len(targets)
            st.rays_skipped_bundle -= len(targets)

    t1 = time.perf_counter()
    st.t_insert = max((t1 - t0) * 1e3 - st.t_merge, 0.0)
    st.voxels_hit, st.voxels_freed = apply_aggregate(occ, agg, params)
    st.t_integrate = (time.perf_counter() - t1) * 1e3
    if not st.balanced:
        raise RuntimeError(f"ray accounting out of balance: {st}")
    return st


def integrate_scan(occ: Grid, frame, opts: IntegrationOptions | None = None,
                   params: OccupancyParams | None = None) -> UpdateStats:
    """Integrate a :class:`~voxmap.replay.ScanFrame` (or anything with
    ``origin`` and ``world_points()``)."""
    return integrate_points(occ, frame.world_points(), frame.origin, opts, params)
