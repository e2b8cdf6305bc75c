"""Independent reference implementations used as test oracles.

None of these share code with the library kernels beyond the voxel chain
of :func:`voxmap.dda.march_array`, which is itself checked against the
fine-sampling oracle below.
"""
from __future__ import annotations

import math
from collections import Counter

import numpy as np
from numba import njit

from voxmap.dda import Ray, march_array
from voxmap.tree import TreeConfig

# ---------------------------------------------------------------------------
# DDA: dense sampling along the segment


@njit(cache=True)
def fine_sample_check(o, e, chain, end, spacing):
    """Check a free chain against dense samples of the segment ``o -> e``.

    Coordinates are in continuous index space (voxel units).  Samples are
    taken every ``spacing`` voxels along the segment (plus the exact start).
    Returns ``(missing, order_errors)``: samples whose voxel (other than the
    endpoint voxel) is absent from ``chain``, and samples whose voxel is in
    the chain but earlier than a voxel already seen (non-monotone order).
    """
    length = math.sqrt((e[0] - o[0]) ** 2 + (e[1] - o[1]) ** 2 + (e[2] - o[2]) ** 2)
    ns = int(math.ceil(length / spacing))
    n = chain.shape[0]
    pos = 0
    missing = 0
    order_errors = 0
    px, py, pz = np.int64(-(2**62)), np.int64(0), np.int64(0)
    for i in range(ns + 1):
        t = min(i * spacing / length, 1.0)
        vx = np.int64(math.floor(o[0] + t * (e[0] - o[0])))
        vy = np.int64(math.floor(o[1] + t * (e[1] - o[1])))
        vz = np.int64(math.floor(o[2] + t * (e[2] - o[2])))
        if vx == px and vy == py and vz == pz:
            continue
        px, py, pz = vx, vy, vz
        if vx == end[0] and vy == end[1] and vz == end[2]:
            continue
        # advance through the chain until the sample voxel turns up
        j = pos
        while j < n and not (chain[j, 0] == vx and chain[j, 1] == vy and chain[j, 2] == vz):
            j += 1
        if j < n:
            pos = j
            continue
        # not ahead of us: either behind (order error) or missing entirely
        k = 0
        while k < pos and not (chain[k, 0] == vx and chain[k, 1] == vy and chain[k, 2] == vz):
            k += 1
        if k < pos:
            order_errors += 1
        else:
            missing += 1
    return missing, order_errors


def chain_violations(chain: np.ndarray, start, end) -> int:
    """Count breaks of the 6-connected monotone-chain property.

    The chain must begin at ``start``, every step must change exactly one
    axis by one in the direction of ``end``, and the last voxel must be a
    face neighbour of ``end`` (or the chain is empty and start == end).
    """
    start = np.asarray(start)
    end = np.asarray(end)
    if len(chain) == 0:
        return int(not np.array_equal(start, end))
    bad = int(not np.array_equal(chain[0], start))
    path = np.vstack([chain, end[None, :]])
    d = np.diff(path, axis=0)
    sign = np.sign(end - start)
    bad += int(np.sum(np.abs(d).sum(axis=1) != 1))
    bad += int(np.sum((d != 0) & (d != sign[None, :])))
    return bad


def to_index_space(p, config: TreeConfig) -> np.ndarray:
    return (np.asarray(p, dtype=np.float64) - np.asarray(config.origin)) / config.voxel_size


# ---------------------------------------------------------------------------
# bundling: count endpoints per voxel


def truncated_endpoints(points, origin, max_range):
    pts = np.asarray(points, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    d = pts - origin
    dist = np.linalg.norm(d, axis=1)
    scale = np.where(dist > max_range, max_range / np.where(dist > 0, dist, 1.0), 1.0)
    return origin + d * scale[:, None]


def bundle_law(points, origin, voxel: float, max_range: float, t: int, strict=False) -> int:
    """Expected cast count when the first ``t`` rays per endpoint voxel are held back."""
    ends = truncated_endpoints(points, origin, max_range)
    keys = np.floor(ends / voxel).astype(np.int64)
    counts = Counter(map(tuple, keys.tolist()))
    hold = t + 1 if strict else t
    return sum(max(0, k - hold) for k in counts.values())


# ---------------------------------------------------------------------------
# whole-scan reference integrator (pure Python, sequential)


def reference_integrate(logodds: dict, points, origin, config: TreeConfig, *, max_range=60.0,
                        l_hit, l_miss, l_min, l_max, maxray_as_free=True, enable_sub=False,
                        sub_factor=4, enable_bundle=False, bundle_threshold=1,
                        bundle_strict=False):
    """Integrate one scan into ``logodds`` (a voxel -> value dict).

    Processes points strictly in order.  Returns a dict of counters.
    """
    o = np.asarray(origin, dtype=np.float64)
    voxel = config.voxel_size
    g0 = np.asarray(config.origin)
    hits, frees = set(), set()
    sub_seen = set()
    bundles: dict = {}
    cnt = Counter()
    for p in np.asarray(points, dtype=np.float64):
        if not np.all(np.isfinite(p)):
            cnt["dropped"] += 1
            continue
        d = p - o
        dist = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        if dist == 0.0:
            cnt["dropped"] += 1
            continue
        cnt["points_in"] += 1
        is_max = dist > max_range
        if is_max:
            s = max_range / dist
            d = d * s
            p = o + d
        target, tmax = p, is_max
        if enable_sub:
            sk = tuple(int(v) for v in np.floor((p - g0) / (voxel / sub_factor)))
            if sk in sub_seen:
                cnt["skip_sub"] += 1
                continue
        if enable_bundle:
            ek = tuple(int(v) for v in np.floor((p - g0) / voxel))
            b = bundles.setdefault(ek, [0, np.zeros(3), False])
            trigger = b[0] > bundle_threshold if bundle_strict else b[0] >= bundle_threshold
            if not trigger:
                b[0] += 1
                b[1] = b[1] + d
                b[2] = b[2] or is_max
                cnt["skip_bundle"] += 1
                continue
            target = o + b[1] / b[0]
            tmax = b[2]
        cnt["rays_cast"] += 1
        if enable_sub:
            sub_seen.add(sk)
        chain, end = march_array(Ray(tuple(o), tuple(target)), config)
        frees.update(map(tuple, chain.tolist()))
        if tmax and maxray_as_free:
            frees.add(end)
        else:
            hits.add(end)
    frees -= hits
    for v in hits:
        logodds[v] = min(logodds.get(v, 0.0) + l_hit, l_max)
    for v in frees:
        logodds[v] = max(logodds.get(v, 0.0) + l_miss, l_min)
    cnt["voxels_hit"] = len(hits)
    cnt["voxels_freed"] = len(frees)
    return cnt


def grid_to_dict(grid) -> dict:
    coords, values = grid.active_voxels()
    return {tuple(c): float(v) for c, v in zip(coords.tolist(), values.tolist())}


def canonical_key(c, log2=(5, 4, 3)):
    """Sort key of a voxel in the tree's canonical order, computed directly.

    Upper-node origins sort lexicographically; inside every node children
    are ordered x-major with z fastest.
    """
    l1, l2, l3 = log2
    s0 = l1 + l2 + l3
    x, y, z = c
    key = [x >> s0, y >> s0, z >> s0]
    for shift, bits in ((l2 + l3, l1), (l3, l2), (0, l3)):
        m = (1 << bits) - 1
        key += [(x >> shift) & m, (y >> shift) & m, (z >> shift) & m]
    return tuple(key)
