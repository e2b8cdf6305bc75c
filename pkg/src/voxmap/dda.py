"""Voxel traversal of a line segment (Amanatides-Woo style DDA).

Everything runs in continuous index space, ``(p - grid_origin) / voxel``,
so the start and end voxels are exactly the ones the tree's floor rule
assigns.  The walk is 6-connected: each step moves one axis by one voxel,
ties between axes resolve x before y before z, and an axis that already
sits on the end voxel's coordinate is never stepped.  The chain therefore
has exactly Manhattan-distance(start, end) voxels before the end voxel,
which is never yielded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from voxmap.tree import INT32_MAX, INT32_MIN, IndexOverflowError, TreeConfig

INF = np.inf


@dataclass(frozen=True)
class Ray:
    """A measurement ray in world coordinates (meters)."""

    origin: tuple[float, float, float]
    end: tuple[float, float, float]
    is_maxray: bool = False

    def __post_init__(self):
        o = tuple(float(v) for v in self.origin)
        e = tuple(float(v) for v in self.end)
        if not all(map(math.isfinite, o + e)):
            raise ValueError("ray endpoints must be finite")
        if o == e:
            raise ValueError("zero-length ray")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "end", e)

    @classmethod
    def from_measurement(cls, origin, point, max_range: float = math.inf) -> Ray:
        """Build a ray, truncating it to ``max_range`` if the point lies beyond."""
        o = np.asarray(origin, dtype=np.float64)
        d = np.asarray(point, dtype=np.float64) - o
        dist = float(np.linalg.norm(d))
        if dist > max_range:
            return cls(tuple(o), tuple(o + d * (max_range / dist)), True)
        return cls(tuple(o), tuple(o + d), False)


# ---------------------------------------------------------------------------
# shared numba core


@njit(cache=True, nogil=True)
def dda_setup(oc, ec, cur, step, tmax, tdelta, end):
    """Initialize traversal from ``oc`` to ``ec`` (continuous index coords).

    Fills the state arrays in place and returns the number of free-chain
    voxels (Manhattan distance between start and end voxel).
    """
    n = 0
    for a in range(3):
        cur[a] = np.int64(np.floor(oc[a]))
        end[a] = np.int64(np.floor(ec[a]))
        d = ec[a] - oc[a]
        if d > 0:
            step[a] = 1
            tdelta[a] = 1.0 / d
            tmax[a] = (cur[a] + 1 - oc[a]) / d
        elif d < 0:
            step[a] = -1
            tdelta[a] = -1.0 / d
            tmax[a] = (oc[a] - cur[a]) / -d
        else:
            step[a] = 0
            tdelta[a] = INF
            tmax[a] = INF
        n += abs(end[a] - cur[a])
    return n


@njit(cache=True, nogil=True, inline="always")
def dda_advance(cur, step, tmax, tdelta, end):
    best = -1
    bt = INF
    for a in range(3):
        if cur[a] != end[a] and (best < 0 or tmax[a] < bt):
            best = a
            bt = tmax[a]
    cur[best] += step[best]
    tmax[best] += tdelta[best]


@njit(cache=True)
def _march_coords(oc, ec):
    cur = np.empty(3, np.int64)
    step = np.empty(3, np.int64)
    end = np.empty(3, np.int64)
    tmax = np.empty(3, np.float64)
    tdelta = np.empty(3, np.float64)
    n = dda_setup(oc, ec, cur, step, tmax, tdelta, end)
    out = np.empty((n, 3), np.int64)
    for i in range(n):
        out[i] = cur
        dda_advance(cur, step, tmax, tdelta, end)
    return out, end


# ---------------------------------------------------------------------------
# public API


def _to_index_space(p, config: TreeConfig) -> np.ndarray:
    config = getattr(config, "config", config)
    c = (np.asarray(p, dtype=np.float64) - np.asarray(config.origin)) / config.voxel_size
    f = np.floor(c)
    if f.min() < INT32_MIN or f.max() > INT32_MAX:
        raise IndexOverflowError(f"ray endpoint {p} outside the 32-bit index range")
    return c


class DDAState:
    """Incremental traversal state for one ray.

    ``step()`` returns the next free-chain voxel, or ``None`` once the
    voxel preceding the endpoint voxel has been returned.
    """

    def __init__(self, ray: Ray, config: TreeConfig):
        oc = _to_index_space(ray.origin, config)
        ec = _to_index_space(ray.end, config)
        self.current = np.empty(3, np.int64)
        self.step_dir = np.empty(3, np.int64)
        self.t_max = np.empty(3, np.float64)
        self.t_delta = np.empty(3, np.float64)
        self.end = np.empty(3, np.int64)
        self.t_end = 1.0
        self.remaining = int(dda_setup(oc, ec, self.current, self.step_dir,
                                       self.t_max, self.t_delta, self.end))

    @property
    def end_voxel(self) -> tuple[int, int, int]:
        return tuple(int(v) for v in self.end)

    def step(self) -> tuple[int, int, int] | None:
        if self.remaining == 0:
            return None
        out = tuple(int(v) for v in self.current)
        self.remaining -= 1
        if self.remaining:
            dda_advance(self.current, self.step_dir, self.t_max, self.t_delta, self.end)
        return out

    def __iter__(self):
        while (c := self.step()) is not None:
            yield c


def dda_init(ray: Ray, config: TreeConfig) -> DDAState:
    return DDAState(ray, config)


def dda_step(state: DDAState):
    return state.step()


def march_array(ray: Ray, config: TreeConfig) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Free-chain voxels as an ``(n, 3)`` array plus the endpoint voxel."""
    coords, end = _march_coords(_to_index_space(ray.origin, config),
                                _to_index_space(ray.end, config))
    return coords, tuple(int(v) for v in end)


def march(ray: Ray, config: TreeConfig,
          visit: Callable[[tuple[int, int, int]], None]) -> tuple[int, tuple[int, int, int]]:
    """Call ``visit`` on each free-chain voxel; return ``(count, endpoint_voxel)``."""
    coords, end = march_array(ray, config)
    for c in coords.tolist():
        visit(tuple(c))
    return len(coords), end
