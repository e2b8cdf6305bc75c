"""Sparse voxel tree with a fixed height of four.

The layout mirrors the classic VDB tree: a hash-map root keyed by the
origin of upper internal nodes, two levels of dense internal nodes and a
leaf level, every node carrying bitmasks.  Node storage lives in numpy
pools (see :mod:`voxmap._treekern`) so hot loops run under numba.

Two payload kinds are supported:

* ``dtype=bool``: a *bit grid*; each voxel has an active bit and a value
  bit.  Used for per-scan aggregation (value bit = hit).
* ``dtype=np.float32`` / ``np.float64``: a dense float row per leaf.  Used
  for the log-odds map.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from voxmap import _treekern as K

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1


class IndexOverflowError(ValueError):
    """A world position maps outside the signed 32-bit index range."""


class ConfigMismatchError(ValueError):
    """Two grids that must be coaligned are not."""


@dataclass(frozen=True)
class TreeConfig:
    """Branching and world transform of a grid.

    Attributes:
        log2_branch: per-level log2 extents (upper internal, lower internal, leaf).
        voxel_size: edge length of one voxel in meters.
        origin: world position of the corner of voxel (0, 0, 0).
    """

    log2_branch: tuple[int, int, int] = (5, 4, 3)
    voxel_size: float = 0.1
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        lb = tuple(int(v) for v in self.log2_branch)
        if len(lb) != 3:
            raise ValueError("log2_branch needs exactly three levels")
        if any(v < 1 for v in lb):
            raise ValueError(f"log2 extents must be >= 1, got {lb}")
        if sum(lb) > 24:
            raise ValueError("total log2 extent too large")
        vs = float(self.voxel_size)
        if not (vs > 0 and math.isfinite(vs)):
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        org = tuple(float(v) for v in self.origin)
        if len(org) != 3 or not all(map(math.isfinite, org)):
            raise ValueError("origin must be three finite numbers")
        object.__setattr__(self, "log2_branch", lb)
        object.__setattr__(self, "voxel_size", vs)
        object.__setattr__(self, "origin", org)

    @property
    def leaf_dim(self) -> int:
        return 1 << self.log2_branch[2]

    def node_dims(self) -> tuple[int, int, int]:
        """Voxel span per axis of an upper node, a lower node and a leaf."""
        l1, l2, l3 = self.log2_branch
        return 1 << (l1 + l2 + l3), 1 << (l2 + l3), 1 << l3


def _value_kind(dtype):
    if dtype in (bool, np.bool_):
        return np.uint64
    dt = np.dtype(dtype)
    if dt not in (np.float32, np.float64):
        raise TypeError(f"unsupported voxel dtype {dtype!r}")
    return dt.type


class Grid:
    """Sparse voxel grid over the full signed 32-bit index space.

    Inactive voxels read as ``background``.  Node allocation is lazy and
    nodes are never pruned.
    """

    def __init__(self, config: TreeConfig, background=False, dtype=None):
        if dtype is None:
            dtype = bool if isinstance(background, (bool, np.bool_)) else np.float64
        self.config = config
        self._store = _value_kind(dtype)
        self.is_bitgrid = self._store is np.uint64
        if self.is_bitgrid:
            self.dtype = np.dtype(bool)
            self.background = bool(background)
            bg_word = K.ALL if self.background else K.ZERO
        else:
            self.dtype = np.dtype(self._store)
            self.background = self._store(background)
            bg_word = self.background
        self._st = K.empty_state(config.log2_branch, self._store, bg_word)

    # -- transform ---------------------------------------------------------

    def world_to_index(self, p) -> tuple[int, int, int]:
        return world_to_index(self, p)

    def index_to_world(self, c) -> np.ndarray:
        return index_to_world(self, c)

    def world_to_index_many(self, pts) -> np.ndarray:
        """Vectorized ``world_to_index`` returning an ``(n, 3)`` int64 array."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        idx = np.floor((pts - np.asarray(self.config.origin)) / self.config.voxel_size)
        if not np.all(np.isfinite(idx)):
            raise ValueError("non-finite position")
        if idx.size and (idx.min() < INT32_MIN or idx.max() > INT32_MAX):
            raise IndexOverflowError("position outside the 32-bit index range")
        return idx.astype(np.int64)

    # -- access ------------------------------------------------------------

    def accessor(self) -> Accessor:
        return Accessor(self)

    def get(self, c):
        """Uncached root-down lookup, returns ``(active, value)``."""
        return Accessor(self).get(c)

    def set(self, c, value, active: bool = True) -> None:
        Accessor(self).set(c, value, active)

    def active_count(self) -> int:
        return int(K.count_active(self._st))

    def node_counts(self) -> dict[str, int]:
        meta = self._st[0]
        return {
            "root": len(self._st[1]),
            "upper": int(meta[K.M_NU]),
            "lower": int(meta[K.M_NL]),
            "leaf": int(meta[K.M_NF]),
        }

    def memory_bytes(self) -> int:
        meta = self._st[0]
        counts = (meta[K.M_NU], meta[K.M_NL], meta[K.M_NF])
        total = 0
        for level, idx in enumerate(((2, 3, 4, 5), (6, 7, 8, 9), (10, 11, 12))):
            n = int(counts[level])
            for i in idx:
                a = self._st[i]
                total += n * a.strides[0]
        # root entries: key triple plus index
        return total + 32 * len(self._st[1])

    def stats(self) -> dict:
        return stats(self)

    def audit(self) -> None:
        """Raise ``AssertionError`` if any node bitmask disagrees with the tree."""
        code = K.audit(self._st)
        if code:
            raise AssertionError(f"tree audit failed with code {code}")

    def active_voxels(self) -> tuple[np.ndarray, np.ndarray]:
        """All active voxels in canonical order as ``(coords, values)``."""
        order = self._upper_order()
        coords, leaf, vox = K.collect_active(self._st, order)
        vals = self._st[11]
        if self.is_bitgrid:
            words = vals[leaf, vox >> 6]
            values = ((words >> (vox & 63).astype(np.uint64)) & np.uint64(1)).astype(bool)
        else:
            values = vals[leaf, vox]
        return coords, values

    def copy(self) -> Grid:
        out = Grid.__new__(Grid)
        out.__dict__.update(self.__dict__)
        root = K.new_root()
        for k, v in self._st[1].items():
            root[k] = v
        st = [a.copy() if isinstance(a, np.ndarray) else a for a in self._st]
        st[1] = root
        out._st = tuple(st)
        return out

    def _upper_order(self) -> np.ndarray:
        root = self._st[1]
        if len(root) == 0:
            return np.zeros(0, np.int64)
        keys = np.array(list(root.keys()), dtype=np.int64)
        idx = np.array(list(root.values()), dtype=np.int64)
        order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
        return idx[order]

    def __repr__(self):
        return (
            f"Grid(voxel_size={self.config.voxel_size}, dtype={self.dtype}, "
            f"active={self.active_count()})"
        )


class Accessor:
    """Cached access path into one grid; not to be shared between threads.

    Reads and writes are identical to root-down traversal; the cached node
    path only avoids repeated root lookups for nearby voxels.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        self.cache = K.new_cache()

    def get(self, c):
        x, y, z = _check_coord(c)
        g = self.grid
        if g.is_bitgrid:
            a, v = K.get_bit(g._st, self.cache, x, y, z)
            return bool(a), bool(v)
        a, v = K.get_val(g._st, self.cache, x, y, z)
        return bool(a), g.dtype.type(v)

    def set(self, c, value, active: bool = True) -> None:
        x, y, z = _check_coord(c)
        g = self.grid
        if g.is_bitgrid:
            g._st = K.set_bit(g._st, self.cache, x, y, z, bool(value), bool(active))
        else:
            g._st = K.set_val(g._st, self.cache, x, y, z, float(value), bool(active))

    def get_many(self, coords) -> tuple[np.ndarray, np.ndarray]:
        coords = _check_coords(coords)
        g = self.grid
        if g.is_bitgrid:
            return K.get_bit_many(g._st, self.cache, coords)
        return K.get_val_many(g._st, self.cache, coords)

    def set_many(self, coords, values, active=True) -> None:
        coords = _check_coords(coords)
        n = coords.shape[0]
        g = self.grid
        act = np.broadcast_to(np.asarray(active, dtype=bool), (n,)).copy()
        if g.is_bitgrid:
            vals = np.broadcast_to(np.asarray(values, dtype=bool), (n,)).copy()
            g._st = K.set_bit_many(g._st, self.cache, coords, vals, act)
        else:
            vals = np.broadcast_to(np.asarray(values, dtype=np.float64), (n,)).copy()
            g._st = K.set_val_many(g._st, self.cache, coords, vals, act)


def _check_coord(c):
    x, y, z = (int(v) for v in c)
    for v in (x, y, z):
        if not INT32_MIN <= v <= INT32_MAX:
            raise IndexOverflowError(f"coordinate {c} outside the 32-bit index range")
    return x, y, z


def _check_coords(coords) -> np.ndarray:
    coords = np.asarray(coords).reshape(-1, 3)
    if coords.size and (coords.min() < INT32_MIN or coords.max() > INT32_MAX):
        raise IndexOverflowError("coordinate outside the 32-bit index range")
    return np.ascontiguousarray(coords, dtype=np.int64)


# ---------------------------------------------------------------------------
# module-level operations


def new_grid(config: TreeConfig, background=False, dtype=None) -> Grid:
    return Grid(config, background, dtype)


def world_to_index(grid: Grid, p) -> tuple[int, int, int]:
    """Index of the voxel containing world point ``p`` (floor rule)."""
    cfg = grid.config
    out = []
    for v, o in zip(p, cfg.origin):
        v = float(v)
        if not math.isfinite(v):
            raise ValueError(f"non-finite position {p}")
        i = math.floor((v - o) / cfg.voxel_size)
        if not INT32_MIN <= i <= INT32_MAX:
            raise IndexOverflowError(f"position {p} outside the 32-bit index range")
        out.append(i)
    return tuple(out)


def index_to_world(grid: Grid, c) -> np.ndarray:
    """World position of the center of voxel ``c``."""
    cfg = grid.config
    return np.asarray(cfg.origin) + (np.asarray(c, dtype=np.float64) + 0.5) * cfg.voxel_size


def get(acc: Accessor, c):
    return acc.get(c)


def set(acc: Accessor, c, value, active: bool = True) -> None:  # noqa: A001
    acc.set(c, value, active)


def coalign(grid: Grid, scale: int = 1, background=False, dtype=None) -> Grid:
    """Empty grid sharing ``grid``'s origin with voxels ``scale`` times finer."""
    if int(scale) != scale or scale < 1:
        raise ValueError(f"scale must be a positive integer, got {scale}")
    cfg = grid.config
    new_cfg = TreeConfig(cfg.log2_branch, cfg.voxel_size / int(scale), cfg.origin)
    return Grid(new_cfg, background, dtype)


def _require_bitgrids(*grids: Grid) -> None:
    for g in grids:
        if not g.is_bitgrid:
            raise TypeError("operation needs boolean aggregation grids")


def merge_or(dst: Grid, src: Grid, cache: np.ndarray | None = None) -> None:
    """Union ``src`` into ``dst``; where both are active the hit bit is ORed."""
    _require_bitgrids(dst, src)
    if dst.config != src.config:
        raise ConfigMismatchError("merge_or needs coaligned grids")
    if cache is None:
        cache = K.new_cache()
    dst._st = K.merge_or(dst._st, cache, src._st)


def iter_active(grid: Grid) -> Iterator[tuple[tuple[int, int, int], object]]:
    coords, values = grid.active_voxels()
    for c, v in zip(coords.tolist(), values.tolist()):
        yield tuple(c), v


def stats(grid: Grid) -> dict:
    counts = grid.node_counts()
    return {
        "active_voxels": grid.active_count(),
        "node_count_per_level": counts,
        "memory_bytes": grid.memory_bytes(),
    }


def box_voxel_count(lo: Sequence[float], hi: Sequence[float], voxel_size: float,
                    origin: Sequence[float] = (0.0, 0.0, 0.0)) -> int:
    """Number of voxels intersected by the closed box ``[lo, hi]``."""
    n = 1
    for a, b, o in zip(lo, hi, origin):
        n *= math.floor((b - o) / voxel_size) - math.floor((a - o) / voxel_size) + 1
    return n
