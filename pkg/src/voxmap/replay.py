"""Dataset replay: frame files, manifests, map export.

Frame wire format (OCCF v1, little-endian)::

    magic   4s   b"OCCF"
    version u16  1
    flags   u16  bit0 set: points are already in world space
    stamp   f64  seconds
    origin  3*f64
    quat    4*f64  (w, x, y, z), unit norm within 1e-6
    count   u32
    points  count*3*f32

A frame file may hold several frames back to back (a packed stream).  A
manifest is a text file listing frame files, one per line, relative to the
manifest's directory; ``#`` starts a comment.  Directive comments of the
form ``#@ key=value`` carry hints (``resolution``, ``space``).

Map exports ("voxlist v1") list occupied voxels in canonical tree order
with their occupancy probability as f32:

* text: a ``# voxlist v1`` header line then ``x y z p`` lines, LF endings;
* binary: ``b"VXL1"``, u64 count, then count records of 3*i32 + f32.
"""
from __future__ import annotations

import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from voxmap.integrator import IntegrationOptions, UpdateStats, integrate_scan
from voxmap.occupancy import OccupancyParams, occupied_mask, prob_array
from voxmap.tree import Grid

log = logging.getLogger(__name__)

MAGIC = b"OCCF"
VERSION = 1
FLAG_WORLD = 1
_HEADER = struct.Struct("<4sHHd3d4dI")
HEADER_SIZE = _HEADER.size  # 76
QUAT_TOL = 1e-6

VOXLIST_MAGIC = b"VXL1"
VOXLIST_HEADER = "# voxlist v1"
_VXL_RECORD = np.dtype([("x", "<i4"), ("y", "<i4"), ("z", "<i4"), ("p", "<f4")])


class FrameFormatError(ValueError):
    """Malformed frame bytes; ``offset`` is where decoding failed."""

    def __init__(self, msg: str, offset: int | None = None):
        super().__init__(msg if offset is None else f"{msg} (at byte offset {offset})")
        self.offset = offset


class VoxlistFormatError(ValueError):
    pass


class ReplayError(RuntimeError):
    """A frame could not be decoded or integrated; ``frame_index`` is 0-based."""

    def __init__(self, frame_index: int, cause: Exception):
        super().__init__(f"frame {frame_index}: {cause}")
        self.frame_index = frame_index
        self.cause = cause


# ---------------------------------------------------------------------------
# frames


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = (float(v) for v in q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@dataclass
class ScanFrame:
    """One sensor sweep with its pose.

    ``points`` is an ``(n, 3)`` float32 array, in world space when
    ``world`` is set and in the sensor frame otherwise.
    """

    timestamp: float
    origin: tuple[float, float, float]
    orientation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.float32))
    world: bool = True

    def __post_init__(self):
        self.timestamp = float(self.timestamp)
        self.origin = tuple(float(v) for v in self.origin)
        self.orientation = tuple(float(v) for v in self.orientation)
        self.points = np.ascontiguousarray(self.points, dtype=np.float32).reshape(-1, 3)
        if len(self.origin) != 3 or len(self.orientation) != 4:
            raise ValueError("origin needs 3 and orientation 4 components")

    def validate(self) -> None:
        pose = (self.timestamp,) + self.origin + self.orientation
        if not all(map(math.isfinite, pose)):
            raise ValueError("NaN or infinite pose")
        n = math.sqrt(sum(v * v for v in self.orientation))
        if abs(n - 1.0) > QUAT_TOL:
            raise ValueError(f"quaternion norm {n!r} not within 1e-6 of 1")

    def world_points(self) -> np.ndarray:
        p = self.points.astype(np.float64)
        if self.world:
            return p
        return p @ quat_to_matrix(self.orientation).T + np.asarray(self.origin)

    def __eq__(self, other):
        if not isinstance(other, ScanFrame):
            return NotImplemented
        return (self.timestamp == other.timestamp and self.origin == other.origin
                and self.orientation == other.orientation and self.world == other.world
                and self.points.tobytes() == other.points.tobytes())


def write_frame(frame: ScanFrame) -> bytes:
    frame.validate()
    n = len(frame.points)
    if n >= 2**32:
        raise ValueError("too many points for one frame")
    head = _HEADER.pack(MAGIC, VERSION, FLAG_WORLD if frame.world else 0, frame.timestamp,
                        *frame.origin, *frame.orientation, n)
    return head + frame.points.astype("<f4").tobytes()


def _decode(buf: memoryview, off: int) -> tuple[ScanFrame, int]:
    if len(buf) - off < HEADER_SIZE:
        raise FrameFormatError(f"truncated header: need {HEADER_SIZE} bytes, "
                               f"have {len(buf) - off}", len(buf))
    magic, ver, flags, ts, ox, oy, oz, qw, qx, qy, qz, n = _HEADER.unpack_from(buf, off)
    if magic != MAGIC:
        raise FrameFormatError(f"bad magic {bytes(magic)!r}", off)
    if ver != VERSION:
        raise FrameFormatError(f"unsupported version {ver}", off + 4)
    body = off + HEADER_SIZE
    need = n * 12
    if len(buf) - body < need:
        raise FrameFormatError(f"truncated payload: header says {n} points "
                               f"({need} bytes), have {len(buf) - body}", len(buf))
    pts = np.frombuffer(buf, dtype="<f4", count=n * 3, offset=body).reshape(n, 3)
    frame = ScanFrame(ts, (ox, oy, oz), (qw, qx, qy, qz), pts.astype(np.float32),
                      bool(flags & FLAG_WORLD))
    try:
        frame.validate()
    except ValueError as e:
        raise FrameFormatError(str(e), off + 8) from None
    return frame, body + need


def read_frame(data: bytes) -> ScanFrame:
    """Decode exactly one frame; trailing bytes are an error."""
    buf = memoryview(data)
    frame, end = _decode(buf, 0)
    if end != len(buf):
        raise FrameFormatError(f"{len(buf) - end} trailing bytes after frame", end)
    return frame


def iter_frames(data: bytes) -> Iterator[ScanFrame]:
    """Decode a packed stream of back-to-back frames."""
    buf = memoryview(data)
    off = 0
    while off < len(buf):
        frame, off = _decode(buf, off)
        yield frame


def save_frames(path, frames: Sequence[ScanFrame]) -> None:
    with open(path, "wb") as f:
        for fr in frames:
            f.write(write_frame(fr))


def load_frames(path) -> list[ScanFrame]:
    return list(iter_frames(Path(path).read_bytes()))


# ---------------------------------------------------------------------------
# manifests


@dataclass
class DatasetManifest:
    paths: list[Path]
    resolution: float | None = None
    space: str | None = None  # "world" / "sensor" hint, informational

    @classmethod
    def load(cls, path) -> DatasetManifest:
        path = Path(path)
        base = path.parent
        paths, hints = [], {}
        for lineno, raw in enumerate(path.read_text().splitlines(), 1):
            line = raw.strip()
            if line.startswith("#@"):
                key, sep, val = line[2:].partition("=")
                if not sep:
                    raise ValueError(f"{path}:{lineno}: directive needs key=value")
                hints[key.strip()] = val.strip()
                continue
            line = line.split("#", 1)[0].strip()
            if line:
                p = Path(line)
                paths.append(p if p.is_absolute() else base / p)
        res = hints.get("resolution")
        return cls(paths, float(res) if res is not None else None, hints.get("space"))

    def save(self, path) -> None:
        path = Path(path)
        lines = ["# voxmap dataset manifest"]
        if self.resolution is not None:
            lines.append(f"#@ resolution={self.resolution:g}")
        if self.space is not None:
            lines.append(f"#@ space={self.space}")
        for p in self.paths:
            p = Path(p)
            try:
                p = p.relative_to(path.parent)
            except ValueError:
                pass
            lines.append(p.as_posix())
        path.write_text("\n".join(lines) + "\n")

    def frames(self) -> Iterator[ScanFrame]:
        for p in self.paths:
            yield from iter_frames(p.read_bytes())


# ---------------------------------------------------------------------------
# replay


@dataclass
class ReplaySummary:
    frames: int
    total_points: int
    points_dropped: int
    occupied_voxels: int
    mean_ms_per_frame: float

    def line(self) -> str:
        return (f"frames={self.frames} total_points={self.total_points} "
                f"dropped={self.points_dropped} occupied_voxels={self.occupied_voxels} "
                f"mean_ms_per_frame={self.mean_ms_per_frame:.3f}")


@dataclass
class ReplayResult:
    frames: list[UpdateStats]
    summary: ReplaySummary


def occupied_count(occ: Grid, params: OccupancyParams) -> int:
    _, values = occ.active_voxels()
    return int(occupied_mask(values, params).sum())


def _frame_source(source) -> Iterator[ScanFrame]:
    if isinstance(source, DatasetManifest):
        return source.frames()
    if isinstance(source, (str, os.PathLike)):
        return DatasetManifest.load(source).frames()
    return iter(source)


def replay(source, occ: Grid, opts: IntegrationOptions | None = None,
           params: OccupancyParams | None = None, progress=None) -> ReplayResult:
    """Integrate every frame of ``source`` into ``occ`` in order.

    ``source`` is a manifest (object or path) or an iterable of frames.
    The next frame is decoded on a helper thread while the current one is
    integrated (one frame of look-ahead).  Any decode or integration error
    is re-raised as :class:`ReplayError` carrying the frame index.
    """
    opts = opts or IntegrationOptions()
    params = params or OccupancyParams()
    it = _frame_source(source)
    sentinel = object()

    def pull():
        return next(it, sentinel)

    rows: list[UpdateStats] = []
    last_ts = -math.inf
    with ThreadPoolExecutor(1, thread_name_prefix="voxmap-decode") as ex:
        fut = ex.submit(pull)
        i = 0
        while True:
            try:
                frame = fut.result()
            except Exception as e:
                raise ReplayError(i, e) from e
            if frame is sentinel:
                break
            fut = ex.submit(pull)
            try:
                if frame.timestamp < last_ts:
                    raise ValueError("timestamp goes backwards")
                last_ts = frame.timestamp
                st = integrate_scan(occ, frame, opts, params)
            except Exception as e:
                fut.cancel()
                raise ReplayError(i, e) from e
            rows.append(st)
            if progress is not None:
                progress(i, st)
            i += 1

    total = UpdateStats()
    for s in rows:
        total += s
    summary = ReplaySummary(
        frames=len(rows),
        total_points=total.points_in,
        points_dropped=total.points_dropped,
        occupied_voxels=occupied_count(occ, params),
        mean_ms_per_frame=total.t_total / len(rows) if rows else 0.0,
    )
    return ReplayResult(rows, summary)


# ---------------------------------------------------------------------------
# voxlist export / import


@dataclass
class VoxelList:
    """Occupied voxels: ``coords`` (n, 3) int32 and ``probs`` (n,) float32."""

    coords: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=np.int32).reshape(-1, 3)
        self.probs = np.ascontiguousarray(self.probs, dtype=np.float32).reshape(-1)
        if len(self.coords) != len(self.probs):
            raise ValueError("coords and probs differ in length")

    def __len__(self):
        return len(self.probs)

    def to_bytes(self, fmt: str = "text") -> bytes:
        if fmt == "text":
            out = [VOXLIST_HEADER]
            for (x, y, z), p in zip(self.coords.tolist(), self.probs):
                # shortest digits that parse back to the same f32
                s = np.format_float_positional(p, unique=True, trim="-")
                out.append(f"{x} {y} {z} {s}")
            return ("\n".join(out) + "\n").encode("ascii")
        if fmt == "binary":
            rec = np.empty(len(self), _VXL_RECORD)
            rec["x"], rec["y"], rec["z"] = self.coords.T
            rec["p"] = self.probs
            return VOXLIST_MAGIC + struct.pack("<Q", len(self)) + rec.tobytes()
        raise ValueError(f"unknown voxlist format {fmt!r}")

    @classmethod
    def from_bytes(cls, data: bytes) -> VoxelList:
        if data[:4] == VOXLIST_MAGIC:
            if len(data) < 12:
                raise VoxlistFormatError("truncated binary voxlist header")
            (n,) = struct.unpack_from("<Q", data, 4)
            if len(data) != 12 + n * _VXL_RECORD.itemsize:
                raise VoxlistFormatError(f"binary voxlist size mismatch for {n} records")
            rec = np.frombuffer(data, _VXL_RECORD, count=n, offset=12)
            return cls(np.stack([rec["x"], rec["y"], rec["z"]], axis=1), rec["p"])
        try:
            text = data.decode("ascii")
        except UnicodeDecodeError:
            raise VoxlistFormatError("not a voxlist file") from None
        lines = text.split("\n")
        if lines[0] != VOXLIST_HEADER:
            raise VoxlistFormatError("missing voxlist header")
        coords, probs = [], []
        for k, line in enumerate(lines[1:], 2):
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise VoxlistFormatError(f"line {k}: expected 'x y z p'")
            try:
                coords.append([int(v) for v in parts[:3]])
                probs.append(float(parts[3]))
            except ValueError:
                raise VoxlistFormatError(f"line {k}: bad number") from None
        return cls(np.array(coords, dtype=np.int64).reshape(-1, 3), np.array(probs))


def map_voxlist(occ: Grid, params: OccupancyParams | None = None) -> VoxelList:
    """Occupied voxels of a log-odds map in canonical order."""
    params = params or OccupancyParams()
    coords, values = occ.active_voxels()
    keep = occupied_mask(values, params)
    return VoxelList(coords[keep], prob_array(values[keep]).astype(np.float32))


def export_map(occ: Grid, path, fmt: str = "text", params: OccupancyParams | None = None) -> int:
    """Write the occupied voxels of ``occ``; returns the voxel count."""
    vl = map_voxlist(occ, params)
    write_voxlist(vl, path, fmt)
    return len(vl)


def write_voxlist(vl: VoxelList, path, fmt: str = "text") -> None:
    Path(path).write_bytes(vl.to_bytes(fmt))


def read_voxlist(path) -> VoxelList:
    return VoxelList.from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# synthetic dataset


def _box_exit(o, d, lo, hi):
    # distance along each unit direction to leave the box [lo, hi] from inside
    with np.errstate(divide="ignore"):
        t = np.where(d > 0, (hi - o) / d, np.where(d < 0, (lo - o) / d, np.inf))
    return t.min(axis=1)


def _box_entry(o, d, lo, hi):
    # entry distance into a closed obstacle box, inf when missed
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    tn = np.nanmax(np.minimum(t1, t2), axis=1)
    tf = np.nanmin(np.maximum(t1, t2), axis=1)
    return np.where((tf >= tn) & (tn > 0), tn, np.inf)


def kinect_sigma(depth: np.ndarray) -> np.ndarray:
    """Axial depth noise of a structured-light depth camera (meters)."""
    return 0.0012 + 0.0019 * (depth - 0.4) ** 2


def synthetic_room(n_frames: int = 4, size=(8.0, 5.0, 3.0), fov_deg=(57.0, 43.0),
                   beams=(160, 120), noise: float | None = None, seed: int = 0,
                   obstacles=((2.5, 1.0, 0.0, 3.3, 1.8, 1.2), (5.0, 3.2, 0.0, 5.6, 4.4, 2.0)),
                   ) -> list[ScanFrame]:
    """Depth-camera sweeps inside a box-shaped room with box obstacles.

    The camera moves along the room's long axis looking down +x with a
    small yaw sweep; every beam of the ``beams`` angular grid returns the
    first surface hit plus Gaussian range noise.  The defaults mimic a
    depth camera frame decimated 4x per axis (57 x 43 degree field of view,
    160 x 120 beams); ``noise=None`` uses the depth-dependent sigma of
    :func:`kinect_sigma`, a float gives a constant sigma.  Near surfaces are
    sampled far more densely than far ones, which makes endpoint-voxel
    multiplicity uneven.  Points are stored in the sensor frame.
    """
    rng = np.random.default_rng(seed)
    lo = np.zeros(3)
    hi = np.asarray(size, dtype=np.float64)
    az = np.deg2rad(np.linspace(-fov_deg[0] / 2, fov_deg[0] / 2, beams[0]))
    el = np.deg2rad(np.linspace(-fov_deg[1] / 2, fov_deg[1] / 2, beams[1]))
    A, E = np.meshgrid(az, el, indexing="ij")
    dirs_s = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], -1).reshape(-1, 3)
    frames = []
    for k in range(n_frames):
        s = k / max(n_frames - 1, 1)
        origin = np.array([0.6 + 1.2 * s, hi[1] / 2 + 0.3 * math.sin(2.1 * k), 1.4])
        yaw = 0.35 * math.sin(1.3 * k)
        q = (math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2))
        R = quat_to_matrix(q)
        dw = dirs_s @ R.T
        o = np.broadcast_to(origin, dw.shape)
        t = _box_exit(o, dw, lo, hi)
        for ob in obstacles:
            t = np.minimum(t, _box_entry(o, dw, np.asarray(ob[:3]), np.asarray(ob[3:])))
        sigma = kinect_sigma(t) if noise is None else noise
        t = t + rng.normal(0.0, 1.0, len(t)) * sigma
        pts_s = (dirs_s * t[:, None]).astype(np.float32)
        frames.append(ScanFrame(float(k) * 0.1, tuple(origin), q, pts_s, world=False))
    return frames


def write_dataset(directory, frames: Sequence[ScanFrame], resolution: float | None = None) -> Path:
    """Write one OCCF file per frame plus ``manifest.txt``; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, fr in enumerate(frames):
        p = d / f"frame_{i:05d}.occf"
        p.write_bytes(write_frame(fr))
        paths.append(p)
    mpath = d / "manifest.txt"
    DatasetManifest(paths, resolution).save(mpath)
    return mpath
