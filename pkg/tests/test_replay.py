from __future__ import annotations

import struct

import numpy as np
import pytest

from voxmap.integrator import IntegrationOptions
from voxmap.occupancy import OccupancyParams
from voxmap.replay import (HEADER_SIZE, DatasetManifest, FrameFormatError, ReplayError,
                           ScanFrame, VoxelList, VoxlistFormatError, export_map, iter_frames,
                           kinect_sigma, load_frames, map_voxlist, quat_to_matrix, read_frame,
                           read_voxlist, replay, save_frames, synthetic_room, write_dataset,
                           write_frame)
from voxmap.tree import Grid, TreeConfig

P = OccupancyParams()

GOLDEN_FRAME = (
    b"OCCF" + struct.pack("<HHd3d4dI", 1, 1, 12.5, 1.0, 2.0, 3.0, 1.0, 0.0, 0.0, 0.0, 2)
    + struct.pack("<6f", 0.5, -1.0, 2.25, 3.0, 0.0, -0.125)
)


def two_point_frame():
    return ScanFrame(12.5, (1.0, 2.0, 3.0), (1.0, 0.0, 0.0, 0.0),
                     np.array([[0.5, -1.0, 2.25], [3.0, 0.0, -0.125]], np.float32), True)


# -- frames ------------------------------------------------------------------------


def test_golden_frame_bytes():
    assert HEADER_SIZE == 76
    assert write_frame(two_point_frame()) == GOLDEN_FRAME
    fr = read_frame(GOLDEN_FRAME)
    assert fr == two_point_frame()
    assert write_frame(fr) == GOLDEN_FRAME


def test_bad_magic():
    with pytest.raises(FrameFormatError, match="magic"):
        read_frame(b"OCCX" + GOLDEN_FRAME[4:])


def test_truncated_names_offset():
    with pytest.raises(FrameFormatError) as e:
        read_frame(GOLDEN_FRAME[:-5])
    assert e.value.offset == len(GOLDEN_FRAME) - 5
    assert "offset" in str(e.value)
    with pytest.raises(FrameFormatError, match="header"):
        read_frame(GOLDEN_FRAME[:40])


def test_trailing_bytes():
    with pytest.raises(FrameFormatError, match="trailing"):
        read_frame(GOLDEN_FRAME + b"\0")


def test_bad_version():
    data = bytearray(GOLDEN_FRAME)
    data[4:6] = struct.pack("<H", 2)
    with pytest.raises(FrameFormatError, match="version"):
        read_frame(bytes(data))


@pytest.mark.parametrize("quat", [(1.0, 0.1, 0.0, 0.0), (0.0, 0.0, 0.0, 0.0),
                                  (1.0 + 2e-6, 0.0, 0.0, 0.0)])
def test_non_unit_quaternion(quat):
    data = bytearray(GOLDEN_FRAME)
    struct.pack_into("<4d", data, 40, *quat)
    with pytest.raises(FrameFormatError, match="quaternion"):
        read_frame(bytes(data))


def test_quaternion_within_tolerance():
    data = bytearray(GOLDEN_FRAME)
    struct.pack_into("<4d", data, 40, 1.0 + 5e-7, 0.0, 0.0, 0.0)
    assert read_frame(bytes(data)).orientation[0] == 1.0 + 5e-7


def test_nan_pose():
    data = bytearray(GOLDEN_FRAME)
    struct.pack_into("<d", data, 16, float("nan"))
    with pytest.raises(FrameFormatError, match="NaN"):
        read_frame(bytes(data))
    with pytest.raises(ValueError):
        write_frame(ScanFrame(0.0, (0, float("nan"), 0)))


def test_nan_point_decodes_then_dropped():
    fr = two_point_frame()
    fr.points[1, 0] = np.nan
    back = read_frame(write_frame(fr))
    assert np.isnan(back.points[1, 0])
    res = replay([back], Grid(TreeConfig(), 0.0))
    assert res.frames[0].points_dropped == 1 and res.summary.points_dropped == 1
    assert res.summary.total_points == 1


def test_packed_stream(tmp_path):
    frames = synthetic_room(3, beams=(8, 6))
    path = tmp_path / "all.occs"
    save_frames(path, frames)
    back = load_frames(path)
    assert back == frames
    assert b"".join(write_frame(f) for f in back) == path.read_bytes()
    assert list(iter_frames(b"")) == []


def test_sensor_space_transform():
    q = (np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4))  # +90 deg about z
    fr = ScanFrame(0.0, (1.0, 0.0, 0.0), q, np.array([[1.0, 0.0, 0.0]]), world=False)
    np.testing.assert_allclose(fr.world_points(), [[1.0, 1.0, 0.0]], atol=1e-12)
    R = quat_to_matrix(q)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)


# -- manifest / replay -------------------------------------------------------------


def test_manifest_parsing(tmp_path):
    (tmp_path / "a.occf").write_bytes(GOLDEN_FRAME)
    (tmp_path / "m.txt").write_text(
        "# comment\n#@ resolution=0.05\n\na.occf  # trailing comment\n" + str(tmp_path / "a.occf") + "\n")
    m = DatasetManifest.load(tmp_path / "m.txt")
    assert m.resolution == 0.05
    assert m.paths == [tmp_path / "a.occf"] * 2
    assert len(list(m.frames())) == 2
    m.save(tmp_path / "m2.txt")
    assert DatasetManifest.load(tmp_path / "m2.txt") == m


def test_replay_two_frame_corridor(tmp_path):
    frames = synthetic_room(2, size=(10.0, 2.0, 2.5), beams=(40, 30), seed=1)
    mpath = write_dataset(tmp_path, frames, resolution=0.1)
    occ = Grid(TreeConfig(), 0.0)
    res = replay(mpath, occ)
    s = res.summary
    assert s.frames == 2 and len(res.frames) == 2
    assert s.total_points == sum(f.points_in for f in res.frames) == 2 * 40 * 30
    assert s.mean_ms_per_frame == pytest.approx(sum(f.t_total for f in res.frames) / 2)
    assert s.occupied_voxels == len(map_voxlist(occ))
    assert "occupied_voxels=" in s.line()


def test_replay_decode_error_names_frame(tmp_path):
    frames = synthetic_room(3, beams=(8, 6))
    mpath = write_dataset(tmp_path, frames)
    p = tmp_path / "frame_00002.occf"
    p.write_bytes(p.read_bytes()[:50])
    with pytest.raises(ReplayError) as e:
        replay(mpath, Grid(TreeConfig(), 0.0))
    assert e.value.frame_index == 2


def test_replay_rejects_backwards_time():
    a, b = synthetic_room(2, beams=(4, 3))
    b.timestamp = a.timestamp - 1
    with pytest.raises(ReplayError) as e:
        replay([a, b], Grid(TreeConfig(), 0.0))
    assert e.value.frame_index == 1


def test_replay_deterministic():
    frames = synthetic_room(3, beams=(60, 40))
    outs = []
    for _ in range(2):
        occ = Grid(TreeConfig(voxel_size=0.05), 0.0)
        replay(frames, occ, IntegrationOptions(chunks=3))
        outs.append(map_voxlist(occ).to_bytes("binary"))
    assert outs[0] == outs[1]


def test_frame_order_commutes_without_clamping():
    # two frames: each voxel gets at most two updates, far from the clamps
    frames = synthetic_room(2, beams=(50, 40), seed=3)
    maps = []
    for order in (frames, frames[::-1]):
        occ = Grid(TreeConfig(voxel_size=0.05), 0.0)
        for f in order:
            f2 = ScanFrame(0.0, f.origin, f.orientation, f.points, f.world)
            replay([f2], occ)
        maps.append(occ.active_voxels())
    np.testing.assert_array_equal(maps[0][0], maps[1][0])
    np.testing.assert_allclose(maps[0][1], maps[1][1], rtol=0, atol=1e-12)


def test_synthetic_room_shapes():
    frames = synthetic_room(2, beams=(20, 10), noise=0.0)
    assert len(frames) == 2 and frames[0].points.shape == (200, 3)
    assert not frames[0].world
    w = frames[0].world_points()
    assert np.all(w > -1e-4) and np.all(w < np.array([8.0, 5.0, 3.0]) + 1e-4)
    assert kinect_sigma(np.array([0.4]))[0] == pytest.approx(0.0012)


# -- voxlists ------------------------------------------------------------------------


def test_empty_export(tmp_path):
    occ = Grid(TreeConfig(), 0.0)
    assert export_map(occ, tmp_path / "e.txt") == 0
    assert (tmp_path / "e.txt").read_text() == "# voxlist v1\n"
    export_map(occ, tmp_path / "e.bin", "binary")
    assert (tmp_path / "e.bin").read_bytes() == b"VXL1" + bytes(8)
    assert len(read_voxlist(tmp_path / "e.txt")) == 0
    assert len(read_voxlist(tmp_path / "e.bin")) == 0


def test_single_voxel_export(tmp_path):
    occ = Grid(TreeConfig(), 0.0)
    occ.set((3, -4, 5), P.l_hit)
    occ.set((3, -4, 6), P.l_miss)  # free voxels are not exported
    export_map(occ, tmp_path / "one.txt")
    assert (tmp_path / "one.txt").read_text() == "# voxlist v1\n3 -4 5 0.7\n"


def test_export_canonical_order(tmp_path):
    occ = Grid(TreeConfig(), 0.0)
    for c in [(5000, 0, 0), (0, 0, 1), (0, 1, 0), (-1, 0, 0)]:
        occ.set(c, 1.0)
    vl = map_voxlist(occ)
    assert [tuple(c) for c in vl.coords.tolist()] == [(-1, 0, 0), (0, 0, 1), (0, 1, 0),
                                                      (5000, 0, 0)]


@pytest.mark.parametrize("fmt", ["text", "binary"])
def test_voxlist_round_trip(tmp_path, fmt):
    rng = np.random.default_rng(0)
    vl = VoxelList(rng.integers(-2**31, 2**31 - 1, size=(500, 3)),
                   rng.random(500).astype(np.float32))
    p1, p2 = tmp_path / "a", tmp_path / "b"
    p1.write_bytes(vl.to_bytes(fmt))
    back = read_voxlist(p1)
    np.testing.assert_array_equal(back.coords, vl.coords)
    np.testing.assert_array_equal(back.probs, vl.probs)
    p2.write_bytes(back.to_bytes(fmt))
    assert p1.read_bytes() == p2.read_bytes()


def test_text_binary_equivalent(tmp_path):
    frames = synthetic_room(2, beams=(30, 20))
    occ = Grid(TreeConfig(voxel_size=0.1), 0.0)
    replay(frames, occ)
    export_map(occ, tmp_path / "m.txt", "text")
    export_map(occ, tmp_path / "m.bin", "binary")
    a, b = read_voxlist(tmp_path / "m.txt"), read_voxlist(tmp_path / "m.bin")
    np.testing.assert_array_equal(a.coords, b.coords)
    np.testing.assert_array_equal(a.probs, b.probs)


@pytest.mark.parametrize("data", [b"junk", b"# voxlist v1\n1 2 3\n", b"# voxlist v1\n1 2 x 0.5\n",
                                  b"VXL1" + struct.pack("<Q", 2) + bytes(16), b"VXL1\x00",
                                  b"\xff\xfe"])
def test_malformed_voxlist(tmp_path, data):
    p = tmp_path / "bad"
    p.write_bytes(data)
    with pytest.raises(VoxlistFormatError):
        read_voxlist(p)


def test_unknown_export_format():
    with pytest.raises(ValueError):
        VoxelList(np.zeros((0, 3)), np.zeros(0)).to_bytes("ply")
