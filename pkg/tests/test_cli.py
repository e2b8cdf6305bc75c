from __future__ import annotations

import numpy as np
import pytest

from voxmap.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, inspect_report, main
from voxmap.replay import read_voxlist, synthetic_room, write_dataset

BENCH = ["bench", "--points", "2000", "--ray-length", "2", "--runs", "2", "--seed", "3"]


def _csv(text):
    lines = text.strip().splitlines()
    head = lines[0].split(",")
    return [dict(zip(head, ln.split(","))) for ln in lines[1:]]


def test_bench_smoke(capsys):
    assert main(BENCH + ["--variant", "bun", "--threads", "2"]) == EXIT_OK
    rows = _csv(capsys.readouterr().out)
    assert len(rows) == 2
    assert rows[0]["variant"] == "BUN" and rows[0]["threads"] == "2"
    assert int(rows[0]["rays_cast"]) <= 2000


def test_bench_same_seed_same_rays(capsys):
    main(BENCH + ["--variant", "bun"])
    a = _csv(capsys.readouterr().out)
    main(BENCH + ["--variant", "bun"])
    b = _csv(capsys.readouterr().out)
    assert [r["rays_cast"] for r in a] == [r["rays_cast"] for r in b]
    assert [r["occupied_voxels"] for r in a] == [r["occupied_voxels"] for r in b]


def test_bench_fmap_single_thread(capsys):
    main(BENCH + ["--variant", "fmap", "--threads", "4"])
    assert _csv(capsys.readouterr().out)[0]["threads"] == "1"


@pytest.mark.parametrize("extra", [["--bundle-threshold", "0"], ["--runs", "0"],
                                   ["--resolution", "-1"], ["--variant", "turbo"],
                                   ["--threads", "0"]])
def test_bench_usage_errors(extra, capsys):
    with pytest.raises(SystemExit) as e:
        code = main(BENCH + extra)
        raise SystemExit(code)
    assert e.value.code == EXIT_USAGE


def test_no_subcommand():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == EXIT_USAGE


@pytest.fixture
def dataset(tmp_path):
    frames = synthetic_room(2, beams=(40, 30), seed=2)
    return write_dataset(tmp_path / "ds", frames, resolution=0.1)


def test_replay_rows_and_export(dataset, tmp_path, capsys):
    out = tmp_path / "map.txt"
    assert main(["replay", "--manifest", str(dataset), "--export", str(out), "-v"]) == EXIT_OK
    cap = capsys.readouterr()
    assert len(_csv(cap.out)) == 2
    summary = [ln for ln in cap.err.splitlines() if ln.startswith("summary ")]
    assert len(summary) == 1
    n_occ = int(summary[0].split("occupied_voxels=")[1].split()[0])
    assert len(read_voxlist(out)) == n_occ
    assert main(["inspect", str(out)]) == EXIT_OK
    assert f"voxels: {n_occ}\n" in capsys.readouterr().out


def test_text_and_binary_inspect_identical(dataset, tmp_path, capsys):
    main(["replay", "--manifest", str(dataset), "--export", str(tmp_path / "a.txt")])
    main(["replay", "--manifest", str(dataset), "--export", str(tmp_path / "a.bin"),
          "--format", "binary"])
    capsys.readouterr()
    main(["inspect", str(tmp_path / "a.txt")])
    t = capsys.readouterr().out
    main(["inspect", str(tmp_path / "a.bin")])
    assert capsys.readouterr().out == t


def test_replay_missing_manifest(tmp_path):
    assert main(["replay", "--manifest", str(tmp_path / "nope.txt")]) == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["replay"])
    assert e.value.code == EXIT_USAGE


def test_replay_decode_failure(dataset, capsys):
    p = dataset.parent / "frame_00001.occf"
    p.write_bytes(p.read_bytes()[:-3])
    assert main(["replay", "--manifest", str(dataset)]) == EXIT_DATA
    err = capsys.readouterr().err
    assert "frame 1" in err and "offset" in err


def test_inspect_malformed(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("not a map\n")
    assert main(["inspect", str(p)]) == EXIT_DATA
    assert main(["inspect", str(tmp_path / "missing")]) == EXIT_DATA


def test_inspect_empty_and_single():
    r = inspect_report(np.zeros((0, 3), np.int32), np.zeros(0, np.float32))
    assert r.startswith("voxels: 0\nbounds_min: none\n")
    assert "nodes_leaf: 0" in r
    r = inspect_report(np.array([[1, 2, 3]], np.int32), np.array([0.7], np.float32))
    assert "voxels: 1\nbounds_min: 1 2 3\nbounds_max: 1 2 3\nprob_min: 0.700000" in r
    assert "nodes_root: 1" in r and "nodes_leaf: 1" in r


def test_config_command(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("VOXMAP_THREADS", "6")
    assert main(["config", "--bundle"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "threads=6\n" in out and "enable_bundle=true\n" in out
    p = tmp_path / "c.cfg"
    p.write_text("threads=abc\n")
    assert main(["config", "--config", str(p)]) == EXIT_USAGE
