from __future__ import annotations

import numpy as np
import pytest

from voxmap.cli import build_parser, resolve_config
from voxmap.config import Config, parse_kv


def test_defaults_build():
    c = Config()
    assert c.tree_config().voxel_size == 0.1
    assert c.integration_options().bundle_threshold == 1
    assert c.integration_options().maxray_as_free
    assert c.dtype == np.float64


@pytest.mark.parametrize("kw", [{"resolution": 0.0}, {"bundle_threshold": 0}, {"threads": 0},
                                {"map_dtype": "int8"}, {"l_hit": -1.0}, {"log2": (0, 1, 1)}])
def test_invalid(kw):
    with pytest.raises(ValueError):
        Config(**kw)


def test_parse_kv():
    assert parse_kv("# c\n a = 1 \nb=x  # trailing\n\n") == {"a": "1", "b": "x"}
    with pytest.raises(ValueError, match=":2:"):
        parse_kv("a=1\nnonsense\n", "f")


def test_updated_coerces_and_rejects():
    c = Config().updated({"threads": "4", "enable_bundle": "yes", "log2": "4, 3,2",
                          "resolution": "0.05"})
    assert (c.threads, c.enable_bundle, c.log2, c.resolution) == (4, True, (4, 3, 2), 0.05)
    with pytest.raises(ValueError, match="unknown"):
        Config().updated({"colour": "red"})
    with pytest.raises(ValueError):
        Config().updated({"enable_sub": "maybe"})
    with pytest.raises(ValueError):
        Config().updated({"resolution": "nan"})


def test_dump_load_round_trip(tmp_path):
    c = Config(resolution=0.05, threads=3, enable_sub=True, log2=(4, 4, 3), l_hit=0.9)
    p = tmp_path / "c.cfg"
    p.write_text(c.dump())
    assert Config.load(p) == c


def test_precedence(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("threads=3\nresolution=0.2\n")
    parser = build_parser()
    a = parser.parse_args(["config"])
    assert resolve_config(a, {"VOXMAP_THREADS": "5"}).threads == 5
    a = parser.parse_args(["config", "--config", str(p)])
    c = resolve_config(a, {"VOXMAP_THREADS": "5"})
    assert (c.threads, c.resolution) == (3, 0.2)
    a = parser.parse_args(["config", "--config", str(p), "--threads", "7"])
    assert resolve_config(a, {"VOXMAP_THREADS": "5"}).threads == 7
