"""Flat ``key=value`` run configuration.

Every knob of a run lives in :class:`Config`; files hold one ``key=value``
per line with ``#`` comments, and :meth:`Config.dump` writes all keys with
their current values so a dumped file documents the defaults.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from voxmap.integrator import IntegrationOptions
from voxmap.occupancy import OccupancyParams
from voxmap.tree import TreeConfig

_OCC = OccupancyParams()

_HELP = {
    "resolution": "voxel edge length in meters",
    "log2": "log2 branching of upper,lower,leaf nodes",
    "map_dtype": "float64 or float32 log-odds storage",
    "l_hit": "log-odds added per hit (ln(0.7/0.3))",
    "l_miss": "log-odds added per traversal (ln(0.4/0.6))",
    "l_min": "lower clamp",
    "l_max": "upper clamp",
    "phi_occ": "probability above which an observed voxel is occupied",
    "phi_free": "probability below which an observed voxel is free",
    "threads": "worker / chunk count",
    "max_range": "rays longer than this are truncated (meters)",
    "enable_sub": "skip rays ending in an already-cast sub-cell",
    "sub_factor": "sub-cell refinement, a power of two",
    "enable_bundle": "bundle rays per endpoint voxel",
    "bundle_threshold": "rays held back per endpoint voxel (>= 1)",
    "bundle_strict": "trigger on count > threshold instead of >=",
    "maxray_as_free": "mark a truncated ray's end voxel free instead of skipping it",
    "flush_bundles": "cast held-back bundles at the end of a scan",
    "seed": "scenario generator seed",
}


@dataclass(frozen=True)
class Config:
    resolution: float = 0.1
    log2: tuple[int, int, int] = (5, 4, 3)
    map_dtype: str = "float64"
    l_hit: float = _OCC.l_hit
    l_miss: float = _OCC.l_miss
    l_min: float = _OCC.l_min
    l_max: float = _OCC.l_max
    phi_occ: float = _OCC.phi_occ
    phi_free: float = _OCC.phi_free
    threads: int = 1
    max_range: float = 60.0
    enable_sub: bool = False
    sub_factor: int = 4
    enable_bundle: bool = False
    bundle_threshold: int = 1
    bundle_strict: bool = False
    maxray_as_free: bool = True
    flush_bundles: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.map_dtype not in ("float64", "float32"):
            raise ValueError("map_dtype must be float64 or float32")
        # build the derived objects once so bad values fail early
        self.tree_config()
        self.occupancy_params()
        self.integration_options()

    def tree_config(self) -> TreeConfig:
        return TreeConfig(tuple(self.log2), self.resolution)

    def occupancy_params(self) -> OccupancyParams:
        return OccupancyParams(self.l_hit, self.l_miss, self.l_min, self.l_max,
                               self.phi_occ, self.phi_free)

    def integration_options(self, **overrides) -> IntegrationOptions:
        opts = IntegrationOptions(
            chunks=self.threads, max_range=self.max_range, enable_sub=self.enable_sub,
            sub_factor=self.sub_factor, enable_bundle=self.enable_bundle,
            bundle_threshold=self.bundle_threshold, bundle_strict=self.bundle_strict,
            maxray_as_free=self.maxray_as_free, flush_bundles=self.flush_bundles,
        )
        return replace(opts, **overrides)

    @property
    def dtype(self):
        return np.dtype(self.map_dtype)

    def updated(self, values: dict) -> Config:
        """Copy with ``values`` (already typed or raw strings) applied."""
        known = {f.name: f for f in fields(self)}
        typed = {}
        for k, v in values.items():
            if k not in known:
                raise ValueError(f"unknown config key {k!r}")
            typed[k] = _coerce(k, v) if isinstance(v, str) else v
        return replace(self, **typed)

    def dump(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"# {_HELP[f.name]}")
            lines.append(f"{f.name}={_fmt(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, path, base: Config | None = None) -> Config:
        return (base or cls()).updated(parse_kv(Path(path).read_text(), str(path)))


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"{source}:{lineno}: expected key=value")
        out[key.strip()] = val.strip()
    return out


_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _coerce(key: str, raw: str):
    default = getattr(Config, key)
    try:
        if isinstance(default, bool):
            return _BOOL[raw.lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
        if isinstance(default, tuple):
            return tuple(int(p) for p in raw.replace(" ", "").split(","))
        return raw
    except (KeyError, ValueError):
        raise ValueError(f"bad value for {key}: {raw!r}") from None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(p) for p in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)
