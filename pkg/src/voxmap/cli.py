"""``voxmap`` command line: benchmarks, dataset replay, map inspection.

Exit codes: 0 success, 2 usage or configuration error, 3 data error.
Machine-readable output (CSV, reports) goes to stdout or ``--out``; logs
and the replay summary go to stderr.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from voxmap.bench import Scenario, bench_csv, run_bench
from voxmap.config import Config
from voxmap.integrator import stats_csv
from voxmap.replay import (DatasetManifest, ReplayError, VoxlistFormatError, export_map,
                           read_voxlist, replay)
from voxmap.tree import Grid, TreeConfig

log = logging.getLogger("voxmap")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3


class UsageError(Exception):
    pass


def _bool_flag(p, name, key, help):
    p.add_argument(f"--{name}", dest=key, action=argparse.BooleanOptionalAction,
                   default=None, help=help)


def _config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("map and integration config (override --config)")
    g.add_argument("--config", type=Path, help="key=value config file")
    g.add_argument("--resolution", type=float, help="voxel size in meters (default 0.1)")
    g.add_argument("--log2", help="tree branching, e.g. 5,4,3")
    g.add_argument("--map-dtype", dest="map_dtype", choices=("float64", "float32"))
    g.add_argument("--threads", type=int,
                   help="workers; defaults to $VOXMAP_THREADS, else 1")
    g.add_argument("--max-range", dest="max_range", type=float)
    _bool_flag(g, "sub", "enable_sub", "enable subsampling")
    g.add_argument("--sub-factor", dest="sub_factor", type=int)
    _bool_flag(g, "bundle", "enable_bundle", "enable bundling")
    g.add_argument("--bundle-threshold", dest="bundle_threshold", type=int)
    _bool_flag(g, "bundle-strict", "bundle_strict", "trigger bundles on count > threshold")
    _bool_flag(g, "maxray-as-free", "maxray_as_free", "clear truncated rays' end voxels")
    _bool_flag(g, "flush-bundles", "flush_bundles", "cast held-back bundles after each scan")
    for k in ("l_hit", "l_miss", "l_min", "l_max", "phi_occ", "phi_free"):
        g.add_argument(f"--{k.replace('_', '-')}", dest=k, type=float)
    g.add_argument("--seed", type=int)


_CONFIG_KEYS = ("resolution", "log2", "map_dtype", "threads", "max_range", "enable_sub",
                "sub_factor", "enable_bundle", "bundle_threshold", "bundle_strict",
                "maxray_as_free", "flush_bundles", "l_hit", "l_miss", "l_min", "l_max",
                "phi_occ", "phi_free", "seed")


def resolve_config(args, env=None) -> Config:
    """Defaults, then ``$VOXMAP_THREADS``, then the config file, then flags."""
    env = os.environ if env is None else env
    cfg = Config()
    try:
        if env.get("VOXMAP_THREADS"):
            cfg = cfg.updated({"threads": env["VOXMAP_THREADS"]})
        if getattr(args, "config", None) is not None:
            cfg = Config.load(args.config, cfg)
        flags = {k: getattr(args, k) for k in _CONFIG_KEYS if getattr(args, k, None) is not None}
        return cfg.updated(flags)
    except OSError as e:
        raise UsageError(f"cannot read config: {e}") from None
    except (ValueError, TypeError) as e:
        raise UsageError(str(e)) from None


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        out.write_text(text)


# ---------------------------------------------------------------------------
# commands


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    variant = args.variant
    if variant == "bun":
        cfg = cfg.updated({"enable_bundle": True})
    elif variant == "sub":
        cfg = cfg.updated({"enable_sub": True})
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    try:
        sc = Scenario(args.scenario, args.points, args.ray_length, cfg.resolution, cfg.seed,
                      band_center=args.band_center)
        # fmap is single-core by definition; ray truncation defaults to the ray length
        threads = 1 if variant == "fmap" else cfg.threads
        max_range = args.max_range if args.max_range is not None else args.ray_length
        opts = cfg.integration_options(chunks=threads, max_range=max_range)
    except ValueError as e:
        raise UsageError(str(e)) from None
    log.info("bench %s %s n=%d ray=%gm res=%gm threads=%d runs=%d", variant, sc.kind,
             sc.n_points, sc.ray_length, sc.resolution, threads, args.runs)
    res = run_bench(sc, variant, opts, args.runs, params=cfg.occupancy_params(),
                    log2_branch=cfg.log2, map_dtype=cfg.dtype)
    log.info("mean %.1f ms, min %.1f ms", res.mean_ms, res.min_ms)
    _emit(bench_csv([res]), args.out)
    return EXIT_OK


def cmd_replay(args) -> int:
    if not args.manifest.is_file():
        raise UsageError(f"manifest not found: {args.manifest}")
    try:
        manifest = DatasetManifest.load(args.manifest)
    except (OSError, UnicodeDecodeError) as e:
        raise UsageError(f"cannot read manifest: {e}") from None
    except ValueError as e:
        raise UsageError(str(e)) from None
    cfg = resolve_config(args)
    if args.resolution is None and manifest.resolution is not None:
        cfg = cfg.updated({"resolution": manifest.resolution})
    occ = Grid(cfg.tree_config(), 0.0, cfg.dtype)
    params = cfg.occupancy_params()
    log.info("replay %d file(s) at %gm", len(manifest.paths), cfg.resolution)
    try:
        result = replay(manifest, occ, cfg.integration_options(), params)
    except ReplayError as e:
        log.error("data error in %s", e)
        return EXIT_DATA
    _emit(stats_csv(result.frames), args.out)
    print(f"summary {result.summary.line()}", file=sys.stderr)
    if args.export is not None:
        n = export_map(occ, args.export, args.format, params)
        log.info("exported %d occupied voxels to %s", n, args.export)
    return EXIT_OK


def inspect_report(coords: np.ndarray, probs: np.ndarray, log2=(5, 4, 3)) -> str:
    """Deterministic text report of an occupied-voxel list."""
    grid = Grid(TreeConfig(tuple(log2)), False)
    if len(coords):
        grid.accessor().set_many(coords, np.ones(len(coords), bool))
    nodes = grid.node_counts()
    lines = [f"voxels: {len(coords)}"]
    if len(coords):
        lo, hi = coords.min(axis=0), coords.max(axis=0)
        lines.append(f"bounds_min: {lo[0]} {lo[1]} {lo[2]}")
        lines.append(f"bounds_max: {hi[0]} {hi[1]} {hi[2]}")
        p = probs.astype(np.float64)
        lines.append(f"prob_min: {p.min():.6f}")
        lines.append(f"prob_mean: {p.mean():.6f}")
        lines.append(f"prob_max: {p.max():.6f}")
    else:
        lines.append("bounds_min: none")
        lines.append("bounds_max: none")
    lines.append(f"tree: {','.join(str(v) for v in log2)}")
    for k in ("root", "upper", "lower", "leaf"):
        lines.append(f"nodes_{k}: {nodes[k]}")
    return "\n".join(lines) + "\n"


def cmd_inspect(args) -> int:
    try:
        log2 = tuple(int(v) for v in args.log2.split(","))
        TreeConfig(log2)
    except ValueError as e:
        raise UsageError(f"bad --log2: {e}") from None
    try:
        vl = read_voxlist(args.map)
    except OSError as e:
        log.error("cannot read %s: %s", args.map, e)
        return EXIT_DATA
    except VoxlistFormatError as e:
        log.error("malformed map file %s: %s", args.map, e)
        return EXIT_DATA
    _emit(inspect_report(vl.coords, vl.probs, log2), args.out)
    return EXIT_OK


def cmd_config(args) -> int:
    _emit(resolve_config(args).dump(), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="voxmap", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("bench", help="time a synthetic scan integration")
    b.add_argument("--scenario", choices=("random", "structured"), default="random")
    b.add_argument("--points", type=int, default=100_000)
    b.add_argument("--ray-length", dest="ray_length", type=float, default=6.0)
    b.add_argument("--band-center", dest="band_center", type=float, default=0.0,
                   help="height of the structured band relative to the sensor")
    b.add_argument("--variant", choices=("fmap", "sub", "bun", "par"), default="par")
    b.add_argument("--runs", type=int, default=5)
    b.add_argument("--out", type=Path)
    _config_args(b)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("replay", help="integrate a recorded frame sequence")
    r.add_argument("--manifest", type=Path, required=True)
    r.add_argument("--export", type=Path, help="write occupied voxels here")
    r.add_argument("--format", choices=("text", "binary"), default="text")
    r.add_argument("--out", type=Path, help="per-frame CSV destination (default stdout)")
    _config_args(r)
    r.set_defaults(func=cmd_replay)

    i = sub.add_parser("inspect", help="summarize an exported voxel list")
    i.add_argument("map", type=Path)
    i.add_argument("--log2", default="5,4,3", help="tree branching used for node counts")
    i.add_argument("--out", type=Path)
    i.set_defaults(func=cmd_inspect)

    c = sub.add_parser("config", help="print the effective configuration")
    c.add_argument("--out", type=Path)
    _config_args(c)
    c.set_defaults(func=cmd_config)

    for sp in (b, r, i, c):
        # also accept -v after the subcommand without resetting the count
        sp.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"voxmap: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
