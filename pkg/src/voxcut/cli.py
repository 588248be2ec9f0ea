"""Command line entry points.

Subcommands: ``preprocess``, ``synth``, ``serve``, ``explore``,
``inspect`` and ``bench``.  All commands are deterministic for identical
inputs and flags; explore reports isolate wall-clock data in their own
section.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_preprocess(args: argparse.Namespace) -> int:
    from .preprocess import RawDataset, StoreError, build_octree, overhead_ratio

    try:
        raw = RawDataset(args.input)
        store = build_octree(raw, args.block_size, args.output)
    except (StoreError, ValueError, OSError) as exc:
        print(f"preprocess failed: {exc}", file=sys.stderr)
        return 1
    counts = store.node_counts()
    for level, count in enumerate(counts):
        dims = store.meta.nodes_at_level(level)
        print(f"level {level}: {dims[0]}x{dims[1]}x{dims[2]} = {count} nodes")
    print(f"total nodes per timestep: {sum(counts)}")
    ratio = overhead_ratio(store.meta.dims, store.meta.block_size)
    print(f"inner-node overhead: {ratio:.4f} of leaf bytes")
    store.close()
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    from .synth import SynthSpec, synth_generate

    try:
        spec = SynthSpec.load(args.spec)
        synth_generate(spec, args.output)
    except (ValueError, OSError, KeyError) as exc:
        print(f"synth failed: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {spec.timesteps} timestep(s) of {spec.dims} to {args.output}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import logging

    from .backend import BackendConfig, serve

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    config = BackendConfig.from_env(
        store_path=args.store,
        listen=args.listen,
        port=args.port,
        workers=args.workers,
        cache_bytes=args.cache_bytes,
        assets_dir=args.assets,
        worker_delay=args.worker_delay,
    )
    serve(config)
    return 0


def cmd_explore(args: argparse.Namespace) -> int:
    from .explore import ExploreScript, run_explore

    script = ExploreScript.load(args.script)
    if args.report:
        script.report_path = args.report
    report = run_explore(script, _parse_address(args.server))
    if not script.report_path:
        json.dump(report, sys.stdout, indent=1, sort_keys=True)
        print()
    if not report["observed"]["connected"]:
        print("warning: connection lost, report is partial", file=sys.stderr)
        return 2
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    from .model import NodeId
    from .preprocess import OctreeStore, StoreError

    try:
        store = OctreeStore(args.store)
    except StoreError as exc:
        print(f"inspect failed: {exc}", file=sys.stderr)
        return 1
    meta = store.meta
    doc = {
        "dims": list(meta.dims),
        "spacing": list(meta.spacing),
        "origin": list(meta.origin),
        "fields": list(meta.fields),
        "timesteps": meta.timesteps,
        "block_size": meta.block_size,
        "levels": meta.levels,
        "nodes_per_level": store.node_counts(),
    }
    if args.node:
        try:
            level, ix, iy, iz = (int(v) for v in args.node.split(","))
            block = store.read_block(args.timestep, NodeId(level, ix, iy, iz))
        except (ValueError, StoreError) as exc:
            print(f"inspect failed: {exc}", file=sys.stderr)
            return 1
        doc["node"] = {
            "id": [level, ix, iy, iz],
            "timestep": args.timestep,
            "fields": {
                name: {
                    "min": float(arr.min()),
                    "max": float(arr.max()),
                    "mean": float(np.float64(arr.mean())),
                }
                for name, arr in block.samples.items()
            },
        }
    json.dump(doc, sys.stdout, indent=1, sort_keys=True)
    print()
    store.close()
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    from .bench import format_report, run_benchmark

    report = run_benchmark(block_size=args.block_size, blocks=args.blocks)
    print(format_report(report))
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=1, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxcut",
        description="octree level-of-detail streaming of threshold sub-volume surfaces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="build an octree store from a raw dataset")
    p.add_argument("--input", required=True, help="raw dataset directory")
    p.add_argument("--block-size", type=int, required=True, help="cells per axis per leaf")
    p.add_argument("--output", required=True, help="octree store directory")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="generate a synthetic raw dataset")
    p.add_argument("--spec", required=True, help="synthesis spec JSON")
    p.add_argument("--output", required=True, help="raw dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serve", help="run the extraction service")
    p.add_argument("--store", required=True, help="octree store directory")
    p.add_argument("--listen", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7071)
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--cache-bytes", type=int, default=256 * 1024 * 1024)
    p.add_argument("--assets", default=None, help="static asset dir for the web viewer")
    p.add_argument(
        "--worker-delay",
        type=float,
        default=0.0,
        help="artificial seconds per work item (testing/benchmarks)",
    )
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("explore", help="headless scripted exploration")
    p.add_argument("--script", required=True, help="explore script JSON")
    p.add_argument("--server", required=True, help="backend host:port")
    p.add_argument("--report", default=None, help="metrics output path")
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("inspect", help="dump store metadata and node statistics")
    p.add_argument("--store", required=True)
    p.add_argument("--node", default=None, help="level,ix,iy,iz")
    p.add_argument("--timestep", type=int, default=0)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", help="compare compiled and fallback kernels")
    p.add_argument("--block-size", type=int, default=32)
    p.add_argument("--blocks", type=int, default=50)
    p.add_argument("--json", default=None, help="also write the report as JSON")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
