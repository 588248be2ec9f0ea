"""Benchmark the compiled extraction kernels against the NumPy fallback.

Runs the full per-block pipeline (margin, surface, gradients, attribute
sampling) on synthetic sphere blocks and reports per-block timings plus a
bit-identity check between the backends.
"""

from __future__ import annotations

import time

import numpy as np

from . import kernels


def _sphere_margin(n: int, radius: float, jitter: int) -> np.ndarray:
    ax = np.linspace(0.0, 1.0, n)
    Z, Y, X = np.meshgrid(ax, ax, ax, indexing="ij")
    cx = 0.5 + 0.013 * (jitter % 7)
    return radius - np.sqrt((X - cx) ** 2 + (Y - 0.5) ** 2 + (Z - 0.5) ** 2)


_LIMIT_IDX = np.asarray([0], dtype=np.int64)
_LOS = np.asarray([0.1])
_HIS = np.asarray([1e9])


def run_block(mod, fields: np.ndarray, coords: np.ndarray) -> tuple:
    h = coords[1] - coords[0]
    return mod.extract_block(fields, _LIMIT_IDX, _LOS, _HIS, coords, coords, coords, h, h, h)


def run_benchmark(block_size: int = 32, blocks: int = 50) -> dict:
    n = block_size + 1
    coords = np.linspace(0.0, 1.0, n)
    fields = [
        _sphere_margin(n, 0.31, i)[None].astype(np.float32) for i in range(blocks)
    ]

    backends = kernels.available_backends()
    results: dict[str, dict] = {}
    outputs = {}
    for name, mod in backends.items():
        run_block(mod, fields[0], coords)  # warm-up
        t0 = time.perf_counter()
        outs = [run_block(mod, fields[i], coords) for i in range(blocks)]
        dt = time.perf_counter() - t0
        nverts = sum(o[0].shape[0] for o in outs)
        results[name] = {
            "seconds_total": dt,
            "ms_per_block": 1000.0 * dt / blocks,
            "vertices": nverts,
        }
        outputs[name] = outs

    identical = None
    if len(outputs) == 2:
        a, b = outputs["pure"], outputs["fast"]
        identical = all(
            all(np.array_equal(x, y) for x, y in zip(oa, ob)) for oa, ob in zip(a, b)
        )
    speedup = None
    if "pure" in results and "fast" in results:
        speedup = results["pure"]["seconds_total"] / results["fast"]["seconds_total"]
    return {
        "block_size": block_size,
        "blocks": blocks,
        "backends": results,
        "bit_identical": identical,
        "speedup_fast_over_pure": speedup,
    }


def format_report(report: dict) -> str:
    lines = [
        f"kernel benchmark: {report['blocks']} blocks of {report['block_size']}^3 cells"
    ]
    for name, r in report["backends"].items():
        lines.append(
            f"  {name:5s}: {r['ms_per_block']:8.3f} ms/block"
            f"  ({r['vertices']} vertices total)"
        )
    if report["speedup_fast_over_pure"] is not None:
        lines.append(f"  speedup fast/pure: {report['speedup_fast_over_pure']:.2f}x")
    if report["bit_identical"] is not None:
        lines.append(f"  outputs bit-identical: {report['bit_identical']}")
    return "\n".join(lines)
