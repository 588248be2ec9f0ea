"""Synthetic desk-scale datasets with analytic ground truth.

The blob field ``q`` is a sum of drifting Gaussians; the wind fields
``u``, ``v``, ``w`` come from either a constant vector or a solid
rotation.  Output is the raw dataset format understood by the
preprocessor, fully determined by the spec file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .preprocess import write_raw


@dataclass(frozen=True)
class Blob:
    center: tuple[float, float, float]
    radius: float
    amplitude: float
    drift: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("blob radius must be positive")


@dataclass(frozen=True)
class Wind:
    kind: str  # "constant" | "rotation"
    vector: tuple[float, float, float] = (0.0, 0.0, 0.0)  # constant velocity
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)  # rotation axis point
    angular: tuple[float, float, float] = (0.0, 0.0, 0.0)  # rotation rate vector

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "rotation"):
            raise ValueError(f"unknown wind kind {self.kind!r}")


@dataclass(frozen=True)
class SynthSpec:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    timesteps: int = 1
    blobs: tuple[Blob, ...] = ()
    wind: Wind = field(default_factory=lambda: Wind("constant"))

    def __post_init__(self) -> None:
        if any(d < 8 for d in self.dims):
            raise ValueError("synthetic grids need at least 8 samples per axis")
        if self.timesteps < 1:
            raise ValueError("need at least one timestep")

    @classmethod
    def from_json(cls, doc: dict) -> "SynthSpec":
        blobs = tuple(
            Blob(
                center=tuple(b["center"]),
                radius=b["radius"],
                amplitude=b["amplitude"],
                drift=tuple(b.get("drift", (0.0, 0.0, 0.0))),
            )
            for b in doc.get("blobs", ())
        )
        wdoc = doc.get("wind", {"kind": "constant"})
        wind = Wind(
            kind=wdoc.get("kind", "constant"),
            vector=tuple(wdoc.get("vector", (0.0, 0.0, 0.0))),
            center=tuple(wdoc.get("center", (0.0, 0.0, 0.0))),
            angular=tuple(wdoc.get("angular", (0.0, 0.0, 0.0))),
        )
        return cls(
            dims=tuple(doc["dims"]),
            spacing=tuple(doc.get("spacing", (1.0, 1.0, 1.0))),
            origin=tuple(doc.get("origin", (0.0, 0.0, 0.0))),
            timesteps=doc.get("timesteps", 1),
            blobs=blobs,
            wind=wind,
        )

    @classmethod
    def load(cls, path: str | Path) -> "SynthSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


def _grid_coords(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    nx, ny, nz = spec.dims
    xs = spec.origin[0] + spec.spacing[0] * np.arange(nx)
    ys = spec.origin[1] + spec.spacing[1] * np.arange(ny)
    zs = spec.origin[2] + spec.spacing[2] * np.arange(nz)
    Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
    return X, Y, Z


def blob_field(spec: SynthSpec, t: float) -> np.ndarray:
    """q(x, t) = sum of amplitude * exp(-|x - (center + drift t)|^2 / r^2)."""
    X, Y, Z = _grid_coords(spec)
    q = np.zeros_like(X)
    for b in spec.blobs:
        cx = b.center[0] + b.drift[0] * t
        cy = b.center[1] + b.drift[1] * t
        cz = b.center[2] + b.drift[2] * t
        r2 = (X - cx) ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2
        q += b.amplitude * np.exp(-r2 / b.radius**2)
    return q


def wind_fields(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X, Y, Z = _grid_coords(spec)
    w = spec.wind
    if w.kind == "constant":
        shape = X.shape
        return (
            np.full(shape, w.vector[0]),
            np.full(shape, w.vector[1]),
            np.full(shape, w.vector[2]),
        )
    # solid rotation: velocity = angular x (position - center)
    rx, ry, rz = X - w.center[0], Y - w.center[1], Z - w.center[2]
    ax, ay, az = w.angular
    return (ay * rz - az * ry, az * rx - ax * rz, ax * ry - ay * rx)


def synth_generate(spec: SynthSpec, output: str | Path) -> Path:
    """Write the dataset for every timestep; deterministic for a given spec."""
    u, v, w = wind_fields(spec)
    frames = {}
    for t in range(spec.timesteps):
        frames[t] = {
            "q": blob_field(spec, float(t)).astype(np.float32),
            "u": u.astype(np.float32),
            "v": v.astype(np.float32),
            "w": w.astype(np.float32),
        }
    write_raw(output, spec.dims, spec.spacing, spec.origin, frames)
    return Path(output)
