"""Shared helpers and independent oracles for the test suite.

The oracles here deliberately re-derive results along different paths
than the library (per-cell table walks, ray casting, brute-force
integration) so the tests cross-check rather than echo the
implementation.
"""

from __future__ import annotations

import contextlib
import socket
import struct
import tempfile
import time
from pathlib import Path

import numpy as np

from voxcut.backend import Backend, BackendConfig
from voxcut.kernels.tables import (
    CORNER_OFFSETS,
    EDGE_AXIS,
    EDGE_BASE,
    EDGE_CORNERS,
    TRI_TABLE,
)
from voxcut.model import DatasetMeta
from voxcut.preprocess import build_octree, write_raw
from voxcut.synth import Blob, SynthSpec, synth_generate


# ---------------------------------------------------------------------------
# reference marching cubes: plain nested loops straight off the tables

def reference_mc(margin, xs, ys, zs):
    """Per-cell table walk; independent loop structure from the kernels."""
    m = np.asarray(margin, dtype=np.float64)
    nz, ny, nx = m.shape
    pos = []
    lat = []
    coords = (np.asarray(xs, float), np.asarray(ys, float), np.asarray(zs, float))
    for iz in range(nz - 1):
        for iy in range(ny - 1):
            for ix in range(nx - 1):
                case = 0
                for c, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
                    if m[iz + oz, iy + oy, ix + ox] <= 0.0:
                        case |= 1 << c
                for e in TRI_TABLE[case]:
                    bx, by, bz = EDGE_BASE[e]
                    axis = EDGE_AXIS[e]
                    l0 = [ix + bx, iy + by, iz + bz]
                    l1 = list(l0)
                    l1[axis] += 1
                    m0 = m[l0[2], l0[1], l0[0]]
                    m1 = m[l1[2], l1[1], l1[0]]
                    t = m0 / (m0 - m1)
                    lp = [float(l0[0]), float(l0[1]), float(l0[2])]
                    lp[axis] += t
                    p = [coords[0][l0[0]], coords[1][l0[1]], coords[2][l0[2]]]
                    c0 = coords[axis][l0[axis]]
                    c1 = coords[axis][l1[axis]]
                    p[axis] = c0 + t * (c1 - c0)
                    pos.append(p)
                    lat.append(lp)
    if not pos:
        e = np.empty((0, 3))
        return e, e.copy()
    return np.asarray(pos), np.asarray(lat)


# ---------------------------------------------------------------------------
# random smooth fields with bounded spatial gradient

def smooth_field(rng: np.random.Generator, shape, nblobs=4, grad_limit=1.0):
    """Sum of random Gaussians, rescaled so max |grad| <= grad_limit.

    With unit sample spacing this makes the induced margins Lipschitz-1
    in space, which is what the |margin| > cell-diagonal guard assumes.
    """
    nz, ny, nx = shape
    zs, ys, xs = np.meshgrid(
        np.arange(nz, dtype=float),
        np.arange(ny, dtype=float),
        np.arange(nx, dtype=float),
        indexing="ij",
    )
    field = np.zeros(shape)
    for _ in range(nblobs):
        c = rng.uniform([0, 0, 0], [nz - 1, ny - 1, nx - 1])
        r = rng.uniform(0.25, 0.8) * max(nx, ny, nz)
        a = rng.uniform(-1.0, 1.0)
        field += a * np.exp(
            -((zs - c[0]) ** 2 + (ys - c[1]) ** 2 + (xs - c[2]) ** 2) / r**2
        )
    gz, gy, gx = np.gradient(field)
    gmax = float(np.sqrt(gz**2 + gy**2 + gx**2).max())
    if gmax > 0:
        field *= grad_limit / gmax * 0.8
    return field.astype(np.float32)


# ---------------------------------------------------------------------------
# ray-parity point classification against a triangle soup

def classify_by_parity(point, tris, margin_at, box_max, box_min, eps=1e-9):
    """Interior/exterior of ``point`` by axis-ray parity with face closure.

    Casts axis-parallel rays; the count of soup crossings plus one if the
    margin at the box exit point is positive (the sub-volume leaves
    through the node face there) gives the parity.  Directions whose ray
    grazes a triangle or exits through a near-zero margin are skipped.
    Returns True (interior), False, or None when no direction is clean.
    """
    point = np.asarray(point, dtype=np.float64)
    v0 = tris[:, 0]
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    for axis in range(3):
        for sign in (1.0, -1.0):
            d = np.zeros(3)
            d[axis] = sign
            exit_pt = point.copy()
            exit_pt[axis] = box_max[axis] if sign > 0 else box_min[axis]
            exit_margin = margin_at(exit_pt)
            # near-zero face margin: the triangulated surface may sit on
            # either side of the face there (truncation ambiguity), so the
            # closure term is unreliable; use another direction
            if abs(exit_margin) < 0.25:
                continue
            # Moller-Trumbore, vectorized over all triangles
            h = np.cross(d, e2)
            a = np.einsum("ij,ij->i", e1, h)
            parallel = np.abs(a) < 1e-14
            with np.errstate(divide="ignore", invalid="ignore"):
                f = 1.0 / a
                s = point[None, :] - v0
                u = f * np.einsum("ij,ij->i", s, h)
                q = np.cross(s, e1)
                v = f * (q @ d)
                t = f * np.einsum("ij,ij->i", q, e2)
            tmax = abs(exit_pt[axis] - point[axis])
            near = (
                (~parallel)
                & (u >= -1e-3)
                & (u <= 1 + 1e-3)
                & (v >= -1e-3)
                & (u + v <= 1 + 1e-3)
                & (t > -1e-6)
                & (t <= tmax + 1e-3)
            )
            hit = (
                near
                & (u >= eps)
                & (u <= 1 - eps)
                & (v >= eps)
                & (u + v <= 1 - eps)
                & (t > 1e-6)
                & (t <= tmax - 1e-6)
            )
            grazing = near & ~hit
            if grazing.any():
                continue
            crossings = int(hit.sum()) + (1 if exit_margin > 0 else 0)
            return crossings % 2 == 1
    return None


# ---------------------------------------------------------------------------
# 1-D constant-density slab ray march

def raymarch_slab(color, sigma, entry, exit, steps=200_000):
    """Premultiplied (color, alpha) of one homogeneous emissive slab."""
    ds = (exit - entry) / steps
    step_alpha = 1.0 - np.exp(-sigma * ds)
    acc_c = np.zeros(3)
    acc_a = 0.0
    color = np.asarray(color, dtype=np.float64)
    for _ in range(steps):
        w = (1.0 - acc_a) * step_alpha
        acc_c += w * color
        acc_a += w
    return acc_c, acc_a


def composite_premultiplied(layers, background):
    """Front-to-back compositing of premultiplied (color, alpha) layers."""
    acc_c = np.zeros(3)
    acc_a = 0.0
    for color, alpha in layers:
        acc_c += (1.0 - acc_a) * np.asarray(color)
        acc_a += (1.0 - acc_a) * alpha
    return acc_c + (1.0 - acc_a) * np.asarray(background, dtype=np.float64)


# ---------------------------------------------------------------------------
# dataset scaffolding

def make_raw(tmp: Path, fields: dict[str, np.ndarray], spacing=(1, 1, 1), origin=(0, 0, 0)):
    """Single-timestep raw dataset from (nz,ny,nx) arrays."""
    nz, ny, nx = next(iter(fields.values())).shape
    write_raw(tmp, (nx, ny, nz), spacing, origin, {0: fields})
    from voxcut.preprocess import RawDataset

    return RawDataset(tmp)


def sphere_dataset(tmp: Path, n=64, radius_frac=0.3):
    """Grid of the distance-to-center field plus the analytic radius."""
    ax = np.arange(n, dtype=np.float64)
    Z, Y, X = np.meshgrid(ax, ax, ax, indexing="ij")
    c = (n - 1) / 2.0
    dist = np.sqrt((X - c) ** 2 + (Y - c) ** 2 + (Z - c) ** 2)
    R = radius_frac * (n - 1)
    raw = make_raw(tmp, {"dist": dist.astype(np.float32)})
    return raw, R, (c, c, c)


def build_synth_store(tmp: Path, dims=(33, 33, 33), block_size=16, timesteps=1, blobs=None, wind=None):
    from voxcut.synth import Wind

    spec = SynthSpec(
        dims=dims,
        timesteps=timesteps,
        blobs=tuple(blobs or (Blob(center=(dims[0] / 2, dims[1] / 2, dims[2] / 2), radius=dims[0] / 4, amplitude=1.0),)),
        wind=wind or Wind("constant", vector=(1.0, 0.0, 0.0)),
    )
    rawdir = tmp / "raw"
    storedir = tmp / "store"
    synth_generate(spec, rawdir)
    store = build_octree(rawdir, block_size, storedir)
    return store, spec


@contextlib.contextmanager
def running_backend(store_path, workers=2, cache_bytes=64 << 20, worker_delay=0.0, **kw):
    config = BackendConfig(
        store_path=str(store_path),
        listen="127.0.0.1",
        port=0,
        workers=workers,
        cache_bytes=cache_bytes,
        worker_delay=worker_delay,
        **kw,
    )
    backend = Backend(config).start()
    try:
        yield backend
    finally:
        backend.stop()


# ---------------------------------------------------------------------------
# tiny client-side websocket (for transport tests)

class WsTestClient:
    def __init__(self, address):
        self.sock = socket.create_connection(address, timeout=10)
        key = "dGhlIHNhbXBsZSBub25jZQ=="
        request = (
            f"GET /stream HTTP/1.1\r\nHost: {address[0]}:{address[1]}\r\n"
            "Upgrade: websocket\r\nConnection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\nSec-WebSocket-Version: 13\r\n\r\n"
        )
        self.sock.sendall(request.encode("ascii"))
        response = b""
        while b"\r\n\r\n" not in response:
            response += self.sock.recv(4096)
        if b"101" not in response.split(b"\r\n", 1)[0]:
            raise AssertionError(f"handshake failed: {response!r}")

    def send_binary(self, payload: bytes) -> None:
        mask = b"\x12\x34\x56\x78"
        header = bytearray([0x82])
        n = len(payload)
        if n < 126:
            header.append(0x80 | n)
        elif n < 1 << 16:
            header.append(0x80 | 126)
            header += struct.pack(">H", n)
        else:
            header.append(0x80 | 127)
            header += struct.pack(">Q", n)
        header += mask
        masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        self.sock.sendall(bytes(header) + masked)

    def _recv_exact(self, n: int) -> bytes:
        data = b""
        while len(data) < n:
            chunk = self.sock.recv(n - len(data))
            if not chunk:
                raise ConnectionError("closed")
            data += chunk
        return data

    def recv_binary(self) -> bytes:
        fragments = []
        while True:
            b0, b1 = self._recv_exact(2)
            fin, opcode = b0 & 0x80, b0 & 0x0F
            length = b1 & 0x7F
            if length == 126:
                (length,) = struct.unpack(">H", self._recv_exact(2))
            elif length == 127:
                (length,) = struct.unpack(">Q", self._recv_exact(8))
            payload = self._recv_exact(length) if length else b""
            if opcode == 0x9:  # ping
                continue
            if opcode == 0x8:
                raise ConnectionError("server closed")
            fragments.append(payload)
            if fin:
                return b"".join(fragments)

    def close(self):
        self.sock.close()
