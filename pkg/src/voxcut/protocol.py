"""Framed binary protocol shared by the extraction service and its clients.

Frame layout: ``u32 LE payload length | u8 frame type | payload``.  The
same frame bytes travel over raw TCP and as single binary WebSocket
messages, so captures from either transport are interchangeable.

All integers are little-endian; node addresses are packed as
``u8 level, u16 ix, u16 iy, u16 iz``; a result key is
``u32 spec version, u32 timestep`` followed by a node address.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .model import (
    CutDelta,
    DatasetMeta,
    Limit,
    NodeId,
    ResultMesh,
    SpecSet,
    SubVolumeSpec,
)

MAX_PAYLOAD = 64 * 1024 * 1024
PROTO_VERSION = 1


class FrameType(IntEnum):
    HELLO = 0x01
    OPEN = 0x02
    DATASET_INFO = 0x03
    SET_SPEC = 0x10
    CUT_DELTA = 0x11
    RESULT_MESH = 0x20
    NODE_DONE = 0x21
    ABORT_ACK = 0x22
    STATS = 0x30
    ERROR = 0x7F


class ErrorCode(IntEnum):
    PROTOCOL = 1
    VERSION = 2
    UNKNOWN_DATASET = 3
    EXTRACTION = 4
    STORE = 5


class ProtocolError(Exception):
    """Malformed frame or protocol violation; the session must close."""


def encode_frame(ftype: int, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload too large: {len(payload)}")
    return struct.pack("<IB", len(payload), ftype) + payload


def split_frame(buffer: bytes | bytearray | memoryview) -> tuple[int, bytes, int] | None:
    """Try to take one frame off the front of ``buffer``.

    Returns ``(type, payload, consumed)`` or None when incomplete.
    """
    if len(buffer) < 5:
        return None
    length, ftype = struct.unpack_from("<IB", buffer)
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"declared payload too large: {length}")
    if len(buffer) < 5 + length:
        return None
    return ftype, bytes(memoryview(buffer)[5 : 5 + length]), 5 + length


def _pack_node(node: NodeId) -> bytes:
    return struct.pack("<BHHH", node.level, node.ix, node.iy, node.iz)


def _unpack_node(payload: bytes, at: int) -> tuple[NodeId, int]:
    level, ix, iy, iz = struct.unpack_from("<BHHH", payload, at)
    return NodeId(level, ix, iy, iz), at + 7


@dataclass(frozen=True)
class ResultKey:
    spec_version: int
    timestep: int
    node: NodeId


def _pack_key(key: ResultKey) -> bytes:
    return struct.pack("<II", key.spec_version, key.timestep) + _pack_node(key.node)


def _unpack_key(payload: bytes, at: int) -> tuple[ResultKey, int]:
    version, timestep = struct.unpack_from("<II", payload, at)
    node, at = _unpack_node(payload, at + 8)
    return ResultKey(version, timestep, node), at


def encode_hello() -> bytes:
    return encode_frame(FrameType.HELLO, struct.pack("<H", PROTO_VERSION))


def decode_hello(payload: bytes) -> int:
    (proto,) = struct.unpack("<H", payload)
    return proto


def encode_open(dataset_id: str) -> bytes:
    raw = dataset_id.encode("utf-8")
    return encode_frame(FrameType.OPEN, struct.pack("<H", len(raw)) + raw)


def decode_open(payload: bytes) -> str:
    (n,) = struct.unpack_from("<H", payload)
    return payload[2 : 2 + n].decode("utf-8")


def encode_dataset_info(meta: DatasetMeta) -> bytes:
    parts = [
        struct.pack(
            "<IIIffffffHBI",
            *meta.dims,
            *meta.spacing,
            *meta.origin,
            meta.block_size,
            meta.levels,
            meta.timesteps,
        ),
        struct.pack("<B", len(meta.fields)),
    ]
    for name in meta.fields:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<B", len(raw)) + raw)
    return encode_frame(FrameType.DATASET_INFO, b"".join(parts))


def decode_dataset_info(payload: bytes) -> DatasetMeta:
    vals = struct.unpack_from("<IIIffffffHBI", payload)
    at = struct.calcsize("<IIIffffffHBI")
    (nfields,) = struct.unpack_from("<B", payload, at)
    at += 1
    fields = []
    for _ in range(nfields):
        (n,) = struct.unpack_from("<B", payload, at)
        at += 1
        fields.append(payload[at : at + n].decode("utf-8"))
        at += n
    return DatasetMeta.create(
        dims=vals[0:3],
        spacing=vals[3:6],
        origin=vals[6:9],
        block_size=vals[9],
        fields=fields,
        timesteps=vals[11],
    )


def encode_set_spec(specset: SpecSet, field_names: tuple[str, ...]) -> bytes:
    index = {name: i for i, name in enumerate(field_names)}
    parts = [struct.pack("<IB", specset.version, len(specset.subvolumes))]
    for sv in specset.subvolumes:
        parts.append(struct.pack("<BB", sv.id, len(sv.limits)))
        for lim in sv.limits:
            if lim.field not in index:
                raise ProtocolError(f"unknown field {lim.field!r}")
            parts.append(struct.pack("<Bff", index[lim.field], lim.lower, lim.upper))
    return encode_frame(FrameType.SET_SPEC, b"".join(parts))


def decode_set_spec(payload: bytes, field_names: tuple[str, ...]) -> SpecSet:
    version, count = struct.unpack_from("<IB", payload)
    at = 5
    subvolumes = []
    for _ in range(count):
        sid, nlimits = struct.unpack_from("<BB", payload, at)
        at += 2
        limits = []
        for _ in range(nlimits):
            fidx, lo, hi = struct.unpack_from("<Bff", payload, at)
            at += 9
            if fidx >= len(field_names):
                raise ProtocolError(f"field index {fidx} out of range")
            limits.append(Limit(field_names[fidx], lo, hi))
        subvolumes.append(SubVolumeSpec(sid, tuple(limits)))
    return SpecSet(version, tuple(subvolumes))


def encode_cut_delta(version: int, timestep: int, delta: CutDelta) -> bytes:
    parts = [struct.pack("<II", version, timestep)]
    parts.append(struct.pack("<H", len(delta.added)))
    for node, prio in delta.added:
        parts.append(_pack_node(node) + struct.pack("<f", prio))
    parts.append(struct.pack("<H", len(delta.removed)))
    for node in delta.removed:
        parts.append(_pack_node(node))
    parts.append(struct.pack("<H", len(delta.reprioritized)))
    for node, prio in delta.reprioritized:
        parts.append(_pack_node(node) + struct.pack("<f", prio))
    return encode_frame(FrameType.CUT_DELTA, b"".join(parts))


def decode_cut_delta(payload: bytes) -> tuple[int, int, CutDelta]:
    version, timestep = struct.unpack_from("<II", payload)
    at = 8
    (n_add,) = struct.unpack_from("<H", payload, at)
    at += 2
    added = []
    for _ in range(n_add):
        node, at = _unpack_node(payload, at)
        (prio,) = struct.unpack_from("<f", payload, at)
        at += 4
        added.append((node, prio))
    (n_rem,) = struct.unpack_from("<H", payload, at)
    at += 2
    removed = []
    for _ in range(n_rem):
        node, at = _unpack_node(payload, at)
        removed.append(node)
    (n_rep,) = struct.unpack_from("<H", payload, at)
    at += 2
    repri = []
    for _ in range(n_rep):
        node, at = _unpack_node(payload, at)
        (prio,) = struct.unpack_from("<f", payload, at)
        at += 4
        repri.append((node, prio))
    return version, timestep, CutDelta(tuple(added), tuple(removed), tuple(repri))


def _f32_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def encode_result_mesh(mesh: ResultMesh, field_names: tuple[str, ...]) -> bytes:
    key = ResultKey(mesh.spec_version, mesh.timestep, mesh.node)
    nv = mesh.nverts
    parts = [
        _pack_key(key),
        struct.pack("<BI", mesh.subvolume_id, nv),
        _f32_bytes(mesh.positions),
        _f32_bytes(mesh.normals),
        struct.pack("<B", len(field_names)),
    ]
    for name in field_names:
        parts.append(_f32_bytes(mesh.attributes[name]))
    if mesh.velocities is not None:
        parts.append(struct.pack("<B", 1))
        parts.append(_f32_bytes(mesh.velocities))
    else:
        parts.append(struct.pack("<B", 0))
    return encode_frame(FrameType.RESULT_MESH, b"".join(parts))


def decode_result_mesh(payload: bytes, field_names: tuple[str, ...]) -> ResultMesh:
    key, at = _unpack_key(payload, 0)
    subvol, nv = struct.unpack_from("<BI", payload, at)
    at += 5

    def take(count: int) -> np.ndarray:
        nonlocal at
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=at)
        at += count * 4
        return arr

    positions = take(nv * 3).reshape(nv, 3)
    normals = take(nv * 3).reshape(nv, 3)
    (nfields,) = struct.unpack_from("<B", payload, at)
    at += 1
    if nfields != len(field_names):
        raise ProtocolError(f"field count {nfields} != expected {len(field_names)}")
    attrs = {name: take(nv) for name in field_names}
    (has_vel,) = struct.unpack_from("<B", payload, at)
    at += 1
    velocities = take(nv * 3).reshape(nv, 3) if has_vel else None
    return ResultMesh(
        node=key.node,
        timestep=key.timestep,
        spec_version=key.spec_version,
        subvolume_id=subvol,
        positions=positions,
        normals=normals,
        attributes=attrs,
        velocities=velocities,
    )


def encode_node_done(key: ResultKey) -> bytes:
    return encode_frame(FrameType.NODE_DONE, _pack_key(key))


def decode_node_done(payload: bytes) -> ResultKey:
    key, _ = _unpack_key(payload, 0)
    return key


def encode_abort_ack(version: int) -> bytes:
    return encode_frame(FrameType.ABORT_ACK, struct.pack("<I", version))


def decode_abort_ack(payload: bytes) -> int:
    return struct.unpack("<I", payload)[0]


def encode_stats(pending: int, running: int, cache_hits: int, cache_misses: int) -> bytes:
    return encode_frame(
        FrameType.STATS, struct.pack("<IIQQ", pending, running, cache_hits, cache_misses)
    )


def decode_stats(payload: bytes) -> tuple[int, int, int, int]:
    return struct.unpack("<IIQQ", payload)


def encode_error(code: int, message: str) -> bytes:
    return encode_frame(FrameType.ERROR, struct.pack("<H", code) + message.encode("utf-8"))


def decode_error(payload: bytes) -> tuple[int, str]:
    (code,) = struct.unpack_from("<H", payload)
    return code, payload[2:].decode("utf-8")
