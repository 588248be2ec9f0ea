// Binary frame codec: u32 LE payload length | u8 type | payload.
// Byte-compatible with the extraction service on both raw TCP and
// WebSocket transports; every WebSocket binary message is exactly one frame.

import type { CutDelta, DatasetMeta, NodeId, ResultMesh, SubVolumeSpec } from "./model.js";

export const PROTO_VERSION = 1;

export enum FrameType {
  HELLO = 0x01,
  OPEN = 0x02,
  DATASET_INFO = 0x03,
  SET_SPEC = 0x10,
  CUT_DELTA = 0x11,
  RESULT_MESH = 0x20,
  NODE_DONE = 0x21,
  ABORT_ACK = 0x22,
  STATS = 0x30,
  ERROR = 0x7f,
}

export interface ResultKey {
  specVersion: number;
  timestep: number;
  node: NodeId;
}

export interface Stats {
  pending: number;
  running: number;
  cacheHits: number;
  cacheMisses: number;
}

export class ProtocolError extends Error {}

class Writer {
  private chunks: number[] = [];

  u8(v: number): this {
    this.chunks.push(v & 0xff);
    return this;
  }

  u16(v: number): this {
    this.chunks.push(v & 0xff, (v >>> 8) & 0xff);
    return this;
  }

  u32(v: number): this {
    this.chunks.push(v & 0xff, (v >>> 8) & 0xff, (v >>> 16) & 0xff, (v >>> 24) & 0xff);
    return this;
  }

  f32(v: number): this {
    const b = new DataView(new ArrayBuffer(4));
    b.setFloat32(0, v, true);
    this.chunks.push(b.getUint8(0), b.getUint8(1), b.getUint8(2), b.getUint8(3));
    return this;
  }

  bytes(data: Uint8Array): this {
    for (const b of data) this.chunks.push(b);
    return this;
  }

  f32Array(data: Float32Array): this {
    const view = new Uint8Array(data.buffer, data.byteOffset, data.byteLength);
    return this.bytes(view);
  }

  utf8(text: string): Uint8Array {
    return new TextEncoder().encode(text);
  }

  node(n: NodeId): this {
    return this.u8(n.level).u16(n.ix).u16(n.iy).u16(n.iz);
  }

  key(k: ResultKey): this {
    return this.u32(k.specVersion).u32(k.timestep).node(k.node);
  }

  frame(type: FrameType): Uint8Array {
    const payload = this.chunks;
    const out = new Uint8Array(5 + payload.length);
    const dv = new DataView(out.buffer);
    dv.setUint32(0, payload.length, true);
    out[4] = type;
    out.set(payload, 5);
    return out;
  }
}

class Reader {
  private view: DataView;
  at = 0;

  constructor(private data: Uint8Array) {
    this.view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  }

  u8(): number {
    return this.view.getUint8(this.at++);
  }

  u16(): number {
    const v = this.view.getUint16(this.at, true);
    this.at += 2;
    return v;
  }

  u32(): number {
    const v = this.view.getUint32(this.at, true);
    this.at += 4;
    return v;
  }

  u64(): number {
    const v = this.view.getBigUint64(this.at, true);
    this.at += 8;
    return Number(v);
  }

  f32(): number {
    const v = this.view.getFloat32(this.at, true);
    this.at += 4;
    return v;
  }

  f32Array(count: number): Float32Array {
    // copy: the source buffer may be misaligned or reused
    const out = new Float32Array(count);
    for (let i = 0; i < count; i++) out[i] = this.f32();
    return out;
  }

  utf8(length: number): string {
    const text = new TextDecoder().decode(this.data.subarray(this.at, this.at + length));
    this.at += length;
    return text;
  }

  node(): NodeId {
    return { level: this.u8(), ix: this.u16(), iy: this.u16(), iz: this.u16() };
  }

  key(): ResultKey {
    return { specVersion: this.u32(), timestep: this.u32(), node: this.node() };
  }

  remaining(): number {
    return this.data.length - this.at;
  }
}

/** Split one frame off the front of buf; null when incomplete. */
export function splitFrame(buf: Uint8Array): { type: number; payload: Uint8Array; used: number } | null {
  if (buf.length < 5) return null;
  const dv = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const length = dv.getUint32(0, true);
  if (buf.length < 5 + length) return null;
  return { type: buf[4], payload: buf.subarray(5, 5 + length), used: 5 + length };
}

export function encodeHello(): Uint8Array {
  return new Writer().u16(PROTO_VERSION).frame(FrameType.HELLO);
}

export function encodeOpen(datasetId: string): Uint8Array {
  const w = new Writer();
  const raw = w.utf8(datasetId);
  return w.u16(raw.length).bytes(raw).frame(FrameType.OPEN);
}

export function decodeDatasetInfo(payload: Uint8Array): DatasetMeta {
  const r = new Reader(payload);
  const dims: [number, number, number] = [r.u32(), r.u32(), r.u32()];
  const spacing: [number, number, number] = [r.f32(), r.f32(), r.f32()];
  const origin: [number, number, number] = [r.f32(), r.f32(), r.f32()];
  const blockSize = r.u16();
  const levels = r.u8();
  const timesteps = r.u32();
  const nfields = r.u8();
  const fields: string[] = [];
  for (let i = 0; i < nfields; i++) fields.push(r.utf8(r.u8()));
  return { dims, spacing, origin, blockSize, fields, timesteps, levels };
}

export function encodeSetSpec(
  version: number,
  subvolumes: SubVolumeSpec[],
  fieldNames: string[],
): Uint8Array {
  const w = new Writer().u32(version).u8(subvolumes.length);
  for (const sv of subvolumes) {
    w.u8(sv.id).u8(sv.limits.length);
    for (const lim of sv.limits) {
      const idx = fieldNames.indexOf(lim.field);
      if (idx < 0) throw new ProtocolError(`unknown field ${lim.field}`);
      w.u8(idx).f32(lim.lower).f32(lim.upper);
    }
  }
  return w.frame(FrameType.SET_SPEC);
}

export function decodeSetSpec(
  payload: Uint8Array,
  fieldNames: string[],
): { version: number; subvolumes: SubVolumeSpec[] } {
  const r = new Reader(payload);
  const version = r.u32();
  const count = r.u8();
  const subvolumes: SubVolumeSpec[] = [];
  for (let i = 0; i < count; i++) {
    const id = r.u8();
    const nlimits = r.u8();
    const limits = [];
    for (let j = 0; j < nlimits; j++) {
      const idx = r.u8();
      if (idx >= fieldNames.length) throw new ProtocolError(`field index ${idx} out of range`);
      limits.push({ field: fieldNames[idx], lower: r.f32(), upper: r.f32() });
    }
    subvolumes.push({ id, limits });
  }
  return { version, subvolumes };
}

export function encodeCutDelta(version: number, timestep: number, delta: CutDelta): Uint8Array {
  const w = new Writer().u32(version).u32(timestep);
  w.u16(delta.added.length);
  for (const [node, prio] of delta.added) w.node(node).f32(prio);
  w.u16(delta.removed.length);
  for (const node of delta.removed) w.node(node);
  w.u16(delta.reprioritized.length);
  for (const [node, prio] of delta.reprioritized) w.node(node).f32(prio);
  return w.frame(FrameType.CUT_DELTA);
}

export function decodeCutDelta(payload: Uint8Array): { version: number; timestep: number; delta: CutDelta } {
  const r = new Reader(payload);
  const version = r.u32();
  const timestep = r.u32();
  const added: [NodeId, number][] = [];
  const nAdd = r.u16();
  for (let i = 0; i < nAdd; i++) added.push([r.node(), r.f32()]);
  const removed: NodeId[] = [];
  const nRem = r.u16();
  for (let i = 0; i < nRem; i++) removed.push(r.node());
  const reprioritized: [NodeId, number][] = [];
  const nRep = r.u16();
  for (let i = 0; i < nRep; i++) reprioritized.push([r.node(), r.f32()]);
  return { version, timestep, delta: { added, removed, reprioritized } };
}

export function decodeResultMesh(payload: Uint8Array, fieldNames: string[]): ResultMesh {
  const r = new Reader(payload);
  const key = r.key();
  const subvolumeId = r.u8();
  const nverts = r.u32();
  const positions = r.f32Array(nverts * 3);
  const normals = r.f32Array(nverts * 3);
  const nfields = r.u8();
  if (nfields !== fieldNames.length) {
    throw new ProtocolError(`field count ${nfields} != expected ${fieldNames.length}`);
  }
  const attributes = new Map<string, Float32Array>();
  for (const name of fieldNames) attributes.set(name, r.f32Array(nverts));
  const hasVel = r.u8();
  const velocities = hasVel ? r.f32Array(nverts * 3) : null;
  return {
    node: key.node,
    timestep: key.timestep,
    specVersion: key.specVersion,
    subvolumeId,
    positions,
    normals,
    attributes,
    velocities,
  };
}

export function encodeResultMesh(mesh: ResultMesh, fieldNames: string[]): Uint8Array {
  const w = new Writer();
  w.key({ specVersion: mesh.specVersion, timestep: mesh.timestep, node: mesh.node });
  const nverts = mesh.positions.length / 3;
  w.u8(mesh.subvolumeId).u32(nverts);
  w.f32Array(mesh.positions).f32Array(mesh.normals);
  w.u8(fieldNames.length);
  for (const name of fieldNames) {
    const attr = mesh.attributes.get(name);
    if (!attr) throw new ProtocolError(`missing attribute ${name}`);
    w.f32Array(attr);
  }
  if (mesh.velocities) {
    w.u8(1).f32Array(mesh.velocities);
  } else {
    w.u8(0);
  }
  return w.frame(FrameType.RESULT_MESH);
}

export function decodeNodeDone(payload: Uint8Array): ResultKey {
  return new Reader(payload).key();
}

export function decodeAbortAck(payload: Uint8Array): number {
  return new Reader(payload).u32();
}

export function decodeStats(payload: Uint8Array): Stats {
  const r = new Reader(payload);
  return { pending: r.u32(), running: r.u32(), cacheHits: r.u64(), cacheMisses: r.u64() };
}

export function decodeError(payload: Uint8Array): { code: number; message: string } {
  const r = new Reader(payload);
  const code = r.u16();
  return { code, message: r.utf8(r.remaining()) };
}
