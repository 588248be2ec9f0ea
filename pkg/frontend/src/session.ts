// Streaming session state machine, transport-agnostic: the caller wires
// `send` to a WebSocket (or a test sink) and feeds incoming frames to
// `applyFrame`.  Mirrors the reference client semantics:
//
//  * nodes enter the cut EMPTY and render nothing until their first
//    complete result,
//  * any sub-volume or timestep change bumps the spec version, re-sends
//    SET_SPEC and re-requests the whole cut; affected nodes go STALE but
//    keep their old meshes until the replacement lands,
//  * results tagged with a superseded version are dropped on arrival.

import { CutPlanner } from "./cut.js";
import type { CameraState, CutDelta, DatasetMeta, NodeId, ResultMesh, SubVolumeSpec } from "./model.js";
import { nodeKey } from "./model.js";
import * as protocol from "./protocol.js";
import { FrameType } from "./protocol.js";

export enum RenderState {
  EMPTY = "empty",
  STALE = "stale",
  FRESH = "fresh",
}

export interface NodeRender {
  node: NodeId;
  priority: number;
  state: RenderState;
  meshes: ResultMesh[];
}

export interface SessionCounters {
  bytesReceived: number;
  results: number;
  nodeDone: number;
  droppedStale: number;
  droppedUnknown: number;
  abortAcks: number;
  errors: number;
  framesSent: number;
}

export class ViewerSession {
  version = 0;
  timestep = 0;
  subvolumes: SubVolumeSpec[] = [];
  nodes = new Map<string, NodeRender>();
  planner: CutPlanner;
  lastStats: protocol.Stats | null = null;
  lastError: { code: number; message: string } | null = null;
  counters: SessionCounters = {
    bytesReceived: 0,
    results: 0,
    nodeDone: 0,
    droppedStale: 0,
    droppedUnknown: 0,
    abortAcks: 0,
    errors: 0,
    framesSent: 0,
  };
  onFresh: ((node: NodeId) => void) | null = null;

  private staged = new Map<string, ResultMesh[]>();

  constructor(
    readonly meta: DatasetMeta,
    private send: (frame: Uint8Array) => void,
    splitAngle?: number,
  ) {
    this.planner = new CutPlanner(meta, splitAngle);
  }

  private emit(frame: Uint8Array): void {
    this.counters.framesSent++;
    this.send(frame);
  }

  setSubvolumes(subvolumes: SubVolumeSpec[]): number {
    this.subvolumes = subvolumes;
    return this.bumpAndRerequest();
  }

  setTimestep(timestep: number): number {
    this.timestep = timestep;
    return this.bumpAndRerequest();
  }

  private bumpAndRerequest(): number {
    this.version += 1;
    this.emit(protocol.encodeSetSpec(this.version, this.subvolumes, this.meta.fields));
    this.staged.clear();
    for (const render of this.nodes.values()) {
      if (render.state === RenderState.FRESH) render.state = RenderState.STALE;
    }
    if (this.nodes.size > 0) {
      const delta: CutDelta = {
        added: [...this.nodes.values()].map((r) => [r.node, r.priority]),
        removed: [],
        reprioritized: [],
      };
      this.emit(protocol.encodeCutDelta(this.version, this.timestep, delta));
    }
    return this.version;
  }

  updateCamera(camera: CameraState): CutDelta {
    const delta = this.planner.updateCut(camera);
    for (const [node, priority] of delta.added) {
      this.nodes.set(nodeKey(node), { node, priority, state: RenderState.EMPTY, meshes: [] });
    }
    for (const node of delta.removed) {
      this.nodes.delete(nodeKey(node));
      this.staged.delete(nodeKey(node));
    }
    for (const [node, priority] of delta.reprioritized) {
      const render = this.nodes.get(nodeKey(node));
      if (render) render.priority = priority;
    }
    if (delta.added.length || delta.removed.length || delta.reprioritized.length) {
      this.emit(protocol.encodeCutDelta(this.version, this.timestep, delta));
    }
    return delta;
  }

  applyFrame(data: Uint8Array): void {
    this.counters.bytesReceived += data.length;
    const got = protocol.splitFrame(data);
    if (!got || got.used !== data.length) {
      throw new protocol.ProtocolError("message must hold exactly one frame");
    }
    const { type, payload } = got;
    switch (type) {
      case FrameType.RESULT_MESH: {
        const mesh = protocol.decodeResultMesh(payload, this.meta.fields);
        this.counters.results++;
        if (mesh.specVersion !== this.version) {
          this.counters.droppedStale++;
          return;
        }
        const key = nodeKey(mesh.node);
        if (!this.nodes.has(key)) {
          this.counters.droppedUnknown++;
          return;
        }
        const staged = this.staged.get(key);
        if (staged) staged.push(mesh);
        else this.staged.set(key, [mesh]);
        return;
      }
      case FrameType.NODE_DONE: {
        const key = protocol.decodeNodeDone(payload);
        this.counters.nodeDone++;
        if (key.specVersion !== this.version) {
          this.counters.droppedStale++;
          return;
        }
        const k = nodeKey(key.node);
        const render = this.nodes.get(k);
        if (!render) {
          this.counters.droppedUnknown++;
          this.staged.delete(k);
          return;
        }
        render.meshes = this.staged.get(k) ?? [];
        this.staged.delete(k);
        render.state = RenderState.FRESH;
        this.onFresh?.(key.node);
        return;
      }
      case FrameType.ABORT_ACK:
        this.counters.abortAcks++;
        return;
      case FrameType.STATS:
        this.lastStats = protocol.decodeStats(payload);
        return;
      case FrameType.ERROR:
        this.lastError = protocol.decodeError(payload);
        this.counters.errors++;
        return;
      case FrameType.DATASET_INFO:
        return; // re-OPEN acknowledgement
      default:
        throw new protocol.ProtocolError(`unexpected frame type 0x${type.toString(16)}`);
    }
  }

  stateCounts(): Record<string, number> {
    const out: Record<string, number> = { empty: 0, stale: 0, fresh: 0 };
    for (const render of this.nodes.values()) out[render.state]++;
    return out;
  }

  visibleMeshes(): { render: NodeRender; mesh: ResultMesh }[] {
    const out: { render: NodeRender; mesh: ResultMesh }[] = [];
    for (const render of this.nodes.values()) {
      if (render.state === RenderState.EMPTY) continue;
      for (const mesh of render.meshes) out.push({ render, mesh });
    }
    return out;
  }
}

/** Forward-Euler display offset along the wind field; geometry untouched. */
export function advect(mesh: ResultMesh, s: number, dtSim: number): Float32Array {
  if (!mesh.velocities || mesh.positions.length === 0) return mesh.positions;
  const factor = Math.fround(s * dtSim);
  const out = new Float32Array(mesh.positions.length);
  for (let i = 0; i < out.length; i++) {
    out[i] = Math.fround(mesh.positions[i] + Math.fround(mesh.velocities[i] * factor));
  }
  return out;
}

/**
 * WebSocket driver: performs the HELLO handshake, then hands ownership to
 * a ViewerSession created from the received dataset description.
 */
export class SocketDriver {
  socket: WebSocket | null = null;
  session: ViewerSession | null = null;
  onReady: ((session: ViewerSession) => void) | null = null;
  onClose: (() => void) | null = null;
  private queue: Uint8Array[] = [];

  connect(url: string, datasetId: string | null, splitAngle?: number): void {
    const socket = new WebSocket(url);
    socket.binaryType = "arraybuffer";
    this.socket = socket;
    socket.onopen = () => {
      socket.send(protocol.encodeHello());
      if (datasetId) socket.send(protocol.encodeOpen(datasetId));
    };
    socket.onmessage = (ev: MessageEvent) => {
      const data = new Uint8Array(ev.data as ArrayBuffer);
      if (!this.session) {
        const got = protocol.splitFrame(data);
        if (got && got.type === FrameType.DATASET_INFO) {
          const meta = protocol.decodeDatasetInfo(got.payload);
          this.session = new ViewerSession(meta, (frame) => socket.send(frame), splitAngle);
          this.onReady?.(this.session);
        }
        return;
      }
      this.queue.push(data);
    };
    socket.onclose = () => this.onClose?.();
  }

  /** Apply buffered frames; called once per animation frame. */
  pump(): number {
    if (!this.session) return 0;
    const pending = this.queue;
    this.queue = [];
    for (const data of pending) this.session.applyFrame(data);
    return pending.length;
  }

  close(): void {
    this.socket?.close();
  }
}
