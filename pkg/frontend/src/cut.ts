// View-dependent cut maintenance: a faithful port of the backend client's
// algorithm, kept operation-for-operation identical so the protocol golden
// tests can compare emitted deltas byte for byte (float arithmetic included).

import {
  Box,
  CameraState,
  CutDelta,
  DatasetMeta,
  NodeId,
  nodeBbox,
  nodeKey,
  nodesAtLevel,
  parseNodeKey,
  partitionDims,
  rootNode,
  worldDiagonal,
} from "./model.js";

export const DEFAULT_SPLIT_ANGLE = 0.05; // steradians
export const MERGE_FACTOR = 0.8;
export const PRIORITY_EPSILON = 1e-3;

function dist3(a: readonly number[], b: readonly number[]): number {
  const dx = a[0] - b[0];
  const dy = a[1] - b[1];
  const dz = a[2] - b[2];
  return Math.sqrt(dx * dx + dy * dy + dz * dz);
}

export function solidAngle(box: Box, camera: CameraState): number {
  const center = [
    (box.mins[0] + box.maxs[0]) * 0.5,
    (box.mins[1] + box.maxs[1]) * 0.5,
    (box.mins[2] + box.maxs[2]) * 0.5,
  ];
  const radius = 0.5 * dist3(box.mins, box.maxs);
  const d = dist3(camera.position, center);
  if (d <= radius) return 2.0 * Math.PI;
  return 2.0 * Math.PI * (1.0 - d / Math.sqrt(d * d + radius * radius));
}

export function priorityOf(node: NodeId, camera: CameraState, meta: DatasetMeta): number {
  const box = nodeBbox(node, meta);
  const center = [
    (box.mins[0] + box.maxs[0]) * 0.5,
    (box.mins[1] + box.maxs[1]) * 0.5,
    (box.mins[2] + box.maxs[2]) * 0.5,
  ];
  const d = dist3(camera.position, center);
  return 1.0 / (1.0 + d / worldDiagonal(meta));
}

type Vec3 = [number, number, number];

function cross(a: Vec3, b: Vec3): Vec3 {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

function normalize(v: Vec3): Vec3 {
  const n = Math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

export class Frustum {
  normals: Vec3[] = [];
  offsets: number[] = [];

  constructor(camera: CameraState) {
    const pos = camera.position;
    const fwd = camera.forward;
    const up = camera.up;
    const right = normalize(cross(fwd, up));
    const tanV = Math.tan(camera.verticalFov / 2);
    const tanH = tanV * camera.aspect;

    const plane = (normal: Vec3, point: Vec3) => {
      const n = normalize(normal);
      this.normals.push(n);
      this.offsets.push(-(n[0] * point[0] + n[1] * point[1] + n[2] * point[2]));
    };
    const along = (k: number): Vec3 => [pos[0] + fwd[0] * k, pos[1] + fwd[1] * k, pos[2] + fwd[2] * k];
    const combo = (kf: number, v: Vec3, s: number): Vec3 => [
      fwd[0] * kf + v[0] * s,
      fwd[1] * kf + v[1] * s,
      fwd[2] * kf + v[2] * s,
    ];

    plane(fwd, along(camera.near));
    plane([-fwd[0], -fwd[1], -fwd[2]], along(camera.far));
    plane(combo(tanH, right, -1), pos);
    plane(combo(tanH, right, 1), pos);
    plane(combo(tanV, up, -1), pos);
    plane(combo(tanV, up, 1), pos);
  }

  intersectsBox(box: Box): boolean {
    for (let p = 0; p < 6; p++) {
      const n = this.normals[p];
      // positive vertex test
      const vx = n[0] > 0 ? box.maxs[0] : box.mins[0];
      const vy = n[1] > 0 ? box.maxs[1] : box.mins[1];
      const vz = n[2] > 0 ? box.maxs[2] : box.mins[2];
      if (n[0] * vx + n[1] * vy + n[2] * vz + this.offsets[p] < 0) return false;
    }
    return true;
  }
}

/**
 * Owns the cut membership and produces per-frame deltas.
 *
 * Split when a node's solid angle exceeds the threshold, collapse when a
 * previously split node falls below MERGE_FACTOR of it (hysteresis), cull
 * invisible subtrees entirely; a second walk with an unchanged camera is
 * always a fixed point.
 */
export class CutPlanner {
  current = new Map<string, number>(); // nodeKey -> priority

  constructor(
    readonly meta: DatasetMeta,
    readonly splitAngle: number = DEFAULT_SPLIT_ANGLE,
  ) {}

  updateCut(camera: CameraState): CutDelta {
    const frustum = new Frustum(camera);
    const mergeAngle = MERGE_FACTOR * this.splitAngle;
    const blocks = partitionDims(this.meta.dims, this.meta.blockSize);

    const wasSplit = new Set<string>();
    for (const key of this.current.keys()) {
      let n = parseNodeKey(key);
      while (n.level < this.meta.levels - 1) {
        n = { level: n.level + 1, ix: n.ix >> 1, iy: n.iy >> 1, iz: n.iz >> 1 };
        const k = nodeKey(n);
        if (wasSplit.has(k)) break;
        wasSplit.add(k);
      }
    }

    const selected = new Map<string, number>();

    const visit = (node: NodeId): void => {
      const box = nodeBbox(node, this.meta);
      if (!frustum.intersectsBox(box)) return;
      if (node.level > 0) {
        const omega = solidAngle(box, camera);
        const wantSplit = omega > this.splitAngle;
        const staySplit = wasSplit.has(nodeKey(node)) && omega > mergeAngle;
        if (wantSplit || staySplit) {
          const [nx, ny, nz] = nodesAtLevel(blocks, node.level - 1);
          for (const dz of [0, 1]) {
            for (const dy of [0, 1]) {
              for (const dx of [0, 1]) {
                const child = {
                  level: node.level - 1,
                  ix: 2 * node.ix + dx,
                  iy: 2 * node.iy + dy,
                  iz: 2 * node.iz + dz,
                };
                if (child.ix < nx && child.iy < ny && child.iz < nz) visit(child);
              }
            }
          }
          return;
        }
      }
      selected.set(nodeKey(node), priorityOf(node, camera, this.meta));
    };

    visit(rootNode(this.meta));

    const added: [NodeId, number][] = [];
    const reprioritized: [NodeId, number][] = [];
    for (const [key, prio] of selected) {
      const prev = this.current.get(key);
      if (prev === undefined) {
        added.push([parseNodeKey(key), prio]);
      } else if (Math.abs(prio - prev) > PRIORITY_EPSILON) {
        reprioritized.push([parseNodeKey(key), prio]);
      }
    }
    const removed: NodeId[] = [];
    for (const key of this.current.keys()) {
      if (!selected.has(key)) removed.push(parseNodeKey(key));
    }
    this.current = selected;
    return { added, removed, reprioritized };
  }
}
