// Domain types shared across the viewer, mirroring the backend's wire model.
// The octree is addressed bottom-up: level 0 = leaves, the root sits at
// levels-1; per-axis node counts follow ceil-halving of the leaf block counts.

export interface DatasetMeta {
  dims: [number, number, number];
  spacing: [number, number, number];
  origin: [number, number, number];
  blockSize: number;
  fields: string[];
  timesteps: number;
  levels: number;
}

export interface NodeId {
  level: number;
  ix: number;
  iy: number;
  iz: number;
}

export function nodeKey(n: NodeId): string {
  return `${n.level},${n.ix},${n.iy},${n.iz}`;
}

export function parseNodeKey(key: string): NodeId {
  const [level, ix, iy, iz] = key.split(",").map(Number);
  return { level, ix, iy, iz };
}

export interface Limit {
  field: string;
  lower: number;
  upper: number;
}

export interface SubVolumeSpec {
  id: number;
  limits: Limit[];
}

export interface CutDelta {
  added: [NodeId, number][];
  removed: NodeId[];
  reprioritized: [NodeId, number][];
}

export interface ResultMesh {
  node: NodeId;
  timestep: number;
  specVersion: number;
  subvolumeId: number;
  positions: Float32Array; // nverts*3
  normals: Float32Array; // nverts*3
  attributes: Map<string, Float32Array>;
  velocities: Float32Array | null; // nverts*3
}

export interface CameraState {
  position: [number, number, number];
  forward: [number, number, number]; // unit
  up: [number, number, number]; // unit, orthogonal to forward
  verticalFov: number;
  aspect: number;
  near: number;
  far: number;
}

function norm3(v: [number, number, number]): number {
  return Math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
}

/** Normalize forward, re-orthogonalize up; throws on degenerate input. */
export function makeCamera(c: {
  position: [number, number, number];
  forward: [number, number, number];
  up?: [number, number, number];
  verticalFov?: number;
  aspect?: number;
  near?: number;
  far?: number;
}): CameraState {
  const nf = norm3(c.forward);
  if (nf === 0) throw new Error("forward must be non-zero");
  const f: [number, number, number] = [c.forward[0] / nf, c.forward[1] / nf, c.forward[2] / nf];
  const upIn = c.up ?? [0, 0, 1];
  const d = upIn[0] * f[0] + upIn[1] * f[1] + upIn[2] * f[2];
  const u0: [number, number, number] = [upIn[0] - f[0] * d, upIn[1] - f[1] * d, upIn[2] - f[2] * d];
  const nu = norm3(u0);
  if (nu < 1e-12) throw new Error("up is parallel to forward");
  return {
    position: [...c.position],
    forward: f,
    up: [u0[0] / nu, u0[1] / nu, u0[2] / nu],
    verticalFov: c.verticalFov ?? Math.PI / 3,
    aspect: c.aspect ?? 16 / 9,
    near: c.near ?? 0.01,
    far: c.far ?? 1e6,
  };
}

export function partitionDims(dims: [number, number, number], blockSize: number): [number, number, number] {
  return dims.map((d) => Math.ceil((d - 1) / blockSize)) as [number, number, number];
}

export function nodesAtLevel(blocks: [number, number, number], level: number): [number, number, number] {
  const s = 1 << level;
  return blocks.map((b) => Math.ceil(b / s)) as [number, number, number];
}

export function worldDiagonal(meta: DatasetMeta): number {
  let total = 0;
  for (let a = 0; a < 3; a++) {
    const e = (meta.dims[a] - 1) * meta.spacing[a];
    total += e * e;
  }
  return Math.sqrt(total);
}

export interface Box {
  mins: [number, number, number];
  maxs: [number, number, number];
}

/** World box of a node, clipped to the grid extent (mirror of the backend). */
export function nodeBbox(node: NodeId, meta: DatasetMeta): Box {
  const scale = meta.blockSize * (1 << node.level);
  const start = [node.ix * scale, node.iy * scale, node.iz * scale];
  const mins: [number, number, number] = [0, 0, 0];
  const maxs: [number, number, number] = [0, 0, 0];
  for (let a = 0; a < 3; a++) {
    const hi = Math.min(start[a] + scale, meta.dims[a] - 1);
    mins[a] = meta.origin[a] + meta.spacing[a] * start[a];
    maxs[a] = meta.origin[a] + meta.spacing[a] * hi;
  }
  return { mins, maxs };
}

export function rootNode(meta: DatasetMeta): NodeId {
  return { level: meta.levels - 1, ix: 0, iy: 0, iz: 0 };
}
