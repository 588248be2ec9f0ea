// Per-pixel fragment resolve, matching the backend's reference resolver:
// depth-sort, pair consecutive fragments of equal sub-volume id as
// entry/exit, opacity from the user alpha function of the traversed
// thickness, front-to-back compositing over the background.  The GLSL
// resolve pass implements this same algorithm on the peeled layers.

export type Color = [number, number, number];
export type AlphaFn = (subvolumeId: number, thickness: number) => number;

export interface Fragment {
  depth: number;
  subvolumeId: number;
  color: Color;
}

export interface Segment {
  entry: number;
  exit: number;
  subvolumeId: number;
  color: Color;
}

/** Bounded per-pixel fragment store with farthest-drop overflow. */
export class FragmentList {
  fragments: Fragment[] = [];
  overflowed = 0;

  constructor(
    readonly capacity: number,
    readonly far: number,
  ) {}

  insert(depth: number, subvolumeId: number, color: Color): void {
    this.fragments.push({ depth, subvolumeId, color });
    if (this.fragments.length > this.capacity) {
      let farthest = 0;
      for (let i = 1; i < this.fragments.length; i++) {
        if (this.fragments[i].depth > this.fragments[farthest].depth) farthest = i;
      }
      this.fragments.splice(farthest, 1);
      this.overflowed++;
    }
  }
}

/** Pair same-id fragments front to back; unpaired entries close at far. */
export function pairSegments(fragments: Fragment[], far: number): Segment[] {
  const ordered = [...fragments].sort((a, b) => a.depth - b.depth);
  const open = new Map<number, Fragment>();
  const segments: Segment[] = [];
  for (const frag of ordered) {
    const entry = open.get(frag.subvolumeId);
    if (entry === undefined) {
      open.set(frag.subvolumeId, frag);
    } else {
      open.delete(frag.subvolumeId);
      segments.push({
        entry: entry.depth,
        exit: frag.depth,
        subvolumeId: frag.subvolumeId,
        color: entry.color,
      });
    }
  }
  for (const frag of open.values()) {
    segments.push({ entry: frag.depth, exit: far, subvolumeId: frag.subvolumeId, color: frag.color });
  }
  segments.sort((a, b) => a.entry - b.entry);
  return segments;
}

export function resolveFragments(pixel: FragmentList, alphaFn: AlphaFn, background: Color): Color {
  const acc: Color = [0, 0, 0];
  let accAlpha = 0;
  for (const seg of pairSegments(pixel.fragments, pixel.far)) {
    let alpha = alphaFn(seg.subvolumeId, seg.exit - seg.entry);
    alpha = Math.min(1, Math.max(0, alpha));
    const w = (1 - accAlpha) * alpha;
    acc[0] += w * seg.color[0];
    acc[1] += w * seg.color[1];
    acc[2] += w * seg.color[2];
    accAlpha += w;
  }
  const t = 1 - accAlpha;
  return [acc[0] + t * background[0], acc[1] + t * background[1], acc[2] + t * background[2]];
}
