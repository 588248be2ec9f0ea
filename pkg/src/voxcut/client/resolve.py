"""Reference resolver for per-pixel fragment lists.

Fragments carry no opacity, only a sub-volume id: opacity appears during
the resolve, where consecutive fragments of the same id pair up as entry
and exit points and the traversed thickness feeds the user alpha
function.  This is the behavioural reference the GPU viewer has to
match.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

AlphaFn = Callable[[int, float], float]
Color = tuple[float, float, float]


@dataclass(frozen=True)
class Fragment:
    depth: float
    subvolume_id: int
    color: Color


@dataclass
class FragmentList:
    """Bounded per-pixel fragment store with farthest-drop overflow."""

    capacity: int
    far: float
    fragments: list[Fragment] = field(default_factory=list)
    overflowed: int = 0

    def insert(self, depth: float, subvolume_id: int, color: Color) -> None:
        frag = Fragment(depth, subvolume_id, color)
        self.fragments.append(frag)
        if len(self.fragments) > self.capacity:
            farthest = max(range(len(self.fragments)), key=lambda i: self.fragments[i].depth)
            self.fragments.pop(farthest)
            self.overflowed += 1


@dataclass(frozen=True)
class Segment:
    entry: float
    exit: float
    subvolume_id: int
    color: Color

    @property
    def thickness(self) -> float:
        return self.exit - self.entry


def pair_segments(fragments: Sequence[Fragment], far: float) -> list[Segment]:
    """Depth-sort, then pair consecutive same-id fragments as entry/exit.

    Ids left open at the end of the list (their exit was clipped or
    dropped) close at the far plane.  Segments come back ordered by
    entry depth, which is also the compositing order.
    """
    ordered = sorted(fragments, key=lambda f: f.depth)
    open_entries: dict[int, Fragment] = {}
    segments: list[Segment] = []
    for frag in ordered:
        entry = open_entries.pop(frag.subvolume_id, None)
        if entry is None:
            open_entries[frag.subvolume_id] = frag
        else:
            segments.append(
                Segment(entry.depth, frag.depth, frag.subvolume_id, entry.color)
            )
    for frag in open_entries.values():
        segments.append(Segment(frag.depth, far, frag.subvolume_id, frag.color))
    segments.sort(key=lambda s: s.entry)
    return segments


def resolve_fragments(
    pixel: FragmentList, alpha_fn: AlphaFn, background: Color
) -> Color:
    """Front-to-back compositing of the paired segments over the background."""
    acc = [0.0, 0.0, 0.0]
    acc_alpha = 0.0
    for seg in pair_segments(pixel.fragments, pixel.far):
        alpha = alpha_fn(seg.subvolume_id, seg.thickness)
        alpha = min(1.0, max(0.0, alpha))
        w = (1.0 - acc_alpha) * alpha
        acc[0] += w * seg.color[0]
        acc[1] += w * seg.color[1]
        acc[2] += w * seg.color[2]
        acc_alpha += w
    t = 1.0 - acc_alpha
    return (acc[0] + t * background[0], acc[1] + t * background[1], acc[2] + t * background[2])
