from .cut import DEFAULT_SPLIT_ANGLE, CutPlanner, Frustum, priority_of, solid_angle
from .resolve import Fragment, FragmentList, Segment, pair_segments, resolve_fragments
from .session import ClientSession, NodeRender, RenderState, advect

__all__ = [
    "DEFAULT_SPLIT_ANGLE",
    "ClientSession",
    "CutPlanner",
    "Fragment",
    "FragmentList",
    "Frustum",
    "NodeRender",
    "RenderState",
    "Segment",
    "advect",
    "pair_segments",
    "priority_of",
    "resolve_fragments",
    "solid_angle",
]
