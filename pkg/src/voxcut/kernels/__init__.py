"""Extraction kernels: compiled core with a NumPy fallback.

``active_backend()`` returns the module actually in use.  Selection at
import time: the compiled extension when it built, unless the
``VOXCUT_KERNEL`` environment variable forces one of ``fast`` / ``pure``.
Both backends are bit-compatible; the compiled one releases the GIL so
worker threads scale.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import pure

try:
    from . import _fast
except ImportError:
    _fast = None  # type: ignore[assignment]

_FORCED = os.environ.get("VOXCUT_KERNEL", "").strip().lower()
if _FORCED == "pure":
    _active = pure
elif _FORCED == "fast":
    if _fast is None:
        raise ImportError("VOXCUT_KERNEL=fast but the compiled kernel is not built")
    _active = _fast
elif _FORCED:
    raise ValueError(f"VOXCUT_KERNEL must be 'fast' or 'pure', not {_FORCED!r}")
else:
    _active = _fast if _fast is not None else pure


def active_backend() -> ModuleType:
    return _active


def backend_name() -> str:
    return "fast" if _active is _fast else "pure"


def available_backends() -> dict[str, ModuleType]:
    out: dict[str, ModuleType] = {"pure": pure}
    if _fast is not None:
        out["fast"] = _fast
    return out


margin_grid = _active.margin_grid
mc_extract = _active.mc_extract
corner_gradients = _active.corner_gradients
trilinear_multi = _active.trilinear_multi
extract_block = _active.extract_block
