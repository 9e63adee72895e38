"""Non-learned completions: zero velocity for prediction, linear interpolation for occlusion."""
from __future__ import annotations

import numpy as np

from .data import MotionSequence, OcclusionMask
from .errors import ContractError, DimensionError
from .masks import is_future_mask


def _check(s: MotionSequence, m: OcclusionMask) -> None:
    if s.coords.shape != m.shape:
        raise DimensionError(f"sequence {s.coords.shape} and mask {m.shape} differ")


def zero_velocity(s: MotionSequence, m: OcclusionMask) -> MotionSequence:
    """Repeat the last observed frame across every later frame."""
    _check(s, m)
    if not is_future_mask(m):
        raise ContractError("zero-velocity baseline needs a future mask")
    k = int(m.bits.reshape(m.shape[0], -1).all(axis=1).sum())
    if k == 0:
        raise ContractError("future mask observes no frames")
    out = s.coords.copy()
    out[k:] = s.coords[k - 1]
    return s.replace(out)


def linear_interpolate(s: MotionSequence, m: OcclusionMask) -> MotionSequence:
    """Per-channel linear interpolation between visible neighbours, nearest hold at the ends."""
    _check(s, m)
    F = s.n_frames
    vis = m.bits.astype(bool).reshape(F, -1)
    src = s.coords.reshape(F, -1)
    out = src.copy()
    t = np.arange(F, dtype=np.float64)
    never = ~vis.any(axis=0)
    if never.any():
        c = int(np.argmax(never))
        raise ContractError(f"channel {c} (joint {c // 3}, axis {c % 3}) is never visible")
    for c in np.flatnonzero(~vis.all(axis=0)):
        keep = vis[:, c]
        # np.interp holds the end values outside the visible range
        out[:, c] = np.interp(t, t[keep], src[keep, c])
    return s.replace(out.reshape(s.coords.shape))
