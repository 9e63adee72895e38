"""Occlusion-pattern generators. Each is a pure function of its arguments and seed."""
from __future__ import annotations

import numpy as np

from .data import OcclusionMask, SkeletonTopology
from .errors import ContractError


def _check_rate(rate: float) -> float:
    rate = float(rate)
    if not 0.0 <= rate <= 1.0:
        raise ContractError(f"occlusion rate must lie in [0, 1], got {rate}")
    return rate


def _from_joint_bits(visible: np.ndarray) -> OcclusionMask:
    return OcclusionMask(np.repeat(visible[:, :, None], 3, axis=2).astype(np.uint8))


def mask_future(F: int, J: int, visible_frames: int) -> OcclusionMask:
    """Frames [0, visible_frames) observed, the rest occluded."""
    if not 0 <= visible_frames <= F:
        raise ContractError(f"visible_frames must be in [0, {F}], got {visible_frames}")
    bits = np.zeros((F, J, 3), np.uint8)
    bits[:visible_frames] = 1
    return OcclusionMask(bits)


def mask_random_joints(F: int, J: int, rate: float, seed: int) -> OcclusionMask:
    rate = _check_rate(rate)
    rng = np.random.default_rng(seed)
    return _from_joint_bits(rng.random((F, J)) >= rate)


def mask_random_limbs(F: int, J: int, topology: SkeletonTopology, rate: float, seed: int) -> OcclusionMask:
    """Drop whole limb chains per frame until about ``rate``·J joints are hidden.

    Chains are taken in random order; the chain that would overshoot the target
    is kept with probability (remaining / chain length), so the expected count
    of occluded joints equals rate·J whenever the chains cover that many joints.
    """
    rate = _check_rate(rate)
    if topology.n_joints != J:
        raise ContractError(f"topology has {topology.n_joints} joints, mask asked for {J}")
    chains = topology.limb_chains
    if not chains:
        raise ContractError(f"topology {topology.name} defines no limbs")
    rng = np.random.default_rng(seed)
    target = rate * J
    visible = np.ones((F, J), bool)
    for f in range(F):
        hidden = 0
        for c in rng.permutation(len(chains)):
            chain = chains[c]
            remaining = target - hidden
            if remaining <= 0:
                break
            if len(chain) > remaining and rng.random() >= remaining / len(chain):
                break
            visible[f, list(chain)] = False
            hidden += len(chain)
    return _from_joint_bits(visible)


def mask_missing_frames(F: int, J: int, rate: float, seed: int) -> OcclusionMask:
    """Zero round(rate·F) interior frames; the first and last frame stay visible."""
    rate = _check_rate(rate)
    if F < 2:
        raise ContractError("need at least 2 frames")
    rng = np.random.default_rng(seed)
    n_drop = min(int(round(rate * F)), F - 2)
    dropped = rng.choice(np.arange(1, F - 1), size=n_drop, replace=False)
    bits = np.ones((F, J, 3), np.uint8)
    bits[dropped] = 0
    return OcclusionMask(bits)


def mask_noisy_transmission(F: int, J: int, rate: float, seed: int) -> OcclusionMask:
    rate = _check_rate(rate)
    rng = np.random.default_rng(seed)
    return OcclusionMask((rng.random((F, J, 3)) >= rate).astype(np.uint8))


PATTERNS = ("joints", "limbs", "frames", "transmission", "future")


def make_mask(pattern: str, F: int, J: int, rate: float, seed: int,
              topology: SkeletonTopology | None = None) -> OcclusionMask:
    """Dispatch by pattern name; ``future`` keeps the first round((1-rate)·F) frames."""
    if pattern == "joints":
        return mask_random_joints(F, J, rate, seed)
    if pattern == "limbs":
        if topology is None:
            raise ContractError("limb masks need a topology")
        return mask_random_limbs(F, J, topology, rate, seed)
    if pattern == "frames":
        return mask_missing_frames(F, J, rate, seed)
    if pattern == "transmission":
        return mask_noisy_transmission(F, J, rate, seed)
    if pattern == "future":
        return mask_future(F, J, F - int(round(_check_rate(rate) * F)))
    raise ContractError(f"unknown mask pattern {pattern!r}; expected one of {PATTERNS}")


def is_future_mask(m: OcclusionMask) -> bool:
    """True when frames are fully visible up to some index and fully occluded after."""
    rows = m.bits.reshape(m.shape[0], -1)
    full = rows.all(axis=1)
    empty = ~rows.any(axis=1)
    if not np.all(full | empty):
        return False
    k = int(full.sum())
    return bool(full[:k].all() and empty[k:].all())
