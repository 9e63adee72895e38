"""Spatial alignment, distance matrices, bone and limb measurements.

The up axis is +Z. Functions named ``*_t`` take and return :class:`Tensor`
objects and are differentiable; the rest work on plain arrays.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import MotionSequence, OcclusionMask, SkeletonTopology
from .errors import ContractError, DimensionError

_EPS_FACING = 1e-9


@dataclass(frozen=True)
class AlignmentTransform:
    """aligned = R·(x − translation); R rotates about +Z only."""

    translation: np.ndarray
    rotation: np.ndarray
    degenerate: bool = False

    def apply(self, coords: np.ndarray) -> np.ndarray:
        return (np.asarray(coords) - self.translation) @ self.rotation.T

    def invert(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords) @ self.rotation + self.translation

    @property
    def is_identity(self) -> bool:
        return bool(np.allclose(self.translation, 0.0, atol=1e-9) and np.allclose(self.rotation, np.eye(3), atol=1e-12))


def rotation_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def facing_transforms(x: np.ndarray, topology: SkeletonTopology, ref: np.ndarray | int = 0):
    """Vectorised alignment parameters for a batch ``x`` of shape (N, F, J, 3).

    Returns (translation (N, 3), rotation (N, 3, 3), degenerate (N,) bool).
    """
    n = x.shape[0]
    ref = np.broadcast_to(np.asarray(ref, dtype=np.intp), (n,))
    rows = x[np.arange(n), ref]
    t = rows[:, topology.hip].copy()
    d = rows[:, topology.right_hip, :2] - rows[:, topology.left_hip, :2]
    norm = np.linalg.norm(d, axis=1)
    degenerate = norm < _EPS_FACING
    c = np.where(degenerate, 1.0, d[:, 0] / np.where(degenerate, 1.0, norm))
    s = np.where(degenerate, 0.0, d[:, 1] / np.where(degenerate, 1.0, norm))
    # rotate by -theta so the hip axis lands on +X
    R = np.zeros((n, 3, 3))
    R[:, 0, 0], R[:, 0, 1] = c, s
    R[:, 1, 0], R[:, 1, 1] = -s, c
    R[:, 2, 2] = 1.0
    return t, R, degenerate


def align(s: MotionSequence, topology: SkeletonTopology, ref_frame: int = 0):
    """Put the reference-frame hip at the origin, left→right hip along +X."""
    if s.n_joints != topology.n_joints:
        raise DimensionError(f"sequence has {s.n_joints} joints, topology {topology.n_joints}")
    if not np.all(np.isfinite(s.coords[ref_frame, topology.hip])):
        raise ContractError("reference-frame hip is not finite")
    t, R, deg = facing_transforms(s.coords[None], topology, ref_frame)
    if deg[0]:
        warnings.warn("degenerate facing direction; using identity rotation", RuntimeWarning, stacklevel=2)
    tf = AlignmentTransform(t[0], R[0], bool(deg[0]))
    return s.replace(tf.apply(s.coords)), tf


def unalign(s: MotionSequence, tf: AlignmentTransform) -> MotionSequence:
    return s.replace(tf.invert(s.coords))


def unalign_t(x: T.Tensor, translation: np.ndarray, rotation: np.ndarray) -> T.Tensor:
    """Differentiable inverse alignment of a batch (N, F, J, 3)."""
    n, F, J, _ = x.shape
    flat = T.reshape(x, (n, F * J, 3))
    back = T.matmul(flat, T.Tensor(rotation))
    shift = np.broadcast_to(translation[:, None, :], (n, F * J, 3))
    return T.reshape(T.add(back, T.Tensor(shift)), (n, F, J, 3))


# ------------------------------------------------------------ distances


def edm(frame: np.ndarray) -> np.ndarray:
    """J×J Euclidean distance matrix of one frame (or a stack, over the last two axes)."""
    frame = np.asarray(frame, dtype=np.float64)
    diff = frame[..., :, None, :] - frame[..., None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def pairwise_diff_t(x: T.Tensor) -> T.Tensor:
    """(..., J, 3) → (..., J, J, 3) with entry [i, j] = x_i − x_j."""
    J = x.shape[-2]
    lead = x.shape[:-2]
    full = lead + (J, J, 3)
    a = T.expand(T.reshape(x, lead + (J, 1, 3)), full)
    b = T.expand(T.reshape(x, lead + (1, J, 3)), full)
    return T.sub(a, b)


def edm_t(x: T.Tensor) -> T.Tensor:
    return T.l2norm(pairwise_diff_t(x), axis=-1)


def incidence(pairs, J: int) -> np.ndarray:
    """J×P matrix whose column p holds +1 at pairs[p][0] and −1 at pairs[p][1]."""
    pairs = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
    A = np.zeros((J, len(pairs)))
    cols = np.arange(len(pairs))
    A[pairs[:, 0], cols] += 1.0
    A[pairs[:, 1], cols] -= 1.0
    return A


def pair_distances_t(x: T.Tensor, pairs) -> T.Tensor:
    """(..., J, 3) → (..., P) distances ‖x_a − x_b‖ for each (a, b) in ``pairs``."""
    A = T.Tensor(incidence(pairs, x.shape[-2]))
    diffs = T.matmul(T.swap_last(x), A)
    return T.l2norm(diffs, axis=-2)


def edm_pairs_t(x: T.Tensor) -> T.Tensor:
    """Upper-triangle EDM entries (i < j, row-major), shape (..., J(J−1)/2)."""
    J = x.shape[-2]
    i, j = np.triu_indices(J, k=1)
    return pair_distances_t(x, np.stack([i, j], axis=1))


def bone_lengths(frame: np.ndarray, topology: SkeletonTopology) -> np.ndarray:
    frame = np.asarray(frame)
    a, b = np.array(topology.edges).T
    return np.linalg.norm(frame[..., a, :] - frame[..., b, :], axis=-1)


def bone_lengths_t(x: T.Tensor, topology: SkeletonTopology) -> T.Tensor:
    """(..., J, 3) → (..., B) differentiable bone lengths."""
    return pair_distances_t(x, topology.edges)


def mean_bone_lengths(coords: np.ndarray, mask: OcclusionMask | np.ndarray | None,
                      topology: SkeletonTopology, on_unseen: str = "raise"):
    """Per-bone mean length over frames where both endpoints are fully visible.

    Returns ``(lengths, seen)``; ``seen`` flags bones with at least one such
    frame. With ``on_unseen="raise"`` an unseen bone is an error; with
    ``"skip"`` its length is reported as 0 and ``seen`` is False.
    """
    coords = np.asarray(coords.coords if isinstance(coords, MotionSequence) else coords)
    F, J, _ = coords.shape
    if mask is None:
        vis = np.ones((F, J), bool)
    else:
        bits = mask.bits if isinstance(mask, OcclusionMask) else np.asarray(mask)
        vis = bits.astype(bool).all(axis=2)
    a, b = np.array(topology.edges).T
    both = vis[:, a] & vis[:, b]
    counts = both.sum(axis=0)
    seen = counts > 0
    if not seen.all() and on_unseen == "raise":
        k = int(np.argmin(seen))
        p, c = topology.edges[k]
        raise ContractError(
            f"bone {k} ({topology.joint_names[p]}-{topology.joint_names[c]}) is never fully visible"
        )
    lengths = bone_lengths(coords, topology)
    mean = np.where(seen, (lengths * both).sum(axis=0) / np.maximum(counts, 1), 0.0)
    return mean, seen


def limb_pair_distances(frame: np.ndarray, topology: SkeletonTopology) -> np.ndarray:
    frame = np.asarray(frame)
    a, b = np.array(topology.limb_pairs).T
    return np.linalg.norm(frame[..., a, :] - frame[..., b, :], axis=-1)


def limb_pair_distances_t(x: T.Tensor, topology: SkeletonTopology) -> T.Tensor:
    return pair_distances_t(x, topology.limb_pairs)


# ------------------------------------------------------------ temporal


def _coords(s) -> np.ndarray:
    return np.asarray(s.coords if isinstance(s, MotionSequence) else s, dtype=np.float64)


def temporal_difference(s) -> np.ndarray:
    """|S(t) − S(t−1)| element-wise, shape (F−1)×J×3."""
    c = _coords(s)
    return np.abs(c[1:] - c[:-1])


def edm_temporal_difference(s) -> np.ndarray:
    """|EDM(t) − EDM(t−1)| element-wise, shape (F−1)×J×J."""
    d = edm(_coords(s))
    return np.abs(d[1:] - d[:-1])


def temporal_difference_t(x: T.Tensor, axis: int = 1) -> T.Tensor:
    n = x.shape[axis]
    head = [slice(None)] * x.ndim
    tail = [slice(None)] * x.ndim
    head[axis] = slice(1, n)
    tail[axis] = slice(0, n - 1)
    return T.abs_(T.sub(T.getitem(x, tuple(head)), T.getitem(x, tuple(tail))))
