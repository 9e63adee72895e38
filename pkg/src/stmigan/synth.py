"""Procedural anthropomorphic motion, a desk-scale stand-in for motion capture.

Joint positions come from forward kinematics with pure rotations, so every
bone keeps its rest length in every frame. Each sequence draws its own gait
frequency (0.5–2 Hz), phase, amplitudes, body scale, start position and
heading; the archetype decides the root trajectory.
"""
from __future__ import annotations

import numpy as np

from .data import DEFAULT_TOPOLOGY, MotionDataset, MotionSequence, SkeletonTopology
from .errors import ContractError

ARCHETYPES = ("walk", "turn", "stop_and_go", "stand")

# parent-relative rest offsets in the body frame (x right, y forward, z up), mm
_H36M_REST = {
    1: (120.0, 0.0, 0.0), 2: (0.0, 0.0, -420.0), 3: (0.0, 0.0, -410.0),
    4: (-120.0, 0.0, 0.0), 5: (0.0, 0.0, -420.0), 6: (0.0, 0.0, -410.0),
    7: (0.0, 0.0, 230.0), 8: (0.0, 0.0, 240.0), 9: (0.0, 10.0, 110.0), 10: (0.0, 25.0, 115.0),
    11: (-170.0, 0.0, 0.0), 12: (0.0, 0.0, -280.0), 13: (0.0, 0.0, -250.0),
    14: (170.0, 0.0, 0.0), 15: (0.0, 0.0, -280.0), 16: (0.0, 0.0, -250.0),
}
_TINY4_REST = {1: (-120.0, 0.0, 0.0), 2: (120.0, 0.0, 0.0), 3: (0.0, 20.0, 700.0)}
_HIP_HEIGHT = 930.0


def _rot_x(a: np.ndarray) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0] = 1.0
    R[..., 1, 1], R[..., 1, 2] = c, -s
    R[..., 2, 1], R[..., 2, 2] = s, c
    return R


def _rot_z(a: np.ndarray) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0], R[..., 0, 1] = c, -s
    R[..., 1, 0], R[..., 1, 1] = s, c
    R[..., 2, 2] = 1.0
    return R


def _h36m_local_rotations(t, f, phase, amp, gain, rng):
    """Per-joint rotation (F, 3, 3) applied to the bone leading into that joint."""
    w = 2 * np.pi * f * t + phase
    leg = amp["leg"] * gain
    knee = amp["knee"] * gain
    arm = amp["arm"] * gain
    elbow0 = amp["elbow"]
    hip_r = leg * np.sin(w)
    hip_l = leg * np.sin(w + np.pi)
    knee_r = knee * 0.5 * (1 - np.cos(w + 0.6))
    knee_l = knee * 0.5 * (1 - np.cos(w + np.pi + 0.6))
    sh_r = -arm * np.sin(w)
    sh_l = -arm * np.sin(w + np.pi)
    nod = amp["head"] * np.sin(2 * w + rng.uniform(0, 2 * np.pi))
    lean = np.full_like(t, amp["lean"])
    ident = np.broadcast_to(np.eye(3), t.shape + (3, 3))
    return {
        2: _rot_x(hip_r), 3: _rot_x(hip_r - knee_r),
        5: _rot_x(hip_l), 6: _rot_x(hip_l - knee_l),
        7: _rot_x(lean), 8: _rot_x(lean), 9: _rot_x(lean), 10: _rot_x(lean + nod),
        12: _rot_x(sh_l), 13: _rot_x(sh_l + elbow0 + 0.3 * arm * gain * (1 + np.sin(w + np.pi))),
        15: _rot_x(sh_r), 16: _rot_x(sh_r + elbow0 + 0.3 * arm * gain * (1 + np.sin(w))),
        1: ident, 4: ident, 11: ident, 14: ident,
    }


def _rest_offsets(topology: SkeletonTopology) -> dict[int, tuple]:
    if topology.name == "h36m17":
        return _H36M_REST
    if topology.name == "tiny4":
        return _TINY4_REST
    raise ContractError(f"no rest pose for topology {topology.name}")


def synth_sequence(F: int, archetype: str, rng: np.random.Generator, fps: float = 12.5,
                   topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> MotionSequence:
    if archetype not in ARCHETYPES:
        raise ContractError(f"unknown archetype {archetype!r}; expected one of {ARCHETYPES}")
    rest = _rest_offsets(topology)
    scale = rng.uniform(0.9, 1.1)
    f = rng.uniform(0.5, 2.0)
    phase = rng.uniform(0, 2 * np.pi)
    amp = {
        "leg": rng.uniform(0.25, 0.45), "knee": rng.uniform(0.4, 0.9), "arm": rng.uniform(0.15, 0.4),
        "elbow": rng.uniform(0.1, 0.5), "head": rng.uniform(0.0, 0.08), "lean": rng.uniform(-0.05, 0.15),
    }
    heading0 = rng.uniform(0, 2 * np.pi)
    start = np.array([rng.uniform(-2000, 2000), rng.uniform(-2000, 2000), 0.0])
    t = np.arange(F) / fps
    dt = 1.0 / fps

    if archetype == "stand":
        gain = np.zeros(F)
        speed = np.zeros(F)
        heading = np.full(F, heading0)
    else:
        stride = 2.0 * 840.0 * scale * np.sin(amp["leg"])
        v = stride * f
        if archetype == "stop_and_go":
            f_sg = rng.uniform(0.2, 0.5)
            gain = 0.5 * (1 + np.cos(2 * np.pi * f_sg * t + rng.uniform(0, 2 * np.pi)))
        else:
            gain = np.ones(F)
        speed = v * gain
        omega = rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 0.6) if archetype == "turn" else 0.0
        heading = heading0 + omega * t

    # body faces +y at heading 0; the walking direction rotates with heading
    fwd = np.stack([-np.sin(heading), np.cos(heading), np.zeros(F)], axis=1)
    steps = np.cumsum(np.vstack([np.zeros((1, 3)), fwd[:-1] * (speed[1:, None] * dt)]), axis=0)
    bob = 15.0 * gain * np.sin(4 * np.pi * f * t + 2 * phase)
    root = start + steps
    root[:, 2] = _HIP_HEIGHT * scale + bob

    R_body = _rot_z(heading)
    J = topology.n_joints
    coords = np.zeros((F, J, 3))
    coords[:, topology.hip] = root
    if topology.name == "h36m17":
        local = _h36m_local_rotations(t, f, phase, amp, gain, rng)
    else:
        nod = amp["head"] * np.sin(2 * np.pi * f * t + phase) * gain
        local = {3: _rot_x(nod)}
    # accumulated body-frame rotation of each joint's incoming bone chain
    chain_rot = {topology.hip: np.broadcast_to(np.eye(3), (F, 3, 3))}
    order = sorted(topology.parents, key=lambda j: _depth(topology, j))
    for j in order:
        if j == topology.hip:
            continue
        p = topology.parents[j]
        if j not in local:
            rot = chain_rot[p]
        elif _inherits(j):
            rot = np.matmul(chain_rot[p], local[j])
        else:
            rot = local[j]
        chain_rot[j] = rot
        off = np.asarray(rest[j]) * scale
        body = np.einsum("fab,b->fa", rot, off)
        coords[:, j] = coords[:, p] + np.einsum("fab,fb->fa", R_body, body)
    return MotionSequence(coords, fps, topology.name)


def _inherits(j: int) -> bool:
    # spine joints compose their lean; limb joints carry absolute angles
    return j in (8, 9, 10)


def _depth(topology: SkeletonTopology, j: int) -> int:
    d = 0
    while topology.parents[j] != -1:
        j = topology.parents[j]
        d += 1
    return d


def synth_dataset(n_sequences: int, F: int = 50, topology: SkeletonTopology = DEFAULT_TOPOLOGY,
                  archetypes=("walk", "turn", "stop_and_go"), seed: int = 0, fps: float = 12.5,
                  val_every: int = 5) -> MotionDataset:
    """``n_sequences`` sequences cycling through ``archetypes``; every ``val_every``-th is tagged val."""
    if n_sequences < 1:
        raise ContractError("need at least one sequence")
    archetypes = tuple(archetypes)
    rng = np.random.default_rng(seed)
    seqs, splits = [], []
    for i in range(n_sequences):
        arch = archetypes[i % len(archetypes)]
        seqs.append(synth_sequence(F, arch, rng, fps, topology))
        splits.append("val" if val_every and (i % val_every == val_every - 1) else "train")
    return MotionDataset(topology, seqs, splits)
