import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stmigan import tensor as T
from stmigan.data import MotionSequence, OcclusionMask, get_topology
from stmigan.errors import ContractError, DimensionError
from stmigan.geometry import (
    AlignmentTransform, align, bone_lengths, edm, edm_pairs_t, edm_t, edm_temporal_difference, facing_transforms,
    incidence, limb_pair_distances, mean_bone_lengths, rotation_z, temporal_difference, unalign, unalign_t,
)
from stmigan.synth import synth_dataset

H36M = get_topology("h36m17")
TINY = get_topology("tiny4")


def random_rigid(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q, rng.normal(size=3) * 1000


def edm_loop(frame):
    J = len(frame)
    out = np.zeros((J, J))
    for i in range(J):
        for j in range(J):
            out[i, j] = np.sqrt(sum((frame[i][c] - frame[j][c]) ** 2 for c in range(3)))
    return out


def test_edm_matches_loop(rng):
    frame = rng.normal(size=(5, 3)) * 100
    assert np.allclose(edm(frame), edm_loop(frame), rtol=1e-13)
    d = edm(frame)
    assert np.allclose(d, d.T) and np.all(np.diag(d) == 0)


def test_edm_tensor_forms_agree(rng):
    x = rng.normal(size=(2, 3, 5, 3))
    full = edm_t(T.Tensor(x)).value
    i, j = np.triu_indices(5, 1)
    assert np.allclose(edm_pairs_t(T.Tensor(x)).value, full[..., i, j])
    assert np.allclose(full, edm(x))


def test_incidence_columns():
    A = incidence([(0, 2), (1, 0)], 3)
    assert np.array_equal(A, [[1, -1], [0, 1], [-1, 0]])


@given(st.integers(0, 2**31))
def test_edm_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    frame = rng.normal(size=(17, 3)) * 500
    R, t = random_rigid(rng)
    moved = frame @ R.T + t
    base = edm(frame)
    assert np.max(np.abs(edm(moved) - base)) <= 1e-9 * np.max(base)


def test_align_puts_hip_at_origin_and_hips_on_x(rng):
    s = synth_dataset(3, 20, seed=4).sequences[1]
    a, tf = align(s, H36M)
    assert np.allclose(a.coords[0, H36M.hip], 0, atol=1e-9)
    d = a.coords[0, H36M.right_hip] - a.coords[0, H36M.left_hip]
    assert d[0] > 0 and abs(d[1]) < 1e-9
    # rotation only about Z, so heights are untouched relative to the hip
    assert np.allclose(a.coords[..., 2], s.coords[..., 2] - s.coords[0, H36M.hip, 2])
    assert np.allclose(unalign(a, tf).coords, s.coords, atol=1e-9)


def test_align_degenerate_facing_warns():
    c = np.zeros((3, 4, 3))
    c[:, 3, 2] = 500.0
    c[:, 1, 2] = 10.0
    c[:, 2, 2] = -10.0
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        a, tf = align(MotionSequence(c, topology="tiny4"), TINY)
    assert tf.degenerate and any("degenerate" in str(x.message) for x in w)
    assert np.allclose(tf.rotation, np.eye(3))


def test_align_rejects_wrong_topology(rng):
    with pytest.raises(DimensionError):
        align(MotionSequence(rng.normal(size=(3, 5, 3))), TINY)


def test_align_reference_frame(rng):
    s = synth_dataset(1, 10, seed=2).sequences[0]
    a, tf = align(s, H36M, ref_frame=4)
    assert np.allclose(a.coords[4, H36M.hip], 0, atol=1e-9)


def test_unalign_tensor_matches_numpy(rng):
    x = rng.normal(size=(2, 3, 4, 3))
    t, R, _ = facing_transforms(rng.normal(size=(2, 3, 4, 3)), TINY)
    ref = np.stack([AlignmentTransform(t[i], R[i]).invert(x[i]) for i in range(2)])
    assert np.allclose(unalign_t(T.Tensor(x), t, R).value, ref)


def test_transform_identity_flag():
    assert AlignmentTransform(np.zeros(3), np.eye(3)).is_identity
    assert not AlignmentTransform(np.zeros(3), rotation_z(0.1)).is_identity


def test_bone_lengths_and_limbs(rng):
    frame = rng.normal(size=(17, 3))
    bl = bone_lengths(frame, H36M)
    for k, (a, b) in enumerate(H36M.edges):
        assert bl[k] == pytest.approx(np.linalg.norm(frame[a] - frame[b]))
    lp = limb_pair_distances(frame, H36M)
    assert lp.shape == (10,)


def test_mean_bone_lengths_visible_only(rng):
    coords = rng.normal(size=(4, 4, 3)) * 100
    bits = np.ones((4, 4, 3), np.uint8)
    bits[0, 3, 1] = 0  # head partly hidden at frame 0
    mean, seen = mean_bone_lengths(coords, OcclusionMask(bits), TINY)
    lengths = bone_lengths(coords, TINY)
    assert seen.all()
    assert mean[2] == pytest.approx(lengths[1:, 2].mean())
    assert mean[0] == pytest.approx(lengths[:, 0].mean())


def test_mean_bone_lengths_unseen_bone():
    coords = np.arange(36.0).reshape(3, 4, 3)
    bits = np.ones((3, 4, 3), np.uint8)
    bits[:, 3] = 0
    with pytest.raises(ContractError, match="hip-head"):
        mean_bone_lengths(coords, bits, TINY)
    mean, seen = mean_bone_lengths(coords, bits, TINY, on_unseen="skip")
    assert list(seen) == [True, True, False] and mean[2] == 0.0


def test_temporal_differences(rng):
    c = rng.normal(size=(5, 4, 3))
    assert np.array_equal(temporal_difference(c), np.abs(c[1:] - c[:-1]))
    d = edm_temporal_difference(c)
    assert d.shape == (4, 4, 4)
    assert np.allclose(d[1], np.abs(edm(c[2]) - edm(c[1])))
