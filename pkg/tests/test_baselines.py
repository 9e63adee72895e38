import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import interp_loop, l2_loop
from stmigan.baselines import linear_interpolate, zero_velocity
from stmigan.data import MotionSequence, OcclusionMask
from stmigan.errors import ContractError, DimensionError
from stmigan.masks import make_mask, mask_future


def seq(coords):
    return MotionSequence(coords, 12.5, "tiny4")


def test_zero_velocity_holds_last_observed_frame(rng):
    c = rng.normal(size=(10, 4, 3))
    out = zero_velocity(seq(c), mask_future(10, 4, 6)).coords
    assert np.array_equal(out[:6], c[:6])
    assert np.array_equal(out[6:], np.broadcast_to(c[5], (4, 4, 3)))


def test_zero_velocity_exact_on_constant_motion(rng):
    c = np.broadcast_to(rng.normal(size=(4, 3)), (12, 4, 3)).copy()
    out = zero_velocity(seq(c), mask_future(12, 4, 3))
    assert np.array_equal(out.coords, c)


def test_zero_velocity_linear_motion_closed_form():
    v = np.array([3.0, 4.0, 0.0])  # 5 mm per frame
    c = np.zeros((10, 4, 3)) + np.arange(10)[:, None, None] * v
    k = 4
    out = zero_velocity(seq(c), mask_future(10, 4, k)).coords
    # the j-th predicted frame is j steps of 5 mm behind the truth
    assert l2_loop(c[None, k:], out[None, k:]) == pytest.approx(5.0 * np.mean(np.arange(1, 10 - k + 1)))


def test_zero_velocity_errors(rng):
    c = rng.normal(size=(6, 4, 3))
    bits = np.ones((6, 4, 3))
    bits[2] = 0
    with pytest.raises(ContractError):
        zero_velocity(seq(c), OcclusionMask(bits))
    with pytest.raises(ContractError):
        zero_velocity(seq(c), mask_future(6, 4, 0))
    with pytest.raises(DimensionError):
        zero_velocity(seq(c), mask_future(5, 4, 2))


@given(st.integers(0, 2**31), st.floats(-5, 5), st.floats(-100, 100))
def test_linear_interpolation_recovers_affine_motion(seed, slope, icpt):
    rng = np.random.default_rng(seed)
    F = 12
    t = np.arange(F, dtype=float)
    w = rng.normal(size=(4, 3))
    c = slope * t[:, None, None] * w + icpt
    bits = make_mask("frames", F, 4, 0.8, seed).bits
    out = linear_interpolate(seq(c), OcclusionMask(bits)).coords
    # first and last frames are always kept, so affine motion is recovered exactly
    assert np.allclose(out, c, atol=1e-9)


def test_linear_interpolation_matches_loop(rng):
    c = rng.normal(size=(15, 4, 3)) * 100
    bits = make_mask("transmission", 15, 4, 0.6, 3).bits.copy()
    bits[0] = 1
    out = linear_interpolate(seq(c), OcclusionMask(bits)).coords
    vis = bits.reshape(15, -1).astype(bool)
    ref = np.stack([interp_loop(c.reshape(15, -1)[:, k], vis[:, k]) for k in range(12)], axis=1)
    assert np.allclose(out.reshape(15, -1), ref, atol=1e-12)
    assert np.array_equal(out[bits == 1], c[bits == 1])


def test_linear_interpolation_end_holds():
    c = np.arange(5.0)[:, None, None] * np.ones((5, 4, 3))
    bits = np.ones((5, 4, 3))
    bits[:2, 0, 0] = 0
    bits[4, 1, 2] = 0
    out = linear_interpolate(seq(c), OcclusionMask(bits)).coords
    assert list(out[:2, 0, 0]) == [2.0, 2.0]
    assert out[4, 1, 2] == 3.0


def test_linear_interpolation_never_visible_channel(rng):
    bits = np.ones((5, 4, 3))
    bits[:, 2, 1] = 0
    with pytest.raises(ContractError, match="joint 2, axis 1"):
        linear_interpolate(seq(rng.normal(size=(5, 4, 3))), OcclusionMask(bits))
