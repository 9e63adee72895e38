import numpy as np
import pytest
from hypothesis import given, strategies as st

from stmigan.data import get_topology
from stmigan.errors import ContractError
from stmigan.masks import (
    PATTERNS, is_future_mask, make_mask, mask_future, mask_missing_frames, mask_noisy_transmission,
    mask_random_joints, mask_random_limbs,
)

H36M = get_topology("h36m17")


def test_future_mask():
    m = mask_future(10, 4, 6)
    assert m.bits[:6].all() and not m.bits[6:].any()
    assert is_future_mask(m)
    assert is_future_mask(mask_future(10, 4, 10))
    with pytest.raises(ContractError):
        mask_future(10, 4, 11)


def test_non_future_masks_detected():
    bits = np.ones((6, 4, 3), np.uint8)
    bits[2] = 0
    from stmigan.data import OcclusionMask

    assert not is_future_mask(OcclusionMask(bits))
    bits = np.ones((6, 4, 3), np.uint8)
    bits[4:, 0, 0] = 0
    assert not is_future_mask(OcclusionMask(bits))


def test_missing_frames_keeps_endpoints():
    for seed in range(20):
        m = mask_missing_frames(25, 17, 0.8, seed)
        rows = m.bits.reshape(25, -1)
        assert rows[0].all() and rows[-1].all()
        assert int((~rows.any(axis=1)).sum()) == 20
        assert np.all(rows.all(axis=1) | ~rows.any(axis=1))
    assert (~mask_missing_frames(5, 2, 1.0, 0).bits.reshape(5, -1).any(axis=1)).sum() == 3


def test_joint_mask_whole_joints_and_rate():
    m = mask_random_joints(400, 17, 0.8, 3)
    assert np.all((m.bits.sum(axis=2) == 0) | (m.bits.sum(axis=2) == 3))
    assert abs(1 - m.visible_fraction() - 0.8) < 0.02


def test_transmission_mask_rate():
    m = mask_noisy_transmission(400, 17, 0.8, 3)
    assert abs(1 - m.visible_fraction() - 0.8) < 0.02


def test_limb_mask_hides_whole_chains_at_expected_rate():
    m = mask_random_limbs(2000, 17, H36M, 0.5, 1)
    hidden = ~m.joint_visible()
    chains = [list(c) for c in H36M.limb_chains]
    for f in range(50):
        for c in chains:
            assert hidden[f, c].all() or not hidden[f, c].any()
    assert not hidden[:, H36M.hip].any()
    assert abs(hidden.sum(axis=1).mean() - 0.5 * 17) < 0.15


def test_limb_mask_caps_at_available_chains():
    m = mask_random_limbs(50, 17, H36M, 1.0, 0)
    hidden = ~m.joint_visible()
    assert np.all(hidden.sum(axis=1) == sum(len(c) for c in H36M.limb_chains))


@pytest.mark.parametrize("pattern", ["joints", "limbs", "frames", "transmission", "future"])
def test_patterns_are_seed_deterministic(pattern):
    a = make_mask(pattern, 20, 17, 0.8, 7, H36M)
    b = make_mask(pattern, 20, 17, 0.8, 7, H36M)
    assert np.array_equal(a.bits, b.bits)
    assert a.shape == (20, 17, 3)


def test_make_mask_errors():
    with pytest.raises(ContractError):
        make_mask("nope", 5, 4, 0.5, 0)
    with pytest.raises(ContractError):
        make_mask("limbs", 5, 17, 0.5, 0)
    with pytest.raises(ContractError):
        make_mask("joints", 5, 4, 1.5, 0)
    assert set(PATTERNS) == {"joints", "limbs", "frames", "transmission", "future"}


@given(st.integers(2, 30), st.floats(0, 1), st.integers(0, 2**31))
def test_rate_zero_and_bounds(F, rate, seed):
    for pattern in ("joints", "frames", "transmission"):
        m = make_mask(pattern, F, 4, rate, seed)
        assert m.shape == (F, 4, 3)
        if rate == 0:
            assert m.bits.all()
