import numpy as np
import pytest

from stmigan.data import get_topology
from stmigan.errors import ContractError
from stmigan.geometry import bone_lengths
from stmigan.spectral import psent
from stmigan.synth import ARCHETYPES, synth_dataset, synth_sequence

H36M = get_topology("h36m17")


@pytest.mark.parametrize("archetype", ARCHETYPES)
def test_bone_lengths_are_rigid(archetype):
    s = synth_sequence(60, archetype, np.random.default_rng(1))
    lengths = bone_lengths(s.coords, H36M)
    assert np.ptp(lengths, axis=0).max() < 1e-9
    assert lengths.min() > 10


def test_tiny_topology_is_supported():
    s = synth_sequence(20, "walk", np.random.default_rng(0), topology=get_topology("tiny4"))
    assert s.coords.shape == (20, 4, 3)
    assert np.ptp(bone_lengths(s.coords, get_topology("tiny4")), axis=0).max() < 1e-9


def test_pose_is_upright():
    s = synth_sequence(30, "walk", np.random.default_rng(2))
    c = s.coords
    assert np.all(c[:, H36M.joint_names.index("head"), 2] > c[:, H36M.hip, 2])
    assert np.all(c[:, H36M.hip, 2] > 600)


def test_walk_moves_and_stand_stays():
    walk = synth_sequence(50, "walk", np.random.default_rng(3))
    stand = synth_sequence(50, "stand", np.random.default_rng(3))
    disp = lambda s: np.linalg.norm(s.coords[-1, H36M.hip, :2] - s.coords[0, H36M.hip, :2])
    assert disp(walk) > 1000
    assert disp(stand) < 200
    assert psent(walk.coords) > 0


def test_dataset_is_seeded_and_split():
    a = synth_dataset(10, 20, seed=5)
    b = synth_dataset(10, 20, seed=5)
    assert np.array_equal(a.stack(), b.stack())
    assert not np.array_equal(a.stack(), synth_dataset(10, 20, seed=6).stack())
    assert a.splits.count("val") == 2 and len(a.subset("train")) == 8
    assert a.fps == 12.5


def test_unknown_archetype():
    with pytest.raises(ContractError):
        synth_sequence(10, "dance", np.random.default_rng(0))
