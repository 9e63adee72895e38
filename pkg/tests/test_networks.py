import numpy as np
import pytest

from oracles import TINY, grad_check
from stmigan import tensor as T
from stmigan.data import MotionSequence, OcclusionMask
from stmigan.errors import ContractError
from stmigan.masks import mask_future
from stmigan.networks import (
    BRANCHES, DiscriminatorConfig, FrameCodecConfig, GeneratorConfig, STMIModel, disc_base, disc_edm, disc_motion,
    discriminate, frame_decode, frame_encode, generator_forward, reference_frames, residual_features, stmi_forward,
)


def tiny_model(seed=0, hidden=4):
    return STMIModel(
        TINY,
        FrameCodecConfig(hidden=hidden, n_blocks=1),
        GeneratorConfig(n_ublocks=1, depth=2, channels=3, top_channels=2),
        DiscriminatorConfig(n_res_blocks=1, channels=3, feature_width=2, branch_features=2),
        seed=seed,
    )


def motion(rng, n=2, F=8):
    return rng.normal(size=(n, F, 4, 3)) * 300


def test_codec_shapes_and_time_invariance(rng):
    model = tiny_model()
    x = motion(rng, 1, 6)[0]
    emb = frame_encode(x, model)
    assert emb.shape == (6, 4, 1)
    perm = rng.permutation(6)
    assert np.allclose(frame_encode(x[perm], model).value, emb.value[perm])
    dup = np.stack([x[2]] * 3)
    e = frame_encode(dup, model).value
    assert np.array_equal(e[0], e[1]) and np.array_equal(e[1], e[2])
    assert frame_decode(emb, model).shape == (6, 4, 3)


def test_generator_shape_and_padding(rng):
    model = tiny_model()
    for F in (5, 8, 13):
        se = rng.normal(size=(F, 4, 1))
        assert generator_forward(se, model, 0).shape == (F, 4, 1)


def test_zero_noise_scale_makes_output_seed_independent(rng):
    model = tiny_model()
    s, m = motion(rng), np.ones((2, 8, 4, 3))
    with T.no_grad():
        a = model.forward(s, m, 1).value
        b = model.forward(s, m, 2).value
    assert np.array_equal(a, b)
    for name, p in model.gen_params().items():
        if ".noise" in name:
            p.value[...] = 0.5
    with T.no_grad():
        c = model.forward(s, m, 1).value
        d = model.forward(s, m, 2).value
        e = model.forward(s, m, 1).value
    assert not np.allclose(c, d)
    assert np.array_equal(c, e)


def test_model_initialisation_is_deterministic(rng):
    a, b = tiny_model(3), tiny_model(3)
    for k in a.store:
        assert np.array_equal(a.store[k].value, b.store[k].value)
    assert any(not np.array_equal(a.store[k].value, tiny_model(4).store[k].value) for k in a.store)
    assert set(a.gen_params()) | set(a.disc_params()) == set(a.store)
    assert all(k.startswith("gen.") for k in a.gen_params())


def test_discriminator_outputs_probabilities(rng):
    model = tiny_model()
    x = motion(rng, 3)
    for branches in [BRANCHES, ("base",), ("base", "edm"), ("motion",)]:
        p = discriminate(x, model, branches).value
        assert p.shape == (3,) and np.all((p > 0) & (p < 1))
    with pytest.raises(ContractError):
        discriminate(x, model, ())
    with pytest.raises(ContractError):
        discriminate(x, model, ("pose",))


def test_branch_features_shapes(rng):
    model = tiny_model()
    x = motion(rng, 2)
    for fn in (disc_base, disc_edm, disc_motion):
        assert fn(x, model).shape == (2, 2)
    assert disc_base(x[0], model).shape == (1, 2)
    img = T.Tensor(rng.normal(size=(2, 8, 4, 1)))
    assert residual_features(img, model.disc.cnn["edm"]).shape == (2, 2)


def test_edm_branch_is_rigid_invariant(rng):
    model = tiny_model()
    x = motion(rng, 1)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    moved = x @ q.T + rng.normal(size=3) * 500
    assert np.allclose(disc_edm(x, model).value, disc_edm(moved, model).value, atol=1e-9)


def test_disabled_branch_does_not_affect_score(rng):
    model = tiny_model()
    x = motion(rng)
    before = discriminate(x, model, ("base", "edm")).value
    for name, p in model.disc_params().items():
        if name.startswith("disc.motion"):
            p.value[...] = rng.normal(size=p.shape)
    assert np.array_equal(discriminate(x, model, ("base", "edm")).value, before)


@pytest.mark.parametrize("branch", BRANCHES)
def test_discriminator_input_gradient(branch):
    r = np.random.default_rng(5)
    model = tiny_model(1)
    x = motion(r, 1)
    assert grad_check(lambda t: model.disc(t, (branch,)), [x], r) < 1e-4


def test_generator_parameter_gradient_reaches_every_block(rng):
    model = tiny_model()
    s, m = motion(rng), np.ones((2, 8, 4, 3))
    out = model.forward(s, m, 0)
    params = model.gen_params()
    grads = T.grad(T.sum_(T.square(out)), list(params.values()))
    nonzero = {k for k, g in zip(params, grads) if np.any(g.value != 0)}
    # noise scales start at zero but still receive gradient through the injected noise
    assert any(".noise" in k for k in nonzero)
    assert any(k.startswith("gen.enc") for k in nonzero) and any(k.startswith("gen.dec") for k in nonzero)


def test_forward_is_equivariant_to_global_placement(rng):
    model = tiny_model()
    s = motion(rng)
    m = np.ones_like(s)
    c, sn = np.cos(0.7), np.sin(0.7)
    Rz = np.array([[c, -sn, 0], [sn, c, 0], [0, 0, 1]])
    shift = np.array([300.0, -900.0, 0.0])
    with T.no_grad():
        a = model.forward(s, m, 0).value
        b = model.forward(s @ Rz.T + shift, m, 0).value
    assert np.allclose(b, a @ Rz.T + shift, atol=1e-7)


def test_reference_frame_choice():
    bits = np.ones((1, 4, 4, 3))
    bits[0, :2, TINY.left_hip] = 0
    assert reference_frames(bits, TINY)[0] == 2
    bits[0, :, TINY.hip] = 0
    assert reference_frames(bits, TINY)[0] == 0


def test_stmi_forward_on_sequence(rng):
    model = tiny_model()
    s = MotionSequence(motion(rng, 1, 9)[0], 12.5, "tiny4")
    m = mask_future(9, 4, 5)
    out = stmi_forward(s, m, model, 0)
    assert out.coords.shape == s.coords.shape and out.fps == s.fps
    with T.no_grad():
        ref = model.forward(s.coords[None], m.bits[None], 0).value[0]
    assert np.array_equal(out.coords, ref)
    # observed coordinates that are masked out cannot influence the output
    hidden = s.coords.copy()
    hidden[5:] += 1000.0
    assert np.allclose(stmi_forward(s.replace(hidden), m, model, 0).coords, out.coords)
    assert isinstance(m, OcclusionMask)
