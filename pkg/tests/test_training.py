import json
from dataclasses import replace

import numpy as np
import pytest

from stmigan.data import get_topology
from stmigan.errors import ContractError, FormatError, NumericError
from stmigan.synth import synth_dataset
from stmigan.training import (
    VARIANTS, BatchSampler, ModelConfig, TrainLog, ablation_csv, ablation_grid, config_from_text, config_to_text,
    eval_set, extend_for_prediction, generate, load_checkpoint, load_config, noise_sensitivity, occlusion_experiment,
    predict_eval, render_table, save_checkpoint, save_config, train,
)

TINY = get_topology("tiny4")


def tiny_cfg(**kw):
    base = dict(
        variant="STMI-GAN", topology="tiny4", hidden=4, codec_blocks=1, n_ublocks=1, depth=2, gen_channels=3,
        gen_top_channels=2, disc_res_blocks=1, disc_channels=3, disc_feature_width=2, disc_branch_features=2,
        batch_size=2, steps=3, crop_frames=16, eval_every=2,
    )
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def data():
    return synth_dataset(10, 20, topology=TINY, seed=1)


def test_config_text_roundtrip(tmp_path):
    cfg = tiny_cfg(lr=3e-4, variant="PlusEDM")
    assert config_from_text(config_to_text(cfg)) == cfg
    save_config(cfg, tmp_path / "c.txt")
    assert load_config(tmp_path / "c.txt") == cfg
    partial = config_from_text("# comment\nsteps = 7\n\nvariant=NoGAN  # trailing\n")
    assert partial.steps == 7 and partial.variant == "NoGAN" and partial.hidden == ModelConfig().hidden


@pytest.mark.parametrize("text", ["steps", "colour=red", "steps=many", "variant=Huge"])
def test_config_errors(text):
    with pytest.raises((FormatError, ContractError)):
        config_from_text(text)


def test_variant_weights():
    assert ModelConfig(variant="NoGAN").loss_weights().gen == 0.0
    assert ModelConfig(variant="NoGAN").loss_weights().disc == 0.0
    assert ModelConfig().loss_weights().gen == 1.0
    assert VARIANTS["PlusMotion"] == ("base", "motion")
    with pytest.raises(ContractError):
        ModelConfig(batch_size=0)


def test_sampler_crops_and_masks(data):
    cfg = tiny_cfg(batch_size=5)
    s, m = BatchSampler(data, cfg, np.random.default_rng(0))()
    assert s.shape == (5, 16, 4, 3) and m.shape == s.shape
    assert np.all(m[:, :8] == 1) and np.all(m[:, 8:] == 0)
    with pytest.raises(ContractError):
        BatchSampler(data, tiny_cfg(crop_frames=40), np.random.default_rng(0))


def test_eval_set_uses_validation_split(data):
    assert eval_set(data, 16).shape == (2, 16, 4, 3)


def test_nogan_never_updates_discriminator(data):
    cfg = tiny_cfg(variant="NoGAN")
    model = cfg.build_model()
    before = {k: p.value.copy() for k, p in model.disc_params().items()}
    gen_before = {k: p.value.copy() for k, p in model.gen_params().items()}
    model, log = train(cfg, data, model)
    for k, p in model.disc_params().items():
        assert np.array_equal(p.value, before[k])
    assert any(not np.array_equal(p.value, gen_before[k]) for k, p in model.gen_params().items())
    assert np.all(log.column("gen") == 0) and np.all(log.column("disc") == 0)


def test_gan_updates_both_players(data):
    cfg = tiny_cfg()
    model = cfg.build_model()
    before = {k: p.value.copy() for k, p in model.store.items()}
    model, log = train(cfg, data, model)
    assert any(not np.array_equal(p.value, before[k]) for k, p in model.disc_params().items())
    assert np.all(log.column("gen") > 0) and np.all(log.column("r1") >= 0)
    assert [s.step for s in log.snapshots] == [0, 2, 3]
    assert [r[0] for r in log.rows] == [1, 2, 3]


def test_training_is_deterministic(data, tmp_path):
    cfg = tiny_cfg()
    a, la = train(cfg, data)
    b, lb = train(cfg, data)
    for k, p in a.store.items():
        assert np.array_equal(p.value, b.store[k].value)
    assert la.to_csv() == lb.to_csv() and la.snapshots_csv() == lb.snapshots_csv()
    c, lc = train(replace(cfg, seed=1), data)
    assert lc.to_csv() != la.to_csv()
    la.write(tmp_path)
    assert {p.name for p in tmp_path.iterdir()} == {"train_log.csv", "eval_log.csv", "timing.txt"}


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises_with_step(data):
    cfg = tiny_cfg()
    model = cfg.build_model()
    next(p for k, p in model.gen_params().items() if k.endswith("dec.out.b")).value[...] = np.inf
    with pytest.raises(NumericError) as info:
        train(cfg, data, model)
    assert info.value.exit_code != 0


def test_log_rejects_bad_rows():
    from stmigan.losses import LossReport

    log = TrainLog()
    log.append(1, LossReport())
    with pytest.raises(ContractError):
        log.append(1, LossReport())
    with pytest.raises(NumericError):
        log.append(2, LossReport(rec=float("nan")))


def test_topology_mismatch(data):
    with pytest.raises(ContractError):
        train(tiny_cfg(topology="h36m17"), data)


def test_checkpoint_roundtrip(data, tmp_path):
    cfg = tiny_cfg(steps=1)
    model, _ = train(cfg, data)
    save_checkpoint(model, cfg, tmp_path / "ck")
    back, cfg2 = load_checkpoint(tmp_path / "ck")
    assert cfg2 == cfg
    for k, p in model.store.items():
        assert np.array_equal(p.value, back.store[k].value)
    side = json.loads((tmp_path / "ck" / "config.json").read_text())
    assert side["n_parameters"] == sum(p.size for _, p in model.store.items())
    gt, a = predict_eval(model, data, cfg)
    assert np.array_equal(a, predict_eval(back, data, cfg)[1])
    (tmp_path / "ck" / "config.json").write_text("{")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "ck")


def test_checkpoint_architecture_mismatch(data, tmp_path):
    cfg = tiny_cfg(steps=0)
    model = cfg.build_model()
    save_checkpoint(model, cfg, tmp_path / "ck")
    side = json.loads((tmp_path / "ck" / "config.json").read_text())
    side["config"]["hidden"] = 8
    (tmp_path / "ck" / "config.json").write_text(json.dumps(side))
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "ck")


def test_ablation_grid_and_tables(data):
    table = ablation_grid(data, tiny_cfg(steps=1, eval_every=0), variants=("NoGAN", "BaseDisc"))
    assert list(table) == ["NoGAN", "BaseDisc"]
    csv = ablation_csv(table)
    assert csv.splitlines()[0].startswith("variant,") and len(csv.splitlines()) == 1 + 2 * len(table["NoGAN"])
    text = render_table(["a", "b"], [["x", 1.0], ["yy", 2.5]])
    assert text.splitlines()[2].split() == ["yy", "2.5000"]


def test_occlusion_experiment_small(data):
    cfg = tiny_cfg(steps=1, eval_every=0)
    model = cfg.build_model()
    table = occlusion_experiment(data, cfg, patterns=("joints", "frames"), rate=0.5,
                                 models={"stmi": model}, methods=("linint", "stmi", "nogan"))
    assert set(table) == {"joints", "frames"}
    assert all(v >= 0 for row in table.values() for v in row.values())
    with pytest.raises(ContractError):
        occlusion_experiment(data, cfg, patterns=("joints",), methods=("magic",))


def test_noise_sensitivity_shape(data):
    cfg = tiny_cfg()
    model = cfg.build_model()
    for k, p in model.gen_params().items():
        if ".noise" in k:
            p.value[...] = 1.0
    offsets, diff = noise_sensitivity(model, data, n_seeds=3, F=16)
    assert list(offsets) == list(range(1, 9)) and diff.shape == (8,)
    assert np.all(diff > 0)
    with pytest.raises(ContractError):
        noise_sensitivity(model, data, n_seeds=1, F=16)


def test_generate_extends_sequence(data):
    cfg = tiny_cfg()
    model = cfg.build_model()
    seq, mask = extend_for_prediction(data.sequences[0].crop(0, 6), 10)
    assert seq.n_frames == 16 and mask.bits[:6].all() and not mask.bits[6:].any()
    out = generate(model, seq, mask, 0)
    assert out.coords.shape == (16, 4, 3)
    with pytest.raises(ContractError):
        extend_for_prediction(seq, -1)
