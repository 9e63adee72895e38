"""GAN training loop, ablation grid and the experiment drivers.

One iteration = one discriminator Adam step followed by one generator Adam
step, both on the same batch. All randomness (batch crops, masks, noise maps,
initialisation) flows from ``ModelConfig.seed``, so equal configs and data
give bit-identical parameters, logs and metric tables.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .baselines import linear_interpolate
from .data import MotionDataset, MotionSequence, OcclusionMask, get_topology
from .errors import ContractError, FormatError, NumericError
from .losses import (
    LossReport, LossWeights, bone_loss, disc_loss_from_logits, full_loss, gen_loss_from_logits, limb_loss,
    logit_real_and_r1, rec_loss,
)
from .masks import make_mask, mask_future
from .networks import (
    BRANCHES, COORD_SCALE, DiscriminatorConfig, FrameCodecConfig, GeneratorConfig, STMIModel, stmi_forward,
)
from .params import Adam, load_store, save_store
from .spectral import MetricReport, fitting_windows, l2_coords, windowed_report

VARIANTS = {
    "NoGAN": (),
    "BaseDisc": ("base",),
    "PlusEDM": ("base", "edm"),
    "PlusMotion": ("base", "motion"),
    "STMI-GAN": BRANCHES,
}
OCCLUSION_PATTERNS = ("joints", "limbs", "frames", "transmission")


@dataclass
class ModelConfig:
    """Every architecture, loss, optimiser and schedule knob, flat so it round-trips as key=value."""

    variant: str = "STMI-GAN"
    topology: str = "h36m17"
    # frame codec
    hidden: int = 32
    codec_blocks: int = 2
    # generator
    n_ublocks: int = 2
    depth: int = 2
    gen_channels: int = 16
    gen_top_channels: int = 4
    kernel: int = 3
    up_kernel: int = 2
    # discriminator
    disc_res_blocks: int = 2
    disc_channels: int = 16
    disc_feature_width: int = 8
    disc_branch_features: int = 8
    disc_down: int = 2
    # losses; reconstruction-family weights are per mm, so 1e-3 reads them in metres
    w_rec: float = 1e-3
    w_limb: float = 1e-4
    w_bone: float = 1e-4
    w_disc: float = 1.0
    w_gen: float = 1.0
    gamma: float = 10.0
    # optimiser
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    # schedule
    batch_size: int = 16
    steps: int = 2000
    crop_frames: int = 50
    seed: int = 0
    mask_pattern: str = "future"
    mask_rate: float = 0.5
    eval_every: int = 500
    eval_noise_seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}; expected one of {tuple(VARIANTS)}")
        for name in ("batch_size", "crop_frames", "hidden", "codec_blocks", "n_ublocks", "depth"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.steps < 0:
            raise ContractError("steps must be >= 0")
        self.loss_weights()

    @property
    def branches(self) -> tuple[str, ...]:
        return VARIANTS[self.variant]

    @property
    def adversarial(self) -> bool:
        return bool(self.branches)

    def loss_weights(self) -> LossWeights:
        w = LossWeights(self.w_rec, self.w_limb, self.w_bone, self.w_disc, self.w_gen, self.gamma)
        if not self.adversarial:
            w = replace(w, disc=0.0, gen=0.0)
        return w

    def codec_config(self) -> FrameCodecConfig:
        return FrameCodecConfig(hidden=self.hidden, n_blocks=self.codec_blocks)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(self.n_ublocks, self.depth, self.gen_channels, self.kernel, self.up_kernel,
                               self.gen_top_channels)

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(self.disc_res_blocks, self.disc_channels, self.disc_feature_width,
                                   self.disc_branch_features, self.kernel, self.disc_down)

    def build_model(self) -> STMIModel:
        return STMIModel(get_topology(self.topology), self.codec_config(), self.generator_config(),
                         self.discriminator_config(), seed=self.seed)


def _coerce(typ, raw: str, key: str):
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError as e:
        raise FormatError(f"config key {key}: cannot parse {raw!r}") from e
    return raw


def config_to_text(cfg: ModelConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in asdict(cfg).items())


def config_from_text(text: str) -> ModelConfig:
    types = {f.name: f.type for f in fields(ModelConfig)}
    vals = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {n}: expected key=value, got {line!r}")
        k, v = (p.strip() for p in line.split("=", 1))
        if k not in types:
            raise FormatError(f"config line {n}: unknown key {k!r}")
        vals[k] = _coerce(types[k], v, k)
    return ModelConfig(**vals)


def load_config(path) -> ModelConfig:
    return config_from_text(Path(path).read_text())


def save_config(cfg: ModelConfig, path) -> None:
    Path(path).write_text(config_to_text(cfg))


# ------------------------------------------------------------ batches


class BatchSampler:
    """Random fixed-length crops plus per-sample masks, driven by one generator."""

    def __init__(self, data: MotionDataset, cfg: ModelConfig, rng: np.random.Generator):
        train = data.subset("train") if "train" in data.splits else data
        self.seqs = [s for s in train.sequences if s.n_frames >= cfg.crop_frames]
        if not self.seqs:
            raise ContractError(f"no training sequence has at least {cfg.crop_frames} frames")
        self.cfg, self.rng, self.topology = cfg, rng, data.topology

    def mask(self, F: int, J: int, seed: int) -> np.ndarray:
        return make_mask(self.cfg.mask_pattern, F, J, self.cfg.mask_rate, seed, self.topology).bits

    def __call__(self):
        cfg, rng = self.cfg, self.rng
        F, J = cfg.crop_frames, self.topology.n_joints
        s = np.empty((cfg.batch_size, F, J, 3))
        m = np.empty((cfg.batch_size, F, J, 3), dtype=np.uint8)
        for i in range(cfg.batch_size):
            seq = self.seqs[int(rng.integers(len(self.seqs)))]
            start = int(rng.integers(seq.n_frames - F + 1))
            s[i] = seq.coords[start : start + F]
            m[i] = self.mask(F, J, int(rng.integers(2**31)))
        return s, m


def eval_set(data: MotionDataset, F: int) -> np.ndarray:
    """First F frames of every validation sequence (training split if there is none)."""
    part = data.subset("val") if "val" in data.splits else data
    seqs = [s.coords[:F] for s in part.sequences if s.n_frames >= F]
    if not seqs:
        raise ContractError(f"no evaluation sequence has at least {F} frames")
    return np.stack(seqs)


def future_bits(n: int, F: int, J: int, visible: int | None = None) -> np.ndarray:
    visible = F // 2 if visible is None else visible
    return np.broadcast_to(mask_future(F, J, visible).bits, (n, F, J, 3)).copy()


def predict_batch(model: STMIModel, s: np.ndarray, m: np.ndarray, noise_seed: int) -> np.ndarray:
    with T.no_grad():
        return model.forward(s, m, noise_seed).value


# ------------------------------------------------------------ log


@dataclass
class Snapshot:
    step: int
    rec_visible: float
    reports: list[MetricReport]


@dataclass
class TrainLog:
    rows: list[tuple[int, LossReport]] = field(default_factory=list)
    snapshots: list[Snapshot] = field(default_factory=list)
    wall_clock: float = 0.0

    def append(self, step: int, report: LossReport) -> None:
        if self.rows and step <= self.rows[-1][0]:
            raise ContractError("log steps must increase")
        vals = [getattr(report, c) for c in LossReport.COLUMNS[1:]]
        if not all(math.isfinite(v) for v in vals):
            raise NumericError(step, "log", float("nan"))
        self.rows.append((step, report))

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for _, r in self.rows])

    def to_csv(self) -> str:
        lines = [",".join(LossReport.COLUMNS)]
        lines += [r.csv_row(step) for step, r in self.rows]
        return "\n".join(lines) + "\n"

    def snapshots_csv(self) -> str:
        lines = ["step,rec_visible," + ",".join(MetricReport.COLUMNS)]
        for snap in self.snapshots:
            for r in snap.reports:
                lines.append(",".join([str(snap.step), repr(snap.rec_visible)] + [_fmt(v) for v in r.row()]))
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "train_log.csv").write_text(self.to_csv())
        (out / "eval_log.csv").write_text(self.snapshots_csv())
        # timing is kept apart so the deterministic logs stay byte-identical
        (out / "timing.txt").write_text(f"wall_clock_s={self.wall_clock:.3f}\n")


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


# ------------------------------------------------------------ training


def _check_finite(step: int, name: str, t: T.Tensor) -> None:
    v = t.item()
    if not math.isfinite(v):
        raise NumericError(step, name, v)


def evaluate(model: STMIModel, data: MotionDataset, cfg: ModelConfig, step: int) -> Snapshot:
    gt = eval_set(data, cfg.crop_frames)
    n, F, J, _ = gt.shape
    m = future_bits(n, F, J)
    with T.no_grad():
        out = model.forward(gt, m, cfg.eval_noise_seed)
        rec = rec_loss(out, gt, m).item()
    return Snapshot(step, rec, windowed_report(gt, out.value, data.fps, fitting_windows(F, data.fps)))


def train(cfg: ModelConfig, data: MotionDataset, model: STMIModel | None = None, progress=None):
    """Run ``cfg.steps`` iterations; returns ``(model, TrainLog)``.

    NoGAN trains reconstruction, limb and bone terms on the whole sequence
    and never touches the discriminator; GAN variants restrict those terms to
    the visible part and add the adversarial pair on the enabled branches.
    """
    if not data.sequences:
        raise ContractError("empty dataset")
    if data.topology.name != cfg.topology:
        raise ContractError(f"dataset topology {data.topology.name} but config says {cfg.topology}")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    model = model or cfg.build_model()
    w = cfg.loss_weights()
    sampler = BatchSampler(data, cfg, np.random.default_rng(rng.integers(2**63)))
    noise_rng = np.random.default_rng(rng.integers(2**63))
    opt_g = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    opt_d = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    gen_p, disc_p = model.gen_params(), model.disc_params()
    gen_names, disc_names = list(gen_p), list(disc_p)
    branches = cfg.branches
    topo = data.topology
    log = TrainLog()
    log.snapshots.append(evaluate(model, data, cfg, 0))

    for step in range(1, cfg.steps + 1):
        s, m = sampler()
        noise_seed = int(noise_rng.integers(2**31))
        loss_m = m if cfg.adversarial else np.ones_like(m)
        out = model.forward(s, m, noise_seed)
        if not np.all(np.isfinite(out.value)):
            raise NumericError(step, "generator output", float(out.value[~np.isfinite(out.value)].flat[0]))

        terms = {}
        r1_mean = 0.0
        if cfg.adversarial:
            # R1 is measured against coordinates in metres, the networks' own input scale
            z_real, r1 = logit_real_and_r1(lambda x: model.disc.logits(T.mul(x, COORD_SCALE), branches),
                                           s / COORD_SCALE)
            z_fake = model.disc.logits(out.detach(), branches)
            ld = disc_loss_from_logits(z_real, z_fake, r1, w.gamma)
            _check_finite(step, "disc", ld)
            r1_mean = float(np.mean(r1.value))
            if w.disc:
                grads = T.grad(T.mul(w.disc, ld), [disc_p[k] for k in disc_names])
                _adam(opt_d, disc_p, disc_names, grads, step)
            terms["disc"] = T.Tensor(ld.value)
            terms["gen"] = gen_loss_from_logits(model.disc.logits(out, branches))

        terms["rec"] = rec_loss(out, s, loss_m)
        if w.limb:
            terms["limb"] = limb_loss(out, s, loss_m, topo)
        if w.bone:
            terms["bone"] = bone_loss(out, s, loss_m, topo, on_unseen="skip")
        for name, t in terms.items():
            _check_finite(step, name, t)
        gen_terms = {k: v for k, v in terms.items() if k != "disc"}
        total, report = full_loss(gen_terms, w, r1_mean)
        report.disc = terms["disc"].item() if "disc" in terms else 0.0
        if total is not None:
            grads = T.grad(total, [gen_p[k] for k in gen_names])
            _adam(opt_g, gen_p, gen_names, grads, step)
        log.append(step, report)
        if cfg.eval_every and (step % cfg.eval_every == 0 or step == cfg.steps):
            log.snapshots.append(evaluate(model, data, cfg, step))
        if progress is not None:
            progress(step, report)

    log.wall_clock = time.perf_counter() - t0
    return model, log


def _adam(opt: Adam, params: dict, names: list[str], grads: list[T.Tensor], step: int) -> None:
    try:
        opt.step(params, {k: g.value for k, g in zip(names, grads)})
    except NumericError as e:
        raise NumericError(step, e.term, e.value) from None


# ------------------------------------------------------------ checkpoints


def save_checkpoint(model: STMIModel, cfg: ModelConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_store(model.store, out / "params.stmi")
    sidecar = {"config": asdict(cfg), "format": "stmi-checkpoint", "version": 1,
               "n_parameters": int(sum(p.size for _, p in model.store.items()))}
    (out / "config.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return out


def load_checkpoint(path):
    """Rebuild the model from ``config.json`` and overwrite its parameters from ``params.stmi``."""
    root = Path(path)
    if root.is_file():
        root = root.parent
    try:
        sidecar = json.loads((root / "config.json").read_text())
        cfg = ModelConfig(**sidecar["config"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"{root}: unreadable checkpoint config ({e})") from e
    model = cfg.build_model()
    stored = load_store(root / "params.stmi")
    if set(stored.params) != set(model.store.params):
        raise FormatError(f"{root}: parameter names do not match the configured architecture")
    model.store.load_state(stored.state())
    return model, cfg


# ------------------------------------------------------------ experiments


def predict_eval(model: STMIModel, data: MotionDataset, cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    gt = eval_set(data, cfg.crop_frames)
    n, F, J, _ = gt.shape
    return gt, predict_batch(model, gt, future_bits(n, F, J), cfg.eval_noise_seed)


def ablation_grid(data: MotionDataset, base_cfg: ModelConfig, variants=tuple(VARIANTS), progress=None):
    """Train each variant with shared seed and data; returns {variant: [MetricReport per window]}."""
    table = {}
    for v in variants:
        cfg = replace(base_cfg, variant=v)
        model, _ = train(cfg, data, progress=progress)
        gt, gen = predict_eval(model, data, cfg)
        table[v] = windowed_report(gt, gen, data.fps, fitting_windows(gt.shape[1], data.fps))
    return table


def ablation_csv(table: dict) -> str:
    lines = ["variant,window_start_s,window_end_s,psent,pskl_gt_gen,pskl_gen_gt,l2_mm"]
    for v, reports in table.items():
        for r in reports:
            lines.append(",".join([v, _fmt(r.window_s[0]), _fmt(r.window_s[1]), repr(r.psent),
                                   repr(r.pskl_gt_gen), repr(r.pskl_gen_gt), repr(r.l2_mm)]))
    return "\n".join(lines) + "\n"


def render_table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [[c if isinstance(c, str) else f"{c:.4f}" for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells) + "\n"


def occlusion_masks(pattern: str, n: int, F: int, data: MotionDataset, rate: float, seed: int) -> np.ndarray:
    J = data.topology.n_joints
    return np.stack([make_mask(pattern, F, J, rate, seed + i, data.topology).bits for i in range(n)])


def occlusion_experiment(data: MotionDataset, cfg: ModelConfig, patterns=OCCLUSION_PATTERNS, rate: float = 0.8,
                         models: dict | None = None, methods=("linint", "nogan", "stmi")):
    """L2 on occluded joint-frames per (pattern, method).

    ``models`` maps method name to a trained model; a missing learned method
    is trained on the fly with that pattern as its mask recipe.
    """
    models = models or {}
    table = {}
    for pattern in patterns:
        gt = eval_set(data, cfg.crop_frames)
        n, F, J, _ = gt.shape
        m = occlusion_masks(pattern, n, F, data, rate, cfg.seed * 100_003 + 17)
        hidden = ~m.astype(bool).all(axis=3)
        row = {}
        for method in methods:
            if method == "linint":
                gen = np.stack([
                    linear_interpolate(MotionSequence(gt[i], data.fps, data.topology.name), OcclusionMask(m[i])).coords
                    for i in range(n)
                ])
            elif method in ("nogan", "stmi"):
                model = models.get(method)
                if model is None:
                    variant = "NoGAN" if method == "nogan" else "STMI-GAN"
                    tcfg = replace(cfg, variant=variant, mask_pattern=pattern, mask_rate=rate)
                    model, _ = train(tcfg, data)
                gen = predict_batch(model, gt, m, cfg.eval_noise_seed)
            else:
                raise ContractError(f"unknown method {method!r}")
            row[method] = l2_coords(gt, gen, cell_mask=hidden) if hidden.any() else 0.0
        table[pattern] = row
    return table


def noise_sensitivity(model: STMIModel, data: MotionDataset, n_seeds: int = 4, F: int = 50,
                      visible: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Mean pairwise per-joint distance (mm) between predictions under different noise seeds.

    Returns ``(offsets, diff)`` where ``offsets`` counts predicted frames
    after the last observed one (1-based).
    """
    if n_seeds < 2:
        raise ContractError("need at least two noise seeds")
    gt = eval_set(data, F)
    n, F, J, _ = gt.shape
    visible = F // 2 if visible is None else visible
    m = future_bits(n, F, J, visible)
    preds = [predict_batch(model, gt, m, seed) for seed in range(n_seeds)]
    acc = np.zeros(F - visible)
    pairs = 0
    for a in range(n_seeds):
        for b in range(a + 1, n_seeds):
            d = np.linalg.norm(preds[a] - preds[b], axis=-1)[:, visible:]
            acc += d.mean(axis=(0, 2))
            pairs += 1
    return np.arange(1, F - visible + 1), acc / pairs


def generate(model: STMIModel, seed_seq: MotionSequence, mask: OcclusionMask, noise_seed: int = 0) -> MotionSequence:
    return stmi_forward(seed_seq, mask, model, noise_seed)


def extend_for_prediction(seed_seq: MotionSequence, n_predict: int) -> tuple[MotionSequence, OcclusionMask]:
    """Append ``n_predict`` placeholder frames (a copy of the last one) and the matching future mask."""
    if n_predict < 0:
        raise ContractError("prediction length must be >= 0")
    F0 = seed_seq.n_frames
    pad = np.repeat(seed_seq.coords[-1:], n_predict, axis=0)
    seq = seed_seq.replace(np.concatenate([seed_seq.coords, pad]))
    return seq, mask_future(F0 + n_predict, seq.n_joints, F0)
