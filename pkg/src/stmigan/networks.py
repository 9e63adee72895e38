"""Generator and discriminator networks built on :mod:`stmigan.tensor`.

Layout conventions: sequences are batches (N, F, J, 3) in millimetres; frame
embeddings are (N, F, H); 2-D feature maps are (N, rows, cols, channels) with
time along the rows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import MotionSequence, OcclusionMask, SkeletonTopology
from .errors import ContractError
from .geometry import edm_pairs_t, facing_transforms, temporal_difference_t, unalign_t
from .params import ParameterStore

COORD_SCALE = 1000.0  # mm -> m at the network boundary
MOTION_SCALE = 100.0  # per-frame displacements are tens of mm
BRANCHES = ("base", "edm", "motion")


@dataclass(frozen=True)
class FrameCodecConfig:
    hidden: int = 32
    n_blocks: int = 2
    width: int = 0  # 0 -> same as hidden

    @property
    def block_width(self) -> int:
        return self.width or self.hidden


@dataclass(frozen=True)
class GeneratorConfig:
    n_ublocks: int = 2
    depth: int = 2
    channels: int = 16
    kernel: int = 3
    up_kernel: int = 2
    top_channels: int = 4  # width of the full-resolution decoder level


@dataclass(frozen=True)
class DiscriminatorConfig:
    n_res_blocks: int = 2
    channels: int = 16
    feature_width: int = 8
    branch_features: int = 8
    kernel: int = 3
    n_down: int = 2


# ------------------------------------------------------------------ layers


class Linear:
    def __init__(self, store: ParameterStore, name: str, din: int, dout: int, gain: float = 2.0):
        self.w = store.add_normal(f"{name}.w", (din, dout), din, gain)
        self.b = store.add_zeros(f"{name}.b", (dout,))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.linear(x, self.w, self.b)


class Conv:
    def __init__(self, store, name, cin, cout, k=3, stride=1, transposed=False, gain=2.0):
        shape = (k, k, cout, cin) if transposed else (k, k, cin, cout)
        self.k = store.add_normal(f"{name}.k", shape, k * k * cin, gain)
        self.b = store.add_zeros(f"{name}.b", (cout,))
        self.stride, self.transposed = stride, transposed

    def __call__(self, x: T.Tensor) -> T.Tensor:
        y = T.conv2d(x, self.k, self.stride, self.transposed)
        return T.add(y, T.expand(self.b, y.shape))


def attention(x: T.Tensor, carrier: T.Tensor, gate: T.Tensor) -> T.Tensor:
    """att(x, π, τ) = π·τ + x·(1 − τ)."""
    return T.add(T.mul(carrier, gate), T.mul(x, T.sub(1.0, gate)))


class FrameCodec:
    """Per-frame MLP with attention-gated blocks; never mixes frames.

    in-projection → n blocks of (fc, relu, fc) gated by sigmoid(linear(block
    input)) → gated output projection.
    """

    def __init__(self, store: ParameterStore, name: str, din: int, dout: int, cfg: FrameCodecConfig):
        w = cfg.block_width
        self.din, self.dout = din, dout
        self.inp = Linear(store, f"{name}.in", din, w, gain=1.0)
        self.blocks = []
        for i in range(cfg.n_blocks):
            self.blocks.append((
                Linear(store, f"{name}.b{i}.fc1", w, w),
                Linear(store, f"{name}.b{i}.fc2", w, w, gain=1.0),
                Linear(store, f"{name}.b{i}.gate", w, w, gain=1.0),
            ))
        self.out = Linear(store, f"{name}.out", w, dout, gain=1.0)
        self.out_carrier = Linear(store, f"{name}.out_carrier", w, dout, gain=1.0)
        self.out_gate = Linear(store, f"{name}.out_gate", w, dout, gain=1.0)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        h = self.inp(x)
        for fc1, fc2, gate in self.blocks:
            pi = fc2(T.relu(fc1(h)))
            h = attention(h, pi, T.sigmoid(gate(h)))
        return attention(self.out_carrier(h), self.out(h), T.sigmoid(self.out_gate(h)))


class UBlock:
    """Stride-2 encoder levels, transposed-conv decoder, skips and noise injection.

    Operates on a 1-channel (N, F, H, 1) map and returns input + refinement.
    """

    def __init__(self, store: ParameterStore, name: str, cfg: GeneratorConfig):
        C, k = cfg.channels, cfg.kernel
        self.depth = cfg.depth
        self.down = [Conv(store, f"{name}.down{i}", 1 if i == 0 else C, C, k, stride=2) for i in range(cfg.depth)]
        self.noise_scale = [store.add_zeros(f"{name}.noise{i}", (C,)) for i in range(cfg.depth)]
        widths = [cfg.top_channels] + [C] * (cfg.depth - 1)
        self.up = [
            Conv(store, f"{name}.up{i}", C, widths[i], cfg.up_kernel, stride=2, transposed=True)
            for i in range(cfg.depth)
        ]
        self.merge = [
            Conv(store, f"{name}.merge{i}", widths[i] + (1 if i == 0 else C), 1 if i == 0 else C, k,
                 gain=1.0 if i == 0 else 2.0)
            for i in range(cfg.depth)
        ]

    def __call__(self, x: T.Tensor, rng: np.random.Generator) -> T.Tensor:
        skips = [x]
        h = x
        for conv, scale in zip(self.down, self.noise_scale):
            h = T.relu(conv(h))
            n, r, c, ch = h.shape
            noise = T.expand(T.Tensor(rng.standard_normal((n, r, c, 1))), h.shape)
            h = T.add(h, T.mul(noise, T.expand(scale, h.shape)))
            skips.append(h)
        for i in reversed(range(self.depth)):
            h = T.relu(self.up[i](h))
            h = self.merge[i](T.concat([h, skips[i]], axis=3))
            if i > 0:
                h = T.relu(h)
        return T.add(x, h)


class Generator:
    def __init__(self, store: ParameterStore, name: str, cfg: GeneratorConfig):
        self.cfg = cfg
        self.blocks = [UBlock(store, f"{name}.u{i}", cfg) for i in range(cfg.n_ublocks)]

    def __call__(self, se: T.Tensor, noise_seed: int) -> T.Tensor:
        """(N, F, H) → (N, F, H); time and embedding axes padded to a multiple of 2^depth."""
        n, F, H = se.shape
        mult = 2 ** self.cfg.depth
        Fp, Hp = -(-F // mult) * mult, -(-H // mult) * mult
        x = T.reshape(se, (n, F, H, 1))
        if Fp != F:
            x = T.reflect_pad(x, 1, 0, Fp - F)
        if Hp != H:
            x = T.reflect_pad(x, 2, 0, Hp - H)
        rng = np.random.default_rng(noise_seed)
        for block in self.blocks:
            x = block(x, rng)
        x = T.getitem(x, (slice(None), slice(0, F), slice(0, H), 0))
        return x


class ResidualCNN:
    """Strided stem, residual blocks, per-block pooled features, FC scoring head."""

    def __init__(self, store: ParameterStore, name: str, cfg: DiscriminatorConfig):
        C, k = cfg.channels, cfg.kernel
        self.stem = [Conv(store, f"{name}.stem{i}", 1 if i == 0 else C, C, k, stride=2) for i in range(max(cfg.n_down, 1))]
        self.blocks = [
            (Conv(store, f"{name}.r{i}.c1", C, C, k), Conv(store, f"{name}.r{i}.c2", C, C, k, gain=1.0))
            for i in range(cfg.n_res_blocks)
        ]
        self.taps = [Linear(store, f"{name}.r{i}.tap", C, cfg.feature_width, gain=1.0) for i in range(cfg.n_res_blocks)]
        width = cfg.feature_width * cfg.n_res_blocks
        self.fc = Linear(store, f"{name}.fc", width, width)
        self.head = Linear(store, f"{name}.head", width, cfg.branch_features, gain=1.0)

    def __call__(self, img: T.Tensor) -> T.Tensor:
        h = img
        for conv in self.stem:
            h = T.relu(conv(h))
        feats = []
        for (c1, c2), tap in zip(self.blocks, self.taps):
            h = T.relu(T.add(h, c2(T.relu(c1(h)))))
            feats.append(tap(T.mean(h, axis=(1, 2))))
        return self.head(T.relu(self.fc(T.concat(feats, axis=1))))


class Discriminator:
    """Three branches (base, EDM, motion) combined linearly into one probability."""

    def __init__(self, store: ParameterStore, name: str, topology: SkeletonTopology,
                 codec: FrameCodecConfig, cfg: DiscriminatorConfig):
        J = topology.n_joints
        H = codec.hidden
        self.topology = topology
        P = J * (J - 1) // 2
        self.base_codec = FrameCodec(store, f"{name}.base.codec", 3 * J, H, codec)
        self.edm_proj = Linear(store, f"{name}.edm.proj", P, H)
        self.motion_proj = Linear(store, f"{name}.motion.proj", 3 * J + P, H)
        self.cnn = {b: ResidualCNN(store, f"{name}.{b}.cnn", cfg) for b in BRANCHES}
        self.combine = Linear(store, f"{name}.combine", len(BRANCHES) * cfg.branch_features, 1, gain=1.0)
        self.bf = cfg.branch_features

    @staticmethod
    def _image(x: T.Tensor) -> T.Tensor:
        return T.reshape(x, x.shape + (1,))

    def _flat_edm(self, x: T.Tensor) -> T.Tensor:
        return T.mul(edm_pairs_t(x), 1.0 / COORD_SCALE)

    def base(self, x: T.Tensor) -> T.Tensor:
        n, F, J, _ = x.shape
        hip = self.topology.hip
        origin = T.expand(T.getitem(x, (slice(None), slice(0, 1), slice(hip, hip + 1))), x.shape)
        local = T.mul(T.sub(x, origin), 1.0 / COORD_SCALE)
        emb = self.base_codec(T.reshape(local, (n, F, 3 * J)))
        return self.cnn["base"](self._image(emb))

    def edm(self, x: T.Tensor) -> T.Tensor:
        emb = T.relu(self.edm_proj(self._flat_edm(x)))
        return self.cnn["edm"](self._image(emb))

    def motion(self, x: T.Tensor) -> T.Tensor:
        n, F, J, _ = x.shape
        dx = T.mul(temporal_difference_t(x, axis=1), 1.0 / MOTION_SCALE)
        dx = T.reshape(dx, (n, F - 1, 3 * J))
        dd = T.mul(temporal_difference_t(self._flat_edm(x), axis=1), COORD_SCALE / MOTION_SCALE)
        emb = T.relu(self.motion_proj(T.concat([dx, dd], axis=2)))
        return self.cnn["motion"](self._image(emb))

    def features(self, x: T.Tensor, branches=BRANCHES) -> T.Tensor:
        return T.concat([getattr(self, b)(x) for b in branches], axis=1)

    def __call__(self, x: T.Tensor, branches=BRANCHES) -> T.Tensor:
        """(N, F, J, 3) in mm → (N,) probabilities."""
        return T.sigmoid(self.logits(x, branches))

    def logits(self, x: T.Tensor, branches=BRANCHES) -> T.Tensor:
        """Pre-sigmoid scores, (N,)."""
        branches = tuple(branches)
        if not branches:
            raise ContractError("at least one discriminator branch must be enabled")
        rows = []
        for b in branches:
            if b not in BRANCHES:
                raise ContractError(f"unknown discriminator branch {b!r}; expected one of {BRANCHES}")
            i = BRANCHES.index(b)
            rows.append(T.getitem(self.combine.w, (slice(i * self.bf, (i + 1) * self.bf),)))
        w = T.concat(rows, axis=0)
        logit = T.linear(self.features(x, branches), w, self.combine.b)
        return T.reshape(logit, (logit.shape[0],))


# ------------------------------------------------------------- full model


def reference_frames(mask_bits: np.ndarray, topology: SkeletonTopology) -> np.ndarray:
    """First frame per sample whose hip and both hip joints are fully visible (else 0)."""
    vis = mask_bits.astype(bool).all(axis=-1)
    need = vis[..., [topology.hip, topology.left_hip, topology.right_hip]].all(axis=-1)
    first = np.argmax(need, axis=1)
    return np.where(need.any(axis=1), first, 0)


class STMIModel:
    """Frame encoder → U-block generator → frame decoder, plus the discriminator.

    Generator parameters live under ``gen.`` and discriminator ones under
    ``disc.`` in a single :class:`ParameterStore`.
    """

    def __init__(self, topology: SkeletonTopology, codec: FrameCodecConfig = FrameCodecConfig(),
                 generator: GeneratorConfig = GeneratorConfig(),
                 discriminator: DiscriminatorConfig = DiscriminatorConfig(), seed: int = 0):
        self.topology = topology
        self.codec_cfg, self.gen_cfg, self.disc_cfg = codec, generator, discriminator
        self.store = ParameterStore(seed)
        J = topology.n_joints
        self.encoder = FrameCodec(self.store, "gen.enc", 3 * J, codec.hidden, codec)
        self.generator = Generator(self.store, "gen.g", generator)
        self.decoder = FrameCodec(self.store, "gen.dec", codec.hidden, 3 * J, codec)
        self.disc = Discriminator(self.store, "disc", topology, codec, discriminator)

    def gen_params(self) -> dict[str, T.Tensor]:
        return self.store.subset("gen.")

    def disc_params(self) -> dict[str, T.Tensor]:
        return self.store.subset("disc.")

    def encode(self, sm: T.Tensor) -> T.Tensor:
        n, F, J, _ = sm.shape
        return self.encoder(T.reshape(T.mul(sm, 1.0 / COORD_SCALE), (n, F, 3 * J)))

    def decode(self, sg: T.Tensor) -> T.Tensor:
        n, F, _ = sg.shape
        out = self.decoder(sg)
        return T.mul(T.reshape(out, (n, F, self.topology.n_joints, 3)), COORD_SCALE)

    def forward(self, s: np.ndarray, m: np.ndarray, noise_seed: int) -> T.Tensor:
        """Batch inpainting: align → mask → encode → generate → decode → unalign."""
        s = np.asarray(s, dtype=np.float64)
        m = np.asarray(m, dtype=np.float64)
        ref = reference_frames(m, self.topology)
        t, R, _ = facing_transforms(s, self.topology, ref)
        aligned = np.einsum("nfjc,nkc->nfjk", s - t[:, None, None, :], R)
        sm = T.Tensor(aligned * m)
        sg = self.generator(self.encode(sm), noise_seed)
        return unalign_t(self.decode(sg), t, R)

    def discriminate(self, x, branches=BRANCHES) -> T.Tensor:
        return self.disc(T.as_tensor(x), branches)


# ----------------------------------------------- functional entry points


def frame_encode(sm, model: STMIModel) -> T.Tensor:
    x = T.as_tensor(sm)
    squeeze = x.ndim == 3
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
    out = model.encode(x)
    return T.reshape(out, out.shape[1:] + (1,)) if squeeze else out


def frame_decode(sg, model: STMIModel) -> T.Tensor:
    x = T.as_tensor(sg)
    if x.ndim == 3 and x.shape[-1] == 1:
        out = model.decode(T.reshape(x, (1,) + x.shape[:2]))
        return T.reshape(out, out.shape[1:])
    return model.decode(x)


def generator_forward(se, model: STMIModel, noise_seed: int) -> T.Tensor:
    x = T.as_tensor(se)
    if x.ndim == 3 and x.shape[-1] == 1:
        out = model.generator(T.reshape(x, (1,) + x.shape[:2]), noise_seed)
        return T.reshape(out, out.shape[1:] + (1,))
    return model.generator(x, noise_seed)


def residual_features(img, cnn: ResidualCNN) -> T.Tensor:
    return cnn(T.as_tensor(img))


def _batched(x) -> T.Tensor:
    x = T.as_tensor(x)
    return T.reshape(x, (1,) + x.shape) if x.ndim == 3 else x


def disc_base(s_out, model: STMIModel) -> T.Tensor:
    return model.disc.base(_batched(s_out))


def disc_edm(s_out, model: STMIModel) -> T.Tensor:
    return model.disc.edm(_batched(s_out))


def disc_motion(s_out, model: STMIModel) -> T.Tensor:
    return model.disc.motion(_batched(s_out))


def discriminate(s_out, model: STMIModel, branches=BRANCHES) -> T.Tensor:
    return model.disc(_batched(s_out), branches)


def stmi_forward(s: MotionSequence, m: OcclusionMask, model: STMIModel, noise_seed: int) -> MotionSequence:
    with T.no_grad():
        out = model.forward(s.coords[None], m.bits[None], noise_seed)
    return s.replace(out.value[0])
