"""Reconstruction, limb, bone and adversarial losses.

Motion inputs may be a single F×J×3 sequence or a batch N×F×J×3; batch
expectations are arithmetic means over N. ``s`` and ``m`` are plain arrays
(ground truth is never differentiated), ``s_out`` is a :class:`Tensor`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from . import tensor as T
from .data import OcclusionMask, SkeletonTopology
from .errors import ContractError
from .geometry import bone_lengths_t, limb_pair_distances, limb_pair_distances_t, mean_bone_lengths

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0
    limb: float = 0.1
    bone: float = 0.1
    disc: float = 1.0
    gen: float = 1.0
    gamma: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ContractError(f"loss weight {f.name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    rec: float = 0.0
    limb: float = 0.0
    bone: float = 0.0
    disc: float = 0.0
    gen: float = 0.0
    r1: float = 0.0
    total: float = 0.0

    COLUMNS = ("step", "rec", "limb", "bone", "disc", "gen", "r1", "total")

    def csv_row(self, step: int) -> str:
        vals = asdict(self)
        return ",".join([str(step)] + [repr(float(vals[c])) for c in self.COLUMNS[1:]])


def _batch(s_out: T.Tensor, s, m):
    s = np.asarray(s, dtype=np.float64)
    if isinstance(m, OcclusionMask):
        m = m.bits
    m = np.asarray(m, dtype=np.float64)
    if s_out.ndim == 3:
        s_out = T.reshape(s_out, (1,) + s_out.shape)
        s, m = s[None], m[None]
    if s.shape != s_out.shape or m.shape != s_out.shape:
        raise ContractError(f"shape mismatch: s_out {s_out.shape}, s {s.shape}, m {m.shape}")
    return s_out, s, m


def rec_loss(s_out: T.Tensor, s, m) -> T.Tensor:
    """‖S_out∘M − S∘M‖₂ over every entry of a sequence, averaged over the batch."""
    s_out, s, m = _batch(s_out, s, m)
    mt = T.Tensor(m)
    diff = T.sub(T.mul(s_out, mt), T.Tensor(s * m))
    return T.mean(T.l2norm(diff, axis=(1, 2, 3)))


def limb_loss(s_out: T.Tensor, s, m, topology: SkeletonTopology) -> T.Tensor:
    """Σ_f Σ_pairs |‖S^m_i − S^m_j‖ − ‖S^{m,out}_i − S^{m,out}_j‖| over fully visible pairs."""
    s_out, s, m = _batch(s_out, s, m)
    vis = m.astype(bool).all(axis=3)
    a, b = np.array(topology.limb_pairs).T
    pair_vis = (vis[:, :, a] & vis[:, :, b]).astype(np.float64)
    gt = limb_pair_distances(s * m, topology)
    out = limb_pair_distances_t(T.mul(s_out, T.Tensor(m)), topology)
    per = T.mul(T.abs_(T.sub(T.Tensor(gt), out)), T.Tensor(pair_vis))
    return T.mean(T.sum_(per, axis=(1, 2)))


def bone_loss(s_out: T.Tensor, s, m, topology: SkeletonTopology, on_unseen: str = "raise") -> T.Tensor:
    """Σ_f Σ_b |l̄_b − l_fb|, l̄ from the visible ground truth, l_fb from every output frame."""
    s_out, s, m = _batch(s_out, s, m)
    ref = np.empty((s.shape[0], topology.n_bones))
    seen = np.empty_like(ref)
    for n in range(s.shape[0]):
        ref[n], ok = mean_bone_lengths(s[n], m[n], topology, on_unseen)
        seen[n] = ok
    F = s.shape[1]
    lengths = bone_lengths_t(s_out, topology)
    ref_f = np.repeat(ref[:, None, :], F, axis=1)
    seen_f = np.repeat(seen[:, None, :], F, axis=1)
    per = T.mul(T.abs_(T.sub(T.Tensor(ref_f), lengths)), T.Tensor(seen_f))
    return T.mean(T.sum_(per, axis=(1, 2)))


def _check_prob(d: T.Tensor, name: str) -> None:
    v = d.value
    if not np.all(np.isfinite(v)) or np.any(v < 0.0) or np.any(v > 1.0):
        raise ContractError(f"{name} must hold probabilities, got range [{v.min()}, {v.max()}]")


def _safe_log(d: T.Tensor) -> T.Tensor:
    return T.log(T.clamp(d, PROB_EPS, 1.0 - PROB_EPS))


def disc_objective(d_real: T.Tensor, d_fake: T.Tensor) -> T.Tensor:
    """E[log(1 − D(fake))] + E[log D(real)], the quantity the discriminator maximises."""
    d_real, d_fake = T.as_tensor(d_real), T.as_tensor(d_fake)
    _check_prob(d_real, "d_real")
    _check_prob(d_fake, "d_fake")
    return T.add(T.mean(_safe_log(T.sub(1.0, d_fake))), T.mean(_safe_log(d_real)))


def disc_loss(d_real, d_fake, r1_grad_sqnorm, gamma: float) -> T.Tensor:
    """Loss minimised by the discriminator: −objective + (γ/2)·E‖∇D(real)‖²."""
    loss = T.neg(disc_objective(d_real, d_fake))
    if gamma:
        loss = T.add(loss, T.mul(0.5 * gamma, T.mean(T.as_tensor(r1_grad_sqnorm))))
    return loss


def gen_loss(d_fake) -> T.Tensor:
    """−E[log D(fake)]: minimising it maximises the generator objective."""
    d_fake = T.as_tensor(d_fake)
    _check_prob(d_fake, "d_fake")
    return T.neg(T.mean(_safe_log(d_fake)))


def _softplus(z: T.Tensor) -> T.Tensor:
    # log(1 + e^z) without overflow: relu(z) + log(1 + e^-|z|)
    return T.add(T.relu(z), T.log(T.add(1.0, T.exp(T.neg(T.abs_(z))))))


def _check_logits(z: T.Tensor, name: str) -> None:
    if not np.all(np.isfinite(z.value)):
        raise ContractError(f"{name} logits must be finite")


def disc_loss_from_logits(z_real, z_fake, r1_grad_sqnorm, gamma: float) -> T.Tensor:
    """:func:`disc_loss` with D = sigmoid(z), written in logit space.

    Equal to the clamped form wherever the probabilities stay inside the
    clamp, but keeps a gradient when the discriminator saturates, so a
    confidently wrong discriminator can still recover.
    """
    z_real, z_fake = T.as_tensor(z_real), T.as_tensor(z_fake)
    _check_logits(z_real, "real")
    _check_logits(z_fake, "fake")
    # −log σ(z) = softplus(−z), −log(1 − σ(z)) = softplus(z)
    loss = T.add(T.mean(_softplus(z_fake)), T.mean(_softplus(T.neg(z_real))))
    if gamma:
        loss = T.add(loss, T.mul(0.5 * gamma, T.mean(T.as_tensor(r1_grad_sqnorm))))
    return loss


def gen_loss_from_logits(z_fake) -> T.Tensor:
    """:func:`gen_loss` with D = sigmoid(z), without the saturating clamp."""
    z_fake = T.as_tensor(z_fake)
    _check_logits(z_fake, "fake")
    return T.mean(_softplus(T.neg(z_fake)))


def r1_sqnorm(disc_fn: Callable[[T.Tensor], T.Tensor], x_real) -> T.Tensor:
    """Per-sample ‖∇ₓD(x)‖² for a batch of real inputs, differentiable in D's parameters.

    ``disc_fn`` maps a batch to per-sample probabilities; samples must not
    interact inside it, so the gradient of the summed output separates.
    """
    return disc_real_and_r1(disc_fn, x_real)[1]


def disc_real_and_r1(disc_fn: Callable[[T.Tensor], T.Tensor], x_real):
    """``(D(x_real), per-sample ‖∇ₓD‖²)`` from a single forward pass over the real batch."""
    leaf = T.Tensor(T.as_tensor(x_real).value, requires_grad=True)
    with T.enable_grad():
        d = disc_fn(leaf)
        g = T.grad(T.sum_(d), [leaf], create_graph=True)[0]
        sq = T.sum_(T.square(g), axis=tuple(range(1, g.ndim)))
    return d, sq


def logit_real_and_r1(logit_fn: Callable[[T.Tensor], T.Tensor], x_real):
    """``(logits on x_real, per-sample ‖∇ₓ sigmoid(logit)‖²)``; the penalty is on the probability."""
    leaf = T.Tensor(T.as_tensor(x_real).value, requires_grad=True)
    with T.enable_grad():
        z = logit_fn(leaf)
        g = T.grad(T.sum_(T.sigmoid(z)), [leaf], create_graph=True)[0]
        sq = T.sum_(T.square(g), axis=tuple(range(1, g.ndim)))
    return z, sq


TERMS = ("rec", "limb", "bone", "disc", "gen")


def full_loss(terms: dict[str, T.Tensor], w: LossWeights, r1: float = 0.0):
    """Weighted sum λ_r·rec + λ_l·limb + λ_b·bone + λ_D·disc + λ_G·gen.

    Terms with weight 0 are left out of the graph entirely. Returns the total
    as a tensor (or None when nothing contributes) and a :class:`LossReport`.
    """
    report = LossReport(r1=float(r1))
    total = None
    acc = 0.0
    for name in TERMS:
        t = terms.get(name)
        if t is None:
            continue
        weight = getattr(w, name)
        setattr(report, name, t.item())
        if weight == 0:
            continue
        part = T.mul(weight, t)
        acc += weight * t.item()
        total = part if total is None else T.add(total, part)
    report.total = acc if total is None else total.item()
    return total, report
