"""scikit-learn style wrappers: ``fit`` on motion arrays, ``predict`` completions for masked input."""
from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import baselines, training
from .data import MotionDataset, MotionSequence, OcclusionMask, get_topology
from .errors import ContractError, DimensionError


def check_motion(X, n_joints: int | None = None) -> np.ndarray:
    """Validate and return an (N, F, J, 3) float64 array; a single F×J×3 sequence is promoted."""
    if isinstance(X, MotionDataset):
        X = X.stack()
    elif isinstance(X, MotionSequence):
        X = X.coords
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise DimensionError(f"expected N×F×J×3 motion, got shape {arr.shape}")
    if n_joints is not None and arr.shape[2] != n_joints:
        raise DimensionError(f"expected {n_joints} joints, got {arr.shape[2]}")
    if arr.shape[1] < 2:
        raise DimensionError("sequences need at least 2 frames")
    if not np.all(np.isfinite(arr)):
        raise ContractError("motion contains non-finite values")
    return arr


def check_masks(M, shape) -> np.ndarray:
    """Validate binary masks against a motion shape; ``None`` means prediction of the second half."""
    n, F, J, _ = shape
    if M is None:
        return training.future_bits(n, F, J)
    arr = np.asarray(M)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.shape != tuple(shape):
        raise DimensionError(f"mask shape {arr.shape} does not match motion {tuple(shape)}")
    if not np.isin(arr, (0, 1)).all():
        raise ContractError("mask entries must be 0 or 1")
    return arr.astype(np.uint8)


class STMIGANCompleter(BaseEstimator):
    """Trains the inpainting model on ``fit`` and completes masked sequences on ``predict``."""

    def __init__(self, variant: str = "STMI-GAN", steps: int = 2000, batch_size: int = 16, crop_frames: int = 50,
                 lr: float = 1e-3, seed: int = 0, topology: str = "h36m17", fps: float = 12.5,
                 mask_pattern: str = "future", mask_rate: float = 0.5, noise_seed: int = 0,
                 model_params: dict | None = None):
        self.variant = variant
        self.steps = steps
        self.batch_size = batch_size
        self.crop_frames = crop_frames
        self.lr = lr
        self.seed = seed
        self.topology = topology
        self.fps = fps
        self.mask_pattern = mask_pattern
        self.mask_rate = mask_rate
        self.noise_seed = noise_seed
        self.model_params = model_params

    def _config(self) -> training.ModelConfig:
        names = {f.name for f in fields(training.ModelConfig)}
        kw = {k: v for k, v in self.get_params().items() if k in names}
        # architecture and loss knobs not exposed above pass through model_params
        extra = dict(self.model_params or {})
        unknown = set(extra) - names
        if unknown:
            raise ContractError(f"unknown model_params keys: {sorted(unknown)}")
        kw.update(extra)
        kw.setdefault("eval_every", 0)
        return training.ModelConfig(**kw)

    def fit(self, X, y=None):
        topo = get_topology(self.topology)
        if isinstance(X, MotionDataset):
            data = X
        else:
            arr = check_motion(X, topo.n_joints)
            data = MotionDataset(topo, [MotionSequence(a, self.fps, topo.name) for a in arr])
        self.config_ = self._config()
        self.model_, self.log_ = training.train(self.config_, data)
        return self

    def predict(self, X, masks=None) -> np.ndarray:
        check_is_fitted(self, "model_")
        arr = check_motion(X, self.model_.topology.n_joints)
        m = check_masks(masks, arr.shape)
        return training.predict_batch(self.model_, arr, m, self.noise_seed)


class _RuleCompleter(BaseEstimator):
    _rule = None

    def __init__(self, fps: float = 12.5):
        self.fps = fps

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def predict(self, X, masks=None) -> np.ndarray:
        arr = check_motion(X)
        m = check_masks(masks, arr.shape)
        rule = type(self)._rule
        return np.stack([
            rule(MotionSequence(a, self.fps, "unknown"), OcclusionMask(b)).coords for a, b in zip(arr, m)
        ])

    def transform(self, X, masks=None) -> np.ndarray:
        return self.predict(X, masks)


class ZeroVelocityCompleter(_RuleCompleter):
    """Repeat the last observed frame (future masks only)."""

    _rule = staticmethod(baselines.zero_velocity)


class LinearInterpolationCompleter(_RuleCompleter):
    """Per-channel linear interpolation across occluded frames."""

    _rule = staticmethod(baselines.linear_interpolate)
