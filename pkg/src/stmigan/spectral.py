"""Power-spectrum entropy and KL divergence between motion sets, plus coordinate L2.

Every scalar coordinate channel (joint × axis) of a sequence is a feature.
Spectra are taken over a frame window, zero-padded to the next power of two,
with natural logarithms throughout. A feature with no energy at all is
treated as a pure DC signal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import MotionDataset, MotionSequence
from .errors import ContractError, DimensionError

EPS = 1e-8
WINDOWS_S = ((0.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 4.0), (0.0, 4.0))


def next_pow2(n: int) -> int:
    if n < 1:
        raise ContractError("window must contain at least one frame")
    return 1 << (n - 1).bit_length()


def fft(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 DFT over the last axis (length must be a power of two)."""
    a = np.asarray(x, dtype=np.complex128)
    n = a.shape[-1]
    if n & (n - 1):
        raise ContractError(f"fft length {n} is not a power of two")
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((np.arange(n) >> b) & 1) << (bits - 1 - b)
    a = a[..., rev]
    lead = a.shape[:-1]
    m = 1
    while m < n:
        w = np.exp(-2j * np.pi * np.arange(m) / (2 * m))
        blocks = a.reshape(lead + (n // (2 * m), 2, m))
        even = blocks[..., 0, :]
        odd = blocks[..., 1, :] * w
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        m *= 2
    return a


def power_spectrum(signal: np.ndarray, fft_len: int | None = None) -> np.ndarray:
    """|DFT|² of the zero-padded signal(s) over the last axis."""
    signal = np.asarray(signal, dtype=np.float64)
    L = signal.shape[-1]
    n = fft_len or next_pow2(L)
    if n < L:
        raise ContractError(f"fft length {n} shorter than the window {L}")
    padded = np.zeros(signal.shape[:-1] + (n,))
    padded[..., :L] = signal
    return np.abs(fft(padded)) ** 2


def _as_array(data) -> np.ndarray:
    """Accept a dataset, a list of sequences or an (N, F, J, 3) array."""
    if isinstance(data, MotionDataset):
        return data.stack()
    if isinstance(data, MotionSequence):
        return data.coords[None]
    if isinstance(data, (list, tuple)):
        if not data:
            raise ContractError("empty motion set")
        if isinstance(data[0], MotionSequence):
            shapes = {s.coords.shape for s in data}
            if len(shapes) != 1:
                raise DimensionError(f"sequences differ in shape: {sorted(shapes)}")
            return np.stack([s.coords for s in data])
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise DimensionError(f"expected N×F×J×3 motion, got shape {arr.shape}")
    return arr


def _window(arr: np.ndarray, window) -> np.ndarray:
    if window is None:
        return arr
    a, b = window
    if not 0 <= a < b <= arr.shape[1]:
        raise ContractError(f"frame window {window} outside [0, {arr.shape[1]}]")
    return arr[:, a:b]


def feature_spectra(data, window=None) -> np.ndarray:
    """Normalized spectra, shape (N, features, E), each row summing to 1."""
    arr = _window(_as_array(data), window)
    n, L = arr.shape[:2]
    sig = arr.reshape(n, L, -1).transpose(0, 2, 1)
    ps = power_spectrum(sig)
    tot = ps.sum(axis=-1, keepdims=True)
    dead = tot[..., 0] <= 0
    ps[dead] = 0.0
    ps[dead, 0] = 1.0
    tot[dead] = 1.0
    return ps / tot


def _entropy(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=-1)


def psent(data, window=None) -> float:
    """Mean over sequences and features of the normalized-spectrum entropy."""
    return float(_entropy(feature_spectra(data, window)).mean())


@dataclass(frozen=True)
class SpectrumProfile:
    """Per-feature mean normalized spectrum (+ε, renormalised) of a motion set."""

    table: np.ndarray
    eps: float = EPS

    @property
    def n_features(self) -> int:
        return self.table.shape[0]

    @property
    def fft_len(self) -> int:
        return self.table.shape[1]


def spectrum_profile(data, window=None, eps: float = EPS) -> SpectrumProfile:
    mean = feature_spectra(data, window).mean(axis=0) + eps
    return SpectrumProfile(mean / mean.sum(axis=-1, keepdims=True), eps)


def kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.sum(p * (np.log(p) - np.log(q)), axis=-1)


def pskl(c, d, window=None, eps: float = EPS) -> float:
    """Mean over features of KL(profile(c) ‖ profile(d)); asymmetric by design."""
    pc = c if isinstance(c, SpectrumProfile) else spectrum_profile(c, window, eps)
    pd = d if isinstance(d, SpectrumProfile) else spectrum_profile(d, window, eps)
    if pc.table.shape != pd.table.shape:
        raise DimensionError(f"profile shapes differ: {pc.table.shape} vs {pd.table.shape}")
    return float(kl_rows(pc.table, pd.table).mean())


def l2_coords(gt, gen, frame_range=None, cell_mask=None) -> float:
    """Mean per-joint Euclidean distance (mm) over the selected frames or cells.

    ``cell_mask`` is a boolean F×J (or N×F×J) array; when given, only those
    joint-frames are averaged.
    """
    a, b = _as_array(gt), _as_array(gen)
    if a.shape != b.shape:
        raise DimensionError(f"gt {a.shape} and gen {b.shape} differ")
    dist = np.linalg.norm(a - b, axis=-1)
    if cell_mask is not None:
        cm = np.broadcast_to(np.asarray(cell_mask, bool), dist.shape)
    else:
        cm = np.ones(dist.shape, bool)
    if frame_range is not None:
        lo, hi = frame_range
        sel = np.zeros(dist.shape[1], bool)
        sel[lo:hi] = True
        cm = cm & sel[None, :, None]
    if not cm.any():
        raise ContractError("no joint-frames selected for L2")
    return float(dist[cm].mean())


def window_frames(window_s, fps: float) -> tuple[int, int]:
    """[start, end) seconds → [start, end) frames via nearest-frame rounding."""
    a, b = window_s
    return int(math.floor(a * fps + 0.5)), int(math.floor(b * fps + 0.5))


def fitting_windows(n_frames: int, fps: float, windows=WINDOWS_S) -> list[tuple]:
    """The subset of ``windows`` (seconds) that ends inside ``n_frames``."""
    return [tuple(w) for w in windows if window_frames(w, fps)[1] <= n_frames]


@dataclass
class MetricReport:
    window_s: tuple
    frames: tuple
    fft_len: int
    psent: float
    pskl_gt_gen: float
    pskl_gen_gt: float
    l2_mm: float
    meta: dict = field(default_factory=dict)

    COLUMNS = ("window_start_s", "window_end_s", "psent", "pskl_gt_gen", "pskl_gen_gt", "l2_mm")

    def row(self) -> list:
        return [float(self.window_s[0]), float(self.window_s[1]), self.psent, self.pskl_gt_gen, self.pskl_gen_gt,
                self.l2_mm]


def windowed_report(gt, gen, fps: float = 12.5, windows=WINDOWS_S, eps: float = EPS) -> list[MetricReport]:
    """Spectral metrics and L2 per time window; PSEnt is that of ``gen``."""
    a, b = _as_array(gt), _as_array(gen)
    if a.shape[1:] != b.shape[1:]:
        raise DimensionError(f"gt frames {a.shape[1:]} and gen frames {b.shape[1:]} differ")
    out = []
    for w in windows:
        fr = window_frames(w, fps)
        if fr[1] > a.shape[1]:
            raise ContractError(f"window {w} s needs {fr[1]} frames, sequences have {a.shape[1]}")
        out.append(MetricReport(
            window_s=tuple(w), frames=fr, fft_len=next_pow2(fr[1] - fr[0]),
            psent=psent(b, fr), pskl_gt_gen=pskl(a, b, fr, eps), pskl_gen_gt=pskl(b, a, fr, eps),
            l2_mm=l2_coords(a, b, fr) if a.shape == b.shape else float("nan"),
            meta={"eps": eps, "log_base": "e", "fps": fps},
        ))
    return out


def write_reports_csv(path, reports: list[MetricReport], extra_meta: dict | None = None) -> None:
    # per-window padding lengths go in the header since the columns are fixed
    meta = {"fft_len": "/".join(str(r.fft_len) for r in reports), "eps": EPS, "log_base": "e"}
    if reports:
        meta.update(reports[0].meta)
    meta.update(extra_meta or {})
    with open(path, "w") as fh:
        fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        fh.write(",".join(MetricReport.COLUMNS) + "\n")
        for r in reports:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in r.row()) + "\n")
