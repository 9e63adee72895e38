"""Skeleton topology, motion sequences, occlusion masks and their file formats.

Sequence file (``.mseq``, little-endian)::

    b"MSEQ" | version u32 | fps f64 | F u64 | J u64 | topo_len u32 | topo utf-8
    | F*J*3 f64 row-major coordinates (mm)

Mask file (``.mmsk``)::

    b"MMSK" | version u32 | F u64 | J u64 | F*J*3 u8 (1 visible, 0 occluded)

A dataset is a directory holding a line-oriented ``manifest.txt`` with
``<relative-path> <train|val>`` per sequence file.
"""
from __future__ import annotations

import csv
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ContractError, DimensionError, FormatError

SEQ_MAGIC = b"MSEQ"
MASK_MAGIC = b"MMSK"
FORMAT_VERSION = 1
MANIFEST = "manifest.txt"
SPLITS = ("train", "val")


@dataclass(frozen=True)
class SkeletonTopology:
    name: str
    joint_names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    limb_pairs: tuple[tuple[int, int], ...]
    hip: int
    left_hip: int
    right_hip: int
    extremities: tuple[int, ...] = ()

    def __post_init__(self):
        J = len(self.joint_names)
        idx = [i for e in self.edges for i in e] + [self.hip, self.left_hip, self.right_hip]
        idx += [i for p in self.limb_pairs for i in p]
        if any(not 0 <= i < J for i in idx):
            raise ContractError(f"topology {self.name}: joint index out of range")
        if len(self.edges) != J - 1:
            raise ContractError(f"topology {self.name}: a tree over {J} joints needs {J - 1} edges")
        seen = {self.hip}
        frontier = [self.hip]
        adj = self.adjacency
        while frontier:
            j = frontier.pop()
            for n in adj[j]:
                if n not in seen:
                    seen.add(n)
                    frontier.append(n)
        if len(seen) != J:
            raise ContractError(f"topology {self.name}: edges do not connect all joints to the hip")

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    @property
    def n_bones(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> dict[int, list[int]]:
        adj = {j: [] for j in range(len(self.joint_names))}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return adj

    @cached_property
    def parents(self) -> dict[int, int]:
        par = {self.hip: -1}
        frontier = [self.hip]
        while frontier:
            j = frontier.pop()
            for n in self.adjacency[j]:
                if n not in par:
                    par[n] = j
                    frontier.append(n)
        return par

    @cached_property
    def limb_chains(self) -> tuple[tuple[int, ...], ...]:
        """Paths from each extremity toward the root, stopping before a branch point."""
        ends = self.extremities or tuple(sorted({i for p in self.limb_pairs for i in p}))
        chains = []
        for end in ends:
            chain = [end]
            j = self.parents[end]
            while j != -1 and j != self.hip and len(self.adjacency[j]) <= 2:
                chain.append(j)
                j = self.parents[j]
            chains.append(tuple(chain))
        return tuple(chains)


def _h36m17() -> SkeletonTopology:
    names = (
        "hip", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
        "spine", "thorax", "neck", "head",
        "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
    )
    edges = (
        (0, 1), (1, 2), (2, 3), (0, 4), (4, 5), (5, 6),
        (0, 7), (7, 8), (8, 9), (9, 10),
        (8, 11), (11, 12), (12, 13), (8, 14), (14, 15), (15, 16),
    )
    ext = (10, 13, 16, 6, 3)
    pairs = tuple((a, b) for i, a in enumerate(ext) for b in ext[i + 1 :])
    return SkeletonTopology("h36m17", names, edges, pairs, hip=0, left_hip=4, right_hip=1, extremities=ext)


def _tiny4() -> SkeletonTopology:
    names = ("hip", "l_hip", "r_hip", "head")
    edges = ((0, 1), (0, 2), (0, 3))
    ext = (1, 2, 3)
    pairs = ((1, 2), (1, 3), (2, 3))
    return SkeletonTopology("tiny4", names, edges, pairs, hip=0, left_hip=1, right_hip=2, extremities=ext)


TOPOLOGIES: dict[str, SkeletonTopology] = {t.name: t for t in (_h36m17(), _tiny4())}
DEFAULT_TOPOLOGY = TOPOLOGIES["h36m17"]


def get_topology(name: str) -> SkeletonTopology:
    try:
        return TOPOLOGIES[name]
    except KeyError:
        raise FormatError(f"unknown topology {name!r}") from None


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MotionSequence:
    """F×J×3 joint coordinates in millimetres, camera frame, Z up."""

    coords: np.ndarray
    fps: float = 12.5
    topology: str = "h36m17"

    def __post_init__(self):
        c = _frozen(self.coords, np.float64)
        if c.ndim != 3 or c.shape[2] != 3:
            raise DimensionError(f"sequence must be F×J×3, got {c.shape}")
        if c.shape[0] < 2:
            raise ContractError("a sequence needs at least 2 frames")
        if not np.all(np.isfinite(c)):
            raise ContractError("sequence coordinates must be finite")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def n_frames(self) -> int:
        return self.coords.shape[0]

    @property
    def n_joints(self) -> int:
        return self.coords.shape[1]

    def replace(self, coords) -> "MotionSequence":
        return MotionSequence(coords, self.fps, self.topology)

    def crop(self, start: int, length: int) -> "MotionSequence":
        return self.replace(self.coords[start : start + length])


@dataclass(frozen=True)
class OcclusionMask:
    """Binary F×J×3 array, 1 where the entry is observed."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 3 or b.shape[2] != 3:
            raise DimensionError(f"mask must be F×J×3, got {b.shape}")
        if not np.all((b == 0) | (b == 1)):
            raise ContractError("mask entries must be 0 or 1")
        object.__setattr__(self, "bits", _frozen(b, np.uint8))

    @property
    def shape(self):
        return self.bits.shape

    @classmethod
    def ones(cls, F: int, J: int) -> "OcclusionMask":
        return cls(np.ones((F, J, 3), np.uint8))

    def as_float(self) -> np.ndarray:
        return self.bits.astype(np.float64)

    def joint_visible(self) -> np.ndarray:
        """F×J booleans: all three coordinates of the joint observed."""
        return self.bits.all(axis=2)

    def visible_fraction(self) -> float:
        return float(self.bits.mean())


@dataclass
class MotionDataset:
    topology: SkeletonTopology
    sequences: list[MotionSequence]
    splits: list[str] = field(default_factory=list)
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.splits:
            self.splits = ["train"] * len(self.sequences)
        if not self.names:
            self.names = [f"seq_{i:05d}" for i in range(len(self.sequences))]
        if not (len(self.splits) == len(self.names) == len(self.sequences)):
            raise ContractError("sequences, splits and names must align")
        fps = {s.fps for s in self.sequences}
        if len(fps) > 1:
            raise ContractError(f"dataset mixes frame rates {sorted(fps)}")
        for s in self.sequences:
            if s.n_joints != self.topology.n_joints or s.topology != self.topology.name:
                raise ContractError(f"sequence topology does not match {self.topology.name}")
        for t in self.splits:
            if t not in SPLITS:
                raise ContractError(f"unknown split tag {t!r}")

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    @property
    def fps(self) -> float:
        return self.sequences[0].fps if self.sequences else 12.5

    def subset(self, split: str) -> "MotionDataset":
        keep = [i for i, t in enumerate(self.splits) if t == split]
        return MotionDataset(
            self.topology,
            [self.sequences[i] for i in keep],
            [self.splits[i] for i in keep],
            [self.names[i] for i in keep],
        )

    def stack(self) -> np.ndarray:
        return np.stack([s.coords for s in self.sequences])


def apply_mask(s: MotionSequence, m: OcclusionMask) -> MotionSequence:
    """Element-wise product S∘M; occluded entries become exactly 0."""
    if s.coords.shape != m.shape:
        raise DimensionError(f"mask shape {m.shape} != sequence shape {s.coords.shape}")
    return s.replace(np.where(m.bits == 1, s.coords, 0.0))


# ------------------------------------------------------------------ file IO


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.path, self.pos = data, path, 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise FormatError(f"{self.path}: truncated header")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def raw(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated payload")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.path}: {len(self.data) - self.pos} trailing bytes")


def write_sequence(s: MotionSequence, path) -> None:
    topo = s.topology.encode("utf-8")
    F, J, _ = s.coords.shape
    header = SEQ_MAGIC + struct.pack("<IdQQI", FORMAT_VERSION, s.fps, F, J, len(topo)) + topo
    Path(path).write_bytes(header + np.ascontiguousarray(s.coords, dtype="<f8").tobytes())


def read_sequence(path, topology: SkeletonTopology | None = None) -> MotionSequence:
    r = _Reader(Path(path).read_bytes(), path)
    if r.raw(4) != SEQ_MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, fps, F, J, n = r.take("<IdQQI")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    topo = r.raw(n).decode("utf-8")
    coords = np.frombuffer(r.raw(8 * F * J * 3), dtype="<f8").reshape(F, J, 3).astype(np.float64)
    r.finish()
    if topology is not None and (topo != topology.name or J != topology.n_joints):
        raise FormatError(f"{path}: topology {topo}/{J} joints does not match {topology.name}")
    return MotionSequence(coords, fps, topo)


def write_mask(m: OcclusionMask, path) -> None:
    F, J, _ = m.shape
    header = MASK_MAGIC + struct.pack("<IQQ", FORMAT_VERSION, F, J)
    Path(path).write_bytes(header + m.bits.tobytes())


def read_mask(path) -> OcclusionMask:
    r = _Reader(Path(path).read_bytes(), path)
    if r.raw(4) != MASK_MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, F, J = r.take("<IQQ")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    bits = np.frombuffer(r.raw(F * J * 3), dtype=np.uint8).reshape(F, J, 3)
    r.finish()
    return OcclusionMask(bits.copy())


def write_dataset(d: MotionDataset, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, s, split in zip(d.names, d.sequences, d.splits):
        rel = f"{name}.mseq"
        write_sequence(s, root / rel)
        lines.append(f"{rel} {split}")
    (root / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return root


def read_manifest(path) -> list[tuple[str, str]]:
    root = Path(path)
    mf = root / MANIFEST
    if not mf.exists():
        raise FormatError(f"{root}: no {MANIFEST}")
    entries = []
    for n, line in enumerate(mf.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in SPLITS:
            raise FormatError(f"{mf}:{n}: expected '<relative-path> <train|val>'")
        entries.append((parts[0], parts[1]))
    return entries


def read_dataset(path, split: str | None = None, workers: int = 1) -> MotionDataset:
    root = Path(path)
    entries = read_manifest(root)
    if split is not None:
        entries = [e for e in entries if e[1] == split]
    paths = [root / rel for rel, _ in entries]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            seqs = list(ex.map(read_sequence, paths))
    else:
        seqs = [read_sequence(p) for p in paths]
    if not seqs:
        raise FormatError(f"{root}: manifest lists no sequences")
    topo_names = {s.topology for s in seqs}
    if len(topo_names) != 1:
        raise FormatError(f"{root}: mixed topologies {sorted(topo_names)}")
    topo = get_topology(topo_names.pop())
    names = [Path(rel).with_suffix("").as_posix() for rel, _ in entries]
    try:
        return MotionDataset(topo, seqs, [t for _, t in entries], names)
    except ContractError as e:
        raise FormatError(f"{root}: {e}") from None


def read_csv_sequence(path, fps: float = 12.5, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> MotionSequence:
    """One row per frame, 3J columns ordered x0,y0,z0,x1,... (no header)."""
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    arr = np.array(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3 * topology.n_joints:
        raise FormatError(f"{path}: expected {3 * topology.n_joints} columns per row")
    return MotionSequence(arr.reshape(len(arr), topology.n_joints, 3), fps, topology.name)


def write_csv_sequence(s: MotionSequence, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for frame in s.coords.reshape(s.n_frames, -1):
            w.writerow([repr(float(v)) for v in frame])
