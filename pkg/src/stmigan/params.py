"""Named parameter storage, Adam, and the flat binary checkpoint format.

Binary layout (little-endian)::

    b"STMI" | version u32 | count u32
    repeated count times:
        name_len u32 | name utf-8 | rank u32 | dims u64 * rank | f64 * prod(dims)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, NumericError
from .tensor import Tensor

MAGIC = b"STMI"
VERSION = 1


class ParameterStore:
    """Ordered mapping of parameter name to leaf :class:`Tensor`.

    Initialisers draw from one generator seeded at construction, so the same
    sequence of ``add_*`` calls with the same seed yields identical values.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.params: dict[str, Tensor] = {}

    def __contains__(self, name):
        return name in self.params

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def add_normal(self, name: str, shape, fan_in: int, gain: float = 2.0) -> Tensor:
        std = np.sqrt(gain / max(fan_in, 1))
        return self.add(name, self.rng.normal(0.0, std, size=shape))

    def add_zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def subset(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    def zero_grad(self, prefix: str = "") -> None:
        for k, v in self.params.items():
            if k.startswith(prefix):
                v.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            if k not in self.params:
                raise FormatError(f"checkpoint has unknown parameter {k!r}")
            if self.params[k].shape != v.shape:
                raise FormatError(f"parameter {k!r}: shape {v.shape} != expected {self.params[k].shape}")
            self.params[k].value = np.array(v, dtype=np.float64)
        missing = set(self.params) - set(state)
        if missing:
            raise FormatError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")

    def check_finite(self) -> None:
        for k, v in self.params.items():
            if not np.all(np.isfinite(v.value)):
                raise NumericError(-1, f"parameter {k}")


@dataclass
class Adam:
    """Adam with bias correction over a fixed set of named parameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray] | None = None) -> None:
        if grads is None:
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(self.t, f"gradient of {k}")
            if k not in self.m:
                self.m[k] = np.zeros_like(p.value)
                self.v[k] = np.zeros_like(p.value)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(store: ParameterStore, grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, opt: Adam | None = None) -> Adam:
    """One Adam update of ``store`` in place; returns the optimiser state to reuse."""
    opt = opt or Adam(lr, beta1, beta2, eps)
    opt.step(store.params, grads)
    return opt


def save_store(store: ParameterStore, path) -> None:
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(store))
    for name, t in store.items():
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", t.ndim)
        out += struct.pack(f"<{t.ndim}Q", *t.shape)
        out += np.ascontiguousarray(t.value, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def read_store_arrays(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise FormatError(f"{path}: truncated")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    arrays = {}
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated")
        name = data[pos : pos + n].decode("utf-8")
        pos += n
        (rank,) = take("<I")
        dims = take(f"<{rank}Q") if rank else ()
        nbytes = 8 * int(np.prod(dims, dtype=np.int64))
        if pos + nbytes > len(data):
            raise FormatError(f"{path}: truncated payload for {name!r}")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=pos).reshape(dims).astype(np.float64)
        pos += nbytes
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return arrays


def load_store(path, seed: int = 0) -> ParameterStore:
    store = ParameterStore(seed)
    for name, arr in read_store_arrays(path).items():
        store.add(name, arr)
    return store
