"""Dense float64 tensors with reverse-mode differentiation.

Every backward rule is itself written in terms of the differentiable ops in
this module, so gradients can be differentiated again (``create_graph=True``).
That is what makes the input-gradient penalty on the discriminator trainable.

Broadcasting is deliberately narrow: binary ops accept equal shapes or a
0-d operand. Anything else must go through :func:`expand` explicitly.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def _grad_mode(flag: bool):
    prev = is_grad_enabled()
    _state.enabled = flag
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    """Context manager that stops graph recording on this thread."""
    return _grad_mode(False)


def enable_grad():
    return _grad_mode(True)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.value)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)
    __getitem__ = lambda self, idx: getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    out = Tensor(value)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------- graph walk


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _propagate(root: Tensor, seed: Tensor, create_graph: bool) -> dict[int, tuple[Tensor, Tensor]]:
    """Push ``seed`` back from ``root``; returns {id(leaf): (leaf, grad)}."""
    order = _toposort(root)
    grads: dict[int, Tensor] = {id(root): seed}
    leaves: dict[int, tuple[Tensor, Tensor]] = {}
    with _grad_mode(create_graph):
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                leaves[id(node)] = (node, g)
                continue
            for p, gp in zip(node._parents, node._backward(g)):
                if gp is None or not p.requires_grad:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = gp if prev is None else add(prev, gp)
    return leaves


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if root.shape != ():
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    for leaf, g in _propagate(root, Tensor(1.0), False).values():
        leaf.grad = g.value.copy() if leaf.grad is None else leaf.grad + g.value


def grad(root: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of scalar ``root`` w.r.t. ``inputs`` without touching ``.grad``.

    With ``create_graph`` the returned tensors are themselves differentiable
    functions of every leaf that fed ``root``.
    """
    if root.shape != ():
        raise ContractError(f"grad needs a scalar root, got shape {root.shape}")
    found = _propagate(root, Tensor(1.0), create_graph) if root.requires_grad else {}
    out = []
    for x in inputs:
        hit = found.get(id(x))
        out.append(hit[1] if hit is not None else Tensor(np.zeros_like(x.value)))
    return out


def input_gradient(fn: Callable[[Tensor], Tensor], x) -> Tensor:
    """∇ₓ fn(x) as a tensor that stays differentiable w.r.t. fn's parameters."""
    leaf = Tensor(as_tensor(x).value, requires_grad=True)
    with enable_grad():
        out = fn(leaf)
        return grad(out, [leaf], create_graph=True)[0]


# ------------------------------------------------------------ elementwise ops


def _binary_check(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def _reduce_like(g: Tensor, t: Tensor) -> Tensor:
    return g if g.shape == t.shape else sum_(g)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_check(a, b, "add")
    return _make(a.value + b.value, (a, b), lambda g: (_reduce_like(g, a), _reduce_like(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_check(a, b, "sub")
    return _make(a.value - b.value, (a, b), lambda g: (_reduce_like(g, a), _reduce_like(neg(g), b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_check(a, b, "mul")
    return _make(
        a.value * b.value,
        (a, b),
        lambda g: (_reduce_like(mul(g, b), a), _reduce_like(mul(g, a), b)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_check(a, b, "div")

    def bw(g):
        ga = _reduce_like(div(g, b), a)
        gb = _reduce_like(neg(div(mul(g, a), mul(b, b))), b)
        return ga, gb

    return _make(a.value / b.value, (a, b), bw)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _make(-x.value, (x,), lambda g: (neg(g),))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.value * x.value, (x,), lambda g: (mul(g, mul(2.0, x)),))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.value < 0):
        raise DomainError("sqrt of a negative value")
    y = np.sqrt(x.value)

    def bw(g):
        if not is_grad_enabled():
            return (Tensor(g.value * 0.5 / y),)
        return (div(mul(g, 0.5), sqrt(x)),)

    return _make(y, (x,), bw)


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.value <= 0):
        raise DomainError("log of a non-positive value")
    return _make(np.log(x.value), (x,), lambda g: (div(g, x),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.value)

    def bw(g):
        if not is_grad_enabled():
            return (Tensor(g.value * y),)
        return (mul(g, exp(x)),)

    return _make(y, (x,), bw)


def _sigmoid_np(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid_np(x.value)

    def bw(g):
        if not is_grad_enabled():
            return (Tensor(g.value * y * (1.0 - y)),)
        s = sigmoid(x)
        return (mul(g, mul(s, sub(1.0, s))),)

    return _make(y, (x,), bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = (x.value > 0).astype(np.float64)
    return _make(x.value * mask, (x,), lambda g: (mul(g, Tensor(mask)),))


def abs_(x) -> Tensor:
    x = as_tensor(x)
    sign = np.sign(x.value)
    return _make(np.abs(x.value), (x,), lambda g: (mul(g, Tensor(sign)),))


def clamp(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = ((x.value >= lo) & (x.value <= hi)).astype(np.float64)
    return _make(np.clip(x.value, lo, hi), (x,), lambda g: (mul(g, Tensor(inside)),))


_POINTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "relu": relu,
    "sigmoid": sigmoid,
    "log": log,
    "square": square,
    "sqrt": sqrt,
    "abs": abs_,
    "exp": exp,
}


def pointwise(kind: str, *args) -> Tensor:
    try:
        fn = _POINTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown pointwise op {kind!r}") from None
    return fn(*args)


# ------------------------------------------------------------- shape ops


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _keepdims_shape(shape, axes) -> tuple[int, ...]:
    return tuple(1 if i in axes else d for i, d in enumerate(shape))


def expand(x, shape) -> Tensor:
    """Explicit numpy-style broadcast of ``x`` to ``shape``."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        y = np.array(np.broadcast_to(x.value, shape))
    except ValueError:
        raise DimensionError(f"cannot expand {x.shape} to {shape}") from None
    return _make(y, (x,), lambda g: (sum_to(g, x.shape),))


def _sum_to_np(v: np.ndarray, shape) -> np.ndarray:
    lead = v.ndim - len(shape)
    if lead:
        v = v.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and v.shape[i] != 1)
    if axes:
        v = v.sum(axis=axes, keepdims=True)
    return v


def sum_to(x, shape) -> Tensor:
    """Adjoint of :func:`expand`: sum ``x`` down to ``shape``."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    return _make(_sum_to_np(x.value, shape), (x,), lambda g: (expand(g, x.shape),))


def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    y = x.value.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = reshape(g, _keepdims_shape(x.shape, axes))
        return (expand(g, x.shape),)

    return _make(np.asarray(y), (x,), bw)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum_(x, axes, keepdims), 1.0 / n)


def l2norm(x, axis=None, keepdims=False) -> Tensor:
    """sqrt(Σ x²) over ``axis``; the gradient at a zero vector is defined as 0."""
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    n = np.sqrt(np.sum(x.value * x.value, axis=axes, keepdims=True))
    nz = (n > 0).astype(np.float64)
    y = n if keepdims else n.reshape([d for i, d in enumerate(x.shape) if i not in axes])

    def bw(g):
        g = reshape(g, n.shape)
        if not is_grad_enabled():
            scale = np.where(nz > 0, g.value / np.where(nz > 0, n, 1.0), 0.0)
            return (Tensor(x.value * scale),)
        # n + (1 - nz) keeps the division finite where the vector is zero
        denom = add(l2norm(x, axes, keepdims=True), Tensor(1.0 - nz))
        scale = mul(div(g, denom), Tensor(nz))
        return (mul(x, expand(scale, x.shape)),)

    return _make(np.asarray(y), (x,), bw)


_REDUCE = {"sum": sum_, "mean": mean, "l2norm": l2norm}


def reduce(kind: str, x, axis=None, keepdims=False) -> Tensor:
    try:
        fn = _REDUCE[kind]
    except KeyError:
        raise ContractError(f"unknown reduction {kind!r}") from None
    return fn(x, axis, keepdims)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    y = x.value.reshape(shape)
    return _make(y, (x,), lambda g: (reshape(g, x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(a % x.ndim for a in axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.value, axes), (x,), lambda g: (transpose(g, inv),))


def swap_last(x) -> Tensor:
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ax = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(
            d != e for i, (d, e) in enumerate(zip(x.shape, xs[0].shape)) if i != ax
        ):
            raise DimensionError(f"concat: incompatible shapes {xs[0].shape} and {x.shape}")
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def bw(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(int(lo), int(hi))
            out.append(getitem(g, tuple(idx)))
        return tuple(out)

    return _make(np.concatenate([x.value for x in xs], axis=ax), tuple(xs), bw)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    nd = xs[0].ndim + 1
    ax = axis % nd
    expanded = [reshape(x, x.shape[:ax] + (1,) + x.shape[ax:]) for x in xs]
    return concat(expanded, ax)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    parts = idx if isinstance(idx, tuple) else (idx,)
    if not all(p is None or p is Ellipsis or isinstance(p, (slice, int, np.integer)) for p in parts):
        raise ContractError("getitem supports basic slicing only; use take() for index arrays")
    y = x.value[idx]
    return _make(np.array(y), (x,), lambda g: (_place(g, idx, x.shape),))


def _place(x: Tensor, idx, shape) -> Tensor:
    """Adjoint of getitem: zeros of ``shape`` with ``x`` written at ``idx``."""
    out = np.zeros(shape)
    out[idx] = x.value
    return _make(out, (x,), lambda g: (getitem(g, idx),))


def pad_zeros(x, pads: Sequence[tuple[int, int]]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(d + lo + hi for d, (lo, hi) in zip(x.shape, pads))
    idx = tuple(slice(lo, lo + d) for d, (lo, _) in zip(x.shape, pads))
    return _place(x, idx, shape)


def take(x, indices, axis: int) -> Tensor:
    """Gather along one axis with an integer index array (repeats allowed)."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    ax = axis % x.ndim
    n = x.shape[ax]
    return _make(np.take(x.value, indices, axis=ax), (x,), lambda g: (_scatter_add(g, indices, ax, n),))


def _scatter_add(x: Tensor, indices: np.ndarray, ax: int, n: int) -> Tensor:
    shape = list(x.shape)
    shape[ax] = n
    out = np.zeros(shape)
    moved = np.moveaxis(out, ax, 0)
    np.add.at(moved, indices, np.moveaxis(x.value, ax, 0))
    return _make(out, (x,), lambda g: (take(g, indices, ax),))


def reflect_pad(x, axis: int, before: int, after: int) -> Tensor:
    """Reflection padding (edge sample not repeated) along one axis."""
    x = as_tensor(x)
    n = x.shape[axis]
    idx = np.arange(-before, n + after)
    period = 2 * (n - 1) if n > 1 else 1
    idx = np.abs(idx) % period if n > 1 else np.zeros_like(idx)
    idx = np.where(idx >= n, period - idx, idx)
    return take(x, idx, axis)


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select by a constant boolean mask; differentiable in both branches."""
    m = Tensor(np.asarray(mask, dtype=np.float64))
    a, b = as_tensor(a), as_tensor(b)
    return add(mul(a, m), mul(b, sub(1.0, m)))


# ---------------------------------------------------------------- matmul


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch extents differ, {a.shape} @ {b.shape}")
    if b.ndim > a.ndim:
        raise DimensionError("matmul: right operand may not have more batch axes")

    def bw(g):
        ga = matmul(g, swap_last(b))
        if b.ndim == 2 and a.ndim > 2:
            k, n = b.shape
            gb = matmul(swap_last(reshape(a, (-1, k))), reshape(g, (-1, n)))
        else:
            gb = matmul(swap_last(a), g)
        return ga, gb

    return _make(np.matmul(a.value, b.value), (a, b), bw)


def linear(x, w, b=None) -> Tensor:
    """x @ w (+ b) applied over the last axis."""
    y = matmul(x, w)
    if b is not None:
        y = add(y, expand(b, y.shape))
    return y


# ------------------------------------------------------------- convolution
#
# conv, its input-adjoint and its weight-adjoint are the three partial
# derivatives of the trilinear form <u, conv(x, k)>, so each one's backward is
# expressed through the other two and the set is closed under differentiation.


class _ConvGeom:
    __slots__ = ("H", "W", "Ho", "Wo", "s", "kh", "kw", "pt", "pl", "Hp", "Wp")

    def __init__(self, H, W, kh, kw, s):
        self.H, self.W, self.kh, self.kw, self.s = H, W, kh, kw, s
        self.Ho, self.Wo = -(-H // s), -(-W // s)
        pad_h = max((self.Ho - 1) * s + kh - H, 0)
        pad_w = max((self.Wo - 1) * s + kw - W, 0)
        self.pt, self.pl = pad_h // 2, pad_w // 2
        self.Hp = max(H + pad_h, (self.Ho - 1) * s + kh)
        self.Wp = max(W + pad_w, (self.Wo - 1) * s + kw)

    def padded(self, x: np.ndarray) -> np.ndarray:
        return np.pad(
            x,
            ((0, 0), (self.pt, self.Hp - self.H - self.pt), (self.pl, self.Wp - self.W - self.pl), (0, 0)),
        )

    def window(self, i, j):
        s = self.s
        return (slice(None), slice(i, i + s * (self.Ho - 1) + 1, s), slice(j, j + s * (self.Wo - 1) + 1, s))


def _im2col(x, geo: _ConvGeom) -> np.ndarray:
    xp = geo.padded(x)
    cols = np.stack([xp[geo.window(i, j)] for i in range(geo.kh) for j in range(geo.kw)], axis=3)
    return cols.reshape(-1, geo.kh * geo.kw * x.shape[3])


def _conv_np(x, k, geo: _ConvGeom):
    out = _im2col(x, geo) @ k.reshape(-1, k.shape[3])
    return out.reshape(x.shape[0], geo.Ho, geo.Wo, k.shape[3])


def _conv_input_adj_np(u, k, geo: _ConvGeom):
    n, C = u.shape[0], k.shape[2]
    cols = (u.reshape(-1, u.shape[3]) @ k.reshape(-1, k.shape[3]).T).reshape(n, geo.Ho, geo.Wo, geo.kh * geo.kw, C)
    dxp = np.zeros((n, geo.Hp, geo.Wp, C))
    for i in range(geo.kh):
        for j in range(geo.kw):
            dxp[geo.window(i, j)] += cols[:, :, :, i * geo.kw + j]
    return dxp[:, geo.pt : geo.pt + geo.H, geo.pl : geo.pl + geo.W]


def _conv_weight_adj_np(x, u, geo: _ConvGeom):
    out = _im2col(x, geo).T @ u.reshape(-1, u.shape[3])
    return out.reshape(geo.kh, geo.kw, x.shape[3], u.shape[3])


def _conv(x: Tensor, k: Tensor, geo: _ConvGeom) -> Tensor:
    return _make(
        _conv_np(x.value, k.value, geo),
        (x, k),
        lambda g: (_conv_input_adj(g, k, geo), _conv_weight_adj(x, g, geo)),
    )


def _conv_input_adj(u: Tensor, k: Tensor, geo: _ConvGeom) -> Tensor:
    return _make(
        _conv_input_adj_np(u.value, k.value, geo),
        (u, k),
        lambda g: (_conv(g, k, geo), _conv_weight_adj(g, u, geo)),
    )


def _conv_weight_adj(x: Tensor, u: Tensor, geo: _ConvGeom) -> Tensor:
    return _make(
        _conv_weight_adj_np(x.value, u.value, geo),
        (x, u),
        lambda g: (_conv_input_adj(u, g, geo), _conv(x, g, geo)),
    )


def conv2d(x, k, stride: int = 1, transposed: bool = False) -> Tensor:
    """2-D convolution over (N, H, W, C) inputs with "same" padding.

    ``k`` has shape (kh, kw, C_in, C_out) for the forward convolution. With
    ``transposed=True`` the op is the adjoint of that convolution: the input
    carries C_out channels, the output C_in channels, and each spatial extent
    is multiplied by ``stride``. A rank-3 input is treated as a batch of one.
    """
    x, k = as_tensor(x), as_tensor(k)
    if stride not in (1, 2):
        raise ContractError(f"stride must be 1 or 2, got {stride}")
    if k.ndim != 4:
        raise DimensionError(f"kernel must be rank 4, got shape {k.shape}")
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be rank 3 or 4, got shape {x.shape}")
    kh, kw, cin, cout = k.shape
    if not transposed:
        if x.shape[3] != cin:
            raise DimensionError(f"conv2d: input has {x.shape[3]} channels, kernel expects {cin}")
        y = _conv(x, k, _ConvGeom(x.shape[1], x.shape[2], kh, kw, stride))
    else:
        if x.shape[3] != cout:
            raise DimensionError(f"conv2d_transpose: input has {x.shape[3]} channels, kernel expects {cout}")
        geo = _ConvGeom(x.shape[1] * stride, x.shape[2] * stride, kh, kw, stride)
        y = _conv_input_adj(x, k, geo)
    return reshape(y, y.shape[1:]) if squeeze else y
