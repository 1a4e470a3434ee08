"""Dense tensors with a define-by-run gradient tape.

Every differentiable op records a node on the active :class:`GradTape`. The
backward rule of each node is itself written with tensor ops, so running
``tape.gradient(..., create_graph=True)`` while the tape is still open records
the backward pass too. That is what the masked gradient penalty needs: the
norm of an input gradient, differentiated again with respect to critic
weights.

    >>> w = Tensor([0.0], requires_grad=True)
    >>> with GradTape() as tape:
    ...     loss = sigmoid(w).sum()
    >>> float(tape.gradient(loss, [w])[0].data[0])
    0.25
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32
_TAPES: list["GradTape"] = []
_RECORDING = [True]


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used when building tensors from Python data.

    ``float64`` exists for gradient verification only; training runs in float32.
    """
    global _DEFAULT_DTYPE
    old = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


@contextlib.contextmanager
def no_grad():
    """Suspend recording on every open tape."""
    _RECORDING.append(False)
    try:
        yield
    finally:
        _RECORDING.pop()


def _recording() -> bool:
    return bool(_TAPES) and _RECORDING[-1]


class Tensor:
    """An n-dimensional array plus the bookkeeping needed for gradients."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = _DEFAULT_DTYPE
        self.data = np.ascontiguousarray(np.asarray(data, dtype=dtype))
        self.requires_grad = requires_grad
        self.grad: Tensor | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

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


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _like(x, ref: Tensor) -> Tensor:
    """Wrap a Python scalar or array in the dtype of ``ref``."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


class _Node:
    __slots__ = ("backward", "inputs", "output")

    def __init__(self, backward, inputs, output):
        self.backward = backward
        self.inputs = inputs
        self.output = output


class GradTape:
    """Ordered record of differentiable ops executed while the tape is open.

    ``backward`` accumulates into ``.grad`` of leaf tensors (calling it twice
    doubles the gradients); ``gradient`` returns gradients without touching
    ``.grad`` and can record its own computation for a second derivative.
    """

    def __init__(self):
        self.ops: list[_Node] = []

    def __enter__(self) -> "GradTape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def reset(self) -> None:
        self.ops.clear()

    def _record(self, node: _Node) -> None:
        self.ops.append(node)

    def _live(self, sources) -> set[int]:
        """Ids of tensors that depend on any of ``sources``."""
        live = {id(t) for t in sources}
        for node in self.ops:
            if any(id(t) in live for t in node.inputs):
                live.add(id(node.output))
        return live

    def _run(self, loss: Tensor, create_graph: bool, live: set[int]) -> dict[int, Tensor]:
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, Tensor] = {id(loss): Tensor(np.ones_like(loss.data))}
        ops = list(self.ops)
        ctx = contextlib.nullcontext() if create_graph else no_grad()
        with ctx:
            for node in reversed(ops):
                g = grads.pop(id(node.output), None)
                if g is None:
                    continue
                want = tuple(t.requires_grad and id(t) in live for t in node.inputs)
                if not any(want):
                    continue
                for inp, ok, gi in zip(node.inputs, want, node.backward(g, want)):
                    if not ok or gi is None:
                        continue
                    key = id(inp)
                    grads[key] = gi if key not in grads else add(grads[key], gi)
        return grads

    def gradient(self, loss: Tensor, sources: Sequence[Tensor],
                 create_graph: bool = False) -> list[Tensor]:
        """Gradients of scalar ``loss`` with respect to each tensor in ``sources``.

        Sources must be leaves (not outputs of recorded ops); unreached sources
        get zeros. Only paths leading back to a source are traversed.
        """
        grads = self._run(loss, create_graph, self._live(sources))
        return [grads.get(id(s), Tensor(np.zeros_like(s.data))) for s in sources]

    def leaves(self) -> list[Tensor]:
        """Tensors with ``requires_grad`` that were consumed but never produced."""
        produced = {id(n.output) for n in self.ops}
        seen: dict[int, Tensor] = {}
        for node in self.ops:
            for t in node.inputs:
                if t.requires_grad and id(t) not in produced:
                    seen.setdefault(id(t), t)
        return list(seen.values())

    def backward(self, loss: Tensor, sources: Sequence[Tensor] | None = None) -> None:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf (or ``sources``)."""
        sources = self.leaves() if sources is None else list(sources)
        for leaf, g in zip(sources, self.gradient(loss, sources)):
            if leaf.grad is None:
                leaf.grad = Tensor(g.data.copy())
            else:
                leaf.grad = Tensor(leaf.grad.data + g.data)


def _make(data: np.ndarray, inputs: tuple, backward: Callable) -> Tensor:
    """Wrap an op result and record it when any input carries gradient."""
    needs = _recording() and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype)
    if needs:
        node = _Node(backward, inputs, out)
        for tape in _TAPES:
            tape._record(node)
    return out


# ---------------------------------------------------------------- broadcasting

def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    axes = tuple(range(extra)) + tuple(
        i + extra for i, n in enumerate(shape) if n == 1 and g.shape[i + extra] != 1)
    out = tsum(g, axes, keepdims=True) if axes else g
    return reshape(out, tuple(shape))


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape
    return _make(np.broadcast_to(x.data, shape).copy(), (x,),
                 lambda g, _: (_unbroadcast(g, src),))


# ---------------------------------------------------------------- arithmetic

def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = _like(a, b)
    return a, _like(b, a)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g, want: (
        _unbroadcast(g, sa) if want[0] else None,
        _unbroadcast(g, sb) if want[1] else None))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g, want: (
        _unbroadcast(g, sa) if want[0] else None,
        _unbroadcast(neg(g), sb) if want[1] else None))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g, _: (neg(g),))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape

    def backward(g, want):
        ga = _unbroadcast(mul(g, b), sa) if want[0] else None
        gb = _unbroadcast(mul(g, a), sb) if want[1] else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward)


def reciprocal(a: Tensor) -> Tensor:
    out_holder = []

    def backward(g, _):
        r = out_holder[0]
        return (neg(mul(g, mul(r, r))),)

    out = _make(1.0 / a.data, (a,), backward)
    out_holder.append(out)
    return out


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    if not b.requires_grad:
        return mul(a, Tensor((1.0 / b.data).astype(b.dtype)))
    return mul(a, reciprocal(b))


def exp(a: Tensor) -> Tensor:
    holder = []
    out = _make(np.exp(a.data), (a,), lambda g, _: (mul(g, holder[0]),))
    holder.append(out)
    return out


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g, _: (div(g, a),))


def sqrt(a: Tensor) -> Tensor:
    holder = []

    def backward(g, _):
        return (div(mul(g, 0.5), holder[0]),)

    out = _make(np.sqrt(a.data), (a,), backward)
    holder.append(out)
    return out


def absolute(a: Tensor) -> Tensor:
    sign = Tensor(np.sign(a.data))
    return _make(np.abs(a.data), (a,), lambda g, _: (mul(g, sign),))


def clip_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); the gradient is passed only where a > floor."""
    keep = Tensor((a.data > floor).astype(a.dtype))
    return _make(np.maximum(a.data, np.asarray(floor, a.dtype)), (a,),
                 lambda g, _: (mul(g, keep),))


# ---------------------------------------------------------------- activations

def sigmoid(a: Tensor) -> Tensor:
    holder = []

    def backward(g, _):
        s = holder[0]
        return (mul(g, mul(s, sub(1.0, s))),)

    x = a.data
    # split by sign to avoid exp overflow
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    # rounding would otherwise reach exactly 0 or 1 for |x| beyond ~17 (float32)
    info = np.finfo(out_data.dtype)
    np.clip(out_data, info.tiny, 1.0 - info.epsneg, out=out_data)
    out = _make(out_data, (a,), backward)
    holder.append(out)
    return out


def relu(a: Tensor) -> Tensor:
    keep = Tensor((a.data > 0).astype(a.dtype))
    return _make(a.data * keep.data, (a,), lambda g, _: (mul(g, keep),))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    scale = Tensor(np.where(a.data > 0, 1.0, slope).astype(a.dtype))
    return _make(a.data * scale.data, (a,), lambda g, _: (mul(g, scale),))


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    """ELU; the negative-side derivative is written as ``out + alpha`` so the
    backward stays differentiable."""
    pos = Tensor((a.data > 0).astype(a.dtype))
    holder = []

    def backward(g, _):
        out = holder[0]
        slope = add(pos, mul(sub(1.0, pos), add(out, alpha)))
        return (mul(g, slope),)

    x = a.data
    out_data = np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0))).astype(x.dtype)
    out = _make(out_data, (a,), backward)
    holder.append(out)
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shift = Tensor(a.data.max(axis=axis, keepdims=True))
    e = exp(sub(a, shift))
    return div(e, tsum(e, axis, keepdims=True))


# ---------------------------------------------------------------- reductions

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    src = a.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(src))

    def backward(g, _):
        return (broadcast_to(reshape(g, kept), src),)

    data = a.data.sum(axis=axes, keepdims=keepdims)
    return _make(np.asarray(data, dtype=a.dtype), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(tsum(a, axes, keepdims), 1.0 / count)


# ---------------------------------------------------------------- shape ops

def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g, _: (reshape(g, src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g, _: (transpose(g, inv),))


def getitem(a: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing; the adjoint embeds into zeros."""
    src = a.shape
    return _make(np.ascontiguousarray(a.data[key]), (a,),
                 lambda g, _: (embed(g, key, src),))


def embed(a: Tensor, key, shape) -> Tensor:
    """Zeros of ``shape`` with ``a`` written at ``key``; adjoint of getitem."""
    out = np.zeros(shape, dtype=a.dtype)
    out[key] = a.data
    return _make(out, (a,), lambda g, _: (getitem(g, key),))


def pad(a: Tensor, widths) -> Tensor:
    """Zero padding; ``widths`` is one (before, after) pair per axis."""
    widths = [tuple(w) for w in widths]
    if all(w == (0, 0) for w in widths):
        return a
    shape = tuple(n + b + e for n, (b, e) in zip(a.shape, widths))
    key = tuple(slice(b, b + n) for n, (b, _) in zip(a.shape, widths))
    return embed(a, key, shape)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])
    ndim = tensors[0].ndim

    def backward(g, _):
        out = []
        for i in range(len(tensors)):
            key = tuple(slice(bounds[i], bounds[i + 1]) if d == axis else slice(None)
                        for d in range(ndim))
            out.append(getitem(g, key))
        return tuple(out)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis)


def index_select(a: Tensor, axis: int, index) -> Tensor:
    """Gather along one axis with an integer index (repeats allowed)."""
    index = np.asarray(index, dtype=np.intp)
    axis = axis % a.ndim
    n = a.shape[axis]
    return _make(np.take(a.data, index, axis=axis), (a,),
                 lambda g, _: (index_add(g, axis, index, n),))


def index_add(a: Tensor, axis: int, index, size: int) -> Tensor:
    """Scatter-add along one axis into ``size`` slots; adjoint of index_select."""
    index = np.asarray(index, dtype=np.intp)
    axis = axis % a.ndim
    shape = list(a.shape)
    shape[axis] = size
    out = np.zeros(shape, dtype=a.dtype)
    key = (slice(None),) * axis + (index,)
    np.add.at(out, key, a.data)
    return _make(out, (a,), lambda g, _: (index_select(g, axis, index),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape

    def backward(g, want):
        ga = _unbroadcast(matmul(g, _swap(b)), sa) if want[0] else None
        gb = _unbroadcast(matmul(_swap(a), g), sb) if want[1] else None
        return ga, gb

    return _make(np.matmul(a.data, b.data), (a, b), backward)


def _swap(t: Tensor) -> Tensor:
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(t, tuple(axes))


# ---------------------------------------------------------------- sliding windows

def _out_size(n: int, k: int, stride: int) -> int:
    return (n - k) // stride + 1


def unfold(x: Tensor, k: int, stride: int = 1) -> Tensor:
    """Sliding k×k windows of an unpadded (N, C, H, W) input as (N, C*k*k, L)."""
    n, c, h, w = x.shape
    oh, ow = _out_size(h, k, stride), _out_size(w, k, stride)
    if oh < 1 or ow < 1:
        raise ValueError(f"kernel {k}x{k} does not fit input of shape {x.shape}")
    win = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1: stride, : (ow - 1) * stride + 1: stride]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, oh * ow)
    return _make(np.ascontiguousarray(cols), (x,),
                 lambda g, _: (fold(g, (h, w), k, stride),))


def fold(cols: Tensor, hw, k: int, stride: int = 1) -> Tensor:
    """Sum (N, C*k*k, L) windows back onto an (N, C, H, W) canvas."""
    h, w = hw
    n, ckk, _ = cols.shape
    c = ckk // (k * k)
    oh, ow = _out_size(h, k, stride), _out_size(w, k, stride)
    src = cols.data.reshape(n, c, k, k, oh, ow)
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i: i + stride * (oh - 1) + 1: stride,
                j: j + stride * (ow - 1) + 1: stride] += src[:, :, i, j]
    return _make(out, (cols,), lambda g, _: (unfold(g, k, stride),))


# ---------------------------------------------------------------- convolution

def _check_conv(x: Tensor, weight: Tensor, in_axis: int, name: str):
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"{name}: expected 4-d input and weight, got input {x.shape} "
                         f"and weight {weight.shape}")
    if weight.shape[2] != weight.shape[3]:
        raise ValueError(f"{name}: only square kernels are supported, got weight {weight.shape}")
    if x.shape[1] != weight.shape[in_axis]:
        raise ValueError(f"{name}: input {x.shape} has {x.shape[1]} channels but weight "
                         f"{weight.shape} expects {weight.shape[in_axis]}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding=0) -> Tensor:
    """Cross-correlation of (N, C, H, W) with (O, C, k, k) weights.

    ``padding`` is an int or ``((top, bottom), (left, right))`` of zeros.
    """
    _check_conv(x, weight, 1, "conv2d")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if isinstance(padding, int):
        padding = ((padding, padding), (padding, padding))
    x = pad(x, ((0, 0), (0, 0)) + tuple(padding))
    o, c, k, _ = weight.shape
    n, _, h, w = x.shape
    oh, ow = _out_size(h, k, stride), _out_size(w, k, stride)
    cols = unfold(x, k, stride)
    out = matmul(reshape(weight, (o, c * k * k)), cols)
    out = reshape(out, (n, o, oh, ow))
    if bias is not None:
        out = add(out, reshape(bias, (1, o, 1, 1)))
    return out


def conv2d_transpose(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d`: (N, C_in, H, W) with (C_in, C_out, k, k) weights.

    Output size is ``(H - 1) * stride - 2 * padding + k``.
    """
    _check_conv(x, weight, 0, "conv2d_transpose")
    if stride < 1:
        raise ValueError(f"conv2d_transpose: stride must be >= 1, got {stride}")
    ci, co, k, _ = weight.shape
    n, _, h, w = x.shape
    full_h, full_w = (h - 1) * stride + k, (w - 1) * stride + k
    w_t = transpose(reshape(weight, (ci, co * k * k)), (1, 0))
    cols = matmul(w_t, reshape(x, (n, ci, h * w)))
    out = fold(cols, (full_h, full_w), k, stride)
    if padding:
        out = getitem(out, (slice(None), slice(None),
                            slice(padding, full_h - padding), slice(padding, full_w - padding)))
    if bias is not None:
        out = add(out, reshape(bias, (1, co, 1, 1)))
    return out


def circular_pad_w(x: Tensor, left: int, right: int) -> Tensor:
    """Wrap-around padding along the last (width) axis."""
    if left == 0 and right == 0:
        return x
    w = x.shape[-1]
    idx = np.arange(-left, w + right) % w
    return index_select(x, -1, idx)


def upsample_nearest(x: Tensor, size) -> Tensor:
    """Nearest-neighbour resize of the two trailing axes to ``size``."""
    h, w = x.shape[-2:]
    th, tw = size
    if (th, tw) == (h, w):
        return x
    out = x
    if th != h:
        out = index_select(out, -2, (np.arange(th) * h) // th)
    if tw != w:
        out = index_select(out, -1, (np.arange(tw) * w) // tw)
    return out


# ---------------------------------------------------------------- gradient checks

def finite_difference(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3,
                      indices: Iterable[int] | None = None) -> Tensor:
    """Central-difference estimate of the gradient of scalar ``f`` at ``x``.

    ``indices`` restricts the probe to selected flat positions (others stay 0).
    """
    base = x.data.copy()
    grad = np.zeros(base.size, dtype=np.float64)
    flat = x.data.reshape(-1)
    probe = range(base.size) if indices is None else indices
    with no_grad():
        for i in probe:
            old = flat[i]
            flat[i] = old + eps
            hi = float(np.sum(f(x).data, dtype=np.float64))
            flat[i] = old - eps
            lo = float(np.sum(f(x).data, dtype=np.float64))
            flat[i] = old
            grad[i] = (hi - lo) / (2 * eps)
    x.data[...] = base
    return Tensor(grad.reshape(base.shape).astype(x.dtype))


def second_order_grad_norm(critic: Callable[[Tensor], Tensor], x_hat: Tensor,
                           mask: Tensor) -> Tensor:
    """Per-item ‖∇ₓ critic(x) ⊙ (1 − mask)‖₂, differentiable w.r.t. critic weights.

    Must run inside an open, recording :class:`GradTape` if the result is to
    be backpropagated; otherwise a private tape is used and the result is a
    plain value.
    """
    if not _recording():
        # the inner input gradient needs a tape even when the caller disabled
        # recording; use a private one so outer tapes stay untouched
        saved = list(_TAPES)
        _TAPES.clear()
        _RECORDING.append(True)
        try:
            with GradTape() as tape:
                out = _grad_norm(critic, x_hat, mask, tape)
        finally:
            _RECORDING.pop()
            _TAPES[:] = saved
        return Tensor(out.data)
    return _grad_norm(critic, x_hat, mask, _TAPES[-1])


def _grad_norm(critic, x_hat: Tensor, mask: Tensor, tape: GradTape) -> Tensor:
    x = Tensor(x_hat.data, requires_grad=True)
    scores = critic(x)
    if scores.ndim != 1 and not (scores.ndim == 2 and scores.shape[1] == 1):
        raise ValueError(f"critic must return one score per item, got shape {scores.shape}")
    if scores.shape[0] != x.shape[0]:
        raise ValueError(f"critic returned {scores.shape[0]} scores for {x.shape[0]} items")
    (g,) = tape.gradient(tsum(scores), [x], create_graph=True)
    g = mul(g, sub(1.0, _like(mask, g)))
    sq = tsum(mul(g, g), tuple(range(1, g.ndim)))
    return sqrt(add(sq, 1e-20))
