"""Dense float64 tensors with a dynamic reverse-mode autodiff graph.

Each op computes its forward value with numpy and, when any input requires
gradients, records a closure mapping the output gradient to one gradient per
parent. ``Tensor.backward`` walks the graph in reverse topological order and
accumulates into the ``grad`` of leaf tensors.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_DTYPE = np.float64
_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (evaluation and finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the floating dtype used for new tensors."""
    global _DTYPE
    prev = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = prev


def default_dtype():
    return _DTYPE


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        out = cls(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # -- backward -------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without grad needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return Tensor._from_op(a.data / b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports 1-D operands and leading batch dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul: scalar operands are not allowed")
    inner_a = a.shape[-1]
    inner_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if inner_a != inner_b:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ad, bd = a.data, b.data
        a2 = ad[None, :] if ad.ndim == 1 else ad
        b2 = bd[:, None] if bd.ndim == 1 else bd
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
        gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
        if ad.ndim == 1:
            ga = np.squeeze(ga, -2)
        if bd.ndim == 1:
            gb = np.squeeze(gb, -1)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._from_op(out, (a, b), backward)


# -- nonlinearities -------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return Tensor._from_op(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return Tensor._from_op(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return Tensor._from_op(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def _check_axis(op: str, a: Tensor, axis: int) -> int:
    if a.ndim == 0:
        raise ShapeError(f"{op}: needs at least one axis")
    axis = axis % a.ndim
    if a.shape[axis] == 0:
        raise ShapeError(f"{op}: axis {axis} of shape {a.shape} is empty")
    return axis


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis("softmax", a, axis)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(s, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis("log_softmax", a, axis)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (a,), backward)


# -- reductions and shape ops -------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    if count == 0:
        raise ShapeError(f"mean: empty reduction over shape {a.shape}")
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return Tensor._from_op(out, (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing; use ``take`` for integer-array gathers."""
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return Tensor._from_op(np.array(out), (a,), backward)


def take(a: Tensor, indices) -> Tensor:
    """Gather rows along axis 0; ``indices`` may have any shape."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < -a.shape[0] or idx.max() >= a.shape[0]):
        raise IndexError(f"take: index out of range for axis 0 of extent {a.shape[0]}")
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._from_op(out, (a,), backward)


def pick(a: Tensor, indices, axis: int = -1) -> Tensor:
    """Select one entry per position along ``axis`` (e.g. target log-probs)."""
    axis = axis % a.ndim
    idx = np.expand_dims(np.asarray(indices, dtype=np.intp), axis)
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return Tensor._from_op(out, (a,), backward)


def segment_sum(a: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``a`` (axis 0) into ``num_segments`` buckets."""
    ids = np.asarray(segment_ids, dtype=np.intp)
    if ids.shape != (a.shape[0],):
        raise ShapeError(f"segment_sum: {ids.shape[0] if ids.ndim else 0} ids for {a.shape[0]} rows")
    out = np.zeros((num_segments,) + a.shape[1:], dtype=a.data.dtype)
    np.add.at(out, ids, a.data)
    return Tensor._from_op(out, (a,), lambda g: (g[ids],))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no operands")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise ShapeError(
                f"concat: shapes {[x.shape for x in tensors]} disagree off axis {axis}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return Tensor._from_op(out, tensors, backward)


def pad(a: Tensor, axis: int, before: int = 0, after: int = 0) -> Tensor:
    """Zero-pad along one axis."""
    axis = axis % a.ndim
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    out = np.pad(a.data, widths)
    keep = [slice(None)] * a.ndim
    keep[axis] = slice(before, before + a.shape[axis])
    keep = tuple(keep)
    return Tensor._from_op(out, (a,), lambda g: (g[keep],))


# -- fused layers used by the coherence model ------------------------------------------


def bilinear(x: Tensor, w: Tensor, y: Tensor, b: Tensor) -> Tensor:
    """out[..., r] = x[..., :] @ w[r] @ y[..., :] + b[r]."""
    if w.ndim != 3 or b.shape != (w.shape[0],):
        raise ShapeError(f"bilinear: weight {w.shape} / bias {b.shape} malformed")
    q, da, dc = w.shape
    if x.shape[-1] != da or y.shape[-1] != dc or x.shape[:-1] != y.shape[:-1]:
        raise ShapeError(f"bilinear: inputs {x.shape}, {y.shape} do not fit weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, da)
    y2 = y.data.reshape(-1, dc)
    # wt[i, r*dc + j] = w[r, i, j]
    wt = np.transpose(w.data, (1, 0, 2)).reshape(da, q * dc)
    xw = (x2 @ wt).reshape(-1, q, dc)
    out = np.einsum("nrj,nj->nr", xw, y2) + b.data

    def backward(g):
        g2 = g.reshape(-1, q)
        gxw = g2[:, :, None] * y2[:, None, :]
        gx = gxw.reshape(-1, q * dc) @ wt.T
        gy = np.einsum("nr,nrj->nj", g2, xw)
        gw = (x2.T @ gxw.reshape(-1, q * dc)).reshape(da, q, dc).transpose(1, 0, 2)
        return gx.reshape(x.shape), gw, gy.reshape(y.shape), g2.sum(axis=0)

    return Tensor._from_op(out.reshape(lead + (q,)), (x, w, y, b), backward)


def depthwise_conv1d(h: Tensor, w: Tensor) -> Tensor:
    """Per-channel 1-D convolution along axis -2 with zero padding.

    ``h`` is (..., n, d) and ``w`` is (d, k) with odd k. Output row i reads
    input rows i - (k-1)/2 ... i + (k-1)/2, so the output length stays n.
    """
    if w.ndim != 2:
        raise ShapeError(f"depthwise_conv1d: kernel must be (d, k), got {w.shape}")
    d, k = w.shape
    if k < 1 or k % 2 == 0:
        raise ValueError(f"depthwise_conv1d: kernel width must be odd and >= 1, got {k}")
    if h.ndim < 2 or h.shape[-1] != d:
        raise ShapeError(f"depthwise_conv1d: input {h.shape} has no channel axis of size {d}")
    n = h.shape[-2]
    half = (k - 1) // 2
    widths = [(0, 0)] * h.ndim
    widths[-2] = (half, half)
    hp = np.pad(h.data, widths)
    out = np.zeros_like(h.data)
    for j in range(k):
        out += w.data[:, j] * hp[..., j : j + n, :]

    def backward(g):
        ghp = np.zeros_like(hp)
        gw = np.empty_like(w.data)
        red = tuple(range(g.ndim - 1))
        for j in range(k):
            ghp[..., j : j + n, :] += g * w.data[:, j]
            gw[:, j] = (g * hp[..., j : j + n, :]).sum(axis=red)
        return ghp[..., half : half + n, :], gw

    return Tensor._from_op(out, (h, w), backward)


def lstm_sequence(x: Tensor, mask: np.ndarray, wx: Tensor, wh: Tensor, b: Tensor) -> Tensor:
    """Run a single-layer LSTM over right-padded sequences.

    ``x`` is (S, T, e), ``mask`` (S, T) marks real steps, ``wx`` (e, 4p),
    ``wh`` (p, 4p), ``b`` (4p,) with gate blocks ordered input, forget, cell,
    output. Returns all hidden states (S, T, p); on padded steps the state is
    carried over unchanged, so ``out[:, -1]`` is each sequence's final state.
    """
    S, T, e = x.shape
    p = wh.shape[0]
    if wx.shape != (e, 4 * p) or wh.shape != (p, 4 * p) or b.shape != (4 * p,):
        raise ShapeError(
            f"lstm_sequence: weights {wx.shape}, {wh.shape}, {b.shape} do not fit e={e}, p={p}"
        )
    m = np.asarray(mask, dtype=x.data.dtype).reshape(S, T, 1)
    dt = x.data.dtype
    h = np.zeros((S, p), dtype=dt)
    c = np.zeros((S, p), dtype=dt)
    hs = np.empty((S, T, p), dtype=dt)
    cache = []
    xw = x.data @ wx.data + b.data  # (S, T, 4p)
    for t in range(T):
        a = xw[:, t] + h @ wh.data
        i = _sigmoid(a[:, :p])
        f = _sigmoid(a[:, p : 2 * p])
        gg = np.tanh(a[:, 2 * p : 3 * p])
        o = _sigmoid(a[:, 3 * p :])
        c_new = f * c + i * gg
        tc = np.tanh(c_new)
        h_new = o * tc
        mt = m[:, t]
        cache.append((h, c, i, f, gg, o, tc))
        c = mt * c_new + (1.0 - mt) * c
        h = mt * h_new + (1.0 - mt) * h
        hs[:, t] = h

    def backward(gout):
        gx = np.empty_like(x.data)
        gwx = np.zeros_like(wx.data)
        gwh = np.zeros_like(wh.data)
        gb = np.zeros_like(b.data)
        dh_next = np.zeros((S, p), dtype=dt)
        dc_next = np.zeros((S, p), dtype=dt)
        da = np.empty((S, 4 * p), dtype=dt)
        for t in range(T - 1, -1, -1):
            h_prev, c_prev, i, f, gg, o, tc = cache[t]
            mt = m[:, t]
            dh = gout[:, t] + dh_next
            dh_new = mt * dh
            dc_new = mt * dc_next + dh_new * o * (1.0 - tc * tc)
            da[:, :p] = dc_new * gg * i * (1.0 - i)
            da[:, p : 2 * p] = dc_new * c_prev * f * (1.0 - f)
            da[:, 2 * p : 3 * p] = dc_new * i * (1.0 - gg * gg)
            da[:, 3 * p :] = dh_new * tc * o * (1.0 - o)
            gx[:, t] = da @ wx.data.T
            gwx += x.data[:, t].T @ da
            gwh += h_prev.T @ da
            gb += da.sum(axis=0)
            dh_next = da @ wh.data.T + (1.0 - mt) * dh
            dc_next = dc_new * f + (1.0 - mt) * dc_next
        return gx, gwx, gwh, gb

    return Tensor._from_op(hs, (x, wx, wh, b), backward)


def parameters_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return float(np.sqrt(total))
