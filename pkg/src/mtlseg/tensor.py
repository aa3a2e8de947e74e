"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and records, for every operation, the parent
tensors and a closure that routes the output gradient back to them. Calling
``backward()`` on a scalar result walks the recorded graph in reverse
topological order and accumulates gradients into ``.grad`` of every tensor
with ``requires_grad`` set.

Scalars are float32 by default; gradient checking switches the whole stack
to float64 through ``using_dtype``. Every operation uses a fixed reduction
order, so repeated runs with identical inputs are bit-identical.
"""

from __future__ import annotations

import contextlib
import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import DimensionError, NumericError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True
_CHECK_FINITE = False

_GELU_C = math.sqrt(2.0 / math.pi)


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype):
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError("default dtype must be float32 or float64")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily switch the default scalar type (64-bit for grad checks)."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_check_finite(flag: bool):
    """Verify every op output is finite. Off by default; tests switch it on."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(flag)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        """The underlying array. Treat as read-only once used in an op."""
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad: np.ndarray | None = None):
        if grad is None:
            if self.size != 1:
                raise DimensionError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=self.data.dtype)

        order = _toposort(self)
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        raise TypeError("tensor division only supports python scalars")

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return mean_(self, axis=axis)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative DFS; deep graphs would overflow the recursion limit.
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if _CHECK_FINITE and not np.isfinite(data).all():
        raise NumericError("operation produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise and shape ops ------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), backward)


def scale(a: Tensor, s: float) -> Tensor:
    def backward(g):
        _accumulate(a, g * s)

    return _make(a.data * s, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2D operands or equally-batched 3D stacks."""
    if a.ndim not in (2, 3) or b.ndim != a.ndim:
        raise DimensionError(f"matmul needs matching 2D or 3D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise DimensionError(f"matmul extents disagree: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.swapaxes(-1, -2))
        _accumulate(b, a.data.swapaxes(-1, -2) @ g)

    return _make(data, (a, b), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(data, (a,), backward)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = np.argsort(axes)

    def backward(g):
        _accumulate(a, np.ascontiguousarray(g.transpose(inverse)))

    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _make(data, tuple(tensors), backward)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _make(data, (a,), backward)


def mean_(a: Tensor, axis=None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis), 1.0 / count)


# -- nonlinearities and normalization ------------------------------------


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        sech2 = 1.0 - t * t
        local = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        _accumulate(a, g * local)

    return _make(data, (a,), backward)


def softmax_lastdim(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(a, y * (g - dot))

    return _make(y, (a,), backward)


def log_softmax_lastdim(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - logz

    def backward(g):
        _accumulate(a, g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    return _make(y, (a,), backward)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gain.data + bias.data

    def backward(g):
        _accumulate(bias, _unbroadcast(g, bias.shape))
        _accumulate(gain, _unbroadcast(g * xhat, gain.shape))
        gx = g * gain.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        _accumulate(a, inv * (gx - m1 - xhat * m2))

    return _make(data, (a, gain, bias), backward)


# -- spatial ops ----------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int, padding: int) -> Tensor:
    """Cross-correlation of an H×W×Cin map with k×k×Cin×Cout filters."""
    h, w, cin = x.shape
    k = weight.shape[0]
    if weight.shape[:3] != (k, k, cin):
        raise DimensionError(f"conv weights {weight.shape} do not match input channels {cin}")
    cout = weight.shape[3]
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    if oh < 1 or ow < 1 or (h + 2 * padding) < k or (w + 2 * padding) < k:
        raise DimensionError(f"conv output extent would be empty for input {h}x{w}, k={k}, s={stride}, p={padding}")

    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0)))
    s0, s1, s2 = xp.strides
    windows = as_strided(xp, shape=(oh, ow, k, k, cin), strides=(stride * s0, stride * s1, s0, s1, s2))
    cols = windows.reshape(oh * ow, k * k * cin)
    wmat = weight.data.reshape(k * k * cin, cout)
    data = (cols @ wmat + bias.data).reshape(oh, ow, cout)

    def backward(g):
        gflat = g.reshape(oh * ow, cout)
        _accumulate(bias, gflat.sum(axis=0))
        _accumulate(weight, (cols.T @ gflat).reshape(weight.shape))
        if x.requires_grad:
            gcols = (gflat @ wmat.T).reshape(oh, ow, k, k, cin)
            gxp = np.zeros_like(xp)
            for ki in range(k):
                row_end = ki + stride * oh
                for kj in range(k):
                    gxp[ki:row_end:stride, kj:kj + stride * ow:stride, :] += gcols[:, :, ki, kj, :]
            _accumulate(x, gxp[padding:padding + h, padding:padding + w, :])

    return _make(data, (x, weight, bias), backward)


def depthwise_conv3x3(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-channel 3×3 convolution, stride 1, zero padding 1."""
    h, w, c = x.shape
    if weight.shape != (3, 3, c):
        raise DimensionError(f"depthwise weights {weight.shape} do not match {c} channels")
    xp = np.pad(x.data, ((1, 1), (1, 1), (0, 0)))
    data = np.broadcast_to(bias.data, (h, w, c)).copy()
    for di in range(3):
        for dj in range(3):
            data += xp[di:di + h, dj:dj + w, :] * weight.data[di, dj]

    def backward(g):
        _accumulate(bias, g.sum(axis=(0, 1)))
        gw = np.empty_like(weight.data)
        for di in range(3):
            for dj in range(3):
                gw[di, dj] = (xp[di:di + h, dj:dj + w, :] * g).sum(axis=(0, 1))
        _accumulate(weight, gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for di in range(3):
                for dj in range(3):
                    gxp[di:di + h, dj:dj + w, :] += g * weight.data[di, dj]
            _accumulate(x, gxp[1:1 + h, 1:1 + w, :])

    return _make(data, (x, weight, bias), backward)


def _bilinear_axis(n_out: int, n_in: int, factor: int):
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Bilinear interpolation by an integer factor (align corners: no)."""
    if factor < 1:
        raise DimensionError("upsample factor must be >= 1")
    if factor == 1:
        def backward_id(g):
            _accumulate(x, g)

        return _make(x.data.copy(), (x,), backward_id)

    h, w, c = x.shape
    oh, ow = h * factor, w * factor
    r0, r1, rf = _bilinear_axis(oh, h, factor)
    c0, c1, cf = _bilinear_axis(ow, w, factor)
    rf = rf[:, None, None]
    cf = cf[None, :, None]
    d = x.data
    data = (
        d[np.ix_(r0, c0)] * (1 - rf) * (1 - cf)
        + d[np.ix_(r0, c1)] * (1 - rf) * cf
        + d[np.ix_(r1, c0)] * rf * (1 - cf)
        + d[np.ix_(r1, c1)] * rf * cf
    )

    def backward(g):
        gx = np.zeros((h * w, c), dtype=g.dtype)
        for rows, cols, wgt in (
            (r0, c0, (1 - rf) * (1 - cf)),
            (r0, c1, (1 - rf) * cf),
            (r1, c0, rf * (1 - cf)),
            (r1, c1, rf * cf),
        ):
            lin = (rows[:, None] * w + cols[None, :]).ravel()
            np.add.at(gx, lin, (g * wgt).reshape(-1, c))
        _accumulate(x, gx.reshape(h, w, c))

    return _make(data, (x,), backward)
