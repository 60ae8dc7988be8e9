"""Dense-tensor engine with reverse-mode differentiation.

A Tensor wraps a numpy array.  Every operation records, on its output, the
list of (parent, vjp) pairs needed to push gradients backward.  Tensors are
numbered at creation; because an op can only consume tensors that already
exist, decreasing creation order is a valid reverse-topological order, and
``backward`` walks it exactly once per node.

Forward results are checked for NaN/Inf and raise NonFiniteError instead of
propagating silently.  Precision is configurable (float32 / float64) via
``set_default_dtype``; gradient tests should run at float64.
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager

import numpy as np

from .errors import AxisError, NonFiniteError, NonScalarError, ShapeError

_COUNTER = itertools.count()
_DEFAULT_DTYPE = np.float64
_CHECK_FINITE = True
_GRAD_ENABLED = True


def set_default_dtype(dtype):
    """Set the dtype used for tensors created from plain python data."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError("default dtype must be float32 or float64")
    _DEFAULT_DTYPE = dtype


def default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def using_dtype(dtype):
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


def set_finite_checks(enabled: bool):
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


@contextmanager
def no_grad():
    """Disable graph recording (inference / matching scans)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(arr, op_name):
    if _CHECK_FINITE and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by '{op_name}'")


def _as_array(data, dtype=None):
    if isinstance(data, np.ndarray) and dtype is None:
        if data.dtype in (np.float32, np.float64):
            return data
        return data.astype(_DEFAULT_DTYPE)
    return np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)


class Tensor:
    """A dense real-valued array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_prev", "_nid")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        _check_finite(self.data, "tensor")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._prev = ()  # tuple of (parent Tensor, vjp callable)
        self._nid = next(_COUNTER)

    # -- basic introspection ------------------------------------------------

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

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})\n{self.data!r}"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- autodiff -----------------------------------------------------------

    def backward(self):
        """Push gradients from this scalar to every tracked leaf.

        Leaf tensors (requires_grad=True, no parents) get their gradient
        accumulated into ``.grad``.  Returns {leaf Tensor: gradient array}.
        """
        return backward(self)

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return abs_(self)

    def clip(self, lo, hi):
        return clip(self, lo, hi)


def _coerce(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _make(data, parents, op_name):
    """Wrap an op result; parents is [(tensor, vjp), ...] for tracked inputs."""
    _check_finite(data, op_name)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._nid = next(_COUNTER)
    if _GRAD_ENABLED:
        tracked = tuple((p, fn) for p, fn in parents if p.requires_grad)
        out._prev = tracked
        out.requires_grad = bool(tracked)
    else:
        out._prev = ()
        out.requires_grad = False
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a_shape, b_shape, op_name):
    ra, rb = list(reversed(a_shape)), list(reversed(b_shape))
    for da, db in zip(ra, rb):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op_name}: shapes {a_shape} and {b_shape} do not broadcast")


def _norm_axis(axis, ndim, op_name):
    if not -ndim <= axis < ndim:
        raise AxisError(f"{op_name}: axis {axis} out of range for ndim {ndim}")
    return axis % ndim


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b):
    a = _coerce(a, getattr(b, "dtype", None) or _DEFAULT_DTYPE)
    b = _coerce(b, a.dtype)
    _check_broadcast(a.shape, b.shape, "add")
    out = a.data + b.data
    return _make(out, [(a, lambda g: _unbroadcast(g, a.shape)),
                       (b, lambda g: _unbroadcast(g, b.shape))], "add")


def sub(a, b):
    a = _coerce(a, getattr(b, "dtype", None) or _DEFAULT_DTYPE)
    b = _coerce(b, a.dtype)
    _check_broadcast(a.shape, b.shape, "sub")
    out = a.data - b.data
    return _make(out, [(a, lambda g: _unbroadcast(g, a.shape)),
                       (b, lambda g: _unbroadcast(-g, b.shape))], "sub")


def mul(a, b):
    a = _coerce(a, getattr(b, "dtype", None) or _DEFAULT_DTYPE)
    b = _coerce(b, a.dtype)
    _check_broadcast(a.shape, b.shape, "mul")
    out = a.data * b.data
    return _make(out, [(a, lambda g: _unbroadcast(g * b.data, a.shape)),
                       (b, lambda g: _unbroadcast(g * a.data, b.shape))], "mul")


def div(a, b):
    a = _coerce(a, getattr(b, "dtype", None) or _DEFAULT_DTYPE)
    b = _coerce(b, a.dtype)
    _check_broadcast(a.shape, b.shape, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _make(out, [(a, lambda g: _unbroadcast(g / b.data, a.shape)),
                       (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape))],
                 "div")


def neg(a):
    return _make(-a.data, [(a, lambda g: -g)], "neg")


def power(a, exponent):
    k = float(exponent)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = a.data ** k
    if k == 0.0:
        return _make(out, [(a, lambda g: np.zeros_like(a.data))], "power")
    return _make(out, [(a, lambda g: g * k * a.data ** (k - 1.0))], "power")


def exp(a):
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, [(a, lambda g: g * out)], "exp")


def log(a):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, [(a, lambda g: g / a.data)], "log")


def relu(a):
    out = np.maximum(a.data, 0)
    return _make(out, [(a, lambda g: g * (a.data > 0))], "relu")


def sigmoid(a):
    # Stable both directions: 1/(1+e^-x) for x>=0, e^x/(1+e^x) otherwise.
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, [(a, lambda g: g * out * (1.0 - out))], "sigmoid")


def abs_(a):
    out = np.abs(a.data)
    return _make(out, [(a, lambda g: g * np.sign(a.data))], "abs")


def clip(a, lo, hi):
    """Clamp values; gradient is passed only where the input was in range."""
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(out, [(a, lambda g: g * inside)], "clip")


# -- reductions ----------------------------------------------------------------


def sum_(a, axis=None, keepdims=False):
    if axis is not None:
        axis = _norm_axis(axis, a.ndim, "sum") if isinstance(axis, int) else tuple(
            _norm_axis(ax, a.ndim, "sum") for ax in axis)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.full(a.shape, g, dtype=a.dtype)
        gg = g
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(axes):
                gg = np.expand_dims(gg, ax)
        return np.broadcast_to(gg, a.shape)

    return _make(np.asarray(out), [(a, vjp)], "sum")


def mean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(_norm_axis(ax, a.ndim, "mean") for ax in axes)
        n = 1
        for ax in axes:
            n *= a.shape[ax]
        axis = axes if len(axes) > 1 else axes[0]
    s = sum_(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / n)


# -- shape manipulation ---------------------------------------------------------


def reshape(a, *shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = a.data.reshape(shape)
    return _make(out, [(a, lambda g: g.reshape(a.shape))], "reshape")


def transpose(a, *axes):
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    out = a.data.transpose(axes)
    return _make(out, [(a, lambda g: g.transpose(inverse))], "transpose")


def getitem(a, key):
    out = a.data[key]

    def vjp(g):
        full = np.zeros(a.shape, dtype=a.dtype)
        np.add.at(full, key, g)
        return full

    return _make(np.asarray(out), [(a, vjp)], "getitem")


def index_select(a, indices, axis=0):
    """Gather rows along `axis`; repeated indices accumulate gradient."""
    indices = np.asarray(indices)
    if indices.ndim != 1:
        raise ShapeError("index_select: indices must be 1-D")
    axis = _norm_axis(axis, a.ndim, "index_select")
    out = np.take(a.data, indices, axis=axis)

    def vjp(g):
        full = np.zeros(a.shape, dtype=a.dtype)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return full

    return _make(out, [(a, vjp)], "index_select")


def concat(tensors, axis=0):
    tensors = list(tensors)
    axis = _norm_axis(axis, tensors[0].ndim, "concat")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    parents = []
    for i, t in enumerate(tensors):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g, lo=lo, hi=hi):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        parents.append((t, vjp))
    return _make(out, parents, "concat")


def stack(tensors, axis=0):
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else axis + t.ndim + 1, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


# -- linear algebra ---------------------------------------------------------------


def matmul(a, b):
    """Matrix product; >2-D inputs are treated as stacks of matrices."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul: operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ ({a.shape} @ {b.shape})")
    _check_broadcast(a.shape[:-2], b.shape[:-2], "matmul")
    out = np.matmul(a.data, b.data)

    def vjp_a(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        return _unbroadcast(ga, a.shape)

    def vjp_b(g):
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(gb, b.shape)

    return _make(out, [(a, vjp_a), (b, vjp_b)], "matmul")


# -- normalizations / attention ----------------------------------------------------


def softmax(a, axis=-1):
    """Numerically stabilized softmax along `axis` (max-subtraction)."""
    axis = _norm_axis(axis, a.ndim, "softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return _make(out, [(a, vjp)], "softmax")


def layer_norm(a, axis=-1, eps=1e-5):
    """Normalize to zero mean / unit variance along `axis` (no affine)."""
    axis = _norm_axis(axis, a.ndim, "layer_norm")
    mu = mean(a, axis=axis, keepdims=True)
    centered = sub(a, mu)
    var = mean(mul(centered, centered), axis=axis, keepdims=True)
    return div(centered, power(add(var, eps), 0.5))


def scaled_dot_attention(q, k, v):
    """softmax(q kᵀ / sqrt(C)) v  with q:(...,Lq,C)  k,v:(...,Lk,C)."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: channel dims differ ({q.shape} vs {k.shape})")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: key/value lengths differ ({k.shape} vs {v.shape})")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = mul(matmul(q, swap_last(k)), scale)
    return matmul(softmax(scores, axis=-1), v)


def swap_last(a):
    """Transpose the last two axes."""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def mlp_forward(x, weights):
    """Apply (W, b) pairs with ReLU between layers, none after the last."""
    h = x
    for i, (w, b) in enumerate(weights):
        h = add(matmul(h, w), b)
        if i + 1 < len(weights):
            h = relu(h)
    return h


# -- convolution / resampling --------------------------------------------------------

_COL_INDEX_CACHE = {}


def _im2col_indices(cin, h, w, kh, kw, stride, pad):
    key = (cin, h, w, kh, kw, stride, pad)
    cached = _COL_INDEX_CACHE.get(key)
    if cached is not None:
        return cached
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    i0 = np.repeat(np.arange(kh), kw)
    i0 = np.tile(i0, cin)
    i1 = stride * np.repeat(np.arange(oh), ow)
    j0 = np.tile(np.arange(kw), kh * cin)
    j1 = stride * np.tile(np.arange(ow), oh)
    rows = i0.reshape(-1, 1) + i1.reshape(1, -1)
    cols = j0.reshape(-1, 1) + j1.reshape(1, -1)
    chans = np.repeat(np.arange(cin), kh * kw).reshape(-1, 1)
    cached = (chans, rows, cols, oh, ow)
    _COL_INDEX_CACHE[key] = cached
    return cached


def conv2d(x, kernels, stride=1, pad=0):
    """2-D convolution.  x: (B,Cin,H,W) or (Cin,H,W); kernels: (Cout,Cin,kh,kw)."""
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.ndim != 4:
        raise ShapeError("conv2d: expected x (B,Cin,H,W) and kernels (Cout,Cin,kh,kw)")
    b, cin, h, w = xd.shape
    cout, kcin, kh, kw = kernels.shape
    if kcin != cin:
        raise ShapeError(f"conv2d: channel mismatch (input {cin}, kernel {kcin})")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError("conv2d: kernel larger than padded input")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    windows = np.lib.stride_tricks.sliding_window_view(
        xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]   # (B,Cin,OH,OW,kh,kw)
    patches = np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3)
                                   ).reshape(b, cin * kh * kw, oh * ow)
    wflat = kernels.data.reshape(cout, -1)
    out = np.matmul(wflat, patches).reshape(b, cout, oh, ow)

    def vjp_x(g):
        gflat = g.reshape(b, cout, -1)
        gcols = np.matmul(wflat.T, gflat)                     # (B, Cin*kh*kw, OH*OW)
        hp, wp = h + 2 * pad, w + 2 * pad
        if kh == stride and kw == stride and pad == 0:
            # non-overlapping windows: scatter is an inverse reshape
            gxp = gcols.reshape(b, cin, kh, kw, oh, ow).transpose(0, 1, 4, 2, 5, 3)
            gx = np.ascontiguousarray(gxp).reshape(b, cin, h, w)
            return gx[0] if squeeze else gx
        chans, rows, cols, _, _ = _im2col_indices(cin, h, w, kh, kw, stride, pad)
        lin = ((chans * hp + rows) * wp + cols).ravel()       # scatter targets per batch
        plane = cin * hp * wp
        gxp = np.empty((b, plane), dtype=xd.dtype)
        for bi in range(b):
            gxp[bi] = np.bincount(lin, weights=gcols[bi].ravel(), minlength=plane)
        gxp = gxp.reshape(b, cin, hp, wp)
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return gx[0] if squeeze else gx

    def vjp_w(g):
        gflat = g.reshape(b, cout, -1)
        gw = np.tensordot(gflat, patches, axes=([0, 2], [0, 2]))
        return gw.reshape(kernels.shape)

    out = out[0] if squeeze else out
    return _make(out, [(x, vjp_x), (kernels, vjp_w)], "conv2d")


def upsample_nearest(x, factor):
    """Nearest-neighbor upsample of the trailing two axes by `factor`."""
    f = int(factor)
    out = x.data.repeat(f, axis=-2).repeat(f, axis=-1)

    def vjp(g):
        h, w = x.shape[-2], x.shape[-1]
        g5 = g.reshape(*g.shape[:-2], h, f, w, f)
        return g5.sum(axis=(-3, -1))

    return _make(out, [(x, vjp)], "upsample_nearest")


_BILINEAR_CACHE = {}


def _bilinear_matrix(n_in, factor, dtype):
    """Row-interpolation matrix (n_in*factor, n_in), half-pixel centers, edge clamp."""
    key = (n_in, factor, np.dtype(dtype).str)
    cached = _BILINEAR_CACHE.get(key)
    if cached is not None:
        return cached
    n_out = n_in * factor
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    lo = np.floor(src).astype(int)
    frac = src - lo
    lo_c = np.clip(lo, 0, n_in - 1)
    hi_c = np.clip(lo + 1, 0, n_in - 1)
    m = np.zeros((n_out, n_in), dtype=dtype)
    m[np.arange(n_out), lo_c] += 1.0 - frac
    m[np.arange(n_out), hi_c] += frac
    _BILINEAR_CACHE[key] = m
    return m


def upsample_bilinear(x, factor):
    """Bilinear upsample of the trailing two axes (half-pixel alignment)."""
    f = int(factor)
    h, w = x.shape[-2], x.shape[-1]
    my = _bilinear_matrix(h, f, x.dtype)
    mx = _bilinear_matrix(w, f, x.dtype)
    out = np.einsum("oh,...hw,pw->...op", my, x.data, mx, optimize=True)

    def vjp(g):
        return np.einsum("oh,...op,pw->...hw", my, g, mx, optimize=True)

    return _make(out, [(x, vjp)], "upsample_bilinear")


# -- backward pass ---------------------------------------------------------------


def _collect(root):
    """All tensors reachable from root that need gradients, newest first."""
    seen = {root._nid: root}
    stack_ = [root]
    while stack_:
        node = stack_.pop()
        for parent, _ in node._prev:
            if parent._nid not in seen:
                seen[parent._nid] = parent
                stack_.append(parent)
    return sorted(seen.values(), key=lambda t: -t._nid)


def backward(loss, retain=()):
    """Reverse-mode sweep from a scalar; returns {leaf: gradient array}.

    Tensors listed in `retain` (possibly non-leaf) are also included in the
    returned map without their `.grad` being touched.
    """
    if loss.size != 1:
        raise NonScalarError(f"backward requires a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    retain_ids = {t._nid for t in retain}
    grads = {loss._nid: np.ones_like(loss.data)}
    result = {}
    for node in _collect(loss):
        g = grads.pop(node._nid, None)
        if g is None:
            continue
        if node._nid in retain_ids:
            result[node] = np.array(g, copy=True)
        if not node._prev:
            if node.requires_grad:
                node.grad = np.array(g, copy=True) if node.grad is None else node.grad + g
                result[node] = node.grad
            continue
        for parent, vjp in node._prev:
            pg = vjp(g)
            acc = grads.get(parent._nid)
            grads[parent._nid] = pg if acc is None else acc + pg
    return result


def grad(loss, wrt):
    """Gradients of a scalar loss for specific tensors, without touching .grad."""
    saved = [(t, t.grad) for t in wrt]
    for t in wrt:
        t.grad = None
    out = backward(loss, retain=wrt)
    for t, g0 in saved:
        t.grad = g0
    return [np.zeros(t.shape, dtype=t.dtype) if out.get(t) is None else np.array(out[t])
            for t in wrt]


def grad_check(f, xs, eps=1e-6):
    """Max relative error between analytic and central-difference gradients.

    f maps the tensors in `xs` to a scalar Tensor.  Error per coordinate is
    |analytic - numeric| / max(1, |numeric|); the max over all coordinates of
    all inputs is returned.
    """
    xs = list(xs)
    analytic = grad(f(*xs), xs)
    worst = 0.0
    for x, ga in zip(xs, analytic):
        flat = x.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(*xs).item()
            flat[i] = orig - eps
            lo = f(*xs).item()
            flat[i] = orig
            numeric = (hi - lo) / (2 * eps)
            err = abs(gflat[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
