"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation records its inputs and a backward rule on the
output tensor. Node ids are drawn from a global monotone counter, so sorting
the reachable graph by id is a valid topological order; :func:`backward`
walks that order once, in reverse.

Values default to 32-bit floats. :func:`precision` switches the default to
64 bits, which exists for finite-difference gradient checks.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from .errors import ConfigError, NumericError

__all__ = [
    "Tensor", "Parameter", "backward", "no_grad", "precision", "get_dtype",
    "record", "add", "mul", "concat", "conv2d", "batch_norm2d", "relu",
    "gelu", "sigmoid", "softmax", "layer_norm", "linear", "global_avg_pool2d",
    "global_max_pool2d", "channel_avg", "channel_max", "seq_mean", "dropout",
]

_DTYPE = np.float32
_GRAD_ENABLED = True
_node_ids = itertools.count()

# grouped convolutions with at most this many input channels per group use
# the shift-and-accumulate kernel instead of im2col
_SMALL_GROUP = 8


def get_dtype():
    return _DTYPE


@contextmanager
def precision(dtype):
    """Temporarily change the default float type (``np.float32``/``np.float64``)."""
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"unsupported precision {dtype!r}")
    prev, _DTYPE = _DTYPE, dtype
    try:
        yield
    finally:
        _DTYPE = prev


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """N-dimensional float array with an optional gradient slot.

    Parameters
    ----------
    data : array_like
        Values; cast to the current default float type.
    requires_grad : bool
        Whether :func:`backward` should populate ``grad`` for this tensor.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = _contiguous(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.node_id = next(_node_ids)
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    # -- basic protocol -------------------------------------------------
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self):
        return self.shape[0]

    def backward(self):
        backward(self)

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return mul(tsum(self, axis, keepdims), 1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class Parameter(Tensor):
    """Learnable leaf tensor. ``decay`` marks eligibility for weight decay."""

    def __init__(self, data, decay: bool = True, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)
        self.decay = decay

    def __repr__(self):
        return f"Parameter(shape={self.shape}, decay={self.decay})"


def _contiguous(data) -> np.ndarray:
    arr = np.asarray(data, dtype=_DTYPE)
    return arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of an operation.

    ``backward_fn(grad_out)`` must return one gradient (or ``None``) per
    parent. Non-finite outputs raise :class:`NumericError`.
    """
    if not np.isfinite(data).all():
        raise NumericError(f"{op}: non-finite values in output")
    out = Tensor.__new__(Tensor)
    out.data = _contiguous(data)
    out.grad = None
    out.name = None
    out.node_id = next(_node_ids)
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._backward = backward_fn if track else None
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every ``requires_grad`` leaf reachable from ``loss``.

    Gradients accumulate across calls; clear them with ``zero_grad``.
    """
    if loss.data.size != 1:
        raise ConfigError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node.node_id in nodes:
            continue
        nodes[node.node_id] = node
        stack.extend(p for p in node._parents if p.requires_grad)

    grads = {loss.node_id: np.ones_like(loss.data)}
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg


# ---------------------------------------------------------------------------
# shape and arithmetic primitives
# ---------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor) and np.ndim(b) != 0:
        b = Tensor(b)
    if not isinstance(b, Tensor):
        c = float(b)
        return record(a.data * c, (a,), lambda g: (g * c,), "mul")
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def reciprocal(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / a.data
    return record(inv, (a,), lambda g: (-g * inv * inv,), "reciprocal")


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record(out, (a,), back, "sum")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice)) or i is Ellipsis or i is None for i in items)


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape
    basic = _is_basic_index(index)

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return record(a.data[index], (a,), back, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(np.where(mask, x.data, 0), (x,), lambda g: (g * mask,), "relu")


_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF (no tanh approximation)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return record(xd * cdf, (x,), back, "gelu")


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return record(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record(y, (x,), back, "softmax")


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine ``gamma``/``beta``."""
    d = x.shape[-1]
    if d < 2:
        raise ConfigError(f"layer_norm needs last-axis extent >= 2, got {d}")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ConfigError(f"layer_norm affine shape {gamma.shape} does not match d={d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def back(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record(xhat * gd + beta.data, (x, gamma, beta), back, "layer_norm")


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                 running_var: np.ndarray, training: bool, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization of a ``[B, C, H, W]`` tensor.

    In training mode the batch statistics are used and the running buffers
    are updated in place (unbiased variance, PyTorch convention).
    """
    B, C, H, W = x.shape
    shp = (1, C, 1, 1)
    gd = gamma.data.reshape(shp)
    if training:
        n = B * H * W
        if n < 2:
            raise NumericError("batch_norm2d in training mode needs at least 2 values per channel")
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(C)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(C) * (n / (n - 1))

        def back(g):
            dxhat = g * gd
            dx = inv * (dxhat - dxhat.mean(axis=(0, 2, 3), keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))
            return dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).reshape(shp).astype(_DTYPE)
        xhat = (x.data - running_mean.reshape(shp)) * inv

        def back(g):
            return g * gd * inv, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return record(xhat * gd + beta.data.reshape(shp), (x, gamma, beta), back, "batch_norm2d")


# ---------------------------------------------------------------------------
# linear and convolution
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis: ``x @ weight.T + bias``; weight is ``[dout, din]``."""
    dout, din = weight.shape
    if x.shape[-1] != din:
        raise ConfigError(f"linear: input extent {x.shape[-1]} != weight in-features {din}")
    if bias is not None and bias.shape != (dout,):
        raise ConfigError(f"linear: bias shape {bias.shape} != ({dout},)")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def back(g):
        g2 = g.reshape(-1, dout)
        gw = g2.T @ xd.reshape(-1, din)
        gb = g2.sum(axis=0) if bias is not None else None
        return g @ wd, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record(out, parents, back, "linear")


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, Ho: int, Wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride][:, :, :Ho, :Wo]


def _dense_forward(xp, w, stride, Ho, Wo):
    kh, kw = w.shape[2:]
    if kh == kw == 1:
        xs = xp[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        return np.einsum("oc,bchw->bohw", w[:, :, 0, 0], xs, optimize=True)
    win = _windows(xp, kh, kw, stride, Ho, Wo)
    return np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)


def _dense_backward(g, xp, w, stride, Ho, Wo):
    kh, kw = w.shape[2:]
    gxp = np.zeros_like(xp)
    if kh == kw == 1:
        xs = xp[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        gw = np.einsum("bohw,bchw->oc", g, xs, optimize=True)[:, :, None, None]
        gxp[:, :, 0:stride * Ho:stride, 0:stride * Wo:stride] = np.einsum(
            "bohw,oc->bchw", g, w[:, :, 0, 0], optimize=True)
        return gxp, gw
    win = _windows(xp, kh, kw, stride, Ho, Wo)
    gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
    gwin = np.tensordot(g, w, axes=([1], [0]))  # B, Ho, Wo, Cin, kh, kw
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                gwin[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return gxp, gw


def _shift_forward(xp, w, groups, stride, Ho, Wo):
    # out[b, g, o] = sum_{c, i, j} w[g, o, c, i, j] * x[b, g, c, shifted by (i, j)]
    B, Cin = xp.shape[:2]
    Cout, Cg, kh, kw = w.shape
    Og = Cout // groups
    wg = w.reshape(groups, Og, Cg, kh, kw)
    out = np.zeros((B, groups, Og, Ho, Wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
            xs = xs.reshape(B, groups, Cg, Ho, Wo)
            for c in range(Cg):
                out += wg[None, :, :, c, i, j, None, None] * xs[:, :, None, c]
    return out.reshape(B, Cout, Ho, Wo)


def _shift_backward(g, xp, w, groups, stride, Ho, Wo):
    B, Cin = xp.shape[:2]
    Cout, Cg, kh, kw = w.shape
    Og = Cout // groups
    wg = w.reshape(groups, Og, Cg, kh, kw)
    g5 = g.reshape(B, groups, Og, Ho, Wo)
    gw = np.zeros_like(wg)
    gxp = np.zeros_like(xp)
    gxp5 = gxp.reshape(B, groups, Cg, *xp.shape[2:])
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
            xs = xs.reshape(B, groups, Cg, Ho, Wo)
            for c in range(Cg):
                gw[:, :, c, i, j] = (g5 * xs[:, :, None, c]).sum(axis=(0, 3, 4))
                gxp5[:, :, c, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                    (g5 * wg[None, :, :, c, i, j, None, None]).sum(axis=2)
    return gxp, gw.reshape(w.shape)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding and channel groups.

    ``weight`` has shape ``[Cout, Cin // groups, kh, kw]``. ``groups == Cin``
    gives a depthwise convolution.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ConfigError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    B, Cin, H, W = x.shape
    Cout, Cg, kh, kw = weight.shape
    if groups < 1 or Cin % groups or Cout % groups:
        raise ConfigError(f"conv2d: channels ({Cin}->{Cout}) not divisible by groups={groups}")
    if Cg != Cin // groups:
        raise ConfigError(f"conv2d: weight expects {Cg} channels per group, input gives {Cin // groups}")
    if stride < 1 or padding < 0:
        raise ConfigError("conv2d: stride must be >= 1 and padding >= 0")
    if bias is not None and bias.shape != (Cout,):
        raise ConfigError(f"conv2d: bias shape {bias.shape} != ({Cout},)")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ConfigError(f"conv2d: kernel {kh}x{kw} larger than padded input {H}x{W}")
    if not np.isfinite(x.data).all():
        raise NumericError("conv2d: non-finite input")

    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    wd = weight.data
    Og = Cout // groups
    if groups == 1:
        mode = "dense"
        out = _dense_forward(xp, wd, stride, Ho, Wo)
    elif Cg <= _SMALL_GROUP:
        mode = "shift"
        out = _shift_forward(xp, wd, groups, stride, Ho, Wo)
    else:
        mode = "per-group"
        out = np.concatenate([
            _dense_forward(xp[:, k * Cg:(k + 1) * Cg], wd[k * Og:(k + 1) * Og], stride, Ho, Wo)
            for k in range(groups)], axis=1)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def back(g):
        if mode == "dense":
            gxp, gw = _dense_backward(g, xp, wd, stride, Ho, Wo)
        elif mode == "shift":
            gxp, gw = _shift_backward(g, xp, wd, groups, stride, Ho, Wo)
        else:
            parts = [_dense_backward(g[:, k * Og:(k + 1) * Og], xp[:, k * Cg:(k + 1) * Cg],
                                     wd[k * Og:(k + 1) * Og], stride, Ho, Wo) for k in range(groups)]
            gxp = np.concatenate([a for a, _ in parts], axis=1)
            gw = np.concatenate([b for _, b in parts], axis=0)
        gx = gxp[:, :, p:p + H, p:p + W] if p else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record(out, parents, back, "conv2d")


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def global_avg_pool2d(x: Tensor) -> Tensor:
    """``[B, C, H, W] -> [B, C]`` spatial mean."""
    B, C, H, W = x.shape
    n = H * W
    return record(x.data.mean(axis=(2, 3)), (x,),
                  lambda g: (np.broadcast_to(g[:, :, None, None] / n, x.shape).copy(),), "gap")


def _max_along(x: Tensor, flat: np.ndarray, axis: int, out_shape: tuple, op: str) -> Tensor:
    # argmax returns the first maximal index, which fixes the tie-break
    idx = flat.argmax(axis=axis)
    out = np.take_along_axis(flat, np.expand_dims(idx, axis), axis=axis)
    fshape = flat.shape

    def back(g):
        gf = np.zeros(fshape, dtype=g.dtype)
        np.put_along_axis(gf, np.expand_dims(idx, axis), g.reshape(np.expand_dims(idx, axis).shape), axis=axis)
        return (gf.reshape(x.shape),)

    return record(out.reshape(out_shape), (x,), back, op)


def global_max_pool2d(x: Tensor) -> Tensor:
    """``[B, C, H, W] -> [B, C]`` spatial max; gradient goes to the lowest flat index among ties."""
    B, C, H, W = x.shape
    return _max_along(x, x.data.reshape(B, C, H * W), 2, (B, C), "gmp")


def channel_avg(x: Tensor) -> Tensor:
    """``[B, C, H, W] -> [B, 1, H, W]`` mean across channels."""
    C = x.shape[1]
    return record(x.data.mean(axis=1, keepdims=True), (x,),
                  lambda g: (np.broadcast_to(g / C, x.shape).copy(),), "channel_avg")


def channel_max(x: Tensor) -> Tensor:
    """``[B, C, H, W] -> [B, 1, H, W]`` max across channels."""
    B, C, H, W = x.shape
    return _max_along(x, x.data, 1, (B, 1, H, W), "channel_max")


def seq_mean(x: Tensor) -> Tensor:
    """``[B, L, d] -> [B, d]`` mean over the token axis."""
    L = x.shape[1]
    return record(x.data.mean(axis=1), (x,),
                  lambda g: (np.broadcast_to(g[:, None, :] / L, x.shape).copy(),), "seq_mean")


# ---------------------------------------------------------------------------
# regularization
# ---------------------------------------------------------------------------

def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``; identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= rate).astype(_DTYPE) * (1.0 / (1.0 - rate))
    return record(x.data * mask, (x,), lambda g: (g * mask,), "dropout")
