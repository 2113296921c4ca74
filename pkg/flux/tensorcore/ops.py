"""Differentiable primitives.

Every primitive is a Function subclass with a matching backward rule, plus a
lower-case functional wrapper. Elementwise ops follow numpy broadcasting;
contractions require exact inner dimensions.
"""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

from ..utils.exceptions import NumericalError, ShapeError, ValidationError
from .tensor import Function, Tensor, as_tensor

LAYER_NORM_EPS = 1e-6
_GELU_C = float(np.sqrt(2.0 / np.pi))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape)


def _require_finite(op: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{op}: non-finite input", {"op": op})


def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# -- elementwise -----------------------------------------------------------


class Add(Function):
    def forward(self, a, b):
        _check_broadcast("add", a, b)
        self.save_for_backward(a.shape, b.shape)
        return a + b

    def backward(self, grad):
        a_shape, b_shape = self.saved
        return _unbroadcast(grad, a_shape), _unbroadcast(grad, b_shape)


class Sub(Function):
    def forward(self, a, b):
        _check_broadcast("sub", a, b)
        self.save_for_backward(a.shape, b.shape)
        return a - b

    def backward(self, grad):
        a_shape, b_shape = self.saved
        return _unbroadcast(grad, a_shape), _unbroadcast(-grad, b_shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Mul(Function):
    def forward(self, a, b):
        _check_broadcast("mul", a, b)
        self.save_for_backward(a, b)
        return a * b

    def backward(self, grad):
        a, b = self.saved
        pa, pb = self.parents
        ga = _unbroadcast(grad * b, a.shape) if pa.requires_grad else None
        gb = _unbroadcast(grad * a, b.shape) if pb.requires_grad else None
        return ga, gb


class Gelu(Function):
    """GELU, tanh form."""

    def forward(self, x):
        inner = _GELU_C * (x + 0.044715 * x**3)
        t = np.tanh(inner)
        self.save_for_backward(x, t)
        return 0.5 * x * (1.0 + t)

    def backward(self, grad):
        x, t = self.saved
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * x**2)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner),)


# -- contractions and reductions ---------------------------------------------


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError("matmul", a.shape, b.shape)
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError("matmul", a.shape, b.shape)
        self.save_for_backward(a, b)
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.saved
        pa, pb = self.parents
        ga = gb = None
        if pa.requires_grad:
            ga = _unbroadcast(np.matmul(grad, np.swapaxes(b, -1, -2)), a.shape)
        if pb.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a, -1, -2), grad), b.shape)
        return ga, gb


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.save_for_backward(x.shape, _normalize_axes(axis, x.ndim), keepdims)
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        shape, axes, keepdims = self.saved
        if not keepdims:
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad, shape).copy(),)


class Mean(Function):
    def forward(self, x, axis=None, keepdims=False):
        axes = _normalize_axes(axis, x.ndim)
        count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
        self.save_for_backward(x.shape, axes, keepdims, count)
        return np.mean(x, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        shape, axes, keepdims, count = self.saved
        if not keepdims:
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad / count, shape).copy(),)


class Softmax(Function):
    """Softmax along the last axis."""

    def forward(self, x):
        _require_finite("softmax", x)
        z = np.exp(x - x.max(axis=-1, keepdims=True))
        s = z / z.sum(axis=-1, keepdims=True)
        self.save_for_backward(s)
        return s

    def backward(self, grad):
        (s,) = self.saved
        return (s * (grad - (grad * s).sum(axis=-1, keepdims=True)),)


class LayerNorm(Function):
    """Normalization over the last axis with learnable scale and shift."""

    def forward(self, x, gamma, beta, eps=LAYER_NORM_EPS):
        n = x.shape[-1]
        if gamma.shape != (n,) or beta.shape != (n,):
            raise ShapeError("layer_norm", x.shape, gamma.shape)
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        self.save_for_backward(xhat, inv, gamma)
        return xhat * gamma + beta

    def backward(self, grad):
        xhat, inv, gamma = self.saved
        n = xhat.shape[-1]
        gxhat = grad * gamma
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        ggamma = (grad * xhat).reshape(-1, n).sum(axis=0)
        gbeta = grad.reshape(-1, n).sum(axis=0)
        return gx, ggamma, gbeta


class DepthwiseConv3d(Function):
    """Per-channel 3-D cross-correlation on a (T, H, W, C) grid, zero 'same' padding."""

    def forward(self, x, kernel):
        if x.ndim != 4 or kernel.ndim != 4 or kernel.shape[-1] != x.shape[-1]:
            raise ShapeError("depthwise_conv3d", x.shape, kernel.shape)
        if any(k % 2 == 0 for k in kernel.shape[:3]):
            raise ValidationError(
                "depthwise_conv3d needs odd kernel sizes",
                {"kernel": list(kernel.shape)},
            )
        pads = [k // 2 for k in kernel.shape[:3]]
        xp = np.pad(x, [(p, p) for p in pads] + [(0, 0)])
        T, H, W, _ = x.shape
        out = np.zeros_like(x)
        for dt in range(kernel.shape[0]):
            for dh in range(kernel.shape[1]):
                for dw in range(kernel.shape[2]):
                    out += xp[dt : dt + T, dh : dh + H, dw : dw + W] * kernel[dt, dh, dw]
        self.save_for_backward(xp, kernel, pads, x.shape)
        return out

    def backward(self, grad):
        xp, kernel, pads, shape = self.saved
        T, H, W, _ = shape
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kernel)
        for dt in range(kernel.shape[0]):
            for dh in range(kernel.shape[1]):
                for dw in range(kernel.shape[2]):
                    window = (slice(dt, dt + T), slice(dh, dh + H), slice(dw, dw + W))
                    gxp[window] += grad * kernel[dt, dh, dw]
                    gk[dt, dh, dw] = (grad * xp[window]).sum(axis=(0, 1, 2))
        pt, ph, pw = pads
        gx = gxp[pt : pt + T, ph : ph + H, pw : pw + W]
        return gx, gk


# -- indexing and layout ---------------------------------------------------------


class Gather(Function):
    """Rows of ``x`` at integer ``indices`` along axis 0; backward scatter-adds."""

    def forward(self, x, indices=None):
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
            raise ValidationError(
                "gather: index out of range",
                {"rows": int(x.shape[0]), "min": int(idx.min()), "max": int(idx.max())},
            )
        self.save_for_backward(idx, x.shape)
        return x[idx]

    def backward(self, grad):
        idx, shape = self.saved
        gx = np.zeros(shape, dtype=grad.dtype)
        np.add.at(gx, idx, grad)
        return (gx,)


class Index(Function):
    def forward(self, x, key=None):
        self.save_for_backward(key, x.shape)
        return x[key]

    def backward(self, grad):
        key, shape = self.saved
        gx = np.zeros(shape, dtype=grad.dtype)
        np.add.at(gx, key, grad)
        return (gx,)


class Reshape(Function):
    def forward(self, x, shape=None):
        shape = tuple(int(s) for s in shape)
        try:
            out = x.reshape(shape)
        except ValueError:
            raise ShapeError("reshape", x.shape, shape)
        self.save_for_backward(x.shape)
        return out

    def backward(self, grad):
        (shape,) = self.saved
        return (grad.reshape(shape),)


class Transpose(Function):
    def forward(self, x, axes=None):
        axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
        self.save_for_backward(np.argsort(axes))
        return np.transpose(x, axes)

    def backward(self, grad):
        (inverse,) = self.saved
        return (np.transpose(grad, inverse),)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        ref = arrays[0]
        for arr in arrays[1:]:
            if arr.ndim != ref.ndim or any(
                arr.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != axis % ref.ndim
            ):
                raise ShapeError("concat", ref.shape, arr.shape)
        self.save_for_backward(np.cumsum([a.shape[axis] for a in arrays])[:-1], axis)
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        splits, axis = self.saved
        return tuple(np.split(grad, splits, axis=axis))


class TrilinearResize(Function):
    """Linear interpolation of a (T, H, W, C) grid, align-corners semantics."""

    def forward(self, x, size=None):
        if x.ndim != 4 or len(size) != 3:
            raise ShapeError("trilinear_resize", x.shape, tuple(size))
        size = tuple(int(s) for s in size)
        if any(s <= 0 for s in size):
            raise ValidationError("trilinear_resize: sizes must be positive", {"size": list(size)})
        mats = tuple(interp_matrix(n_in, n_out) for n_in, n_out in zip(x.shape[:3], size))
        self.save_for_backward(mats, x.shape[:3] == size)
        if x.shape[:3] == size:
            return x.copy()
        mt, mh, mw = mats
        return np.einsum("at,bh,cw,thwk->abck", mt, mh, mw, x, optimize=True)

    def backward(self, grad):
        (mt, mh, mw), identity = self.saved
        if identity:
            return (grad,)
        return (np.einsum("at,bh,cw,abck->thwk", mt, mh, mw, grad, optimize=True),)


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) linear interpolation weights with the end points pinned."""
    mat = np.zeros((n_out, n_in))
    if n_out == 1 or n_in == 1:
        mat[:, 0] = 1.0
        return mat
    for i in range(n_out):
        pos = i * (n_in - 1) / (n_out - 1)
        lo = min(int(np.floor(pos)), n_in - 1)
        hi = min(lo + 1, n_in - 1)
        w = pos - lo
        mat[i, lo] += 1.0 - w
        mat[i, hi] += w
    return mat


# -- losses and normalization ------------------------------------------------------


class SmoothL1(Function):
    """Mean smooth-L1: quadratic below ``beta``, linear above."""

    def forward(self, pred, target, beta=1.0):
        if pred.shape != target.shape:
            raise ShapeError("smooth_l1", pred.shape, target.shape)
        if pred.size == 0:
            raise ValidationError("smooth_l1 of an empty tensor")
        if beta <= 0:
            raise ValidationError("smooth_l1 needs beta > 0", {"beta": beta})
        d = pred - target
        ad = np.abs(d)
        loss = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)
        self.save_for_backward(d, ad, beta)
        return np.asarray(loss.mean())

    def backward(self, grad):
        d, ad, beta = self.saved
        gd = np.where(ad < beta, d / beta, np.sign(d)) * (grad / d.size)
        return gd, -gd


class CrossEntropy(Function):
    """Mean cross-entropy of logits (B, C) or (C,) against integer labels."""

    def forward(self, logits, labels=None):
        _require_finite("cross_entropy", logits)
        x = logits.reshape(1, -1) if logits.ndim == 1 else logits
        y = np.asarray(labels, dtype=np.int64).reshape(-1)
        if y.shape[0] != x.shape[0]:
            raise ShapeError("cross_entropy", logits.shape, y.shape)
        if y.min() < 0 or y.max() >= x.shape[1]:
            raise ValidationError(
                "cross_entropy: label out of range", {"classes": int(x.shape[1])}
            )
        z = x - x.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
        logp = z - lse
        rows = np.arange(x.shape[0])
        self.save_for_backward(np.exp(logp), y, logits.shape)
        return np.asarray(-logp[rows, y].mean())

    def backward(self, grad):
        p, y, shape = self.saved
        g = p.copy()
        g[np.arange(p.shape[0]), y] -= 1.0
        g *= grad / p.shape[0]
        return (g.reshape(shape),)


class L2Normalize(Function):
    def forward(self, x, eps=1e-12):
        norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
        denom = np.maximum(norm, eps)
        y = x / denom
        self.save_for_backward(y, denom)
        return y

    def backward(self, grad):
        y, denom = self.saved
        return ((grad - y * (grad * y).sum(axis=-1, keepdims=True)) / denom,)


# -- functional wrappers ---------------------------------------------------------


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def neg(a) -> Tensor:
    return Neg.apply(a)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def scale(a, factor: float) -> Tensor:
    return Mul.apply(a, float(factor))


def gelu(x) -> Tensor:
    return Gelu.apply(x)


def matmul(a, b) -> Tensor:
    return MatMul.apply(a, b)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axis=axis, keepdims=keepdims)


def softmax(x) -> Tensor:
    return Softmax.apply(x)


def layer_norm(x, gamma, beta, eps: float = LAYER_NORM_EPS) -> Tensor:
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def depthwise_conv3d(x, kernel) -> Tensor:
    return DepthwiseConv3d.apply(x, kernel)


def gather(x, indices) -> Tensor:
    return Gather.apply(x, indices=indices)


def index(x, key) -> Tensor:
    return Index.apply(x, key=key)


def reshape(x, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=shape)


def transpose(x, axes=None) -> Tensor:
    return Transpose.apply(x, axes=axes)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    if not tensors:
        raise ValidationError("concat of an empty sequence")
    return Concat.apply(*tensors, axis=axis)


def smooth_l1(pred, target, beta: float = 1.0) -> Tensor:
    return SmoothL1.apply(pred, target, beta=beta)


def cross_entropy(logits, labels) -> Tensor:
    return CrossEntropy.apply(logits, labels=labels)


def l2_normalize(x, eps: float = 1e-12) -> Tensor:
    return L2Normalize.apply(x, eps=eps)


def trilinear_resize(x, size: Sequence[int]) -> Tensor:
    return TrilinearResize.apply(x, size=tuple(size))


def stop_gradient(x) -> Tensor:
    return as_tensor(x).detach()
