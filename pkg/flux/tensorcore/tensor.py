"""Dense tensors with reverse-mode differentiation.

A Tensor wraps a numpy array. Operations are Function subclasses: ``apply``
runs ``forward`` on raw arrays and, when any input requires a gradient,
records the Function as the output's context. ``Tensor.backward`` walks the
recorded graph in reverse topological order, visiting each node once and
accumulating gradients additively where a tensor fans out.
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager
from typing import Iterator, List, Optional, Sequence

import numpy as np

from ..utils.exceptions import ValidationError

DEFAULT_DTYPE = np.float64

_grad_enabled = contextvars.ContextVar("flux_grad_enabled", default=True)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording a graph."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(DEFAULT_DTYPE)


class Tensor:
    """Row-major float array plus the bookkeeping needed for backward."""

    def __init__(self, data, requires_grad: bool = False, dtype=None, _ctx=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._ctx: Optional["Function"] = _ctx

    # -- array properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValidationError(
                "item() needs a single-element tensor", {"shape": list(self.shape)}
            )
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same values, cut from the graph (stop-gradient)."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            raise ValidationError("Division by a tensor is not supported")
        return ops.mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops

        return ops.index(self, key)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    # -- differentiation ----------------------------------------------------
    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires it."""
        if not self.requires_grad:
            raise ValidationError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ValidationError(
                    "backward() without a seed gradient needs a scalar",
                    {"shape": list(self.shape)},
                )
            grad = np.ones_like(self.data)
        grads = {id(self): _as_array(grad, self.dtype).reshape(self.shape)}

        for node in reversed(self._topological_order()):
            node_grad = grads.pop(id(node), None)
            if node_grad is None:
                continue
            if node._ctx is None:
                node.grad = node_grad if node.grad is None else node.grad + node_grad
                continue
            parent_grads = node._ctx.backward(node_grad)
            for parent, g in zip(node._ctx.parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = g if key not in grads else grads[key] + g


class Function:
    """One differentiable operation; an instance is one graph node's context."""

    def __init__(self, *parents: Tensor):
        self.parents: Sequence[Tensor] = parents
        self.saved = ()

    def save_for_backward(self, *values) -> None:
        self.saved = values

    def forward(self, *args, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tensors = [x if isinstance(x, Tensor) else Tensor(x) for x in inputs]
        ctx = cls(*tensors)
        out = ctx.forward(*[t.data for t in tensors], **kwargs)
        track = is_grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=track, _ctx=ctx if track else None)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype or DEFAULT_DTYPE), requires_grad=True)
