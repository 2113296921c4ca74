"""Central finite-difference oracle for analytic gradients."""

from __future__ import annotations

from typing import Callable, Dict, Mapping, Optional, Sequence, Union

import numpy as np

from ..utils import get_logger
from ..utils.exceptions import NumericalError, ValidationError
from .tensor import Tensor, no_grad

logger = get_logger(__name__)

Params = Union[Tensor, Sequence[Tensor], Mapping[str, Tensor]]


def _named(params: Params) -> Dict[str, Tensor]:
    if isinstance(params, Tensor):
        return {"param": params}
    if isinstance(params, Mapping):
        return dict(params)
    return {f"param.{i}": t for i, t in enumerate(params)}


def _scalar(loss) -> float:
    value = loss.data if isinstance(loss, Tensor) else np.asarray(loss)
    if value.size != 1:
        raise ValidationError("grad_check needs a scalar loss", {"shape": list(value.shape)})
    value = float(value.reshape(-1)[0])
    if not np.isfinite(value):
        raise NumericalError("grad_check: non-finite loss", {"loss": value})
    return value


def gradient_errors(
    loss_fn: Callable[[], Tensor],
    params: Params,
    eps: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> Dict[str, float]:
    """Worst |analytic - central difference| / max(1, |central difference|) per parameter.

    ``max_entries`` checks a seeded subset of each tensor's entries instead of all.
    """
    if eps <= 0:
        raise ValidationError("grad_check needs eps > 0", {"eps": eps})
    named = _named(params)
    for tensor in named.values():
        tensor.grad = None

    loss = loss_fn()
    _scalar(loss)
    loss.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in named.items()
    }

    rng = np.random.default_rng(seed)
    errors: Dict[str, float] = {}
    with no_grad():
        for name, tensor in named.items():
            if max_entries is not None and tensor.size > max_entries:
                entries = np.sort(rng.choice(tensor.size, size=max_entries, replace=False))
            else:
                entries = range(tensor.size)
            worst = 0.0
            for i in entries:
                original = tensor.data.flat[i]
                tensor.data.flat[i] = original + eps
                plus = _scalar(loss_fn())
                tensor.data.flat[i] = original - eps
                minus = _scalar(loss_fn())
                tensor.data.flat[i] = original
                numeric = (plus - minus) / (2.0 * eps)
                err = abs(analytic[name].flat[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
            errors[name] = worst

    logger.debug("Gradient check finished", worst=max(errors.values(), default=0.0))
    return errors


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Params,
    eps: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Max relative gradient error over all parameters."""
    errors = gradient_errors(loss_fn, params, eps=eps, max_entries=max_entries, seed=seed)
    return max(errors.values(), default=0.0)
