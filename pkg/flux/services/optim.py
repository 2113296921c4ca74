"""AdamW with a linear-warmup cosine learning-rate schedule."""

import math
from typing import Dict, Iterable, Optional

import numpy as np

from ..utils.exceptions import NumericalError, ValidationError
from .fluxvit import Params

# positional tables and the smoothing kernel are not decayed
NO_DECAY = ("pos_embed.", "cls_pos", "cls_token")


def cosine_lr(step: int, total_steps: int, base_lr: float, warmup_frac: float, min_lr: float = 0.0) -> float:
    """Learning rate for 0-based ``step``: linear warmup, then cosine down to ``min_lr``."""
    if total_steps <= 0:
        return base_lr
    warmup = int(round(warmup_frac * total_steps))
    if warmup and step < warmup:
        return base_lr * (step + 1) / warmup
    progress = (step - warmup) / max(1, total_steps - warmup)
    progress = min(max(progress, 0.0), 1.0)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * progress))


def decays(name: str, value: np.ndarray) -> bool:
    return value.ndim >= 2 and not name.startswith(NO_DECAY)


class AdamW:
    """Decoupled weight decay Adam over a named parameter dict."""

    def __init__(
        self,
        params: Params,
        lr: float = 1e-3,
        betas=(0.9, 0.98),
        eps: float = 1e-8,
        weight_decay: float = 0.05,
        frozen: Iterable[str] = (),
    ):
        if lr < 0 or weight_decay < 0 or not (0 <= betas[0] < 1 and 0 <= betas[1] < 1):
            raise ValidationError(
                "Invalid AdamW hyperparameters",
                {"lr": lr, "betas": list(betas), "weight_decay": weight_decay},
            )
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.frozen = set(frozen)
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v: Dict[str, np.ndarray] = {k: np.zeros_like(t.data) for k, t in params.items()}

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.zero_grad()

    def step(self, lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name in sorted(self.params):
            tensor = self.params[name]
            if name in self.frozen or tensor.grad is None:
                continue
            grad = tensor.grad
            if not np.all(np.isfinite(grad)):
                raise NumericalError("Non-finite gradient", {"param": name})
            if self.weight_decay and decays(name, tensor.data):
                tensor.data -= lr * self.weight_decay * tensor.data
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * grad
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * grad * grad
            update = (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            tensor.data -= lr * update
