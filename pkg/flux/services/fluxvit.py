"""
FluxViT: a small video transformer that runs on any token subset of any grid.

Patch vectors are layer-normalized before and after the linear embedding (dual patch
norm), positions come from a sine-cosine table resized to the current grid and
smoothed by a depthwise 3-D convolution, and every attention head adds a linear map
of its values to the attention output.

Parameters live in a flat ``{name: Tensor}`` dict so that checkpoints, optimizers and
gradient checks can walk them by name.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..tensorcore import Tensor, no_grad, ops, parameter
from ..utils import dataclass_from_dict, dataclass_to_dict, derive_seed, get_logger
from ..utils.exceptions import ValidationError
from .sampling import SamplingGrid, TokenPool
from .selector import SelectionMask

logger = get_logger(__name__)

Params = Dict[str, Tensor]

INIT_STD = 0.02


@dataclass
class FluxViTConfig:
    """Model shape plus the module ablation switches (desk-scale student defaults)."""

    embed_dim: int = 64
    num_heads: int = 4
    depth: int = 4
    mlp_ratio: float = 4.0
    max_grid: Tuple[int, int, int] = (16, 4, 4)
    patch: Tuple[int, int, int] = (1, 14, 14)
    channels: int = 3
    conv_kernel: int = 3
    num_classes: int = 4
    # teacher feature width for the alignment head; 0 disables the head
    proj_dim: int = 0
    dpn: bool = True
    glpe_conv: bool = True
    lpe: bool = True

    @classmethod
    def from_dict(cls, data, prefix: str = "model.") -> "FluxViTConfig":
        return dataclass_from_dict(cls, data, prefix)

    def to_dict(self) -> dict:
        return dataclass_to_dict(self)

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def hidden_dim(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))

    @property
    def patch_dim(self) -> int:
        pt, ph, pw = self.patch
        return pt * ph * pw * self.channels

    def validate(self) -> "FluxViTConfig":
        details = self.to_dict()
        if min(self.embed_dim, self.num_heads, self.depth, self.channels, self.num_classes) < 1:
            raise ValidationError("Model sizes must be positive", details)
        if self.embed_dim % self.num_heads:
            raise ValidationError("embed_dim must be divisible by num_heads", details)
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ValidationError("conv_kernel must be a positive odd size", details)
        if min(self.max_grid) < 1 or min(self.patch) < 1 or self.mlp_ratio <= 0:
            raise ValidationError("Grid, patch and MLP sizes must be positive", details)
        if self.proj_dim < 0:
            raise ValidationError("proj_dim must be non-negative", details)
        return self


@dataclass
class ForwardOutput:
    tokens: Tensor  # (K, D) per-token final features, CLS removed
    features: Tensor  # (D,) mean over tokens
    logits: Tensor  # (num_classes,)
    cls_attn: np.ndarray  # (K,) final-block head-averaged CLS attention over the tokens
    attentions: List[np.ndarray] = field(default_factory=list)  # per block (H, K+1, K+1)


def sincos_1d(positions: np.ndarray, dim: int) -> np.ndarray:
    if dim == 0:
        return np.zeros((len(positions), 0))
    half = dim // 2
    omega = 1.0 / (10000.0 ** (np.arange(half, dtype=np.float64) / half))
    angles = np.outer(positions.astype(np.float64), omega)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def sincos_3d(grid: Tuple[int, int, int], dim: int) -> np.ndarray:
    """(T, H, W, dim) table; each axis gets an equal even share, leftover channels are 0."""
    T, H, W = grid
    share = 2 * (dim // 6)
    table = np.zeros((T, H, W, dim))
    t = sincos_1d(np.arange(T), share)
    h = sincos_1d(np.arange(H), share)
    w = sincos_1d(np.arange(W), share)
    table[..., :share] = t[:, None, None, :]
    table[..., share : 2 * share] = h[None, :, None, :]
    table[..., 2 * share : 3 * share] = w[None, None, :, :]
    return table


def _trunc_normal(rng, shape, std: float = INIT_STD, bound: float = 2.0) -> np.ndarray:
    # absolute bounds, resampled until every entry is inside
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def init_params(cfg: FluxViTConfig, seed: int) -> Params:
    cfg.validate()
    rng = np.random.default_rng(derive_seed(seed, "fluxvit.init"))
    D, Cp, Hd = cfg.embed_dim, cfg.patch_dim, cfg.hidden_dim
    Dh, H, k = cfg.head_dim, cfg.num_heads, cfg.conv_kernel

    raw: Dict[str, np.ndarray] = {}

    def linear(name: str, fan_in: int, fan_out: int, zero: bool = False) -> None:
        raw[f"{name}.weight"] = np.zeros((fan_in, fan_out)) if zero else _trunc_normal(rng, (fan_in, fan_out))
        raw[f"{name}.bias"] = np.zeros(fan_out)

    def norm(name: str, n: int) -> None:
        raw[f"{name}.weight"] = np.ones(n)
        raw[f"{name}.bias"] = np.zeros(n)

    norm("patch_norm_pre", Cp)
    linear("patch_embed", Cp, D)
    norm("patch_norm_post", D)

    raw["pos_embed.table"] = sincos_3d(cfg.max_grid, D)
    kernel = np.zeros((k, k, k, D))
    kernel[k // 2, k // 2, k // 2, :] = 1.0
    raw["pos_embed.conv"] = kernel
    raw["cls_token"] = _trunc_normal(rng, (D,))
    raw["cls_pos"] = np.zeros(D)

    for i in range(cfg.depth):
        prefix = f"blocks.{i}"
        norm(f"{prefix}.norm1", D)
        linear(f"{prefix}.attn.qkv", D, 3 * D)
        raw[f"{prefix}.attn.lpe"] = np.zeros((H, Dh, Dh))
        linear(f"{prefix}.attn.proj", D, D)
        norm(f"{prefix}.norm2", D)
        linear(f"{prefix}.mlp.fc1", D, Hd)
        linear(f"{prefix}.mlp.fc2", Hd, D)

    norm("norm", D)
    linear("head", D, cfg.num_classes, zero=True)
    if cfg.proj_dim:
        linear("align_proj", D, cfg.proj_dim)

    return {name: parameter(value) for name, value in raw.items()}


def copy_params(params: Params) -> Params:
    return {name: parameter(t.data.copy()) for name, t in params.items()}


def param_count(params: Params) -> int:
    return sum(t.size for t in params.values())


def _linear(x: Tensor, params: Params, name: str) -> Tensor:
    return x @ params[f"{name}.weight"] + params[f"{name}.bias"]


def _norm(x: Tensor, params: Params, name: str) -> Tensor:
    return ops.layer_norm(x, params[f"{name}.weight"], params[f"{name}.bias"])


def patch_embed_dpn(raw_patches, params: Params, cfg: FluxViTConfig) -> Tensor:
    """LN_post(LN_pre(raw) W + b); plain linear embedding when ``dpn`` is off."""
    x = raw_patches if isinstance(raw_patches, Tensor) else Tensor(np.asarray(raw_patches, dtype=np.float64))
    if x.ndim != 2 or x.shape[1] != cfg.patch_dim:
        raise ValidationError(
            "Raw patches must be (K, patch_dim)", {"shape": list(x.shape), "patch_dim": cfg.patch_dim}
        )
    if cfg.dpn:
        x = _norm(x, params, "patch_norm_pre")
    x = _linear(x, params, "patch_embed")
    if cfg.dpn:
        x = _norm(x, params, "patch_norm_post")
    return x


def glpe(grid: SamplingGrid, mask: SelectionMask, params: Params, cfg: FluxViTConfig) -> Tensor:
    """Resize the table to the grid, smooth it, then gather the masked rows."""
    dims = grid.dims
    if any(d > m for d, m in zip(dims, cfg.max_grid)):
        raise ValidationError(
            "Sampling grid exceeds the positional table",
            {"grid": list(dims), "max_grid": list(cfg.max_grid)},
        )
    table = ops.trilinear_resize(params["pos_embed.table"], dims)
    if cfg.glpe_conv:
        table = ops.depthwise_conv3d(table, params["pos_embed.conv"])
    flat = table.reshape(grid.pool, cfg.embed_dim)
    return ops.gather(flat, mask.indices)


def attention_lpe(x: Tensor, params: Params, prefix: str, cfg: FluxViTConfig) -> Tuple[Tensor, np.ndarray]:
    """softmax(Q K^T / sqrt(d)) V + V W_lpe per head, then the output projection.

    Returns the projected output and the pre-bias attention weights (H, N, N).
    """
    n = x.shape[0]
    H, Dh = cfg.num_heads, cfg.head_dim
    qkv = _linear(x, params, f"{prefix}.qkv")
    qkv = qkv.reshape(n, 3, H, Dh).transpose(1, 2, 0, 3)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(Dh))
    attn = ops.softmax(scores)
    z = attn @ v
    if cfg.lpe:
        z = z + v @ params[f"{prefix}.lpe"]
    z = z.transpose(1, 0, 2).reshape(n, cfg.embed_dim)
    return _linear(z, params, f"{prefix}.proj"), attn.data


def block(x: Tensor, params: Params, index: int, cfg: FluxViTConfig) -> Tuple[Tensor, np.ndarray]:
    prefix = f"blocks.{index}"
    h, attn = attention_lpe(_norm(x, params, f"{prefix}.norm1"), params, f"{prefix}.attn", cfg)
    x = x + h
    h = _norm(x, params, f"{prefix}.norm2")
    h = _linear(ops.gelu(_linear(h, params, f"{prefix}.mlp.fc1")), params, f"{prefix}.mlp.fc2")
    return x + h, attn


def forward(pool: TokenPool, mask: SelectionMask, params: Params, cfg: FluxViTConfig) -> ForwardOutput:
    if mask.K < 1:
        raise ValidationError("Cannot run the model on an empty mask")
    if int(mask.indices.max()) >= pool.size:
        raise ValidationError(
            "Mask indexes past the token pool", {"max_index": int(mask.indices.max()), "pool": pool.size}
        )
    D = cfg.embed_dim
    tokens = patch_embed_dpn(pool.features[mask.indices], params, cfg)
    tokens = tokens + glpe(pool.grid, mask, params, cfg)
    cls = (params["cls_token"] + params["cls_pos"]).reshape(1, D)
    x = ops.concat([cls, tokens], axis=0)

    attentions = []
    for i in range(cfg.depth):
        x, attn = block(x, params, i, cfg)
        attentions.append(attn)

    x = _norm(x, params, "norm")
    out_tokens = x[1:]
    features = out_tokens.mean(axis=0)
    logits = _linear(features.reshape(1, D), params, "head").reshape(cfg.num_classes)
    cls_attn = attentions[-1][:, 0, 1:].mean(axis=0)
    return ForwardOutput(
        tokens=out_tokens, features=features, logits=logits, cls_attn=cls_attn, attentions=attentions
    )


def project(tokens: Tensor, params: Params) -> Tensor:
    """Alignment head onto the teacher's feature width."""
    if "align_proj.weight" not in params:
        raise ValidationError("Model has no alignment head (proj_dim is 0)")
    return _linear(tokens, params, "align_proj")


class FluxViT:
    """Config plus parameter dict, with the forward passes bound to them."""

    def __init__(self, cfg: FluxViTConfig, params: Optional[Params] = None, seed: int = 0):
        self.cfg = cfg.validate()
        self.params = params if params is not None else init_params(cfg, seed)
        logger.debug("Model ready", params=param_count(self.params), depth=cfg.depth, dim=cfg.embed_dim)

    def __call__(self, pool: TokenPool, mask: SelectionMask) -> ForwardOutput:
        return forward(pool, mask, self.params, self.cfg)

    def embed(self, pool: TokenPool) -> np.ndarray:
        """Embedded (post-DPN) tokens for the whole pool, without a graph."""
        with no_grad():
            return patch_embed_dpn(pool.features, self.params, self.cfg).data.copy()

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.zero_grad()

    def copy(self) -> "FluxViT":
        return FluxViT(self.cfg, copy_params(self.params))

    @property
    def num_params(self) -> int:
        return param_count(self.params)
