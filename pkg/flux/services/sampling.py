"""
Flexible spatiotemporal sampling.

A sampler config spans a lattice of (frames, resolution) grids; only grids whose
token pool lies inside ``[pool_min, pool_max]`` are candidates, and training draws
one uniformly per sample. ``patchify`` turns a video at a grid into a token pool.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from ..tensorcore.ops import interp_matrix
from ..utils import dataclass_from_dict, dataclass_to_dict, derive_seed, get_logger
from ..utils.exceptions import ValidationError
from .videogen import VideoSample

logger = get_logger(__name__)


@dataclass(frozen=True)
class SamplingGrid:
    F: int
    R: int
    patch: Tuple[int, int, int] = (1, 14, 14)

    @property
    def t(self) -> int:
        return self.F // self.patch[0]

    @property
    def gh(self) -> int:
        return self.R // self.patch[1]

    @property
    def gw(self) -> int:
        return self.R // self.patch[2]

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.t, self.gh, self.gw

    @property
    def pool(self) -> int:
        return self.t * self.gh * self.gw

    def to_dict(self) -> dict:
        return {"F": self.F, "R": self.R, "T": self.t, "Gh": self.gh, "Gw": self.gw, "pool": self.pool}


@dataclass
class SamplerConfig:
    """Lattice bounds and token-pool threshold. Desk-scale defaults."""

    f_min: int = 4
    f_max: int = 16
    t_step: int = 2
    r_min: int = 28
    r_max: int = 56
    r_step: int = 14
    pool_min: int = 48
    pool_max: Optional[int] = 256
    patch_t: int = 1
    patch_h: int = 14
    patch_w: int = 14
    # pin every draw to one (F, R); the fixed-grid baseline
    fixed_grid: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.fixed_grid is not None:
            self.fixed_grid = tuple(int(v) for v in self.fixed_grid)

    @classmethod
    def full_scale(cls) -> "SamplerConfig":
        return cls(
            f_min=4, f_max=24, t_step=2, r_min=168, r_max=252, r_step=28,
            pool_min=2048, pool_max=4096,
        )

    @classmethod
    def from_dict(cls, data, prefix: str = "sampler.") -> "SamplerConfig":
        return dataclass_from_dict(cls, data, prefix)

    def to_dict(self) -> dict:
        return dataclass_to_dict(self)

    @property
    def patch(self) -> Tuple[int, int, int]:
        return (self.patch_t, self.patch_h, self.patch_w)

    def frame_values(self) -> List[int]:
        return _lattice(self.f_min, self.f_max, self.t_step)

    def resolution_values(self) -> List[int]:
        return _lattice(self.r_min, self.r_max, self.r_step)

    def admits(self, pool: int) -> bool:
        return pool >= self.pool_min and (self.pool_max is None or pool <= self.pool_max)

    def validate(self) -> "SamplerConfig":
        details = self.to_dict()
        if min(self.patch) < 1 or self.f_min < 1 or self.r_min < 1:
            raise ValidationError("Sampler sizes must be positive", details)
        if self.f_min > self.f_max or self.r_min > self.r_max:
            raise ValidationError("Sampler lattice bounds are inverted", details)
        if (self.f_min < self.f_max and self.t_step < 1) or (self.r_min < self.r_max and self.r_step < 1):
            raise ValidationError("Sampler lattice steps must be positive", details)
        if self.pool_max is not None and self.pool_min > self.pool_max:
            raise ValidationError("pool_min exceeds pool_max", details)
        bad_f = [f for f in self.frame_values() if f % self.patch_t]
        bad_r = [r for r in self.resolution_values() if r % self.patch_h or r % self.patch_w]
        if bad_f or bad_r:
            raise ValidationError(
                "Candidate sizes must be divisible by the patch size",
                {"frames": bad_f, "resolutions": bad_r, "patch": list(self.patch)},
            )
        if not candidates(self, validate=False):
            raise ValidationError("No (F, R) candidate has a pool inside the threshold", details)
        if self.fixed_grid is not None:
            F, R = self.fixed_grid
            if not any(g.F == F and g.R == R for g in candidates(self, validate=False)):
                raise ValidationError(
                    "fixed_grid is not a candidate", {"fixed_grid": [F, R]}
                )
        return self


def _lattice(lo: int, hi: int, step: int) -> List[int]:
    if lo == hi:
        return [lo]
    return list(range(lo, hi + 1, step))


def candidates(cfg: SamplerConfig, validate: bool = True) -> List[SamplingGrid]:
    """Every lattice grid whose pool is inside the threshold, F then R ascending."""
    if validate:
        cfg.validate()
    return [
        grid
        for F in cfg.frame_values()
        for R in cfg.resolution_values()
        for grid in (SamplingGrid(F, R, cfg.patch),)
        if cfg.admits(grid.pool)
    ]


def sample_grid(rng_seed: int, cfg: SamplerConfig) -> SamplingGrid:
    """Uniform draw over the candidates, deterministic in ``rng_seed``."""
    cands = candidates(cfg)
    if cfg.fixed_grid is not None:
        F, R = cfg.fixed_grid
        return SamplingGrid(int(F), int(R), cfg.patch)
    rng = np.random.default_rng(derive_seed(rng_seed, "sampling.grid"))
    grid = cands[int(rng.integers(len(cands)))]
    logger.debug("Sampled grid", seed=rng_seed, F=grid.F, R=grid.R, pool=grid.pool)
    return grid


def largest_grid(cfg: SamplerConfig) -> SamplingGrid:
    """Candidate with the largest pool; ties resolve to the later candidate."""
    cands = candidates(cfg)
    best = cands[0]
    for grid in cands[1:]:
        if grid.pool >= best.pool:
            best = grid
    return best


@dataclass
class TokenPool:
    features: np.ndarray  # (P, p_t * p_h * p_w * C)
    coords: np.ndarray  # (P, 3) int (t, h, w), row-major
    grid: SamplingGrid

    @property
    def size(self) -> int:
        return int(self.features.shape[0])


VideoLike = Union[VideoSample, np.ndarray]


def _frames(video: VideoLike) -> np.ndarray:
    return video.frames if isinstance(video, VideoSample) else np.asarray(video)


def temporal_indices(n_frames: int, F: int) -> np.ndarray:
    """``F`` uniformly spaced source frames, the first at index 0."""
    if n_frames < F:
        raise ValidationError(
            "Video is shorter than the sampled frame count", {"frames": n_frames, "F": F}
        )
    return (np.arange(F) * n_frames) // F


def resize_video(frames: np.ndarray, F: int, R: int) -> np.ndarray:
    """Pick ``F`` frames uniformly, then bilinearly resize each to ``R``x``R`` (float64)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4:
        raise ValidationError("Video must be (T, H, W, C)", {"shape": list(frames.shape)})
    picked = frames[temporal_indices(frames.shape[0], F)]
    _, H, W, _ = picked.shape
    if H == R and W == R:
        return picked.copy()
    mh, mw = interp_matrix(H, R), interp_matrix(W, R)
    return np.einsum("bh,cw,thwk->tbck", mh, mw, picked, optimize=True)


def grid_coords(grid: SamplingGrid) -> np.ndarray:
    t, h, w = np.meshgrid(
        np.arange(grid.t), np.arange(grid.gh), np.arange(grid.gw), indexing="ij"
    )
    return np.stack([t.ravel(), h.ravel(), w.ravel()], axis=1).astype(np.int64)


def _rearrange(x: np.ndarray, grid: SamplingGrid) -> np.ndarray:
    pt, ph, pw = grid.patch
    C = x.shape[-1]
    x = x.reshape(grid.t, pt, grid.gh, ph, grid.gw, pw, C)
    return x.transpose(0, 2, 4, 1, 3, 5, 6).reshape(grid.pool, pt * ph * pw * C)


def patchify(video: VideoLike, grid: SamplingGrid) -> TokenPool:
    resized = resize_video(_frames(video), grid.F, grid.R)
    return TokenPool(features=_rearrange(resized, grid), coords=grid_coords(grid), grid=grid)


def unpatchify(pool: TokenPool) -> np.ndarray:
    """Inverse rearrangement back to the resized (F, R, R, C) video."""
    grid = pool.grid
    pt, ph, pw = grid.patch
    C = pool.features.shape[1] // (pt * ph * pw)
    x = pool.features.reshape(grid.t, grid.gh, grid.gw, pt, ph, pw, C)
    return x.transpose(0, 3, 1, 4, 2, 5, 6).reshape(grid.F, grid.R, grid.R, C)


def token_motion(video: VideoSample, grid: SamplingGrid) -> np.ndarray:
    """Per-token ground-truth flag: any moving pixel inside the token's patch."""
    mask = video.motion_mask.astype(np.float64)[..., None]
    resized = resize_video(mask, grid.F, grid.R) > 0.0
    return _rearrange(resized, grid).any(axis=1)
