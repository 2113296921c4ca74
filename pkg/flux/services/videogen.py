import concurrent.futures
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from ..utils import canonical_json, dataclass_from_dict, dataclass_to_dict, derive_seed, get_logger
from ..utils.exceptions import ValidationError

logger = get_logger(__name__)

MOTION = "motion"
TEXTURE = "texture"


@dataclass
class GenSpec:
    """Synthetic video generator settings (desk-scale defaults)."""

    num_classes: int = 4
    frames: int = 16
    height: int = 56
    width: int = 56
    channels: int = 3
    sprites: Tuple[int, int] = (1, 3)
    sprite_size: Tuple[int, int] = (6, 14)
    speed: Tuple[float, float] = (1.0, 3.0)
    noise: float = 0.1
    semantics: str = MOTION

    @classmethod
    def from_dict(cls, data, prefix: str = "gen.") -> "GenSpec":
        return dataclass_from_dict(cls, data, prefix)

    def to_dict(self) -> dict:
        return dataclass_to_dict(self)

    def validate(self) -> "GenSpec":
        if self.num_classes < 1 or min(self.frames, self.height, self.width, self.channels) < 1:
            raise ValidationError("GenSpec dimensions must be positive", self.to_dict())
        if self.semantics not in (MOTION, TEXTURE):
            raise ValidationError(
                f"Unknown class semantics '{self.semantics}'", {"semantics": self.semantics}
            )
        lo, hi = self.sprites
        if lo < 0 or lo > hi:
            raise ValidationError("Invalid sprite count range", {"sprites": [lo, hi]})
        if self.semantics == MOTION and lo == 0:
            raise ValidationError(
                "Motion-direction classes need at least one sprite per video",
                {"sprites": [lo, hi]},
            )
        smin, smax = self.sprite_size
        if smin < 1 or smin > smax or smax > min(self.height, self.width):
            raise ValidationError(
                "Sprite sizes must fit inside the frame", {"sprite_size": [smin, smax]}
            )
        vmin, vmax = self.speed
        if vmin < 0 or vmin > vmax:
            raise ValidationError("Invalid speed range", {"speed": [vmin, vmax]})
        if not 0.0 <= self.noise <= 1.0:
            raise ValidationError("Noise amplitude must be in [0, 1]", {"noise": self.noise})
        return self


@dataclass
class VideoSample:
    frames: np.ndarray  # (T, H, W, C) float32 in [0, 1]
    label: int
    motion_mask: np.ndarray  # (T, H, W) bool
    seed: int


def _direction(label: int, num_classes: int) -> Tuple[float, float]:
    # label 0 moves right, then counter-clockwise; image rows grow downwards
    angle = 2.0 * math.pi * label / num_classes
    return math.cos(angle), -math.sin(angle)


def _start(rng, extent: int, size: int, travel: float) -> float:
    lo = max(0.0, -travel)
    hi = (extent - size) - max(0.0, travel)
    if lo <= hi:
        return float(rng.uniform(lo, hi))
    return float(rng.uniform(0.0, extent - size))


def _bounce(pos: float, vel: float, limit: float) -> Tuple[float, float]:
    pos += vel
    if pos < 0.0:
        pos, vel = -pos, -vel
    elif pos > limit:
        pos, vel = 2.0 * limit - pos, -vel
    return min(max(pos, 0.0), limit), vel


def gen_video(seed: int, spec: GenSpec, noise_seed: Optional[int] = None) -> VideoSample:
    """One synthetic video of bouncing rectangles over per-frame uniform noise.

    The label is ``seed % num_classes``. Under motion semantics it fixes the
    sprites' heading; under texture semantics it fixes their stripe period.
    Sprite geometry and background noise come from separate seed streams, so
    ``noise_seed`` reseeds the background without touching the label.
    """
    if seed < 0:
        raise ValidationError("Seed must be non-negative", {"seed": seed})
    spec.validate()

    T, H, W, C = spec.frames, spec.height, spec.width, spec.channels
    rng = np.random.default_rng(derive_seed(seed, "videogen.sprites"))
    noise_rng = np.random.default_rng(
        derive_seed(seed if noise_seed is None else noise_seed, "videogen.noise")
    )
    label = int(seed % spec.num_classes)

    frames = noise_rng.uniform(0.0, spec.noise, size=(T, H, W, C))
    mask = np.zeros((T, H, W), dtype=bool)

    n_sprites = int(rng.integers(spec.sprites[0], spec.sprites[1] + 1))
    for k in range(n_sprites):
        h, w = (int(v) for v in rng.integers(spec.sprite_size[0], spec.sprite_size[1] + 1, size=2))
        color = np.clip(0.5 + 0.5 * rng.uniform(size=C) + 0.01 * k, 0.0, 1.0)
        if spec.semantics == MOTION:
            dx, dy = _direction(label, spec.num_classes)
        else:
            theta = float(rng.uniform(0.0, 2.0 * math.pi))
            dx, dy = math.cos(theta), -math.sin(theta)
        speed = float(rng.uniform(*spec.speed)) if spec.speed[1] > spec.speed[0] else spec.speed[0]
        vx, vy = speed * dx, speed * dy

        patch = np.broadcast_to(color, (h, w, C)).copy()
        if spec.semantics == TEXTURE:
            period = 2 + label
            rows = (np.arange(h) % period) < (period + 1) // 2
            patch[~rows] *= 0.6

        x = _start(rng, W, w, vx * (T - 1))
        y = _start(rng, H, h, vy * (T - 1))
        for t in range(T):
            if t > 0:
                x, vx = _bounce(x, vx, W - w)
                y, vy = _bounce(y, vy, H - h)
            px, py = int(math.floor(x + 0.5)), int(math.floor(y + 0.5))
            frames[t, py : py + h, px : px + w] = patch
            mask[t, py : py + h, px : px + w] = True

    return VideoSample(
        frames=frames.astype(np.float32), label=label, motion_mask=mask, seed=int(seed)
    )


def gen_dataset(
    seed: int, spec: GenSpec, count: int, workers: int = 1
) -> List[VideoSample]:
    """``count`` samples with seeds ``seed + index``; classes balanced by construction."""
    if count <= 0:
        raise ValidationError("Dataset count must be positive", {"count": count})
    spec.validate()
    seeds = [seed + i for i in range(count)]
    logger.info("Generating synthetic videos", count=count, seed=seed, workers=workers)
    if workers <= 1:
        return [gen_video(s, spec) for s in seeds]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(lambda s: gen_video(s, spec), seeds))


def export_dataset(samples: List[VideoSample], directory: Path, spec: GenSpec) -> str:
    """Write raw little-endian arrays plus ``manifest.json``; return the manifest hash."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sample in enumerate(samples):
        frames_name = f"sample_{i:05d}.frames.f32"
        mask_name = f"sample_{i:05d}.mask.u8"
        frames = sample.frames.astype("<f4")
        mask = sample.motion_mask.astype("u1")
        frames.tofile(directory / frames_name)
        mask.tofile(directory / mask_name)
        entries.append(
            {
                "seed": sample.seed,
                "label": sample.label,
                "shape": list(frames.shape),
                "frames_file": frames_name,
                "mask_file": mask_name,
                "sha256": hashlib.sha256(frames.tobytes() + mask.tobytes()).hexdigest(),
            }
        )
    manifest = {"gen": spec.to_dict(), "count": len(samples), "samples": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    digest = hashlib.sha256(canonical_json(manifest).encode("utf-8")).hexdigest()
    logger.info("Exported dataset", directory=str(directory), count=len(samples), hash=digest)
    return digest


def load_dataset(directory: Path) -> List[VideoSample]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError(
            "Dataset directory has no manifest.json", {"directory": str(directory)}
        )
    manifest = json.loads(manifest_path.read_text())
    samples = []
    for entry in manifest["samples"]:
        shape = tuple(entry["shape"])
        frames = np.fromfile(directory / entry["frames_file"], dtype="<f4").reshape(shape)
        mask = np.fromfile(directory / entry["mask_file"], dtype="u1").reshape(shape[:3])
        samples.append(
            VideoSample(
                frames=frames.astype(np.float32),
                label=int(entry["label"]),
                motion_mask=mask.astype(bool),
                seed=int(entry["seed"]),
            )
        )
    logger.info("Loaded dataset", directory=str(directory), count=len(samples))
    return samples
