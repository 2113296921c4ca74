import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

from .services.evaluation import EvalConfig
from .services.flux_train import TrainConfig
from .services.fluxvit import FluxViTConfig
from .services.sampling import SamplerConfig, SamplingGrid, candidates, largest_grid
from .services.tokenopt import TokenOptConfig
from .services.videogen import GenSpec
from .utils import config_hash, dataclass_to_dict
from .utils.exceptions import ConfigurationError, FluxError, ValidationError

MODES = ("gen-data", "pretrain", "finetune", "eval", "tokenopt", "flops", "grad-check")


class AppConfig:
    """Process-level configuration from environment variables."""

    def __init__(self):
        # Logging
        self.log_level = os.getenv("LOG_LEVEL", "INFO")

        # Worker cap for dataset generation and evaluation
        try:
            self.num_threads = max(1, int(os.getenv("FLUX_NUM_THREADS", "1")))
        except ValueError:
            raise ConfigurationError(
                "FLUX_NUM_THREADS must be an integer",
                {"FLUX_NUM_THREADS": os.getenv("FLUX_NUM_THREADS")},
            )

        # Outputs
        self.runs_dir = os.getenv("FLUX_RUNS_DIR", "runs")

        # Inspection API
        self.port = int(os.getenv("PORT", "8080"))


def _default_student() -> FluxViTConfig:
    return FluxViTConfig(proj_dim=128)


def _default_teacher() -> FluxViTConfig:
    return FluxViTConfig(embed_dim=128, num_heads=4, depth=4)


@dataclass
class ExperimentConfig:
    """One experiment: every sub-config plus paths and the global seed."""

    mode: str = "finetune"
    seed: int = 0
    # read a dataset exported by gen-data instead of generating one
    data_dir: Optional[str] = None
    # initial (or evaluated) student checkpoint directory
    checkpoint: Optional[str] = None
    # output directory; a fresh run directory under FLUX_RUNS_DIR when unset
    out_dir: Optional[str] = None
    train_samples: int = 256
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    gen: GenSpec = field(default_factory=GenSpec)
    model: FluxViTConfig = field(default_factory=_default_student)
    teacher: Optional[FluxViTConfig] = field(default_factory=_default_teacher)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    tokenopt: TokenOptConfig = field(default_factory=TokenOptConfig)

    SECTIONS = {
        "sampler": SamplerConfig,
        "gen": GenSpec,
        "model": FluxViTConfig,
        "teacher": FluxViTConfig,
        "train": TrainConfig,
        "eval": EvalConfig,
        "tokenopt": TokenOptConfig,
    }

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> "ExperimentConfig":
        data = dict(data or {})
        scalars = {"mode", "seed", "data_dir", "checkpoint", "out_dir", "train_samples"}
        unknown = [key for key in data if key not in scalars and key not in cls.SECTIONS]

        kwargs: Dict[str, Any] = {key: data[key] for key in scalars if key in data}
        defaults = cls()
        for name, section_cls in cls.SECTIONS.items():
            if name not in data:
                continue
            if name == "teacher" and data[name] is None:
                kwargs[name] = None
                continue
            if not isinstance(data[name], Mapping):
                raise ConfigurationError(f"Section '{name}' must be an object", {"section": name})
            # partial sections override the experiment's defaults, not the class defaults
            base = getattr(defaults, name)
            merged = {**(base.to_dict() if base is not None else {}), **data[name]}
            try:
                kwargs[name] = section_cls.from_dict(merged, prefix=f"{name}.")
            except ConfigurationError as exc:
                unknown.extend(exc.details.get("unknown_keys", []))
            except TypeError as exc:
                raise ConfigurationError(f"Invalid section '{name}': {exc}", {"section": name})
        if unknown:
            unknown = sorted(unknown)
            raise ConfigurationError(
                f"Unknown configuration keys: {', '.join(unknown)}", {"unknown_keys": unknown}
            )
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Sequence[str] = ()) -> "ExperimentConfig":
        data: Dict[str, Any] = {}
        if path:
            config_path = Path(path)
            if not config_path.exists():
                raise ConfigurationError("Config file not found", {"path": str(config_path)})
            try:
                data = json.loads(config_path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"Config is not valid JSON: {exc}", {"path": str(config_path)})
        return cls.from_dict(apply_overrides(data, overrides))

    def to_dict(self) -> Dict[str, Any]:
        out = dataclass_to_dict(self)
        if self.teacher is None:
            out["teacher"] = None
        return out

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    def validate(self) -> "ExperimentConfig":
        """Validate every sub-config, then the constraints between them."""
        if self.mode not in MODES:
            raise ValidationError(f"Unknown mode '{self.mode}'", {"modes": list(MODES)})
        if self.seed < 0 or self.train_samples < 1:
            raise ValidationError("seed and train_samples are out of range", {"seed": self.seed})
        for name in self.SECTIONS:
            section = getattr(self, name)
            if section is not None:
                section.validate()
        if self.mode == "flops":
            return self

        grids = candidates(self.sampler)
        min_pool = min(g.pool for g in grids)
        min_t = min(g.t for g in grids)
        big = tuple(max(g.dims[a] for g in grids) for a in range(3))
        problems: List[str] = []

        if self.sampler.f_max > self.gen.frames:
            problems.append("sampler.f_max exceeds the generated video length")
        models = [("model", self.model)] + ([("teacher", self.teacher)] if self.teacher else [])
        for name, model in models:
            if any(b > m for b, m in zip(big, model.max_grid)):
                problems.append(f"{name}.max_grid is smaller than the largest sampling grid {list(big)}")
            if tuple(model.patch) != self.sampler.patch or model.channels != self.gen.channels:
                problems.append(f"{name} patch/channels do not match the sampler and generator")
            if model.num_classes != self.gen.num_classes:
                problems.append(f"{name}.num_classes does not match gen.num_classes")

        if self.mode in ("pretrain", "finetune"):
            if self.train.teacher_count > min_pool and self.mode == "pretrain":
                problems.append(f"train.teacher_count exceeds the smallest candidate pool ({min_pool})")
            if self.train.counts[0] > min_pool:
                problems.append(f"train.counts exceed the smallest candidate pool ({min_pool})")
            if self.train.groups > min_t:
                problems.append(f"train.groups exceeds the smallest temporal grid ({min_t})")
        if self.mode == "finetune" and any(k % self.train.groups for k in self.train.counts):
            problems.append("train.counts must all be divisible by train.groups for nested masks")
        if self.mode == "pretrain":
            if self.train.teacher_mode == "pretrained" and self.train.teacher_count % self.train.groups:
                problems.append("train.teacher_count must be divisible by train.groups to pre-train the teacher")
            if self.teacher is None:
                problems.append("pretrain needs a teacher config")
            elif self.model.proj_dim != self.teacher.embed_dim and not (
                self.model.proj_dim == 0 and self.model.embed_dim == self.teacher.embed_dim
            ):
                problems.append("model.proj_dim must equal teacher.embed_dim")
        if self.mode in ("eval", "tokenopt") and not self.checkpoint:
            problems.append(f"{self.mode} needs a checkpoint")
        if self.mode == "eval":
            grid = self.eval_grid()
            if max(self.eval.counts) > grid.pool:
                problems.append(f"eval.counts exceed the evaluation grid's pool ({grid.pool})")
        if self.tokenopt.frames and max(self.tokenopt.frames) > self.gen.frames:
            problems.append("tokenopt.frames exceed the generated video length")

        if problems:
            raise ValidationError("; ".join(problems), {"problems": problems})

        paths = (
            ("data_dir", self.data_dir),
            ("checkpoint", self.checkpoint),
            ("train.teacher_checkpoint", self.train.teacher_checkpoint if self.mode == "pretrain" else None),
        )
        for label, path in paths:
            if path and not Path(path).exists():
                raise ConfigurationError(f"{label} does not exist", {label: path})
        return self

    def eval_grid(self):
        if self.eval.grid is not None:
            F, R = self.eval.grid
            return SamplingGrid(F, R, self.sampler.patch)
        return largest_grid(self.sampler)


def parse_value(raw: str) -> Any:
    """JSON when it parses, the raw string otherwise."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: Mapping[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply ``section.key=value`` overrides to a nested config dict (copied)."""
    result = json.loads(json.dumps(dict(data)))
    seen: Dict[str, Any] = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"Override '{item}' is not key=value", {"override": item})
        key, raw = item.split("=", 1)
        value = parse_value(raw)
        if key in seen and seen[key] != value:
            raise ConfigurationError(
                f"Conflicting overrides for '{key}'", {"key": key, "values": [seen[key], value]}
            )
        seen[key] = value
        node = result
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            elif not isinstance(child, dict):
                raise ConfigurationError(f"Override '{key}' descends into a value", {"key": key})
            node = child
        node[parts[-1]] = value
    return result


def check(cfg: ExperimentConfig) -> ExperimentConfig:
    """Validate, normalizing any non-Flux exception into a ValidationError."""
    try:
        return cfg.validate()
    except FluxError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"Invalid configuration: {exc}")
