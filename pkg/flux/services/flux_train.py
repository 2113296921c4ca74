"""
Training loops.

Pre-training (``pt``) aligns a student to a frozen teacher through the double mask:
the teacher sees K group-dynamic tokens of a flexibly sampled grid, and each student
count keeps the teacher-visible tokens with the most CLS attention. Fine-tuning
(``ft``) runs one model at several nested token counts of the same grid, with
cross-entropy at every count and smooth-L1 self-distillation from each count to the
next smaller one.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..tensorcore import Tensor, no_grad, ops
from ..utils import dataclass_from_dict, dataclass_to_dict, derive_seed, get_logger, write_csv
from ..utils.exceptions import NumericalError, TrainingError, ValidationError
from .checkpoint import save_checkpoint
from .evaluation import evaluate, score_pool
from .fluxvit import FluxViT, Params, project
from .optim import AdamW, cosine_lr
from .sampling import SamplerConfig, SamplingGrid, TokenPool, largest_grid, patchify, sample_grid
from .selector import (
    SelectionMask,
    nested_masks,
    positions_in,
    select_group_dynamic,
    student_mask,
)
from .videogen import VideoSample

logger = get_logger(__name__)

PT = "pt"
FT = "ft"

CSV_FIELDS = [
    "step", "total_loss", "ce_k1", "ce_k2", "ce_k3", "sd_loss", "acc_k1", "acc_k2", "acc_k3",
]

GRAD_GROUPS = {
    "patch_embed": ("patch_norm_pre.", "patch_embed.", "patch_norm_post."),
    "pos_embed": ("pos_embed.",),
    "qkv": (".attn.qkv.",),
    "lpe": (".attn.lpe",),
    "attn_proj": (".attn.proj.",),
    "mlp": (".mlp.",),
    "head": ("head.",),
}


@dataclass
class TrainConfig:
    """Optimization and token-count settings (desk-scale defaults)."""

    steps: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    min_lr: float = 0.0
    warmup_frac: float = 0.1
    weight_decay: float = 0.05
    betas: Tuple[float, float] = (0.9, 0.98)
    # student token counts, largest first; one count trains a single-count model
    counts: Tuple[int, ...] = (32, 16, 8)
    teacher_count: int = 48
    groups: int = 4
    norm_p: int = 2
    beta: float = 1.0
    distill_weight: float = 1.0
    # dynamic scores on post-DPN embeddings or on raw patches
    score_on: str = "embedded"
    eval_every: int = 50
    log_every: int = 10
    grad_norms: bool = True
    teacher_mode: str = "random"
    teacher_pretrain_steps: int = 0
    teacher_checkpoint: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        self.counts = tuple(int(k) for k in self.counts)
        self.betas = tuple(float(b) for b in self.betas)

    @classmethod
    def from_dict(cls, data, prefix: str = "train.") -> "TrainConfig":
        return dataclass_from_dict(cls, data, prefix)

    def to_dict(self) -> dict:
        return dataclass_to_dict(self)

    def validate(self) -> "TrainConfig":
        details = self.to_dict()
        if self.steps < 0 or self.batch_size < 1 or self.eval_every < 1 or self.log_every < 1:
            raise ValidationError("steps, batch_size, eval_every and log_every are out of range", details)
        if self.lr < 0 or self.min_lr < 0 or not 0.0 <= self.warmup_frac < 1.0 or self.weight_decay < 0:
            raise ValidationError("Invalid learning-rate settings", details)
        if not self.counts or min(self.counts) < 1:
            raise ValidationError("Token counts must be positive", details)
        if any(a < b for a, b in zip(self.counts, self.counts[1:])):
            raise ValidationError("Token counts must be non-increasing", {"counts": list(self.counts)})
        if self.counts[0] > self.teacher_count:
            raise ValidationError(
                "Student counts cannot exceed the teacher count",
                {"counts": list(self.counts), "teacher_count": self.teacher_count},
            )
        if self.groups < 1 or self.norm_p not in (1, 2) or self.beta <= 0:
            raise ValidationError("Invalid selector or loss settings", details)
        if self.distill_weight < 0:
            raise ValidationError("distill_weight must be non-negative", details)
        if self.score_on not in ("embedded", "raw"):
            raise ValidationError(f"Unknown score_on '{self.score_on}'", details)
        if self.teacher_mode not in ("random", "pretrained", "checkpoint"):
            raise ValidationError(f"Unknown teacher_mode '{self.teacher_mode}'", details)
        if self.teacher_mode == "checkpoint" and not self.teacher_checkpoint:
            raise ValidationError("teacher_mode 'checkpoint' needs teacher_checkpoint", details)
        if self.teacher_mode == "pretrained" and self.teacher_pretrain_steps < 1:
            raise ValidationError("teacher_mode 'pretrained' needs teacher_pretrain_steps > 0", details)
        return self


class MetricsLog:
    """Append-only per-step records plus the environment stamp."""

    def __init__(self, env: Optional[Dict[str, Any]] = None):
        self.env = dict(env or {})
        self.records: List[Dict[str, Any]] = []

    def append(self, record: Dict[str, Any]) -> None:
        step = record["step"]
        if self.records and step <= self.records[-1]["step"]:
            raise ValidationError(
                "Metrics steps must be strictly increasing",
                {"step": step, "last": self.records[-1]["step"]},
            )
        self.records.append(dict(record))

    def __len__(self) -> int:
        return len(self.records)

    def last(self, key: str):
        for record in reversed(self.records):
            if record.get(key) is not None:
                return record[key]
        return None

    def csv_rows(self) -> List[Dict[str, Any]]:
        return [{k: _csv_value(record.get(k)) for k in CSV_FIELDS} for record in self.records]

    def write_jsonl(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            fh.write(json.dumps({"env": self.env}, sort_keys=True) + "\n")
            for record in self.records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def write_csv(self, path: Path) -> None:
        write_csv(path, CSV_FIELDS, self.csv_rows())


def _csv_value(value):
    return "" if value is None else value


@dataclass
class StepResult:
    loss: float
    components: Dict[str, Any] = field(default_factory=dict)
    correct: List[int] = field(default_factory=list)
    teacher_tokens: List[int] = field(default_factory=list)

    def grads(self, params: Params) -> Dict[str, np.ndarray]:
        return {name: t.grad for name, t in params.items() if t.grad is not None}


@dataclass
class TrainResult:
    log: MetricsLog
    model: FluxViT
    checkpoint: Optional[Path] = None


# -- losses --------------------------------------------------------------------------


def align_loss(
    student_feats: Tensor,
    teacher_feats,
    projection: Optional[Params] = None,
    beta: float = 1.0,
) -> Tensor:
    """Smooth-L1 between L2-normalized projected student rows and normalized teacher rows."""
    student = student_feats if isinstance(student_feats, Tensor) else Tensor(student_feats)
    teacher = ops.stop_gradient(teacher_feats)
    if student.shape[0] == 0 or teacher.shape[0] == 0:
        raise ValidationError("Alignment needs at least one token")
    if projection is not None and "align_proj.weight" in projection:
        student = project(student, projection)
    return ops.smooth_l1(ops.l2_normalize(student), ops.l2_normalize(teacher), beta=beta)


def self_distill_loss(features: Sequence[Tensor], beta: float = 1.0) -> Optional[Tensor]:
    """Each count's pooled features regress onto the stop-gradient features of the next larger count."""
    total = None
    for larger, smaller in zip(features, features[1:]):
        term = ops.smooth_l1(smaller, ops.stop_gradient(larger), beta=beta)
        total = term if total is None else total + term
    return total


def module_grad_norms(params: Params) -> Dict[str, float]:
    norms = {}
    for group, tags in GRAD_GROUPS.items():
        sq = 0.0
        for name, tensor in params.items():
            if tensor.grad is not None and any(tag in name for tag in tags):
                sq += float(np.sum(tensor.grad * tensor.grad))
        norms[f"grad_norm.{group}"] = float(np.sqrt(sq))
    return norms


# -- per-sample pieces ---------------------------------------------------------------


def _sample_seed(seed: int, step: int, index: int) -> int:
    return derive_seed(seed, f"train.sample.{step}.{index}")


def score_tokens(model: FluxViT, pool: TokenPool, cfg: TrainConfig):
    return score_pool(model, pool, cfg.score_on, cfg.norm_p)


def teacher_mask(teacher: FluxViT, pool: TokenPool, cfg: TrainConfig) -> SelectionMask:
    if pool.size < cfg.teacher_count:
        raise ValidationError(
            "Token pool is smaller than the teacher count",
            {"pool": pool.size, "teacher_count": cfg.teacher_count},
        )
    scores = score_tokens(teacher, pool, cfg)
    return select_group_dynamic(scores, pool.coords, cfg.teacher_count, cfg.groups)


def pt_sample_loss(
    video: VideoSample, student: FluxViT, teacher: FluxViT, grid: SamplingGrid, cfg: TrainConfig
) -> Tuple[Tensor, Dict[str, Any]]:
    pool = patchify(video, grid)
    with no_grad():
        tmask = teacher_mask(teacher, pool, cfg)
        tout = teacher(pool, tmask)
    targets = tout.tokens.data

    losses = []
    for count in cfg.counts:
        smask = student_mask(tout.cls_attn, count, tmask)
        sout = student(pool, smask)
        losses.append(align_loss(sout.tokens, targets[positions_in(tmask, smask)], student.params, cfg.beta))
    total = losses[0]
    for term in losses[1:]:
        total = total + term
    total = total * (1.0 / len(losses))
    return total, {"align": [t.item() for t in losses], "teacher_tokens": tmask.K}


def ft_sample_loss(
    video: VideoSample, model: FluxViT, grid: SamplingGrid, cfg: TrainConfig
) -> Tuple[Tensor, Dict[str, Any]]:
    pool = patchify(video, grid)
    with no_grad():
        scores = score_tokens(model, pool, cfg)
    masks = nested_masks(scores, pool.coords, cfg.counts, cfg.groups)
    outs = [model(pool, mask) for mask in masks]

    ces = [ops.cross_entropy(out.logits, video.label) for out in outs]
    total = ces[0]
    for term in ces[1:]:
        total = total + term
    sd = None
    if cfg.distill_weight > 0 and len(outs) > 1:
        sd = self_distill_loss([out.features for out in outs], cfg.beta)
        total = total + sd * cfg.distill_weight
    correct = [int(np.argmax(out.logits.data) == video.label) for out in outs]
    return total, {"ce": [t.item() for t in ces], "sd": sd.item() if sd is not None else 0.0, "correct": correct}


def _accumulate(losses: List[Tuple[Tensor, Dict[str, Any]]]) -> float:
    """Backward every sample loss scaled by 1/B, in batch order."""
    scale = 1.0 / len(losses)
    total = 0.0
    for loss, _ in losses:
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError("Non-finite training loss", {"loss": value})
        (loss * scale).backward()
        total += value * scale
    return total


def _batch_grids(sampler: SamplerConfig, cfg: TrainConfig, step: int, size: int) -> List[SamplingGrid]:
    return [sample_grid(_sample_seed(cfg.seed, step, b), sampler) for b in range(size)]


def flux_pt_step(
    batch: Sequence[VideoSample],
    student: FluxViT,
    teacher: FluxViT,
    sampler: SamplerConfig,
    cfg: TrainConfig,
    step: int = 0,
) -> StepResult:
    """One alignment step's loss and gradients (left in ``student.params``)."""
    student.zero_grad()
    grids = _batch_grids(sampler, cfg, step, len(batch))
    losses = [pt_sample_loss(video, student, teacher, grid, cfg) for video, grid in zip(batch, grids)]
    loss = _accumulate(losses)
    align = np.mean([info["align"] for _, info in losses], axis=0)
    return StepResult(
        loss=loss,
        components={"align": [float(a) for a in align]},
        teacher_tokens=[info["teacher_tokens"] for _, info in losses],
    )


def flux_ft_step(
    batch: Sequence[VideoSample],
    model: FluxViT,
    sampler: SamplerConfig,
    cfg: TrainConfig,
    step: int = 0,
) -> StepResult:
    """One multi-count fine-tuning step; labels come from the samples."""
    model.zero_grad()
    grids = _batch_grids(sampler, cfg, step, len(batch))
    losses = [ft_sample_loss(video, model, grid, cfg) for video, grid in zip(batch, grids)]
    loss = _accumulate(losses)
    ce = np.mean([info["ce"] for _, info in losses], axis=0)
    sd = float(np.mean([info["sd"] for _, info in losses]))
    correct = np.sum([info["correct"] for _, info in losses], axis=0)
    return StepResult(
        loss=loss,
        components={"ce": [float(c) for c in ce], "sd": sd},
        correct=[int(c) for c in correct],
    )


# -- the loop ------------------------------------------------------------------------


def _batch(data: Sequence[VideoSample], cfg: TrainConfig, step: int) -> List[VideoSample]:
    rng = np.random.default_rng(derive_seed(cfg.seed, f"train.batch.{step}"))
    picks = rng.choice(len(data), size=cfg.batch_size, replace=cfg.batch_size > len(data))
    return [data[int(i)] for i in picks]


def _record(step: int, lr: float, result: StepResult, mode: str) -> Dict[str, Any]:
    record: Dict[str, Any] = {"step": step, "lr": lr, "total_loss": result.loss}
    if mode == FT:
        for j, ce in enumerate(result.components["ce"], start=1):
            record[f"ce_k{j}"] = ce
        record["sd_loss"] = result.components["sd"]
    else:
        for j, align in enumerate(result.components["align"], start=1):
            record[f"align_k{j}"] = align
    return record


def train(
    mode: str,
    model: FluxViT,
    data: Sequence[VideoSample],
    sampler: SamplerConfig,
    cfg: TrainConfig,
    eval_data: Optional[Sequence[VideoSample]] = None,
    eval_grid: Optional[SamplingGrid] = None,
    teacher: Optional[FluxViT] = None,
    out_dir: Optional[Path] = None,
    env: Optional[Dict[str, Any]] = None,
    workers: int = 1,
) -> TrainResult:
    """Run ``cfg.steps`` optimizer steps; write metrics and a checkpoint into ``out_dir``.

    A non-finite loss or gradient stops the run before the offending update, writes
    the parameters as they stood (the last good state) and raises TrainingError.
    Ctrl-C writes the latest parameters before propagating.
    """
    cfg.validate()
    sampler.validate()
    if mode not in (PT, FT):
        raise ValidationError(f"Unknown training mode '{mode}'", {"mode": mode})
    if mode == PT and teacher is None:
        raise ValidationError("Pre-training needs a teacher model")
    if not data:
        raise ValidationError("Training needs at least one sample")

    log = MetricsLog(env={"seed": cfg.seed, "mode": mode, **(env or {})})
    optimizer = AdamW(model.params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    ckpt_dir = Path(out_dir) / "checkpoint" if out_dir is not None else None
    started = time.perf_counter()
    logger.info("Training started", mode=mode, steps=cfg.steps, counts=list(cfg.counts), seed=cfg.seed)

    def save(reason: str) -> Optional[Path]:
        if ckpt_dir is None:
            return None
        return save_checkpoint(model.params, ckpt_dir, meta={"mode": mode, "step": len(log), "reason": reason})

    try:
        for step in range(cfg.steps):
            batch = _batch(data, cfg, step)
            lr = cosine_lr(step, cfg.steps, cfg.lr, cfg.warmup_frac, cfg.min_lr)
            if mode == PT:
                result = flux_pt_step(batch, model, teacher, sampler, cfg, step)
            else:
                result = flux_ft_step(batch, model, sampler, cfg, step)

            bad = [name for name, g in result.grads(model.params).items() if not np.all(np.isfinite(g))]
            if bad:
                raise NumericalError("Non-finite gradients", {"params": bad, "step": step + 1})

            record = _record(step + 1, lr, result, mode)
            if cfg.grad_norms:
                record.update(module_grad_norms(model.params))
            optimizer.step(lr)

            if eval_data and ((step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps):
                grid = eval_grid or largest_grid(sampler)
                scores = evaluate(
                    model, eval_data, cfg.counts, grid, cfg.groups, cfg.norm_p, cfg.score_on, workers
                )
                for j, count in enumerate(cfg.counts, start=1):
                    record[f"acc_k{j}"] = scores[count]["accuracy"]
                    record[f"eval_ce_k{j}"] = scores[count]["ce"]
                logger.info("Evaluation", step=step + 1, accuracy=[scores[k]["accuracy"] for k in cfg.counts])

            record["wall_time"] = round(time.perf_counter() - started, 3)
            log.append(record)
            if (step + 1) % cfg.log_every == 0:
                logger.info("Training step", step=step + 1, loss=result.loss, lr=lr)
    except NumericalError as exc:
        path = save("non-finite")
        logger.error("Training aborted", error=exc.message, step=len(log) + 1, checkpoint=str(path))
        _write_metrics(log, out_dir)
        raise TrainingError(
            f"Training aborted at step {len(log) + 1}: {exc.message}",
            {"checkpoint": str(path) if path else None, **exc.details},
        ) from exc
    except KeyboardInterrupt:
        path = save("interrupted")
        _write_metrics(log, out_dir)
        logger.warning("Training interrupted", step=len(log), checkpoint=str(path))
        raise

    path = save("finished")
    _write_metrics(log, out_dir)
    logger.info("Training finished", mode=mode, steps=len(log), loss=log.last("total_loss"))
    return TrainResult(log=log, model=model, checkpoint=path)


def _write_metrics(log: MetricsLog, out_dir: Optional[Path]) -> None:
    if out_dir is None:
        return
    log.write_jsonl(Path(out_dir) / "metrics.jsonl")
    log.write_csv(Path(out_dir) / "metrics.csv")
