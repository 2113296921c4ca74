"""Per-count evaluation and the token-optimization sweep."""

import concurrent.futures
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..tensorcore import no_grad, ops
from ..utils import dataclass_from_dict, dataclass_to_dict, get_logger, write_csv
from ..utils.exceptions import ValidationError
from .fluxvit import FluxViT
from .sampling import SamplerConfig, SamplingGrid, TokenPool, patchify
from .selector import DynamicScores, dynamic_scores, select_group_dynamic
from .tokenopt import flops
from .videogen import VideoSample

logger = get_logger(__name__)

SWEEP_FIELDS = ["budget", "F", "R", "pool", "gflops", "accuracy", "best"]
EVAL_FIELDS = ["count", "accuracy", "ce", "samples", "gflops"]


@dataclass
class EvalConfig:
    counts: Tuple[int, ...] = (8, 16, 32)
    # (F, R); the sampler's largest grid when unset
    grid: Optional[Tuple[int, int]] = None
    samples: int = 64
    seed_offset: int = 1_000_000
    token_opt: bool = False
    budgets: Tuple[int, ...] = (16, 32, 48)

    def __post_init__(self):
        self.counts = tuple(int(k) for k in self.counts)
        self.budgets = tuple(int(k) for k in self.budgets)
        if self.grid is not None:
            self.grid = tuple(int(v) for v in self.grid)

    @classmethod
    def from_dict(cls, data, prefix: str = "eval.") -> "EvalConfig":
        return dataclass_from_dict(cls, data, prefix)

    def to_dict(self) -> dict:
        return dataclass_to_dict(self)

    def validate(self) -> "EvalConfig":
        if not self.counts or min(self.counts) < 1 or self.samples < 1:
            raise ValidationError("Evaluation counts and sample size must be positive", self.to_dict())
        if self.token_opt and (not self.budgets or min(self.budgets) < 1):
            raise ValidationError("Token-optimization budgets must be positive", self.to_dict())
        return self


def score_pool(model: FluxViT, pool: TokenPool, score_on: str = "embedded", p: int = 2) -> DynamicScores:
    features = model.embed(pool) if score_on == "embedded" else pool.features
    return dynamic_scores(features, pool.coords, p)


def _score_video(
    model: FluxViT,
    video: VideoSample,
    counts: Sequence[int],
    grid: SamplingGrid,
    groups: int,
    p: int,
    score_on: str,
) -> List[Tuple[float, int]]:
    # worker threads start outside any no_grad context
    with no_grad():
        pool = patchify(video, grid)
        scores = score_pool(model, pool, score_on, p)
        out = []
        for count in counts:
            mask = select_group_dynamic(scores, pool.coords, count, min(groups, grid.t))
            logits = model(pool, mask).logits
            ce = ops.cross_entropy(logits, video.label).item()
            out.append((ce, int(np.argmax(logits.data) == video.label)))
    return out


def evaluate(
    model: FluxViT,
    data: Sequence[VideoSample],
    counts: Sequence[int],
    grid: SamplingGrid,
    groups: int = 4,
    p: int = 2,
    score_on: str = "embedded",
    workers: int = 1,
) -> Dict[int, Dict[str, float]]:
    """Accuracy and mean cross-entropy per token count on one fixed grid."""
    if not data:
        raise ValidationError("Evaluation needs at least one sample")
    too_big = [k for k in counts if k > grid.pool]
    if too_big:
        raise ValidationError(
            "Evaluation counts exceed the grid's token pool",
            {"counts": too_big, "pool": grid.pool, "grid": [grid.F, grid.R]},
        )

    def run(video):
        return _score_video(model, video, counts, grid, groups, p, score_on)

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
            per_video = list(executor.map(run, data))
    else:
        per_video = [run(video) for video in data]

    results = {}
    for j, count in enumerate(counts):
        ces = [row[j][0] for row in per_video]
        hits = [row[j][1] for row in per_video]
        results[int(count)] = {
            "accuracy": float(np.mean(hits)),
            "ce": float(np.mean(ces)),
            "samples": len(data),
        }
    return results


def write_eval_csv(path: Path, results: Dict[int, Dict[str, float]], model: FluxViT) -> None:
    rows = [
        {"count": count, **row, "gflops": flops(model.cfg, count).gflops}
        for count, row in sorted(results.items())
    ]
    write_csv(path, EVAL_FIELDS, rows)


@dataclass
class SweepRow:
    budget: int
    F: int
    R: int
    pool: int
    gflops: float
    accuracy: float
    best: bool = False


def lattice_grids(sampler: SamplerConfig, budget: int, max_frames: Optional[int] = None) -> List[SamplingGrid]:
    """Every lattice grid with a pool of at least ``budget`` tokens."""
    grids = []
    for F in sampler.frame_values():
        if max_frames is not None and F > max_frames:
            continue
        for R in sampler.resolution_values():
            grid = SamplingGrid(F, R, sampler.patch)
            if grid.pool >= budget:
                grids.append(grid)
    return grids


def token_optimization_sweep(
    model: FluxViT,
    data: Sequence[VideoSample],
    budgets: Sequence[int],
    sampler: SamplerConfig,
    groups: int = 4,
    p: int = 2,
    score_on: str = "embedded",
    workers: int = 1,
) -> List[SweepRow]:
    """Accuracy at every admissible grid per budget; the best grid per budget is flagged."""
    if not data:
        raise ValidationError("Token optimization needs at least one sample")
    max_frames = min(video.frames.shape[0] for video in data)
    rows: List[SweepRow] = []
    for budget in budgets:
        grids = lattice_grids(sampler, budget, max_frames)
        if not grids:
            raise ValidationError("No lattice grid can hold the token budget", {"budget": budget})
        cost = flops(model.cfg, budget).gflops
        budget_rows = []
        for grid in grids:
            acc = evaluate(model, data, [budget], grid, groups, p, score_on, workers)[budget]["accuracy"]
            budget_rows.append(SweepRow(budget, grid.F, grid.R, grid.pool, cost, acc))
        best = max(range(len(budget_rows)), key=lambda i: (budget_rows[i].accuracy, -i))
        budget_rows[best].best = True
        logger.info(
            "Token budget swept",
            budget=budget,
            grids=len(budget_rows),
            best=[budget_rows[best].F, budget_rows[best].R],
            accuracy=budget_rows[best].accuracy,
        )
        rows.extend(budget_rows)
    return rows


def write_sweep_csv(path: Path, rows: Sequence[SweepRow]) -> None:
    write_csv(path, SWEEP_FIELDS, [dataclass_to_dict(row) for row in rows])


def model_evaluator(
    model: FluxViT,
    data: Sequence[VideoSample],
    groups: int = 4,
    p: int = 2,
    score_on: str = "embedded",
    workers: int = 1,
    patch: Tuple[int, int, int] = (1, 14, 14),
) -> Callable[[int, int, int], float]:
    """Search evaluator backed by held-out accuracy: (F, R, budget) -> score."""

    def score(F: int, R: int, budget: int) -> float:
        grid = SamplingGrid(F, R, patch)
        return evaluate(model, data, [budget], grid, groups, p, score_on, workers)[budget]["accuracy"]

    return score
