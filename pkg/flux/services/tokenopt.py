"""
Token optimization: the transformer cost model and the (frames, resolution) search.

Costs are multiply-accumulates, counted as one FLOP each. The search works on the
lattice of frame counts and resolutions: it first adds frames at a fixed resolution
until the score plateaus, then trades resolution for frames while the score improves.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from ..utils import dataclass_from_dict, dataclass_to_dict, get_logger, write_csv
from ..utils.exceptions import SearchError, ValidationError

logger = get_logger(__name__)

Evaluator = Callable[[int, int, int], float]

PLAN_FIELDS = ["F", "R", "pool", "flops", "score", "visited", "chosen"]


@dataclass
class TokenOptConfig:
    budgets: Tuple[int, ...] = (16, 32, 48)
    plateau_eps: float = 0.002
    # explicit lattices; the sampler's when unset
    frames: Optional[Tuple[int, ...]] = None
    resolutions: Optional[Tuple[int, ...]] = None
    exhaustive: bool = False
    samples: int = 32

    def __post_init__(self):
        self.budgets = tuple(int(b) for b in self.budgets)
        if self.frames is not None:
            self.frames = tuple(int(f) for f in self.frames)
        if self.resolutions is not None:
            self.resolutions = tuple(int(r) for r in self.resolutions)

    @classmethod
    def from_dict(cls, data, prefix: str = "tokenopt.") -> "TokenOptConfig":
        return dataclass_from_dict(cls, data, prefix)

    def to_dict(self) -> dict:
        return dataclass_to_dict(self)

    def validate(self) -> "TokenOptConfig":
        if not self.budgets or min(self.budgets) < 1 or self.plateau_eps < 0 or self.samples < 1:
            raise ValidationError("Invalid token-optimization settings", self.to_dict())
        for name, values in (("frames", self.frames), ("resolutions", self.resolutions)):
            if values is not None and (not values or list(values) != sorted(set(values))):
                raise ValidationError(f"{name} must be strictly increasing", {name: list(values)})
        return self


@dataclass
class FlopReport:
    n_tokens: int
    patch_embed: int
    qkv_out_proj: int
    attn_scores: int
    attn_apply: int
    mlp: int
    head: int
    config: Dict[str, object] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.patch_embed + self.qkv_out_proj + self.attn_scores + self.attn_apply + self.mlp + self.head

    @property
    def gflops(self) -> float:
        return self.total / 1e9

    def to_dict(self) -> Dict[str, object]:
        out = dataclass_to_dict(self)
        out["total"] = self.total
        out["gflops"] = self.gflops
        return out


def flops(cfg, n_tokens: int, cls_token: bool = True, patch_embed: bool = True, head: bool = True) -> FlopReport:
    """MAC counts of one forward over ``n_tokens`` selected tokens.

    Per block: 4ND^2 for QKV and the output projection, 2·r·ND^2 for the MLP and N^2·D
    each for the scores and their application, with N counting the CLS token. The
    patch embedding covers the ``n_tokens`` patches only.
    """
    if n_tokens < 0:
        raise ValidationError("n_tokens must be non-negative", {"n_tokens": n_tokens})
    D, depth = cfg.embed_dim, cfg.depth
    N = n_tokens + (1 if cls_token else 0)
    return FlopReport(
        n_tokens=n_tokens,
        patch_embed=n_tokens * cfg.patch_dim * D if patch_embed else 0,
        qkv_out_proj=depth * 4 * N * D * D,
        attn_scores=depth * N * N * D,
        attn_apply=depth * N * N * D,
        mlp=depth * 2 * N * D * cfg.hidden_dim,
        head=D * cfg.num_classes if head else 0,
        config={"embed_dim": D, "depth": depth, "mlp_ratio": cfg.mlp_ratio, "patch": list(cfg.patch)},
    )


@dataclass
class PlanEntry:
    F: int
    R: int
    pool: int
    flops: int = 0
    score: Optional[float] = None
    visited: bool = False
    chosen: bool = False


@dataclass
class BudgetPlan:
    budget: int
    frames: List[int]
    resolutions: List[int]
    entries: List[PlanEntry]
    visit_order: List[Tuple[int, int]] = field(default_factory=list)
    chosen: Optional[Tuple[int, int]] = None

    def entry(self, F: int, R: int) -> PlanEntry:
        for e in self.entries:
            if e.F == F and e.R == R:
                return e
        raise ValidationError("Grid is not on the search lattice", {"F": F, "R": R})

    @property
    def visited_count(self) -> int:
        return len(self.visit_order)

    @property
    def chosen_score(self) -> Optional[float]:
        return None if self.chosen is None else self.entry(*self.chosen).score

    def rows(self) -> List[Dict[str, object]]:
        return [dataclass_to_dict(e) for e in self.entries]

    def to_json(self) -> Dict[str, object]:
        return {
            "budget": self.budget,
            "frames": self.frames,
            "resolutions": self.resolutions,
            "visit_order": [list(v) for v in self.visit_order],
            "chosen": list(self.chosen) if self.chosen else None,
            "chosen_score": self.chosen_score,
        }


class _Search:
    """Lattice bookkeeping shared by the heuristic and exhaustive searches."""

    def __init__(self, evaluator: Evaluator, budget: int, frames, resolutions, patch, model_cfg=None):
        if budget < 1:
            raise ValidationError("Token budget must be positive", {"budget": budget})
        if not frames or not resolutions:
            raise ValidationError("Search lattice is empty")
        self.evaluator = evaluator
        self.budget = budget
        self.Fs, self.Rs = list(frames), list(resolutions)
        pt, ph, pw = patch
        self.patch = patch
        cost = flops(model_cfg, budget).total if model_cfg is not None else 0
        self.plan = BudgetPlan(
            budget=budget,
            frames=self.Fs,
            resolutions=self.Rs,
            entries=[
                PlanEntry(F, R, (F // pt) * (R // ph) * (R // pw), cost)
                for F in self.Fs
                for R in self.Rs
            ],
        )

    def pool(self, i: int, j: int) -> int:
        pt, ph, pw = self.patch
        return (self.Fs[i] // pt) * (self.Rs[j] // ph) * (self.Rs[j] // pw)

    def valid(self, i: int, j: int) -> bool:
        return self.pool(i, j) >= self.budget

    def visit(self, i: int, j: int) -> float:
        F, R = self.Fs[i], self.Rs[j]
        entry = self.plan.entry(F, R)
        if entry.visited:
            return entry.score
        try:
            score = float(self.evaluator(F, R, self.budget))
        except Exception as exc:
            logger.error("Evaluator failed", F=F, R=R, budget=self.budget, error=str(exc))
            raise SearchError(f"Evaluator failed at F={F}, R={R}: {exc}", plan=self.plan) from exc
        entry.score, entry.visited = score, True
        self.plan.visit_order.append((F, R))
        logger.debug("Search visit", F=F, R=R, pool=entry.pool, score=score)
        return score

    def finish(self) -> BudgetPlan:
        best = None
        for F, R in self.plan.visit_order:
            score = self.plan.entry(F, R).score
            if best is None or score > best[0]:
                best = (score, (F, R))
        if best is not None:
            self.plan.chosen = best[1]
            self.plan.entry(*best[1]).chosen = True
        return self.plan


def _lattices(sampler, frames, resolutions) -> Tuple[List[int], List[int]]:
    Fs = list(frames) if frames else sampler.frame_values()
    Rs = list(resolutions) if resolutions else sampler.resolution_values()
    return Fs, Rs


def start_resolution(Fs: Sequence[int], Rs: Sequence[int], budget: int, patch) -> int:
    """Index of the starting resolution.

    The largest resolution at which some lattice frame count fills the budget exactly;
    otherwise the largest whose smallest-frame pool fits the budget. When every
    smallest-frame pool already holds the budget, the largest resolution.
    """
    pt, ph, pw = patch
    per_frame = [(R // ph) * (R // pw) for R in Rs]
    exact = [j for j, pf in enumerate(per_frame) if any((F // pt) * pf == budget for F in Fs)]
    if exact:
        return exact[-1]
    fits = [j for j, pf in enumerate(per_frame) if (Fs[0] // pt) * pf <= budget]
    return fits[-1] if fits else len(Rs) - 1


def heuristic_search(
    evaluator: Evaluator,
    budget: int,
    sampler,
    plateau_eps: float = 0.002,
    frames: Optional[Sequence[int]] = None,
    resolutions: Optional[Sequence[int]] = None,
    model_cfg=None,
) -> BudgetPlan:
    """Frames-first search; visits at most |F| + |R| - 1 lattice points.

    Phase 1 sweeps frame counts upward at the starting resolution, skipping grids whose
    pool cannot hold the budget, and stops once the gain drops below ``plateau_eps``.
    Unless that sweep was flat, phase 2 repeatedly drops one resolution step. Each
    step scores the trade (at least one more frame step) and the plain step (the same
    frames, or the fewest more the pool requires) and keeps the better one while it
    strictly improves the score. Ties keep the earlier grid.
    """
    Fs, Rs = _lattices(sampler, frames, resolutions)
    search = _Search(evaluator, budget, Fs, Rs, sampler.patch, model_cfg)
    j0 = start_resolution(Fs, Rs, budget, sampler.patch)
    limit = len(Fs) + len(Rs) - 1

    def first_valid(i: int, j: int) -> Optional[int]:
        while i < len(Fs) and not search.valid(i, j):
            i += 1
        return i if i < len(Fs) else None

    scores = []
    best = None
    previous = None
    for i in range(len(Fs)):
        if not search.valid(i, j0):
            continue
        score = search.visit(i, j0)
        scores.append(score)
        if best is None or score > best[0]:
            best = (score, i)
        if previous is not None and score - previous < plateau_eps:
            break
        previous = score

    if best is not None and any(s != scores[0] for s in scores):
        current_score, i, j = best[0], best[1], j0
        while j > 0:
            moves = []
            for ni in dict.fromkeys((first_valid(i + 1, j - 1), first_valid(i, j - 1))):
                if ni is None or search.plan.visited_count >= limit:
                    continue
                moves.append((search.visit(ni, j - 1), ni))
            if not moves:
                break
            score, ni = max(moves, key=lambda m: m[0])
            if score <= current_score:
                break
            current_score, i, j = score, ni, j - 1

    plan = search.finish()
    logger.info(
        "Heuristic search finished",
        budget=budget,
        visited=plan.visited_count,
        chosen=list(plan.chosen) if plan.chosen else None,
        score=plan.chosen_score,
    )
    return plan


def exhaustive_search(
    evaluator: Evaluator,
    budget: int,
    sampler,
    frames: Optional[Sequence[int]] = None,
    resolutions: Optional[Sequence[int]] = None,
    model_cfg=None,
) -> BudgetPlan:
    """Score every lattice grid that can hold the budget."""
    Fs, Rs = _lattices(sampler, frames, resolutions)
    search = _Search(evaluator, budget, Fs, Rs, sampler.patch, model_cfg)
    for i in range(len(Fs)):
        for j in range(len(Rs)):
            if search.valid(i, j):
                search.visit(i, j)
    plan = search.finish()
    logger.info("Exhaustive search finished", budget=budget, visited=plan.visited_count)
    return plan


def pareto(points: Sequence[Tuple[float, float]]) -> List[Tuple[float, float]]:
    """Points no other point beats on (lower flops, higher score), by flops ascending."""
    unique = list(dict.fromkeys((float(f), float(s)) for f, s in points))
    frontier = []
    for f, s in unique:
        dominated = any(
            (of <= f and os >= s) and (of < f or os > s) for of, os in unique
        )
        if not dominated:
            frontier.append((f, s))
    return sorted(frontier)


def write_plan_csv(path: Path, plan: BudgetPlan) -> None:
    write_csv(path, PLAN_FIELDS, plan.rows())
