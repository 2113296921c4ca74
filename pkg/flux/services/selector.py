"""
Token selection for the teacher/student double mask.

The teacher keeps K tokens: frames are split into N contiguous groups and each group
keeps its highest-scoring tokens, where a token's score is the p-norm change from the
same spatial position in the neighbouring frame. The student keeps the teacher-visible
tokens that draw the most CLS attention. Ties always go to the lower token index.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils import derive_seed
from ..utils.exceptions import ValidationError
from .sampling import TokenPool

STRATEGIES = ("random", "tube", "dynamic", "group_dynamic")


@dataclass
class SelectionMask:
    indices: np.ndarray  # strictly increasing token indices into the pool
    group_of: np.ndarray  # group id per selected index
    quota: List[int]
    K: int
    N: int

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        group_of = np.asarray(self.group_of, dtype=np.int64).reshape(-1)
        if len(indices) != self.K or len(group_of) != self.K or sum(self.quota) != self.K:
            raise ValidationError(
                "Mask cardinality does not match its quotas",
                {"K": self.K, "selected": len(indices), "quota": list(self.quota)},
            )
        # canonical order, whatever order the tokens were picked in
        order = np.argsort(indices, kind="stable")
        self.indices, self.group_of = indices[order], group_of[order]
        if self.K > 1 and np.any(np.diff(self.indices) == 0):
            raise ValidationError("Mask indices must be unique")
        self.quota = [int(q) for q in self.quota]

    def __len__(self) -> int:
        return self.K

    def to_json(self) -> Dict[str, object]:
        return {
            "K": self.K,
            "N": self.N,
            "indices": [int(i) for i in self.indices],
            "groups": [int(g) for g in self.group_of],
            "quotas": [int(q) for q in self.quota],
        }


@dataclass
class DynamicScores:
    scores: np.ndarray
    p: int


def group_partition(T_frames: int, N: int) -> List[Tuple[int, int]]:
    """N contiguous half-open segments over [0, T_frames); larger segments first."""
    if N < 1 or N > T_frames:
        raise ValidationError(
            "Group count must be between 1 and the frame count",
            {"T_frames": T_frames, "N": N},
        )
    base, extra = divmod(T_frames, N)
    segments, start = [], 0
    for g in range(N):
        size = base + (1 if g < extra else 0)
        segments.append((start, start + size))
        start += size
    return segments


def quotas(K: int, N: int) -> List[int]:
    base, extra = divmod(K, N)
    return [base + (1 if g < extra else 0) for g in range(N)]


def _dense_grid(features: np.ndarray, coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.int64)
    dims = tuple(int(d) for d in coords.max(axis=0) + 1)
    if int(np.prod(dims)) != len(coords):
        raise ValidationError(
            "Dynamic scores need tokens covering the full grid",
            {"tokens": len(coords), "grid": list(dims)},
        )
    dense = np.zeros(dims + features.shape[1:], dtype=np.float64)
    dense[coords[:, 0], coords[:, 1], coords[:, 2]] = features
    return dense


def dynamic_scores(features: np.ndarray, coords: np.ndarray, p: int = 2) -> DynamicScores:
    """p-norm difference to the same spatial token one frame back (forward at t=0)."""
    if p not in (1, 2):
        raise ValidationError("Norm order must be 1 or 2", {"p": p})
    features = np.asarray(features, dtype=np.float64).reshape(len(coords), -1)
    dense = _dense_grid(features, coords)
    if dense.shape[0] == 1:
        return DynamicScores(scores=np.zeros(len(coords)), p=p)

    diff = np.empty_like(dense)
    diff[1:] = dense[1:] - dense[:-1]
    diff[0] = dense[1] - dense[0]
    if p == 1:
        norms = np.abs(diff).sum(axis=-1)
    else:
        norms = np.sqrt((diff * diff).sum(axis=-1))
    coords = np.asarray(coords, dtype=np.int64)
    scores = norms[coords[:, 0], coords[:, 1], coords[:, 2]]
    return DynamicScores(scores=scores, p=p)


def _top(scores: np.ndarray, members: np.ndarray, count: int) -> np.ndarray:
    order = np.argsort(-scores[members], kind="stable")
    return members[order[:count]]


def _scores_array(scores) -> np.ndarray:
    return np.asarray(scores.scores if isinstance(scores, DynamicScores) else scores, dtype=np.float64)


def select_group_dynamic(scores, coords: np.ndarray, K: int, N: int) -> SelectionMask:
    scores = _scores_array(scores)
    coords = np.asarray(coords, dtype=np.int64)
    if K < 1 or K > len(scores):
        raise ValidationError("K must be between 1 and the pool size", {"K": K, "pool": len(scores)})
    frames = coords[:, 0]
    segments = group_partition(int(frames.max()) + 1, N)
    quota = quotas(K, N)

    picked, groups = [], []
    for g, ((start, end), q) in enumerate(zip(segments, quota)):
        members = np.flatnonzero((frames >= start) & (frames < end))
        if q > len(members):
            raise ValidationError(
                f"Group {g} has {len(members)} tokens but a quota of {q}",
                {"group": g, "tokens": int(len(members)), "quota": q},
            )
        chosen = _top(scores, members, q)
        picked.append(chosen)
        groups.append(np.full(len(chosen), g))

    indices = np.concatenate(picked)
    group_of = np.concatenate(groups)
    order = np.argsort(indices)
    return SelectionMask(indices[order], group_of[order], quota, K, N)


def select_dynamic(scores, K: int) -> SelectionMask:
    scores = _scores_array(scores)
    if K < 1 or K > len(scores):
        raise ValidationError("K must be between 1 and the pool size", {"K": K, "pool": len(scores)})
    indices = np.sort(_top(scores, np.arange(len(scores)), K))
    return SelectionMask(indices, np.zeros(K, dtype=np.int64), [K], K, 1)


def _pool_size(pool: Union[TokenPool, int]) -> int:
    return pool.size if isinstance(pool, TokenPool) else int(pool)


def select_random(seed: int, pool: Union[TokenPool, int], K: int) -> SelectionMask:
    size = _pool_size(pool)
    if K < 1 or K > size:
        raise ValidationError("K must be between 1 and the pool size", {"K": K, "pool": size})
    rng = np.random.default_rng(derive_seed(seed, "selector.random"))
    indices = np.sort(rng.choice(size, size=K, replace=False))
    return SelectionMask(indices, np.zeros(K, dtype=np.int64), [K], K, 1)


def select_tube(seed: int, pool: TokenPool, K: int) -> SelectionMask:
    """Whole spatial columns: K / T' positions kept at every temporal index."""
    T, gh, gw = pool.grid.dims
    spatial = gh * gw
    if K < 1 or K > pool.size or K % T:
        raise ValidationError(
            "Tube masking needs K divisible by the temporal grid size",
            {"K": K, "T": T, "pool": pool.size},
        )
    per_frame = K // T
    rng = np.random.default_rng(derive_seed(seed, "selector.tube"))
    positions = np.sort(rng.choice(spatial, size=per_frame, replace=False))
    indices = (np.arange(T)[:, None] * spatial + positions[None, :]).ravel()
    group_of = np.repeat(np.arange(T), per_frame)
    return SelectionMask(indices, group_of, [per_frame] * T, K, T)


def student_mask(
    cls_attention: np.ndarray, n_student: int, teacher_mask: Optional[SelectionMask] = None
) -> SelectionMask:
    """Keep the ``n_student`` teacher-visible tokens with the highest CLS attention.

    ``cls_attention`` is aligned with the teacher mask's (sorted) indices; without a
    teacher mask the result indexes positions 0..K-1 directly.
    """
    attention = np.asarray(cls_attention, dtype=np.float64).ravel()
    K = len(attention)
    if n_student < 1 or n_student > K:
        raise ValidationError(
            "Student token count must be between 1 and the teacher count",
            {"n_student": n_student, "K": K},
        )
    positions = np.sort(_top(attention, np.arange(K), n_student))
    if teacher_mask is None:
        return SelectionMask(positions, np.zeros(n_student, dtype=np.int64), [n_student], n_student, 1)
    if teacher_mask.K != K:
        raise ValidationError(
            "CLS attention length does not match the teacher mask",
            {"attention": K, "K": teacher_mask.K},
        )
    group_of = teacher_mask.group_of[positions]
    quota = [int(np.sum(group_of == g)) for g in range(teacher_mask.N)]
    return SelectionMask(teacher_mask.indices[positions], group_of, quota, n_student, teacher_mask.N)


def positions_in(outer: SelectionMask, inner: SelectionMask) -> np.ndarray:
    """Row positions of ``inner``'s tokens within ``outer``'s selection."""
    pos = np.searchsorted(outer.indices, inner.indices)
    if np.any(pos >= outer.K) or np.any(outer.indices[np.minimum(pos, outer.K - 1)] != inner.indices):
        raise ValidationError("Mask is not a subset of the outer mask")
    return pos


def nested_masks(scores, coords: np.ndarray, counts: Sequence[int], N: int) -> List[SelectionMask]:
    """Group-dynamic masks for several counts from one score ordering; larger ⊇ smaller."""
    uneven = [k for k in counts if k % N]
    if uneven:
        raise ValidationError(
            "Nested masks need every count divisible by the group count",
            {"counts": list(counts), "N": N},
        )
    return [select_group_dynamic(scores, coords, k, N) for k in counts]


def recall(mask: SelectionMask, moving: np.ndarray) -> float:
    """Fraction of ground-truth moving tokens the mask keeps (1.0 when none move)."""
    moving = np.asarray(moving, dtype=bool)
    total = int(moving.sum())
    if total == 0:
        return 1.0
    return float(moving[mask.indices].sum()) / total


def select(
    strategy: str,
    pool: TokenPool,
    K: int,
    seed: int = 0,
    N: int = 1,
    p: int = 2,
    features: Optional[np.ndarray] = None,
) -> SelectionMask:
    """Dispatch to one strategy; dynamic strategies score ``features`` (raw patches by default)."""
    if strategy == "random":
        return select_random(seed, pool, K)
    if strategy == "tube":
        return select_tube(seed, pool, K)
    if strategy not in STRATEGIES:
        raise ValidationError(f"Unknown selection strategy '{strategy}'", {"strategies": list(STRATEGIES)})
    scores = dynamic_scores(pool.features if features is None else features, pool.coords, p)
    if strategy == "dynamic":
        return select_dynamic(scores, K)
    return select_group_dynamic(scores, pool.coords, K, N)
