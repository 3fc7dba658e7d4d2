# sampler.py
"""
Subset selection over the unlabeled pool: random, entropy-uncertainty top-b and
k-Center Greedy coreset. Every strategy breaks ties by ascending id.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from config import CANDIDATE_CAP
from errors import ContractError, DataValidationError
from utils import progress

logger = logging.getLogger(__name__)


class SamplerKind(str, Enum):
    RANDOM = 'random'
    UNCERTAINTY = 'uncertainty'
    CORESET = 'coreset'


@dataclass(eq=False)
class Candidates:
    ids: np.ndarray
    features: Optional[np.ndarray] = None  # one row per id, encoder feature space
    scores: Optional[np.ndarray] = None    # per-id uncertainty

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if len(np.unique(self.ids)) != len(self.ids):
            raise DataValidationError("candidate ids must be unique")
        if self.features is not None and self.features.shape[0] != len(self.ids):
            raise DataValidationError(
                f"{self.features.shape[0]} feature rows for {len(self.ids)} candidate ids"
            )
        if self.scores is not None and len(self.scores) != len(self.ids):
            raise DataValidationError(f"{len(self.scores)} scores for {len(self.ids)} candidate ids")

    def __len__(self) -> int:
        return len(self.ids)


def _check_budget(b: int):
    if b < 1:
        raise DataValidationError(f"budget must be >= 1, got {b}")


def subsample_candidates(pool_ids, rng: np.random.Generator, cap: int = CANDIDATE_CAP) -> np.ndarray:
    """min(cap, |pool|) ids drawn uniformly without replacement, returned in ascending order."""
    if cap < 1:
        raise DataValidationError(f"candidate cap must be >= 1, got {cap}")
    pool_ids = np.asarray(pool_ids, dtype=np.int64)
    if len(pool_ids) == 0:
        return pool_ids.copy()
    return np.sort(rng.choice(pool_ids, size=min(cap, len(pool_ids)), replace=False))


def sample_random(candidates: Candidates, b: int, rng: np.random.Generator) -> np.ndarray:
    _check_budget(b)
    if len(candidates) == 0:
        return candidates.ids.copy()
    return rng.choice(candidates.ids, size=min(b, len(candidates)), replace=False)


def sample_uncertainty(candidates: Candidates, b: int) -> np.ndarray:
    """Ids of the b highest scores, ordered by (-score, id)."""
    _check_budget(b)
    if candidates.scores is None:
        raise ContractError("uncertainty sampling needs candidate scores")
    scores = np.asarray(candidates.scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ContractError("uncertainty scores must be finite")
    order = np.lexsort((candidates.ids, -scores))
    return candidates.ids[order[:b]]


def k_center_greedy(candidates: Candidates, selected_features: np.ndarray, b: int,
                    show_progress: bool = None) -> np.ndarray:
    """
    Greedy k-center: b times, add the candidate farthest (Euclidean) from the current set.

    The current set starts as `selected_features`; only the newly added ids are
    returned, in selection order. Min-distances are updated with one new column
    per pick.
    """
    _check_budget(b)
    if candidates.features is None:
        raise ContractError("coreset sampling needs candidate features")
    selected_features = np.asarray(selected_features, dtype=np.float64)
    if selected_features.ndim != 2 or selected_features.shape[0] == 0:
        raise ContractError("coreset sampling needs a non-empty initial set s0")
    if len(candidates) == 0:
        return candidates.ids.copy()

    # ascending ids so argmax (first maximum) breaks ties by lowest id
    order = np.argsort(candidates.ids, kind='stable')
    ids = candidates.ids[order]
    feats = candidates.features[order]
    budget = min(b, len(ids))

    min_dist = cdist(selected_features, feats, metric='euclidean').min(axis=0)
    taken = np.zeros(len(ids), dtype=bool)
    picks = np.empty(budget, dtype=np.int64)
    for step in progress(range(budget), desc="k-center greedy", total=budget, enabled=show_progress):
        j = int(np.argmax(np.where(taken, -np.inf, min_dist)))
        picks[step] = ids[j]
        taken[j] = True
        min_dist = np.minimum(min_dist, cdist(feats[j:j + 1], feats, metric='euclidean')[0])
    return picks


def k_center_greedy_rescan(candidates: Candidates, selected_features: np.ndarray, b: int) -> np.ndarray:
    """Reference greedy k-center recomputing min_{j in s} distance from scratch at every step."""
    _check_budget(b)
    order = np.argsort(candidates.ids, kind='stable')
    ids = candidates.ids[order]
    feats = candidates.features[order]
    chosen = list(np.asarray(selected_features, dtype=np.float64))
    remaining = list(range(len(ids)))
    picks = []
    for _ in range(min(b, len(ids))):
        dist = cdist(np.array(chosen), feats[remaining], metric='euclidean').min(axis=0)
        k = int(np.argmax(dist))
        j = remaining.pop(k)
        picks.append(ids[j])
        chosen.append(feats[j])
    return np.array(picks, dtype=np.int64)


def coverage_radius(candidate_features: np.ndarray, selected_features: np.ndarray) -> float:
    """max over candidates of the distance to the nearest selected point."""
    return float(cdist(candidate_features, selected_features, metric='euclidean').min(axis=1).max())
