"""Retrieval evaluation: every test image queries the rest of the test set.

Metrics: mean average precision over all true matches, CMC Rank-k, and the
mean inverse negative penalty (true-match count divided by the rank of the
last true match). Queries whose identity has no other image are excluded
from the means and reported in ``num_skipped``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParameterError, StructuralError

DISTANCES = ("l2norm", "euclidean")


@dataclass
class FeatureGallery:
    """Row-aligned features, identity labels, and image identifiers."""

    features: np.ndarray          # Nt x D
    labels: list[str]
    ids: list[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise StructuralError("features must be a 2-D array")
        if len(self.labels) != self.features.shape[0] or len(self.ids) != self.features.shape[0]:
            raise StructuralError("labels/ids not aligned with feature rows")
        if not np.all(np.isfinite(self.features)):
            raise InputError("gallery features contain non-finite values")


@dataclass
class RankingResult:
    query_index: int
    order: np.ndarray     # gallery indices sorted by ascending distance, self excluded
    matches: np.ndarray   # bool, aligned with order


@dataclass
class EvalReport:
    map: float
    rank1: float
    rank5: float
    rank10: float
    minp: float
    num_queries: int
    num_skipped: int
    per_query_ap: list = field(default_factory=list)    # None for skipped queries
    per_query_inp: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "rank1": self.rank1,
            "rank5": self.rank5,
            "rank10": self.rank10,
            "minp": self.minp,
            "num_queries": self.num_queries,
            "num_skipped": self.num_skipped,
            "per_query_ap": self.per_query_ap,
            "per_query_inp": self.per_query_inp,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def distance_matrix(features: np.ndarray, metric: str = "l2norm") -> np.ndarray:
    """Pairwise Euclidean distances, optionally on L2-normalized rows."""
    if metric not in DISTANCES:
        raise ParameterError(f"metric must be one of {DISTANCES}, got {metric!r}")
    f = np.asarray(features, dtype=np.float64)
    if metric == "l2norm":
        norms = np.linalg.norm(f, axis=1, keepdims=True)
        f = f / np.maximum(norms, 1e-12)
    sq = (f * f).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (f @ f.T)
    return np.sqrt(np.clip(d2, 0.0, None))


def rank_all(gallery: FeatureGallery, metric: str = "l2norm") -> list[RankingResult]:
    """Per-query ascending-distance ranking over the rest of the gallery.

    Sorting is stable with ties broken by gallery index, so results are fully
    deterministic.
    """
    nt = gallery.features.shape[0]
    if nt < 2:
        raise InputError(f"need at least 2 gallery images, got {nt}")
    dist = distance_matrix(gallery.features, metric)
    labels = np.asarray(gallery.labels)
    results = []
    for q in range(nt):
        others = np.concatenate([np.arange(q), np.arange(q + 1, nt)])
        order = others[np.argsort(dist[q, others], kind="stable")]
        results.append(
            RankingResult(query_index=q, order=order, matches=labels[order] == labels[q])
        )
    return results


def average_precision(matches: np.ndarray) -> float:
    """AP = (1/R) * sum over match positions of precision@k; NaN when R = 0."""
    matches = np.asarray(matches, dtype=bool)
    r = int(matches.sum())
    if r == 0:
        return float("nan")
    cum = np.cumsum(matches)
    precision_at = cum / np.arange(1, len(matches) + 1)
    return float((precision_at * matches).sum() / r)


def first_match_rank(matches: np.ndarray) -> int | None:
    """1-based rank of the first true match, or None if there is none."""
    hits = np.flatnonzero(np.asarray(matches, dtype=bool))
    return int(hits[0]) + 1 if hits.size else None


def cmc(matches_per_query: list[np.ndarray], k: int) -> float:
    """Fraction of (non-skipped) queries whose first match occurs at rank <= k."""
    ranks = [first_match_rank(m) for m in matches_per_query]
    valid = [r for r in ranks if r is not None]
    if not valid:
        return 0.0
    return float(sum(r <= k for r in valid) / len(valid))


def inverse_negative_penalty(matches: np.ndarray) -> float:
    """R / rank-of-last-true-match; NaN when R = 0."""
    matches = np.asarray(matches, dtype=bool)
    r = int(matches.sum())
    if r == 0:
        return float("nan")
    last = int(np.flatnonzero(matches)[-1]) + 1
    return float(r / last)


def evaluate(gallery: FeatureGallery, metric: str = "l2norm") -> EvalReport:
    """Aggregate mAP / CMC@{1,5,10} / mINP under the query-vs-rest protocol."""
    rankings = rank_all(gallery, metric)
    per_ap: list = []
    per_inp: list = []
    match_lists = []
    for r in rankings:
        ap = average_precision(r.matches)
        inp = inverse_negative_penalty(r.matches)
        per_ap.append(None if np.isnan(ap) else ap)
        per_inp.append(None if np.isnan(inp) else inp)
        match_lists.append(r.matches)
    valid_ap = [a for a in per_ap if a is not None]
    valid_inp = [i for i in per_inp if i is not None]
    num_skipped = sum(a is None for a in per_ap)
    return EvalReport(
        map=float(np.mean(valid_ap)) if valid_ap else 0.0,
        rank1=cmc(match_lists, 1),
        rank5=cmc(match_lists, 5),
        rank10=cmc(match_lists, 10),
        minp=float(np.mean(valid_inp)) if valid_inp else 0.0,
        num_queries=len(rankings),
        num_skipped=num_skipped,
        per_query_ap=per_ap,
        per_query_inp=per_inp,
    )
