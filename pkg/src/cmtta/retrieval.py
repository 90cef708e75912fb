"""Similarity computation, top-k ranking, and retrieval metrics.

Galleries at desk scale are searched exactly; there is no approximate
indexing. All rankings use one deterministic tie rule: equal scores are
ordered by ascending gallery index, so results are reproducible and
independent of any internal parallelism.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimMismatch,
    KOutOfRange,
    MissingLabels,
    NotNormalized,
    QueryWithoutPositive,
)
from .io import COSINE, EXTERNAL, EmbeddingSet, SimilarityMatrix

T2I = "t2i"
I2T = "i2t"

RECALL_CUTOFFS = (1, 5, 10)


@dataclass
class TopKIndex:
    """Per-query top-k gallery indices and scores, ties broken by ascending index.

    ``indices`` and ``scores`` have shape (n_queries, k); within each row
    scores are non-increasing and indices are distinct.
    """

    direction: str
    k: int
    indices: np.ndarray
    scores: np.ndarray


@dataclass
class RetrievalMetrics:
    """Recall at the standard cutoffs plus mean average precision."""

    r_at: dict[int, float]
    map_score: float
    n_queries: int

    def to_json(self) -> str:
        """Fixed 4-decimal JSON report, byte-deterministic for equal values."""
        return (
            "{"
            + f'"r1": {self.r_at[1]:.4f}, "r5": {self.r_at[5]:.4f}, '
            + f'"r10": {self.r_at[10]:.4f}, "map": {self.map_score:.4f}, '
            + f'"n_queries": {self.n_queries}'
            + "}"
        )


def cosine_similarity(text: EmbeddingSet, image: EmbeddingSet) -> SimilarityMatrix:
    """Dense cosine similarity matrix between two unit-norm embedding sets.

    Entry [q, g] is the dot product of text row q with image row g.
    Accumulation runs in float64 and is stored as float32, so the result is
    deterministic to the stored precision regardless of parallelism.
    """
    if not text.normalized or not image.normalized:
        raise NotNormalized("cosine similarity requires both sets to be normalized")
    if text.dim != image.dim:
        raise DimMismatch(f"text dim {text.dim} != image dim {image.dim}")
    s = text.data.astype(np.float64) @ image.data.astype(np.float64).T
    return SimilarityMatrix(scores=s.astype(np.float32), provenance=COSINE)


def model_scores(text: EmbeddingSet, image: EmbeddingSet, scale: float) -> SimilarityMatrix:
    """The score matrix a dual encoder with logit scale ``scale`` would emit.

    Pretrained contrastive encoders score pairs as ``scale * cosine``; the
    downstream temperature-1 softmaxes see those scores, not raw cosines,
    so retrieval probabilities span a realistic confidence range. Rankings
    and retrieval metrics are unaffected by the scale. With ``scale != 1``
    the result carries external provenance because its entries leave the
    cosine range.
    """
    cos = cosine_similarity(text, image)
    if scale == 1.0:
        return cos
    if scale <= 0:
        raise ValueError(f"score scale must be positive, got {scale}")
    return SimilarityMatrix(scores=cos.scores * np.float32(scale), provenance=EXTERNAL)


def _ranking(scores: np.ndarray) -> np.ndarray:
    # Stable sort on negated scores: descending by score, ties by ascending index.
    return np.argsort(-scores, axis=1, kind="stable")


def topk(sim: SimilarityMatrix, k: int, direction: str = T2I) -> TopKIndex:
    """Top-k gallery indices per query for the chosen retrieval direction.

    ``T2I`` ranks images per text row; ``I2T`` ranks texts per image
    (the transpose view). A query's top-k list is always a prefix of its
    top-(k+1) list because the underlying full ranking is fixed.
    """
    if direction == T2I:
        scores = sim.scores
    elif direction == I2T:
        scores = sim.scores.T
    else:
        raise ValueError(f"unknown direction {direction!r}")
    n_gallery = scores.shape[1]
    if not 1 <= k <= n_gallery:
        raise KOutOfRange(f"k={k} outside [1, {n_gallery}] for direction {direction}")
    order = _ranking(scores)[:, :k]
    picked = np.take_along_axis(scores, order, axis=1)
    return TopKIndex(direction=direction, k=k, indices=order, scores=picked)


def evaluate(
    sim: SimilarityMatrix,
    query_labels: np.ndarray | None,
    gallery_labels: np.ndarray | None,
) -> RetrievalMetrics:
    """R@{1,5,10} and mAP over the full ranking of every query.

    A query counts toward R@k when at least one gallery item sharing its
    label appears in its top-k. Average precision is computed over the full
    ranking with the same tie rule as :func:`topk`; mAP is its mean over
    queries. Every query label must occur in the gallery.
    """
    if query_labels is None or gallery_labels is None:
        raise MissingLabels("evaluate requires labels on both sides")
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    if query_labels.shape[0] != sim.n_text or gallery_labels.shape[0] != sim.n_image:
        raise MissingLabels(
            f"label lengths ({query_labels.shape[0]}, {gallery_labels.shape[0]}) do not "
            f"match matrix shape ({sim.n_text}, {sim.n_image})"
        )
    order = _ranking(sim.scores)
    relevant = gallery_labels[order] == query_labels[:, None]
    no_positive = ~relevant.any(axis=1)
    if no_positive.any():
        raise QueryWithoutPositive(int(np.flatnonzero(no_positive)[0]))

    r_at = {}
    for k in RECALL_CUTOFFS:
        r_at[k] = float(relevant[:, : min(k, sim.n_image)].any(axis=1).mean())

    # AP per query: mean over its positives of precision at each positive's rank.
    hits = relevant.astype(np.float64)
    cum_hits = np.cumsum(hits, axis=1)
    ranks = np.arange(1, sim.n_image + 1, dtype=np.float64)
    precision_at_hit = (cum_hits / ranks) * hits
    ap = precision_at_hit.sum(axis=1) / hits.sum(axis=1)
    return RetrievalMetrics(
        r_at=r_at, map_score=float(ap.mean()), n_queries=sim.n_text
    )


def write_metrics_json(metrics: RetrievalMetrics, path: str | Path) -> None:
    Path(path).write_text(metrics.to_json() + "\n", encoding="utf-8")


def metrics_from_json(path: str | Path) -> RetrievalMetrics:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return RetrievalMetrics(
        r_at={1: raw["r1"], 5: raw["r5"], 10: raw["r10"]},
        map_score=raw["map"],
        n_queries=raw["n_queries"],
    )
