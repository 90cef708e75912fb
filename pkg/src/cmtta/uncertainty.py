"""Bidirectional retrieval probabilities and disagreement-based uncertainty.

For a reliable query q and one of its candidate images g, two softmax
probabilities are formed over restricted score sets: the forward direction
(p_t2i) normalizes over q's own top-k images, the reverse direction (p_i2t)
normalizes over g's top-k texts. A confident, well-aligned pair ranks
highly in both directions, so the two probabilities agree; a mismatch is
evidence of an unreliable match.

Three scalar formulations of that mismatch are implemented. ``normdiff``
(the default) divides the absolute difference by the pair mean and
exponentiates, which both penalizes pairs where the two probabilities are
jointly near zero and amplifies the contrast between asymmetric and
symmetric confident pairs. ``meanconf`` keys only on joint confidence;
``logratio`` only on the (log) ratio. All three are symmetric under
swapping the two directions and minimal exactly at agreement.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .io import SimilarityMatrix
from .retrieval import I2T, topk
from .selection import ReliableSet

NORMDIFF = "normdiff"
MEANCONF = "meanconf"
LOGRATIO = "logratio"
VARIANTS = (NORMDIFF, MEANCONF, LOGRATIO)

DEFAULT_EPSILON = 1e-8

NORMDIFF_MAX = float(np.exp(2.0))  # |a-b| / mean(a,b) is bounded by 2
MEANCONF_MAX = float(np.exp(1.0))


@dataclass
class PairProbabilities:
    """Forward/reverse retrieval probabilities for (query, candidate) pairs.

    Parallel arrays; pairs are ordered by ascending reliable query index,
    then by candidate rank. Within one query the ``p_t2i`` entries over its
    candidate list sum to 1.
    """

    query: np.ndarray
    candidate: np.ndarray
    p_t2i: np.ndarray
    p_i2t: np.ndarray

    def __len__(self) -> int:
        return self.query.shape[0]


@dataclass
class UncertaintyScores:
    """Pair probabilities plus their disagreement score under one variant."""

    query: np.ndarray
    candidate: np.ndarray
    p_t2i: np.ndarray
    p_i2t: np.ndarray
    d: np.ndarray
    variant: str

    def __len__(self) -> int:
        return self.query.shape[0]


def _softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def pair_probabilities(
    sim: SimilarityMatrix, reliable: ReliableSet, k: int
) -> PairProbabilities:
    """Bidirectional probabilities for every reliable (query, candidate) pair.

    p_t2i is the softmax of s[q, :] restricted to q's top-k images.
    p_i2t is exp(s[q, g]) over the sum of exp(s[t, g]) for the top-k texts
    t of image g; when q is outside that list the numerator is unchanged
    and the denominator remains the top-k sum, so p_i2t stays below 1/k.
    """
    if reliable.k != k:
        raise ShapeMismatch(f"reliable set built at k={reliable.k}, requested k={k}")
    if reliable.n_reliable and reliable.candidates.max() >= sim.n_image:
        raise ShapeMismatch("candidate indices exceed similarity matrix width")
    s = sim.scores.astype(np.float64)
    queries = reliable.reliable_queries
    cands = reliable.candidates                      # (n_rel, k)
    s_qg = np.take_along_axis(s[queries], cands, axis=1)        # (n_rel, k)

    p_t2i = _softmax(s_qg, axis=1)

    i2t = topk(sim, k, I2T).indices                  # (n_image, k) text lists
    # Per pair (q, g): numerator exp(s[q,g]), denominator over g's text list.
    s_lists = s[i2t[cands], cands[:, :, None]]                  # (n_rel, k, k)
    m = np.maximum(s_lists.max(axis=2), s_qg)
    p_i2t = np.exp(s_qg - m) / np.exp(s_lists - m[:, :, None]).sum(axis=2)

    return PairProbabilities(
        query=np.repeat(queries, k),
        candidate=cands.reshape(-1),
        p_t2i=p_t2i.reshape(-1),
        p_i2t=p_i2t.reshape(-1),
    )


def disagreement(
    p_t2i,
    p_i2t,
    variant: str = NORMDIFF,
    epsilon: float = DEFAULT_EPSILON,
) -> np.ndarray:
    """Scalar disagreement of two probabilities; vectorized over arrays.

    normdiff: exp(|a - b| / mean(a, b)), capped at exp(2); pairs whose mean
    is below ``epsilon`` map to the cap so that jointly-near-zero pairs
    never read as confident.
    meanconf: exp(1 - mean(a, b)).
    logratio: |log(a + epsilon) - log(b + epsilon)|.
    """
    a = np.asarray(p_t2i, dtype=np.float64)
    b = np.asarray(p_i2t, dtype=np.float64)
    if variant == NORMDIFF:
        mean = (a + b) / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.abs(a - b) / mean
        ratio = np.where(mean < epsilon, 2.0, np.clip(ratio, 0.0, 2.0))
        return np.exp(ratio)
    if variant == MEANCONF:
        return np.exp(1.0 - (a + b) / 2.0)
    if variant == LOGRATIO:
        return np.abs(np.log(a + epsilon) - np.log(b + epsilon))
    raise ValueError(f"unknown uncertainty variant {variant!r}")


def score_pairs(
    pairs: PairProbabilities,
    variant: str = NORMDIFF,
    epsilon: float = DEFAULT_EPSILON,
) -> UncertaintyScores:
    """Attach the chosen disagreement score to every pair."""
    d = disagreement(pairs.p_t2i, pairs.p_i2t, variant, epsilon)
    return UncertaintyScores(
        query=pairs.query,
        candidate=pairs.candidate,
        p_t2i=pairs.p_t2i,
        p_i2t=pairs.p_i2t,
        d=np.asarray(d, dtype=np.float64),
        variant=variant,
    )


def write_uncertainty_csv(
    scores: UncertaintyScores,
    path: str | Path,
    text_ids: list[str] | None = None,
    image_ids: list[str] | None = None,
) -> None:
    """Dump pair scores as CSV; ids fall back to indices when not supplied."""
    lines = ["query_id,candidate_id,p_t2i,p_i2t,d,variant"]
    for i in range(len(scores)):
        q = int(scores.query[i])
        g = int(scores.candidate[i])
        qid = text_ids[q] if text_ids is not None else str(q)
        gid = image_ids[g] if image_ids is not None else str(g)
        lines.append(
            f"{qid},{gid},{scores.p_t2i[i]!r},{scores.p_i2t[i]!r},"
            f"{scores.d[i]!r},{scores.variant}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
