"""Cycle-consistency selection of reliable text queries.

A text query is reliable when it can be recovered from its own retrieval
results: take its top-k images, take each such image's top-k texts, and
check whether the query appears in that union. Reliable queries act as
anchors for adaptation; the rest are excluded from the loss (but still
evaluated in metrics).

Selection runs once on the full pre-adaptation similarity matrix and is
never repeated during adaptation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import SimilarityMatrix
from .retrieval import I2T, T2I, topk

DEFAULT_K = 5


@dataclass
class ReliableSet:
    """Outcome of cycle-consistency selection at a fixed k.

    ``reliable_queries`` and ``rejected_queries`` partition all query
    indices (both sorted ascending). ``candidates[i]`` is the ordered top-k
    image list of ``reliable_queries[i]``.
    """

    k: int
    reliable_queries: np.ndarray
    rejected_queries: np.ndarray
    candidates: np.ndarray

    @property
    def n_reliable(self) -> int:
        return self.reliable_queries.shape[0]

    def to_json(self) -> str:
        return json.dumps(
            {
                "k": self.k,
                "n_reliable": int(self.n_reliable),
                "n_rejected": int(self.rejected_queries.shape[0]),
                "reliable": [int(q) for q in self.reliable_queries],
            }
        )


def select_reliable(sim: SimilarityMatrix, k: int) -> ReliableSet:
    """Partition queries by the mutual top-k recovery test described above.

    For query q with top-k images G, q is reliable iff q occurs in the
    union of the top-k text lists of the images in G. Because top-k lists
    grow as prefixes under the shared tie rule, a query reliable at k stays
    reliable at k+1.
    """
    t2i = topk(sim, k, T2I).indices           # (n_text, k) image indices
    i2t = topk(sim, k, I2T).indices           # (n_image, k) text indices
    n_text = sim.n_text
    # For each query, the k*k texts reachable through its candidate images.
    reachable = i2t[t2i]                      # (n_text, k, k)
    flags = (reachable == np.arange(n_text)[:, None, None]).any(axis=(1, 2))
    reliable = np.flatnonzero(flags)
    rejected = np.flatnonzero(~flags)
    return ReliableSet(
        k=k,
        reliable_queries=reliable,
        rejected_queries=rejected,
        candidates=t2i[reliable],
    )


def write_selection_json(rel: ReliableSet, path: str | Path) -> None:
    Path(path).write_text(rel.to_json() + "\n", encoding="utf-8")
