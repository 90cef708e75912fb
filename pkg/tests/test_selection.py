"""Cycle-consistency selection against a double-loop oracle."""

import numpy as np
import pytest

from cmtta import SimilarityMatrix, select_reliable, topk
from cmtta.errors import KOutOfRange
from cmtta.retrieval import I2T, T2I


def external(scores):
    return SimilarityMatrix(np.asarray(scores, dtype=np.float32), provenance="external")


def brute_force_select(scores, k):
    """Oracle: materialize the reachable text set with explicit loops."""
    sim = external(scores)
    t2i = topk(sim, k, T2I).indices
    i2t = topk(sim, k, I2T).indices
    reliable = []
    for q in range(scores.shape[0]):
        reachable = set()
        for g in t2i[q]:
            reachable.update(int(t) for t in i2t[g])
        if q in reachable:
            reliable.append(q)
    return np.array(reliable, dtype=np.int64)


class TestHandCases:
    def test_two_by_two_trace(self):
        # text 0 -> image 0 whose best text is 0: reliable.
        # text 1 -> image 0 whose best text is 0 != 1: rejected.
        rel = select_reliable(external([[0.9, 0.1], [0.8, 0.2]]), 1)
        np.testing.assert_array_equal(rel.reliable_queries, [0])
        np.testing.assert_array_equal(rel.rejected_queries, [1])
        np.testing.assert_array_equal(rel.candidates, [[0]])

    def test_identity_like_all_reliable(self):
        scores = np.eye(5) * 0.8 + 0.1
        for k in (1, 2, 5):
            rel = select_reliable(external(scores), k)
            assert rel.n_reliable == 5

    def test_exhaustive_k_all_reliable(self, rng):
        scores = rng.standard_normal((6, 6)).astype(np.float32)
        rel = select_reliable(external(scores), 6)
        assert rel.n_reliable == 6

    def test_k_out_of_range(self):
        with pytest.raises(KOutOfRange):
            select_reliable(external([[0.1, 0.2]]), 3)


class TestProperties:
    def test_matches_brute_force_oracle(self, rng):
        for _ in range(100):
            n, m = int(rng.integers(1, 50)), int(rng.integers(1, 80))
            k = int(rng.integers(1, min(n, m) + 1))
            scores = (rng.integers(0, 7, (n, m)) / 6.0).astype(np.float32)
            got = select_reliable(external(scores), k)
            np.testing.assert_array_equal(got.reliable_queries, brute_force_select(scores, k))

    def test_monotone_in_k(self, rng):
        scores = rng.standard_normal((30, 40)).astype(np.float32)
        previous = set()
        for k in range(1, 12):
            rel = set(select_reliable(external(scores), k).reliable_queries.tolist())
            assert previous <= rel
            previous = rel

    def test_partition(self, rng):
        scores = rng.standard_normal((25, 30)).astype(np.float32)
        rel = select_reliable(external(scores), 4)
        both = np.concatenate([rel.reliable_queries, rel.rejected_queries])
        np.testing.assert_array_equal(np.sort(both), np.arange(25))
        assert len(set(rel.reliable_queries) & set(rel.rejected_queries)) == 0

    def test_candidates_match_topk(self, rng):
        scores = rng.standard_normal((20, 25)).astype(np.float32)
        sim = external(scores)
        rel = select_reliable(sim, 5)
        t2i = topk(sim, 5, T2I).indices
        np.testing.assert_array_equal(rel.candidates, t2i[rel.reliable_queries])

    def test_mutual_bijection_all_reliable(self, rng):
        # unique mutual-best bijection: block diagonal dominance
        n = 12
        scores = rng.uniform(-0.2, 0.2, (n, n)).astype(np.float32)
        scores[np.arange(n), np.arange(n)] = 0.9
        for k in (1, 3, 6):
            assert select_reliable(external(scores), k).n_reliable == n

    def test_defining_property_holds(self, rng):
        scores = rng.standard_normal((30, 20)).astype(np.float32)
        sim = external(scores)
        k = 3
        rel = select_reliable(sim, k)
        i2t = topk(sim, k, I2T).indices
        for idx, q in enumerate(rel.reliable_queries):
            reachable = set(i2t[rel.candidates[idx]].reshape(-1).tolist())
            assert int(q) in reachable

    def test_json_dump(self):
        rel = select_reliable(external([[0.9, 0.1], [0.8, 0.2]]), 1)
        assert rel.to_json() == '{"k": 1, "n_reliable": 1, "n_rejected": 1, "reliable": [0]}'
