"""Round-trip, validation, and normalization behavior of the binary formats."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmtta import (
    EmbeddingSet,
    SimilarityMatrix,
    l2_normalize,
    load_embeddings,
    load_head,
    load_scores,
    save_embeddings,
    save_head,
    save_scores,
)
from cmtta.errors import (
    DataError,
    DuplicateId,
    MagicMismatch,
    NonFiniteValue,
    NotNormalized,
    TruncatedFile,
    ZeroVectorRow,
)


def make_set(data, labels=None, normalized=False, modality="text"):
    data = np.asarray(data, dtype=np.float32)
    return EmbeddingSet(
        modality=modality,
        data=data,
        ids=[f"id{i}" for i in range(data.shape[0])],
        labels=None if labels is None else np.asarray(labels, dtype=np.int32),
        normalized=normalized,
    )


class TestRoundTrip:
    def test_without_labels(self, tmp_path):
        emb = make_set([[1.5, -2.25, 0.5], [0.0, 3.0, 4.0]])
        path = tmp_path / "x.ueb1"
        save_embeddings(emb, path)
        back = load_embeddings(path)
        assert back.data.tobytes() == emb.data.tobytes()
        assert back.ids == emb.ids
        assert back.labels is None
        assert back.modality == emb.modality
        assert back.normalized == emb.normalized

    def test_with_labels(self, tmp_path):
        emb = make_set([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]], labels=[7, 7, 9])
        path = tmp_path / "x.ueb1"
        save_embeddings(emb, path)
        back = load_embeddings(path)
        assert back.data.tobytes() == emb.data.tobytes()
        np.testing.assert_array_equal(back.labels, emb.labels)

    def test_two_saves_byte_identical(self, tmp_path):
        emb = make_set([[0.25, -1.0]], labels=[3], modality="image")
        a, b = tmp_path / "a.ueb1", tmp_path / "b.ueb1"
        save_embeddings(emb, a)
        save_embeddings(emb, b)
        assert a.read_bytes() == b.read_bytes()

    def test_unicode_ids(self, tmp_path):
        emb = EmbeddingSet("text", np.eye(2, dtype=np.float32), ["héllo", "世界"])
        path = tmp_path / "x.ueb1"
        save_embeddings(emb, path)
        assert load_embeddings(path).ids == ["héllo", "世界"]

    @settings(max_examples=40, deadline=None)
    @given(
        count=st.integers(1, 8),
        dim=st.integers(1, 6),
        has_labels=st.booleans(),
        modality=st.sampled_from(["text", "image"]),
        seed=st.integers(0, 2**31),
    )
    def test_any_valid_set_round_trips(self, tmp_path_factory, count, dim, has_labels, modality, seed):
        rng = np.random.default_rng(seed)
        data = rng.standard_normal((count, dim)).astype(np.float32)
        labels = rng.integers(-5, 5, count).astype(np.int32) if has_labels else None
        emb = EmbeddingSet(modality, data, [f"u{i}" for i in range(count)], labels=labels)
        path = tmp_path_factory.mktemp("rt") / "x.ueb1"
        save_embeddings(emb, path)
        back = load_embeddings(path)
        assert back.data.tobytes() == emb.data.tobytes()
        assert back.ids == emb.ids
        if has_labels:
            np.testing.assert_array_equal(back.labels, emb.labels)


class TestLoadValidation:
    def test_magic_mismatch(self, tmp_path):
        path = tmp_path / "bad.ueb1"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(MagicMismatch):
            load_embeddings(path)

    def test_truncated_payload(self, tmp_path):
        emb = make_set([[1.0, 2.0, 3.0, 4.0]])
        path = tmp_path / "x.ueb1"
        save_embeddings(emb, path)
        raw = path.read_bytes()
        # header claims dim=4; drop the last float of the payload
        path.write_bytes(raw[: 20 + 3 * 4])
        with pytest.raises(TruncatedFile):
            load_embeddings(path)

    def test_nonfinite_payload(self, tmp_path):
        emb = make_set([[1.0, 2.0]])
        path = tmp_path / "x.ueb1"
        save_embeddings(emb, path)
        raw = bytearray(path.read_bytes())
        raw[20:24] = struct.pack("<f", float("nan"))
        path.write_bytes(bytes(raw))
        with pytest.raises(NonFiniteValue):
            load_embeddings(path)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DuplicateId):
            EmbeddingSet("text", np.eye(2, dtype=np.float32), ["a", "a"])

    def test_normalized_flag_is_verified(self, tmp_path):
        emb = make_set([[3.0, 4.0]])
        path = tmp_path / "x.ueb1"
        save_embeddings(emb, path)
        raw = bytearray(path.read_bytes())
        raw[9] = 1  # claim normalized without normalizing
        path.write_bytes(bytes(raw))
        with pytest.raises(NotNormalized):
            load_embeddings(path)

    def test_rejection_is_deterministic(self, tmp_path):
        path = tmp_path / "bad.ueb1"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        first = pytest.raises(MagicMismatch, load_embeddings, path).value
        second = pytest.raises(MagicMismatch, load_embeddings, path).value
        assert str(first) == str(second)

    def test_trailing_bytes_rejected(self, tmp_path):
        emb = make_set([[1.0, 2.0]])
        path = tmp_path / "x.ueb1"
        save_embeddings(emb, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(DataError):
            load_embeddings(path)


class TestNormalize:
    def test_three_four_five_row(self):
        emb = make_set([[3.0, 4.0, 0.0], [1.0, 0.0, 0.0]])
        out = l2_normalize(emb)
        np.testing.assert_allclose(out.data[0], [0.6, 0.8, 0.0], atol=1e-7)
        assert out.normalized

    def test_idempotent(self, rng):
        emb = make_set(rng.standard_normal((5, 7)).astype(np.float32))
        once = l2_normalize(emb)
        twice = l2_normalize(once)
        np.testing.assert_allclose(once.data, twice.data, atol=1e-7)

    def test_zero_row_rejected(self):
        emb = make_set([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        with pytest.raises(ZeroVectorRow) as err:
            l2_normalize(emb)
        assert err.value.index == 0

    def test_original_untouched(self):
        emb = make_set([[3.0, 4.0]])
        l2_normalize(emb)
        np.testing.assert_array_equal(emb.data, [[3.0, 4.0]])


class TestScoreMatrix:
    def test_round_trip(self, tmp_path):
        sim = SimilarityMatrix(np.array([[0.5, -0.25], [1.0, 0.0]], dtype=np.float32))
        path = tmp_path / "s.usm1"
        save_scores(sim, path)
        back = load_scores(path)
        assert back.scores.tobytes() == sim.scores.tobytes()
        assert back.provenance == "cosine"

    def test_external_any_scale(self, tmp_path):
        sim = SimilarityMatrix(
            np.array([[55.0, -20.0]], dtype=np.float32), provenance="external"
        )
        path = tmp_path / "s.usm1"
        save_scores(sim, path)
        assert load_scores(path).provenance == "external"

    def test_cosine_range_checked(self):
        with pytest.raises(DataError):
            SimilarityMatrix(np.array([[2.0]], dtype=np.float32), provenance="cosine")

    def test_nonfinite_rejected(self):
        with pytest.raises(NonFiniteValue):
            SimilarityMatrix(
                np.array([[np.inf]], dtype=np.float32), provenance="external"
            )

    def test_magic_mismatch(self, tmp_path):
        path = tmp_path / "s.usm1"
        path.write_bytes(b"UEB1" + b"\x00" * 20)
        with pytest.raises(MagicMismatch):
            load_scores(path)


class TestHeadBlob:
    def test_round_trip(self, tmp_path):
        gamma = np.array([1.0, 2.0, 0.5])
        beta = np.array([0.0, -0.25, 0.125])
        path = tmp_path / "h.uch1"
        save_head(gamma, beta, path)
        g, b = load_head(path)
        np.testing.assert_array_equal(g, gamma)
        np.testing.assert_array_equal(b, beta)

    def test_truncated(self, tmp_path):
        path = tmp_path / "h.uch1"
        save_head(np.ones(4), np.zeros(4), path)
        path.write_bytes(path.read_bytes()[:-2])
        with pytest.raises(TruncatedFile):
            load_head(path)
