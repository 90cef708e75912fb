"""Embedding and score-matrix containers plus their on-disk binary formats.

Three little-endian formats are defined here:

``UEB1`` (embedding sets)
    magic ``55 45 42 31`` ("UEB1"), u32 version (=1), u8 modality
    (0=text, 1=image), u8 normalized (0/1), u8 has_labels (0/1),
    u8 reserved (=0), u32 count, u32 dim, then ``count*dim`` f32 row-major,
    then ``count`` id records (u16 byte length + UTF-8 bytes), then, when
    has_labels=1, ``count`` i32 identity labels.

``USM1`` (externally supplied score matrices)
    magic ``55 53 4D 31`` ("USM1"), u32 version (=1), u8 provenance
    (0=cosine, 1=external), 3 reserved bytes, u32 rows, u32 cols,
    ``rows*cols`` f32 row-major.

``UCH1`` (calibration head blobs)
    magic "UCH1", u32 dim, ``dim`` f32 gamma, ``dim`` f32 beta.

Loading validates everything the formats promise (magic, sizes, finiteness,
id uniqueness, row norms when the normalized flag is set) and fails with a
specific exception naming the offending offset or row. Saving is a pure
function of the in-memory value, so repeated saves are byte-identical and
``load(save(x)) == x``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    DimMismatch,
    DuplicateId,
    IoFailure,
    MagicMismatch,
    NonFiniteValue,
    NotNormalized,
    TruncatedFile,
    ZeroVectorRow,
)

TEXT = "text"
IMAGE = "image"
_MODALITY_CODE = {TEXT: 0, IMAGE: 1}
_MODALITY_NAME = {0: TEXT, 1: IMAGE}

COSINE = "cosine"
EXTERNAL = "external"
_PROVENANCE_CODE = {COSINE: 0, EXTERNAL: 1}
_PROVENANCE_NAME = {0: COSINE, 1: EXTERNAL}

_UEB_MAGIC = b"UEB1"
_USM_MAGIC = b"USM1"
_UCH_MAGIC = b"UCH1"
_VERSION = 1

NORM_TOLERANCE = 1e-5


@dataclass
class EmbeddingSet:
    """A modality-tagged matrix of fixed-dimension float32 feature vectors.

    ``data`` has shape (count, dim); ``ids`` are unique UTF-8 strings, one
    per row; ``labels`` optionally carries integer identity labels used by
    the simulator and the evaluation harness (adaptation itself never reads
    them). When ``normalized`` is set every row has unit L2 norm within
    ``NORM_TOLERANCE``.
    """

    modality: str
    data: np.ndarray
    ids: list[str]
    labels: np.ndarray | None = None
    normalized: bool = False

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise DataError(f"embedding data must be 2-D, got shape {self.data.shape}")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        self.validate()

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def validate(self) -> None:
        if self.modality not in _MODALITY_CODE:
            raise DataError(f"unknown modality {self.modality!r}")
        if self.count < 1 or self.dim < 1:
            raise DataError(f"embedding set must be non-empty, got shape {self.data.shape}")
        finite = np.isfinite(self.data).all(axis=1)
        if not finite.all():
            row = int(np.flatnonzero(~finite)[0])
            raise NonFiniteValue(f"row {row} contains NaN or Inf")
        if len(self.ids) != self.count:
            raise DataError(f"{len(self.ids)} ids for {self.count} rows")
        seen: dict[str, int] = {}
        for row, id_ in enumerate(self.ids):
            if id_ in seen:
                raise DuplicateId(f"id {id_!r} appears at rows {seen[id_]} and {row}")
            seen[id_] = row
        if self.labels is not None and self.labels.shape != (self.count,):
            raise DataError(f"labels shape {self.labels.shape} != ({self.count},)")
        if self.normalized:
            norms = np.linalg.norm(self.data.astype(np.float64), axis=1)
            bad = np.abs(norms - 1.0) > NORM_TOLERANCE
            if bad.any():
                row = int(np.flatnonzero(bad)[0])
                raise NotNormalized(
                    f"normalized flag set but row {row} has norm {norms[row]:.8f}"
                )


@dataclass
class SimilarityMatrix:
    """A queries-by-gallery score matrix: entry [q, g] scores text q against image g.

    ``provenance`` records whether the scores are cosine similarities of
    unit-norm embeddings (range-checked) or opaque externally computed
    matching scores (accepted as-is).
    """

    scores: np.ndarray
    provenance: str = COSINE

    def __post_init__(self):
        self.scores = np.ascontiguousarray(self.scores, dtype=np.float32)
        if self.scores.ndim != 2:
            raise DataError(f"score matrix must be 2-D, got shape {self.scores.shape}")
        self.validate()

    @property
    def n_text(self) -> int:
        return self.scores.shape[0]

    @property
    def n_image(self) -> int:
        return self.scores.shape[1]

    def validate(self) -> None:
        if self.provenance not in _PROVENANCE_CODE:
            raise DataError(f"unknown provenance {self.provenance!r}")
        if not np.isfinite(self.scores).all():
            bad = np.argwhere(~np.isfinite(self.scores))[0]
            raise NonFiniteValue(f"score matrix entry {tuple(bad)} is not finite")
        if self.provenance == COSINE:
            lo, hi = float(self.scores.min()), float(self.scores.max())
            if lo < -1.0 - NORM_TOLERANCE or hi > 1.0 + NORM_TOLERANCE:
                raise DataError(
                    f"cosine scores out of range: min {lo:.6f}, max {hi:.6f}"
                )


def l2_normalize(emb: EmbeddingSet) -> EmbeddingSet:
    """Return a copy of ``emb`` whose rows have unit L2 norm.

    Raises ``ZeroVectorRow`` if any row is exactly the zero vector.
    Idempotent within float32 resolution.
    """
    data = emb.data.astype(np.float64)
    norms = np.linalg.norm(data, axis=1)
    zero = norms == 0.0
    if zero.any():
        raise ZeroVectorRow(int(np.flatnonzero(zero)[0]))
    out = (data / norms[:, None]).astype(np.float32)
    return replace(emb, data=out, normalized=True)


# --- binary readers / writers ---------------------------------------------------


class _Reader:
    """Sequential parser over a byte buffer that reports the failing offset."""

    def __init__(self, buf: bytes, path: Path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFile(
                f"{self.path}: need {n} bytes at offset {self.pos}, "
                f"file has {len(self.buf)}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype, count=count)

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise DataError(
                f"{self.path}: {len(self.buf) - self.pos} trailing bytes at offset {self.pos}"
            )


def _read_file(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _write_file(path: str | Path, payload: bytes) -> None:
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_embeddings(path: str | Path) -> EmbeddingSet:
    """Parse and fully validate a UEB1 file."""
    path = Path(path)
    r = _Reader(_read_file(path), path)
    magic = r.take(4)
    if magic != _UEB_MAGIC:
        raise MagicMismatch(f"{path}: magic {magic!r} at offset 0, expected {_UEB_MAGIC!r}")
    (version,) = r.unpack("I")
    if version != _VERSION:
        raise DataError(f"{path}: unsupported UEB version {version}")
    modality_code, normalized, has_labels, reserved = r.unpack("BBBB")
    if modality_code not in _MODALITY_NAME:
        raise DataError(f"{path}: unknown modality code {modality_code}")
    if reserved != 0:
        raise DataError(f"{path}: reserved header byte is {reserved}, expected 0")
    count, dim = r.unpack("II")
    if count < 1 or dim < 1:
        raise DataError(f"{path}: count={count}, dim={dim} must be positive")
    data = r.array("<f4", count * dim).reshape(count, dim)
    ids = []
    for _ in range(count):
        (nbytes,) = r.unpack("H")
        ids.append(r.take(nbytes).decode("utf-8"))
    labels = r.array("<i4", count).astype(np.int32) if has_labels else None
    r.done()
    return EmbeddingSet(
        modality=_MODALITY_NAME[modality_code],
        data=data,
        ids=ids,
        labels=labels,
        normalized=bool(normalized),
    )


def save_embeddings(emb: EmbeddingSet, path: str | Path) -> None:
    """Write ``emb`` as a UEB1 file; ``load_embeddings`` inverts it bit-exactly."""
    emb.validate()
    parts = [
        _UEB_MAGIC,
        struct.pack(
            "<IBBBB",
            _VERSION,
            _MODALITY_CODE[emb.modality],
            int(emb.normalized),
            int(emb.labels is not None),
            0,
        ),
        struct.pack("<II", emb.count, emb.dim),
        np.ascontiguousarray(emb.data, dtype="<f4").tobytes(),
    ]
    for id_ in emb.ids:
        raw = id_.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DataError(f"id {id_[:32]!r}... exceeds 65535 UTF-8 bytes")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    if emb.labels is not None:
        parts.append(np.ascontiguousarray(emb.labels, dtype="<i4").tobytes())
    _write_file(path, b"".join(parts))


def load_scores(path: str | Path) -> SimilarityMatrix:
    """Parse and validate a USM1 score matrix file."""
    path = Path(path)
    r = _Reader(_read_file(path), path)
    magic = r.take(4)
    if magic != _USM_MAGIC:
        raise MagicMismatch(f"{path}: magic {magic!r} at offset 0, expected {_USM_MAGIC!r}")
    (version,) = r.unpack("I")
    if version != _VERSION:
        raise DataError(f"{path}: unsupported USM version {version}")
    provenance_code, r1, r2, r3 = r.unpack("BBBB")
    if provenance_code not in _PROVENANCE_NAME:
        raise DataError(f"{path}: unknown provenance code {provenance_code}")
    if (r1, r2, r3) != (0, 0, 0):
        raise DataError(f"{path}: reserved header bytes not zero")
    rows, cols = r.unpack("II")
    if rows < 1 or cols < 1:
        raise DataError(f"{path}: rows={rows}, cols={cols} must be positive")
    scores = r.array("<f4", rows * cols).reshape(rows, cols)
    r.done()
    return SimilarityMatrix(scores=scores, provenance=_PROVENANCE_NAME[provenance_code])


def save_scores(sim: SimilarityMatrix, path: str | Path) -> None:
    """Write ``sim`` as a USM1 file."""
    sim.validate()
    payload = b"".join(
        [
            _USM_MAGIC,
            struct.pack("<IBBBB", _VERSION, _PROVENANCE_CODE[sim.provenance], 0, 0, 0),
            struct.pack("<II", sim.n_text, sim.n_image),
            np.ascontiguousarray(sim.scores, dtype="<f4").tobytes(),
        ]
    )
    _write_file(path, payload)


def load_head(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a UCH1 blob; returns float64 (gamma, beta) vectors."""
    path = Path(path)
    r = _Reader(_read_file(path), path)
    magic = r.take(4)
    if magic != _UCH_MAGIC:
        raise MagicMismatch(f"{path}: magic {magic!r} at offset 0, expected {_UCH_MAGIC!r}")
    (dim,) = r.unpack("I")
    if dim < 1:
        raise DataError(f"{path}: dim={dim} must be positive")
    gamma = r.array("<f4", dim).astype(np.float64)
    beta = r.array("<f4", dim).astype(np.float64)
    r.done()
    return gamma, beta


def save_head(gamma: np.ndarray, beta: np.ndarray, path: str | Path) -> None:
    """Write calibration parameters as a UCH1 blob (float32 on disk)."""
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if gamma.ndim != 1 or gamma.shape != beta.shape:
        raise DimMismatch(f"gamma shape {gamma.shape} vs beta shape {beta.shape}")
    payload = b"".join(
        [
            _UCH_MAGIC,
            struct.pack("<I", gamma.shape[0]),
            gamma.astype("<f4").tobytes(),
            beta.astype("<f4").tobytes(),
        ]
    )
    _write_file(path, payload)
