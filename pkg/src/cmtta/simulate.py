"""Synthetic paired text/image embedding sets with controllable domain shift.

Identity prototypes are sampled uniformly on the unit sphere. Image rows
are noisy unit-norm copies of their prototype. Text rows start the same
way and are then pushed through a shift operator -- planar rotations in a
few random orthogonal planes, per-dimension log-uniform scaling, a shared
additive bias, and per-row Gaussian noise -- before re-normalization. The
shift is applied to the text side only so that the text-side calibration
head has the capacity to undo part of it (scaling and bias directly,
rotation only approximately).

Generation is a pure function of the spec: every identity draws from its
own derived sub-seed, so output is independent of iteration order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import MissingLabels
from .io import IMAGE, TEXT, EmbeddingSet
from .retrieval import TopKIndex
from .seeding import rng_for


@dataclass
class ShiftSpec:
    """Parameters of the text-side domain shift operator."""

    rotation_angle: float = np.pi / 6  # radians, applied in each plane
    n_planes: int = 8
    scale_jitter: float = 0.2          # per-dim factor in [1/(1+j), 1+j], log-uniform
    bias_sigma: float = 0.05
    noise_sigma: float = 0.02

    def validate(self) -> None:
        if not 0.0 <= self.rotation_angle <= np.pi:
            raise ValueError(f"rotation_angle={self.rotation_angle} outside [0, pi]")
        if self.n_planes < 0:
            raise ValueError("n_planes must be >= 0")
        for name in ("scale_jitter", "bias_sigma", "noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class SyntheticSpec:
    """Size, noise, and shift parameters of one synthetic benchmark."""

    n_identities: int = 100
    images_per_identity: int = 5
    texts_per_identity: int = 2
    dim: int = 64
    intra_noise_sigma: float = 0.18    # per-coordinate spread within an identity
    score_scale: float = 30.0          # logit scale of the emulated dual encoder
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_identities", "images_per_identity", "texts_per_identity", "dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.intra_noise_sigma < 0:
            raise ValueError("intra_noise_sigma must be >= 0")
        if self.score_scale <= 0:
            raise ValueError("score_scale must be > 0")
        self.shift.validate()

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _rotation_planes(rng: np.random.Generator, dim: int, n_planes: int) -> np.ndarray:
    """Orthonormal basis vectors spanning ``n_planes`` disjoint planes."""
    n_planes = min(n_planes, dim // 2)
    raw = rng.standard_normal((dim, 2 * n_planes))
    q, _ = np.linalg.qr(raw)
    return q.T  # (2*n_planes, dim), rows orthonormal


def _apply_shift(rows: np.ndarray, shift: ShiftSpec, rng: np.random.Generator) -> np.ndarray:
    dim = rows.shape[1]
    out = rows.copy()

    planes = _rotation_planes(rng, dim, shift.n_planes)
    cos_t, sin_t = np.cos(shift.rotation_angle), np.sin(shift.rotation_angle)
    for p in range(planes.shape[0] // 2):
        u, v = planes[2 * p], planes[2 * p + 1]
        cu = out @ u
        cv = out @ v
        out = (
            out
            + np.outer(cu * (cos_t - 1.0) - cv * sin_t, u)
            + np.outer(cu * sin_t + cv * (cos_t - 1.0), v)
        )

    if shift.scale_jitter > 0:
        half_range = np.log1p(shift.scale_jitter)
        scale = np.exp(rng.uniform(-half_range, half_range, size=dim))
        out = out * scale
    if shift.bias_sigma > 0:
        out = out + rng.normal(0.0, shift.bias_sigma, size=dim)
    if shift.noise_sigma > 0:
        out = out + rng.normal(0.0, shift.noise_sigma, size=out.shape)
    return out


def generate(spec: SyntheticSpec) -> tuple[EmbeddingSet, EmbeddingSet]:
    """Generate the (text, image) embedding pair described by ``spec``.

    Both sets carry identity labels. Deterministic: the same spec always
    produces bitwise-identical sets.
    """
    spec.validate()
    protos = _unit_rows(
        rng_for(spec.seed, "prototypes").standard_normal((spec.n_identities, spec.dim))
    )

    img_rows, txt_rows, img_labels, txt_labels = [], [], [], []
    for ident in range(spec.n_identities):
        rng = rng_for(spec.seed, "identity", ident)
        noise_i = rng.normal(0.0, spec.intra_noise_sigma, (spec.images_per_identity, spec.dim))
        noise_t = rng.normal(0.0, spec.intra_noise_sigma, (spec.texts_per_identity, spec.dim))
        img_rows.append(protos[ident] + noise_i)
        txt_rows.append(protos[ident] + noise_t)
        img_labels.extend([ident] * spec.images_per_identity)
        txt_labels.extend([ident] * spec.texts_per_identity)

    images = _unit_rows(np.concatenate(img_rows))
    texts = _unit_rows(np.concatenate(txt_rows))
    texts = _unit_rows(_apply_shift(texts, spec.shift, rng_for(spec.seed, "shift")))

    text_set = EmbeddingSet(
        modality=TEXT,
        data=texts.astype(np.float32),
        ids=[f"text-{i:05d}" for i in range(texts.shape[0])],
        labels=np.asarray(txt_labels, dtype=np.int32),
        normalized=True,
    )
    image_set = EmbeddingSet(
        modality=IMAGE,
        data=images.astype(np.float32),
        ids=[f"img-{i:05d}" for i in range(images.shape[0])],
        labels=np.asarray(img_labels, dtype=np.int32),
        normalized=True,
    )
    return text_set, image_set


def label_pairs(
    ranking: TopKIndex,
    query_labels: np.ndarray | None,
    gallery_labels: np.ndarray | None,
) -> np.ndarray:
    """True/false-positive tags for each query's rank-1 pair.

    Returns a boolean array aligned with the ranking's rows: True when the
    query and its rank-1 candidate share an identity label.
    """
    if query_labels is None or gallery_labels is None:
        raise MissingLabels("label_pairs requires labels on both sides")
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    top1 = ranking.indices[:, 0]
    return gallery_labels[top1] == query_labels


def write_sidecar(spec: SyntheticSpec, path: str | Path) -> None:
    Path(path).write_text(spec.to_json() + "\n", encoding="utf-8")
