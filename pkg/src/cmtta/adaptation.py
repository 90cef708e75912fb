"""Test-time adaptation of a per-dimension affine calibration head.

Only the text side is calibrated: each text embedding e is mapped to
l2_normalize(gamma * e + beta) and model scores against the (fixed) image
embeddings are recomputed on the fly as score_scale * cosine, mirroring the
logit scaling of the dual encoder being emulated. Candidate structures are
frozen from
the pre-adaptation similarity matrix: each query keeps its original top-k
image list, each image its original top-k text list, and batches pair every
query with its rank-1 pseudo-positive plus sampled negatives. The objective
sharpens both retrieval directions per pair (entropy of the forward tuple
softmax plus entropy of the reverse list softmax), with each pair's
contribution divided by its disagreement score so that inconsistent pairs
are suppressed instead of reinforced. A plain unweighted variant of the
same objective over all queries serves as the entropy-minimization
baseline.

Gradients with respect to gamma and beta are analytic (chained through the
affine map, the re-normalization, the dot products, the softmaxes, and the
entropies); the disagreement weight is treated as a constant unless
``differentiate_weights`` is set. Updates use a from-scratch AdamW with
bias correction. The whole loop is a pure function of (inputs, config,
seed): per-round shuffles and negative draws come from sub-seeds derived
from the root seed, and all reductions run in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    DimMismatch,
    ModalityMismatch,
    NoReliableQueries,
    NonFiniteLoss,
    ZeroVectorRow,
)
from .io import EmbeddingSet, SimilarityMatrix, l2_normalize
from .retrieval import I2T, T2I, evaluate, topk
from .seeding import rng_for
from .selection import ReliableSet, select_reliable
from .uncertainty import DEFAULT_EPSILON, LOGRATIO, MEANCONF, NORMDIFF, disagreement

UATTA = "uatta"
TENT = "tent"

# Reliable-set sizes up to this many queries run the long round schedule.
SMALL_SET_QUERIES = 6000
ROUNDS_SMALL = 50
ROUNDS_LARGE = 10


@dataclass
class CalibrationHead:
    """Per-dimension affine parameters applied to text embeddings.

    Starts as the identity map (gamma = 1, beta = 0); parameters are kept
    in float64 during optimization and serialized as float32.
    """

    gamma: np.ndarray
    beta: np.ndarray
    target_modality: str = "text"

    @classmethod
    def identity(cls, dim: int) -> "CalibrationHead":
        return cls(gamma=np.ones(dim, dtype=np.float64), beta=np.zeros(dim, dtype=np.float64))

    @property
    def dim(self) -> int:
        return int(self.gamma.shape[0])


@dataclass
class AdaptationConfig:
    """All adaptation hyperparameters, with defaults mirroring the method's
    reference operating point (k=5, 32 queries per batch at a 1:3
    positive-to-negative ratio for an effective batch of 128, AdamW at
    learning rate 1e-3)."""

    k: int = 5
    queries_per_batch: int = 32
    negatives_per_query: int = 3
    rounds: int | None = None  # None: 50 for small query sets, 10 for large
    learning_rate: float = 1e-3
    score_scale: float = 30.0  # logit scale applied when recomputing scores
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    uncertainty_variant: str = NORMDIFF
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0
    method: str = UATTA
    negative_source: str = "gallery"  # "gallery": uniform; "ranked": frozen ranks 2..k
    differentiate_weights: bool = False
    track_r1: bool = True

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError(f"k={self.k} must be >= 1")
        if self.queries_per_batch < 1:
            raise ValueError("queries_per_batch must be >= 1")
        if self.negatives_per_query < 0:
            raise ValueError("negatives_per_query must be >= 0")
        if self.score_scale <= 0:
            raise ValueError("score_scale must be > 0")
        if self.uncertainty_variant not in (NORMDIFF, MEANCONF, LOGRATIO):
            raise ValueError(f"unknown uncertainty variant {self.uncertainty_variant!r}")
        if self.method not in (UATTA, TENT):
            raise ValueError(f"unknown method {self.method!r}")
        if self.negative_source not in ("ranked", "gallery"):
            raise ValueError(f"unknown negative_source {self.negative_source!r}")

    @property
    def effective_batch_size(self) -> int:
        return self.queries_per_batch * (1 + self.negatives_per_query)

    def resolve_rounds(self, n_queries: int) -> int:
        if self.rounds is not None:
            return self.rounds
        return ROUNDS_SMALL if n_queries <= SMALL_SET_QUERIES else ROUNDS_LARGE


@dataclass
class RoundRecord:
    round: int
    loss: float
    mean_d: float
    grad_norm: float
    r1: float | None = None


@dataclass
class AdaptationHistory:
    records: list[RoundRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self) -> str:
        lines = ["round,loss,mean_d,grad_norm,r1"]
        for rec in self.records:
            r1 = "" if rec.r1 is None else repr(rec.r1)
            lines.append(f"{rec.round},{rec.loss!r},{rec.mean_d!r},{rec.grad_norm!r},{r1}")
        return "\n".join(lines) + "\n"


def write_history_csv(history: AdaptationHistory, path: str | Path) -> None:
    Path(path).write_text(history.to_csv(), encoding="utf-8")


def read_history_csv(path: str | Path) -> AdaptationHistory:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    history = AdaptationHistory()
    for line in lines[1:]:
        round_, loss, mean_d, grad_norm, r1 = line.split(",")
        history.records.append(
            RoundRecord(
                round=int(round_),
                loss=float(loss),
                mean_d=float(mean_d),
                grad_norm=float(grad_norm),
                r1=float(r1) if r1 else None,
            )
        )
    return history


def apply_head(head: CalibrationHead, emb: EmbeddingSet) -> EmbeddingSet:
    """Calibrate an embedding set: gamma * e + beta per row, re-normalized."""
    if emb.modality != head.target_modality:
        raise ModalityMismatch(
            f"head targets {head.target_modality!r}, got {emb.modality!r} set"
        )
    if emb.dim != head.dim:
        raise DimMismatch(f"head dim {head.dim} != set dim {emb.dim}")
    mapped = emb.data.astype(np.float64) * head.gamma + head.beta
    norms = np.linalg.norm(mapped, axis=1)
    zero = norms == 0.0
    if zero.any():
        raise ZeroVectorRow(int(np.flatnonzero(zero)[0]))
    out = (mapped / norms[:, None]).astype(np.float32)
    return replace(emb, data=out, normalized=True)


@dataclass
class AdaptationContext:
    """Everything frozen before the optimization loop starts.

    ``text`` / ``image`` are the unit-norm float64 embedding matrices;
    ``cand_t2i`` and ``cand_i2t`` are the pre-adaptation top-k index
    structures that stay fixed across rounds.
    """

    text: np.ndarray
    image: np.ndarray
    cand_t2i: np.ndarray
    cand_i2t: np.ndarray
    k: int

    @property
    def n_text(self) -> int:
        return self.text.shape[0]

    @property
    def n_image(self) -> int:
        return self.image.shape[0]


def freeze_structures(
    text: EmbeddingSet, image: EmbeddingSet, sim: SimilarityMatrix, k: int
) -> AdaptationContext:
    """Normalize inputs and freeze the top-k structures of ``sim``."""
    if not text.normalized:
        text = l2_normalize(text)
    if not image.normalized:
        image = l2_normalize(image)
    return AdaptationContext(
        text=text.data.astype(np.float64),
        image=image.data.astype(np.float64),
        cand_t2i=topk(sim, k, T2I).indices,
        cand_i2t=topk(sim, k, I2T).indices,
        k=k,
    )


@dataclass
class Batch:
    """A slice of the round schedule: queries with their candidate tuples.

    ``tuples[:, 0]`` is each query's pseudo-positive (its frozen rank-1
    image); the remaining columns are its sampled negatives.
    """

    queries: np.ndarray
    tuples: np.ndarray


def build_batches(
    pool: np.ndarray,
    ctx: AdaptationContext,
    config: AdaptationConfig,
    round_idx: int,
) -> list[Batch]:
    """Deterministic batch schedule for one round.

    The query pool is shuffled with a sub-seed derived from (seed, round).
    Each query's tuple is its rank-1 image plus ``negatives_per_query``
    draws without replacement, either uniformly from the rest of the
    gallery (default) or from its frozen ranks 2..k with a uniform
    fallback for the shortfall. Tuples hold distinct images, so the
    negative count is capped at gallery size - 1.
    """
    if pool.shape[0] == 0:
        raise NoReliableQueries("cannot build batches from an empty query pool")
    rng = rng_for(config.seed, "batches", round_idx)
    order = pool[rng.permutation(pool.shape[0])]
    n_neg = min(config.negatives_per_query, ctx.n_image - 1)
    all_images = np.arange(ctx.n_image)

    tuples = np.empty((order.shape[0], 1 + n_neg), dtype=np.int64)
    for row, q in enumerate(order):
        cands = ctx.cand_t2i[q]
        tuples[row, 0] = cands[0]
        if config.negative_source == "gallery":
            remaining = np.setdiff1d(all_images, cands[:1], assume_unique=False)
            negs = rng.choice(remaining, size=n_neg, replace=False)
        else:
            in_list = cands[1:]
            if in_list.shape[0] >= n_neg:
                negs = rng.choice(in_list, size=n_neg, replace=False)
            else:
                shortfall = n_neg - in_list.shape[0]
                taken = np.concatenate(([cands[0]], in_list))
                remaining = np.setdiff1d(all_images, taken, assume_unique=False)
                extra = rng.choice(remaining, size=shortfall, replace=False)
                negs = np.concatenate((in_list, extra))
        tuples[row, 1:] = negs

    batches = []
    for start in range(0, order.shape[0], config.queries_per_batch):
        stop = start + config.queries_per_batch
        batches.append(Batch(queries=order[start:stop], tuples=tuples[start:stop]))
    return batches


@dataclass
class LossResult:
    loss: float
    grad_gamma: np.ndarray
    grad_beta: np.ndarray
    d: np.ndarray          # per-pair disagreement weight actually applied
    p_t2i: np.ndarray
    p_i2t: np.ndarray
    queries: np.ndarray
    candidates: np.ndarray


def _entropy_term(p: np.ndarray) -> np.ndarray:
    # -p log p, with the p -> 0 limit handled (softmax outputs are > 0,
    # but subnormal underflow can reach exact zero).
    out = np.zeros_like(p)
    nz = p > 0.0
    out[nz] = -p[nz] * np.log(p[nz])
    return out


def _calibrate(ctx: AdaptationContext, head: CalibrationHead):
    u = ctx.text * head.gamma + head.beta
    norms = np.linalg.norm(u, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = u / norms[:, None]
    return unit, norms


def batch_loss(
    batch: Batch,
    ctx: AdaptationContext,
    head: CalibrationHead,
    config: AdaptationConfig,
    weighted: bool = True,
    frozen_weights: np.ndarray | None = None,
) -> LossResult:
    """Loss and analytic (gamma, beta) gradients for one batch.

    Per pair (query q, tuple image g) two probabilities are formed from
    head-calibrated text rows: the forward softmax over q's tuple and the
    reverse softmax over g's frozen top-k text list (the numerator uses q's
    score against g even when q is outside that list). The pair contributes
    the sum of both directions' entropy terms divided by its disagreement
    weight. With ``weighted=False`` every weight is 1 (the plain entropy
    baseline). ``frozen_weights`` overrides the weights with given
    constants, which is what a finite-difference check of the
    constant-weight objective needs.

    Gradients flow through every calibrated text row that appears in a
    softmax (batch queries and list texts alike); they flow through the
    weights only when ``config.differentiate_weights`` is set.
    """
    B, m = batch.tuples.shape
    k = ctx.k
    unit, norms = _calibrate(ctx, head)
    if not np.isfinite(unit[batch.queries]).all():
        bad = int(batch.queries[~np.isfinite(unit[batch.queries]).all(axis=1)][0])
        raise NonFiniteLoss(f"calibrated text row {bad} is not finite", query=bad)

    scale = config.score_scale
    img_rows = ctx.image[batch.tuples]                        # (B, m, d)
    c_tuple = np.einsum("bd,bmd->bm", unit[batch.queries], img_rows)  # cosines
    s_tuple = scale * c_tuple                                 # model scores

    # forward: softmax over each query's tuple
    shifted = s_tuple - s_tuple.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p_t2i = e / e.sum(axis=1, keepdims=True)                  # (B, m)

    # reverse: softmax over each tuple image's frozen text list
    lists = ctx.cand_i2t[batch.tuples]                        # (B, m, k) text idx
    c_lists = np.einsum("bmkd,bmd->bmk", unit[lists], img_rows)
    s_lists = scale * c_lists
    mx = np.maximum(s_lists.max(axis=2), s_tuple)             # (B, m)
    z = np.exp(s_lists - mx[:, :, None])                      # (B, m, k)
    z_sum = z.sum(axis=2)
    p_i2t = np.exp(s_tuple - mx) / z_sum                      # (B, m)
    sigma = z / z_sum[:, :, None]                             # list softmax (B, m, k)

    if frozen_weights is not None:
        d_applied = np.asarray(frozen_weights, dtype=np.float64).reshape(B, m)
        dd_da = dd_db = None
    elif weighted:
        d_applied = disagreement(
            p_t2i, p_i2t, config.uncertainty_variant, config.epsilon
        )
        dd_da, dd_db = (
            _weight_partials(p_t2i, p_i2t, config)
            if config.differentiate_weights
            else (None, None)
        )
    else:
        d_applied = np.ones((B, m))
        dd_da = dd_db = None
    # Guard the divide for weights that can reach zero (logratio at agreement).
    w = 1.0 / np.maximum(d_applied, config.epsilon)

    h_a = _entropy_term(p_t2i)
    h_b = _entropy_term(p_i2t)
    pair_losses = (h_a + h_b) * w
    loss = float(pair_losses.sum())

    # dL/dp for each direction; the entropy term h(p) has h'(p) = -(log p + 1).
    # Zero-probability entries (exp underflow) have a zero p * h'(p) limit.
    with np.errstate(divide="ignore", invalid="ignore"):
        g_a = w * -(np.log(p_t2i) + 1.0)
        g_b = w * -(np.log(p_i2t) + 1.0)
    if dd_da is not None:
        # loss term is (h_a + h_b) / D: add the quotient-rule part.
        g_a = g_a - (h_a + h_b) * (w * w) * dd_da
        g_b = g_b - (h_a + h_b) * (w * w) * dd_db

    # Chain both softmaxes back to per-score coefficients dL/ds(t, g).
    c = np.where(p_t2i > 0.0, g_a * p_t2i, 0.0)
    coeff_tuple = c - p_t2i * c.sum(axis=1, keepdims=True)    # (B, m)
    coeff_num = np.where(p_i2t > 0.0, g_b * p_i2t, 0.0)       # (B, m) at (q, g)
    coeff_list = -coeff_num[:, :, None] * sigma               # (B, m, k) at (t_l, g)

    # Flatten all score entries: (text row, image row, coefficient, score).
    t_idx = np.concatenate(
        [
            np.repeat(batch.queries, m),
            np.repeat(batch.queries, m),
            lists.reshape(-1),
        ]
    )
    g_idx = np.concatenate(
        [batch.tuples.reshape(-1), batch.tuples.reshape(-1), np.repeat(batch.tuples, k)]
    )
    coeff = scale * np.concatenate(
        [coeff_tuple.reshape(-1), coeff_num.reshape(-1), coeff_list.reshape(-1)]
    )
    c_val = np.concatenate(
        [c_tuple.reshape(-1), c_tuple.reshape(-1), c_lists.reshape(-1)]
    )

    # d cos(t, g) / d u_t = (image_g - cos * unit_t) / |u_t|; the model score
    # is scale * cos (scale folded into coeff above); then through the affine
    # map: d u_t / d gamma = diag(e_t), d u_t / d beta = I.
    v = (ctx.image[g_idx] - c_val[:, None] * unit[t_idx]) * (coeff / norms[t_idx])[:, None]
    grad_beta = v.sum(axis=0)
    grad_gamma = (v * ctx.text[t_idx]).sum(axis=0)

    if not (np.isfinite(loss) and np.isfinite(grad_gamma).all() and np.isfinite(grad_beta).all()):
        flat = np.argwhere(~np.isfinite(pair_losses))
        q, g = (-1, -1)
        if flat.size:
            b_bad, j_bad = flat[0]
            q, g = int(batch.queries[b_bad]), int(batch.tuples[b_bad, j_bad])
        raise NonFiniteLoss(
            f"non-finite loss or gradient (query {q}, candidate {g})", query=q, candidate=g
        )

    return LossResult(
        loss=loss,
        grad_gamma=grad_gamma,
        grad_beta=grad_beta,
        d=d_applied.reshape(-1),
        p_t2i=p_t2i.reshape(-1),
        p_i2t=p_i2t.reshape(-1),
        queries=np.repeat(batch.queries, m),
        candidates=batch.tuples.reshape(-1),
    )


def _weight_partials(a: np.ndarray, b: np.ndarray, config: AdaptationConfig):
    """Partials of the disagreement D with respect to (p_t2i, p_i2t)."""
    variant = config.uncertainty_variant
    eps = config.epsilon
    if variant == NORMDIFF:
        mean = (a + b) / 2.0
        diff = np.abs(a - b)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = diff / mean
        active = (mean >= eps) & (ratio < 2.0)  # flat where capped or degenerate
        d = np.exp(np.where(mean < eps, 2.0, np.clip(ratio, 0.0, 2.0)))
        s = np.sign(a - b)
        with np.errstate(divide="ignore", invalid="ignore"):
            dr_da = 2.0 * (s * (a + b) - diff) / (a + b) ** 2
            dr_db = 2.0 * (-s * (a + b) - diff) / (a + b) ** 2
        dd_da = np.where(active, d * dr_da, 0.0)
        dd_db = np.where(active, d * dr_db, 0.0)
        return dd_da, dd_db
    if variant == MEANCONF:
        d = np.exp(1.0 - (a + b) / 2.0)
        return -d / 2.0, -d / 2.0
    if variant == LOGRATIO:
        s = np.sign(np.log(a + eps) - np.log(b + eps))
        return s / (a + eps), -s / (b + eps)
    raise ValueError(f"unknown uncertainty variant {variant!r}")


def uncertainty_weighted_loss(
    batch: Batch,
    ctx: AdaptationContext,
    head: CalibrationHead,
    config: AdaptationConfig,
    frozen_weights: np.ndarray | None = None,
) -> LossResult:
    """The adaptation objective: entropy per pair scaled by 1/disagreement."""
    return batch_loss(batch, ctx, head, config, weighted=True, frozen_weights=frozen_weights)


def entropy_loss(
    batch: Batch,
    ctx: AdaptationContext,
    head: CalibrationHead,
    config: AdaptationConfig,
) -> LossResult:
    """Plain entropy-minimization baseline: the same objective with unit weights."""
    return batch_loss(batch, ctx, head, config, weighted=False)


class AdamW:
    """Adam with decoupled weight decay and bias correction, from scratch.

    With weight_decay = 0 this is exactly Adam. Operates in place on the
    given parameter arrays; two optimizers constructed with the same
    parameters and fed the same gradients produce bitwise-equal updates.
    """

    def __init__(self, params: dict[str, np.ndarray], config: AdaptationConfig):
        self.params = params
        self.lr = config.learning_rate
        self.beta1 = config.adam_beta1
        self.beta2 = config.adam_beta2
        self.eps = config.adam_eps
        self.weight_decay = config.weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p)


def adapt(
    text: EmbeddingSet,
    image: EmbeddingSet,
    sim: SimilarityMatrix | None,
    config: AdaptationConfig,
) -> tuple[CalibrationHead, AdaptationHistory]:
    """Run the full adaptation loop and return the head plus round history.

    Reliable queries are selected once on the pre-adaptation matrix and all
    top-k structures are frozen before the first update. The baseline
    method skips selection and optimizes the unweighted objective over all
    queries. With labels on both sides each round also records R@1 of the
    calibrated embeddings.
    """
    from .retrieval import cosine_similarity, model_scores

    config.validate()
    if not text.normalized:
        text = l2_normalize(text)
    if not image.normalized:
        image = l2_normalize(image)
    if sim is None:
        sim = model_scores(text, image, config.score_scale)
    ctx = freeze_structures(text, image, sim, config.k)

    if config.method == UATTA:
        reliable = select_reliable(sim, config.k)
        if reliable.n_reliable == 0:
            raise NoReliableQueries(f"no query passed cycle-consistency at k={config.k}")
        pool = reliable.reliable_queries
    else:
        pool = np.arange(ctx.n_text)

    head = CalibrationHead.identity(text.dim)
    optimizer = AdamW({"gamma": head.gamma, "beta": head.beta}, config)
    history = AdaptationHistory()
    rounds = config.resolve_rounds(pool.shape[0])
    weighted = config.method == UATTA
    can_track = config.track_r1 and text.labels is not None and image.labels is not None

    for round_idx in range(rounds):
        batches = build_batches(pool, ctx, config, round_idx)
        loss_sum = 0.0
        d_sum = 0.0
        n_pairs = 0
        norm_sum = 0.0
        for batch in batches:
            result = batch_loss(batch, ctx, head, config, weighted=weighted)
            optimizer.step({"gamma": result.grad_gamma, "beta": result.grad_beta})
            loss_sum += result.loss
            d_sum += float(result.d.sum())
            n_pairs += result.d.shape[0]
            norm_sum += float(
                np.sqrt((result.grad_gamma**2).sum() + (result.grad_beta**2).sum())
            )
        r1 = None
        if can_track:
            calibrated = apply_head(head, text)
            metrics = evaluate(
                cosine_similarity(calibrated, image), text.labels, image.labels
            )
            r1 = metrics.r_at[1]
        history.records.append(
            RoundRecord(
                round=round_idx,
                loss=loss_sum / n_pairs,
                mean_d=d_sum / n_pairs,
                grad_norm=norm_sum / len(batches),
                r1=r1,
            )
        )
    return head, history
