import numpy as np
import pytest

from cmtta import EmbeddingSet, cosine_similarity, l2_normalize
from cmtta.adaptation import Batch, CalibrationHead, batch_loss, freeze_structures


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_embeddings(rng, modality, count, dim, labels=None, normalized=True):
    data = rng.standard_normal((count, dim)).astype(np.float32)
    ids = [f"{modality}-{i}" for i in range(count)]
    emb = EmbeddingSet(modality=modality, data=data, ids=ids, labels=labels)
    return l2_normalize(emb) if normalized else emb


def random_loss_case(seed, n_text=12, n_image=15, dim=8, k=4, n_queries=3, tuple_size=3):
    """A random frozen context plus one batch, for gradient checks."""
    r = np.random.default_rng(seed)
    text = random_embeddings(r, "text", n_text, dim)
    image = random_embeddings(r, "image", n_image, dim)
    sim = cosine_similarity(text, image)
    ctx = freeze_structures(text, image, sim, k)
    queries = r.choice(n_text, n_queries, replace=False)
    tuples = np.stack([r.choice(n_image, tuple_size, replace=False) for _ in range(n_queries)])
    return ctx, Batch(queries=queries, tuples=tuples)


def perturbed_head(seed, dim):
    r = np.random.default_rng(seed)
    return CalibrationHead(
        gamma=1.0 + 0.1 * r.standard_normal(dim),
        beta=0.05 * r.standard_normal(dim),
    )


def finite_difference_grads(batch, ctx, head, config, weighted, frozen_weights, step=1e-4):
    """Central differences of the batch loss at fixed (frozen) weights."""
    grads = {}
    for name in ("gamma", "beta"):
        base = getattr(head, name)
        out = np.zeros_like(base)
        for idx in range(base.shape[0]):
            vals = []
            for sign in (+1.0, -1.0):
                probe = CalibrationHead(gamma=head.gamma.copy(), beta=head.beta.copy())
                getattr(probe, name)[idx] += sign * step
                vals.append(
                    batch_loss(
                        batch, ctx, probe, config,
                        weighted=weighted, frozen_weights=frozen_weights,
                    ).loss
                )
            out[idx] = (vals[0] - vals[1]) / (2.0 * step)
        grads[name] = out
    return grads


def max_relative_error(analytic, numeric):
    """Max |a - f| over the gradient's own scale."""
    diff = np.max(np.abs(analytic - numeric))
    scale = max(np.max(np.abs(numeric)), 1e-12)
    return diff / scale
