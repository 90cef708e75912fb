"""Uncertainty-aware test-time adaptation for cross-modal retrieval.

A numpy library for adapting cross-modal (text/image) retrieval at test
time without labels: queries that survive a mutual top-k cycle-consistency
check anchor an entropy-minimization objective whose per-pair terms are
down-weighted by the disagreement between the pair's forward and reverse
retrieval probabilities. Only a per-dimension affine calibration head on
the text side is optimized. A synthetic domain-shift simulator, retrieval
metrics, and TP/FP uncertainty diagnostics round out the pipeline; the
``cmtta`` CLI wires everything together.
"""

from .adaptation import (
    AdamW,
    AdaptationConfig,
    AdaptationHistory,
    CalibrationHead,
    adapt,
    apply_head,
    batch_loss,
    build_batches,
    entropy_loss,
    freeze_structures,
    read_history_csv,
    uncertainty_weighted_loss,
    write_history_csv,
)
from .diagnostics import (
    compare_report,
    histogram_svg,
    separation_auc,
    uncertainty_histogram,
    variant_range,
)
from .io import (
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
from .retrieval import (
    RetrievalMetrics,
    TopKIndex,
    cosine_similarity,
    evaluate,
    model_scores,
    topk,
)
from .seeding import derive_seed, rng_for
from .selection import ReliableSet, select_reliable
from .simulate import ShiftSpec, SyntheticSpec, generate, label_pairs
from .uncertainty import (
    PairProbabilities,
    UncertaintyScores,
    disagreement,
    pair_probabilities,
    score_pairs,
)

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "AdaptationConfig",
    "AdaptationHistory",
    "CalibrationHead",
    "EmbeddingSet",
    "PairProbabilities",
    "ReliableSet",
    "RetrievalMetrics",
    "ShiftSpec",
    "SimilarityMatrix",
    "SyntheticSpec",
    "TopKIndex",
    "UncertaintyScores",
    "adapt",
    "apply_head",
    "batch_loss",
    "build_batches",
    "compare_report",
    "cosine_similarity",
    "derive_seed",
    "disagreement",
    "entropy_loss",
    "evaluate",
    "freeze_structures",
    "generate",
    "histogram_svg",
    "l2_normalize",
    "label_pairs",
    "load_embeddings",
    "load_head",
    "load_scores",
    "model_scores",
    "pair_probabilities",
    "read_history_csv",
    "rng_for",
    "save_embeddings",
    "save_head",
    "save_scores",
    "score_pairs",
    "select_reliable",
    "separation_auc",
    "topk",
    "uncertainty_histogram",
    "uncertainty_weighted_loss",
    "variant_range",
    "write_history_csv",
]
