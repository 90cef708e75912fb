"""Uncertainty statistics at desk scale: TP/FP histograms, separation AUC,
and before/after run reports.

The tagging convention follows the initial ranking list: each query
contributes its rank-1 pair, tagged TP when the pair's identity labels
match and FP otherwise. A useful uncertainty score concentrates TPs in its
low range and FPs in its high range; the AUC quantifies this as the
probability that a random FP pair scores above a random TP pair (ties at
half credit).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adaptation import AdaptationHistory
from .errors import DegenerateClasses, LengthMismatch
from .retrieval import RetrievalMetrics
from .uncertainty import (
    LOGRATIO,
    MEANCONF,
    MEANCONF_MAX,
    NORMDIFF,
    NORMDIFF_MAX,
    DEFAULT_EPSILON,
    UncertaintyScores,
)

DEFAULT_BINS = 20


def variant_range(variant: str, epsilon: float = DEFAULT_EPSILON) -> tuple[float, float]:
    """Full value range of a disagreement variant, used for bin edges."""
    if variant == NORMDIFF:
        return 1.0, NORMDIFF_MAX
    if variant == MEANCONF:
        return 1.0, MEANCONF_MAX
    if variant == LOGRATIO:
        return 0.0, float(np.log((1.0 + epsilon) / epsilon))
    raise ValueError(f"unknown uncertainty variant {variant!r}")


@dataclass
class HistogramTable:
    """Equal-width TP/FP counts over one variant's range."""

    bin_low: np.ndarray
    bin_high: np.ndarray
    tp: np.ndarray
    fp: np.ndarray

    def to_csv(self) -> str:
        lines = ["bin_low,bin_high,tp,fp"]
        for lo, hi, t, f in zip(self.bin_low, self.bin_high, self.tp, self.fp):
            lines.append(f"{lo!r},{hi!r},{t},{f}")
        return "\n".join(lines) + "\n"


def uncertainty_histogram(
    scores: UncertaintyScores, tags: np.ndarray, n_bins: int = DEFAULT_BINS
) -> HistogramTable:
    """Bin pair uncertainties into TP and FP counts over the variant range."""
    tags = np.asarray(tags, dtype=bool)
    if tags.shape[0] != len(scores):
        raise LengthMismatch(f"{len(scores)} scores vs {tags.shape[0]} tags")
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    lo, hi = variant_range(scores.variant)
    edges = np.linspace(lo, hi, n_bins + 1)
    tp, _ = np.histogram(scores.d[tags], bins=edges)
    fp, _ = np.histogram(scores.d[~tags], bins=edges)
    return HistogramTable(bin_low=edges[:-1], bin_high=edges[1:], tp=tp, fp=fp)


def separation_auc(d: np.ndarray, tags: np.ndarray) -> float:
    """AUC of the uncertainty score as a detector of FP pairs.

    Equivalent to the rank-sum statistic: ties between a TP and an FP score
    count half (the midpoint rule on the ROC curve).
    """
    d = np.asarray(d, dtype=np.float64)
    tags = np.asarray(tags, dtype=bool)
    if d.shape[0] != tags.shape[0]:
        raise LengthMismatch(f"{d.shape[0]} scores vs {tags.shape[0]} tags")
    n_tp = int(tags.sum())
    n_fp = int((~tags).sum())
    if n_tp == 0 or n_fp == 0:
        raise DegenerateClasses("separation AUC needs at least one TP and one FP")
    order = np.argsort(d, kind="stable")
    sorted_d = d[order]
    # Midpoint (average) ranks over tied groups, 1-based.
    ranks = np.empty(d.shape[0], dtype=np.float64)
    i = 0
    while i < sorted_d.shape[0]:
        j = i
        while j + 1 < sorted_d.shape[0] and sorted_d[j + 1] == sorted_d[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum_fp = float(ranks[~tags].sum())
    u = rank_sum_fp - n_fp * (n_fp + 1) / 2.0
    return u / (n_tp * n_fp)


def compare_report(
    before: RetrievalMetrics,
    after: RetrievalMetrics,
    history: AdaptationHistory | None = None,
) -> dict:
    """Before/after metric deltas plus the per-round adaptation curves."""
    def unpack(m: RetrievalMetrics) -> dict:
        return {"r1": m.r_at[1], "r5": m.r_at[5], "r10": m.r_at[10], "map": m.map_score}

    b, a = unpack(before), unpack(after)
    report = {
        "before": b,
        "after": a,
        "delta": {key: a[key] - b[key] for key in b},
        "n_queries": before.n_queries,
    }
    if history is not None:
        report["curves"] = {
            "loss": [rec.loss for rec in history.records],
            "mean_d": [rec.mean_d for rec in history.records],
            "grad_norm": [rec.grad_norm for rec in history.records],
            "r1": [rec.r1 for rec in history.records],
        }
    return report


def compare_report_curves_only(history: AdaptationHistory) -> dict:
    """Report for label-free runs: curves without before/after metrics."""
    return {
        "before": None,
        "after": None,
        "delta": None,
        "curves": {
            "loss": [rec.loss for rec in history.records],
            "mean_d": [rec.mean_d for rec in history.records],
            "grad_norm": [rec.grad_norm for rec in history.records],
            "r1": [rec.r1 for rec in history.records],
        },
    }


def write_report_json(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")


def histogram_svg(table: HistogramTable, title: str = "uncertainty by outcome") -> str:
    """A small two-series bar chart; presentation only."""
    width, height, pad = 640, 360, 40
    n = table.tp.shape[0]
    peak = max(1, int(table.tp.max()), int(table.fp.max()))
    slot = (width - 2 * pad) / n
    bar = slot * 0.4
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
        'stroke="black"/>',
    ]
    for i in range(n):
        x0 = pad + i * slot
        for off, count, color in ((0.0, int(table.tp[i]), "#4878cf"),
                                  (bar, int(table.fp[i]), "#d65f5f")):
            h = (height - 2 * pad) * count / peak
            parts.append(
                f'<rect x="{x0 + off:.2f}" y="{height - pad - h:.2f}" '
                f'width="{bar:.2f}" height="{h:.2f}" fill="{color}"/>'
            )
    parts.append(
        f'<text x="{pad}" y="{height - pad + 16}" font-family="sans-serif" '
        f'font-size="11">{table.bin_low[0]:.3f}</text>'
    )
    parts.append(
        f'<text x="{width - pad}" y="{height - pad + 16}" text-anchor="end" '
        f'font-family="sans-serif" font-size="11">{table.bin_high[-1]:.3f}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
