"""Command-line entry point wiring the whole pipeline.

Subcommands: simulate, adapt, evaluate, select, diagnose, report. All
commands read one YAML config (every flag overrides the file) and are
idempotent for fixed inputs and seed. Exit codes: 0 success, 1 usage or
config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import adaptation as ad
from . import diagnostics as dg
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, ExternalScoresCannotAdapt, NumericalError
from .io import (
    EmbeddingSet,
    SimilarityMatrix,
    l2_normalize,
    load_embeddings,
    load_scores,
    save_embeddings,
    save_head,
)
from .retrieval import (
    T2I,
    cosine_similarity,
    evaluate,
    metrics_from_json,
    model_scores,
    topk,
    write_metrics_json,
)
from .selection import select_reliable, write_selection_json
from .simulate import generate, label_pairs, write_sidecar
from .uncertainty import (
    UncertaintyScores,
    pair_probabilities,
    score_pairs,
    write_uncertainty_csv,
)

BASELINES = ("uatta", "tent", "none")
VARIANT_CHOICES = ("normdiff", "meanconf", "logratio")


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage errors; the contract wants 1.
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cmtta", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, help="root seed (overrides config)")

    p = sub.add_parser("simulate", help="generate a synthetic text/image benchmark")
    common(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("adapt", help="run selection, adaptation, and evaluation")
    common(p)
    p.add_argument("--text", help="UEB1 text embeddings")
    p.add_argument("--image", help="UEB1 image embeddings")
    p.add_argument("--scores", help="USM1 externally computed score matrix")
    p.add_argument("--k", type=int, help="mutual top-k width")
    p.add_argument("--rounds", type=int, help="adaptation rounds")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--variant", choices=VARIANT_CHOICES)
    p.add_argument("--baseline", choices=BASELINES, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="retrieval metrics of an embedding pair")
    common(p)
    p.add_argument("--text", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--scores")
    p.add_argument("--out", help="write metrics JSON here instead of stdout")

    p = sub.add_parser("select", help="cycle-consistency selection diagnostics")
    common(p)
    p.add_argument("--text")
    p.add_argument("--image")
    p.add_argument("--scores")
    p.add_argument("--k", type=int)
    p.add_argument("--out", help="write selection JSON here instead of stdout")

    p = sub.add_parser("diagnose", help="TP/FP uncertainty histogram and AUC")
    common(p)
    p.add_argument("--text", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--scores")
    p.add_argument("--k", type=int)
    p.add_argument("--variant", choices=VARIANT_CHOICES)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="combine saved metrics and history into a report")
    p.add_argument("--before", required=True, help="metrics JSON before adaptation")
    p.add_argument("--after", required=True, help="metrics JSON after adaptation")
    p.add_argument("--history", help="history CSV")
    p.add_argument("--out", required=True)
    return parser


def _load_run_config(args) -> RunConfig:
    config = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
        config.adaptation.seed = args.seed
        config.simulator.seed = args.seed
    for flag, attr in (
        ("k", "k"),
        ("rounds", "rounds"),
        ("lr", "learning_rate"),
        ("variant", "uncertainty_variant"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config.adaptation, attr, value)
    baseline = getattr(args, "baseline", None)
    if baseline is not None and baseline != "none":
        config.adaptation.method = baseline
    config.adaptation.validate()
    return config


def _load_inputs(args) -> tuple[EmbeddingSet | None, EmbeddingSet | None, SimilarityMatrix | None]:
    text = load_embeddings(args.text) if getattr(args, "text", None) else None
    image = load_embeddings(args.image) if getattr(args, "image", None) else None
    if (text is None) != (image is None):
        raise ConfigError("--text and --image must be given together")
    if text is not None:
        if not text.normalized:
            text = l2_normalize(text)
        if not image.normalized:
            image = l2_normalize(image)
    scores = load_scores(args.scores) if getattr(args, "scores", None) else None
    if text is None and scores is None:
        raise ConfigError("need either --text/--image or --scores")
    return text, image, scores


def _similarity(text, image, scores, scale: float = 1.0) -> SimilarityMatrix:
    if scores is not None:
        if text is not None and (scores.n_text != text.count or scores.n_image != image.count):
            raise DataError(
                f"score matrix {scores.n_text}x{scores.n_image} does not match "
                f"embedding counts {text.count}x{image.count}"
            )
        return scores
    return model_scores(text, image, scale)


def _rank1_scores(scored: UncertaintyScores, k: int) -> UncertaintyScores:
    """Each query's block starts with its rank-1 pair; keep those rows."""
    return UncertaintyScores(
        query=scored.query[::k],
        candidate=scored.candidate[::k],
        p_t2i=scored.p_t2i[::k],
        p_i2t=scored.p_i2t[::k],
        d=scored.d[::k],
        variant=scored.variant,
    )


def cmd_simulate(args) -> int:
    config = _load_run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text, image = generate(config.simulator)
    save_embeddings(text, out / "text.ueb1")
    save_embeddings(image, out / "image.ueb1")
    write_sidecar(config.simulator, out / "simspec.json")
    print(f"wrote {text.count} texts and {image.count} images to {out}")
    return 0


def cmd_adapt(args) -> int:
    config = _load_run_config(args)
    acfg = config.adaptation
    text, image, scores = _load_inputs(args)
    skip_adaptation = args.baseline == "none" or acfg.rounds == 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if text is None and not skip_adaptation:
        raise ExternalScoresCannotAdapt(
            "adaptation needs embeddings; a score matrix alone can only be "
            "selected and diagnosed (pass --baseline none or --rounds 0)"
        )

    sim = _similarity(text, image, scores, acfg.score_scale)
    reliable = select_reliable(sim, acfg.k)
    write_selection_json(reliable, out / "selection.json")
    scored = score_pairs(
        pair_probabilities(sim, reliable, acfg.k), acfg.uncertainty_variant, acfg.epsilon
    )
    text_ids = text.ids if text is not None else None
    image_ids = image.ids if image is not None else None
    write_uncertainty_csv(scored, out / "uncertainty.csv", text_ids, image_ids)

    if text is None:
        print(f"score-only input: wrote selection and uncertainty for k={acfg.k}")
        return 0

    has_labels = text.labels is not None and image.labels is not None
    before = evaluate(sim, text.labels, image.labels) if has_labels else None

    if skip_adaptation:
        head = ad.CalibrationHead.identity(text.dim)
        history = ad.AdaptationHistory()
    else:
        head, history = ad.adapt(text, image, sim, acfg)
    save_head(head.gamma, head.beta, out / "head.uch1")
    ad.write_history_csv(history, out / "history.csv")

    if has_labels:
        calibrated = ad.apply_head(head, text)
        after = evaluate(cosine_similarity(calibrated, image), text.labels, image.labels)
        report = dg.compare_report(before, after, history)
        print(
            f"R@1 {before.r_at[1]:.4f} -> {after.r_at[1]:.4f} "
            f"({(after.r_at[1] - before.r_at[1]) * 100:+.2f} points)"
        )
    else:
        report = dg.compare_report_curves_only(history)
        print("adapted without labels; no metrics computed")
    dg.write_report_json(report, out / "report.json")
    return 0


def cmd_evaluate(args) -> int:
    config = _load_run_config(args)
    text, image, scores = _load_inputs(args)
    sim = _similarity(text, image, scores, config.adaptation.score_scale)
    metrics = evaluate(sim, text.labels, image.labels)
    if args.out:
        write_metrics_json(metrics, args.out)
    else:
        print(metrics.to_json())
    return 0


def cmd_select(args) -> int:
    config = _load_run_config(args)
    text, image, scores = _load_inputs(args)
    sim = _similarity(text, image, scores, config.adaptation.score_scale)
    reliable = select_reliable(sim, config.adaptation.k)
    if args.out:
        write_selection_json(reliable, args.out)
    else:
        print(reliable.to_json())
    return 0


def cmd_diagnose(args) -> int:
    config = _load_run_config(args)
    acfg = config.adaptation
    text, image, scores = _load_inputs(args)
    sim = _similarity(text, image, scores, acfg.score_scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    reliable = select_reliable(sim, acfg.k)
    scored = score_pairs(
        pair_probabilities(sim, reliable, acfg.k), acfg.uncertainty_variant, acfg.epsilon
    )
    write_uncertainty_csv(scored, out / "uncertainty.csv", text.ids, image.ids)

    tags_all = label_pairs(topk(sim, acfg.k, T2I), text.labels, image.labels)
    rank1 = _rank1_scores(scored, acfg.k)
    tags = tags_all[rank1.query]
    table = dg.uncertainty_histogram(rank1, tags)
    (out / "histogram.csv").write_text(table.to_csv(), encoding="utf-8")
    (out / "histogram.svg").write_text(dg.histogram_svg(table), encoding="utf-8")
    auc = dg.separation_auc(rank1.d, tags)
    (out / "auc.json").write_text(
        f'{{"auc": {auc:.4f}, "n_tp": {int(tags.sum())}, "n_fp": {int((~tags).sum())}}}\n',
        encoding="utf-8",
    )
    print(f"separation AUC {auc:.4f} over {tags.shape[0]} rank-1 pairs")
    return 0


def cmd_report(args) -> int:
    before = metrics_from_json(args.before)
    after = metrics_from_json(args.after)
    history = ad.read_history_csv(args.history) if args.history else None
    dg.write_report_json(dg.compare_report(before, after, history), args.out)
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "adapt": cmd_adapt,
    "evaluate": cmd_evaluate,
    "select": cmd_select,
    "diagnose": cmd_diagnose,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
