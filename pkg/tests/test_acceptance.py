"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines alongside pytest's own verdicts. The experiment criteria (5-7) use
the simulator defaults (100 identities, 5 images and 2 texts per identity,
dim 64, moderate shift) averaged over seeds 0..4.
"""

import time

import numpy as np

import cmtta
from cmtta import (
    AdaptationConfig,
    SimilarityMatrix,
    SyntheticSpec,
    adapt,
    apply_head,
    cosine_similarity,
    disagreement,
    entropy_loss,
    evaluate,
    generate,
    label_pairs,
    model_scores,
    pair_probabilities,
    score_pairs,
    select_reliable,
    separation_auc,
    topk,
    uncertainty_weighted_loss,
)
from cmtta.cli import main
from cmtta.retrieval import I2T, T2I
from cmtta.uncertainty import LOGRATIO, MEANCONF, NORMDIFF

from conftest import (
    finite_difference_grads,
    max_relative_error,
    perturbed_head,
    random_loss_case,
)

E2 = float(np.e**2)


def report(num: int, description: str, ok: bool, detail: str = ""):
    print(f"\n[criterion {num:02d}] {'PASS' if ok else 'FAIL'} {description}  {detail}")
    assert ok, f"criterion {num}: {description} {detail}"


def external(scores):
    return SimilarityMatrix(np.asarray(scores, dtype=np.float32), provenance="external")


# --- brute-force oracles ----------------------------------------------------


def oracle_topk(scores, k):
    return np.array(
        [sorted(range(scores.shape[1]), key=lambda j: (-scores[q][j], j))[:k]
         for q in range(scores.shape[0])]
    )


def oracle_select(scores, k):
    sim = external(scores)
    t2i = topk(sim, k, T2I).indices
    i2t = topk(sim, k, I2T).indices
    reliable = []
    for q in range(scores.shape[0]):
        reachable = set()
        for g in t2i[q]:
            reachable.update(int(x) for x in i2t[g])
        if q in reachable:
            reliable.append(q)
    return np.array(reliable)


def oracle_metrics(scores, q_labels, g_labels):
    n, m = scores.shape
    r_hits = {1: 0, 5: 0, 10: 0}
    aps = []
    for q in range(n):
        ranked = sorted(range(m), key=lambda j: (-scores[q][j], j))
        rel = [g_labels[j] == q_labels[q] for j in ranked]
        for k in r_hits:
            if any(rel[: min(k, m)]):
                r_hits[k] += 1
        hits, precisions = 0, []
        for rank, is_rel in enumerate(rel, 1):
            if is_rel:
                hits += 1
                precisions.append(hits / rank)
        aps.append(sum(precisions) / len(precisions))
    return {k: v / n for k, v in r_hits.items()}, float(np.mean(aps))


def oracle_auc(d, tags):
    tp, fp = d[tags], d[~tags]
    wins = sum(1.0 if f > t else 0.5 if f == t else 0.0 for f in fp for t in tp)
    return wins / (len(tp) * len(fp))


def test_criterion_1_oracle_equivalence():
    rng = np.random.default_rng(20260809)
    start = time.time()
    for _ in range(100):
        n = int(rng.integers(1, 51))
        m = int(rng.integers(2, 81))
        k = int(rng.integers(1, min(n, m) + 1))
        scores = (rng.integers(0, 9, (n, m)) / 8.0).astype(np.float32)
        sim = external(scores)

        got_topk = topk(sim, k, T2I).indices
        np.testing.assert_array_equal(got_topk, oracle_topk(scores, k))

        got_rel = select_reliable(sim, k).reliable_queries
        np.testing.assert_array_equal(got_rel, oracle_select(scores, k))

        n_labels = int(rng.integers(1, min(m, 6)))
        g_labels = rng.integers(0, n_labels, m)
        g_labels[:n_labels] = np.arange(n_labels)
        q_labels = rng.integers(0, n_labels, n)
        got = evaluate(sim, q_labels, g_labels)
        r_expect, map_expect = oracle_metrics(scores, q_labels, g_labels)
        assert all(abs(got.r_at[c] - r_expect[c]) < 1e-12 for c in (1, 5, 10))
        assert abs(got.map_score - map_expect) < 1e-12

        d = rng.integers(0, 12, n) / 3.0
        tags = rng.uniform(0, 1, n) < 0.5
        if tags.any() and (~tags).any():
            assert abs(separation_auc(d, tags) - oracle_auc(d, tags)) < 1e-12
    elapsed = time.time() - start
    report(1, "top-k, selection, metrics, AUC match brute-force oracles on 100 instances",
           elapsed < 30.0, f"(elapsed {elapsed:.1f}s < 30s)")


def test_criterion_2_uncertainty_invariants():
    rng = np.random.default_rng(7)
    start = time.time()
    a = rng.uniform(0, 1, 10_000)
    b = rng.uniform(0, 1, 10_000)

    nd = disagreement(a, b, NORMDIFF)
    ok = bool((nd >= 1.0).all() and (nd <= E2 + 1e-12).all())

    for variant in (NORMDIFF, MEANCONF, LOGRATIO):
        fwd = disagreement(a, b, variant)
        rev = disagreement(b, a, variant)
        ok &= bool(np.allclose(fwd, rev, rtol=0, atol=1e-12))

    agree = np.abs(a - b) < 1e-9
    ok &= bool(np.allclose(nd[agree & ((a + b) / 2 >= 1e-8)], 1.0, atol=1e-7))
    ok &= bool((nd[~agree & ((a + b) / 2 >= 1e-8)] > 1.0).all())
    ok &= bool(np.allclose(disagreement(np.full(16, 0.77), np.full(16, 0.77), NORMDIFF), 1.0))
    # both-zero pairs read as the maximum, e^2
    ok &= abs(float(disagreement(0.0, 0.0, NORMDIFF)) - E2) < 1e-12

    mc = disagreement(a, b, MEANCONF)
    ok &= bool((mc >= 1.0).all() and (mc <= np.e + 1e-12).all())

    lr = disagreement(a, a, LOGRATIO)
    ok &= bool(np.allclose(lr, 0.0, atol=1e-12))

    elapsed = time.time() - start
    report(2, "disagreement ranges, symmetry, agreement minimum, degenerate cap on 1e4 pairs",
           ok and elapsed < 5.0, f"(elapsed {elapsed:.2f}s < 5s)")


def test_criterion_3_gradient_correctness():
    rng = np.random.default_rng(99)
    start = time.time()
    worst = 0.0
    for trial in range(20):
        dim = int(rng.integers(4, 17))
        tuple_size = int(rng.integers(2, 5))
        n_queries = int(rng.integers(1, 3))  # pairs = n_queries * tuple_size <= 8
        ctx, batch = random_loss_case(
            seed=trial, n_text=14, n_image=18, dim=dim, k=4,
            n_queries=n_queries, tuple_size=tuple_size,
        )
        config = AdaptationConfig(k=4)
        head = perturbed_head(trial + 1000, dim)

        weighted = uncertainty_weighted_loss(batch, ctx, head, config)
        fd = finite_difference_grads(batch, ctx, head, config, True, weighted.d, step=1e-4)
        worst = max(worst,
                    max_relative_error(weighted.grad_gamma, fd["gamma"]),
                    max_relative_error(weighted.grad_beta, fd["beta"]))

        plain = entropy_loss(batch, ctx, head, config)
        fd = finite_difference_grads(batch, ctx, head, config, False, None, step=1e-4)
        worst = max(worst,
                    max_relative_error(plain.grad_gamma, fd["gamma"]),
                    max_relative_error(plain.grad_beta, fd["beta"]))
    elapsed = time.time() - start
    report(3, "analytic gradients match central differences on 20 random instances",
           worst < 1e-4 and elapsed < 30.0,
           f"(max rel err {worst:.2e} < 1e-4, elapsed {elapsed:.1f}s < 30s)")


def test_criterion_4_reduction_identity():
    worst = 0.0
    for trial in range(10):
        ctx, batch = random_loss_case(seed=trial + 40)
        config = AdaptationConfig(k=4)
        head = perturbed_head(trial, ctx.text.shape[1])
        forced = uncertainty_weighted_loss(
            batch, ctx, head, config, frozen_weights=np.ones(batch.tuples.size)
        )
        plain = entropy_loss(batch, ctx, head, config)
        worst = max(worst, abs(forced.loss - plain.loss))
    report(4, "unit-weight objective equals the plain entropy objective",
           worst < 1e-12, f"(max |diff| {worst:.2e} < 1e-12)")


def _default_bench(seed):
    spec = SyntheticSpec(seed=seed)
    assert (spec.n_identities, spec.images_per_identity, spec.texts_per_identity,
            spec.dim) == (100, 5, 2, 64)
    assert abs(spec.shift.rotation_angle - np.pi / 6) < 1e-12
    assert spec.shift.n_planes == 8
    assert spec.shift.scale_jitter == 0.2
    assert spec.shift.bias_sigma == 0.05
    text, image = generate(spec)
    sim = model_scores(text, image, spec.score_scale)
    return text, image, sim


def test_criterion_5_tp_fp_uncertainty_separation():
    start = time.time()
    aucs, gaps = [], []
    for seed in range(5):
        text, image, sim = _default_bench(seed)
        rel = select_reliable(sim, 5)
        scored = score_pairs(pair_probabilities(sim, rel, 5))
        tags_all = label_pairs(topk(sim, 5, T2I), text.labels, image.labels)
        rank1_d = scored.d[::5]
        tags = tags_all[scored.query[::5]]
        aucs.append(separation_auc(rank1_d, tags))
        gaps.append(rank1_d[~tags].mean() - rank1_d[tags].mean())
    elapsed = time.time() - start
    mean_auc, mean_gap = float(np.mean(aucs)), float(np.mean(gaps))
    report(5, "FP rank-1 pairs carry higher disagreement than TP pairs",
           mean_gap > 0.0 and mean_auc >= 0.65 and elapsed < 60.0,
           f"(mean d gap {mean_gap:+.3f} > 0, AUC {mean_auc:.3f} >= 0.65, "
           f"elapsed {elapsed:.1f}s < 60s)")


def _adapted_r1(text, image, sim, config):
    head, _ = adapt(text, image, sim, config)
    calibrated = apply_head(head, text)
    after = evaluate(cosine_similarity(calibrated, image), text.labels, image.labels)
    return after.r_at[1]


def test_criterion_6_adaptation_improvement():
    start = time.time()
    before_l, uatta_l, tent_l = [], [], []
    for seed in range(5):
        text, image, sim = _default_bench(seed)
        before_l.append(evaluate(sim, text.labels, image.labels).r_at[1])
        uatta_l.append(_adapted_r1(text, image, sim, AdaptationConfig(seed=seed, rounds=50)))
        tent_l.append(
            _adapted_r1(text, image, sim, AdaptationConfig(seed=seed, rounds=50, method="tent"))
        )
    elapsed = time.time() - start
    delta = (np.mean(uatta_l) - np.mean(before_l)) * 100.0
    margin = (np.mean(uatta_l) - np.mean(tent_l)) * 100.0
    report(6, "adaptation improves mean R@1 by >= 2 points and beats the unweighted baseline",
           delta >= 2.0 and margin >= 0.0 and elapsed < 300.0,
           f"(delta {delta:+.2f} pts >= +2.0, vs baseline {margin:+.2f} pts >= 0, "
           f"elapsed {elapsed:.0f}s < 300s)")


def test_criterion_7_k_robustness():
    start = time.time()
    adapted = {}
    before_l = []
    for k in (3, 5, 8):
        vals = []
        for seed in range(5):
            text, image, sim = _default_bench(seed)
            if k == 3:
                before_l.append(evaluate(sim, text.labels, image.labels).r_at[1])
            vals.append(_adapted_r1(text, image, sim, AdaptationConfig(seed=seed, rounds=50, k=k)))
        adapted[k] = float(np.mean(vals))
    elapsed = time.time() - start
    before = float(np.mean(before_l))
    spread = (max(adapted.values()) - min(adapted.values())) * 100.0
    all_beat = all(v > before for v in adapted.values())
    report(7, "adapted R@1 is stable across K in {3, 5, 8} and always beats the baseline",
           spread <= 3.0 and all_beat and elapsed < 600.0,
           f"(spread {spread:.2f} pts <= 3.0, all beat {before:.3f}: "
           f"{ {k: round(v, 3) for k, v in adapted.items()} }, elapsed {elapsed:.0f}s < 600s)")


def test_criterion_8_pipeline_determinism(tmp_path):
    config = tmp_path / "cfg.yaml"
    config.write_text(
        "seed: 5\n"
        "simulator:\n  n_identities: 40\n  dim: 32\n"
        "adaptation:\n  rounds: 6\n",
        encoding="utf-8",
    )
    blobs = []
    for name in ("one", "two"):
        sim_dir = tmp_path / name / "sim"
        run_dir = tmp_path / name / "run"
        metrics = tmp_path / name / "metrics.json"
        assert main(["simulate", "--config", str(config), "--out", str(sim_dir)]) == 0
        assert main(["adapt", "--config", str(config),
                     "--text", str(sim_dir / "text.ueb1"),
                     "--image", str(sim_dir / "image.ueb1"),
                     "--out", str(run_dir)]) == 0
        assert main(["evaluate", "--text", str(sim_dir / "text.ueb1"),
                     "--image", str(sim_dir / "image.ueb1"),
                     "--out", str(metrics)]) == 0
        blobs.append({
            "head": (run_dir / "head.uch1").read_bytes(),
            "history": (run_dir / "history.csv").read_bytes(),
            "report": (run_dir / "report.json").read_bytes(),
            "metrics": metrics.read_bytes(),
        })
    ok = all(blobs[0][key] == blobs[1][key] for key in blobs[0])
    report(8, "two identical pipeline runs produce byte-identical artifacts", ok)


def test_criterion_9_identity_noop():
    text, image, sim = _default_bench(0)
    before = evaluate(sim, text.labels, image.labels)

    head, history = adapt(text, image, sim, AdaptationConfig(seed=0, rounds=0))
    ok = len(history) == 0
    ok &= bool((head.gamma == 1.0).all() and (head.beta == 0.0).all())
    calibrated = apply_head(head, text)
    after = evaluate(cosine_similarity(calibrated, image), text.labels, image.labels)
    after_scaled = evaluate(model_scores(calibrated, image, 30.0), text.labels, image.labels)
    ok &= after == before == after_scaled
    report(9, "zero rounds / identity head reproduce baseline metrics exactly", ok)
