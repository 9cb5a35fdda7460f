"""Evaluation metric tests against brute-force oracles: Mann-Whitney for
AUC, a full ranked list for average precision, and an exhaustive threshold
sweep for the EER operating point.
"""

import numpy as np
import pytest

import wavesig.model
from wavesig.dataset import EvalPair, SignatureImage, synthesize_dataset
from wavesig.evaluation import (
    CurveReport,
    ScoredPair,
    evaluate,
    fmr_fnmr_eer,
    histogram,
    pr_aupr,
    roc_auc,
    score_pairs,
    verify,
    write_report_files,
)
from wavesig.model import ModelConfig, init_model
from wavesig.scattering import ScatteringConfig, build_filter_bank


# -- oracles --


def mann_whitney_auc(genuine, forged):
    wins = 0.0
    for g in genuine:
        for f in forged:
            if g < f:
                wins += 1.0
            elif g == f:
                wins += 0.5
    return wins / (len(genuine) * len(forged))


def ranked_list_ap(genuine, forged):
    """AP from the fully ranked pair list (ascending score, ties grouped)."""
    items = sorted([(s, True) for s in genuine] + [(s, False) for s in forged])
    total_pos = len(genuine)
    ap = 0.0
    seen = tp = 0
    prev_recall = 0.0
    i = 0
    while i < len(items):
        j = i
        while j < len(items) and items[j][0] == items[i][0]:
            j += 1
        seen += j - i
        tp += sum(1 for k in range(i, j) if items[k][1])
        recall = tp / total_pos
        if recall > prev_recall:
            ap += (recall - prev_recall) * (tp / seen)
            prev_recall = recall
        i = j
    return ap


def exhaustive_eer(genuine, forged):
    """Every candidate threshold (one per inter-score gap, plus brackets)
    evaluated straight from the definitions; first minimum of |FMR - FNMR|
    kept, i.e. ties break to smaller t."""
    genuine = np.asarray(genuine)
    forged = np.asarray(forged)
    distinct = np.unique(np.concatenate([genuine, forged]))
    cands = (
        [distinct[0] - 1.0]
        + [(distinct[i] + distinct[i + 1]) / 2.0 for i in range(len(distinct) - 1)]
        + [distinct[-1] + 1.0]
    )
    best_gap, best_eer, best_t = None, None, None
    for t in cands:
        fmr = sum(1 for s in forged if s <= t) / len(forged)
        fnmr = sum(1 for s in genuine if s > t) / len(genuine)
        gap = abs(fmr - fnmr)
        if best_gap is None or gap < best_gap:
            best_gap, best_eer, best_t = gap, (fmr + fnmr) / 2.0, t
    return float(best_eer), float(best_t)


def make_scored(genuine_scores, forged_scores):
    scored = []
    for i, s in enumerate(genuine_scores):
        a = SignatureImage("w", "genuine", f"mem://g{i}a")
        b = SignatureImage("w", "genuine", f"mem://g{i}b")
        scored.append(ScoredPair(EvalPair(a, b, "genuine-pair"), float(s)))
    for i, s in enumerate(forged_scores):
        a = SignatureImage("w", "genuine", f"mem://f{i}a")
        b = SignatureImage("w", "forged", f"mem://f{i}b")
        scored.append(ScoredPair(EvalPair(a, b, "forgery-pair"), float(s)))
    return scored


def random_score_sets(n_sets, max_pairs, seed, duplicates=True):
    rng = np.random.default_rng(seed)
    for _ in range(n_sets):
        ng = int(rng.integers(1, max_pairs // 2))
        nf = int(rng.integers(1, max_pairs // 2))
        if duplicates and rng.random() < 0.5:
            # quantized scores force ties across and within classes
            g = rng.integers(0, 12, size=ng) / 12.0
            f = rng.integers(0, 12, size=nf) / 12.0
        else:
            g = rng.random(ng)
            f = rng.random(nf)
        yield g, f


class TestRocAuc:
    def test_perfect_separation(self):
        _, auc = roc_auc(make_scored([0.1, 0.2], [0.8, 0.9]))
        assert auc == 1.0

    def test_all_identical_scores(self):
        _, auc = roc_auc(make_scored([0.5, 0.5], [0.5, 0.5, 0.5]))
        assert auc == pytest.approx(0.5, abs=1e-15)

    def test_six_hand_listed_pairs(self):
        genuine = [0.10, 0.30, 0.55]
        forged = [0.30, 0.60, 0.90]
        _, auc = roc_auc(make_scored(genuine, forged))
        assert auc == pytest.approx(mann_whitney_auc(genuine, forged), abs=1e-12)
        # 9 comparisons: one loss (0.55 vs 0.30), one tie (0.30 vs 0.30)
        assert auc == pytest.approx(7.5 / 9, abs=1e-12)

    def test_matches_mann_whitney_on_random_sets(self):
        for g, f in random_score_sets(40, 120, seed=5):
            _, auc = roc_auc(make_scored(g, f))
            assert auc == pytest.approx(mann_whitney_auc(g, f), abs=1e-12)

    def test_label_swap_duality(self):
        for g, f in random_score_sets(10, 60, seed=8):
            _, auc = roc_auc(make_scored(g, f))
            _, swapped = roc_auc(make_scored(f, g))
            assert swapped == pytest.approx(1.0 - auc, abs=1e-12)

    def test_curve_monotone(self):
        for g, f in random_score_sets(10, 80, seed=11):
            points, _ = roc_auc(make_scored(g, f))
            fprs = [p[1] for p in points]
            tprs = [p[2] for p in points]
            assert all(a <= b + 1e-15 for a, b in zip(fprs, fprs[1:]))
            assert all(a <= b + 1e-15 for a, b in zip(tprs, tprs[1:]))

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="each class"):
            roc_auc(make_scored([0.5], []))

    def test_order_invariance(self):
        g, f = [0.1, 0.4, 0.2], [0.3, 0.8]
        a = roc_auc(make_scored(g, f))
        scored = make_scored(g, f)
        scored.reverse()
        b = roc_auc(scored)
        assert a == b


class TestPrAupr:
    def test_perfect_separation(self):
        _, aupr = pr_aupr(make_scored([0.1, 0.2], [0.8, 0.9]))
        assert aupr == 1.0

    def test_single_positive_ranked_last(self):
        n = 8
        _, aupr = pr_aupr(make_scored([0.9], list(np.linspace(0.1, 0.8, n - 1))))
        assert aupr == pytest.approx(1.0 / n, abs=1e-12)

    def test_matches_ranked_list_oracle(self):
        for g, f in random_score_sets(40, 60, seed=13):
            _, aupr = pr_aupr(make_scored(g, f))
            assert aupr == pytest.approx(ranked_list_ap(g, f), abs=1e-12)

    def test_requires_positives(self):
        with pytest.raises(ValueError, match="genuine"):
            pr_aupr(make_scored([], [0.5]))


class TestFmrFnmrEer:
    def test_perfect_separation(self):
        curve, eer, t = fmr_fnmr_eer(make_scored([0.1, 0.2], [0.8, 0.9]))
        assert eer == 0.0
        assert 0.2 < t < 0.8
        assert t == 0.5  # midpoint of the optimal gap

    def test_identical_multisets(self):
        scores = [0.2, 0.5, 0.9]
        _, eer, _ = fmr_fnmr_eer(make_scored(scores, scores))
        assert eer == pytest.approx(0.5, abs=1e-12)

    def test_matches_exhaustive_oracle_exactly(self):
        for g, f in random_score_sets(60, 80, seed=17):
            _, eer, t = fmr_fnmr_eer(make_scored(g, f))
            oracle_eer, oracle_t = exhaustive_eer(g, f)
            assert eer == oracle_eer
            assert t == oracle_t

    def test_monotone_rates(self):
        for g, f in random_score_sets(10, 80, seed=19):
            curve, _, _ = fmr_fnmr_eer(make_scored(g, f))
            fmrs = [p[1] for p in curve]
            fnmrs = [p[2] for p in curve]
            # thresholds ascend: FMR must rise, FNMR must fall
            assert all(a <= b + 1e-15 for a, b in zip(fmrs, fmrs[1:]))
            assert all(a >= b - 1e-15 for a, b in zip(fnmrs, fnmrs[1:]))

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            fmr_fnmr_eer(make_scored([], [0.5]))


class TestHistogram:
    def test_single_score_bin_placement(self):
        hg, hf = histogram(make_scored([0.5], []), bins=10)
        assert hg[5][2] == 1  # bin [0.5, 0.6)
        assert hg[5][3] == pytest.approx(10.0)
        assert sum(row[2] for row in hg) == 1

    def test_empty_class_all_zero(self):
        hg, hf = histogram(make_scored([0.3], []), bins=4)
        assert all(row[2] == 0 and row[3] == 0.0 for row in hf)

    def test_counts_and_density_integral(self):
        rng = np.random.default_rng(23)
        g = rng.random(100)
        f = rng.random(57)
        hg, hf = histogram(make_scored(g, f), bins=50)
        assert sum(r[2] for r in hg) == 100
        assert sum(r[2] for r in hf) == 57
        width = 1.0 / 50
        assert sum(r[3] * width for r in hg) == pytest.approx(1.0, abs=1e-9)
        assert sum(r[3] * width for r in hf) == pytest.approx(1.0, abs=1e-9)

    def test_bins_validated(self):
        with pytest.raises(ValueError):
            histogram(make_scored([0.5], [0.5]), bins=0)


SMALL = ModelConfig(scattering=ScatteringConfig(J=2, L=4, input_height=64, input_width=64))


@pytest.fixture(scope="module")
def pipeline():
    cat = synthesize_dataset(writers=2, genuine_per_writer=3, forged_per_writer=2, seed=3)
    cfg = ModelConfig()
    bank = build_filter_bank(cfg.scattering)
    weights = init_model(cfg, seed=1)
    return cat, weights, bank


class TestScorePairs:
    def test_same_physical_image_scores_zero(self, pipeline):
        cat, weights, bank = pipeline
        img = cat.writers["w000"].genuine[0]
        twin = SignatureImage("w000", "genuine", img.source_path, img.pixels)
        pair = EvalPair(img, twin, "genuine-pair")
        scored = score_pairs([pair], weights, bank)
        assert scored[0].score == 0.0

    def test_embeds_each_unique_image_once(self, pipeline, monkeypatch):
        cat, weights, bank = pipeline
        entry = cat.writers["w000"]
        pairs = [
            EvalPair(entry.genuine[0], entry.genuine[1], "genuine-pair"),
            EvalPair(entry.genuine[0], entry.genuine[2], "genuine-pair"),
            EvalPair(entry.genuine[1], entry.genuine[2], "genuine-pair"),
            EvalPair(entry.genuine[0], entry.forged[0], "forgery-pair"),
        ]
        calls = []
        real = wavesig.model.embed

        def counting(image, w, b, source_id=None):
            calls.append(source_id)
            return real(image, w, b, source_id=source_id)

        monkeypatch.setattr(wavesig.model, "embed", counting)
        scored = score_pairs(pairs, weights, bank)
        assert len(calls) == 4  # 4 unique images across 8 pair slots
        assert len(scored) == 4

    def test_cache_matches_uncached(self, pipeline):
        cat, weights, bank = pipeline
        entry = cat.writers["w001"]
        pairs = [
            EvalPair(entry.genuine[0], entry.genuine[1], "genuine-pair"),
            EvalPair(entry.genuine[0], entry.forged[1], "forgery-pair"),
        ]
        a = [s.score for s in score_pairs(pairs, weights, bank, cache=True)]
        b = [s.score for s in score_pairs(pairs, weights, bank, cache=False)]
        assert a == b

    def test_order_preserved(self, pipeline):
        cat, weights, bank = pipeline
        entry = cat.writers["w000"]
        pairs = [
            EvalPair(entry.genuine[0], entry.forged[0], "forgery-pair"),
            EvalPair(entry.genuine[0], entry.genuine[1], "genuine-pair"),
        ]
        scored = score_pairs(pairs, weights, bank)
        assert [s.pair.label for s in scored] == ["forgery-pair", "genuine-pair"]


class TestVerify:
    def test_same_file_is_genuine(self, pipeline, tmp_path):
        cat, weights, bank = pipeline
        from PIL import Image as PILImage

        arr = np.round(cat.writers["w000"].genuine[0].pixels * 255).astype(np.uint8)
        p = tmp_path / "sig.png"
        PILImage.fromarray(arr, mode="L").save(p)
        decision, score = verify(p, p, weights, bank, threshold=0.4)
        assert decision == "genuine"
        assert score == 0.0

    def test_zero_threshold_rejects_distinct(self, pipeline, tmp_path):
        cat, weights, bank = pipeline
        from PIL import Image as PILImage

        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        PILImage.fromarray(
            np.round(cat.writers["w000"].genuine[0].pixels * 255).astype(np.uint8), mode="L"
        ).save(p1)
        PILImage.fromarray(
            np.round(cat.writers["w001"].genuine[0].pixels * 255).astype(np.uint8), mode="L"
        ).save(p2)
        decision, score = verify(p1, p2, weights, bank, threshold=0.0)
        assert score > 0.0
        assert decision == "forged"

    def test_decision_flips_at_threshold(self, pipeline, tmp_path):
        cat, weights, bank = pipeline
        from PIL import Image as PILImage

        p1, p2 = tmp_path / "x.png", tmp_path / "y.png"
        PILImage.fromarray(
            np.round(cat.writers["w000"].genuine[0].pixels * 255).astype(np.uint8), mode="L"
        ).save(p1)
        PILImage.fromarray(
            np.round(cat.writers["w000"].forged[0].pixels * 255).astype(np.uint8), mode="L"
        ).save(p2)
        _, score = verify(p1, p2, weights, bank, threshold=0.5)
        just_below = np.nextafter(score, 0.0)
        assert verify(p1, p2, weights, bank, threshold=score)[0] == "genuine"
        assert verify(p1, p2, weights, bank, threshold=just_below)[0] == "forged"

    def test_threshold_range_checked(self, pipeline, tmp_path):
        _, weights, bank = pipeline
        with pytest.raises(ValueError, match="threshold"):
            verify(tmp_path / "a.png", tmp_path / "b.png", weights, bank, threshold=1.5)


class TestReportFiles:
    def test_full_report_and_files(self, tmp_path):
        rng = np.random.default_rng(31)
        scored = make_scored(rng.random(40) * 0.5, rng.random(40) * 0.5 + 0.4)
        report = evaluate(scored)
        assert isinstance(report, CurveReport)
        assert 0.0 <= report.auc <= 1.0
        assert 0.0 <= report.aupr <= 1.0
        assert 0.0 <= report.eer <= 1.0
        created = write_report_files(report, tmp_path)
        names = {p.name for p in created}
        assert names == {
            "roc.csv",
            "pr.csv",
            "det.csv",
            "hist_genuine.csv",
            "hist_forged.csv",
            "summary.json",
        }
        import json

        summary = json.loads((tmp_path / "summary.json").read_text())
        assert set(summary) == {
            "auc",
            "aupr",
            "eer",
            "eer_threshold",
            "n_genuine_pairs",
            "n_forgery_pairs",
        }
        header = (tmp_path / "roc.csv").read_text().splitlines()[0]
        assert header == "threshold,fpr,tpr"
