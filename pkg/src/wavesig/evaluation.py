"""Pair scoring and biometric verification metrics.

Scores are normalized embedding distances in [0, 1] where lower means
more similar, and genuine pairs are the positive class: "test positive"
at threshold t means score <= t. The threshold sweep always uses the
distinct observed scores plus midpoints, so every curve and the EER are
exact for finite data rather than grid approximations.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as _model
from .dataset import EvalPair, load_image
from .model import Embedding, ModelWeights, distance
from .scattering import FilterBank

__all__ = [
    "ScoredPair",
    "CurveReport",
    "score_pairs",
    "roc_auc",
    "pr_aupr",
    "fmr_fnmr_eer",
    "histogram",
    "verify",
    "evaluate",
    "write_report_files",
]

GENUINE_PAIR = "genuine-pair"
FORGERY_PAIR = "forgery-pair"


@dataclass(frozen=True)
class ScoredPair:
    pair: EvalPair
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be finite and within [0, 1], got {self.score}")


@dataclass
class CurveReport:
    """Every curve the evaluation emits, plus scalar summaries."""

    roc: list[tuple[float, float, float]]  # threshold, fpr, tpr
    auc: float
    pr: list[tuple[float, float, float]]  # threshold, recall, precision
    aupr: float
    fmr_fnmr: list[tuple[float, float, float]]  # threshold, fmr, fnmr
    eer: float
    eer_threshold: float
    hist_genuine: list[tuple[float, float, int, float]]  # bin_lo, bin_hi, count, density
    hist_forged: list[tuple[float, float, int, float]]
    n_genuine_pairs: int
    n_forgery_pairs: int

    def summary(self) -> dict:
        return {
            "auc": self.auc,
            "aupr": self.aupr,
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "n_genuine_pairs": self.n_genuine_pairs,
            "n_forgery_pairs": self.n_forgery_pairs,
        }


def score_pairs(
    pairs: list[EvalPair],
    weights: ModelWeights,
    bank: FilterBank,
    cache: bool = True,
) -> list[ScoredPair]:
    """Normalized distance per pair; each unique image is embedded once."""
    embeddings: dict[int, Embedding] = {}

    def embedding_of(img) -> Embedding:
        key = id(img)
        if not cache:
            return _model.embed(img.pixels, weights, bank, source_id=img.source_path)
        if key not in embeddings:
            embeddings[key] = _model.embed(img.pixels, weights, bank, source_id=img.source_path)
        return embeddings[key]

    scored: list[ScoredPair] = []
    for pair in pairs:
        try:
            a = embedding_of(pair.first)
            b = embedding_of(pair.second)
        except Exception as exc:
            raise type(exc)(
                f"failed embedding pair ({pair.first.source_path!r}, "
                f"{pair.second.source_path!r}): {exc}"
            ) from exc
        scored.append(ScoredPair(pair=pair, score=distance(a, b)))
    return scored


def _split_scores(scored: list[ScoredPair]) -> tuple[np.ndarray, np.ndarray]:
    genuine = np.array([s.score for s in scored if s.pair.label == GENUINE_PAIR])
    forged = np.array([s.score for s in scored if s.pair.label == FORGERY_PAIR])
    return genuine, forged


def _sweep_thresholds(scores: np.ndarray) -> np.ndarray:
    """Distinct scores plus midpoints, bracketed below/above all data."""
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    lo = distinct[0] - 1.0
    hi = distinct[-1] + 1.0
    return np.unique(np.concatenate([[lo], distinct, mids, [hi]]))


def roc_auc(scored: list[ScoredPair]) -> tuple[list[tuple[float, float, float]], float]:
    """ROC points (threshold, FPR, TPR) and trapezoidal AUC.

    Tied scores collapse into a single step, which makes the AUC equal the
    Mann-Whitney statistic with half-credit for ties.
    """
    genuine, forged = _split_scores(scored)
    if genuine.size == 0 or forged.size == 0:
        raise ValueError("roc_auc requires at least one pair of each class")
    thresholds = _sweep_thresholds(np.concatenate([genuine, forged]))
    tpr = np.array([(genuine <= t).mean() for t in thresholds])
    fpr = np.array([(forged <= t).mean() for t in thresholds])
    order = np.argsort(fpr, kind="stable")
    auc = float(np.trapezoid(tpr[order], fpr[order]))
    points = [(float(t), float(f), float(p)) for t, f, p in zip(thresholds, fpr, tpr)]
    return points, auc


def pr_aupr(scored: list[ScoredPair]) -> tuple[list[tuple[float, float, float]], float]:
    """Precision/recall over the same sweep; AUPR is step-interpolated
    average precision, sum over (recall gain) * precision."""
    genuine, forged = _split_scores(scored)
    if genuine.size == 0:
        raise ValueError("pr_aupr requires at least one genuine pair")
    thresholds = _sweep_thresholds(np.concatenate([genuine, forged]))
    points = []
    ap = 0.0
    prev_recall = 0.0
    for t in thresholds:
        tp = float((genuine <= t).sum())
        fp = float((forged <= t).sum())
        recall = tp / genuine.size
        precision = tp / (tp + fp) if tp + fp > 0 else 1.0
        points.append((float(t), recall, precision))
        if recall > prev_recall:
            ap += (recall - prev_recall) * precision
            prev_recall = recall
    return points, float(ap)


def _gap_midpoints(scores: np.ndarray) -> np.ndarray:
    """One representative threshold per inter-score gap, plus brackets.

    Placing a threshold exactly on an observed score yields the same
    (FMR, FNMR) point as the midpoint of the gap above it, so these
    candidates cover every achievable operating point while keeping the
    reported threshold in the middle of its gap.
    """
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.concatenate([[distinct[0] - 1.0], mids, [distinct[-1] + 1.0]])


def fmr_fnmr_eer(
    scored: list[ScoredPair],
) -> tuple[list[tuple[float, float, float]], float, float]:
    """FMR/FNMR curve and the equal error rate.

    FMR(t) is the fraction of forgery pairs accepted (score <= t); FNMR(t)
    the fraction of genuine pairs rejected (score > t). The EER is the
    mean of the two rates at the gap-midpoint threshold minimizing their
    absolute difference, ties broken toward the smaller threshold.
    """
    genuine, forged = _split_scores(scored)
    if genuine.size == 0 or forged.size == 0:
        raise ValueError("fmr_fnmr_eer requires at least one pair of each class")
    scores = np.concatenate([genuine, forged])
    thresholds = _sweep_thresholds(scores)
    fmr = np.array([(forged <= t).mean() for t in thresholds])
    fnmr = np.array([(genuine > t).mean() for t in thresholds])
    curve = [(float(t), float(a), float(r)) for t, a, r in zip(thresholds, fmr, fnmr)]

    candidates = _gap_midpoints(scores)
    cand_fmr = np.array([(forged <= t).mean() for t in candidates])
    cand_fnmr = np.array([(genuine > t).mean() for t in candidates])
    best = int(np.argmin(np.abs(cand_fmr - cand_fnmr)))  # first minimum: smallest t
    eer = float((cand_fmr[best] + cand_fnmr[best]) / 2.0)
    return curve, eer, float(candidates[best])


def histogram(
    scored: list[ScoredPair], bins: int = 50
) -> tuple[list[tuple[float, float, int, float]], list[tuple[float, float, int, float]]]:
    """Per-class score histograms over uniform bins spanning [0, 1].

    Counts sum to the class sizes; densities integrate to one per
    non-empty class.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    genuine, forged = _split_scores(scored)
    edges = np.linspace(0.0, 1.0, bins + 1)

    def one(values: np.ndarray):
        counts, _ = np.histogram(values, bins=bins, range=(0.0, 1.0))
        width = 1.0 / bins
        total = counts.sum()
        rows = []
        for i in range(bins):
            density = counts[i] / (total * width) if total else 0.0
            rows.append((float(edges[i]), float(edges[i + 1]), int(counts[i]), float(density)))
        return rows

    return one(genuine), one(forged)


def verify(
    first_path,
    second_path,
    weights: ModelWeights,
    bank: FilterBank,
    threshold: float,
) -> tuple[str, float]:
    """Compare two image files: ("genuine"|"forged", score).

    The score is a distance, so the pair is called genuine when the score
    is at or below the threshold.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    a = _model.embed(load_image(first_path), weights, bank, source_id=str(first_path))
    b = _model.embed(load_image(second_path), weights, bank, source_id=str(second_path))
    score = distance(a, b)
    return ("genuine" if score <= threshold else "forged", score)


def evaluate(scored: list[ScoredPair], bins: int = 50) -> CurveReport:
    """All curves and summaries from one scored pair list."""
    roc_points, auc = roc_auc(scored)
    pr_points, aupr = pr_aupr(scored)
    det, eer, eer_t = fmr_fnmr_eer(scored)
    hist_g, hist_f = histogram(scored, bins=bins)
    genuine, forged = _split_scores(scored)
    return CurveReport(
        roc=roc_points,
        auc=auc,
        pr=pr_points,
        aupr=aupr,
        fmr_fnmr=det,
        eer=eer,
        eer_threshold=eer_t,
        hist_genuine=hist_g,
        hist_forged=hist_f,
        n_genuine_pairs=int(genuine.size),
        n_forgery_pairs=int(forged.size),
    )


def write_report_files(report: CurveReport, outdir) -> list[Path]:
    """CSV per curve plus a JSON summary; returns the created paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    created: list[Path] = []

    def write_csv(name: str, header: list[str], rows) -> None:
        path = outdir / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        created.append(path)

    write_csv("roc.csv", ["threshold", "fpr", "tpr"], report.roc)
    write_csv("pr.csv", ["threshold", "recall", "precision"], report.pr)
    write_csv("det.csv", ["threshold", "fmr", "fnmr"], report.fmr_fnmr)
    write_csv("hist_genuine.csv", ["bin_lo", "bin_hi", "count", "density"], report.hist_genuine)
    write_csv("hist_forged.csv", ["bin_lo", "bin_hi", "count", "density"], report.hist_forged)
    summary_path = outdir / "summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(report.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    created.append(summary_path)
    return created
