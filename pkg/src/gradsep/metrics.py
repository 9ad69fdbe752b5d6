"""Open-set evaluation metrics: AUROC, FPR@TPR95, CCR@FPR10.

Score convention throughout: HIGHER score => more likely ID. Callers must
negate unknown-oriented scores before evaluation. Thresholds are restricted
to observed score values (plus +inf where noted) so results are bit
reproducible.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScoredSample:
    id: str
    score: float
    is_id: bool
    pred_correct: bool | None = None  # meaningful only when is_id


@dataclass(frozen=True)
class MetricTriple:
    """All three values as percentages in [0, 100]."""
    ccr_at_fpr10: float
    fpr95: float
    auroc: float

    def as_dict(self):
        return {"ccr_at_fpr10": self.ccr_at_fpr10, "fpr95": self.fpr95,
                "auroc": self.auroc}


def _check_scores(scores, name):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError(f"{name} score list is empty")
    if not np.all(np.isfinite(scores)):
        raise ValueError(f"{name} scores contain non-finite entries")
    return scores


def auroc(id_scores, ood_scores):
    """P(random ID score > random OOD score) + 0.5 * P(tie).

    Computed with exact tie-aware counts; identical to the O(n*m) pairwise
    comparison.
    """
    id_scores = _check_scores(id_scores, "ID")
    ood_scores = _check_scores(ood_scores, "OOD")
    ood_sorted = np.sort(ood_scores)
    below = np.searchsorted(ood_sorted, id_scores, side="left")
    below_or_eq = np.searchsorted(ood_sorted, id_scores, side="right")
    wins = below.sum() + 0.5 * (below_or_eq - below).sum()
    return float(wins) / (id_scores.size * ood_scores.size)


def fpr_at_tpr(id_scores, ood_scores, tpr=0.95):
    """FPR on OOD at the largest observed threshold retaining >= tpr of ID
    (score >= threshold => predicted ID)."""
    id_scores = _check_scores(id_scores, "ID")
    ood_scores = _check_scores(ood_scores, "OOD")
    if not 0.0 < tpr <= 1.0:
        raise ValueError(f"tpr must lie in (0, 1], got {tpr}")
    pooled = np.unique(np.concatenate([id_scores, ood_scores]))  # ascending
    id_sorted = np.sort(id_scores)
    count_ge = id_sorted.size - np.searchsorted(id_sorted, pooled, side="left")
    retained = count_ge / id_sorted.size
    ok = np.nonzero(retained >= tpr)[0]
    threshold = pooled[ok[-1]]  # largest qualifying value
    return float((ood_scores >= threshold).mean())


def ccr_at_fpr(samples, fpr=0.10):
    """Correct-classification rate over ALL ID samples at the smallest
    observed OOD score giving an OOD false-positive rate <= fpr.

    A sample counts only if it is accepted as ID (score >= threshold) AND its
    predicted class is correct.
    """
    if not 0.0 <= fpr < 1.0:
        raise ValueError(f"fpr must lie in [0, 1), got {fpr}")
    id_samples = [s for s in samples if s.is_id]
    ood_samples = [s for s in samples if not s.is_id]
    if not id_samples or not ood_samples:
        raise ValueError("need at least one ID and one OOD sample")
    ood_scores = _check_scores([s.score for s in ood_samples], "OOD")
    candidates = np.unique(ood_scores)  # ascending
    # fallback just above the largest OOD score: rejects every OOD sample
    # (FPR = 0) while still accepting ID samples that clear all of them
    threshold = np.nextafter(candidates[-1], np.inf)
    for t in candidates:
        if (ood_scores >= t).mean() <= fpr:
            threshold = t
            break
    hits = sum(1 for s in id_samples
               if s.score >= threshold and bool(s.pred_correct))
    return hits / len(id_samples)


def metric_triple(samples, tpr=0.95, fpr=0.10):
    """Evaluate all three metrics on a scored sample set; percentages."""
    id_scores = [s.score for s in samples if s.is_id]
    ood_scores = [s.score for s in samples if not s.is_id]
    return MetricTriple(
        ccr_at_fpr10=100.0 * ccr_at_fpr(samples, fpr=fpr),
        fpr95=100.0 * fpr_at_tpr(id_scores, ood_scores, tpr=tpr),
        auroc=100.0 * auroc(id_scores, ood_scores),
    )
