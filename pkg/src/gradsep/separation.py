"""Source-calibrated thresholding and known/unknown partitioning."""

import math
from dataclasses import dataclass

import numpy as np

HIGHER_IS_UNKNOWN = "higher_is_unknown"
HIGHER_IS_KNOWN = "higher_is_known"


@dataclass(frozen=True)
class Threshold:
    value: float
    score_convention: str
    retention: float


@dataclass(frozen=True)
class Partition:
    known_ids: tuple
    unknown_ids: tuple


def _check_convention(convention):
    if convention not in (HIGHER_IS_UNKNOWN, HIGHER_IS_KNOWN):
        raise ValueError(f"unknown score convention: {convention!r}")


def calibrate_threshold(source_scores, retention=0.9,
                        convention=HIGHER_IS_UNKNOWN):
    """Empirical retention-quantile of source scores (lower-interpolation: the
    threshold is always an observed score) such that at least
    ceil(retention * m) of the m sources fall on the known side."""
    _check_convention(convention)
    scores = np.asarray(source_scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot calibrate a threshold from zero scores")
    if not np.all(np.isfinite(scores)):
        raise ValueError("source scores contain non-finite entries")
    if not 0.0 < retention < 1.0:
        raise ValueError(f"retention must lie in (0, 1), got {retention}")
    m = scores.size
    keep = math.ceil(retention * m)
    ordered = np.sort(scores)
    if convention == HIGHER_IS_UNKNOWN:
        value = ordered[keep - 1]       # keep lowest-scoring `keep` sources
    else:
        value = ordered[m - keep]       # keep highest-scoring `keep` sources
    return Threshold(value=float(value), score_convention=convention,
                     retention=retention)


def separate(scores, threshold):
    """Partition (id, score) pairs. Under higher_is_unknown a score strictly
    above the threshold is unknown; ties go to known (preserves the
    calibration retention guarantee)."""
    _check_convention(threshold.score_convention)
    known, unknown = [], []
    for sample_id, score in scores:
        if threshold.score_convention == HIGHER_IS_UNKNOWN:
            is_unknown = score > threshold.value
        else:
            is_unknown = score < threshold.value
        (unknown if is_unknown else known).append(sample_id)
    return Partition(known_ids=tuple(known), unknown_ids=tuple(unknown))
