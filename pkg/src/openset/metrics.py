"""Open-set evaluation metrics over a table of per-image scores.

AUROC treats the closed-set score S as a detector of "this image belongs to
a known class": the probability a random closed-set image outranks a random
open-set one, ties counting half.  Computed via the rank-sum identity
rather than pairwise comparison, so it stays O(n log n).

OSCR additionally demands the closed-set image be *correctly classified*:
it is the area under the curve of correct-classification rate against
false-positive rate as the acceptance threshold sweeps the observed scores
from high to low (strict ``score > threshold`` on both sides, trapezoidal
integration, curve anchored at x = 0 and x = 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EvaluationError


@dataclass(frozen=True)
class LabeledScore:
    """One evaluation row: an image's score plus its ground truth."""

    image_id: str
    is_closed: bool
    true_class: str | None
    predicted_closed_class: str | None
    score: float

    def __post_init__(self):
        if self.is_closed and self.true_class is None:
            raise EvaluationError(f"closed-set row {self.image_id!r} needs a true class")
        if not self.is_closed and self.true_class is not None:
            raise EvaluationError(f"open-set row {self.image_id!r} cannot have a true class")


def _split_scores(rows: Sequence[LabeledScore]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    closed = np.array([r.score for r in rows if r.is_closed], dtype=np.float64)
    open_ = np.array([r.score for r in rows if not r.is_closed], dtype=np.float64)
    correct = np.array(
        [r.predicted_closed_class == r.true_class for r in rows if r.is_closed], dtype=bool
    )
    if closed.size == 0 or open_.size == 0:
        raise EvaluationError(
            f"need both populations: {closed.size} closed and {open_.size} open rows"
        )
    return closed, open_, correct


def _tie_averaged_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank range."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.shape[0], dtype=np.float64)
    i = 0
    n = values.shape[0]
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc(rows: Sequence[LabeledScore]) -> float:
    """Probability a closed-set score outranks an open-set one (ties = 1/2)."""
    closed, open_, _ = _split_scores(rows)
    n_c, n_o = closed.size, open_.size
    ranks = _tie_averaged_ranks(np.concatenate([closed, open_]))
    rank_sum = float(ranks[:n_c].sum())
    return (rank_sum - n_c * (n_c + 1) / 2.0) / (n_c * n_o)


def oscr_curve(rows: Sequence[LabeledScore]) -> list[tuple[float, float]]:
    """The (false-positive rate, correct-classification rate) sweep points."""
    closed, open_, correct = _split_scores(rows)
    for r in rows:
        if r.is_closed and r.predicted_closed_class is None:
            raise EvaluationError(f"closed-set row {r.image_id!r} needs a prediction")
    thresholds = np.unique(np.concatenate([closed, open_]))[::-1]
    hit_scores = closed[correct]
    # rates[t] uses a strict > comparison against threshold t
    ccr = (hit_scores[None, :] > thresholds[:, None]).sum(axis=1) / closed.size
    fpr = (open_[None, :] > thresholds[:, None]).sum(axis=1) / open_.size
    points = [(0.0, float(ccr[0]))]
    points.extend((float(f), float(c)) for f, c in zip(fpr, ccr))
    points.append((1.0, float(ccr[-1])))
    return points


def oscr(rows: Sequence[LabeledScore]) -> float:
    """Area under the OSCR curve (trapezoidal)."""
    points = oscr_curve(rows)
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    return float(trapezoid(ys, xs))
