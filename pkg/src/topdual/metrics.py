"""Precision, recall and precision-at-recall with the ``score >= t`` convention.

Precision with no predicted positives is undefined and reported as NaN.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateClass, ShapeMismatch, TargetUnreachable

PREC_AT_REC_LEVELS = (0.05, 0.1, 0.2, 0.4, 0.6, 0.8)


@dataclass
class ScoredLabels:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float).reshape(-1)
        self.labels = np.asarray(self.labels).reshape(-1).astype(bool)
        if self.scores.shape != self.labels.shape:
            raise ShapeMismatch(f"{self.scores.size} scores but {self.labels.size} labels")

    @property
    def n_pos(self):
        return int(self.labels.sum())


def precision_recall_at(sl, t):
    pred = sl.scores >= t
    tp = int(np.sum(pred & sl.labels))
    npred = int(pred.sum())
    n_pos = sl.n_pos
    precision = tp / npred if npred else float("nan")
    recall = tp / n_pos if n_pos else float("nan")
    return precision, recall


@dataclass
class PRCurve:
    """Curve points in order of increasing recall (decreasing threshold)."""

    recall: np.ndarray
    precision: np.ndarray
    thresholds: np.ndarray

    def __len__(self):
        return len(self.recall)

    def points(self):
        return list(zip(self.recall.tolist(), self.precision.tolist()))

    def to_csv(self, fh):
        fh.write("recall,precision,threshold\n")
        for r, p, t in zip(self.recall, self.precision, self.thresholds):
            fh.write(f"{r!r},{p!r},{t!r}\n")


def pr_curve(sl):
    """Sweep the threshold over every distinct score.

    Tied scores cross the threshold together.  The ``+inf`` sentinel
    predicts nothing, so its precision is undefined and it is left out.
    """
    if sl.n_pos == 0 or sl.n_pos == len(sl.labels):
        raise DegenerateClass("a PR curve needs both classes")
    order = np.argsort(-sl.scores, kind="stable")
    s = sl.scores[order]
    y = sl.labels[order]
    tp = np.cumsum(y)
    npred = np.arange(1, len(s) + 1)
    # last position of each run of equal scores
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tp = tp[last]
    npred = npred[last]
    return PRCurve(tp / sl.n_pos, tp / npred, s[last])


def precision_at_recall(sl, target, curve=None):
    """Precision at the largest threshold whose recall reaches ``target``."""
    if not 0 < target <= 1:
        raise ValueError(f"target recall must lie in (0, 1], got {target}")
    if sl.n_pos == 0:
        raise TargetUnreachable("no positive samples")
    curve = curve or pr_curve(sl)
    hit = np.flatnonzero(curve.recall >= target - 1e-12)
    if not hit.size:
        raise TargetUnreachable(f"recall {target} not reached")
    return float(curve.precision[hit[0]])


def envelope(curve):
    """Running maximum of precision from the right (monotonized curve)."""
    return np.maximum.accumulate(curve.precision[::-1])[::-1]


def precision_at_recalls(sl, levels=PREC_AT_REC_LEVELS):
    curve = pr_curve(sl)
    return {lv: precision_at_recall(sl, lv, curve) for lv in levels}


@dataclass
class ScoreDensity:
    edges: np.ndarray
    count_pos: np.ndarray
    count_neg: np.ndarray

    def to_csv(self, fh):
        """Rows ``score,count_pos,count_neg`` with ``score`` the bin centre."""
        fh.write("score,count_pos,count_neg\n")
        centres = 0.5 * (self.edges[1:] + self.edges[:-1])
        for c, p, q in zip(centres, self.count_pos, self.count_neg):
            fh.write(f"{c!r},{int(p)},{int(q)}\n")


def score_density(sl, bin_width=None, bins=50):
    """Per-class histogram of scores on a shared grid."""
    lo, hi = float(sl.scores.min()), float(sl.scores.max())
    if hi <= lo:
        hi = lo + 1.0
    if bin_width is not None:
        if not bin_width > 0:
            raise ValueError("bin width must be positive")
        bins = max(1, int(np.ceil((hi - lo) / bin_width)))
        edges = lo + bin_width * np.arange(bins + 1)
    else:
        edges = np.linspace(lo, hi, bins + 1)
    cp, _ = np.histogram(sl.scores[sl.labels], edges)
    cn, _ = np.histogram(sl.scores[~sl.labels], edges)
    return ScoreDensity(edges, cp, cn)
