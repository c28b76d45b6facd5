"""Primal objectives and decision thresholds recovered from dual iterates.

Under the sign convention of the kernel matrix, the positive block of the
score vector holds ``w^T x+`` and the negative block holds ``-w^T x-``,
with ``||w||^2 = v^T s``.  That is all the primal needs.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import surrogate as sg
from .exceptions import DegenerateQuantile
from .problem import PATMAT
from .surrogate import SurrogateSpec

TOPK_MEAN = "topk_mean"
HARD_QUANTILE = "hard_quantile"
SURROGATE_QUANTILE = "surrogate_quantile"


@dataclass(frozen=True)
class ThresholdSpec:
    kind: str
    K: int = 1
    tau: float = 0.05
    surrogate_neg: SurrogateSpec = None

    def __post_init__(self):
        if self.kind not in (TOPK_MEAN, HARD_QUANTILE, SURROGATE_QUANTILE):
            raise ValueError(f"unknown threshold kind {self.kind!r}")
        if self.kind == TOPK_MEAN and self.K < 1:
            raise ValueError("K must be at least 1")
        if self.kind != TOPK_MEAN and not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.kind == SURROGATE_QUANTILE and self.surrogate_neg is None:
            raise ValueError("surrogate quantile needs a surrogate")

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == TOPK_MEAN:
            d["K"] = int(self.K)
        else:
            d["tau"] = float(self.tau)
        if self.surrogate_neg is not None:
            d["surrogate_neg"] = self.surrogate_neg.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        s = d.get("surrogate_neg")
        return cls(d["kind"], K=int(d.get("K", 1)), tau=float(d.get("tau", 0.05)),
                   surrogate_neg=SurrogateSpec.from_dict(s) if s else None)


def training_threshold(problem):
    """Threshold rule the primal problem itself uses."""
    if problem.kind == PATMAT:
        return ThresholdSpec(SURROGATE_QUANTILE, tau=problem.tau,
                             surrogate_neg=problem.surrogate_neg)
    return ThresholdSpec(TOPK_MEAN, K=problem.K)


def decision_threshold(problem):
    """Threshold stored with a trained model for hard predictions."""
    if problem.kind == PATMAT:
        return ThresholdSpec(HARD_QUANTILE, tau=problem.tau)
    return ThresholdSpec(TOPK_MEAN, K=problem.K)


def threshold(spec, neg_scores, n_total):
    """Decision threshold from the primal scores of the negatives.

    ``n_total`` is the number of samples (both classes) entering ``n*tau``.
    """
    s = np.asarray(neg_scores, dtype=float)
    if s.size == 0:
        raise DegenerateQuantile("no negative scores")
    if spec.kind == TOPK_MEAN:
        if spec.K > s.size:
            raise DegenerateQuantile(f"K={spec.K} exceeds {s.size} negatives")
        top = np.partition(s, s.size - spec.K)[s.size - spec.K:]
        return float(np.mean(top))
    ntau = n_total * spec.tau
    if spec.kind == HARD_QUANTILE:
        # largest t with at least n*tau negatives scoring >= t
        m = math.ceil(ntau - 1e-12)
        if ntau < 1 or m > s.size:
            raise DegenerateQuantile(f"n*tau = {ntau:g} with {s.size} negatives")
        return float(np.sort(s)[::-1][m - 1])
    return surrogate_quantile(spec.surrogate_neg, s, ntau)


def surrogate_quantile(surr, s, ntau):
    """Unique ``t`` with ``sum l(s_j - t) = ntau``, by bisection."""
    if not ntau > 0:
        raise DegenerateQuantile(f"n*tau = {ntau:g} must be positive")

    def excess(t):
        return float(np.sum(sg.loss(surr, s - t))) - ntau

    width = 1.0 + 1.0 / surr.theta
    lo = float(s.min()) - width
    hi = float(s.max()) + width
    while excess(lo) < 0:
        width *= 2.0
        lo = float(s.min()) - width
    # bisect to floating point resolution; the sum is monotone in t
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if excess(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return lo if abs(excess(lo)) <= abs(excess(hi)) else hi


def primal_scores(K, state):
    """``(w^T x+, w^T x-)`` for the training samples."""
    s = np.asarray(state.scores)
    return s[:K.n_pos].copy(), -s[K.n_pos:]


def primal_objective(problem, K, state):
    """Primal objective at the ``w`` implied by the dual iterate.

    Returns
    -------
    value : float
    t : float
        The threshold the primal problem assigns to that ``w``.
    """
    pos, neg = primal_scores(K, state)
    half_norm = 0.5 * float(state.coefficients @ state.scores)
    t = threshold(training_threshold(problem), neg, K.n)
    value = half_norm + problem.C * float(np.sum(sg.loss(problem.surrogate_pos, t - pos)))
    return value, t


def duality_gap(problem, K, state, dual_value):
    primal, _ = primal_objective(problem, K, state)
    return primal - dual_value


def relative_gap(primal, dual):
    return (primal - dual) / max(abs(primal), 1e-12)
