"""Trained models: the kernel expansion over support samples and its file format."""

import json
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import ThresholdSpec, decision_threshold, primal_scores, threshold
from .exceptions import DimensionMismatch, FormatError, SchemaVersionError
from .kernel import KernelSpec, cross_kernel
from .problem import ProblemSpec

SCHEMA_VERSION = 1
PRUNE_TOL = 1e-10


@dataclass
class TrainedModel:
    """``pred(z) = sum alpha_i k(z, x+_i) - sum beta_j k(z, x-_j)``.

    Only samples with a coefficient above :data:`PRUNE_TOL` are kept;
    ``pos_index``/``neg_index`` are their row numbers in the training
    matrices of each class.
    """

    kernel: KernelSpec
    problem: ProblemSpec
    dim: int
    alpha: np.ndarray
    beta: np.ndarray
    support_pos: np.ndarray
    support_neg: np.ndarray
    pos_index: np.ndarray
    neg_index: np.ndarray
    threshold: float
    threshold_spec: ThresholdSpec = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        self.support_pos = np.asarray(self.support_pos, dtype=float).reshape(-1, self.dim)
        self.support_neg = np.asarray(self.support_neg, dtype=float).reshape(-1, self.dim)
        self.pos_index = np.asarray(self.pos_index, dtype=np.int64).reshape(-1)
        self.neg_index = np.asarray(self.neg_index, dtype=np.int64).reshape(-1)
        if not (len(self.alpha) == len(self.support_pos) == len(self.pos_index)
                and len(self.beta) == len(self.support_neg) == len(self.neg_index)):
            raise ValueError("coefficient and support-sample lengths disagree")

    @property
    def n_support(self):
        return len(self.alpha) + len(self.beta)

    def predict_scores(self, Z):
        """Kernel expansion for each row of ``Z``."""
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z.reshape(1, -1)
        if Z.shape[1] != self.dim:
            raise DimensionMismatch(f"model expects d={self.dim}, got d={Z.shape[1]}")
        out = np.zeros(len(Z))
        if len(self.alpha):
            out += cross_kernel(self.kernel, Z, self.support_pos) @ self.alpha
        if len(self.beta):
            out -= cross_kernel(self.kernel, Z, self.support_neg) @ self.beta
        return out

    def predict_score(self, z):
        z = np.asarray(z, dtype=float)
        if z.ndim != 1:
            raise DimensionMismatch(f"expected a single vector, got shape {z.shape}")
        return float(self.predict_scores(z)[0])

    def classify(self, Z, t=None):
        """True (positive) where the score is at least the threshold."""
        t = self.threshold if t is None else t
        return self.predict_scores(Z) >= t

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kernel": self.kernel.to_dict(),
            "problem": self.problem.to_dict(),
            "dim": int(self.dim),
            "threshold": float(self.threshold),
            "threshold_spec": None if self.threshold_spec is None else self.threshold_spec.to_dict(),
            "alpha": [float(x) for x in self.alpha],
            "beta": [float(x) for x in self.beta],
            "pos_index": [int(i) for i in self.pos_index],
            "neg_index": [int(i) for i in self.neg_index],
            "support_pos": [[float(x) for x in row] for row in self.support_pos],
            "support_neg": [[float(x) for x in row] for row in self.support_neg],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaVersionError(
                f"model schema version {version!r} is not supported (expected {SCHEMA_VERSION})")
        try:
            ts = d.get("threshold_spec")
            return cls(
                kernel=KernelSpec.from_dict(d["kernel"]),
                problem=ProblemSpec.from_dict(d["problem"]),
                dim=int(d["dim"]),
                alpha=d["alpha"], beta=d["beta"],
                support_pos=d["support_pos"], support_neg=d["support_neg"],
                pos_index=d["pos_index"], neg_index=d["neg_index"],
                threshold=float(d["threshold"]),
                threshold_spec=ThresholdSpec.from_dict(ts) if ts else None,
                metadata=d.get("metadata", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed model file: {exc}") from exc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not a model file ({exc})") from exc
        return cls.from_dict(d)


def from_state(problem, kernel_spec, K, state, X_pos, X_neg, metadata=None, tol=PRUNE_TOL):
    """Build a model from a solved dual state.

    The stored threshold is the problem's own rule (mean of the top ``K``
    negatives, or the hard top-``tau`` quantile for PatMat) applied to the
    final training scores.
    """
    X_pos = np.atleast_2d(np.asarray(X_pos, dtype=float))
    X_neg = np.atleast_2d(np.asarray(X_neg, dtype=float))
    tspec = decision_threshold(problem)
    _, neg = primal_scores(K, state)
    t = threshold(tspec, neg, K.n)
    ip = np.flatnonzero(state.alpha > tol)
    ineg = np.flatnonzero(state.beta > tol)
    meta = {"seed": None, "loops": int(state.loop_count),
            "dual_objective": None, "n_pos": int(K.n_pos), "n_neg": int(K.n_neg)}
    meta.update(metadata or {})
    return TrainedModel(
        kernel=kernel_spec, problem=problem, dim=X_pos.shape[1],
        alpha=state.alpha[ip], beta=state.beta[ineg],
        support_pos=X_pos[ip], support_neg=X_neg[ineg],
        pos_index=ip, neg_index=ineg,
        threshold=t, threshold_spec=tspec, metadata=meta)
