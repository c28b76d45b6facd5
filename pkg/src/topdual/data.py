"""Dataset loading, label binarization, splitting, and synthetic generators."""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DegenerateClass, EmptyFile, ParseError, TooFewSamples

SPARSE = "sparse"
DELIMITED = "delimited"


@dataclass
class RawTable:
    features: np.ndarray
    labels: np.ndarray
    path: str = None
    format: str = None


@dataclass
class Dataset:
    """Binary data set; ``labels`` is 1 for positives and 0 for negatives.

    ``indices`` maps rows back to the table they were taken from.
    """

    features: np.ndarray
    labels: np.ndarray
    pos_label_set: frozenset = frozenset()
    provenance: dict = field(default_factory=dict)
    indices: np.ndarray = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be n x d with one label per row")
        if self.indices is None:
            self.indices = np.arange(len(self.labels))

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def n_pos(self):
        return int(self.labels.sum())

    @property
    def n_neg(self):
        return len(self) - self.n_pos

    @property
    def X_pos(self):
        return self.features[self.labels == 1]

    @property
    def X_neg(self):
        return self.features[self.labels == 0]

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return replace(self, features=self.features[rows], labels=self.labels[rows],
                       indices=self.indices[rows], provenance=dict(self.provenance))

    def summary(self):
        return {"n": len(self), "d": self.dim, "n_pos": self.n_pos, "n_neg": self.n_neg,
                "pos_fraction": self.n_pos / len(self) if len(self) else float("nan")}


def _strip(line):
    i = line.find("#")
    return (line if i < 0 else line[:i]).strip()


def _label(tok):
    try:
        v = float(tok)
    except ValueError:
        return tok
    return v


def load(path, format=SPARSE, delimiter=",", header=False, label_col=0, n_features=None):
    """Read a sparse ``label idx:val`` file or a delimited numeric table.

    Sparse indices are 1-based.  For delimited files ``label_col`` may be
    negative (counted from the end).

    Raises
    ------
    ParseError
        Malformed rows, with the 1-based line number.
    EmptyFile
        No data rows.
    """
    with open(path) as fh:
        lines = fh.readlines()
    if format == SPARSE:
        X, y = _parse_sparse(lines, n_features)
    elif format == DELIMITED:
        X, y = _parse_delimited(lines, delimiter, header, label_col)
    else:
        raise ValueError(f"unknown data format {format!r}")
    return RawTable(X, y, str(path), format)


def _parse_sparse(lines, n_features):
    labels, rows = [], []
    dim = 0
    for no, raw in enumerate(lines, 1):
        line = _strip(raw)
        if not line:
            continue
        toks = line.split()
        row = {}
        for tok in toks[1:]:
            idx, sep, val = tok.partition(":")
            if not sep:
                raise ParseError(f"expected idx:val, got {tok!r}", line=no)
            try:
                j = int(idx)
                v = float(val)
            except ValueError:
                raise ParseError(f"bad entry {tok!r}", line=no) from None
            if j < 1:
                raise ParseError(f"feature index {j} must be >= 1", line=no)
            if not math.isfinite(v):
                raise ParseError(f"non-finite value {val!r}", line=no)
            if n_features is not None and j > n_features:
                raise ParseError(f"feature index {j} exceeds d={n_features}", line=no)
            row[j - 1] = v
            dim = max(dim, j)
        labels.append(_label(toks[0]))
        rows.append(row)
    if not rows:
        raise EmptyFile("no data rows")
    d = n_features if n_features is not None else dim
    X = np.zeros((len(rows), d))
    for r, row in enumerate(rows):
        for j, v in row.items():
            X[r, j] = v
    return X, np.array(labels, dtype=object if any(isinstance(v, str) for v in labels) else float)


def _parse_delimited(lines, delimiter, header, label_col):
    width = None
    labels, rows = [], []
    seen_header = not header
    for no, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(delimiter)]
        if width is None:
            width = len(fields)
            if width < 2:
                raise ParseError("need a label column and at least one feature", line=no)
        elif len(fields) != width:
            raise ParseError(f"expected {width} fields, got {len(fields)}", line=no)
        if not seen_header:
            seen_header = True
            continue
        lc = label_col % width
        try:
            vals = [float(f) for i, f in enumerate(fields) if i != lc]
        except ValueError:
            raise ParseError("non-numeric feature", line=no) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite feature", line=no)
        labels.append(_label(fields[lc]))
        rows.append(vals)
    if not rows:
        raise EmptyFile("no data rows")
    return np.array(rows), np.array(labels, dtype=object if any(isinstance(v, str) for v in labels) else float)


def binarize(raw, pos_label_set):
    """Positives are rows whose raw label is in ``pos_label_set``.

    Raises
    ------
    DegenerateClass
        If either class ends up empty.
    """
    pos = {_label(str(v)) for v in pos_label_set}
    if not pos:
        raise DegenerateClass("empty positive label set")
    y = np.array([_label(str(v)) in pos for v in raw.labels], dtype=np.int8)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise DegenerateClass(
            f"positive labels {sorted(map(str, pos))} give n_pos={n_pos} of n={len(y)}")
    prov = {"path": raw.path, "format": raw.format}
    return Dataset(raw.features, y, frozenset(pos), prov)


def _sizes(n):
    nv = n // 4
    return n - 2 * nv, nv, nv


def _order(rng, idx):
    return idx[rng.permutation(len(idx))]


def split(ds, seed=0, scheme="default", test=None, stratify=False):
    """Seeded shuffle into train/validation/test.

    ``default`` is 50/25/25 with floor for validation and test.  With
    ``scheme="fixed-test"`` the external ``test`` set is kept and ``ds``
    is split so the validation set has the size of the test set.

    Raises
    ------
    TooFewSamples
    """
    rng = np.random.default_rng(seed)
    n = len(ds)
    if scheme == "default":
        if n < 4:
            raise TooFewSamples(f"need at least 4 samples to split, got {n}")
        if stratify:
            parts = ([], [], [])
            for cls in (1, 0):
                idx = _order(rng, np.flatnonzero(ds.labels == cls))
                nt, nv, _ = _sizes(len(idx))
                parts[0].append(idx[:nt])
                parts[1].append(idx[nt:nt + nv])
                parts[2].append(idx[nt + nv:])
            tr, va, te = (np.sort(np.concatenate(p)) for p in parts)
        else:
            idx = _order(rng, np.arange(n))
            nt, nv, _ = _sizes(n)
            tr, va, te = idx[:nt], idx[nt:nt + nv], idx[nt + nv:]
        out = ds.subset(tr), ds.subset(va), ds.subset(te)
    elif scheme == "fixed-test":
        if test is None:
            raise ValueError("fixed-test scheme needs a test set")
        nv = len(test)
        if n - nv < 1:
            raise TooFewSamples(f"{n} samples cannot hold a validation set of {nv} plus training")
        idx = _order(rng, np.arange(n))
        out = ds.subset(idx[nv:]), ds.subset(idx[:nv]), test
    else:
        raise ValueError(f"unknown split scheme {scheme!r}")
    for part in out:
        part.provenance.update({"split_seed": seed, "scheme": scheme})
    return out


def manifest(train, valid, test):
    """Index lists of a split, for reproducibility."""
    return {name: [int(i) for i in part.indices]
            for name, part in (("train", train), ("valid", valid), ("test", test))}


def write_manifest(path, train, valid, test):
    with open(path, "w") as fh:
        json.dump(manifest(train, valid, test), fh)
        fh.write("\n")


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, ds):
        X = ds.features
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def transform(self, ds):
        return replace(ds, features=(ds.features - self.mean) / self.scale)


# ---------------------------------------------------------------------------
# synthetic data


def _dataset(Xp, Xn, name):
    X = np.vstack([Xp, Xn])
    y = np.r_[np.ones(len(Xp)), np.zeros(len(Xn))]
    return Dataset(X, y, frozenset({1.0}), {"synthetic": name})


def blobs(n_pos=60, n_neg=140, d=2, separation=2.0, seed=0):
    """Two isotropic Gaussian blobs, centres ``separation`` apart."""
    rng = np.random.default_rng(seed)
    c = np.zeros(d)
    c[0] = separation / 2
    return _dataset(rng.normal(c, 1.0, (n_pos, d)), rng.normal(-c, 1.0, (n_neg, d)), "blobs")


def circles(n_inner=100, n_outer=300, r_inner=1.0, r_outer=2.0, noise=0.15, seed=0):
    """Positives on an inner ring, negatives on an outer ring (2-D)."""
    rng = np.random.default_rng(seed)

    def ring(m, r):
        phi = rng.uniform(0, 2 * np.pi, m)
        rad = r + noise * rng.normal(size=m)
        return np.c_[rad * np.cos(phi), rad * np.sin(phi)]

    return _dataset(ring(n_inner, r_inner), ring(n_outer, r_outer), "circles")


def separable(n_pos=30, n_neg=70, d=2, margin=1.0, seed=0):
    """Linearly separable data: classes on either side of a random hyperplane."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=d)
    w /= np.linalg.norm(w)

    def side(m, sign):
        X = rng.normal(size=(m, d)) * 1.5
        proj = X @ w
        X += np.outer(sign * (margin / 2 + np.abs(proj)) - proj, w)
        return X

    return _dataset(side(n_pos, 1.0), side(n_neg, -1.0), "separable")


SYNTHETIC = {"blobs": blobs, "circles": circles, "separable": separable}


def synthetic(name, **kwargs):
    if name not in SYNTHETIC:
        raise ValueError(f"unknown synthetic data set {name!r}")
    return SYNTHETIC[name](**kwargs)
