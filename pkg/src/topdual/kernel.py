"""Kernel functions and the signed block Gram matrix.

The matrix is stored dense with positives first::

    [[ k(X+, X+), -k(X+, X-)],
     [-k(X-, X+),  k(X-, X-)]]

so that ``[alpha; beta]^T K [alpha; beta] = ||w||^2`` for the implicit
primal vector ``w = sum alpha_i phi(x+_i) - sum beta_j phi(x-_j)``.
Because the matrix is symmetric, row ``j`` doubles as column ``j``; a
disk-backed matrix therefore serves a column with one contiguous read.
"""

import hashlib
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import AllocationTooLarge, DimensionMismatch, FormatError

LINEAR = "linear"
GAUSSIAN = "gaussian"

DEFAULT_MEMORY_BUDGET = 4 * 1024**3

CACHE_MAGIC = b"TDKCACHE"
CACHE_VERSION = 1
# magic, version, family, n_pos, n_neg, sigma, checksum, padding
_HEADER = struct.Struct("<8sIIQQdQ16x")
HEADER_SIZE = _HEADER.size
assert HEADER_SIZE == 64

_FAMILY_CODES = {LINEAR: 0, GAUSSIAN: 1}
_BLOCK_ROWS = 512


@dataclass(frozen=True)
class KernelSpec:
    family: str = GAUSSIAN
    sigma: float = 1.0

    def __post_init__(self):
        if self.family not in _FAMILY_CODES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == GAUSSIAN and not self.sigma > 0:
            raise ValueError(f"gaussian sigma must be positive, got {self.sigma}")

    def to_dict(self):
        return {"family": self.family, "sigma": float(self.sigma)}

    @classmethod
    def from_dict(cls, d):
        return cls(family=d["family"], sigma=float(d.get("sigma", 1.0)))


def kernel_eval(spec, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionMismatch(f"vectors of shape {x.shape} and {y.shape}")
    if spec.family == LINEAR:
        return float(x @ y)
    d = x - y
    return float(np.exp(-spec.sigma * (d @ d)))


def cross_kernel(spec, A, B):
    """Unsigned kernel values ``k(a_i, b_j)`` for all row pairs."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(
            f"feature dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    if spec.family == LINEAR:
        return A @ B.T
    # cdist squares coordinate differences directly: exact zeros on the
    # diagonal and bitwise symmetry, unlike the |a|^2 + |b|^2 - 2ab trick
    return np.exp(-spec.sigma * cdist(A, B, "sqeuclidean"))


@dataclass
class KernelMatrix:
    """Signed Gram matrix with positives first.

    ``entries`` is either an in-memory array or a read-only memory map of
    a cache file (``path`` is set in the latter case).
    """

    n_pos: int
    n_neg: int
    entries: np.ndarray
    spec: KernelSpec
    path: str = None
    _diag: np.ndarray = field(default=None, repr=False)

    @property
    def n(self):
        return self.n_pos + self.n_neg

    @property
    def source(self):
        return "memory" if self.path is None else "disk"

    @property
    def diag(self):
        if self._diag is None:
            self._diag = np.array(np.diagonal(self.entries), dtype=float)
        return self._diag

    def column(self, j):
        if not 0 <= j < self.n:
            raise IndexError(f"column {j} out of range for n={self.n}")
        return np.array(self.entries[j], dtype=float)

    def matvec(self, v):
        """``K @ v``, streamed in row blocks for disk-backed matrices."""
        if self.path is None:
            return self.entries @ v
        out = np.empty(self.n)
        for lo in range(0, self.n, _BLOCK_ROWS):
            hi = min(lo + _BLOCK_ROWS, self.n)
            out[lo:hi] = np.asarray(self.entries[lo:hi]) @ v
        return out

    def unsigned(self):
        """The plain kernel matrix ``k(X, X)`` (sign flips undone)."""
        sign = np.r_[np.ones(self.n_pos), -np.ones(self.n_neg)]
        return np.asarray(self.entries) * np.outer(sign, sign)


def _signed_blocks(spec, X, n_pos, lo, hi, lo2, hi2):
    blk = cross_kernel(spec, X[lo:hi], X[lo2:hi2])
    rows_neg = np.arange(lo, hi) >= n_pos
    cols_neg = np.arange(lo2, hi2) >= n_pos
    flip = rows_neg[:, None] != cols_neg[None, :]
    blk[flip] = -blk[flip]
    return blk


def build_kernel_matrix(spec, X_pos, X_neg, cache_path=None,
                        memory_budget=DEFAULT_MEMORY_BUDGET):
    """Assemble the signed Gram matrix.

    Raises
    ------
    AllocationTooLarge
        If the dense matrix exceeds ``memory_budget`` bytes and no
        ``cache_path`` was given.
    """
    X_pos = np.atleast_2d(np.asarray(X_pos, dtype=float))
    X_neg = np.atleast_2d(np.asarray(X_neg, dtype=float))
    if X_pos.shape[1] != X_neg.shape[1]:
        raise DimensionMismatch(
            f"positives have d={X_pos.shape[1]}, negatives d={X_neg.shape[1]}")
    n_pos, n_neg = len(X_pos), len(X_neg)
    if n_pos < 1 or n_neg < 1:
        raise DimensionMismatch("need at least one positive and one negative")
    X = np.vstack([X_pos, X_neg])
    n = n_pos + n_neg
    nbytes = 8 * n * n

    if cache_path is None:
        if nbytes > memory_budget:
            raise AllocationTooLarge(
                f"kernel matrix needs {nbytes} bytes, budget is {memory_budget}; "
                "use a disk cache")
        K = np.empty((n, n))
        _fill_symmetric(K, spec, X, n_pos)
        return KernelMatrix(n_pos, n_neg, K, spec)

    with open(cache_path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, _FAMILY_CODES[spec.family],
                              n_pos, n_neg, float(spec.sigma), 0))
        fh.truncate(HEADER_SIZE + nbytes)
    mm = np.memmap(cache_path, dtype="<f8", mode="r+", offset=HEADER_SIZE, shape=(n, n))
    _fill_symmetric(mm, spec, X, n_pos)
    mm.flush()
    checksum = _checksum(mm)
    del mm
    _write_header(cache_path, spec, n_pos, n_neg, checksum)
    return read_cache(cache_path, verify=False)


def _fill_symmetric(out, spec, X, n_pos):
    # compute upper blocks once and mirror them so the result is exactly symmetric
    n = len(X)
    for lo in range(0, n, _BLOCK_ROWS):
        hi = min(lo + _BLOCK_ROWS, n)
        for lo2 in range(lo, n, _BLOCK_ROWS):
            hi2 = min(lo2 + _BLOCK_ROWS, n)
            blk = _signed_blocks(spec, X, n_pos, lo, hi, lo2, hi2)
            if lo2 == lo:
                blk = np.triu(blk) + np.triu(blk, 1).T
            out[lo:hi, lo2:hi2] = blk
            if lo2 != lo:
                out[lo2:hi2, lo:hi] = blk.T


def _checksum(entries):
    h = hashlib.blake2b(digest_size=8)
    n = entries.shape[0]
    for lo in range(0, n, _BLOCK_ROWS):
        h.update(np.ascontiguousarray(entries[lo:lo + _BLOCK_ROWS], dtype="<f8").tobytes())
    return int.from_bytes(h.digest(), "little")


def _write_header(path, spec, n_pos, n_neg, checksum):
    with open(path, "r+b") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, _FAMILY_CODES[spec.family],
                              n_pos, n_neg, float(spec.sigma), checksum))


def write_cache(K, path):
    """Write ``K`` in the flat cache layout (64-byte header + row-major f8)."""
    data = np.ascontiguousarray(K.entries, dtype="<f8")
    checksum = _checksum(data)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, _FAMILY_CODES[K.spec.family],
                              K.n_pos, K.n_neg, float(K.spec.sigma), checksum))
        fh.write(data.tobytes())


def read_header(path):
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: truncated header")
    magic, version, fam, n_pos, n_neg, sigma, checksum = _HEADER.unpack(raw)
    if magic != CACHE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise FormatError(f"{path}: unsupported cache version {version}")
    families = {v: k for k, v in _FAMILY_CODES.items()}
    if fam not in families:
        raise FormatError(f"{path}: unknown kernel family code {fam}")
    return {
        "version": version,
        "spec": KernelSpec(families[fam], sigma if sigma > 0 else 1.0),
        "n_pos": n_pos,
        "n_neg": n_neg,
        "checksum": checksum,
    }


def read_cache(path, expected_counts=None, verify=True, in_memory=False):
    """Open a cache file.

    Parameters
    ----------
    expected_counts : tuple of int, optional
        ``(n_pos, n_neg)`` the caller is about to train on; a mismatch is a
        :class:`FormatError`.
    verify : bool
        Recompute the checksum over all entries (one sequential pass).
    in_memory : bool
        Load the entries instead of memory-mapping them.
    """
    hdr = read_header(path)
    n_pos, n_neg = hdr["n_pos"], hdr["n_neg"]
    n = n_pos + n_neg
    if expected_counts is not None and tuple(expected_counts) != (n_pos, n_neg):
        raise FormatError(
            f"{path}: cache holds n_pos={n_pos}, n_neg={n_neg}, "
            f"expected {tuple(expected_counts)}")
    size = os.path.getsize(path)
    if size != HEADER_SIZE + 8 * n * n:
        raise FormatError(f"{path}: size {size} does not match n={n}")
    mm = np.memmap(path, dtype="<f8", mode="r", offset=HEADER_SIZE, shape=(n, n))
    if verify and _checksum(mm) != hdr["checksum"]:
        raise FormatError(f"{path}: checksum mismatch")
    if in_memory:
        return KernelMatrix(n_pos, n_neg, np.array(mm, dtype=float), hdr["spec"])
    return KernelMatrix(n_pos, n_neg, mm, hdr["spec"], path=str(path))
