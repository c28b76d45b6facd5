import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from topdual.exceptions import AllocationTooLarge, DimensionMismatch, FormatError
from topdual.kernel import (HEADER_SIZE, KernelSpec, build_kernel_matrix, cross_kernel,
                            kernel_eval, read_cache, read_header, write_cache)

LIN = KernelSpec("linear")


def test_kernel_eval_examples():
    assert kernel_eval(KernelSpec("gaussian", 3.0), [1.0, 2.0], [1.0, 2.0]) == 1.0
    assert kernel_eval(LIN, [1, 2], [3, -1]) == 1.0
    # |x - y|^2 = 2
    assert kernel_eval(KernelSpec("gaussian", 0.5), [0, 0], [1, 1]) == pytest.approx(0.367879, abs=1e-6)
    with pytest.raises(DimensionMismatch):
        kernel_eval(LIN, [1, 2], [1, 2, 3])


def test_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec("gaussian", 0.0)
    with pytest.raises(ValueError):
        KernelSpec("poly")
    ks = KernelSpec("gaussian", 0.05)
    assert KernelSpec.from_dict(ks.to_dict()) == ks


@pytest.mark.parametrize("spec, Xp, Xn, expected", [
    (LIN, [[1, 0]], [[0, 1]], [[1, 0], [0, 1]]),
    (LIN, [[1, 1]], [[1, 1]], [[2, -2], [-2, 2]]),
    (KernelSpec("gaussian", 1.0), [[0.0]], [[0.0]], [[1, -1], [-1, 1]]),
])
def test_build_examples(spec, Xp, Xn, expected):
    K = build_kernel_matrix(spec, Xp, Xn)
    np.testing.assert_array_equal(K.entries, expected)


def test_column_access():
    K = build_kernel_matrix(LIN, [[1, 1]], [[1, 1]])
    np.testing.assert_array_equal(K.column(0), [2, -2])
    with pytest.raises(IndexError):
        K.column(2)


def _random(rng, n_pos=7, n_neg=9, d=3):
    return rng.normal(size=(n_pos, d)), rng.normal(size=(n_neg, d))


@pytest.mark.parametrize("spec", [LIN, KernelSpec("gaussian", 0.7)])
def test_structure(spec):
    rng = np.random.default_rng(0)
    Xp, Xn = _random(rng)
    K = build_kernel_matrix(spec, Xp, Xn)
    E = K.entries
    np.testing.assert_array_equal(E, E.T)
    X = np.vstack([Xp, Xn])
    U = cross_kernel(spec, X, X)
    np.testing.assert_allclose(K.unsigned(), U, atol=1e-14)
    assert np.all(E[:7, 7:] <= 1e-15) if spec.family == "gaussian" else True
    np.testing.assert_allclose(E[:7, 7:], -U[:7, 7:], atol=1e-14)
    assert np.linalg.eigvalsh(U).min() >= -1e-8
    if spec.family == "gaussian":
        np.testing.assert_array_equal(K.diag, 1.0)
    for i in range(K.n):
        for j in range(K.n):
            assert K.column(i)[j] == K.column(j)[i]


def test_build_is_deterministic_and_blocked():
    rng = np.random.default_rng(1)
    Xp, Xn = _random(rng, 300, 400, 5)
    spec = KernelSpec("gaussian", 0.3)
    a = build_kernel_matrix(spec, Xp, Xn)
    b = build_kernel_matrix(spec, Xp, Xn)
    assert a.entries.tobytes() == b.entries.tobytes()
    np.testing.assert_array_equal(a.entries, a.entries.T)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.integers(0, 10**6))
def test_quadratic_form_is_norm_of_w(n_pos, n_neg, d, seed):
    rng = np.random.default_rng(seed)
    Xp, Xn = rng.normal(size=(n_pos, d)), rng.normal(size=(n_neg, d))
    a, b = rng.uniform(0, 2, n_pos), rng.uniform(0, 2, n_neg)
    K = build_kernel_matrix(LIN, Xp, Xn)
    w = Xp.T @ a - Xn.T @ b
    v = np.r_[a, b]
    assert abs(v @ K.matvec(v) - w @ w) <= 1e-10 * max(1.0, w @ w)


def test_errors():
    with pytest.raises(DimensionMismatch):
        build_kernel_matrix(LIN, [[1, 2]], [[1, 2, 3]])
    with pytest.raises(DimensionMismatch):
        build_kernel_matrix(LIN, np.zeros((0, 2)), [[1, 2]])
    with pytest.raises(AllocationTooLarge):
        build_kernel_matrix(LIN, np.zeros((10, 2)), np.zeros((10, 2)), memory_budget=1000)


def test_cache_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    Xp, Xn = _random(rng, 5, 8)
    spec = KernelSpec("gaussian", 0.25)
    K = build_kernel_matrix(spec, Xp, Xn)
    path = tmp_path / "k.bin"
    write_cache(K, path)
    assert path.stat().st_size == HEADER_SIZE + 8 * 13 * 13
    R = read_cache(path)
    assert (R.n_pos, R.n_neg, R.spec) == (5, 8, spec)
    assert R.source == "disk"
    assert np.asarray(R.entries).tobytes() == K.entries.tobytes()
    np.testing.assert_array_equal(R.column(3), K.column(3))
    np.testing.assert_array_equal(R.matvec(np.ones(13)), K.matvec(np.ones(13)))
    M = read_cache(path, in_memory=True)
    assert M.source == "memory"
    hdr = read_header(path)
    assert hdr["n_pos"] == 5 and hdr["spec"] == spec


def test_build_to_disk_cache_matches_memory(tmp_path):
    rng = np.random.default_rng(3)
    Xp, Xn = _random(rng, 40, 600)
    spec = KernelSpec("gaussian", 0.5)
    D = build_kernel_matrix(spec, Xp, Xn, cache_path=tmp_path / "c.bin")
    M = build_kernel_matrix(spec, Xp, Xn)
    assert np.asarray(D.entries).tobytes() == M.entries.tobytes()
    read_cache(tmp_path / "c.bin", verify=True)


def test_cache_corruption(tmp_path):
    K = build_kernel_matrix(LIN, [[1.0, 2.0]], [[0.5, 1.0], [2.0, 0.0]])
    path = tmp_path / "k.bin"
    write_cache(K, path)
    raw = path.read_bytes()
    (tmp_path / "trunc.bin").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        read_cache(tmp_path / "trunc.bin")
    (tmp_path / "short.bin").write_bytes(raw[:10])
    with pytest.raises(FormatError):
        read_cache(tmp_path / "short.bin")
    (tmp_path / "magic.bin").write_bytes(b"X" + raw[1:])
    with pytest.raises(FormatError):
        read_cache(tmp_path / "magic.bin")
    flipped = bytearray(raw)
    flipped[-1] ^= 0x01
    (tmp_path / "flip.bin").write_bytes(bytes(flipped))
    with pytest.raises(FormatError):
        read_cache(tmp_path / "flip.bin")
    with pytest.raises(FormatError):
        read_cache(path, expected_counts=(2, 1))
