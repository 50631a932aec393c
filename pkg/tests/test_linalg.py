"""SVD/nuclear-norm kernels against an eigendecomposition oracle, plus
the tensor blob format."""

import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from energyprune.linalg import (DomainError, ShapeError, frobenius_norm,
                                make_rng, nuclear_norm, read_blob,
                                singular_values, svd, write_blob)
from helpers import oracle_nuclear_norm, oracle_singular_values


def _ortho_err(q):
    return np.max(np.abs(q.T @ q - np.eye(q.shape[1])))


class TestSvd:
    @pytest.mark.parametrize("shape", [(1, 1), (5, 3), (3, 5), (8, 8),
                                       (1, 7), (7, 1), (20, 4)])
    def test_reconstruction_and_factors(self, shape):
        a = make_rng(shape[0] * 100 + shape[1]).normal(size=shape)
        res = svd(a)
        r = min(shape)
        assert res.u.shape == (shape[0], r)
        assert res.s.shape == (r,)
        assert res.v.shape == (shape[1], r)
        assert np.all(np.diff(res.s) <= 0) and np.all(res.s >= 0)
        scale = max(np.linalg.norm(a), 1.0)
        assert np.max(np.abs(res.reconstruct() - a)) / scale < 1e-10
        assert _ortho_err(res.u) < 1e-10
        assert _ortho_err(res.v) < 1e-10

    def test_matches_eigendecomposition_oracle(self):
        rng = make_rng(42)
        for _ in range(50):
            m, n = rng.integers(1, 20, size=2)
            a = rng.normal(size=(m, n)) * rng.choice([1e-3, 1.0, 1e3])
            s = singular_values(a)
            ref = oracle_singular_values(a)
            scale = max(ref[0], 1e-30)
            assert np.max(np.abs(s - ref)) / scale < 1e-10

    def test_rank_deficient(self):
        rng = make_rng(7)
        col = rng.normal(size=(6, 1))
        a = np.hstack([col, 2 * col, -col])  # rank 1
        res = svd(a)
        assert np.sum(res.s > 0) == 1
        assert _ortho_err(res.u) < 1e-10  # completed columns stay orthonormal
        assert np.max(np.abs(res.reconstruct() - a)) < 1e-10

    def test_zero_matrix(self):
        res = svd(np.zeros((4, 3)))
        assert np.all(res.s == 0)
        assert _ortho_err(res.u) < 1e-12
        assert _ortho_err(res.v) < 1e-12

    def test_known_diagonal(self):
        a = np.diag([3.0, 1.0, 2.0])
        assert np.allclose(singular_values(a), [3.0, 2.0, 1.0])
        assert nuclear_norm(a) == pytest.approx(6.0)

    def test_input_validation(self):
        with pytest.raises(ShapeError):
            svd(np.zeros(3))
        with pytest.raises(ShapeError):
            svd(np.zeros((0, 3)))
        with pytest.raises(DomainError):
            svd(np.array([[1.0, np.nan]]))
        with pytest.raises(DomainError):
            frobenius_norm(np.array([[np.inf, 0.0]]))


finite_matrices = st.integers(1, 12).flatmap(
    lambda m: st.integers(1, 12).flatmap(
        lambda n: st.lists(
            st.floats(-1e6, 1e6, allow_nan=False),
            min_size=m * n, max_size=m * n,
        ).map(lambda vals: np.array(vals).reshape(m, n))))


class TestNuclearProperties:
    @settings(max_examples=60, deadline=None)
    @given(finite_matrices)
    def test_matches_oracle(self, a):
        assert nuclear_norm(a) == pytest.approx(
            oracle_nuclear_norm(a), rel=1e-8, abs=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(finite_matrices)
    def test_bounds_and_transpose(self, a):
        nn = nuclear_norm(a)
        fro = frobenius_norm(a)
        r = min(a.shape)
        assert fro - 1e-6 <= nn * (1 + 1e-9)
        assert nn <= np.sqrt(r) * fro * (1 + 1e-9) + 1e-6
        assert nuclear_norm(a.T) == pytest.approx(nn, rel=1e-8, abs=1e-8)

    @settings(max_examples=30, deadline=None)
    @given(finite_matrices, st.floats(-100, 100, allow_nan=False))
    def test_absolute_homogeneity(self, a, c):
        assert nuclear_norm(c * a) == pytest.approx(
            abs(c) * nuclear_norm(a), rel=1e-8, abs=1e-6)


class TestBlob:
    @pytest.mark.parametrize("shape", [(3,), (2, 3), (2, 3, 4), (1, 1, 1, 5)])
    def test_roundtrip(self, shape):
        a = make_rng(1).normal(size=shape)
        buf = io.BytesIO()
        write_blob(buf, a)
        buf.seek(0)
        back = read_blob(buf)
        assert back.shape == a.shape
        assert back.dtype == np.float64
        # payload is float32, so the roundtrip is exact at that precision
        assert np.array_equal(back, a.astype(np.float32).astype(np.float64))

    def test_layout_is_little_endian_f32(self):
        buf = io.BytesIO()
        write_blob(buf, np.array([[1.0, 2.0]]))
        raw = buf.getvalue()
        assert raw[:4] == (2).to_bytes(4, "little")
        assert raw[4:8] == (1).to_bytes(4, "little")
        assert raw[8:12] == (2).to_bytes(4, "little")
        assert np.frombuffer(raw[12:], dtype="<f4").tolist() == [1.0, 2.0]

    def test_write_is_deterministic(self):
        a = make_rng(2).normal(size=(4, 5))
        b1, b2 = io.BytesIO(), io.BytesIO()
        write_blob(b1, a)
        write_blob(b2, a)
        assert b1.getvalue() == b2.getvalue()


def test_make_rng_is_stable_stream():
    a = make_rng(123).normal(size=5)
    b = make_rng(123).normal(size=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, make_rng(124).normal(size=5))
