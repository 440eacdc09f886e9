"""Vector primitives, seed plumbing, and the EmbeddingSet container."""

import math

import numpy as np
import pytest

from coresel.core import (
    DEFAULT_WEIGHTS,
    EmbeddingSet,
    RatioWeights,
    Seed,
    as_seed,
    euclidean,
    l2_normalize,
    rng_stream,
)
from coresel.errors import (
    DimensionMismatch,
    NonFiniteEntry,
    ZeroVector,
    ZeroVectorRow,
)


class TestSeed:
    def test_accepts_64_bit_range(self):
        Seed(0)
        Seed(2**64 - 1)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            Seed(-1)
        with pytest.raises(ValueError):
            Seed(2**64)

    def test_rejects_non_int(self):
        with pytest.raises(TypeError):
            Seed(1.5)

    def test_as_seed_passthrough(self):
        s = Seed(7)
        assert as_seed(s) is s
        assert as_seed(7) == s


class TestRngStream:
    def test_same_path_same_draws(self):
        a = rng_stream(123, 4, 5).random(8)
        b = rng_stream(123, 4, 5).random(8)
        np.testing.assert_array_equal(a, b)

    def test_different_path_different_draws(self):
        a = rng_stream(123, 4, 5).random(8)
        b = rng_stream(123, 4, 6).random(8)
        assert not np.array_equal(a, b)

    def test_different_seed_different_draws(self):
        a = rng_stream(1, 0).random(8)
        b = rng_stream(2, 0).random(8)
        assert not np.array_equal(a, b)

    def test_sibling_streams_do_not_interfere(self):
        # Consuming one stream must not shift its siblings.
        a_fresh = rng_stream(9, 0, 0).random(4)
        other = rng_stream(9, 0, 1)
        other.random(1000)
        a_again = rng_stream(9, 0, 0).random(4)
        np.testing.assert_array_equal(a_fresh, a_again)


class TestL2Normalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8])

    def test_unit_vector_unchanged(self):
        np.testing.assert_allclose(l2_normalize([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0])

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVector):
            l2_normalize([0.0, 0.0])

    def test_near_zero_vector_rejected(self):
        with pytest.raises(ZeroVector):
            l2_normalize([1e-13, 0.0])

    def test_idempotent(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            v = rng.normal(size=rng.integers(2, 16))
            once = l2_normalize(v)
            twice = l2_normalize(once)
            np.testing.assert_allclose(once, twice, atol=1e-9)

    def test_direction_preserved(self):
        v = np.array([2.0, -1.0, 2.0])
        u = l2_normalize(v)
        np.testing.assert_allclose(np.cross([2.0, -1.0, 2.0][:3], u), 0.0, atol=1e-12)
        assert np.dot(u, v) > 0


class TestEuclidean:
    def test_345(self):
        assert euclidean([0.0, 0.0], [3.0, 4.0]) == pytest.approx(5.0)

    def test_identity(self):
        v = np.array([1.5, -2.5, 0.25])
        assert euclidean(v, v) == 0.0

    def test_orthonormal_pair(self):
        assert euclidean([1.0, 0.0], [0.0, 1.0]) == pytest.approx(math.sqrt(2.0))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            euclidean([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_symmetry_fuzz(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            a = rng.normal(size=6)
            b = rng.normal(size=6)
            assert euclidean(a, b) == euclidean(b, a)

    def test_unit_sphere_dot_identity(self):
        # For unit vectors, squared distance equals 2 - 2 cos.
        rng = np.random.default_rng(8)
        for _ in range(100):
            a = l2_normalize(rng.normal(size=12))
            b = l2_normalize(rng.normal(size=12))
            lhs = euclidean(a, b) ** 2
            rhs = 2.0 - 2.0 * float(np.dot(a, b))
            assert lhs == pytest.approx(rhs, abs=1e-6)


class TestRatioWeights:
    def test_normalizes_to_unit_sum(self):
        w = RatioWeights((1.0, 1.0, 2.0))
        np.testing.assert_allclose(tuple(w), (0.25, 0.25, 0.5))
        assert math.fsum(w.weights) == pytest.approx(1.0, abs=1e-9)

    def test_default_weights(self):
        np.testing.assert_allclose(tuple(DEFAULT_WEIGHTS), (0.25, 0.15, 0.6))

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            RatioWeights((0.5, 0.0))
        with pytest.raises(ValueError):
            RatioWeights((0.5, -0.1))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            RatioWeights((1.0, float("nan")))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            RatioWeights(())

    def test_len_and_iter(self):
        w = RatioWeights((3.0, 1.0))
        assert len(w) == 2
        assert list(w) == [0.75, 0.25]


class TestEmbeddingSet:
    def test_rows_are_normalized(self):
        emb = EmbeddingSet("e", [[3.0, 4.0], [0.0, 2.0]])
        np.testing.assert_allclose(emb.data, [[0.6, 0.8], [0.0, 1.0]])
        assert emb.n == 2 and emb.d == 2 and len(emb) == 2

    def test_normalize_false_keeps_rows(self):
        raw = np.array([[3.0, 4.0]])
        emb = EmbeddingSet("e", raw, normalize=False)
        np.testing.assert_array_equal(emb.data, raw)

    def test_non_finite_reports_row(self):
        with pytest.raises(NonFiniteEntry) as exc:
            EmbeddingSet("e", [[1.0, 0.0], [np.nan, 1.0], [0.0, 1.0]])
        assert exc.value.row == 1

    def test_zero_row_reports_row(self):
        with pytest.raises(ZeroVectorRow) as exc:
            EmbeddingSet("e", [[1.0, 0.0], [0.0, 0.0]])
        assert exc.value.row == 1

    def test_rejects_bad_shapes(self):
        with pytest.raises(DimensionMismatch):
            EmbeddingSet("e", np.zeros((0, 3)))
        with pytest.raises(DimensionMismatch):
            EmbeddingSet("e", np.ones(5))

    def test_unit_norm_after_construction(self):
        rng = np.random.default_rng(21)
        emb = EmbeddingSet("e", rng.normal(size=(40, 7)))
        assert emb.max_norm_error() < 1e-12
        emb.check_unit_rows()

    def test_data_is_float64_contiguous(self):
        emb = EmbeddingSet("e", np.ones((3, 2), dtype=np.float32))
        assert emb.data.dtype == np.float64
        assert emb.data.flags["C_CONTIGUOUS"]
