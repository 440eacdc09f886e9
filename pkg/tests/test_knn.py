"""Exact neighbor scans and the graph-index approximation.

The exact scan is the oracle for everything else in the package, so its own
tests are deliberately concrete (hand-placed points on a line).  The index
tests then hold the approximate route against that oracle: exhaustive beams
must match it exactly, wide beams must match it statistically.
"""

import numpy as np
import pytest

from coresel.core import EmbeddingSet, rng_stream
from coresel.errors import (
    BadMagic,
    DimensionMismatch,
    EmptyIndex,
    KTooLarge,
    QueryNotInSubset,
    TruncatedFile,
)
from coresel.knn import (
    HnswIndex,
    HnswParams,
    brute_force_knn,
    knn_within_subset,
)


def _line_points():
    # 1-D points 0, 1, 3 embedded in the plane.
    return np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])


class TestBruteForce:
    def test_nearest_on_a_line(self):
        res = brute_force_knn(_line_points(), 0, 1)
        assert res.neighbors == [(1, 1.0)]

    def test_two_nearest_on_a_line(self):
        res = brute_force_knn(_line_points(), 1, 2)
        assert res.neighbors == [(0, 1.0), (2, 2.0)]

    def test_query_never_returned(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(30, 4))
        for q in range(30):
            res = brute_force_knn(x, q, 5)
            assert q not in res.indices

    def test_distances_sorted_no_duplicates(self):
        rng = np.random.default_rng(1)
        for trial in range(20):
            x = rng.normal(size=(25, 3))
            q = int(rng.integers(25))
            res = brute_force_knn(x, q, 10)
            assert np.all(np.diff(res.distances) >= 0)
            assert len(set(res.indices.tolist())) == len(res)

    def test_tie_breaks_toward_lower_index(self):
        # Three copies of the same point: both duplicates tie at distance 0.
        x = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [5.0, 0.0]])
        res = brute_force_knn(x, 2, 2)
        assert res.indices.tolist() == [0, 1]
        np.testing.assert_array_equal(res.distances, [0.0, 0.0])

    def test_k_bounds(self):
        x = _line_points()
        with pytest.raises(KTooLarge):
            brute_force_knn(x, 0, 3)
        with pytest.raises(KTooLarge):
            brute_force_knn(x, 0, 0)

    def test_bad_query_index(self):
        with pytest.raises(QueryNotInSubset):
            brute_force_knn(_line_points(), 3, 1)

    def test_accepts_embedding_set(self):
        emb = EmbeddingSet("e", np.eye(4))
        res = brute_force_knn(emb, 0, 2)
        assert len(res) == 2


class TestKnnWithinSubset:
    def test_singleton_subset_has_no_neighbors(self):
        x = _line_points()
        with pytest.raises(KTooLarge):
            knn_within_subset(x, np.array([1]), 1, 1)

    def test_whole_set_reduces_to_brute_force(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(20, 3))
        whole = np.arange(20)
        for q in (0, 7, 19):
            a = knn_within_subset(x, whole, q, 6)
            b = brute_force_knn(x, q, 6)
            np.testing.assert_array_equal(a.indices, b.indices)
            np.testing.assert_allclose(a.distances, b.distances)

    def test_matches_materialized_subset(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(100, 5))
        subset = np.sort(rng.choice(100, size=10, replace=False))
        q = int(subset[3])
        res = knn_within_subset(x, subset, q, 4)
        # Oracle: copy the ten rows into their own array and scan that.
        small = x[subset]
        small_res = brute_force_knn(small, 3, 4)
        np.testing.assert_array_equal(res.indices, subset[small_res.indices])
        np.testing.assert_allclose(res.distances, small_res.distances)

    def test_query_must_belong(self):
        x = _line_points()
        with pytest.raises(QueryNotInSubset):
            knn_within_subset(x, np.array([0, 1]), 2, 1)


class TestHnswParams:
    def test_defaults(self):
        p = HnswParams()
        assert p.m == 16 and p.ef_construction == 200
        assert p.max_degree_base == 32
        assert p.level_norm_factor == pytest.approx(1.0 / np.log(16))

    def test_validation(self):
        with pytest.raises(ValueError):
            HnswParams(m=1)
        with pytest.raises(ValueError):
            HnswParams(ef_construction=0)


class TestHnswBuild:
    def test_single_node(self):
        idx = HnswIndex.build(np.array([[1.0, 0.0]]), seed=3)
        assert idx.n == 1
        assert idx.entry_point == 0
        assert idx.max_level == int(idx.levels[0])
        res = idx.search(np.array([0.9, 0.1]), 1)
        assert res.indices.tolist() == [0]

    def test_empty_input_rejected(self):
        with pytest.raises(EmptyIndex):
            HnswIndex.build(np.zeros((0, 3)))

    def test_deterministic_rebuild(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(300, 8))
        a = HnswIndex.build(x, seed=42)
        b = HnswIndex.build(x, seed=42)
        assert a.entry_point == b.entry_point
        assert a.max_level == b.max_level
        np.testing.assert_array_equal(a.levels, b.levels)
        assert a.links == b.links

    def test_seed_changes_levels(self):
        rng = np.random.default_rng(18)
        x = rng.normal(size=(400, 4))
        a = HnswIndex.build(x, seed=1)
        b = HnswIndex.build(x, seed=2)
        assert not np.array_equal(a.levels, b.levels)

    def test_degree_caps_respected(self):
        rng = np.random.default_rng(19)
        x = rng.normal(size=(500, 6))
        params = HnswParams(m=8)
        idx = HnswIndex.build(x, params, seed=0)
        for node in range(idx.n):
            for level, neigh in enumerate(idx.links[node]):
                cap = params.max_degree_base if level == 0 else params.m
                assert len(neigh) <= cap
                assert node not in neigh
                assert len(set(neigh)) == len(neigh)


class TestHnswSearch:
    def test_stored_vector_found_at_zero_distance(self):
        rng = np.random.default_rng(23)
        x = rng.normal(size=(128, 5))
        idx = HnswIndex.build(x, seed=9)
        res = idx.search(x[37], 1)
        assert res.indices.tolist() == [37]
        assert res.distances[0] == pytest.approx(0.0, abs=1e-9)

    def test_exhaustive_beam_matches_brute_force(self):
        # With ef covering the whole set, the beam search degenerates to an
        # exact scan and must agree with the oracle index-for-index.
        rng = np.random.default_rng(29)
        for trial in range(10):
            n = int(rng.integers(8, 65))
            x = rng.normal(size=(n, 4))
            idx = HnswIndex.build(x, seed=trial)
            q = rng.normal(size=4)
            got = idx.search(q, n, ef_search=n)
            diff = x - q
            d2 = np.einsum("ij,ij->i", diff, diff)
            order = np.lexsort((np.arange(n), d2))
            np.testing.assert_array_equal(got.indices, order)
            np.testing.assert_allclose(got.distances, np.sqrt(d2[order]), atol=1e-9)

    def test_k_larger_than_ef_still_returns_k(self):
        rng = np.random.default_rng(31)
        x = rng.normal(size=(200, 6))
        idx = HnswIndex.build(x, seed=0)
        res = idx.search(x[0], 50, ef_search=10)  # ef is raised to k internally
        assert len(res) == 50
        assert np.all(np.diff(res.distances) >= 0)

    def test_query_shape_checked(self):
        idx = HnswIndex.build(np.eye(3), seed=0)
        with pytest.raises(DimensionMismatch):
            idx.search(np.zeros(4), 1)
        with pytest.raises(KTooLarge):
            idx.search(np.zeros(3), 0)

    def test_recall_monotone_in_beam_width(self):
        # Averaged over enough queries, widening the beam never hurts by
        # more than statistical noise.
        rng = rng_stream(77, 0)
        n, d, k, queries = 2000, 16, 10, 150
        x = rng.normal(size=(n, d))
        idx = HnswIndex.build(x, seed=77)
        truth = {}
        for qi in range(queries):
            truth[qi] = set(brute_force_knn(x, qi, k).indices.tolist())

        def recall(ef):
            hits = 0
            for qi in range(queries):
                res = idx.search(x[qi], k + 1, ef_search=ef)
                kept = [i for i in res.indices.tolist() if i != qi][:k]
                hits += len(truth[qi] & set(kept))
            return hits / (queries * k)

        assert recall(200) >= recall(50) - 0.01


class TestHnswSnapshot:
    def _build_f32_exact(self, n=150, d=6, seed=4):
        # Quantize the data to float32 first so the snapshot (which stores
        # float32) reproduces the vectors bit-exactly.
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, d)).astype(np.float32).astype(np.float64)
        return x, HnswIndex.build(x, seed=seed)

    def test_round_trip_structure(self, tmp_path):
        x, idx = self._build_f32_exact()
        path = tmp_path / "graph.hnsw"
        idx.save(path)
        loaded = HnswIndex.load(path)
        assert loaded.params == idx.params
        assert loaded.entry_point == idx.entry_point
        assert loaded.max_level == idx.max_level
        np.testing.assert_array_equal(loaded.levels, idx.levels)
        assert loaded.links == idx.links
        np.testing.assert_array_equal(loaded.vectors, idx.vectors)

    def test_round_trip_search_identical(self, tmp_path):
        x, idx = self._build_f32_exact()
        path = tmp_path / "graph.hnsw"
        idx.save(path)
        loaded = HnswIndex.load(path)
        rng = np.random.default_rng(99)
        for _ in range(20):
            q = rng.normal(size=x.shape[1])
            a = idx.search(q, 5)
            b = loaded.search(q, 5)
            np.testing.assert_array_equal(a.indices, b.indices)
            np.testing.assert_allclose(a.distances, b.distances)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.hnsw"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(BadMagic):
            HnswIndex.load(path)

    def test_truncation_detected(self, tmp_path):
        _, idx = self._build_f32_exact(n=40)
        path = tmp_path / "graph.hnsw"
        idx.save(path)
        blob = path.read_bytes()
        for cut in (6, 30, len(blob) // 2, len(blob) - 3):
            clipped = tmp_path / f"cut{cut}.hnsw"
            clipped.write_bytes(blob[:cut])
            with pytest.raises(TruncatedFile):
                HnswIndex.load(clipped)

    def test_version_checked(self, tmp_path):
        _, idx = self._build_f32_exact(n=10)
        path = tmp_path / "graph.hnsw"
        idx.save(path)
        blob = bytearray(path.read_bytes())
        blob[4] = 99  # version field
        path.write_bytes(bytes(blob))
        with pytest.raises(BadMagic):
            HnswIndex.load(path)
