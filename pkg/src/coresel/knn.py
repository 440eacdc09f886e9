"""Exact and approximate nearest-neighbor search.

Two routes are kept deliberately separate and are never allowed to collapse
into one: :func:`brute_force_knn` / :func:`knn_within_subset` are exact
linear scans used as oracles and for small within-cluster work, while
:class:`HnswIndex` is a hierarchical navigable small world graph used for
whole-segment candidate queries where n is large.

The graph follows the classic construction: each node draws a level from a
geometric-like distribution ``floor(-ln(u) * (1/ln M))``, upper layers are
navigated greedily, and layer 0 is searched with a best-first beam of width
``ef``.  Neighbor lists keep the closest candidates (simple selection, no
spread heuristic); per-node degree is capped at ``M`` per layer and ``2M``
on layer 0.  Construction is batch-only: the index is immutable once built.

All distance ties are broken toward the lower item index.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass

import numpy as np

from .core import STREAM_INDEX, EmbeddingSet, Seed, rng_stream
from .errors import (
    BadMagic,
    DimensionMismatch,
    EmptyIndex,
    KTooLarge,
    QueryNotInSubset,
    TruncatedFile,
)

SNAPSHOT_MAGIC = b"HNSW"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class KnnResult:
    """Neighbors of one query, ascending by distance (ties: lower index)."""

    indices: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        assert self.indices.shape == self.distances.shape

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    @property
    def neighbors(self) -> list[tuple[int, float]]:
        return [(int(i), float(d)) for i, d in zip(self.indices, self.distances)]


def _as_matrix(data: np.ndarray | EmbeddingSet) -> np.ndarray:
    if isinstance(data, EmbeddingSet):
        return data.data
    return np.ascontiguousarray(data, dtype=np.float64)


def _order_by_distance(indices: np.ndarray, dist2: np.ndarray, k: int) -> KnnResult:
    # lexsort: primary key distance, secondary key index (lower index wins ties)
    order = np.lexsort((indices, dist2))[:k]
    d = np.sqrt(np.maximum(dist2[order], 0.0))
    return KnnResult(indices=indices[order].astype(np.int64), distances=d)


def brute_force_knn(data: np.ndarray | EmbeddingSet, query_index: int, k: int) -> KnnResult:
    """Exact k nearest neighbors of item ``query_index``, excluding itself."""
    x = _as_matrix(data)
    n = x.shape[0]
    if not 0 <= query_index < n:
        raise QueryNotInSubset(f"query index {query_index} outside [0, {n})")
    if not 1 <= k <= n - 1:
        raise KTooLarge(f"k={k} not in [1, {n - 1}]")
    diff = x - x[query_index]
    dist2 = np.einsum("ij,ij->i", diff, diff)
    mask = np.ones(n, dtype=bool)
    mask[query_index] = False
    idx = np.flatnonzero(mask)
    return _order_by_distance(idx, dist2[idx], k)


def knn_within_subset(
    data: np.ndarray | EmbeddingSet, subset: np.ndarray, query_index: int, k: int
) -> KnnResult:
    """Exact k-NN of ``query_index`` among ``subset`` members only.

    ``query_index`` must itself belong to the subset; it is excluded from
    its own neighbor list.
    """
    x = _as_matrix(data)
    members = np.asarray(subset, dtype=np.int64)
    if query_index not in members:
        raise QueryNotInSubset(f"query index {query_index} not in subset")
    others = members[members != query_index]
    if not 1 <= k <= others.size:
        raise KTooLarge(f"k={k} not in [1, {others.size}]")
    diff = x[others] - x[query_index]
    dist2 = np.einsum("ij,ij->i", diff, diff)
    return _order_by_distance(others, dist2, k)


@dataclass(frozen=True)
class HnswParams:
    m: int = 16
    ef_construction: int = 200

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"M must be >= 2, got {self.m}")
        if self.ef_construction < 1:
            raise ValueError(f"ef_construction must be >= 1, got {self.ef_construction}")

    @property
    def max_degree_base(self) -> int:
        return 2 * self.m

    @property
    def level_norm_factor(self) -> float:
        return 1.0 / np.log(self.m)


class HnswIndex:
    """Immutable hierarchical graph over a fixed vector matrix."""

    def __init__(
        self,
        vectors: np.ndarray,
        params: HnswParams,
        levels: np.ndarray,
        links: list[list[list[int]]],
        entry_point: int,
        max_level: int,
    ):
        self.vectors = vectors
        self.params = params
        self.levels = levels
        self.links = links
        self.entry_point = entry_point
        self.max_level = max_level
        self._row_norm2 = np.einsum("ij,ij->i", vectors, vectors)
        self._visit_stamp = np.zeros(vectors.shape[0], dtype=np.int64)
        self._visit_epoch = 0

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    # -- construction ------------------------------------------------------

    @classmethod
    def build(
        cls,
        data: np.ndarray | EmbeddingSet,
        params: HnswParams | None = None,
        seed: int | Seed = 0,
        *,
        stream_index: int = 0,
    ) -> "HnswIndex":
        """Build the graph by inserting items in index order 0..n-1.

        Deterministic for a fixed seed: node levels are the only random
        choices and are drawn up front from a dedicated stream.
        """
        params = params or HnswParams()
        x = _as_matrix(data)
        n = x.shape[0]
        if n < 1:
            raise EmptyIndex("cannot build an index over zero items")
        rng = rng_stream(seed, STREAM_INDEX, stream_index)
        # u in (0, 1]; floor(-ln(u) * mult) with mult = 1/ln(M)
        u = 1.0 - rng.random(n)
        levels = np.floor(-np.log(u) * params.level_norm_factor).astype(np.int64)
        links: list[list[list[int]]] = [
            [[] for _ in range(int(levels[i]) + 1)] for i in range(n)
        ]
        index = cls(x, params, levels, links, entry_point=0, max_level=int(levels[0]))
        for i in range(1, n):
            index._insert(i)
        return index

    def _dist2_many(self, ids: list[int], q: np.ndarray, q2: float) -> np.ndarray:
        idx = np.fromiter(ids, dtype=np.intp, count=len(ids))
        d2 = self._row_norm2[idx] + q2 - 2.0 * (self.vectors[idx] @ q)
        return np.maximum(d2, 0.0, out=d2)

    def _dist2_one(self, i: int, q: np.ndarray, q2: float) -> float:
        d2 = self._row_norm2[i] + q2 - 2.0 * float(self.vectors[i] @ q)
        return d2 if d2 > 0.0 else 0.0

    def _greedy_descend(self, q: np.ndarray, q2: float, ep: int, epd: float, level: int):
        """One-at-a-time descent within ``level`` until no neighbor improves."""
        improved = True
        while improved:
            improved = False
            neigh = self.links[ep][level]
            if not neigh:
                break
            d2 = self._dist2_many(neigh, q, q2)
            j = int(np.argmin(d2))
            if d2[j] < epd:
                ep, epd = neigh[j], float(d2[j])
                improved = True
        return ep, epd

    def _search_layer(
        self, q: np.ndarray, q2: float, entries: list[tuple[float, int]], ef: int, level: int
    ) -> list[tuple[float, int]]:
        """Best-first beam search on one layer; returns ascending (dist2, id)."""
        self._visit_epoch += 1
        epoch = self._visit_epoch
        stamp = self._visit_stamp
        rn2 = self._row_norm2
        vectors = self.vectors
        links = self.links
        push, pop = heapq.heappush, heapq.heappop
        candidates: list[tuple[float, int]] = []
        results: list[tuple[float, int]] = []  # max-heap via negated distance
        for d, i in entries:
            if stamp[i] == epoch:
                continue
            stamp[i] = epoch
            push(candidates, (d, i))
            push(results, (-d, i))
        while len(results) > ef:
            pop(results)
        worst = -results[0][0] if results else np.inf
        full = len(results) >= ef
        while candidates:
            d, c = pop(candidates)
            if full and d > worst:
                break
            neigh = links[c][level]
            if not neigh:
                continue
            idx = np.fromiter(neigh, dtype=np.intp, count=len(neigh))
            fresh = idx[stamp[idx] != epoch]
            if not fresh.size:
                continue
            stamp[fresh] = epoch
            d2 = rn2[fresh] + q2 - 2.0 * (vectors[fresh] @ q)
            for u, du in zip(fresh.tolist(), d2.tolist()):
                if not full or du < worst:
                    push(candidates, (du, u))
                    push(results, (-du, u))
                    if len(results) > ef:
                        pop(results)
                    worst = -results[0][0]
                    full = len(results) >= ef
        out = [(0.0 if nd > 0.0 else -nd, i) for nd, i in results]
        out.sort(key=lambda t: (t[0], t[1]))
        return out

    def _shrink(self, node: int, level: int) -> None:
        """Cap a neighbor list at its degree limit, keeping the closest."""
        cap = self.params.max_degree_base if level == 0 else self.params.m
        lst = self.links[node][level]
        if len(lst) <= cap:
            return
        idx = np.fromiter(lst, dtype=np.intp, count=len(lst))
        v = self.vectors[node]
        d2 = self._row_norm2[idx] + self._row_norm2[node] - 2.0 * (self.vectors[idx] @ v)
        keep = np.lexsort((idx, d2))[:cap]
        self.links[node][level] = [int(idx[t]) for t in keep]

    def _insert(self, i: int) -> None:
        q = self.vectors[i]
        q2 = float(self._row_norm2[i])
        node_level = int(self.levels[i])
        ep = self.entry_point
        epd = self._dist2_one(ep, q, q2)
        for level in range(self.max_level, node_level, -1):
            ep, epd = self._greedy_descend(q, q2, ep, epd, level)
        ef = self.params.ef_construction
        for level in range(min(node_level, self.max_level), -1, -1):
            found = self._search_layer(q, q2, [(epd, ep)], ef, level)
            chosen = found[: self.params.m]
            self.links[i][level] = [c for _, c in chosen]
            for _, c in chosen:
                self.links[c][level].append(i)
                self._shrink(c, level)
            epd, ep = found[0]
        if node_level > self.max_level:
            self.max_level = node_level
            self.entry_point = i

    # -- queries -----------------------------------------------------------

    def search(self, query: np.ndarray, k: int, ef_search: int = 100) -> KnnResult:
        """Approximate k nearest stored items to an arbitrary query vector."""
        if self.n == 0:
            raise EmptyIndex("index is empty")
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.d,):
            raise DimensionMismatch(f"query shape {q.shape} != ({self.d},)")
        if k < 1:
            raise KTooLarge(f"k must be >= 1, got {k}")
        k = min(k, self.n)
        q2 = float(np.dot(q, q))
        ep = self.entry_point
        epd = self._dist2_one(ep, q, q2)
        for level in range(self.max_level, 0, -1):
            ep, epd = self._greedy_descend(q, q2, ep, epd, level)
        ef = max(ef_search, k)
        found = self._search_layer(q, q2, [(epd, ep)], ef, 0)[:k]
        idx = np.array([i for _, i in found], dtype=np.int64)
        d2 = np.array([d for d, _ in found], dtype=np.float64)
        return KnnResult(indices=idx, distances=np.sqrt(d2))

    # -- snapshots ---------------------------------------------------------

    def save(self, path) -> None:
        """Write a little-endian binary snapshot of parameters + adjacency."""
        with open(path, "wb") as fh:
            fh.write(SNAPSHOT_MAGIC)
            fh.write(
                struct.pack(
                    "<IIIQQIQ",
                    SNAPSHOT_VERSION,
                    self.params.m,
                    self.params.ef_construction,
                    self.n,
                    self.d,
                    self.max_level,
                    self.entry_point,
                )
            )
            fh.write(self.levels.astype("<u4").tobytes())
            fh.write(self.vectors.astype("<f4").tobytes())
            for i in range(self.n):
                for level_links in self.links[i]:
                    fh.write(struct.pack("<I", len(level_links)))
                    if level_links:
                        fh.write(np.asarray(level_links, dtype="<u4").tobytes())

    @classmethod
    def load(cls, path) -> "HnswIndex":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != SNAPSHOT_MAGIC:
            raise BadMagic(f"expected {SNAPSHOT_MAGIC!r} header")
        header = struct.Struct("<IIIQQIQ")
        off = 4
        if len(blob) < off + header.size:
            raise TruncatedFile("snapshot header incomplete")
        version, m, efc, n, d, max_level, entry = header.unpack_from(blob, off)
        if version != SNAPSHOT_VERSION:
            raise BadMagic(f"unsupported snapshot version {version}")
        off += header.size
        need = n * 4 + n * d * 4
        if len(blob) < off + need:
            raise TruncatedFile("snapshot vector block incomplete")
        levels = np.frombuffer(blob, dtype="<u4", count=n, offset=off).astype(np.int64)
        off += n * 4
        vectors = (
            np.frombuffer(blob, dtype="<f4", count=n * d, offset=off)
            .astype(np.float64)
            .reshape(n, d)
        )
        off += n * d * 4
        links: list[list[list[int]]] = []
        for i in range(n):
            node_links = []
            for _ in range(int(levels[i]) + 1):
                if len(blob) < off + 4:
                    raise TruncatedFile("snapshot adjacency incomplete")
                (deg,) = struct.unpack_from("<I", blob, off)
                off += 4
                if len(blob) < off + deg * 4:
                    raise TruncatedFile("snapshot adjacency incomplete")
                ids = np.frombuffer(blob, dtype="<u4", count=deg, offset=off)
                off += deg * 4
                node_links.append([int(t) for t in ids])
            links.append(node_links)
        params = HnswParams(m=m, ef_construction=efc)
        return cls(
            np.ascontiguousarray(vectors),
            params,
            levels,
            links,
            entry_point=int(entry),
            max_level=int(max_level),
        )
