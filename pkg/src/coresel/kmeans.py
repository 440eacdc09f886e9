"""Deterministic Lloyd's k-means over embedding rows.

Initialization samples m distinct items uniformly without replacement from a
seeded stream (a k-means++ style D^2 sampler is available behind a flag but
is off by default).  Assignment ties go to the lower centroid id.  An empty
cluster is repaired by reseeding it with the item farthest from its centroid
among the largest cluster's members; at most m repairs happen per iteration.
Iteration stops when assignments are unchanged or the WCSS improvement drops
below ``tol``, whichever comes first.

WCSS is accumulated in float64 and recorded after every update step, so
callers can assert the monotone descent of the objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import STREAM_KMEANS, EmbeddingSet, Seed, rng_stream
from .errors import BudgetExceedsItems, DimensionMismatch


@dataclass
class Clustering:
    m: int
    assignments: np.ndarray
    centroids: np.ndarray
    wcss: float
    iterations_run: int
    wcss_history: list[float] = field(default_factory=list)

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == j)


def _as_matrix(data: np.ndarray | EmbeddingSet) -> np.ndarray:
    if isinstance(data, EmbeddingSet):
        return data.data
    return np.ascontiguousarray(data, dtype=np.float64)


def _assign(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x - c||^2 = ||x||^2 - 2 x.c + ||c||^2; argmin picks the first (lowest
    # id) centroid on exact ties.
    x2 = np.einsum("ij,ij->i", x, x)
    c2 = np.einsum("ij,ij->i", centroids, centroids)
    d2 = x2[:, None] - 2.0 * (x @ centroids.T) + c2[None, :]
    return np.argmin(d2, axis=1)


def _wcss(x: np.ndarray, assignments: np.ndarray, centroids: np.ndarray) -> float:
    diff = x - centroids[assignments]
    return float(np.einsum("ij,ij->", diff, diff))


def assign_to_nearest(centroids: np.ndarray, vector: np.ndarray) -> int:
    """Index of the closest centroid (ties to the lower id)."""
    c = np.ascontiguousarray(centroids, dtype=np.float64)
    v = np.asarray(vector, dtype=np.float64)
    if v.shape != (c.shape[1],):
        raise DimensionMismatch(f"vector shape {v.shape} != ({c.shape[1]},)")
    diff = c - v
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def _repair_empty(
    x: np.ndarray, assignments: np.ndarray, centroids: np.ndarray, counts: np.ndarray
) -> None:
    """Reseed empty clusters in place, lowest empty id first."""
    for j in np.flatnonzero(counts == 0):
        # Largest cluster by member count, ties to the lower id.
        big = int(np.argmax(counts))
        members = np.flatnonzero(assignments == big)
        diff = x[members] - centroids[big]
        d2 = np.einsum("ij,ij->i", diff, diff)
        take = members[int(np.argmax(d2))]  # farthest; argmax tie -> lower index
        assignments[take] = j
        centroids[j] = x[take]
        counts[j] = 1
        counts[big] -= 1
        remaining = np.flatnonzero(assignments == big)
        centroids[big] = x[remaining].mean(axis=0)


def _init_random(x: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    picks = rng.choice(x.shape[0], size=m, replace=False)
    return x[picks].copy()


def _init_plusplus(x: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((m, x.shape[1]), dtype=np.float64)
    centroids[0] = x[int(rng.integers(n))]
    diff = x - centroids[0]
    d2 = np.einsum("ij,ij->i", diff, diff)
    for j in range(1, m):
        total = float(d2.sum())
        if total <= 0.0:
            centroids[j] = x[int(rng.integers(n))]
        else:
            r = rng.random() * total
            pick = int(np.searchsorted(np.cumsum(d2), r))
            pick = min(pick, n - 1)
            centroids[j] = x[pick]
            diff = x - centroids[j]
            d2 = np.minimum(d2, np.einsum("ij,ij->i", diff, diff))
    return centroids


def kmeans_fit(
    data: np.ndarray | EmbeddingSet,
    m: int,
    seed: int | Seed = 0,
    *,
    max_iter: int = 100,
    tol: float = 1e-6,
    plusplus: bool = False,
    stream_index: int = 0,
) -> Clustering:
    """Cluster rows of ``data`` into m groups.

    The returned centroids are the arithmetic means of their final members,
    and every cluster id has at least one member.
    """
    x = _as_matrix(data)
    n = x.shape[0]
    if not 1 <= m <= n:
        raise BudgetExceedsItems(f"m={m} not in [1, {n}]")
    rng = rng_stream(seed, STREAM_KMEANS, stream_index)
    centroids = (_init_plusplus if plusplus else _init_random)(x, m, rng)

    assignments = None
    prev_wcss = np.inf
    history: list[float] = []
    iterations = 0
    for _ in range(max_iter):
        new_assign = _assign(x, centroids)
        if assignments is not None and np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        iterations += 1
        counts = np.bincount(assignments, minlength=m)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assignments, x)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            _repair_empty(x, assignments, centroids, counts)
        wcss = _wcss(x, assignments, centroids)
        history.append(wcss)
        if prev_wcss - wcss < tol:
            break
        prev_wcss = wcss

    assert assignments is not None
    return Clustering(
        m=m,
        assignments=assignments.astype(np.int64),
        centroids=centroids,
        wcss=history[-1],
        iterations_run=iterations,
        wcss_history=history,
    )
