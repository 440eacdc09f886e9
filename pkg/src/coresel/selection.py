"""Cluster-based subset selection over an embedded sequence.

The pipeline picks ``m`` of ``n`` items in four steps:

1. Partition the sequence into contiguous segments by ratio weights, and
   apportion both segment lengths and per-segment budgets by the largest
   remainder method (budgets clamped to segment capacity).
2. Cluster each segment with k-means, using the segment's budget as the
   cluster count.
3. Seed the selection with each cluster's density peak: the member with the
   smallest average distance to its k nearest neighbors inside the cluster.
   Local density is ``(k/n) / (A_d * dbar**d)`` with ``A_d`` the unit-ball
   volume; the log form is used because the direct form underflows at high
   dimension, and for peak picking only the ranking of ``dbar`` matters.
4. Refine for T synchronous rounds: each cluster's pick is re-chosen as the
   argmax of ``1/dbar - lambda * ema_phi`` over the h nearest neighbors of
   the incumbent (intersected with the cluster, plus the incumbent), where
   ``ema_phi`` is an exponential moving average of the inverse-distance
   repulsion against the other clusters' previous picks.

All ties break toward the lower item index, and every random choice flows
from the master seed through segment-local streams, so reruns are
byte-identical and segments never influence one another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import DEFAULT_WEIGHTS, EmbeddingSet, RatioWeights, Seed, as_seed
from .errors import BudgetExceedsItems, DegenerateDistance, KTooLarge
from .kmeans import Clustering, kmeans_fit
from .knn import HnswIndex, HnswParams, brute_force_knn

_DENSITY_CHUNK_BYTES = 1 << 27  # cap on pairwise-distance scratch space


# ---------------------------------------------------------------------------
# Partitioning


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    budget: int

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class PartitionPlan:
    segments: tuple[Segment, ...]

    @property
    def n(self) -> int:
        return self.segments[-1].end if self.segments else 0

    @property
    def m(self) -> int:
        return sum(s.budget for s in self.segments)


def largest_remainder(total: int, weights: RatioWeights) -> np.ndarray:
    """Apportion ``total`` integer units across weights.

    Floors the fractional quotas, then hands the leftover units to the
    largest remainders (ties to the lower index).  Every allocation is
    within one unit of its exact quota.
    """
    w = np.asarray(tuple(weights), dtype=np.float64)
    quotas = total * w
    base = np.floor(quotas).astype(np.int64)
    leftover = int(total - base.sum())
    if leftover > 0:
        frac = quotas - base
        order = np.lexsort((np.arange(w.size), -frac))
        base[order[:leftover]] += 1
    return base


def make_partition_plan(
    n: int, m: int, weights: RatioWeights = DEFAULT_WEIGHTS
) -> PartitionPlan:
    """Contiguous segments covering [0, n) with budgets summing to m."""
    if not 1 <= m <= n:
        raise BudgetExceedsItems(f"m={m} not in [1, {n}]")
    lengths = largest_remainder(n, weights)
    budgets = largest_remainder(m, weights)
    # Clamp any budget above its segment capacity; pour the excess into the
    # segments with the most remaining room, one unit at a time.
    over = budgets - lengths
    excess = int(over[over > 0].sum())
    budgets = np.minimum(budgets, lengths)
    while excess > 0:
        capacity = lengths - budgets
        pick = int(np.argmax(capacity))
        budgets[pick] += 1
        excess -= 1
    starts = np.concatenate(([0], np.cumsum(lengths)))
    segments = tuple(
        Segment(int(starts[i]), int(starts[i + 1]), int(budgets[i]))
        for i in range(len(lengths))
    )
    plan = PartitionPlan(segments)
    assert plan.n == n and plan.m == m
    return plan


# ---------------------------------------------------------------------------
# Parameters and state


@dataclass(frozen=True)
class SelectionParams:
    """Knobs for density estimation and diversity refinement."""

    k: int = 10
    alpha: float = 0.5
    beta: float = 0.9
    lam: float = 0.5
    iterations: int = 10
    h: int = 64
    epsilon: float = 1e-12

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must be in (0, 1]")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.h < 1:
            raise ValueError("h must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class SelectionState:
    """Per-segment refinement state after iteration ``t``.

    ``selected`` holds one segment-local index per cluster, in cluster
    order.  ``ema_phi`` carries each item's repulsion average; an item
    enters the map the first time it appears in any candidate set.
    """

    t: int
    selected: tuple[int, ...]
    ema_phi: dict[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class SelectionResult:
    id: str
    n: int
    m: int
    weights: tuple[float, ...]
    plan: PartitionPlan
    selected_indices: tuple[int, ...]
    per_segment: tuple[tuple[int, ...], ...]
    params: SelectionParams
    seed: int
    backend: str


# ---------------------------------------------------------------------------
# Density


def log_unit_ball_volume(d: int) -> float:
    """ln of the d-dimensional unit-ball volume pi^(d/2) / Gamma(d/2 + 1)."""
    return 0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1.0)


def log_density(
    view: np.ndarray | EmbeddingSet,
    item: int,
    k: int,
    n_total: int,
    *,
    epsilon: float = 1e-12,
) -> float:
    """Log local density of ``item`` within ``view``.

    Estimated from the average distance ``dbar`` to the item's k nearest
    neighbors in the view: ``ln k - ln n_total - ln A_d - d * ln dbar``.
    Working in logs keeps the value finite at dimensions where ``A_d`` and
    ``dbar**d`` underflow float64.
    """
    x = view.data if isinstance(view, EmbeddingSet) else np.asarray(view, dtype=np.float64)
    res = brute_force_knn(x, item, k)
    dbar = float(res.distances.mean())
    if dbar < epsilon:
        raise DegenerateDistance(f"average neighbor distance {dbar} below epsilon")
    d = x.shape[1]
    return math.log(k) - math.log(n_total) - log_unit_ball_volume(d) - d * math.log(dbar)


def _avg_knn_distances(vectors: np.ndarray, k: int) -> np.ndarray:
    """Average distance to the k nearest neighbors, for every row.

    k is clipped to size-1; a single row gets 0.0 (degenerate, handled by
    the scoring floor).  Row chunks keep the pairwise scratch bounded.
    """
    s = vectors.shape[0]
    k_eff = min(k, s - 1)
    if k_eff < 1:
        return np.zeros(s, dtype=np.float64)
    out = np.empty(s, dtype=np.float64)
    x2 = np.einsum("ij,ij->i", vectors, vectors)
    rows = max(1, _DENSITY_CHUNK_BYTES // (8 * s))
    for lo in range(0, s, rows):
        hi = min(lo + rows, s)
        block = vectors[lo:hi]
        d2 = x2[lo:hi, None] - 2.0 * (block @ vectors.T) + x2[None, :]
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf  # exclude self
        part = np.partition(d2, k_eff - 1, axis=1)[:, :k_eff]
        out[lo:hi] = np.sqrt(part).mean(axis=1)
    return out


def density_peak(view: np.ndarray | EmbeddingSet, k: int) -> int:
    """Index of the member with the smallest average k-NN distance.

    Maximizing the log density at fixed k, n, d is the same as minimizing
    ``dbar``, so only the distance ranking is computed.  Ties go to the
    lower index.
    """
    x = view.data if isinstance(view, EmbeddingSet) else np.asarray(view, dtype=np.float64)
    if k < 1:
        raise KTooLarge("k must be >= 1")
    dbar = _avg_knn_distances(x, k)
    return int(np.argmin(dbar))


def cluster_densities(
    segment: np.ndarray, clustering: Clustering, k: int
) -> np.ndarray:
    """Within-cluster average k-NN distance for every segment item."""
    dbar = np.empty(segment.shape[0], dtype=np.float64)
    for j in range(clustering.m):
        members = clustering.members(j)
        dbar[members] = _avg_knn_distances(segment[members], k)
    return dbar


def density_peaks(segment: np.ndarray, clustering: Clustering, k: int) -> tuple[int, ...]:
    """One segment-local peak per cluster, in cluster order."""
    dbar = cluster_densities(segment, clustering, k)
    peaks = []
    for j in range(clustering.m):
        members = clustering.members(j)  # ascending, so argmin ties pick low index
        peaks.append(int(members[np.argmin(dbar[members])]))
    return tuple(peaks)


# ---------------------------------------------------------------------------
# Diversity refinement


def diversity_penalty(
    candidate: np.ndarray,
    others: np.ndarray,
    alpha: float,
    *,
    epsilon: float = 1e-12,
) -> float:
    """Sum of inverse-power repulsions against the other clusters' picks.

    Each distance is floored at epsilon before the ``-alpha`` power, so a
    coincident pick contributes ``epsilon**-alpha`` instead of infinity.
    """
    others = np.atleast_2d(np.asarray(others, dtype=np.float64))
    if others.size == 0:
        return 0.0
    diff = others - np.asarray(candidate, dtype=np.float64)
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    np.maximum(dist, epsilon, out=dist)
    return float(np.sum(dist**-alpha))


def ema_update(prev: float, value: float, beta: float) -> float:
    """Exponential moving average step ``beta*prev + (1-beta)*value``."""
    return beta * prev + (1.0 - beta) * value


def combined_score(avg_dist: float, ema_phi: float, lam: float, *, epsilon: float = 1e-12) -> float:
    """Representativeness minus weighted repulsion: ``1/avg_dist - lam*ema_phi``."""
    if avg_dist < epsilon:
        raise DegenerateDistance(f"average neighbor distance {avg_dist} below epsilon")
    return 1.0 / avg_dist - lam * ema_phi


def _scores(dbar: np.ndarray, ema: np.ndarray, lam: float, epsilon: float) -> np.ndarray:
    # Degenerate distances rank at +inf; further ties resolve by index.
    out = np.empty_like(dbar)
    degen = dbar < epsilon
    out[degen] = np.inf
    out[~degen] = 1.0 / dbar[~degen] - lam * ema[~degen]
    return out


class _ExactNeighbors:
    """Whole-segment neighbor queries by direct scan."""

    def __init__(self, segment: np.ndarray):
        self.segment = segment

    def query(self, item: int, h: int) -> np.ndarray:
        k = min(h, self.segment.shape[0] - 1)
        if k < 1:
            return np.empty(0, dtype=np.int64)
        return brute_force_knn(self.segment, item, k).indices


class _HnswNeighbors:
    """Whole-segment neighbor queries through the graph index."""

    def __init__(
        self,
        segment: np.ndarray,
        params: HnswParams,
        seed: int | Seed,
        segment_index: int,
        ef_search: int,
    ):
        self.segment = segment
        self.index = HnswIndex.build(segment, params, seed, stream_index=segment_index)
        self.ef_search = ef_search

    def query(self, item: int, h: int) -> np.ndarray:
        n = self.segment.shape[0]
        k = min(h + 1, n)  # the stored item itself will come back at distance 0
        res = self.index.search(self.segment[item], k, ef_search=max(self.ef_search, k))
        idx = res.indices[res.indices != item]
        return idx[:h]


def _refine_pass(
    segment: np.ndarray,
    clustering: Clustering,
    params: SelectionParams,
    state: SelectionState,
    dbar: np.ndarray,
    neighbors,
) -> tuple[SelectionState, list[float]]:
    """One synchronous refinement round against the previous picks."""
    n_seg = segment.shape[0]
    h_eff = min(params.h, n_seg)
    prev = state.selected
    ema = dict(state.ema_phi)
    assignments = clustering.assignments
    new_selected: list[int] = []
    chosen_scores: list[float] = []
    for j in range(clustering.m):
        incumbent = prev[j]
        neigh = neighbors.query(incumbent, h_eff)
        cand = neigh[assignments[neigh] == j]
        if incumbent not in cand:
            cand = np.append(cand, incumbent)
        cand = np.sort(cand.astype(np.int64))
        others = segment[[prev[l] for l in range(clustering.m) if l != j]]
        if others.shape[0]:
            diff = segment[cand][:, None, :] - others[None, :, :]
            dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
            np.maximum(dist, params.epsilon, out=dist)
            phi = (dist**-params.alpha).sum(axis=1)
        else:
            phi = np.zeros(cand.size, dtype=np.float64)
        ema_vals = np.empty(cand.size, dtype=np.float64)
        for pos, c in enumerate(cand.tolist()):
            updated = ema_update(ema.get(c, 0.0), float(phi[pos]), params.beta)
            ema[c] = updated
            ema_vals[pos] = updated
        scores = _scores(dbar[cand], ema_vals, params.lam, params.epsilon)
        best = int(np.argmax(scores))  # cand is sorted, so ties pick the lower index
        new_selected.append(int(cand[best]))
        chosen_scores.append(float(scores[best]))
    return SelectionState(state.t + 1, tuple(new_selected), ema), chosen_scores


def refine_selection(
    segment: np.ndarray | EmbeddingSet,
    clustering: Clustering,
    params: SelectionParams,
    state: SelectionState,
    *,
    neighbors=None,
    dbar: np.ndarray | None = None,
) -> SelectionState:
    """One refinement round; see the module docstring for the update rule."""
    seg = segment.data if isinstance(segment, EmbeddingSet) else np.asarray(segment, dtype=np.float64)
    if dbar is None:
        dbar = cluster_densities(seg, clustering, params.k)
    if neighbors is None:
        neighbors = _ExactNeighbors(seg)
    new_state, _ = _refine_pass(seg, clustering, params, state, dbar, neighbors)
    return new_state


def initial_state(segment: np.ndarray, clustering: Clustering, params: SelectionParams) -> SelectionState:
    return SelectionState(0, density_peaks(segment, clustering, params.k), {})


# ---------------------------------------------------------------------------
# Full pipeline


def _peak_scores(dbar: np.ndarray, peaks: tuple[int, ...], epsilon: float) -> list[float]:
    return [
        float("inf") if dbar[p] < epsilon else 1.0 / float(dbar[p]) for p in peaks
    ]


def select_subset(
    emb: EmbeddingSet,
    m: int,
    weights: RatioWeights = DEFAULT_WEIGHTS,
    params: SelectionParams | None = None,
    seed: int | Seed = 0,
    *,
    backend: str = "hnsw",
    hnsw_params: HnswParams | None = None,
    ef_search: int = 100,
    trace_sink=None,
    density_fn=None,
) -> SelectionResult:
    """Run the full segment/cluster/peak/refine pipeline on one sequence.

    ``backend`` chooses how the whole-segment candidate queries are served:
    ``"hnsw"`` (default) builds one graph index per segment, ``"exact"``
    uses direct scans and is the reference used by the equivalence tests.
    ``trace_sink``, when given, receives one dict per (segment, iteration)
    with the current picks and their scores.  ``density_fn`` may replace
    the within-cluster density routine (the benchmark's naive baseline
    scans whole segments instead).
    """
    params = params or SelectionParams()
    if backend not in ("hnsw", "exact"):
        raise ValueError(f"unknown backend {backend!r}")
    seed_value = as_seed(seed).value
    plan = make_partition_plan(emb.n, m, weights)
    per_segment: list[tuple[int, ...]] = []
    for si, seg_spec in enumerate(plan.segments):
        if seg_spec.budget == 0 or seg_spec.length == 0:
            per_segment.append(())
            continue
        seg = emb.data[seg_spec.start : seg_spec.end]
        clustering = kmeans_fit(seg, seg_spec.budget, seed_value, stream_index=si)
        if density_fn is None:
            dbar = cluster_densities(seg, clustering, params.k)
        else:
            dbar = density_fn(seg, clustering, params.k)
        peaks = []
        for j in range(clustering.m):
            members = clustering.members(j)
            peaks.append(int(members[np.argmin(dbar[members])]))
        state = SelectionState(0, tuple(peaks), {})
        if trace_sink is not None:
            trace_sink(
                {
                    "segment": si,
                    "t": 0,
                    "selected": [seg_spec.start + i for i in state.selected],
                    "scores": _peak_scores(dbar, state.selected, params.epsilon),
                }
            )
        if backend == "hnsw":
            neighbors = _HnswNeighbors(
                seg, hnsw_params or HnswParams(), seed_value, si, ef_search
            )
        else:
            neighbors = _ExactNeighbors(seg)
        for _ in range(params.iterations):
            state, scores = _refine_pass(seg, clustering, params, state, dbar, neighbors)
            if trace_sink is not None:
                trace_sink(
                    {
                        "segment": si,
                        "t": state.t,
                        "selected": [seg_spec.start + i for i in state.selected],
                        "scores": scores,
                    }
                )
        per_segment.append(tuple(sorted(seg_spec.start + i for i in state.selected)))
    selected = tuple(sorted(i for seg_sel in per_segment for i in seg_sel))
    return SelectionResult(
        id=emb.id,
        n=emb.n,
        m=m,
        weights=tuple(weights),
        plan=plan,
        selected_indices=selected,
        per_segment=tuple(per_segment),
        params=params,
        seed=seed_value,
        backend=backend,
    )
