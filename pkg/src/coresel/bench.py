"""Wall-clock scaling measurement for the selection pipeline.

Times the full pipeline (clustering, density, index build, refinement) over
a sweep of sequence lengths and fits a log-log slope to the median times.
The default run uses the graph-index backend.  The contrast run models the
no-index baseline: every item's average k-NN distance is computed by a
direct scan over its whole segment (the naive approach the index exists to
avoid), which makes the density step near-quadratic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import EmbeddingSet
from .io import SyntheticSpec, generate_synthetic
from .selection import SelectionParams, select_subset

DEFAULT_SIZES = (1000, 2000, 4000, 8000)

_NAIVE_CHUNK_BYTES = 1 << 27


def naive_segment_density(segment: np.ndarray, k: int) -> np.ndarray:
    """Average k-NN distance of every item over the whole segment.

    Deliberately the straightforward linear-scan formulation (explicit
    difference tensors, no matrix-product shortcuts): this is the baseline
    whose cost the index-backed pipeline avoids.
    """
    s = segment.shape[0]
    k_eff = min(k, s - 1)
    if k_eff < 1:
        return np.zeros(s, dtype=np.float64)
    d = segment.shape[1]
    out = np.empty(s, dtype=np.float64)
    rows = max(1, _NAIVE_CHUNK_BYTES // (8 * s * d))
    for lo in range(0, s, rows):
        hi = min(lo + rows, s)
        diff = segment[lo:hi, None, :] - segment[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        part = np.partition(d2, k_eff - 1, axis=1)[:, :k_eff]
        out[lo:hi] = np.sqrt(part).mean(axis=1)
    return out


def _naive_density_fn(segment: np.ndarray, clustering, k: int) -> np.ndarray:
    return naive_segment_density(segment, k)


@dataclass
class BenchReport:
    backend: str
    d: int
    m: int
    sizes: tuple[int, ...]
    reps: int
    times: dict[int, list[float]]
    medians: dict[int, float]
    slope: float
    timer_warning: bool

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "d": self.d,
            "m": self.m,
            "sizes": list(self.sizes),
            "reps": self.reps,
            "times_s": {str(k): v for k, v in self.times.items()},
            "medians_s": {str(k): v for k, v in self.medians.items()},
            "slope": self.slope,
            "timer_warning": self.timer_warning,
        }


def fit_loglog_slope(sizes, medians) -> float:
    xs = np.log(np.asarray(sizes, dtype=np.float64))
    ys = np.log(np.asarray(medians, dtype=np.float64))
    return float(np.polyfit(xs, ys, 1)[0])


def run_scaling_benchmark(
    sizes: tuple[int, ...] = DEFAULT_SIZES,
    reps: int = 3,
    d: int = 64,
    m: int = 32,
    seed: int = 0,
    *,
    naive: bool = False,
    params: SelectionParams | None = None,
) -> BenchReport:
    """Median wall times for the pipeline at each size, plus the fitted slope.

    Data generation happens outside the timed region.  ``naive=True``
    switches to the exact backend with whole-segment density scans.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    params = params or SelectionParams()
    datasets: dict[int, EmbeddingSet] = {}
    for size in sizes:
        emb, _ = generate_synthetic(
            SyntheticSpec(mode="blobs", n=size, d=d, count=min(m, size), sigma=0.1, seed=seed)
        )
        datasets[size] = emb
    times: dict[int, list[float]] = {}
    for size in sizes:
        emb = datasets[size]
        reps_times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            if naive:
                select_subset(
                    emb, m, params=params, seed=seed, backend="exact",
                    density_fn=_naive_density_fn,
                )
            else:
                select_subset(emb, m, params=params, seed=seed, backend="hnsw")
            reps_times.append(time.perf_counter() - t0)
        times[size] = reps_times
    medians = {size: float(np.median(ts)) for size, ts in times.items()}
    slope = fit_loglog_slope(list(sizes), [medians[s] for s in sizes])
    resolution = time.get_clock_info("perf_counter").resolution
    timer_warning = min(medians.values()) < 1000.0 * resolution
    return BenchReport(
        backend="exact-naive" if naive else "hnsw",
        d=d,
        m=m,
        sizes=tuple(sizes),
        reps=reps,
        times=times,
        medians=medians,
        slope=slope,
        timer_warning=timer_warning,
    )
