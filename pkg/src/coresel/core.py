"""Core value types, vector primitives, and the deterministic RNG scheme.

Every random decision in the package flows from a single 64-bit seed through
:func:`rng_stream`, which derives independent counter-based generators from a
``(seed, domain, index)`` path.  Domain constants live here so callers never
collide on stream keys.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFiniteEntry, ZeroVector, ZeroVectorRow

# Stream domains.  A segment-local stream is (seed, domain, segment_index),
# so permuting or editing one segment never perturbs another segment's draws.
STREAM_KMEANS = 0
STREAM_INDEX = 1
STREAM_SYNTH = 2
STREAM_TOY = 3
STREAM_BENCH = 4

_UNIT_NORM_TOL = 1e-4
_ZERO_NORM_TOL = 1e-12


@dataclass(frozen=True)
class Seed:
    """A validated 64-bit master seed."""

    value: int

    def __post_init__(self):
        if not isinstance(self.value, int):
            raise TypeError(f"seed must be an int, got {type(self.value).__name__}")
        if not 0 <= self.value < 2**64:
            raise ValueError(f"seed must be in [0, 2**64), got {self.value}")


def as_seed(seed: int | Seed) -> Seed:
    return seed if isinstance(seed, Seed) else Seed(int(seed))


def rng_stream(seed: int | Seed, *path: int) -> np.random.Generator:
    """Derive a generator for one domain of the computation.

    Uses the Philox counter-based bit generator keyed by the master seed and
    an integer path, so streams are independent and reproducible across runs
    and platforms.
    """
    s = as_seed(seed)
    ss = np.random.SeedSequence(entropy=s.value, spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Return ``v`` scaled to unit Euclidean norm.

    Raises ``ZeroVector`` when the norm is exactly zero.  Normalizing an
    already-unit vector is idempotent to within float rounding.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = math.sqrt(float(np.dot(v, v)))
    if norm < _ZERO_NORM_TOL:
        raise ZeroVector("cannot normalize a (near-)zero vector")
    return v / norm


def euclidean(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two vectors of equal dimension."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return math.sqrt(float(np.dot(diff, diff)))


@dataclass(frozen=True)
class RatioWeights:
    """Positive segment ratios, normalized to sum to one."""

    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.weights) == 0:
            raise ValueError("at least one weight is required")
        ws = tuple(float(w) for w in self.weights)
        if any(not math.isfinite(w) or w <= 0.0 for w in ws):
            raise ValueError(f"weights must be finite and > 0, got {ws}")
        total = math.fsum(ws)
        ws = tuple(w / total for w in ws)
        object.__setattr__(self, "weights", ws)
        assert abs(math.fsum(self.weights) - 1.0) <= 1e-9

    def __len__(self) -> int:
        return len(self.weights)

    def __iter__(self):
        return iter(self.weights)


DEFAULT_WEIGHTS = RatioWeights((0.25, 0.15, 0.6))


class EmbeddingSet:
    """An ordered sequence of unit-norm embedding vectors.

    ``data`` is an (n, d) float64 array whose rows are L2-normalized at
    construction.  Row order is meaningful: downstream segment partitioning
    slices this array by position.
    """

    def __init__(self, id: str, data: np.ndarray, *, normalize: bool = True):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionMismatch(f"expected a non-empty 2-D array, got shape {arr.shape}")
        bad = ~np.isfinite(arr)
        if bad.any():
            raise NonFiniteEntry(int(np.argwhere(bad)[0][0]))
        norms = np.sqrt(np.einsum("ij,ij->i", arr, arr))
        zero_rows = np.flatnonzero(norms < _ZERO_NORM_TOL)
        if zero_rows.size:
            raise ZeroVectorRow(int(zero_rows[0]))
        if normalize:
            arr = arr / norms[:, None]
        self.id = str(id)
        self.data = arr

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"EmbeddingSet(id={self.id!r}, n={self.n}, d={self.d})"

    def max_norm_error(self) -> float:
        norms = np.sqrt(np.einsum("ij,ij->i", self.data, self.data))
        return float(np.max(np.abs(norms - 1.0)))

    def check_unit_rows(self) -> None:
        err = self.max_norm_error()
        if err > _UNIT_NORM_TOL:
            raise DimensionMismatch(f"rows deviate from unit norm by {err:.2e}")
