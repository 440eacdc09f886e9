"""Hybrid uncertainty scoring and a small two-classifier demonstration model.

A sample's uncertainty ``u`` is the sum of two terms computed from three
probability vectors (a main head ``p`` and two auxiliary heads ``p1, p2``):

* discrepancy: the mean of the three pairwise L1 gaps, ``(1/K) *
  (|p1-p| + |p2-p| + |p2-p1|)`` -- high where the heads disagree;
* entropy of the main head, natural log, with ``0*log(0) = 0`` by branch.

``misdiagnosis_recall`` measures how many of a binary run's actual errors
land in the top-q most-uncertain samples.

The toy model trains three linear softmax classifiers on raw 2-D points
(identity backbone).  The auxiliary heads minimize cross-entropy *minus*
the discrepancy, so they are pushed apart where the data allows, while the
main head trains on plain cross-entropy; the discrepancy gradient is
blocked from the main head by construction.  Gradients are analytic and
checked against finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import STREAM_TOY, Seed, rng_stream
from .errors import (
    DegenerateDataset,
    DimensionMismatch,
    MissingLabels,
    SimplexViolation,
)

_SIMPLEX_TOL = 1e-6


def _check_simplex(vec: np.ndarray, name: str, row: int | None = None) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise SimplexViolation(row, f"{name} must be a vector of >= 2 probabilities")
    if not np.all(np.isfinite(v)) or np.any(v < 0.0):
        raise SimplexViolation(row, f"{name} has negative or non-finite entries")
    if abs(float(v.sum()) - 1.0) > _SIMPLEX_TOL:
        raise SimplexViolation(row, f"{name} sums to {float(v.sum())!r}, not 1")
    return v


@dataclass(frozen=True)
class ProbTriple:
    """Main and auxiliary probability vectors for one sample."""

    sample_id: str
    label: int | None
    p: np.ndarray
    p1: np.ndarray
    p2: np.ndarray

    def __post_init__(self):
        p = _check_simplex(self.p, "p")
        p1 = _check_simplex(self.p1, "p1")
        p2 = _check_simplex(self.p2, "p2")
        if not (p.size == p1.size == p2.size):
            raise DimensionMismatch("p, p1, p2 must share one class count")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p2", p2)

    @property
    def k(self) -> int:
        return self.p.size


@dataclass(frozen=True)
class UncertaintyRecord:
    sample_id: str
    d_dis: float
    entropy: float
    u: float
    predicted: int
    label: int | None


def discrepancy(p: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> float:
    """Mean pairwise L1 gap between the three heads, ``>= 0`` and ``<= 6/K``."""
    p = np.asarray(p, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if not (p.shape == p1.shape == p2.shape):
        raise DimensionMismatch("probability vectors must share a shape")
    k = p.size
    total = (
        float(np.abs(p1 - p).sum())
        + float(np.abs(p2 - p).sum())
        + float(np.abs(p2 - p1).sum())
    )
    return total / k


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats; zero entries contribute exactly zero."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def hybrid_score(triple: ProbTriple) -> UncertaintyRecord:
    """Combine discrepancy and entropy into ``u`` for one sample."""
    d = discrepancy(triple.p, triple.p1, triple.p2)
    h = entropy(triple.p)
    predicted = int(np.argmax(triple.p))  # argmax ties to the lower class id
    return UncertaintyRecord(
        sample_id=triple.sample_id,
        d_dis=d,
        entropy=h,
        u=d + h,
        predicted=predicted,
        label=triple.label,
    )


@dataclass(frozen=True)
class RecallSummary:
    recall_mis: float
    q: int
    fn: int
    fp: int
    fn_top: int
    fp_top: int
    no_errors: bool


def misdiagnosis_recall(records: list[UncertaintyRecord], q: int = 15) -> RecallSummary:
    """Fraction of all misdiagnoses captured by the q most-uncertain samples.

    Binary task: class 1 is positive, so a false negative is (label 1,
    predicted 0) and a false positive is (label 0, predicted 1).  Ranking
    ties on ``u`` break toward the lower sample id.  When the run has no
    errors at all the recall is reported as 1.0 and flagged.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    for r in records:
        if r.label is None:
            raise MissingLabels(f"record {r.sample_id!r} has no label")
        if r.label not in (0, 1) or r.predicted not in (0, 1):
            raise ValueError("misdiagnosis recall requires binary labels/predictions")

    def is_fn(r: UncertaintyRecord) -> bool:
        return r.label == 1 and r.predicted == 0

    def is_fp(r: UncertaintyRecord) -> bool:
        return r.label == 0 and r.predicted == 1

    fn = sum(1 for r in records if is_fn(r))
    fp = sum(1 for r in records if is_fp(r))
    ranked = sorted(records, key=lambda r: (-r.u, r.sample_id))
    top = ranked[: min(q, len(ranked))]
    fn_top = sum(1 for r in top if is_fn(r))
    fp_top = sum(1 for r in top if is_fp(r))
    if fn + fp == 0:
        return RecallSummary(1.0, q, fn, fp, fn_top, fp_top, no_errors=True)
    return RecallSummary(
        (fn_top + fp_top) / (fn + fp), q, fn, fp, fn_top, fp_top, no_errors=False
    )


# ---------------------------------------------------------------------------
# Toy model


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ToyModel:
    """Three linear softmax heads over 2-D inputs (identity backbone)."""

    w: np.ndarray
    b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    K = 2
    D = 2

    @classmethod
    def zeros(cls) -> "ToyModel":
        return cls(
            w=np.zeros((cls.K, cls.D)),
            b=np.zeros(cls.K),
            w1=np.zeros((cls.K, cls.D)),
            b1=np.zeros(cls.K),
            w2=np.zeros((cls.K, cls.D)),
            b2=np.zeros(cls.K),
        )

    @classmethod
    def initialized(cls, seed: int | Seed, scale: float = 0.01) -> "ToyModel":
        """Zero main head; small random auxiliary heads.

        The main head starts at zero so an untrained model is the constant
        uniform predictor.  The auxiliary heads get small distinct draws,
        otherwise they would stay identical forever and the discrepancy
        objective would be stuck at its symmetric saddle.
        """
        rng = rng_stream(seed, STREAM_TOY, 0)
        model = cls.zeros()
        model.w1 = scale * rng.standard_normal((cls.K, cls.D))
        model.w2 = scale * rng.standard_normal((cls.K, cls.D))
        return model

    def probs(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        return (
            _softmax(x @ self.w.T + self.b),
            _softmax(x @ self.w1.T + self.b1),
            _softmax(x @ self.w2.T + self.b2),
        )

    def predict(self, x: np.ndarray) -> np.ndarray:
        p, _, _ = self.probs(x)
        return np.argmax(p, axis=1)

    def boundary_distances(self, x: np.ndarray) -> np.ndarray | None:
        """Euclidean distance of each point to the main head's decision line.

        Returns None when the two class scores coincide everywhere (zero
        weight difference), i.e. the model has no boundary.
        """
        x = np.asarray(x, dtype=np.float64)
        wd = self.w[1] - self.w[0]
        bd = self.b[1] - self.b[0]
        norm = math.sqrt(float(np.dot(wd, wd)))
        if norm < 1e-12:
            return None
        return np.abs(x @ wd + bd) / norm

    def uncertainty(self, x: np.ndarray) -> np.ndarray:
        """Per-point u = discrepancy + entropy, vectorized."""
        return uncertainty_components(self, x)[2]


def uncertainty_components(model: ToyModel, x: np.ndarray):
    """Vectorized (d_dis, entropy, u, p_main) for a batch of points."""
    p, p1, p2 = model.probs(x)
    k = p.shape[1]
    d = (
        np.abs(p1 - p).sum(axis=1)
        + np.abs(p2 - p).sum(axis=1)
        + np.abs(p2 - p1).sum(axis=1)
    ) / k
    logs = np.where(p > 0.0, np.log(np.maximum(p, 1e-300)), 0.0)
    h = -(p * logs).sum(axis=1)
    return d, h, d + h, p


def _ce(p: np.ndarray, onehot: np.ndarray) -> float:
    picked = np.clip((p * onehot).sum(axis=1), 1e-300, None)
    return float(-np.log(picked).mean())


def loss_and_grads(
    model: ToyModel, x: np.ndarray, y: np.ndarray, discrepancy_weight: float = 1.0
):
    """Full-batch loss pieces and the analytic training gradients.

    The objective is ``CE(p) + CE(p1) + CE(p2) - w * mean(d_dis)``.  The
    discrepancy term's gradient reaches only the auxiliary heads; the main
    head's gradient is plain cross-entropy (the heads' outputs enter each
    other's discrepancy terms as constants).
    """
    x = np.asarray(x, dtype=np.float64)
    n, k = x.shape[0], ToyModel.K
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0
    p, p1, p2 = model.probs(x)

    ce_main, ce1, ce2 = _ce(p, onehot), _ce(p1, onehot), _ce(p2, onehot)
    d_dis = (
        np.abs(p1 - p).sum(axis=1)
        + np.abs(p2 - p).sum(axis=1)
        + np.abs(p2 - p1).sum(axis=1)
    ) / k
    mean_dis = float(d_dis.mean())
    total = ce_main + ce1 + ce2 - discrepancy_weight * mean_dis

    def through_softmax(prob: np.ndarray, dp: np.ndarray) -> np.ndarray:
        # (diag(p) - p p^T) dp, row-wise
        inner = (prob * dp).sum(axis=1, keepdims=True)
        return prob * dp - prob * inner

    gz = (p - onehot) / n
    scale = discrepancy_weight / (k * n)
    dp1 = -scale * (np.sign(p1 - p) + np.sign(p1 - p2))
    dp2 = -scale * (np.sign(p2 - p) + np.sign(p2 - p1))
    gz1 = (p1 - onehot) / n + through_softmax(p1, dp1)
    gz2 = (p2 - onehot) / n + through_softmax(p2, dp2)

    grads = {
        "w": gz.T @ x,
        "b": gz.sum(axis=0),
        "w1": gz1.T @ x,
        "b1": gz1.sum(axis=0),
        "w2": gz2.T @ x,
        "b2": gz2.sum(axis=0),
    }
    parts = {
        "total": total,
        "ce_main": ce_main,
        "ce_aux1": ce1,
        "ce_aux2": ce2,
        "d_dis": mean_dis,
    }
    return parts, grads


@dataclass
class ToyTrainResult:
    model: ToyModel
    history: list[dict]


def toy_train(
    x: np.ndarray,
    y: np.ndarray,
    epochs: int = 500,
    lr: float = 0.1,
    seed: int | Seed = 0,
    *,
    discrepancy_weight: float = 1.0,
    init: ToyModel | None = None,
) -> ToyTrainResult:
    """Full-batch gradient descent on the three heads.

    Deterministic for a fixed seed; ``epochs=0`` returns the initial model
    (constant uniform main head).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != ToyModel.D:
        raise DimensionMismatch(f"expected (n, 2) inputs, got {x.shape}")
    classes = np.unique(y)
    if not np.all(np.isin(classes, [0, 1])) or classes.size < 2:
        raise DegenerateDataset("need at least one sample of each of classes 0 and 1")
    model = init if init is not None else ToyModel.initialized(seed)
    model = ToyModel(
        w=model.w.copy(),
        b=model.b.copy(),
        w1=model.w1.copy(),
        b1=model.b1.copy(),
        w2=model.w2.copy(),
        b2=model.b2.copy(),
    )
    history: list[dict] = []
    for epoch in range(epochs):
        parts, grads = loss_and_grads(model, x, y, discrepancy_weight)
        history.append({"epoch": epoch, **parts})
        model.w -= lr * grads["w"]
        model.b -= lr * grads["b"]
        model.w1 -= lr * grads["w1"]
        model.b1 -= lr * grads["b1"]
        model.w2 -= lr * grads["w2"]
        model.b2 -= lr * grads["b2"]
    return ToyTrainResult(model=model, history=history)


def make_two_blob_dataset(
    seed: int | Seed,
    n_per_class: int = 100,
    centers: tuple[tuple[float, float], tuple[float, float]] = ((-2.0, 0.0), (2.0, 0.0)),
    sigma: float = 0.4,
) -> tuple[np.ndarray, np.ndarray]:
    """Two well-separated Gaussian blobs in the plane; linearly separable."""
    rng = rng_stream(seed, STREAM_TOY, 1)
    pts = []
    labels = []
    for cls, center in enumerate(centers):
        pts.append(np.asarray(center) + sigma * rng.standard_normal((n_per_class, 2)))
        labels.append(np.full(n_per_class, cls, dtype=np.int64))
    return np.vstack(pts), np.concatenate(labels)


@dataclass(frozen=True)
class BoundaryStats:
    near_mean: float | None
    far_mean: float | None
    ratio: float | None
    near_count: int
    far_count: int
    defined: bool
    degenerate_boundary: bool


def boundary_concentration(
    model: ToyModel,
    points: np.ndarray,
    *,
    near: float = 0.5,
    far: float = 1.5,
) -> BoundaryStats:
    """Mean u within ``near`` of the decision line vs beyond ``far``.

    A model with no boundary (zero weight difference, e.g. untrained) is a
    constant predictor: every point is treated as equidistant, both band
    means equal the overall mean, and the ratio is 1.0 by convention.  An
    empty band otherwise leaves the statistic flagged undefined rather
    than producing NaN.
    """
    points = np.asarray(points, dtype=np.float64)
    u = model.uncertainty(points)
    dists = model.boundary_distances(points)
    if dists is None:
        mean = float(u.mean())
        return BoundaryStats(
            near_mean=mean,
            far_mean=mean,
            ratio=1.0,
            near_count=points.shape[0],
            far_count=points.shape[0],
            defined=True,
            degenerate_boundary=True,
        )
    near_u = u[dists <= near]
    far_u = u[dists > far]
    near_mean = float(near_u.mean()) if near_u.size else None
    far_mean = float(far_u.mean()) if far_u.size else None
    if near_u.size == 0 or far_u.size == 0 or far_mean == 0.0:
        return BoundaryStats(
            near_mean, far_mean, None, int(near_u.size), int(far_u.size), False, False
        )
    return BoundaryStats(
        near_mean,
        far_mean,
        near_mean / far_mean,
        int(near_u.size),
        int(far_u.size),
        True,
        False,
    )


def make_grid(extent: float = 4.0, steps: int = 81) -> np.ndarray:
    """Uniform (steps^2, 2) evaluation grid over [-extent, extent]^2."""
    axis = np.linspace(-extent, extent, steps)
    gx, gy = np.meshgrid(axis, axis)
    return np.column_stack([gx.ravel(), gy.ravel()])
