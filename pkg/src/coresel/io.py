"""File formats: embedding matrices, selection results, probability tables.

Embedding binary layout (little-endian): magic ``CSSF``, version u32,
n u64, d u64, then n*d float32 row-major.  The CSV alternative is a
headerless numeric matrix.  Rows are L2-normalized on ingestion; non-finite
and all-zero rows are rejected with their row index.

Selection results round-trip through a small JSON document; a trace of the
refinement (one JSON line per segment/iteration) can be written alongside.
Probability tables arrive as CSV with the header
``id,label,p_0..p_{K-1},p1_0..p1_{K-1},p2_0..p2_{K-1}``.
"""

from __future__ import annotations

import csv
import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import STREAM_SYNTH, EmbeddingSet, RatioWeights, rng_stream
from .errors import (
    BadMagic,
    FormatError,
    NonFiniteEntry,
    SchemaViolation,
    SimplexViolation,
    TruncatedFile,
)
from .selection import (
    PartitionPlan,
    Segment,
    SelectionParams,
    SelectionResult,
    largest_remainder,
)
from .uncertainty import ProbTriple, RecallSummary, UncertaintyRecord

EMBEDDING_MAGIC = b"CSSF"
EMBEDDING_VERSION = 1
_HEADER = struct.Struct("<IQQ")


@dataclass(frozen=True)
class EmbeddingFileHeader:
    version: int
    n: int
    d: int


# ---------------------------------------------------------------------------
# Embedding matrices


def write_embeddings(path, data: EmbeddingSet | np.ndarray) -> None:
    """Write the binary embedding format (float32 storage)."""
    arr = data.data if isinstance(data, EmbeddingSet) else np.asarray(data)
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(_HEADER.pack(EMBEDDING_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<f4").tobytes())


def write_embeddings_csv(path, data: EmbeddingSet | np.ndarray) -> None:
    """Headerless CSV with float32-exact decimal values.

    Values are quantized to float32 first so both formats store the same
    numbers; %.9g preserves any float32 exactly.
    """
    arr = data.data if isinstance(data, EmbeddingSet) else np.asarray(data)
    arr = np.asarray(arr, dtype=np.float32)
    with open(path, "w", newline="") as fh:
        for row in arr:
            fh.write(",".join(f"{v:.9g}" for v in row.tolist()))
            fh.write("\n")


def read_header(path) -> EmbeddingFileHeader:
    with open(path, "rb") as fh:
        blob = fh.read(4 + _HEADER.size)
    if len(blob) < 4 or blob[:4] != EMBEDDING_MAGIC:
        raise BadMagic(f"{path}: expected {EMBEDDING_MAGIC!r} header")
    if len(blob) < 4 + _HEADER.size:
        raise TruncatedFile(f"{path}: header incomplete")
    version, n, d = _HEADER.unpack_from(blob, 4)
    if version != EMBEDDING_VERSION:
        raise BadMagic(f"{path}: unsupported version {version}")
    return EmbeddingFileHeader(version, n, d)


def read_embeddings(path, fmt: str = "auto") -> EmbeddingSet:
    """Load a binary or CSV embedding file into a normalized EmbeddingSet."""
    path = Path(path)
    if fmt == "auto":
        fmt = "csv" if path.suffix.lower() == ".csv" else "binary"
    if fmt == "csv":
        return _read_embeddings_csv(path)
    if fmt != "binary":
        raise ValueError(f"unknown embedding format {fmt!r}")
    header = read_header(path)
    with open(path, "rb") as fh:
        fh.seek(4 + _HEADER.size)
        payload = fh.read()
    expected = header.n * header.d * 4
    if len(payload) < expected:
        raise TruncatedFile(
            f"{path}: expected {expected} payload bytes, found {len(payload)}"
        )
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes")
    arr = (
        np.frombuffer(payload, dtype="<f4", count=header.n * header.d)
        .astype(np.float64)
        .reshape(header.n, header.d)
    )
    return EmbeddingSet(path.stem, arr)


def _read_embeddings_csv(path: Path) -> EmbeddingSet:
    try:
        with warnings.catch_warnings():
            # Empty input warns before it returns an empty array; the size
            # check below turns that case into a proper error.
            warnings.simplefilter("ignore", UserWarning)
            arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if arr.size == 0:
        raise TruncatedFile(f"{path}: no rows")
    # Embedding payloads are float32 precision in either container; quantize
    # text input so the two formats load bit-identical matrices.
    arr = arr.astype(np.float32).astype(np.float64)
    return EmbeddingSet(path.stem, arr)


# ---------------------------------------------------------------------------
# Selection results


def selection_to_dict(result: SelectionResult) -> dict:
    return {
        "id": result.id,
        "n": result.n,
        "m": result.m,
        "weights": list(result.weights),
        "plan": {
            "segments": [
                {"start": s.start, "end": s.end, "budget": s.budget}
                for s in result.plan.segments
            ]
        },
        "selected_indices": list(result.selected_indices),
        "per_segment": [list(seg) for seg in result.per_segment],
        "params": {
            "k": result.params.k,
            "alpha": result.params.alpha,
            "beta": result.params.beta,
            "lam": result.params.lam,
            "iterations": result.params.iterations,
            "h": result.params.h,
            "epsilon": result.params.epsilon,
        },
        "seed": result.seed,
        "backend": result.backend,
    }


def write_selection(result: SelectionResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(selection_to_dict(result), fh, indent=2)
        fh.write("\n")


_SELECTION_KEYS = {
    "id",
    "n",
    "m",
    "weights",
    "plan",
    "selected_indices",
    "per_segment",
    "params",
    "seed",
    "backend",
}


def read_selection(path) -> SelectionResult:
    """Load and validate a selection document.

    Rejects duplicate or unsorted indices, counts that disagree with m,
    indices outside their segment, and unknown keys.
    """
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaViolation("selection document must be a JSON object")
    keys = set(doc)
    if keys != _SELECTION_KEYS:
        raise SchemaViolation(
            f"unexpected selection keys: missing {_SELECTION_KEYS - keys}, extra {keys - _SELECTION_KEYS}"
        )
    try:
        segments = tuple(
            Segment(int(s["start"]), int(s["end"]), int(s["budget"]))
            for s in doc["plan"]["segments"]
        )
        plan = PartitionPlan(segments)
        params = SelectionParams(
            k=int(doc["params"]["k"]),
            alpha=float(doc["params"]["alpha"]),
            beta=float(doc["params"]["beta"]),
            lam=float(doc["params"]["lam"]),
            iterations=int(doc["params"]["iterations"]),
            h=int(doc["params"]["h"]),
            epsilon=float(doc["params"]["epsilon"]),
        )
        result = SelectionResult(
            id=str(doc["id"]),
            n=int(doc["n"]),
            m=int(doc["m"]),
            weights=tuple(float(w) for w in doc["weights"]),
            plan=plan,
            selected_indices=tuple(int(i) for i in doc["selected_indices"]),
            per_segment=tuple(tuple(int(i) for i in seg) for seg in doc["per_segment"]),
            params=params,
            seed=int(doc["seed"]),
            backend=str(doc["backend"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"malformed selection document: {exc}") from exc
    _validate_selection(result)
    return result


def _validate_selection(result: SelectionResult) -> None:
    sel = result.selected_indices
    if len(sel) != result.m:
        raise SchemaViolation(f"selected {len(sel)} indices but m={result.m}")
    if len(set(sel)) != len(sel):
        raise SchemaViolation("duplicate selected indices")
    if list(sel) != sorted(sel):
        raise SchemaViolation("selected_indices must be sorted")
    plan = result.plan
    if len(result.per_segment) != len(plan.segments):
        raise SchemaViolation("per_segment length disagrees with the plan")
    if plan.n != result.n or plan.m != result.m:
        raise SchemaViolation("plan totals disagree with n/m")
    flat: list[int] = []
    for seg, chosen in zip(plan.segments, result.per_segment):
        if len(chosen) != seg.budget:
            raise SchemaViolation(
                f"segment [{seg.start},{seg.end}) holds {len(chosen)} picks, budget {seg.budget}"
            )
        for i in chosen:
            if not seg.start <= i < seg.end:
                raise SchemaViolation(f"index {i} outside its segment [{seg.start},{seg.end})")
        flat.extend(chosen)
    if sorted(flat) != list(sel):
        raise SchemaViolation("per_segment does not match selected_indices")


def _json_safe(value):
    """Map non-finite floats to None so the output stays strict JSON."""
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


class TraceWriter:
    """Append-only JSONL sink for refinement traces."""

    def __init__(self, path):
        self._fh = open(path, "w")

    def __call__(self, record: dict) -> None:
        self._fh.write(json.dumps(_json_safe(record), allow_nan=False))
        self._fh.write("\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


# ---------------------------------------------------------------------------
# Probability tables


def _prob_header(k: int) -> list[str]:
    cols = ["id", "label"]
    for prefix in ("p", "p1", "p2"):
        cols.extend(f"{prefix}_{j}" for j in range(k))
    return cols


def read_prob_csv(path) -> list[ProbTriple]:
    """Parse the probability table; row numbers in errors are 1-based data rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TruncatedFile(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 8 or header[:2] != ["id", "label"] or (len(header) - 2) % 3 != 0:
            raise SchemaViolation(f"{path}: malformed probability header {header!r}")
        k = (len(header) - 2) // 3
        if header != _prob_header(k):
            raise SchemaViolation(f"{path}: expected header {_prob_header(k)!r}")
        triples: list[ProbTriple] = []
        for row_no, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise SchemaViolation(f"{path}: row {row_no} has {len(row)} fields")
            sample_id = row[0].strip()
            label_text = row[1].strip()
            label = int(label_text) if label_text else None
            try:
                values = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise SchemaViolation(f"{path}: row {row_no}: {exc}") from exc
            if not all(np.isfinite(values)):
                raise NonFiniteEntry(row_no)
            try:
                triples.append(
                    ProbTriple(
                        sample_id=sample_id,
                        label=label,
                        p=np.array(values[:k]),
                        p1=np.array(values[k : 2 * k]),
                        p2=np.array(values[2 * k :]),
                    )
                )
            except SimplexViolation as exc:
                raise SimplexViolation(row_no, f"row {row_no}: {exc}") from exc
    return triples


def write_prob_csv(path, triples: list[ProbTriple]) -> None:
    if not triples:
        raise ValueError("nothing to write")
    k = triples[0].k
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_prob_header(k))
        for t in triples:
            label = "" if t.label is None else str(t.label)
            writer.writerow(
                [t.sample_id, label]
                + [f"{v:.12g}" for v in t.p.tolist()]
                + [f"{v:.12g}" for v in t.p1.tolist()]
                + [f"{v:.12g}" for v in t.p2.tolist()]
            )


def uncertainty_report(
    records: list[UncertaintyRecord], summary: RecallSummary | None
) -> dict:
    doc: dict = {
        "records": [
            {
                "id": r.sample_id,
                "d_dis": r.d_dis,
                "entropy": r.entropy,
                "u": r.u,
                "predicted": r.predicted,
                "label": r.label,
            }
            for r in records
        ]
    }
    if summary is not None:
        doc["summary"] = {
            "recall_mis": summary.recall_mis,
            "q": summary.q,
            "FN": summary.fn,
            "FP": summary.fp,
            "FN_prime": summary.fn_top,
            "FP_prime": summary.fp_top,
            "no_errors": summary.no_errors,
        }
    return doc


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    mode: str  # blobs | prototypes | uniform-sphere
    n: int
    d: int
    count: int = 8
    sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("blobs", "prototypes", "uniform-sphere"):
            raise ValueError(f"unknown synthetic mode {self.mode!r}")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be >= 1")
        if not 1 <= self.count <= self.n:
            raise ValueError(f"count={self.count} not in [1, n]")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def _unit_rows(rng: np.random.Generator, count: int, d: int) -> np.ndarray:
    rows = rng.standard_normal((count, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def generate_synthetic(spec: SyntheticSpec) -> tuple[EmbeddingSet, np.ndarray]:
    """Build a unit-norm dataset plus ground-truth labels.

    ``blobs``: noisy copies of ``count`` unit centers, contiguous blocks.
    ``prototypes``: exact copies of ``count`` distinct rows, contiguous blocks.
    ``uniform-sphere``: isotropic unit vectors, labels all zero.
    """
    rng = rng_stream(spec.seed, STREAM_SYNTH, 0)
    name = f"synth-{spec.mode}-{spec.n}x{spec.d}"
    if spec.mode == "uniform-sphere":
        data = _unit_rows(rng, spec.n, spec.d)
        return EmbeddingSet(name, data, normalize=False), np.zeros(spec.n, dtype=np.int64)
    sizes = largest_remainder(spec.n, RatioWeights((1.0,) * spec.count))
    labels = np.repeat(np.arange(spec.count, dtype=np.int64), sizes)
    anchors = _unit_rows(rng, spec.count, spec.d)
    if spec.mode == "prototypes" or spec.sigma == 0.0:
        data = anchors[labels]
        return EmbeddingSet(name, data, normalize=False), labels
    data = anchors[labels] + spec.sigma * rng.standard_normal((spec.n, spec.d))
    return EmbeddingSet(name, data), labels


def write_labels_sidecar(path, spec: SyntheticSpec, labels: np.ndarray) -> None:
    doc = {
        "mode": spec.mode,
        "n": spec.n,
        "d": spec.d,
        "count": spec.count,
        "sigma": spec.sigma,
        "seed": spec.seed,
        "labels": [int(v) for v in labels],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
