"""coresel: representative, diverse subset selection for embedded sequences.

The package partitions a sequence of unit-norm embeddings into weighted
segments, clusters each segment, seeds a pick per cluster at its density
peak, and refines the picks with an EMA-smoothed diversity penalty.  A
companion uncertainty toolkit scores classifier outputs by auxiliary-head
discrepancy plus entropy and checks how well that score ranks
misdiagnoses.
"""

from .core import (
    DEFAULT_WEIGHTS,
    EmbeddingSet,
    RatioWeights,
    Seed,
    euclidean,
    l2_normalize,
    rng_stream,
)
from .kmeans import Clustering, assign_to_nearest, kmeans_fit
from .knn import HnswIndex, HnswParams, KnnResult, brute_force_knn, knn_within_subset
from .selection import (
    PartitionPlan,
    Segment,
    SelectionParams,
    SelectionResult,
    SelectionState,
    combined_score,
    density_peak,
    diversity_penalty,
    ema_update,
    largest_remainder,
    log_density,
    make_partition_plan,
    refine_selection,
    select_subset,
)
from .uncertainty import (
    BoundaryStats,
    ProbTriple,
    RecallSummary,
    ToyModel,
    UncertaintyRecord,
    boundary_concentration,
    discrepancy,
    entropy,
    hybrid_score,
    misdiagnosis_recall,
    toy_train,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_WEIGHTS",
    "EmbeddingSet",
    "RatioWeights",
    "Seed",
    "euclidean",
    "l2_normalize",
    "rng_stream",
    "Clustering",
    "assign_to_nearest",
    "kmeans_fit",
    "HnswIndex",
    "HnswParams",
    "KnnResult",
    "brute_force_knn",
    "knn_within_subset",
    "PartitionPlan",
    "Segment",
    "SelectionParams",
    "SelectionResult",
    "SelectionState",
    "combined_score",
    "density_peak",
    "diversity_penalty",
    "ema_update",
    "largest_remainder",
    "log_density",
    "make_partition_plan",
    "refine_selection",
    "select_subset",
    "BoundaryStats",
    "ProbTriple",
    "RecallSummary",
    "ToyModel",
    "UncertaintyRecord",
    "boundary_concentration",
    "discrepancy",
    "entropy",
    "hybrid_score",
    "misdiagnosis_recall",
    "toy_train",
    "__version__",
]
