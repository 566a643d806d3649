"""Cold-start supplier recommendation for online procurement events.

A sparse-feature factorization machine ranks candidate suppliers for newly
created procurement events, trained with a pairwise (BPR) objective on
historical participation data and evaluated with nested cross-validation
and top-k ranking metrics.
"""

from .baselines import (
    PopularityModel,
    ablate_to_purchaser_only,
    score_popularity,
    train_popularity,
)
from .bpr import (
    TrainConfig,
    TrainResult,
    TrainingDivergedError,
    pair_gradient,
    pair_gradient_step,
    pair_loss,
    sample_negative,
    train,
)
from .cv import (
    DEFAULT_GRID,
    AuditReport,
    CVResult,
    FoldOutcome,
    HyperGrid,
    leakage_audit,
    run_flat_cv,
    run_nested_cv,
)
from .dataset import (
    DatasetFormatError,
    Event,
    GeneratorConfig,
    InteractionDataset,
    filter_suppliers,
    generate_synthetic,
    load,
    sparsity,
    split_events,
)
from .features import (
    FeatureSchema,
    SparseVector,
    build_schema,
    encode_event,
    encode_instance,
    tokenize,
)
from .fm import (
    FMParameters,
    SchemaMismatchError,
    init_params,
    load_model,
    save_model,
    score,
    score_all_suppliers,
    score_candidates,
)
from .metrics import (
    MetricsReport,
    RankedList,
    evaluate_fold,
    ndcg_at_k,
    precision_at_k,
    rank_suppliers,
    recall_at_k,
)

__version__ = "0.1.0"

__all__ = [
    "AuditReport",
    "CVResult",
    "DEFAULT_GRID",
    "DatasetFormatError",
    "Event",
    "FMParameters",
    "FeatureSchema",
    "FoldOutcome",
    "GeneratorConfig",
    "HyperGrid",
    "InteractionDataset",
    "MetricsReport",
    "PopularityModel",
    "RankedList",
    "SchemaMismatchError",
    "SparseVector",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "ablate_to_purchaser_only",
    "build_schema",
    "encode_event",
    "encode_instance",
    "evaluate_fold",
    "filter_suppliers",
    "generate_synthetic",
    "init_params",
    "leakage_audit",
    "load",
    "load_model",
    "ndcg_at_k",
    "pair_gradient",
    "pair_gradient_step",
    "pair_loss",
    "precision_at_k",
    "rank_suppliers",
    "recall_at_k",
    "run_flat_cv",
    "run_nested_cv",
    "sample_negative",
    "save_model",
    "score",
    "score_all_suppliers",
    "score_candidates",
    "score_popularity",
    "sparsity",
    "split_events",
    "tokenize",
    "train",
    "train_popularity",
]
