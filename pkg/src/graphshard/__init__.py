"""Sharded inductive graph learning with fairness/balance-constrained
partitioning, degree-preserving subgraph repair, similarity-weighted
ensemble prediction, and deterministic unlearning of nodes, edges, and
features."""

from .errors import (
    GraphShardError,
    NumericalError,
    ParseError,
    RequestError,
    ValidationError,
)
from .graphs import (
    DegreeRecord,
    LabeledGraph,
    Partition,
    build_degree_record,
    build_label_indicator,
    generate_sbm,
    guided_matrices,
    laplacian,
    load_graph,
    save_graph,
)
from .partition import (
    PartitionConfig,
    PartitionScores,
    balance_score,
    fairness_score,
    gpi_embedding,
    kmeans_rows,
    partition_fast,
    partition_scores,
    partition_spectral_rotation,
    random_partition,
    ratio_cut,
    update_indicator,
    update_rotation,
)
from .repair import (
    RepairedSubgraph,
    induced_subgraph,
    missing_counts,
    repair_shard,
    shrink_after_unlearn,
)
from .kernel import (
    eigen_embedding,
    graph_similarity,
    importance_weights,
    pyramid_match,
    update_single_weight,
)
from .models import (
    ModelParams,
    TrainConfig,
    aggregate_predictions,
    grad_check,
    init_params,
    predict,
    sgc_propagate,
    train_shard,
)
from .engine import (
    EngineConfig,
    EnsembleState,
    UnlearnRequest,
    batch_unlearn,
    evaluate,
    load_state,
    save_state,
    train_all,
    unlearn,
)

__version__ = "0.1.0"
