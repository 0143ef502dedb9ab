"""Interaction-network contextual embeddings for tabular data, on numpy."""

from .bench import ExperimentSpec, NormalizedMetricTable, normalized_metric, run_experiment
from .columnar import ColumnarEmbedder
from .data import (
    FitStatistics,
    PreparedDataset,
    RawTable,
    TabularSchema,
    load_csv,
    prepare_split,
    preprocess,
    split_kfold,
    train_test_split,
)
from .errors import (
    CheckpointError,
    ChecksumError,
    ContractViolation,
    DatasetUnavailable,
    IncompatibleCheckpoint,
    InceError,
    NumericError,
    ParamCountMismatch,
    ParseError,
    SchemaError,
    UnsupportedOperation,
)
from .interaction import InteractionEncoder, build_graph
from .interpret import (
    aggregate_interactions,
    collect_edge_vectors,
    exact_shapley_importance,
    exact_shapley_values,
    export_embedding_points,
    interpret,
    mahalanobis_pvalue,
)
from .model import (
    InceConfig,
    InceModel,
    cross_validate,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .params import tp_in, tp_transformer, verify_model_counts
from .stats import chi2_sf, spearman_rank
from .transformer import TransformerEncoder

__version__ = "0.1.0"
