"""Sparse Tucker decomposition with a Kruskal-structured core, trained by SGD."""

from .config import HyperParams, read_config, write_config
from .exceptions import (
    ConfigError,
    DataError,
    DegenerateSplitError,
    DomainError,
    EmptyTensorError,
    InvariantError,
    ModelFormatError,
    NumericalDivergence,
    ParseError,
    SpTuckerError,
)
from .metrics import (
    EpochMetrics,
    bench_rank_scaling,
    bench_speedup,
    comm_cost_report,
    read_metrics_csv,
    rmse_mae,
    write_metrics_csv,
)
from .model import (
    Ranks,
    TuckerModel,
    deserialize,
    init_gaussian,
    predict,
    predict_entry,
    reconstruct_core,
    serialize,
)
from .sptensor import CooTensor, invert_vec_index, load_delimited, save_delimited, train_test_split, unfold_col_index, vec_index
from .train import fit

__version__ = "0.1.0"
