"""Split conformal prediction on embedding vectors with k-NN cosine scores."""

__version__ = "0.1.0"

from cpknn._kernels import BACKEND
from cpknn.conformal import (
    MAX_SCORE,
    CalibrationTable,
    calibrate,
    load_calibration_table,
    nonconformity,
    p_value,
    p_value_matrix,
    prediction_set,
    save_calibration_table,
    top1,
)
from cpknn.errors import CpknnError, ValidationError
from cpknn.index import ClassPartitionedIndex, KnnConfig, build_index, index_fingerprint
from cpknn.metrics import CoverageCurve, MetricsReport, default_grid, evaluate, sweep
from cpknn.simulate import (
    GeneratorConfig,
    ShiftConfig,
    apply_shift,
    generate,
    run_validity_experiment,
)
from cpknn.store import (
    DataSplit,
    EmbeddingSet,
    LabeledExample,
    SplitSpec,
    load_embeddings,
    normalize,
    save_embeddings,
    save_split,
    split,
)

__all__ = [
    "BACKEND",
    "MAX_SCORE",
    "CalibrationTable",
    "ClassPartitionedIndex",
    "CoverageCurve",
    "CpknnError",
    "DataSplit",
    "EmbeddingSet",
    "GeneratorConfig",
    "KnnConfig",
    "LabeledExample",
    "MetricsReport",
    "ShiftConfig",
    "SplitSpec",
    "ValidationError",
    "apply_shift",
    "build_index",
    "calibrate",
    "default_grid",
    "evaluate",
    "generate",
    "index_fingerprint",
    "load_calibration_table",
    "load_embeddings",
    "nonconformity",
    "normalize",
    "p_value",
    "p_value_matrix",
    "prediction_set",
    "run_validity_experiment",
    "save_calibration_table",
    "save_embeddings",
    "save_split",
    "split",
    "sweep",
    "top1",
]
