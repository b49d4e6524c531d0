"""Seed-blocked cross-validation grid search.

Cross-validated grid search has exactly two sources of noise: the CV
partition and the learner's own random behavior. This package runs the
grid with both of them blocked (held at fixed seeded levels shared by all
settings), fits a balanced mixed-effects decomposition to the resulting
error table, tests term significance by residual permutation, and compares
the efficiency of blocked designs against plain repeated CV.
"""

from .anova import (
    CV_SEEDS,
    RF_SEEDS,
    SETTING,
    AnovaResult,
    ModelSpec,
    SettingMeans,
    TermFit,
    default_model,
    estimate_setting_means,
    fit_anova,
    rank_settings,
)
from .data import CLASSIFICATION, REGRESSION, Dataset, load_csv
from .design import (
    BCV,
    BCV_X0,
    RCV,
    DesignPlan,
    ErrTable,
    Setting,
    SettingGrid,
    build_grid,
    err_table_from_csv,
    run_design,
)
from .errors import (
    AnovaError,
    BlockedCvError,
    ConfigError,
    DataError,
    DesignError,
    LearnerError,
    PartitionError,
    UnbalancedTableError,
)
from .learner import (
    MAE,
    MISCLASSIFICATION,
    RMSE,
    LearnerSpec,
    LossFn,
    RfHyperparams,
    compute_loss,
    default_loss,
    learner_kinds,
    predict,
    train,
)
from .partition import SRS, STS, FoldPartition, PartitionStrategy, partition_folds, partition_to_csv
from .permtest import (
    PermutationPlan,
    PermutationResult,
    TermTest,
    block_residuals,
    format_p_value,
    permutation_test,
)
from .rng import Pcg32, derive_seed
from .simcheck import (
    SyntheticModel,
    VarianceCheckReport,
    VarianceCheckRow,
    empirical_setting_mean_variance,
    formula_variance,
    simulate_table,
    validate_variance_formulas,
)

__version__ = "0.1.0"

__all__ = [
    "AnovaError",
    "AnovaResult",
    "BCV",
    "BCV_X0",
    "BlockedCvError",
    "CLASSIFICATION",
    "CV_SEEDS",
    "ConfigError",
    "DataError",
    "Dataset",
    "DesignError",
    "DesignPlan",
    "ErrTable",
    "FoldPartition",
    "LearnerError",
    "LearnerSpec",
    "LossFn",
    "MAE",
    "MISCLASSIFICATION",
    "ModelSpec",
    "PartitionError",
    "PartitionStrategy",
    "Pcg32",
    "PermutationPlan",
    "PermutationResult",
    "RCV",
    "REGRESSION",
    "RF_SEEDS",
    "RMSE",
    "RfHyperparams",
    "SETTING",
    "SRS",
    "STS",
    "Setting",
    "SettingGrid",
    "SettingMeans",
    "SyntheticModel",
    "TermFit",
    "TermTest",
    "UnbalancedTableError",
    "VarianceCheckReport",
    "VarianceCheckRow",
    "block_residuals",
    "build_grid",
    "compute_loss",
    "default_loss",
    "default_model",
    "derive_seed",
    "empirical_setting_mean_variance",
    "err_table_from_csv",
    "estimate_setting_means",
    "fit_anova",
    "format_p_value",
    "formula_variance",
    "learner_kinds",
    "load_csv",
    "partition_folds",
    "partition_to_csv",
    "permutation_test",
    "predict",
    "rank_settings",
    "run_design",
    "simulate_table",
    "train",
    "validate_variance_formulas",
]
