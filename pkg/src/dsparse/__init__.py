"""Double sparse iterative hard thresholding for grouped linear regression."""
from .estimators import DSIHTRegressor, TwoStageDSIHT, TwoStageDSIHTCV
from .exceptions import (DimensionMismatch, DsparseError, InvalidBudget, InvalidRegime,
                         InvalidSchedule, NonFiniteIterate, SingularGram, StructureMismatch,
                         SupportMismatch, TooLarge, ZeroColumn)
from .model import (Coefficients, GroupStructure, ProblemInstance, SparsityBudget,
                    generate_gaussian_design, generate_signal_uniform, make_instance)
from .solver import (DsihtConfig, FitResult, TwoStageConfig, dsiht_fit, oracle_ols,
                     two_stage_fit)
from .threshold import ThresholdParams, apply_double, apply_element, apply_group

__version__ = "0.1.0"

__all__ = [
    "Coefficients", "DSIHTRegressor", "DimensionMismatch", "DsihtConfig", "DsparseError",
    "FitResult", "GroupStructure", "InvalidBudget", "InvalidRegime", "InvalidSchedule",
    "NonFiniteIterate", "ProblemInstance", "SingularGram", "SparsityBudget",
    "StructureMismatch", "SupportMismatch", "ThresholdParams", "TooLarge", "TwoStageConfig",
    "TwoStageDSIHT", "TwoStageDSIHTCV", "ZeroColumn", "apply_double", "apply_element",
    "apply_group", "dsiht_fit", "generate_gaussian_design", "generate_signal_uniform",
    "make_instance", "oracle_ols", "two_stage_fit",
]
