"""Balanced self-paced metric learning on small numpy embedding networks."""

from .data import Dataset, NoiseMask, SyntheticSpec, generate_synthetic, inject_label_noise
from .driver import AgeSchedule, ConvergenceTrace, TrainConfig, bspml_train, ms_baseline_train
from .errors import BSPMLError, ConfigError, ContractError, IngestionError, NumericError
from .msloss import MSHyperParams
from .weights import StepSchedule, WeightState, XiTable, objective, solve_weights

__all__ = [
    "AgeSchedule",
    "BSPMLError",
    "ConfigError",
    "ContractError",
    "ConvergenceTrace",
    "Dataset",
    "IngestionError",
    "MSHyperParams",
    "NoiseMask",
    "NumericError",
    "StepSchedule",
    "SyntheticSpec",
    "TrainConfig",
    "WeightState",
    "XiTable",
    "bspml_train",
    "generate_synthetic",
    "inject_label_noise",
    "ms_baseline_train",
    "objective",
    "solve_weights",
]

__version__ = "0.1.0"
