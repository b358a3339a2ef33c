"""Measurement harness: data, training, and the equivariance instruments."""

from .dataset import CLASSES, Dataset, DatasetSpec, gen_dataset, render_shape
from .metrics import (
    GRID_ANGLES,
    EquivErrorReport,
    equiv_error,
    model_fingerprint,
    stagewise_error,
)
from .mismatch import MismatchDemo, sampling_mismatch_demo
from .robustness import RobustnessCurve, robustness_sweep, rotate_image
from .strictness import StrictnessReport, check_strictness
from .training import TrainHyper, TrainingHistory, evaluate, train

__all__ = [
    "CLASSES",
    "Dataset",
    "DatasetSpec",
    "EquivErrorReport",
    "GRID_ANGLES",
    "MismatchDemo",
    "RobustnessCurve",
    "StrictnessReport",
    "TrainHyper",
    "TrainingHistory",
    "check_strictness",
    "equiv_error",
    "evaluate",
    "gen_dataset",
    "model_fingerprint",
    "render_shape",
    "robustness_sweep",
    "rotate_image",
    "sampling_mismatch_demo",
    "stagewise_error",
    "train",
]
