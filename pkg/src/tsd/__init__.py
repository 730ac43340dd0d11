"""Targeted source detection: joint regression and nonnegative dictionary
learning with spatial/temporal graph regularization, solved by block ADMM."""

from tsd.core import (
    ChemDataset,
    Factorization,
    FitReport,
    Hyperparams,
    PreprocessSpec,
    encode,
    objective,
    predict,
    preprocess,
    read_table,
)
from tsd.graph import (
    GraphLaplacian,
    circular_day_distance,
    laplacian_quadratic,
    spatial_laplacian,
    temporal_laplacian,
)
from tsd.solver import fit, soft_threshold

__all__ = [
    "ChemDataset",
    "Factorization",
    "FitReport",
    "GraphLaplacian",
    "Hyperparams",
    "PreprocessSpec",
    "circular_day_distance",
    "encode",
    "fit",
    "laplacian_quadratic",
    "objective",
    "predict",
    "preprocess",
    "read_table",
    "soft_threshold",
    "spatial_laplacian",
    "temporal_laplacian",
]
