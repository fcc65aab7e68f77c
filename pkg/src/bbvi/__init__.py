"""
BBVI with structured scale families

Black-box variational inference for hierarchical models: location-scale
families with mean-field, full-rank and bordered block-diagonal scale
matrices, proximal SGD, and diagnostics for gradient variance and
iteration complexity.
"""

from .config import Config, ExperimentConfig, load_config
from .experiments import ExperimentRunner, ResultSet
from .optimizer import OptimizerConfig, RunTrace, first_hit_time, run, run_replicated
from .results import write_results
from .scale_matrix import (
    BlockLayout,
    BorderedBlockDiagonalScale,
    DenseLowerTriangularScale,
    DiagonalScale,
    SparsityDescriptor,
)
from .targets import (
    CorrelatedHierarchicalGaussian,
    FiniteSumQuadratic,
    SyntheticIsotropicHierarchical,
)
from .variational_family import VariationalParams, initial_params

__version__ = "1.0.0"
__all__ = [
    "Config",
    "ExperimentConfig",
    "load_config",
    "ExperimentRunner",
    "ResultSet",
    "OptimizerConfig",
    "RunTrace",
    "first_hit_time",
    "run",
    "run_replicated",
    "write_results",
    "BlockLayout",
    "BorderedBlockDiagonalScale",
    "DenseLowerTriangularScale",
    "DiagonalScale",
    "SparsityDescriptor",
    "CorrelatedHierarchicalGaussian",
    "FiniteSumQuadratic",
    "SyntheticIsotropicHierarchical",
    "VariationalParams",
    "initial_params",
]
