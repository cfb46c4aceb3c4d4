"""Attribute a model's loss change between two distributions to covariate
shift and conditional shift over a shared covariate distribution."""

__version__ = "0.1.0"

from .exceptions import (
    EstimationError,
    InvariantError,
    SchemaError,
    ShiftDecompError,
    UnsupportedMethodError,
)
from .dataset import DomainSample, LossSpec, PooledDataset, alpha_hat, load_csv, pool
from .weights import WeightScheme, lambda_derivs, lambda_fn, weight_p, weight_q
from .propensity import (
    KernelConfig,
    KernelPropensity,
    LogisticPropensity,
    NadarayaWatsonRegressor,
    PrecomputedPropensity,
    cross_fit,
    diagnostics,
)
from .decomposition import DecompositionReport, decompose, plain_means, theta_hats
from .inference import IntervalEstimate, half_sample_bootstrap, if_se, np_bootstrap
from .estimator import ShiftDecomposition

__all__ = [
    "__version__",
    "DecompositionReport",
    "DomainSample",
    "EstimationError",
    "IntervalEstimate",
    "InvariantError",
    "KernelConfig",
    "KernelPropensity",
    "LogisticPropensity",
    "LossSpec",
    "NadarayaWatsonRegressor",
    "PooledDataset",
    "PrecomputedPropensity",
    "SchemaError",
    "ShiftDecompError",
    "ShiftDecomposition",
    "UnsupportedMethodError",
    "WeightScheme",
    "alpha_hat",
    "cross_fit",
    "decompose",
    "diagnostics",
    "half_sample_bootstrap",
    "if_se",
    "lambda_derivs",
    "lambda_fn",
    "load_csv",
    "np_bootstrap",
    "plain_means",
    "pool",
    "theta_hats",
    "weight_p",
    "weight_q",
]
