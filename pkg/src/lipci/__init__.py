"""Confidence intervals for spatial linear regression under covariate shift.

Intervals cover the target-conditional least-squares coefficient when the
conditional mean of the response is Lipschitz in space. Bias is bounded with a
Wasserstein-1 distance between signed parts of the estimator's contrast
weights; the noise variance is estimated under the same smoothness constraint.
"""

from .dataset import (DatasetError, GroundTruth, SingularDesignError, SourceDataset, TargetSet,
                      ValidationReport, validate, with_intercept)
from .geometry import EARTH_RADIUS_KM, GeometryError, LocationSet, Metric, distance, pairwise_distances
from .interval import (IntervalResult, InvalidAlphaError, InvalidLipschitzError, bonferroni_intervals,
                       build_interval, estimate_sigma2, find_delta, lipschitz_ci, union_interval)
from .regression import (BaselineInterval, kdeiw_interval, ols_fit, ols_interval, sandwich_interval,
                         wls_interval)
from .transport import (BiasBound, DiscreteMeasure, MassImbalanceError, bias_bound, solve_transport,
                        wasserstein1)
from .variance import NoiseEstimate, QPConvergenceError, sigma2_nn, sigma2_qp
from .weights import WeightMatrix, contrast_vectors, knn_weights, one_nn_weights

__version__ = "0.1.0"

__all__ = [
    "BaselineInterval", "BiasBound", "DatasetError", "DiscreteMeasure", "EARTH_RADIUS_KM",
    "GeometryError", "GroundTruth", "IntervalResult", "InvalidAlphaError", "InvalidLipschitzError",
    "LocationSet", "MassImbalanceError", "Metric", "NoiseEstimate", "QPConvergenceError",
    "SingularDesignError", "SourceDataset", "TargetSet", "ValidationReport", "WeightMatrix",
    "bias_bound", "bonferroni_intervals", "build_interval", "contrast_vectors", "distance",
    "estimate_sigma2", "find_delta", "kdeiw_interval", "knn_weights", "lipschitz_ci", "ols_fit",
    "ols_interval", "one_nn_weights", "pairwise_distances", "sandwich_interval", "sigma2_nn",
    "sigma2_qp", "solve_transport", "union_interval", "validate", "wasserstein1", "with_intercept",
    "wls_interval",
]
