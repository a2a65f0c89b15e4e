"""Estimands, the weighted point estimate, and classical baseline intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import stats
from sklearn.model_selection import KFold
from sklearn.neighbors import KernelDensity

from .dataset import SINGULAR_RTOL, SingularDesignError
from .weights import WeightMatrix, target_projection

SIM_BANDWIDTHS = (0.01, 0.025, 0.05, 0.1, 0.25, 0.5)
GEO_BANDWIDTHS = (0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0)
DENSITY_FLOOR = 1e-300


class RegressionError(ValueError):
    code = "regression-error"


def _spd_inverse(G: np.ndarray, what: str) -> np.ndarray:
    ev = np.linalg.eigvalsh(G)
    if not ev[-1] > 0 or ev[0] <= SINGULAR_RTOL * ev[-1]:
        raise SingularDesignError(f"{what} is singular")
    return scipy.linalg.cho_solve(scipy.linalg.cho_factor(G), np.eye(G.shape[0]))


def target_conditional_estimand(target, conditional_mean_at_targets) -> np.ndarray:
    """OLS coefficients of the conditional mean on the target design."""
    fv = np.asarray(conditional_mean_at_targets, dtype=float).ravel()
    H = target_projection(target.covariates)
    if fv.shape[0] != H.shape[1]:
        raise RegressionError("one conditional-mean value per target required")
    return H @ fv


def theta_hat_psi(target, psi: WeightMatrix, Y) -> np.ndarray:
    """Regress the weighted source responses ``psi @ Y`` on the target design."""
    H = target_projection(target.covariates)
    if psi.shape[0] != H.shape[1]:
        raise RegressionError("weight matrix rows must match targets")
    return H @ (psi @ np.asarray(Y, dtype=float))


@dataclass
class LinearFit:
    coefficients: np.ndarray
    coefficient_cov: np.ndarray
    residuals: np.ndarray
    dof: int
    method: str
    sigma2: float = float("nan")


@dataclass
class BaselineInterval:
    method: str
    coefficient_index: int
    estimate: float
    lower: float
    upper: float
    se: float
    dof: int | None  # None for z-based intervals

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def critical_value(self, alpha: float) -> float:
        if self.dof is None:
            return float(stats.norm.ppf(1 - alpha / 2))
        return t_quantile(1 - alpha / 2, self.dof)


def t_quantile(p: float, dof: float) -> float:
    return float(stats.t.ppf(p, dof))


def _design(X, Y):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Y = np.asarray(Y, dtype=float).ravel()
    n, p = X.shape
    if Y.shape[0] != n:
        raise RegressionError("X and Y row counts differ")
    if n <= p:
        raise RegressionError(f"need N > P (N={n}, P={p})")
    return X, Y, n, p


def ols_fit(X, Y) -> LinearFit:
    X, Y, n, p = _design(X, Y)
    inv = _spd_inverse(X.T @ X, "X^T X")
    beta = inv @ (X.T @ Y)
    resid = Y - X @ beta
    s2 = float(resid @ resid) / (n - p)
    return LinearFit(beta, s2 * inv, resid, n - p, "ols", s2)


def _interval(method, fit: LinearFit, p: int, alpha: float, z: bool) -> BaselineInterval:
    if not 0 < alpha < 1:
        raise RegressionError("alpha must lie in (0, 1)")
    est = float(fit.coefficients[p])
    se = float(np.sqrt(max(fit.coefficient_cov[p, p], 0.0)))
    dof = None if z else fit.dof
    crit = float(stats.norm.ppf(1 - alpha / 2)) if z else t_quantile(1 - alpha / 2, fit.dof)
    return BaselineInterval(method, p, est, est - crit * se, est + crit * se, se, dof)


def ols_interval(fit: LinearFit, p: int, alpha: float = 0.05) -> BaselineInterval:
    """Classical interval with the t quantile on N - P degrees of freedom."""
    return _interval("ols", fit, p, alpha, z=False)


def sandwich_fit(X, Y) -> LinearFit:
    """OLS point estimate with the HC1 heteroskedasticity-robust covariance."""
    X, Y, n, p = _design(X, Y)
    base = ols_fit(X, Y)
    inv = _spd_inverse(X.T @ X, "X^T X")
    meat = (X * base.residuals[:, None] ** 2).T @ X
    cov = n / (n - p) * inv @ meat @ inv
    return LinearFit(base.coefficients, 0.5 * (cov + cov.T), base.residuals, n - p, "sandwich",
                     base.sigma2)


def sandwich_interval(X, Y, p: int, alpha: float = 0.05) -> BaselineInterval:
    """z-interval with the HC1 variance."""
    return _interval("sandwich", sandwich_fit(X, Y), p, alpha, z=True)


def wls_fit(X, Y, weights) -> LinearFit:
    X, Y, n, p = _design(X, Y)
    wts = np.asarray(weights, dtype=float).ravel()
    if wts.shape[0] != n or np.any(wts <= 0) or not np.all(np.isfinite(wts)):
        raise RegressionError("weights must be finite and positive, one per row")
    inv = _spd_inverse((X * wts[:, None]).T @ X, "X^T W X")
    beta = inv @ ((X * wts[:, None]).T @ Y)
    resid = Y - X @ beta
    s2 = float(np.sum(wts * resid ** 2)) / (n - p)
    return LinearFit(beta, s2 * inv, resid, n - p, "wls", s2)


def wls_interval(X, Y, weights, p: int, alpha: float = 0.05) -> BaselineInterval:
    return _interval("wls", wls_fit(X, Y, weights), p, alpha, z=False)


@dataclass
class DensityRatioWeights:
    weights: np.ndarray
    bandwidth_source: float
    bandwidth_target: float
    cv_grid: np.ndarray


def kde_log_density(train, points, bandwidth: float) -> np.ndarray:
    """Gaussian-kernel log density of ``train`` evaluated at ``points``."""
    kde = KernelDensity(kernel="gaussian", bandwidth=bandwidth).fit(np.asarray(train, float))
    return kde.score_samples(np.asarray(points, float))


def select_bandwidth(points, cv_grid, folds: int = 5, seed: int = 0) -> float:
    """Bandwidth with the best mean held-out log likelihood under K-fold CV."""
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < folds:
        raise RegressionError(f"need at least {folds} points for {folds}-fold CV")
    splits = list(KFold(folds, shuffle=True, random_state=seed).split(pts))
    scores = []
    for h in cv_grid:
        fold_scores = []
        for tr, te in splits:
            ll = kde_log_density(pts[tr], pts[te], h)
            fold_scores.append(np.mean(ll))
        scores.append(np.mean(fold_scores))
    scores = np.asarray(scores)
    if not np.any(np.isfinite(scores)):
        raise RegressionError("held-out likelihood degenerate for every bandwidth")
    return float(np.asarray(cv_grid)[int(np.nanargmax(np.where(np.isfinite(scores), scores, -np.inf)))])


def kde_importance_weights(source_locs, target_locs, cv_grid=SIM_BANDWIDTHS, folds: int = 5,
                           seed: int = 0) -> DensityRatioWeights:
    """Target-to-source density ratio at the source locations."""
    src = getattr(source_locs, "coords", source_locs)
    tgt = getattr(target_locs, "coords", target_locs)
    grid = np.asarray(cv_grid, dtype=float)
    if grid.size == 0:
        raise RegressionError("empty bandwidth grid")
    h_s = select_bandwidth(src, grid, folds, seed)
    h_t = select_bandwidth(tgt, grid, folds, seed)
    p_s = np.maximum(np.exp(kde_log_density(src, src, h_s)), DENSITY_FLOOR)
    p_t = np.maximum(np.exp(kde_log_density(tgt, src, h_t)), DENSITY_FLOOR)
    return DensityRatioWeights(p_t / p_s, h_s, h_t, grid)


def kdeiw_interval(X, Y, source_locs, target_locs, p: int, alpha: float = 0.05,
                   cv_grid=SIM_BANDWIDTHS, seed: int = 0) -> BaselineInterval:
    dr = kde_importance_weights(source_locs, target_locs, cv_grid, seed=seed)
    out = wls_interval(X, Y, dr.weights, p, alpha)
    out.method = "kdeiw"
    return out
