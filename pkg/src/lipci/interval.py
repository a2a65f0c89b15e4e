"""Bias-aware confidence intervals.

The coefficient error is Gaussian with an unknown mean ``b`` in ``[-B, B]``
and standard deviation ``c``. The narrowest symmetric interval valid for
every such ``b`` is ``estimate +/- (B + c * delta)`` with ``delta`` the root
of ``Phi(delta) - Phi(-2B/c - delta) = 1 - alpha``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

from .dataset import SourceDataset, TargetSet, check_invertible, validate
from .geometry import Metric
from .transport import BiasBound, bias_bound
from .variance import QP_MAX_N, NoiseEstimate, sigma2_nn, sigma2_qp
from .weights import ContrastVectors, WeightMatrix, knn_weights, one_nn_weights, target_projection


class IntervalError(ValueError):
    code = "invalid-interval-input"


class InvalidLipschitzError(IntervalError):
    code = "invalid-lipschitz"


class InvalidAlphaError(IntervalError):
    code = "invalid-alpha"


def std_normal_cdf(x):
    return ndtr(x)


def std_normal_quantile(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise IntervalError("quantile level must lie strictly inside (0, 1)")
    q = ndtri(p)
    return float(q) if q.ndim == 0 else q


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise InvalidAlphaError(f"alpha={alpha} outside (0, 1)")


def delta_residual(delta: float, ratio: float, alpha: float) -> float:
    """``Phi(delta) - Phi(-2 ratio - delta) - (1 - alpha)``, written to avoid cancellation."""
    return alpha - ndtr(-delta) - ndtr(-2.0 * ratio - delta)


def find_delta(B: float, c: float, alpha: float) -> float:
    """Calibration multiplier for bias bound ``B`` and noise scale ``c > 0``.

    The root lies in ``[Phi^-1(1 - alpha), Phi^-1(1 - alpha/2)]`` and is
    found with Brent's method on that bracket.
    """
    _check_alpha(alpha)
    if not c > 0:
        raise IntervalError("noise scale c must be positive; use estimate +/- B when c = 0")
    if not B >= 0:
        raise IntervalError("bias bound must be nonnegative")
    ratio = B / c
    lo = -ndtri(alpha)
    hi = -ndtri(alpha / 2)
    f_lo = delta_residual(lo, ratio, alpha)
    if f_lo >= 0:
        return float(lo)
    if delta_residual(hi, ratio, alpha) <= 0:
        return float(hi)
    return float(brentq(delta_residual, lo, hi, args=(ratio, alpha),
                        xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))


@dataclass
class IntervalResult:
    coefficient_index: int
    estimate: float
    lower: float
    upper: float
    bias_halfwidth: float
    randomness_scale: float
    delta: float
    alpha: float
    sigma2: float
    sigma2_source: str
    diagnostics: dict | None = None

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return asdict(self)


def _assemble(estimate, B, c, alpha, index=0, sigma2=float("nan"), source="known"):
    if c > 0:
        delta = find_delta(B, c, alpha)
        half = B + c * delta
    else:
        # no randomness: the bias bound alone is the interval
        delta = float(-ndtri(alpha / 2)) if B == 0 else float(-ndtri(alpha))
        half = B
    return IntervalResult(coefficient_index=int(index), estimate=float(estimate),
                          lower=float(estimate - half), upper=float(estimate + half),
                          bias_halfwidth=float(B), randomness_scale=float(c),
                          delta=float(delta), alpha=float(alpha), sigma2=float(sigma2),
                          sigma2_source=source)


def build_interval(estimate: float, bias: BiasBound | float, v, sigma2: NoiseEstimate | float,
                   alpha: float, coefficient_index: int = 0) -> IntervalResult:
    _check_alpha(alpha)
    B = bias.B if isinstance(bias, BiasBound) else float(bias)
    if isinstance(sigma2, NoiseEstimate):
        s2, source = sigma2.sigma2, sigma2.method
    else:
        s2, source = float(sigma2), "known"
    if not s2 >= 0:
        raise IntervalError("sigma2 must be nonnegative")
    c = math.sqrt(s2) * float(np.linalg.norm(v))
    return _assemble(estimate, B, c, alpha, coefficient_index, s2, source)


def union_interval(estimate: float, B: float, c: float, alpha: float,
                   coefficient_index: int = 0) -> IntervalResult:
    """Union of the classical intervals over every bias in ``[-B, B]``."""
    _check_alpha(alpha)
    z = float(-ndtri(alpha / 2))
    half = B + c * z
    return IntervalResult(coefficient_index=int(coefficient_index), estimate=float(estimate),
                          lower=float(estimate - half), upper=float(estimate + half),
                          bias_halfwidth=float(B), randomness_scale=float(c), delta=z,
                          alpha=float(alpha), sigma2=float("nan"), sigma2_source="known")


def bonferroni_intervals(per_output_inputs, alpha: float) -> list[IntervalResult]:
    """Intervals for D outputs with simultaneous level ``1 - alpha``.

    Each element of ``per_output_inputs`` is a mapping of
    :func:`build_interval` keyword arguments (everything except ``alpha``).
    """
    _check_alpha(alpha)
    items = list(per_output_inputs)
    if not items:
        raise IntervalError("need at least one output")
    level = alpha / len(items)
    return [build_interval(alpha=level, **kw) for kw in items]


def make_psi(metric: Metric, source, target, psi_kind: str = "nn1", seed: int = 0) -> WeightMatrix:
    """Weight matrix from a spec string: ``"nn1"`` or ``"knn:K"``."""
    if psi_kind == "nn1":
        return one_nn_weights(metric, source, target, seed)
    if psi_kind.startswith("knn:"):
        return knn_weights(metric, source, target, int(psi_kind[4:]), seed)
    raise IntervalError(f"unknown weight matrix kind {psi_kind!r}")


def estimate_sigma2(metric: Metric, source: SourceDataset, L: float,
                    mode: str | None = None, **qp_options) -> NoiseEstimate:
    """Noise variance by QP, or by nearest neighbours when N is large."""
    if mode is None:
        mode = "qp" if source.n <= QP_MAX_N else "nn"
    if mode == "qp":
        return sigma2_qp(metric, source, L, **qp_options)
    if mode == "nn":
        return sigma2_nn(metric, source)
    raise IntervalError(f"unknown sigma2 mode {mode!r}")


def lipschitz_ci(source: SourceDataset, target: TargetSet, L: float, alpha: float = 0.05,
                 metric: Metric | None = None, sigma2: float | NoiseEstimate | None = None,
                 psi_kind: str = "nn1", coefficients=None, *, sigma2_mode: str | None = None,
                 seed: int = 0, psi: WeightMatrix | None = None) -> list[IntervalResult]:
    """Lipschitz-driven confidence intervals for target-conditional OLS coefficients.

    Parameters
    ----------
    source, target : SourceDataset, TargetSet
        Observed data and the locations/covariates where inference is wanted.
    L : float
        Lipschitz constant assumed for the conditional mean in space.
    alpha : float
        One minus the confidence level.
    metric : Metric, optional
        Distance between locations; Euclidean by default.
    sigma2 : float or NoiseEstimate, optional
        Known noise variance. Estimated from the source data when omitted
        (``sigma2_mode`` selects "qp" or "nn").
    psi_kind : {"nn1", "knn:K"}
        Construction of the weight matrix.
    coefficients : iterable of int, optional
        Coefficient indices; all by default.
    """
    metric = metric or Metric.euclidean()
    if not (np.isfinite(L) and L > 0):
        raise InvalidLipschitzError(f"Lipschitz constant must be positive, got {L}")
    _check_alpha(alpha)
    report = validate(source, target)
    blocking = [f for f in report.findings if not f.startswith("duplicate-source-locations")]
    if blocking:
        if any(f.startswith("singular-target-design") for f in blocking):
            check_invertible(target.covariates)
        raise IntervalError("; ".join(blocking))

    if psi is None:
        psi = make_psi(metric, source.locations, target.locations, psi_kind, seed)
    H = target_projection(target.covariates)
    psiY = psi @ source.responses
    if sigma2 is None:
        noise = estimate_sigma2(metric, source, L, sigma2_mode)
    elif isinstance(sigma2, NoiseEstimate):
        noise = sigma2
    else:
        noise = NoiseEstimate.known(sigma2)

    idx = range(H.shape[0]) if coefficients is None else coefficients
    results = []
    for p in idx:
        w = H[p]
        v = np.asarray(psi.entries.T @ w).ravel()
        bias = bias_bound(metric, source.locations, target.locations,
                          ContrastVectors(w, v, p), L)
        res = build_interval(float(w @ psiY), bias, v, noise, alpha, p)
        res.diagnostics = {"A": bias.A, "w1": bias.w1, "L": bias.L,
                           "v_norm": float(np.linalg.norm(v))}
        results.append(res)
    return results
