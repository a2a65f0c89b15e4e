"""Noise-variance estimators.

``sigma2_qp`` fits the best L-Lipschitz function to the responses in least
squares and returns the mean squared residual. Only pairwise constraints
between observed locations are needed, but there are N(N-1)/2 of them, so
the QP is solved by constraint generation: start from nearest-neighbour
pairs, solve, add every violated pair, repeat. The result is certified by a
Lagrangian duality gap over the full constraint set.

``sigma2_nn`` is the cheap alternative based on differences between each
response and that of its nearest neighbour.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from .dataset import SourceDataset
from .geometry import Metric, iter_distance_blocks

log = logging.getLogger(__name__)

QP_MAX_N = 2000


class VarianceError(RuntimeError):
    code = "variance-error"


class QPConvergenceError(VarianceError):
    code = "qp-nonconvergence"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class NoiseEstimate:
    sigma2: float
    method: str  # "known", "qp" or "nn"
    fitted_values: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def known(cls, sigma2: float) -> "NoiseEstimate":
        if not sigma2 >= 0:
            raise VarianceError("sigma2 must be nonnegative")
        return cls(float(sigma2), "known")


def _pair_violations(metric, locs, G, L, block=512):
    """All pairs (i < j) with |G_i - G_j| - L d_ij, as arrays (i, j, excess)."""
    out_i, out_j, out_v = [], [], []
    max_excess = -np.inf
    for start, D in iter_distance_blocks(metric, locs, locs, block):
        rows = np.arange(start, start + D.shape[0])
        excess = np.abs(G[rows, None] - G[None, :]) - L * D
        upper = np.arange(D.shape[1])[None, :] > rows[:, None]
        excess = np.where(upper, excess, -np.inf)
        max_excess = max(max_excess, float(excess.max(initial=-np.inf)))
        ii, jj = np.nonzero(excess > 0)
        out_i.append(rows[ii])
        out_j.append(jj)
        out_v.append(excess[ii, jj])
    return np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_v), max_excess


def _initial_pairs(metric, locs, k):
    pairs = set()
    for start, D in iter_distance_blocks(metric, locs, locs, 512):
        rows = np.arange(start, start + D.shape[0])
        D = D.copy()
        D[np.arange(D.shape[0]), rows] = np.inf
        nbrs = np.argpartition(D, k - 1, axis=1)[:, :k] if k < D.shape[1] - 1 else np.argsort(D, axis=1)[:, :-1]
        for r, js in zip(rows, nbrs):
            for j in js:
                pairs.add((min(r, j), max(r, j)))
    return pairs


def _constraint_matrix(pairs, dist, n, L):
    """Rows ``G_i - G_j <= L d`` and ``G_j - G_i <= L d`` for each pair."""
    k = len(pairs)
    P = np.asarray(sorted(pairs), dtype=np.int64).reshape(k, 2)
    r = np.arange(2 * k)
    cols_plus = np.concatenate([P[:, 0], P[:, 1]])
    cols_minus = np.concatenate([P[:, 1], P[:, 0]])
    A = sp.csr_matrix((np.concatenate([np.ones(2 * k), -np.ones(2 * k)]),
                       (np.concatenate([r, r]), np.concatenate([cols_plus, cols_minus]))),
                      shape=(2 * k, n))
    d = dist(P[:, 0], P[:, 1])
    h = L * np.concatenate([d, d])
    return A, h


def _repair(G, metric, locs, L):
    """Make G exactly feasible by averaging duplicates and shrinking to its mean."""
    coords = locs.coords
    _, inverse = np.unique(coords, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    if inverse.max() + 1 < len(G):
        sums = np.bincount(inverse, weights=G)
        counts = np.bincount(inverse)
        G = (sums / counts)[inverse]
    ii, jj, _, _ = _pair_violations(metric, locs, G, L)
    if ii.size:
        d = _rowwise(metric, coords[ii], coords[jj])
        gap = np.abs(G[ii] - G[jj])
        t = float(np.min(np.where(gap > 0, L * d / gap, 1.0)))
        mean = G.mean()
        G = mean + min(t, 1.0) * (G - mean)
    return G


def sigma2_qp(metric: Metric, source: SourceDataset, L: float, *,
              rel_gap_tol: float = 1e-6, max_iter: int = 50_000,
              max_rounds: int = 100, allow_large: bool = False,
              init_neighbors: int = 8) -> NoiseEstimate:
    """Mean squared residual of the best L-Lipschitz least-squares fit."""
    Y = source.responses
    n = Y.size
    if n < 2:
        raise VarianceError("sigma2_qp needs at least two observations")
    if not L >= 0:
        raise VarianceError("Lipschitz constant must be nonnegative")
    if n > QP_MAX_N and not allow_large:
        raise VarianceError(
            f"N={n} exceeds the QP size guard ({QP_MAX_N}); use sigma2_nn or allow_large=True")
    locs = source.locations
    popvar = float(np.mean((Y - Y.mean()) ** 2))
    if L == 0:
        G = np.full(n, Y.mean())
        return NoiseEstimate(popvar, "qp", G, {"rounds": 0, "iterations": 0,
                                               "max_violation": 0.0, "rel_gap": 0.0})
    _, _, _, excess = _pair_violations(metric, locs, Y, L)
    if excess <= 0:
        return NoiseEstimate(0.0, "qp", Y.copy(), {"rounds": 0, "iterations": 0,
                                                   "max_violation": 0.0, "rel_gap": 0.0})

    coords = locs.coords

    def dist(i, j):
        out = np.empty(i.size)
        for s in range(0, i.size, 4096):
            a, b = coords[i[s:s + 4096]], coords[j[s:s + 4096]]
            out[s:s + 4096] = _rowwise(metric, a, b)
        return out

    pairs = _initial_pairs(metric, locs, min(init_neighbors, n - 1))
    feas_scale = L * _max_distance(metric, locs) + 1.0
    iterations = 0
    G = lam = A = h = None
    for rounds in range(1, max_rounds + 1):
        A, h = _constraint_matrix(pairs, dist, n, L)
        g = cp.Variable(n)
        cons = [A @ g <= h]
        # unscaled objective: a 1/n factor costs several digits of dual accuracy
        prob = cp.Problem(cp.Minimize(cp.sum_squares(Y - g)), cons)
        try:
            prob.solve(solver=cp.CLARABEL, max_iter=max_iter,
                       tol_gap_abs=1e-12, tol_gap_rel=1e-10, tol_feas=1e-10)
        except cp.error.SolverError as exc:
            raise QPConvergenceError(f"QP solver failed: {exc}",
                                     {"rounds": rounds, "pairs": len(pairs)}) from exc
        iterations += int(prob.solver_stats.num_iters or 0)
        if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            raise QPConvergenceError(f"QP status {prob.status}",
                                     {"rounds": rounds, "iterations": iterations})
        G = np.asarray(g.value).ravel()
        lam = np.maximum(np.asarray(cons[0].dual_value).ravel(), 0.0)
        ii, jj, ex, _ = _pair_violations(metric, locs, G, L)
        new = {(int(a), int(b)) for a, b, e in zip(ii, jj, ex)
               if e > 1e-10 * feas_scale} - pairs
        log.debug("qp round %d: %d pairs, %d new violations", rounds, len(pairs), len(new))
        if not new:
            break
        pairs |= new
    else:
        raise QPConvergenceError("constraint generation did not converge",
                                 {"rounds": max_rounds, "iterations": iterations})

    G = _repair(G, metric, locs, L)
    primal = float(np.mean((Y - G) ** 2))
    AtL = A.T @ lam
    lin, quad = float(lam @ (A @ Y - h)), 0.25 * n * float(AtL @ AtL)
    # lam is scaled for the unscaled objective; the best multiple t * lam (concave
    # in t, dual feasible for any t >= 0) gives the bound for the 1/n objective
    t = lin / (2 * quad) if quad > 0 and lin > 0 else 1.0
    dual = t * lin - t * t * quad
    rel_gap = max(primal - dual, 0.0) / max(primal, 1e-8 * popvar, 1e-300)
    _, _, _, max_viol = _pair_violations(metric, locs, G, L)
    diag = {"rounds": rounds, "iterations": iterations, "pairs": len(pairs),
            "max_violation": max(max_viol, 0.0), "rel_gap": rel_gap,
            "primal": primal, "dual": dual}
    if rel_gap > rel_gap_tol:
        raise QPConvergenceError(f"duality gap {rel_gap:.3g} above tolerance", diag)
    return NoiseEstimate(primal, "qp", G, diag)


def _rowwise(metric, a, b):
    if metric.kind == "haversine":
        h = (np.sin((b[:, 0] - a[:, 0]) / 2) ** 2
             + np.cos(a[:, 0]) * np.cos(b[:, 0]) * np.sin((b[:, 1] - a[:, 1]) / 2) ** 2)
        return 2 * metric.radius * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return np.sqrt(np.sum((a - b) ** 2, axis=1))


def _max_distance(metric, locs):
    return max(float(D.max()) for _, D in iter_distance_blocks(metric, locs, locs, 512))


def nearest_other(metric: Metric, locs) -> np.ndarray:
    """Index of the closest point with a different index (lowest index on ties)."""
    out = np.empty(len(locs), dtype=np.int64)
    for start, D in iter_distance_blocks(metric, locs, locs, 1024):
        D = D.copy()
        rows = np.arange(D.shape[0])
        D[rows, rows + start] = np.inf
        out[start:start + D.shape[0]] = np.argmin(D, axis=1)
    return out


def sigma2_nn(metric: Metric, source: SourceDataset) -> NoiseEstimate:
    """Half the mean squared difference between each response and its neighbour's."""
    Y = source.responses
    if Y.size < 2:
        raise VarianceError("sigma2_nn needs at least two observations")
    eta = nearest_other(metric, source.locations)
    s2 = float(np.sum((Y - Y[eta]) ** 2) / (2 * Y.size))
    return NoiseEstimate(s2, "nn", None, {"neighbors": eta})
