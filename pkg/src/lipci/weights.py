"""Nearest-neighbour weight matrices and the contrast vectors built on them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .dataset import SINGULAR_RTOL, SingularDesignError
from .geometry import Metric, iter_distance_blocks


class WeightsError(ValueError):
    code = "invalid-weights"


@dataclass(frozen=True)
class WeightMatrix:
    """Nonnegative ``M x N`` sparse matrix whose rows each sum to one."""

    entries: sp.csr_matrix

    def __post_init__(self):
        W = sp.csr_matrix(self.entries, dtype=float)
        if W.nnz and W.data.min() < 0:
            raise WeightsError("weights must be nonnegative")
        rows = np.asarray(W.sum(axis=1)).ravel()
        if np.any(np.abs(rows - 1.0) > 1e-12):
            raise WeightsError("every row of the weight matrix must sum to 1")
        object.__setattr__(self, "entries", W)

    @property
    def shape(self):
        return self.entries.shape

    def toarray(self) -> np.ndarray:
        return self.entries.toarray()

    def __matmul__(self, other):
        return self.entries @ other


def _pick_nearest(D: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """Column indices of the K smallest entries per row, ties broken at random."""
    out = np.empty((D.shape[0], K), dtype=np.int64)
    kth = np.partition(D, K - 1, axis=1)[:, K - 1]
    for i, row in enumerate(D):
        inside = np.flatnonzero(row < kth[i])
        boundary = np.flatnonzero(row == kth[i])
        need = K - inside.size
        if boundary.size > need:
            boundary = rng.choice(boundary, size=need, replace=False)
        out[i] = np.concatenate([inside, boundary])
    return out


def knn_weights(metric: Metric, source, target, K: int, seed: int = 0) -> WeightMatrix:
    """Average of the K nearest sources for each target (weight 1/K each).

    Distances are compared exactly; among sources tied at the K-th distance
    the ones kept are chosen uniformly at random from a generator seeded by
    ``seed``.
    """
    n = len(source)
    if n < 1:
        raise WeightsError("empty source set")
    if not 1 <= K <= n:
        raise WeightsError(f"K={K} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    cols = np.concatenate([_pick_nearest(D, K, rng)
                           for _, D in iter_distance_blocks(metric, target, source)])
    m = cols.shape[0]
    rows = np.repeat(np.arange(m), K)
    data = np.full(m * K, 1.0 / K)
    W = sp.csr_matrix((data, (rows, cols.ravel())), shape=(m, n))
    return WeightMatrix(W)


def one_nn_weights(metric: Metric, source, target, seed: int = 0) -> WeightMatrix:
    """Put all weight of each target on its closest source."""
    return knn_weights(metric, source, target, 1, seed)


@dataclass(frozen=True)
class ContrastVectors:
    w: np.ndarray
    v: np.ndarray
    coefficient_index: int


def target_projection(target_covariates) -> np.ndarray:
    """Rows of ``(X*^T X*)^{-1} X*^T``; row p is the contrast w for coefficient p."""
    X = np.asarray(target_covariates, dtype=float)
    G = X.T @ X
    ev = np.linalg.eigvalsh(G)
    if not ev[-1] > 0 or ev[0] <= SINGULAR_RTOL * ev[-1]:
        raise SingularDesignError("X*^T X* is singular")
    return scipy.linalg.cho_solve(scipy.linalg.cho_factor(G), X.T)


def contrast_vectors(target_covariates, psi: WeightMatrix, coefficient_index: int) -> ContrastVectors:
    H = target_projection(target_covariates)
    if not 0 <= coefficient_index < H.shape[0]:
        raise WeightsError(f"coefficient index {coefficient_index} out of range")
    if psi.shape[0] != H.shape[1]:
        raise WeightsError("weight matrix rows must match the number of targets")
    w = H[coefficient_index]
    v = np.asarray(psi.entries.T @ w).ravel()
    return ContrastVectors(w=w, v=v, coefficient_index=coefficient_index)
