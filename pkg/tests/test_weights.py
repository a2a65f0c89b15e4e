import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lipci.dataset import SingularDesignError
from lipci.geometry import LocationSet, Metric
from lipci.weights import (WeightMatrix, WeightsError, contrast_vectors, knn_weights,
                           one_nn_weights, target_projection)

EUC = Metric.euclidean()


def line(*xs):
    return LocationSet(np.column_stack([xs, np.zeros(len(xs))]))


def test_target_on_source_gets_all_weight():
    W = one_nn_weights(EUC, line(0.0, 1.0, 2.0), line(1.0)).toarray()
    np.testing.assert_array_equal(W, [[0, 1, 0]])


def test_nearest_of_three():
    # distances from the target at 0 are (2, 1, 3)
    W = one_nn_weights(EUC, line(2.0, -1.0, 3.0), line(0.0)).toarray()
    np.testing.assert_array_equal(W, [[0, 1, 0]])


def test_tie_break_is_uniform():
    src, tgt = line(-1.0, 1.0), line(0.0)
    picks = np.array([one_nn_weights(EUC, src, tgt, seed=s).entries.indices[0]
                      for s in range(10_000)])
    share = picks.mean()
    se = np.sqrt(0.25 / picks.size)
    assert abs(share - 0.5) <= 3 * se


def test_tie_break_reproducible():
    src, tgt = line(-1.0, 1.0, -1.0, 1.0), line(0.0, 0.0, 0.0)
    a = one_nn_weights(EUC, src, tgt, seed=5).toarray()
    np.testing.assert_array_equal(a, one_nn_weights(EUC, src, tgt, seed=5).toarray())


def test_knn_cases():
    src = line(1.0, 2.0, 3.0, 4.0)
    np.testing.assert_allclose(knn_weights(EUC, src, line(0.0), 2).toarray(), [[0.5, 0.5, 0, 0]])
    np.testing.assert_allclose(knn_weights(EUC, src, line(0.0, 9.0), 4).toarray(),
                               np.full((2, 4), 0.25))
    tgt = line(0.3, 2.5, 2.5)
    np.testing.assert_array_equal(knn_weights(EUC, src, tgt, 1, seed=3).toarray(),
                                  one_nn_weights(EUC, src, tgt, seed=3).toarray())
    with pytest.raises(WeightsError):
        knn_weights(EUC, src, tgt, 5)
    with pytest.raises(WeightsError):
        knn_weights(EUC, src, tgt, 0)


def test_weight_matrix_validation():
    with pytest.raises(WeightsError):
        WeightMatrix(sp.csr_matrix([[0.5, 0.4]]))
    with pytest.raises(WeightsError):
        WeightMatrix(sp.csr_matrix([[1.5, -0.5]]))


def test_scalar_contrast():
    c = contrast_vectors([[4.0]], WeightMatrix(sp.csr_matrix([[1.0]])), 0)
    np.testing.assert_allclose(c.w, [0.25])


def test_identity_psi_gives_v_equal_w(rng):
    X = rng.normal(size=(5, 2))
    c = contrast_vectors(X, WeightMatrix(sp.identity(5, format="csr")), 1)
    np.testing.assert_allclose(c.v, c.w)


def test_contrast_matches_dense_solver(rng):
    X = rng.normal(size=(6, 2)) + np.array([0.0, 3.0])
    psi = one_nn_weights(EUC, LocationSet(rng.normal(size=(9, 2))), LocationSet(rng.normal(size=(6, 2))))
    c = contrast_vectors(X, psi, 1)
    # independent oracle: least-squares pseudo-inverse of X*
    np.testing.assert_allclose(c.w, np.linalg.pinv(X)[1], atol=1e-10)
    np.testing.assert_allclose(target_projection(X), np.linalg.solve(X.T @ X, X.T), atol=1e-10)


def test_singular_target_design_rejected():
    with pytest.raises(SingularDesignError):
        target_projection(np.ones((4, 2)))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 12), m=st.integers(2, 8), K=st.integers(1, 4), seed=st.integers(0, 2**31),
       data=st.data())
def test_mass_balance_and_rows(n, m, K, seed, data):
    K = min(K, n)
    # coarse grid coordinates make exact ties common
    src = data.draw(arrays(float, (n, 2), elements=st.integers(-3, 3).map(float)))
    tgt = data.draw(arrays(float, (m, 2), elements=st.integers(-3, 3).map(float)))
    psi = knn_weights(EUC, LocationSet(src), LocationSet(tgt), K, seed)
    W = psi.toarray()
    assert np.all(W >= 0)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((W == 0) | np.isclose(W, 1.0 / K))
    # every selected source is at least as close as every unselected one
    D = np.linalg.norm(tgt[:, None] - src[None], axis=2)
    for i in range(m):
        sel = W[i] > 0
        if (~sel).any():
            assert D[i, sel].max() <= D[i, ~sel].min()
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(m), rng.normal(size=m)])
    c = contrast_vectors(X, psi, 1)
    scale = np.abs(c.w).sum() + np.abs(c.v).sum()
    assert abs(c.w.sum() - c.v.sum()) <= 1e-9 * max(scale, 1.0)


def test_one_nn_permutation_equivariant(rng):
    src = rng.normal(size=(15, 2))
    tgt = rng.normal(size=(6, 2))
    perm = rng.permutation(15)
    W = one_nn_weights(EUC, LocationSet(src), LocationSet(tgt)).toarray()
    Wp = one_nn_weights(EUC, LocationSet(src[perm]), LocationSet(tgt)).toarray()
    np.testing.assert_array_equal(Wp, W[:, perm])
