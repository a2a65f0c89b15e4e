"""Exact Wasserstein-1 distances and the worst-case bias bound.

The transportation problem is solved exactly by successive shortest paths
on the bipartite residual graph (Dijkstra with node potentials). The final
potentials are a feasible dual solution, so every solve carries its own
optimality certificate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import linprog

from .geometry import LocationSet, Metric, pairwise_distances

MASS_TOL = 1e-9
_FLOW_EPS = 1e-15


class TransportError(ValueError):
    code = "transport-error"


class MassImbalanceError(TransportError):
    code = "mass-imbalance"


@dataclass(frozen=True)
class DiscreteMeasure:
    atoms: LocationSet
    masses: np.ndarray

    def __post_init__(self):
        atoms = self.atoms if isinstance(self.atoms, LocationSet) else LocationSet(self.atoms)
        masses = np.asarray(self.masses, dtype=float).ravel()
        if masses.shape[0] != len(atoms):
            raise TransportError("one mass per atom required")
        if masses.size == 0:
            raise TransportError("empty support")
        if np.any(masses < 0) or not np.all(np.isfinite(masses)):
            raise TransportError("masses must be finite and nonnegative")
        if abs(masses.sum() - 1.0) > MASS_TOL:
            raise TransportError(f"masses sum to {masses.sum():.12g}, not 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "masses", masses)


@dataclass(frozen=True)
class TransportResult:
    value: float
    plan: np.ndarray
    dual_gap: float
    augmentations: int
    f: np.ndarray  # dual potentials, f_i + g_j <= cost_ij
    g: np.ndarray


@njit(cache=True)
def _ssp(C, a, b, tol):
    m, n = C.shape
    F = np.zeros((m, n))
    supply = a.copy()
    demand = b.copy()
    pi_l = np.zeros(m)
    pi_r = np.empty(n)
    for j in range(n):
        pi_r[j] = C[:, j].min()
    dist_l = np.empty(m)
    dist_r = np.empty(n)
    done_l = np.empty(m, np.bool_)
    done_r = np.empty(n, np.bool_)
    pred_l = np.empty(m, np.int64)
    pred_r = np.empty(n, np.int64)
    rounds = 0
    while supply.sum() > tol * (m + n):
        for i in range(m):
            dist_l[i] = 0.0 if supply[i] > tol else np.inf
            done_l[i] = False
            pred_l[i] = -1
        for j in range(n):
            dist_r[j] = np.inf
            done_r[j] = False
            pred_r[j] = -1
        target = -1
        while True:
            il, best_l = -1, np.inf
            for i in range(m):
                if not done_l[i] and dist_l[i] < best_l:
                    il, best_l = i, dist_l[i]
            jr, best_r = -1, np.inf
            for j in range(n):
                if not done_r[j] and dist_r[j] < best_r:
                    jr, best_r = j, dist_r[j]
            if il < 0 and jr < 0:
                break
            if il >= 0 and best_l <= best_r:
                done_l[il] = True
                for j in range(n):
                    if done_r[j]:
                        continue
                    rc = C[il, j] + pi_l[il] - pi_r[j]
                    nd = best_l + (rc if rc > 0.0 else 0.0)
                    if nd < dist_r[j]:
                        dist_r[j] = nd
                        pred_r[j] = il
            else:
                done_r[jr] = True
                if demand[jr] > tol:
                    target = jr
                    break
                for i in range(m):
                    if done_l[i] or F[i, jr] <= tol:
                        continue
                    rc = -C[i, jr] + pi_r[jr] - pi_l[i]
                    nd = best_r + (rc if rc > 0.0 else 0.0)
                    if nd < dist_l[i]:
                        dist_l[i] = nd
                        pred_l[i] = jr
        if target < 0:
            return F, pi_l, pi_r, rounds, False
        dt = dist_r[target]
        for i in range(m):
            pi_l[i] += min(dist_l[i], dt)
        for j in range(n):
            pi_r[j] += min(dist_r[j], dt)

        # bottleneck along the path back to the originating supply node
        delta = demand[target]
        j = target
        while True:
            i = pred_r[j]
            if pred_l[i] < 0:
                delta = min(delta, supply[i])
                s = i
                break
            j = pred_l[i]
            delta = min(delta, F[i, j])
        j = target
        while True:
            i = pred_r[j]
            F[i, j] += delta
            if pred_l[i] < 0:
                break
            j = pred_l[i]
            F[i, j] -= delta
            if F[i, j] <= tol:
                F[i, j] = 0.0
        supply[s] -= delta
        demand[target] -= delta
        if supply[s] <= tol:
            supply[s] = 0.0
        if demand[target] <= tol:
            demand[target] = 0.0
        rounds += 1
    return F, pi_l, pi_r, rounds, True


def solve_transport(cost: np.ndarray, a: np.ndarray, b: np.ndarray) -> TransportResult:
    """Minimise ``<plan, cost>`` over couplings of ``a`` and ``b``.

    ``a`` and ``b`` must be nonnegative with equal totals (up to rounding; ``b``
    is rescaled to ``a.sum()``).
    """
    C = np.ascontiguousarray(cost, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = C.shape
    if a.shape != (m,) or b.shape != (n,):
        raise TransportError("marginals do not match the cost matrix")
    b = b * (a.sum() / b.sum())
    tol = _FLOW_EPS * max(a.sum(), 1.0)
    F, pi_l, pi_r, rounds, ok = _ssp(C, a, b, tol)
    if not ok:
        raise TransportError("no augmenting path; marginals inconsistent")
    value = float(np.sum(F * C))
    dual = float(np.dot(b, pi_r) - np.dot(a, pi_l))
    return TransportResult(value=value, plan=F, dual_gap=value - dual, augmentations=rounds,
                           f=-pi_l, g=pi_r)


def wasserstein1(metric: Metric, mu: DiscreteMeasure, nu: DiscreteMeasure,
                 return_plan: bool = False):
    """Exact W1 distance between two discrete probability measures.

    Zero-mass atoms are dropped before solving. With ``return_plan`` the
    full ``len(mu) x len(nu)`` coupling is returned as well.
    """
    ka = mu.masses > 0
    kb = nu.masses > 0
    C = pairwise_distances(metric, mu.atoms.coords[ka], nu.atoms.coords[kb])
    res = solve_transport(C, mu.masses[ka], nu.masses[kb])
    if not return_plan:
        return res.value
    plan = np.zeros((len(mu.masses), len(nu.masses)))
    plan[np.ix_(ka, kb)] = res.plan
    return res.value, plan


@dataclass(frozen=True)
class BiasBound:
    B: float
    A: float
    w1: float
    L: float


def _check_balance(w, v):
    total = np.sum(np.abs(w)) + np.sum(np.abs(v))
    gap = abs(np.sum(w) - np.sum(v))
    if gap > MASS_TOL * max(total, 1.0):
        raise MassImbalanceError(
            f"contrast masses differ by {gap:.3g}; weight matrix rows must sum to 1")


def signed_split(source: LocationSet, target: LocationSet, w, v):
    """Two probability measures whose W1 distance (times A) is the bias sup.

    Returns ``(A, mu, nu)``; ``mu`` collects targets with ``w >= 0`` and
    sources with ``v < 0``, ``nu`` the rest, each normalised by ``A``.
    """
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    A = 0.5 * (np.sum(np.abs(w)) + np.sum(np.abs(v)))
    if A == 0:
        return 0.0, None, None
    pos_t, neg_s = w >= 0, v < 0
    mu_pts = np.vstack([target.coords[pos_t], source.coords[neg_s]])
    mu_mass = np.concatenate([w[pos_t], -v[neg_s]]) / A
    nu_pts = np.vstack([target.coords[~pos_t], source.coords[~neg_s]])
    nu_mass = np.concatenate([-w[~pos_t], v[~neg_s]]) / A
    unit = target.angular_unit
    mu = DiscreteMeasure(LocationSet(mu_pts, unit), mu_mass / mu_mass.sum())
    nu = DiscreteMeasure(LocationSet(nu_pts, unit), nu_mass / nu_mass.sum())
    return A, mu, nu


def bias_bound(metric: Metric, source: LocationSet, target: LocationSet,
               contrasts, L: float) -> BiasBound:
    """Worst-case bias over L-Lipschitz conditional means, ``B = A * L * W1``."""
    if not L >= 0:
        raise TransportError("Lipschitz constant must be nonnegative")
    w, v = contrasts.w, contrasts.v
    _check_balance(w, v)
    A, mu, nu = signed_split(source, target, w, v)
    if A == 0:
        return BiasBound(B=0.0, A=0.0, w1=0.0, L=float(L))
    w1 = wasserstein1(metric, mu, nu)
    return BiasBound(B=A * L * w1, A=A, w1=w1, L=float(L))


def worst_case_bias_direct(metric: Metric, source: LocationSet, target: LocationSet,
                           contrasts, L: float, max_points: int = 60) -> float:
    """Supremum of the contrast discrepancy by a direct LP over function values.

    Only for small instances; used to cross-check :func:`bias_bound`.
    """
    w = np.asarray(contrasts.w, dtype=float)
    v = np.asarray(contrasts.v, dtype=float)
    pts = np.vstack([target.coords, source.coords])
    k = pts.shape[0]
    if k > max_points:
        raise TransportError(f"{k} points exceed the direct-LP cap of {max_points}")
    c = np.concatenate([w, -v])
    if abs(c.sum()) > MASS_TOL * max(np.abs(c).sum(), 1.0):
        return float("inf") if L >= 0 else float("nan")
    D = pairwise_distances(metric, pts, pts)
    iu, ju = np.nonzero(~np.eye(k, dtype=bool))
    A_ub = np.zeros((iu.size, k))
    A_ub[np.arange(iu.size), iu] = 1.0
    A_ub[np.arange(iu.size), ju] = -1.0
    b_ub = L * D[iu, ju]
    bounds = [(0.0, 0.0)] + [(None, None)] * (k - 1)
    best = 0.0
    for sign in (1.0, -1.0):
        res = linprog(-sign * c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
        if res.status != 0:
            raise TransportError(f"direct LP failed: {res.message}")
        best = max(best, -res.fun)
    return float(best)
