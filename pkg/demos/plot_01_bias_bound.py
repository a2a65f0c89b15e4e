"""
Worst-case bias as a transport problem
======================================

The point estimate regresses nearest-neighbour-smoothed source responses on
the target covariates. Its bias over all L-Lipschitz conditional means is
A * L times a Wasserstein-1 distance between two probability measures built
from the signed contrast weights. This script builds them for a tiny design
and checks the transport value against a direct linear program over
function values.
"""

import numpy as np

from lipci import (LocationSet, Metric, bias_bound, contrast_vectors, one_nn_weights)
from lipci.transport import signed_split, worst_case_bias_direct

rng = np.random.default_rng(0)
metric = Metric.euclidean()

# Six sources on the unit square; three targets shifted to the upper right.
source = LocationSet(rng.uniform(size=(6, 2)))
target = LocationSet(0.5 + 0.5 * rng.uniform(size=(3, 2)))
X_target = np.column_stack([np.ones(3), target.coords.sum(axis=1)])

# Psi sends each target to its nearest source; w and v are the contrasts for
# the slope coefficient. Rows of Psi sum to one, so sum(w) == sum(v).
psi = one_nn_weights(metric, source, target)
c = contrast_vectors(X_target, psi, coefficient_index=1)
print("w =", np.round(c.w, 3))
print("v =", np.round(c.v, 3), " sums:", c.w.sum().round(12), c.v.sum().round(12))

# The signed split: mu gathers targets with w >= 0 and sources with v < 0.
A, mu, nu = signed_split(source, target, c.w, c.v)
print(f"A = {A:.4f}; mu has {len(mu.atoms)} atoms, nu has {len(nu.atoms)}")

for L in (0.5, 1.0, 2.0):
    b = bias_bound(metric, source, target, c, L)
    direct = worst_case_bias_direct(metric, source, target, c, L)
    print(f"L={L:3.1f}  B={b.B:.6f}  direct LP={direct:.6f}")
