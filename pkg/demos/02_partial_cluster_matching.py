"""
Matching mixtures with a missing component
==========================================

Two three-component mixtures, identical except that the second has lost
one component. Partial transport should send the lost component to the
slack column and keep the other two paired.
"""

import numpy as np

from d2dreg.gmm import GmmModel
from d2dreg.matching import cluster_cost, match_clusters, residual_mass

rng = np.random.default_rng(3)
d = 4
w = rng.dirichlet(np.full(3, 3.0))
feat_means = rng.normal(size=(3, d)) * 2.0
feat_vars = rng.uniform(0.2, 0.5, (3, d))


def model(weights):
    return GmmModel(weights, np.zeros((3, 3)), np.tile(np.eye(3), (3, 1, 1)), feat_means, feat_vars,
                    degenerate=weights < 1e-4)


# drop component 1 from the target, keeping its index with zero weight
wt = w.copy()
wt[1] = 0.0
wt /= wt.sum()
source, target = model(w), model(wt)

# Gaussian L2 distances in feature space; dividing by the self-terms puts them in [0, 1]
print("normalized cluster cost:\n", cluster_cost(source, target, normalized=True).round(3))

# the residual mass is the weight the source has "too much of"
print(f"residual mass {residual_mass(source.full_weights(), target.full_weights()):.4f} "
      f"(removed weight {w[1]:.4f})")

res = match_clusters(source, target, slack_cost=0.5, normalized_cost=True)
print("extended plan (last row/column = slack):\n", res.plan.round(3))
print("kept pairs (source, target, confidence):", [(i, j, round(c, 3)) for i, j, c in res.pairs])
