"""
Entropic transport in a few lines
=================================

How the regularizer, the marginals and the slack row/column shape a
transport plan.
"""

import numpy as np

from d2dreg.sinkhorn import TransportProblem, solve, solve_with_slack

rng = np.random.default_rng(0)
C = rng.uniform(0, 1, (4, 4))
a = np.full(4, 0.25)

# large epsilon blurs the plan toward the outer product a b^T,
# small epsilon concentrates it on the best permutation
for eps in (1.0, 0.1, 0.01):
    plan = solve(TransportProblem(C, a, a, epsilon=eps, max_iters=2000)).plan
    print(f"eps={eps:<5} cost={np.sum(plan * C):.4f}  max entry={plan.max():.3f}")

# near-tied assignments make plain scaling crawl; the Newton variant
# finishes within the same iteration budget
C = np.random.default_rng(46).uniform(0, 1, (4, 4))
for method in ("scaling", "newton"):
    res = solve(TransportProblem(C, a, a, epsilon=0.001, max_iters=500, method=method))
    print(f"{method:8s} marginal violation {res.marginal_violation:.1e} after {res.iterations} iterations")

# partial transport: a slack row and column absorb mass that has no good partner.
# one real row (cost 0) and a cheap slack: half the mass stays real, half goes to slack
ext = solve_with_slack(np.array([[0.0]]), [0.5, 0.5], [0.5, 0.5], slack_cost=10.0, max_iters=200)
print("extended plan:\n", ext.plan.round(3))
