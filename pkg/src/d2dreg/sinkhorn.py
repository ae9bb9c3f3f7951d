"""Log-domain Sinkhorn solver for entropy-regularized optimal transport.

All transport problems in the pipeline go through :func:`solve`: the
self-consistency posterior, the joint clustering of two aligned clouds,
cluster-level partial matching (through :func:`solve_with_slack`) and
point matching inside patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import NumericalOverflow

__all__ = [
    "TransportProblem",
    "TransportPlan",
    "solve",
    "solve_with_slack",
    "default_epsilon",
    "centered_epsilon",
    "DEFAULT_ITERS",
]

DEFAULT_ITERS = 20
DEFAULT_TOL = 1e-9
METHODS = ("scaling", "newton")
NEWTON_WARMUP = 50  # scaling iterations before switching to Newton
EPS_FRACTION = 0.05
_TINY = 1e-12


def default_epsilon(cost):
    """Scale-free regularizer: a fixed fraction of the cost range."""
    c = np.asarray(cost, dtype=np.float64)
    return EPS_FRACTION * (float(c.max() - c.min()) + _TINY)


def centered_epsilon(cost, fraction=EPS_FRACTION):
    """Fraction of the range of the cost after removing row and column means.

    A fixed-marginal plan is unchanged by adding a constant to a row or a
    column, so this range measures only the part of the cost that can move
    mass. It is far smaller than the raw range when per-row or per-column
    offsets dominate (as with Gaussian L2 distances in many dimensions).
    """
    c = np.asarray(cost, dtype=np.float64)
    c = c - c.mean(axis=1, keepdims=True) - c.mean(axis=0, keepdims=True)
    return fraction * (float(c.max() - c.min()) + _TINY)


@dataclass(frozen=True, eq=False)
class TransportProblem:
    cost: np.ndarray
    row_marginals: np.ndarray
    col_marginals: np.ndarray
    epsilon: float | None = None
    max_iters: int = DEFAULT_ITERS
    tolerance: float = DEFAULT_TOL
    method: str = "scaling"

    def __post_init__(self):
        C = np.array(self.cost, dtype=np.float64)
        if C.ndim != 2:
            raise ValueError("cost must be a 2-D matrix")
        if not np.all(np.isfinite(C)):
            raise NumericalOverflow("cost matrix has non-finite entries")
        a = np.array(self.row_marginals, dtype=np.float64).reshape(-1)
        b = np.array(self.col_marginals, dtype=np.float64).reshape(-1)
        if a.shape[0] != C.shape[0] or b.shape[0] != C.shape[1]:
            raise ValueError(
                f"marginal lengths {a.shape[0]}, {b.shape[0]} do not match cost {C.shape}"
            )
        if np.any(a < 0) or np.any(b < 0) or not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("marginals must be finite and nonnegative")
        if abs(a.sum() - b.sum()) > 1e-9:
            raise ValueError(
                f"unbalanced marginals: row mass {a.sum()!r} vs column mass {b.sum()!r}"
            )
        eps = default_epsilon(C) if self.epsilon is None else float(self.epsilon)
        if not eps > 0:
            raise ValueError("epsilon must be positive")
        if int(self.max_iters) < 1 or not self.tolerance > 0:
            raise ValueError("max_iters must be >= 1 and tolerance > 0")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        object.__setattr__(self, "cost", C)
        object.__setattr__(self, "row_marginals", a)
        object.__setattr__(self, "col_marginals", b)
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "max_iters", int(self.max_iters))


@dataclass(frozen=True, eq=False)
class TransportPlan:
    plan: np.ndarray
    converged: bool
    marginal_violation: float
    iterations: int
    epsilon: float

    def transport_cost(self, cost):
        return float(np.sum(self.plan * cost))


def _lse(x, axis):
    m = x.max(axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.exp(x - m).sum(axis=axis))


def _semidual(log_v, log_k, a, log_b):
    """Negated semi-dual in the column potential, with gradient and Hessian.

    With ``log_u`` eliminated (rows always exact), the gradient is
    ``c(v) - b`` where ``c`` are the current column sums.
    """
    z = log_k + log_v[None, :]
    lse = logsumexp(z, axis=1)
    S = np.exp(z - lse[:, None])           # row-conditional plan
    c = a @ S
    val = float(a @ lse - np.exp(log_b) @ log_v)
    H = np.diag(c) - (S.T * a) @ S
    return val, c - np.exp(log_b), H


def _newton(log_v, log_k, a, log_b, iters, tolerance):
    """Trust-region Newton on the semi-dual; returns (log_u, log_v, iterations)."""
    fun = lambda x: _semidual(x, log_k, a, log_b)
    res = minimize(
        lambda x: fun(x)[0], log_v, jac=lambda x: fun(x)[1], hess=lambda x: fun(x)[2],
        method="trust-exact", options={"maxiter": iters, "gtol": tolerance},
    )
    log_v = res.x
    return np.log(a) - _lse(log_k + log_v[None, :], 1), log_v, int(res.nit)


def _violation(plan, a, b):
    return max(
        float(np.max(np.abs(plan.sum(axis=1) - a), initial=0.0)),
        float(np.max(np.abs(plan.sum(axis=0) - b), initial=0.0)),
    )


def solve(problem: TransportProblem) -> TransportPlan:
    """Alternating log-domain scaling updates.

    The plan is ``diag(u) exp(-C/eps) diag(v)``; the scalings start at the
    marginals themselves and the loop stops at ``max_iters`` or once the
    max-norm marginal violation drops below ``tolerance``.

    With ``method="newton"`` at most ``NEWTON_WARMUP`` scaling iterations
    run, then the remaining budget goes to trust-region Newton on the dual
    in ``log v``. Plain scaling stalls when the plan is close to a
    permutation (small ``eps``, near-tied assignments); Newton does not.
    Both converge to the same plan.
    """
    C, a, b, eps = problem.cost, problem.row_marginals, problem.col_marginals, problem.epsilon
    n, m = C.shape
    rows = a > 0
    cols = b > 0
    plan = np.zeros((n, m))
    if not rows.any() or not cols.any():
        return TransportPlan(plan, True, _violation(plan, a, b), 0, eps)

    log_k = -C[np.ix_(rows, cols)] / eps
    log_a = np.log(a[rows])
    log_b = np.log(b[cols])
    log_v = log_b.copy()
    lse_rows = _lse(log_k + log_v[None, :], 1)
    converged = False
    it = 0
    budget = problem.max_iters
    if problem.method == "newton":
        budget = min(budget, NEWTON_WARMUP)
    for it in range(1, budget + 1):
        log_u = log_a - lse_rows
        log_v = log_b - _lse(log_k + log_u[:, None], 0)
        # column marginals are exact after the v-update; only rows can drift
        lse_rows = _lse(log_k + log_v[None, :], 1)
        viol = float(np.max(np.abs(np.exp(log_u + lse_rows) - a[rows])))
        if viol < problem.tolerance:
            converged = True
            break
    if not converged and it < problem.max_iters:
        log_u, log_v, extra = _newton(log_v, log_k, a[rows], log_b, problem.max_iters - it, problem.tolerance)
        it += extra

    sub = np.exp(log_u[:, None] + log_k + log_v[None, :])
    plan[np.ix_(rows, cols)] = sub
    viol = _violation(plan, a, b)
    return TransportPlan(plan, converged or viol < problem.tolerance, viol, it, eps)


def solve_with_slack(
    cost,
    row_marginals,
    col_marginals,
    slack_cost,
    epsilon=None,
    max_iters=DEFAULT_ITERS,
    tolerance=DEFAULT_TOL,
) -> TransportPlan:
    """Partial transport through an extra slack row and column.

    `cost` is the real (n, m) block; the marginals already include the slack
    entry, so they have lengths n+1 and m+1. The full extended plan is
    returned and the caller slices off the slack row/column.
    """
    C = np.asarray(cost, dtype=np.float64)
    z = float(slack_cost)
    if not np.isfinite(z):
        raise NumericalOverflow("slack cost must be finite")
    n, m = C.shape
    ext = np.full((n + 1, m + 1), z)
    ext[:n, :m] = C
    if epsilon is None:
        epsilon = default_epsilon(ext)
    return solve(TransportProblem(ext, row_marginals, col_marginals, epsilon, max_iters, tolerance))
