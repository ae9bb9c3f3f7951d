"""Gaussian mixtures estimated from soft assignments.

Coordinates and features share one posterior, hence one weight vector.
:func:`fit` stands in for a learned cluster head: it alternates a
transport-constrained E-step with the closed-form estimator in
:func:`estimate_params`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import PointCloud, bounding_diagonal
from .errors import EmptyModel, SingularCovariance
from .sinkhorn import TransportProblem, solve

__all__ = [
    "AssignmentMatrix",
    "GmmModel",
    "FitConfig",
    "extend_assignments",
    "estimate_params",
    "fit",
    "farthest_point_sampling",
    "gaussian_l2_distance",
    "pairwise_l2_distance_diag",
]

WEIGHT_FLOOR = 1e-4
FEATURE_REG = 1e-4
COORD_REG_SCALE = 1e-6


class AssignmentMatrix:
    """Row-stochastic N x L matrix of point-to-component probabilities."""

    __slots__ = ("probs",)

    def __init__(self, probs, atol=1e-9):
        p = np.array(probs, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError("assignment matrix must be 2-D")
        if np.any(p < -atol) or np.any(p > 1 + atol):
            raise ValueError("assignment probabilities must lie in [0, 1]")
        if np.max(np.abs(p.sum(axis=1) - 1.0), initial=0.0) > atol:
            raise ValueError("assignment rows must sum to 1")
        p = np.clip(p, 0.0, 1.0)
        p.setflags(write=False)
        self.probs = p

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    @property
    def shape(self):
        return self.probs.shape

    def hard_labels(self):
        return np.argmax(self.probs, axis=1)


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Mixture parameters shared between coordinate and feature space.

    ``weights`` covers the real components only; ``outlier_weight`` is the
    mass of the optional outlier component and the two together sum to 1.
    Feature covariances are stored as diagonals.
    """

    weights: np.ndarray
    coord_means: np.ndarray
    coord_covs: np.ndarray
    feat_means: np.ndarray | None
    feat_covs: np.ndarray | None
    outlier_weight: float = 0.0
    degenerate: np.ndarray | None = None
    coord_reg: float = 0.0
    feat_reg: float = FEATURE_REG
    n_iter: int = 0
    converged: bool = True
    objective: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.degenerate is None:
            object.__setattr__(self, "degenerate", np.zeros(len(self.weights), bool))

    @property
    def n_components(self):
        return len(self.weights)

    @property
    def active(self):
        return np.flatnonzero(~self.degenerate)

    def full_weights(self):
        """Weights with the outlier mass appended as the last entry."""
        return np.append(self.weights, self.outlier_weight)


def extend_assignments(S, overlap_scores):
    """Append the outlier column: row i becomes ``(o_i * s_i, 1 - o_i)``."""
    S = np.asarray(S, dtype=np.float64)
    o = np.asarray(overlap_scores, dtype=np.float64).reshape(-1, 1)
    if o.shape[0] != S.shape[0]:
        raise ValueError("one overlap score per row is required")
    if np.any(o < 0) or np.any(o > 1):
        raise ValueError("overlap scores must lie in [0, 1]")
    return AssignmentMatrix(np.hstack([o * S, 1.0 - o]))


def estimate_params(
    cloud: PointCloud,
    S_hat,
    *,
    outlier_column=False,
    coord_reg=None,
    feat_reg=FEATURE_REG,
    weight_floor=WEIGHT_FLOOR,
) -> GmmModel:
    """Closed-form mixture parameters from soft assignments.

    With ``outlier_column`` the last column of `S_hat` only contributes its
    mass (``outlier_weight``); no Gaussian is estimated for it. Covariances
    are normalized by the component mass and floored by ``reg * I``.
    """
    S = np.asarray(S_hat, dtype=np.float64)
    P = cloud.points
    n = P.shape[0]
    if S.shape[0] != n:
        raise ValueError("assignment rows must match the number of points")
    if coord_reg is None:
        coord_reg = COORD_REG_SCALE * max(bounding_diagonal(P), 1e-12) ** 2

    W = S[:, :-1] if outlier_column else S
    outlier = float(S[:, -1].sum() / n) if outlier_column else 0.0
    mass = W.sum(axis=0)
    weights = mass / n
    degenerate = weights < weight_floor
    if np.all(degenerate):
        raise EmptyModel(f"all {len(weights)} components are below the weight floor")
    safe = np.where(mass > 0, mass, 1.0)

    means = (W.T @ P) / safe[:, None]
    means[mass <= 0] = P.mean(axis=0)
    diff = P[None, :, :] - means[:, None, :]                    # (L, N, 3)
    covs = np.einsum("nl,lni,lnj->lij", W, diff, diff) / safe[:, None, None]
    covs += coord_reg * np.eye(3)

    fmeans = fcovs = None
    if cloud.features is not None:
        F = cloud.features
        fmeans = (W.T @ F) / safe[:, None]
        fmeans[mass <= 0] = F.mean(axis=0)
        fcovs = np.einsum("nl,lnd->ld", W, (F[None] - fmeans[:, None]) ** 2) / safe[:, None]
        fcovs += feat_reg

    return GmmModel(
        weights=weights,
        coord_means=means,
        coord_covs=covs,
        feat_means=fmeans,
        feat_covs=fcovs,
        outlier_weight=outlier,
        degenerate=degenerate,
        coord_reg=float(coord_reg),
        feat_reg=float(feat_reg),
    )


@dataclass(frozen=True)
class FitConfig:
    max_em_iters: int = 30
    tol: float = 1e-5
    lambda_coord: float = 0.5
    lambda_feat: float = 0.5
    eps_fraction: float = 0.05
    sinkhorn_iters: int = 20
    sinkhorn_tol: float = 1e-9
    seed: int = 0
    weight_floor: float = WEIGHT_FLOOR
    feat_reg: float = FEATURE_REG


def farthest_point_sampling(points, k, start=0):
    """Indices of `k` points chosen greedily by max-min distance."""
    P = np.asarray(points, dtype=np.float64)
    n = P.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"cannot pick {k} of {n} points")
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start
    d2 = np.sum((P - P[start]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(d2))  # first max -> lowest index on ties
        chosen[i] = nxt
        d2 = np.minimum(d2, np.sum((P - P[nxt]) ** 2, axis=1))
    return chosen


def _sq_dists(X, M):
    return np.maximum(
        np.sum(X**2, axis=1)[:, None] - 2.0 * X @ M.T + np.sum(M**2, axis=1)[None, :],
        0.0,
    )


def fit(cloud: PointCloud, n_components: int, config: FitConfig | None = None):
    """Fit a mixture by alternating transport E-steps and closed-form M-steps.

    The E-step solves an entropic transport problem with the blended cost
    ``lam_c * |p - mu|^2 / c0 + lam_f * |f - mu_f|^2 / f0`` (``c0``, ``f0``
    are the block means at initialization), row mass 1/N and column mass
    equal to the current mixing weights. Returns ``(model, S)`` where ``S`` is
    the row-normalized posterior over the real components.
    """
    cfg = config or FitConfig()
    P = cloud.points
    n = P.shape[0]
    L = int(n_components)
    if not 1 <= L <= n:
        raise ValueError(f"need 1 <= L <= N (L={L}, N={n})")
    F = cloud.features
    o = cloud.overlap_scores
    use_feat = F is not None and cfg.lambda_feat > 0

    def m_step(S):
        if o is not None:
            return estimate_params(
                cloud, extend_assignments(S, o), outlier_column=True,
                feat_reg=cfg.feat_reg, weight_floor=cfg.weight_floor,
            )
        return estimate_params(cloud, S, feat_reg=cfg.feat_reg, weight_floor=cfg.weight_floor)

    if L == 1:
        S = np.ones((n, 1))
        return m_step(S), AssignmentMatrix(S)

    rng = np.random.default_rng(cfg.seed)
    seeds = farthest_point_sampling(P, L, start=int(rng.integers(n)))
    mu_c = P[seeds].copy()
    mu_f = F[seeds].copy() if use_feat else None

    dc = _sq_dists(P, mu_c)
    c_norm = max(float(dc.mean()), 1e-300)
    if use_feat:
        df = _sq_dists(F, mu_f)
        f_norm = max(float(df.mean()), 1e-300)

    def cost(mu_c, mu_f):
        C = cfg.lambda_coord * _sq_dists(P, mu_c) / c_norm
        if use_feat:
            C = C + cfg.lambda_feat * _sq_dists(F, mu_f) / f_norm
        return C

    C = cost(mu_c, mu_f)
    eps = cfg.eps_fraction * (float(C.max() - C.min()) + 1e-12)
    row = np.full(n, 1.0 / n)
    col = np.full(L, 1.0 / L)

    S_prev = None
    model = None
    history = []
    converged = False
    it = 0
    for it in range(1, cfg.max_em_iters + 1):
        plan = solve(TransportProblem(C, row, col, eps, cfg.sinkhorn_iters, cfg.sinkhorn_tol)).plan
        gamma = n * plan
        S = gamma / np.maximum(gamma.sum(axis=1, keepdims=True), 1e-300)
        model = m_step(S)
        mu_c = model.coord_means
        mu_f = model.feat_means if use_feat else None
        C = cost(mu_c, mu_f)
        nz = plan > 0
        history.append(float(np.sum(plan * C) + eps * np.sum(plan[nz] * np.log(plan[nz]))))
        w = np.where(model.degenerate, 0.0, model.weights)
        col = w / w.sum()
        if S_prev is not None and np.max(np.abs(S - S_prev)) < cfg.tol:
            S_prev = S
            converged = True
            break
        S_prev = S

    model = GmmModel(
        **{**model.__dict__, "n_iter": it, "converged": converged, "objective": tuple(history)}
    )
    return model, AssignmentMatrix(S_prev)


def _as_cov(c, d):
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 1:
        return np.diag(c)
    if c.shape != (d, d):
        raise ValueError(f"covariance must be ({d},) or ({d}, {d})")
    return c


def _log_gauss_at(delta, cov):
    """log N(delta; 0, cov)."""
    d = delta.shape[0]
    chol = np.linalg.cholesky(cov)
    y = np.linalg.solve(chol, delta)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * np.log(2 * np.pi) + logdet + y @ y)


def gaussian_l2_distance(mean_a, cov_a, mean_b, cov_b, reg_floor=0.0):
    """Integrated squared difference of two Gaussian densities.

    Uses the product identity int N(x; a, A) N(x; b, B) dx = N(a; b, A + B).
    Covariances may be full matrices or diagonal vectors.
    """
    ma = np.atleast_1d(np.asarray(mean_a, dtype=np.float64))
    mb = np.atleast_1d(np.asarray(mean_b, dtype=np.float64))
    d = ma.shape[0]
    A = _as_cov(cov_a, d)
    B = _as_cov(cov_b, d)
    for name, c in (("a", A), ("b", B)):
        if not np.allclose(c, c.T):
            raise SingularCovariance(f"covariance {name} is not symmetric")
        lo = np.linalg.eigvalsh(c).min()
        if lo <= 0.0 or lo < reg_floor:
            raise SingularCovariance(f"covariance {name} has min eigenvalue {lo:.3g}")
    zero = np.zeros(d)
    self_a = np.exp(_log_gauss_at(zero, 2.0 * A))
    self_b = np.exp(_log_gauss_at(zero, 2.0 * B))
    cross = np.exp(_log_gauss_at(ma - mb, A + B))
    return max(float(self_a + self_b - 2.0 * cross), 0.0)


def pairwise_l2_distance_diag(means_a, vars_a, means_b, vars_b):
    """All-pairs Gaussian L2 distance for diagonal covariances, shape (La, Lb)."""
    ma, va = np.asarray(means_a, float), np.asarray(vars_a, float)
    mb, vb = np.asarray(means_b, float), np.asarray(vars_b, float)
    if np.any(va <= 0) or np.any(vb <= 0):
        raise SingularCovariance("diagonal variances must be positive")
    d = ma.shape[1]
    log2pi = d * np.log(2 * np.pi)
    self_a = np.exp(-0.5 * (log2pi + np.sum(np.log(2 * va), axis=1)))
    self_b = np.exp(-0.5 * (log2pi + np.sum(np.log(2 * vb), axis=1)))
    s = va[:, None, :] + vb[None, :, :]
    maha = np.sum((ma[:, None, :] - mb[None, :, :]) ** 2 / s, axis=2)
    cross = np.exp(-0.5 * (log2pi + np.sum(np.log(s), axis=2) + maha))
    return np.maximum(self_a[:, None] + self_b[None, :] - 2.0 * cross, 0.0)
