"""Unsupervised consistency losses evaluated on fixed inputs (no gradients)."""

from __future__ import annotations

import numpy as np

from .core import NeighborIndex, PointCloud, RigidTransform
from .gmm import GmmModel
from .sinkhorn import DEFAULT_ITERS, TransportProblem, solve

__all__ = [
    "empirical_gamma_self",
    "self_consistency_loss",
    "cross_consistency_gamma",
    "merge_for_cross_consistency",
    "cross_consistency_loss",
    "local_contrastive_loss",
    "nearest_point_anchors",
    "total_loss",
    "row_entropy",
]

LOG_CLAMP = 1e-12


def _sq_dists(X, M):
    return np.maximum(
        np.sum(X**2, 1)[:, None] - 2.0 * X @ M.T + np.sum(M**2, 1)[None, :], 0.0
    )


def _transport_posterior(cost, col_mass, epsilon, iters, tolerance):
    n = cost.shape[0]
    plan = solve(TransportProblem(cost, np.full(n, 1.0 / n), col_mass, epsilon, iters, tolerance)).plan
    return n * plan


def empirical_gamma_self(
    cloud: PointCloud, model: GmmModel, epsilon=None, iters=DEFAULT_ITERS, tolerance=1e-9
):
    """Distance-based posterior under the mixing-weight constraints.

    Transport with cost ``|p_i - mu_j|^2``, row mass 1/N and column mass
    ``pi_j`` (renormalized over the real components); returns ``gamma = N * plan``
    so that rows sum to 1 and column j sums to ``N pi_j``.
    """
    w = np.asarray(model.weights, dtype=np.float64)
    cost = _sq_dists(cloud.points, model.coord_means)
    return _transport_posterior(cost, w / w.sum(), epsilon, iters, tolerance)


def _cross_entropy(gamma, S):
    g = np.asarray(gamma, dtype=np.float64)
    s = np.asarray(S, dtype=np.float64)
    if g.shape != s.shape:
        raise ValueError(f"shape mismatch {g.shape} vs {s.shape}")
    return float(-np.sum(g * np.log(np.maximum(s, LOG_CLAMP))))


def row_entropy(gamma):
    """Sum over rows of the Shannon entropy of each row."""
    g = np.asarray(gamma, dtype=np.float64)
    nz = g > 0
    return float(-np.sum(g[nz] * np.log(g[nz])))


def self_consistency_loss(gamma_s, S_s, gamma_t, S_t):
    """Cross-entropy of each cloud's predicted posterior against its transport posterior, summed."""
    return _cross_entropy(gamma_s, S_s) + _cross_entropy(gamma_t, S_t)


def cross_consistency_loss(gamma, S):
    return _cross_entropy(gamma, S)


def merge_for_cross_consistency(
    cloud_s: PointCloud, cloud_t: PointCloud, S_s, S_t, transform: RigidTransform
):
    """Stack the moved source and the target into one (points, features, S) triple."""
    pts = np.vstack([transform.apply(cloud_s.points), cloud_t.points])
    feats = None
    if cloud_s.features is not None and cloud_t.features is not None:
        feats = np.vstack([cloud_s.features, cloud_t.features])
    S = np.vstack([np.asarray(S_s, float), np.asarray(S_t, float)])
    return pts, feats, S


def cross_consistency_gamma(
    points,
    features,
    S,
    lambda_coord=0.5,
    lambda_feat=0.5,
    epsilon=None,
    iters=DEFAULT_ITERS,
    tolerance=1e-9,
):
    """Joint posterior of two aligned clouds with uniform cluster mass.

    Global means in both spaces come from the merged soft assignments; the
    transport uses the blended cost, row mass 1/N and column mass 1/L.
    Returns ``N * plan``.
    """
    P = np.asarray(points, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    n, L = S.shape
    mass = S.sum(axis=0)
    safe = np.where(mass > 0, mass, 1.0)
    mu_e = (S.T @ P) / safe[:, None]
    cost = lambda_coord * _sq_dists(P, mu_e)
    if features is not None and lambda_feat != 0:
        F = np.asarray(features, dtype=np.float64)
        mu_f = (S.T @ F) / safe[:, None]
        cost = cost + lambda_feat * _sq_dists(F, mu_f)
    return _transport_posterior(cost, np.full(L, 1.0 / L), epsilon, iters, tolerance)


def _log_softmax_diag(logits):
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    return np.diagonal(logits) - lse


def local_contrastive_loss(feat_centroids_s, feat_centroids_t, anchor_feats_s, anchor_feats_t, scale=1.0):
    """InfoNCE over dot-product logits, averaged over clusters.

    One cross-cloud term pulls matching feature centroids together; the
    within-cloud term pulls each centroid toward the features of the point
    nearest to it, once per cloud. `scale` multiplies every logit.
    """
    ms = np.asarray(feat_centroids_s, dtype=np.float64)
    mt = np.asarray(feat_centroids_t, dtype=np.float64)
    fs = np.asarray(anchor_feats_s, dtype=np.float64)
    ft = np.asarray(anchor_feats_t, dtype=np.float64)
    L = ms.shape[0]
    cross = _log_softmax_diag(scale * ms @ mt.T)
    anchor = _log_softmax_diag(scale * ms @ fs.T) + _log_softmax_diag(scale * mt @ ft.T)
    return float(-(cross.sum() + anchor.sum()) / L)


def nearest_point_anchors(cloud: PointCloud, model: GmmModel):
    """Features of the point nearest (in coordinates) to each component mean."""
    if cloud.features is None:
        raise ValueError("cloud has no features")
    _, idx = NeighborIndex(cloud.points).nearest(model.coord_means)
    return cloud.features[idx]


def total_loss(self_consistency, cross_consistency, local_contrastive):
    return float(self_consistency + cross_consistency + local_contrastive)
