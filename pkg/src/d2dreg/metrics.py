"""Registration quality metrics: RRE, RTE, RMSE, registration recall, Chamfer distance."""

from __future__ import annotations

import numpy as np

from .core import NeighborIndex, RigidTransform

__all__ = [
    "relative_rotation_error",
    "relative_translation_error",
    "correspondence_rmse",
    "registration_recall",
    "chamfer_distance",
]


def relative_rotation_error(R, R_star, degrees=True):
    """Geodesic angle between two rotations, arccos((tr(R^T R*) - 1) / 2)."""
    R = np.asarray(R, dtype=np.float64)
    R_star = np.asarray(R_star, dtype=np.float64)
    c = (np.trace(R.T @ R_star) - 1.0) / 2.0
    angle = float(np.arccos(np.clip(c, -1.0, 1.0)))
    return float(np.degrees(angle)) if degrees else angle


def relative_translation_error(t, t_star):
    return float(np.linalg.norm(np.asarray(t, float) - np.asarray(t_star, float)))


def correspondence_rmse(source_points, target_points, transform: RigidTransform):
    """RMSE of ``|T(p) - q|`` over ground-truth pairs (p, q)."""
    P = np.atleast_2d(np.asarray(source_points, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(target_points, dtype=np.float64))
    if P.shape != Q.shape or len(P) == 0:
        raise ValueError("need at least one ground-truth pair with matching shapes")
    d2 = np.sum((transform.apply(P) - Q) ** 2, axis=1)
    return float(np.sqrt(np.mean(d2)))


def registration_recall(rmses, threshold=0.2):
    """Fraction of pairs with RMSE below `threshold`; 0 for an empty list."""
    r = np.asarray(list(rmses), dtype=np.float64)
    if r.size == 0:
        return 0.0
    return float(np.mean(r < threshold))


def chamfer_distance(P, Q, transform: RigidTransform | None = None):
    """Sum of the two directed mean nearest-neighbor distances after moving P."""
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if len(P) == 0 or len(Q) == 0:
        raise ValueError("both point sets must be non-empty")
    TP = P if transform is None else transform.apply(P)
    d_pq, _ = NeighborIndex(Q).nearest(TP)
    d_qp, _ = NeighborIndex(TP).nearest(Q)
    return float(d_pq.mean() + d_qp.mean())
