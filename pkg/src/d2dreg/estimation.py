"""Rigid pose from weighted correspondences: weighted Kabsch and RANSAC."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PointCloud, RigidTransform, bounding_diagonal
from .errors import DegenerateConfiguration, NoConsensus

__all__ = [
    "RansacConfig",
    "RegistrationResult",
    "kabsch",
    "weighted_kabsch",
    "ransac_register",
]

_RANK_TOL = 1e-12
_BATCH = 256


def _project_rotations(H):
    """Proper rotations maximizing tr(R H) for a stack of 3x3 matrices H."""
    U, _, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, -1, -2)
    Ut = np.swapaxes(U, -1, -2)
    d = np.sign(np.linalg.det(V @ Ut))
    d = np.where(d == 0, 1.0, d)
    D = np.zeros(H.shape[:-2] + (3,))
    D[..., 0] = 1.0
    D[..., 1] = 1.0
    D[..., 2] = d
    return V @ (D[..., :, None] * Ut)


def kabsch(src, dst, weights=None):
    """Least-squares R, t minimizing sum w_i |R p_i + t - q_i|^2.

    Raises DegenerateConfiguration when the weighted cross-covariance has
    rank below 2 (collinear or coincident points).
    """
    P = np.asarray(src, dtype=np.float64)
    Q = np.asarray(dst, dtype=np.float64)
    if P.shape != Q.shape or P.ndim != 2 or P.shape[1] != 3:
        raise ValueError("src and dst must both be (N, 3)")
    w = np.ones(len(P)) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(P) < 3:
        raise DegenerateConfiguration("need at least 3 correspondences")
    if np.any(w < 0) or not w.sum() > 0:
        raise DegenerateConfiguration("weights must be nonnegative and not all zero")
    w = w / w.sum()
    p_bar = w @ P
    q_bar = w @ Q
    H = (P - p_bar).T @ (w[:, None] * (Q - q_bar))
    sv = np.linalg.svd(H, compute_uv=False)
    if sv[0] <= 0.0 or sv[1] <= _RANK_TOL * max(sv[0], 1.0):
        raise DegenerateConfiguration("cross-covariance has rank < 2")
    R = _project_rotations(H)
    return R, q_bar - R @ p_bar


def weighted_kabsch(pairs, cloud_s: PointCloud, cloud_t: PointCloud) -> RigidTransform:
    src = cloud_s.points[pairs.source]
    dst = cloud_t.points[pairs.target]
    R, t = kabsch(src, dst, pairs.weight)
    return RigidTransform(R, t)


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 50_000
    inlier_threshold: float | None = None  # None -> 0.05 x source bounding diagonal
    sample_size: int = 3
    confidence: float = 0.999
    seed: int = 0
    # refits on the inliers within threshold x f, for each f in turn
    refine_schedule: tuple = (1.0, 0.6, 0.4, 0.4)
    # plan weights from patch matching are poorly calibrated; equal weights refit better
    refit_weighted: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.inlier_threshold is not None and not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if self.sample_size != 3:
            raise ValueError("sample_size is fixed at 3")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if any(not 0.0 < f <= 1.0 for f in self.refine_schedule):
            raise ValueError("refine_schedule fractions must lie in (0, 1]")
        object.__setattr__(self, "refine_schedule", tuple(float(f) for f in self.refine_schedule))


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    transform: RigidTransform
    inlier_indices: np.ndarray
    inlier_rms: float
    iterations_used: int
    inlier_threshold: float

    @property
    def n_inliers(self):
        return len(self.inlier_indices)


def _residuals(R, t, P, Q):
    return np.linalg.norm(P @ R.T + t - Q, axis=1)


def _required_iterations(inlier_ratio, confidence, sample_size=3):
    good = inlier_ratio**sample_size
    if good <= 0.0:
        return math.inf
    if good >= 1.0:
        return 0
    return math.log(1.0 - confidence) / math.log(1.0 - good)


def ransac_register(pairs, cloud_s: PointCloud, cloud_t: PointCloud, cfg: RansacConfig | None = None):
    """Weighted-sampling RANSAC over correspondences with a Kabsch refit.

    The best sampled model is refit by Kabsch (weighted when
    ``cfg.refit_weighted``) on its inliers, once per entry of
    ``cfg.refine_schedule``, each time within a tighter fraction of the
    threshold; the reported inliers are those of the final model at the
    full threshold.

    Hypotheses are drawn in fixed-size batches; batch ``b`` uses the RNG
    stream keyed by ``(seed, b)``, so the outcome does not depend on how
    batches are scheduled. The best hypothesis is ranked by
    (inlier count, -inlier RMS, earliest iteration).
    """
    cfg = cfg or RansacConfig()
    P = cloud_s.points[pairs.source]
    Q = cloud_t.points[pairs.target]
    m = len(P)
    if m < 3:
        raise NoConsensus(f"need at least 3 correspondences, got {m}")
    thr = cfg.inlier_threshold
    if thr is None:
        thr = 0.05 * bounding_diagonal(cloud_s.points)
    w = pairs.weight
    cdf = np.cumsum(w / w.sum()) if w.sum() > 0 else np.arange(1, m + 1) / m
    cdf[-1] = 1.0

    best = (-1, 0.0, 0)  # (count, -rms, -iteration) maximized lexicographically
    best_model = None
    done = 0
    batch = 0
    while done < cfg.max_iterations:
        size = min(_BATCH, cfg.max_iterations - done)
        rng = np.random.default_rng([int(cfg.seed) & 0xFFFFFFFFFFFFFFFF, batch])
        idx = np.searchsorted(cdf, rng.random((size, 3)), side="right")
        idx = np.minimum(idx, m - 1)
        distinct = (idx[:, 0] != idx[:, 1]) & (idx[:, 0] != idx[:, 2]) & (idx[:, 1] != idx[:, 2])
        it_ids = done + np.arange(size)
        idx, it_ids = idx[distinct], it_ids[distinct]
        if len(idx):
            Ps, Qs = P[idx], Q[idx]                            # (B, 3, 3)
            ws = w[idx] if w.sum() > 0 else np.ones(idx.shape)
            ws = ws / np.maximum(ws.sum(axis=1, keepdims=True), 1e-300)
            pb = np.einsum("bk,bki->bi", ws, Ps)
            qb = np.einsum("bk,bki->bi", ws, Qs)
            H = np.einsum("bk,bki,bkj->bij", ws, Ps - pb[:, None], Qs - qb[:, None])
            R = _project_rotations(H)
            t = qb - np.einsum("bij,bj->bi", R, pb)
            res = np.linalg.norm(np.einsum("bij,mj->bmi", R, P) + t[:, None, :] - Q[None], axis=2)
            inl = res <= thr
            count = inl.sum(axis=1)
            sq = np.where(inl, res**2, 0.0).sum(axis=1)
            rms = np.sqrt(sq / np.maximum(count, 1))
            order = np.lexsort((it_ids, rms, -count))
            k = order[0]
            cand = (int(count[k]), -float(rms[k]), -int(it_ids[k]))
            if cand > best:
                best = cand
                best_model = (R[k], t[k])
        done += size
        batch += 1
        if best[0] > 0 and done >= _required_iterations(best[0] / m, cfg.confidence):
            break

    if best_model is None or best[0] < 3:
        raise NoConsensus(f"best hypothesis has {max(best[0], 0)} inliers (< 3)")

    R, t = best_model
    for f in cfg.refine_schedule:
        sel = np.flatnonzero(_residuals(R, t, P, Q) <= f * thr)
        if len(sel) < 3:
            break
        try:
            ws = w[sel] if cfg.refit_weighted and w[sel].sum() > 0 else None
            R, t = kabsch(P[sel], Q[sel], ws)
        except DegenerateConfiguration:
            break
    inliers = np.flatnonzero(_residuals(R, t, P, Q) <= thr)
    if len(inliers) < 3:
        # refits drifted away from the consensus; fall back to the sampled model
        R, t = best_model
        inliers = np.flatnonzero(_residuals(R, t, P, Q) <= thr)
    res = _residuals(R, t, P, Q)[inliers]
    rms = float(np.sqrt(np.mean(res**2)))
    return RegistrationResult(RigidTransform(R, t), inliers, rms, done, float(thr))
