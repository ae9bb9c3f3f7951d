"""Point cloud container, rigid transforms, neighbor queries and local descriptors."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateNeighborhood

__all__ = [
    "PointCloud",
    "RigidTransform",
    "NeighborIndex",
    "apply_transform",
    "compose",
    "invert",
    "compute_descriptors",
    "descriptor_matrix",
    "standardize_features",
    "DESCRIPTOR_LAYOUT",
    "bounding_diagonal",
    "DESCRIPTOR_DIM",
]

DESCRIPTOR_DIM = 10

_ORTHO_TOL = 1e-9


def _readonly(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N points in 3D with optional per-point features and overlap scores.

    Arrays are copied to float64 and frozen on construction.
    """

    points: np.ndarray
    features: np.ndarray | None = None
    overlap_scores: np.ndarray | None = None

    def __post_init__(self):
        pts = _readonly(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)

        if self.features is not None:
            f = _readonly(self.features)
            if f.ndim != 2 or f.shape[0] != pts.shape[0] or f.shape[1] < 1:
                raise ValueError(
                    f"features must have shape ({pts.shape[0]}, d>=1), got {f.shape}"
                )
            if not np.all(np.isfinite(f)):
                raise ValueError("features must be finite")
            object.__setattr__(self, "features", f)

        if self.overlap_scores is not None:
            o = _readonly(self.overlap_scores).reshape(-1)
            if o.shape[0] != pts.shape[0]:
                raise ValueError("overlap_scores length must equal the point count")
            if np.any(~np.isfinite(o)) or np.any(o < 0.0) or np.any(o > 1.0):
                raise ValueError("overlap_scores must lie in [0, 1]")
            object.__setattr__(self, "overlap_scores", o)

    def __len__(self):
        return self.points.shape[0]

    @property
    def n_points(self):
        return self.points.shape[0]

    def with_features(self, features):
        return PointCloud(self.points, features, self.overlap_scores)

    def with_overlap_scores(self, scores):
        return PointCloud(self.points, self.features, scores)

    def subset(self, indices):
        idx = np.asarray(indices)
        return PointCloud(
            self.points[idx],
            None if self.features is None else self.features[idx],
            None if self.overlap_scores is None else self.overlap_scores[idx],
        )


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """A proper rigid motion x -> R x + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _readonly(self.rotation)
        t = _readonly(self.translation).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("transform entries must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix):
        m = np.asarray(matrix, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points):
        """Transform an (N, 3) array (or a single 3-vector)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self):
        return invert(self)

    def __matmul__(self, other):
        return compose(self, other)

    def to_dict(self):
        return {
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d):
        rot = np.asarray(d["rotation"], dtype=np.float64)
        if rot.size != 9:
            raise ValueError("rotation needs 9 row-major values")
        trans = np.asarray(d["translation"], dtype=np.float64)
        if trans.size != 3:
            raise ValueError("translation needs 3 values")
        return cls(rot.reshape(3, 3), trans)


def apply_transform(cloud: PointCloud, xf: RigidTransform) -> PointCloud:
    """Move the points of `cloud`; features and overlap scores are carried through."""
    return PointCloud(xf.apply(cloud.points), cloud.features, cloud.overlap_scores)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return the transform that applies `b` first, then `a`."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(a: RigidTransform) -> RigidTransform:
    Rt = a.rotation.T
    return RigidTransform(Rt, -Rt @ a.translation)


def bounding_diagonal(points):
    p = np.asarray(points, dtype=np.float64)
    return float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))


class NeighborIndex:
    """Read-only k-d tree over a point set.

    Nearest-neighbor ties are broken toward the lowest point index.
    """

    _TIE_PROBE = 8

    def __init__(self, points):
        if isinstance(points, PointCloud):
            points = points.points
        self._points = _readonly(points)
        self._tree = cKDTree(self._points)

    @property
    def points(self):
        return self._points

    def __len__(self):
        return self._points.shape[0]

    def nearest(self, queries):
        """Return (distances, indices) of the nearest indexed point for each query."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        k = min(self._TIE_PROBE, len(self))
        dist, idx = self._tree.query(q, k=k)
        if k == 1:
            return dist, idx
        # exact-distance ties -> lowest index
        best = dist[:, :1]
        cand = np.where(dist == best, idx, np.iinfo(np.int64).max)
        pick = cand.min(axis=1)
        return best[:, 0], pick

    def knn(self, queries, k):
        """k nearest indexed points per query, ordered by (distance, index)."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if not 1 <= k <= len(self):
            raise ValueError(f"k must be in [1, {len(self)}]")
        dist, idx = self._tree.query(q, k=k)
        if k == 1:
            return dist[:, None], idx[:, None]
        order = np.lexsort((idx, dist), axis=1)
        return np.take_along_axis(dist, order, 1), np.take_along_axis(idx, order, 1)


# (neighborhood size as a multiple of k, statistic); chosen for matching
# discrimination on noisy partial scans
DESCRIPTOR_LAYOUT = (
    (2.0, "radius"),
    (16.0, "offset"),
    (8.0, "linearity"),
    (8.0, "offset"),
    (4.0, "spread"),
    (16.0, "middle"),
    (8.0, "radius"),
    (16.0, "spread"),
    (0.5, "radius"),
)


def _neighborhood_stats(pts, nbr):
    """Shape statistics of each row of neighbor indices (the point itself first)."""
    nb = pts[nbr]                                  # (N, k, 3)
    k = nbr.shape[1]
    rel = nb - pts[:, None, :]
    radius = np.linalg.norm(rel, axis=2).max(axis=1)
    centroid = nb.mean(axis=1)
    centered = nb - centroid[:, None, :]
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    total = evals.sum(axis=1)
    safe_t = np.where(total > 0.0, total, 1.0)
    safe_r = np.where(radius > 0.0, radius, 1.0)
    safe_l = np.where(evals[:, 2] > 0.0, evals[:, 2], 1.0)
    # heights over the tangent plane; their spread ignores the normal's sign
    heights = np.einsum("ni,nki->nk", evecs[:, :, 0], rel)
    return {
        "radius": radius,
        "offset": np.linalg.norm(centroid - pts, axis=1) / safe_r,
        "linearity": (evals[:, 2] - evals[:, 1]) / safe_l,
        "middle": evals[:, 1] / safe_t,
        "spread": heights.std(axis=1) / safe_r,
    }


def descriptor_matrix(points, k=16):
    """Rigid- and scale-invariant multi-scale shape descriptor for every point.

    Each of the first nine columns is one statistic of the point's
    neighborhood at a multiple of ``k`` (see ``DESCRIPTOR_LAYOUT``; sizes are
    capped at N - 1 and count the point itself):

    ``radius``     farthest-neighbor distance / its median over the cloud
    ``offset``     distance from the point to the neighborhood centroid / radius
    ``linearity``  (l3 - l2) / l3 of the covariance eigenvalues l1 <= l2 <= l3
    ``middle``     l2 / (l1 + l2 + l3)
    ``spread``     std of heights above the tangent plane / radius

    The last column is a constant 1. Returns ``(features, degenerate)``;
    ``degenerate`` flags points whose k-neighborhood has zero extent, whose
    rows are zeros except for the bias.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if not (4 <= k < n):
        raise ValueError(f"descriptor needs N > k >= 4 (N={n}, k={k})")

    sizes = sorted({max(2, min(int(round(f * k)), n - 1)) for f, _ in DESCRIPTOR_LAYOUT} | {k})
    _, nbr = NeighborIndex(pts).knn(pts, sizes[-1] + 1)
    stats = {m: _neighborhood_stats(pts, nbr[:, : m + 1]) for m in sizes}

    degenerate = stats[k]["radius"] <= 0.0
    feat = np.empty((n, DESCRIPTOR_DIM))
    for col, (f, name) in enumerate(DESCRIPTOR_LAYOUT):
        st = stats[max(2, min(int(round(f * k)), n - 1))]
        value = st[name]
        if name == "radius":
            ok = value[~degenerate]
            med = np.median(ok) if ok.size else 0.0
            value = value / med if med > 0 else np.zeros(n)
        feat[:, col] = value
    feat[:, -1] = 1.0
    feat[degenerate, :-1] = 0.0
    return feat, degenerate


def standardize_features(features, degenerate=None):
    """Z-score every non-bias column over the cloud, re-append the bias, unit-normalize rows.

    Per-cloud statistics keep rigid and scale invariance. Constant columns
    map to zero; ``degenerate`` rows become the pure bias vector.
    """
    F = np.asarray(features, dtype=np.float64)
    body = F[:, :-1]
    sd = body.std(axis=0)
    Z = (body - body.mean(axis=0)) / np.where(sd > 1e-12 * (1.0 + np.abs(body).max(axis=0)), sd, np.inf)
    out = np.column_stack([Z, np.ones(len(F))])
    if degenerate is not None:
        out[np.asarray(degenerate, bool), :-1] = 0.0
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def compute_descriptors(cloud: PointCloud, k: int = 16, standardize: bool = True) -> PointCloud:
    """Return a copy of `cloud` with `features` set to the local descriptor.

    With `standardize` (the default) the raw descriptor is passed through
    :func:`standardize_features`. Degenerate neighborhoods get the
    bias-only row and trigger a :class:`DegenerateNeighborhood` warning.
    """
    feat, degenerate = descriptor_matrix(cloud.points, k)
    if standardize:
        feat = standardize_features(feat, degenerate)
    if np.any(degenerate):
        warnings.warn(
            f"{int(degenerate.sum())} neighborhoods have zero extent",
            DegenerateNeighborhood,
            stacklevel=2,
        )
    return cloud.with_features(feat)
