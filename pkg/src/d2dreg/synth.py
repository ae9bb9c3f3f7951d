"""Seeded synthetic partial-overlap pairs with known ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .core import PointCloud, RigidTransform, bounding_diagonal

__all__ = ["SHAPES", "SyntheticSpec", "sample_shape", "random_transform", "crop_half_space", "generate_pair"]

SHAPES = ("sphere", "torus", "box", "composite")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one synthetic pair.

    `noise` is the Gaussian sigma as a fraction of the shape's bounding
    diagonal; `outlier_fraction` adds that many uniform points (relative to
    the cropped count) inside the cropped cloud's bounding box.
    """

    shape: str = "composite"
    n_points: int = 1024
    overlap: float = 0.7
    max_rotation_deg: float = 45.0
    max_translation: float = 0.5
    noise: float = 0.01
    outlier_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        if self.n_points < 10:
            raise ValueError("n_points must be >= 10")
        if not 0.0 < self.overlap <= 1.0:
            raise ValueError("overlap must lie in (0, 1]")
        if not 0.0 <= self.max_rotation_deg <= 180.0:
            raise ValueError("max_rotation_deg must lie in [0, 180]")
        if self.max_translation < 0 or self.noise < 0 or self.outlier_fraction < 0:
            raise ValueError("translation bound, noise and outlier fraction must be >= 0")
        if round(self.overlap * self.n_points) < 10:
            raise ValueError("overlap * n_points must keep at least 10 points")


def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sphere(rng, n, radius=1.0):
    return radius * _unit_vectors(rng, n)


def _torus(rng, n, R=1.0, r=0.35):
    # area element is proportional to R + r cos(v): rejection sample v
    u = rng.uniform(0.0, 2 * np.pi, n)
    v = np.empty(n)
    filled = 0
    while filled < n:
        cand = rng.uniform(0.0, 2 * np.pi, 2 * (n - filled))
        keep = rng.uniform(0.0, R + r, cand.size) < R + r * np.cos(cand)
        cand = cand[keep][: n - filled]
        v[filled : filled + cand.size] = cand
        filled += cand.size
    return np.column_stack([
        (R + r * np.cos(v)) * np.cos(u),
        (R + r * np.cos(v)) * np.sin(u),
        r * np.sin(v),
    ])


def _box(rng, n, half=(1.0, 0.6, 0.35)):
    h = np.asarray(half, dtype=np.float64)
    areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]] * 2)
    face = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(-1.0, 1.0, (n, 3)) * h
    axis = face % 3
    sign = np.where(face < 3, 1.0, -1.0)
    pts[np.arange(n), axis] = sign * h[axis]
    return pts


def _composite(rng, n):
    """Box, offset sphere and tilted torus; no nontrivial rigid symmetry."""
    parts = np.array([0.45, 0.25, 0.30])
    counts = rng.multinomial(n, parts)
    box = _box(rng, counts[0], half=(0.8, 0.5, 0.25))
    sphere = _sphere(rng, counts[1], radius=0.35) + np.array([0.55, 0.2, 0.6])
    tilt = Rotation.from_euler("xy", [60.0, 25.0], degrees=True).as_matrix()
    torus = _torus(rng, counts[2], R=0.45, r=0.12) @ tilt.T + np.array([-0.6, -0.35, 0.45])
    return np.vstack([box, sphere, torus])


def sample_shape(shape, n, rng):
    """`n` points sampled uniformly by area on the named surface."""
    if shape == "sphere":
        return _sphere(rng, n)
    if shape == "torus":
        return _torus(rng, n)
    if shape == "box":
        return _box(rng, n)
    if shape == "composite":
        return _composite(rng, n)
    raise ValueError(f"unknown shape {shape!r}")


def random_transform(rng, max_rotation_deg, max_translation) -> RigidTransform:
    """Uniform axis, angle uniform in [0, bound]; translation uniform in a ball."""
    axis = _unit_vectors(rng, 1)[0]
    angle = np.deg2rad(rng.uniform(0.0, max_rotation_deg))
    R = Rotation.from_rotvec(angle * axis).as_matrix()
    direction = _unit_vectors(rng, 1)[0]
    t = direction * max_translation * rng.uniform(0.0, 1.0) ** (1.0 / 3.0)
    return RigidTransform(R, t)


def crop_half_space(points, keep, rng):
    """Indices of the `keep` points with the smallest projection on a random direction."""
    d = _unit_vectors(rng, 1)[0]
    proj = points @ d
    return np.sort(np.argsort(proj, kind="stable")[:keep])


def _finish(points, keep_idx, sigma, outlier_fraction, rng):
    pts = points[keep_idx]
    if sigma > 0:
        pts = pts + rng.normal(scale=sigma, size=pts.shape)
    n_out = int(round(outlier_fraction * len(pts)))
    if n_out:
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        pts = np.vstack([pts, rng.uniform(lo, hi, (n_out, 3))])
    return pts[rng.permutation(len(pts))]


def generate_pair(spec: SyntheticSpec):
    """Return ``(source, target, gt)`` with ``target ~ gt.apply(source)``.

    Both clouds are cut from the same sampled surface. Each keeps
    ``round(overlap * n_points)`` points on one side of its own random
    plane, then receives noise, outliers and a shuffle.
    """
    rng = np.random.default_rng(spec.seed)
    base = sample_shape(spec.shape, spec.n_points, rng)
    base = base - base.mean(axis=0)
    sigma = spec.noise * bounding_diagonal(base)
    gt = random_transform(rng, spec.max_rotation_deg, spec.max_translation)
    keep = int(round(spec.overlap * spec.n_points))
    idx_s = crop_half_space(base, keep, rng)
    idx_t = crop_half_space(base, keep, rng)
    src = _finish(base, idx_s, sigma, spec.outlier_fraction, rng)
    tgt = _finish(gt.apply(base), idx_t, sigma, spec.outlier_fraction, rng)
    return PointCloud(src), PointCloud(tgt), gt
