import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from d2dreg.core import PointCloud, RigidTransform, bounding_diagonal
from d2dreg.errors import DegenerateConfiguration, NoConsensus
from d2dreg.estimation import RansacConfig, kabsch, ransac_register, weighted_kabsch
from d2dreg.matching import CorrespondenceSet
from d2dreg.metrics import relative_rotation_error

from conftest import random_transform, rot_z


def identity_pairs(n, weights=None):
    w = np.ones(n) if weights is None else weights
    return CorrespondenceSet(np.arange(n), np.arange(n), w)


def outlier_problem(seed, n=200, outlier_frac=0.3):
    """Exact inlier pairs under a random pose plus uniformly random outlier pairs."""
    rng = np.random.default_rng(seed)
    P = rng.uniform(-1, 1, (n, 3))
    xf = random_transform(rng)
    Q = xf.apply(P)
    n_out = int(round(outlier_frac * n))
    bad = rng.choice(n, n_out, replace=False)
    lo, hi = Q.min(axis=0), Q.max(axis=0)
    Q[bad] = rng.uniform(lo, hi, (n_out, 3))
    return PointCloud(P), PointCloud(Q), xf


def _euler_grid(step_deg, centre=None, half_width=None):
    if centre is None:
        a = np.deg2rad(np.arange(-180, 180, step_deg))
        b = np.deg2rad(np.arange(0, 180 + step_deg, step_deg))
        axes = (a, b, a)
    else:
        off = np.deg2rad(np.arange(-half_width, half_width + step_deg, step_deg))
        axes = tuple(c + off for c in centre)
    g = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    return g


def grid_best_residual(P, Q):
    """Best proper-rotation least-squares residual by exhaustive Euler-angle search.

    A 5 degree global sweep followed by a 1 degree sweep around its best cell.
    """
    pc, qc = P - P.mean(0), Q - Q.mean(0)
    H = pc.T @ qc

    def search(angles):
        R = Rotation.from_euler("zyz", angles).as_matrix()
        score = np.einsum("bij,ji->b", R, H)  # tr(R H)
        k = int(np.argmax(score))
        return angles[k], np.sum(pc**2) + np.sum(qc**2) - 2 * score[k]

    coarse, _ = search(_euler_grid(5.0))
    _, res = search(_euler_grid(1.0, coarse, 6.0))
    return res


class TestKabsch:
    def test_identity(self, rng):
        P = rng.normal(size=(20, 3))
        R, t = kabsch(P, P)
        np.testing.assert_allclose(R, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(t, 0.0, atol=1e-12)

    def test_four_point_recovery(self):
        P = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
        Q = P @ rot_z(90.0).T + [1.0, 2.0, 3.0]
        R, t = kabsch(P, Q)
        np.testing.assert_allclose(R, rot_z(90.0), atol=1e-9)
        np.testing.assert_allclose(t, [1.0, 2.0, 3.0], atol=1e-9)

    def test_weighted_exact(self, rng):
        for _ in range(20):
            P = rng.normal(size=(30, 3))
            xf = random_transform(rng, 10.0)
            w = rng.uniform(0, 1, 30)
            out = weighted_kabsch(identity_pairs(30, w), PointCloud(P), PointCloud(xf.apply(P)))
            np.testing.assert_allclose(out.rotation, xf.rotation, atol=1e-9)
            np.testing.assert_allclose(out.translation, xf.translation, atol=1e-9)

    def test_weight_scale_invariance(self, rng):
        P = rng.normal(size=(15, 3))
        Q = random_transform(rng).apply(P) + 0.05 * rng.normal(size=(15, 3))
        w = rng.uniform(0.1, 1, 15)
        R1, t1 = kabsch(P, Q, w)
        R2, t2 = kabsch(P, Q, 123.0 * w)
        np.testing.assert_allclose(R1, R2, atol=1e-12)
        np.testing.assert_allclose(t1, t2, atol=1e-12)

    def test_left_equivariance(self, rng):
        P = rng.normal(size=(25, 3))
        Q = random_transform(rng).apply(P) + 0.1 * rng.normal(size=(25, 3))
        R0 = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
        R, _ = kabsch(P, Q)
        R_rot, _ = kabsch(P, Q @ R0.T)
        np.testing.assert_allclose(R_rot, R0 @ R, atol=1e-9)

    def test_zero_weights_ignore_pairs(self, rng):
        P = rng.normal(size=(10, 3))
        Q = random_transform(rng).apply(P)
        Q[7:] = rng.normal(size=(3, 3)) * 10
        w = np.r_[np.ones(7), np.zeros(3)]
        R, t = kabsch(P, Q, w)
        R7, t7 = kabsch(P[:7], Q[:7])
        np.testing.assert_allclose(R, R7, atol=1e-12)

    def test_reflection_trap(self, rng):
        # nearly planar cloud, targets are its mirror image: the unconstrained
        # optimum is a reflection, which must not be returned
        P = rng.normal(size=(40, 3)) * [2.0, 1.0, 0.05]
        M = np.diag([1.0, -1.0, 1.0])
        Q = P @ M.T + 0.01 * rng.normal(size=(40, 3))
        R, t = kabsch(P, Q)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
        resid = np.sum((P @ R.T + t - Q) ** 2)
        best = grid_best_residual(P, Q)
        # exact optimum: never worse than the grid, and the grid is within 1 degree of it
        assert resid <= best + 1e-9
        assert best - resid < 0.05 * best
        U, _, Vt = np.linalg.svd((P - P.mean(0)).T @ (Q - Q.mean(0)))
        assert np.linalg.det(Vt.T @ U.T) < 0  # it really is a trap

    def test_degenerate_inputs(self):
        line = np.column_stack([np.arange(5.0), np.zeros(5), np.zeros(5)])
        with pytest.raises(DegenerateConfiguration):
            kabsch(line, line)
        with pytest.raises(DegenerateConfiguration):
            kabsch(np.eye(3), np.eye(3), [0.0, 0.0, 0.0])
        with pytest.raises(DegenerateConfiguration):
            kabsch(np.eye(3)[:2], np.eye(3)[:2])


class TestRansac:
    def test_outlier_free_exact(self, rng):
        P = rng.normal(size=(50, 3))
        xf = random_transform(rng)
        res = ransac_register(identity_pairs(50), PointCloud(P), PointCloud(xf.apply(P)))
        np.testing.assert_allclose(res.transform.rotation, xf.rotation, atol=1e-9)
        np.testing.assert_allclose(res.transform.translation, xf.translation, atol=1e-9)
        assert res.n_inliers == 50

    @pytest.mark.parametrize("seed", range(10))
    def test_thirty_percent_outliers(self, seed):
        cs, ct, xf = outlier_problem(seed)
        cfg = RansacConfig(inlier_threshold=0.02 * bounding_diagonal(cs.points), seed=seed)
        res = ransac_register(identity_pairs(200), cs, ct, cfg)
        assert relative_rotation_error(res.transform.rotation, xf.rotation) < 0.5
        assert res.n_inliers >= 140

    def test_deterministic(self):
        cs, ct, _ = outlier_problem(3)
        cfg = RansacConfig(seed=11)
        a = ransac_register(identity_pairs(200), cs, ct, cfg)
        b = ransac_register(identity_pairs(200), cs, ct, cfg)
        assert a.transform.as_matrix().tobytes() == b.transform.as_matrix().tobytes()
        np.testing.assert_array_equal(a.inlier_indices, b.inlier_indices)
        assert a.inlier_rms == b.inlier_rms and a.iterations_used == b.iterations_used

    def test_reported_rms_and_threshold(self):
        cs, ct, _ = outlier_problem(5)
        ct = PointCloud(ct.points + 0.003 * np.random.default_rng(0).normal(size=ct.points.shape))
        res = ransac_register(identity_pairs(200), cs, ct, RansacConfig(inlier_threshold=0.02))
        r = np.linalg.norm(res.transform.apply(cs.points[res.inlier_indices]) - ct.points[res.inlier_indices], axis=1)
        assert r.max() <= res.inlier_threshold
        assert res.inlier_rms == pytest.approx(np.sqrt(np.mean(r**2)), abs=1e-12)

    def test_weighted_sampling_finds_heavy_inliers(self, rng):
        # only 10% inliers, but they carry almost all the weight
        P = rng.uniform(-1, 1, (100, 3))
        xf = random_transform(rng)
        Q = rng.uniform(-2, 2, (100, 3))
        Q[:10] = xf.apply(P[:10])
        w = np.r_[np.full(10, 1.0), np.full(90, 1e-3)]
        res = ransac_register(identity_pairs(100, w), PointCloud(P), PointCloud(Q),
                              RansacConfig(max_iterations=200, inlier_threshold=0.01))
        assert relative_rotation_error(res.transform.rotation, xf.rotation) < 1e-6

    def test_no_consensus(self):
        with pytest.raises(NoConsensus):
            ransac_register(identity_pairs(2), PointCloud(np.eye(3)[:2]), PointCloud(np.eye(3)[:2]))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RansacConfig(max_iterations=0)
        with pytest.raises(ValueError):
            RansacConfig(inlier_threshold=-1.0)
        with pytest.raises(ValueError):
            RansacConfig(sample_size=4)
        with pytest.raises(ValueError):
            RansacConfig(refine_schedule=(1.0, 0.0))
