import itertools

import numpy as np
import pytest

from d2dreg.core import PointCloud, RigidTransform
from d2dreg.gmm import GmmModel, estimate_params
from d2dreg.losses import (
    LOG_CLAMP,
    cross_consistency_gamma,
    cross_consistency_loss,
    empirical_gamma_self,
    local_contrastive_loss,
    merge_for_cross_consistency,
    nearest_point_anchors,
    row_entropy,
    self_consistency_loss,
    total_loss,
)

from conftest import random_transform


def coord_model(means, weights):
    means = np.asarray(means, float)
    L = len(means)
    return GmmModel(np.asarray(weights, float), means, np.tile(np.eye(3), (L, 1, 1)), None, None)


def random_simplex_rows(rng, n, L, sharp=1.0):
    return rng.dirichlet(np.full(L, sharp), n)


def best_balanced_assignment(cost, per_cluster):
    """Minimum-cost hard assignment with a fixed count per column, by enumeration."""
    n, L = cost.shape
    best = np.inf
    for labels in itertools.product(range(L), repeat=n):
        if np.all(np.bincount(labels, minlength=L) == per_cluster):
            best = min(best, cost[np.arange(n), labels].sum())
    return best


class TestEmpiricalGammaSelf:
    def test_singletons(self):
        model = coord_model([[0, 0, 0], [10, 0, 0]], [0.5, 0.5])
        g = empirical_gamma_self(PointCloud([[0, 0, 0], [10, 0, 0]]), model)
        np.testing.assert_allclose(g, np.eye(2), atol=1e-6)

    def test_marginals(self, rng):
        for _ in range(20):
            n, L = rng.integers(5, 30), rng.integers(2, 6)
            P = rng.normal(size=(n, 3))
            pi = rng.dirichlet(np.ones(L) * 2)
            model = coord_model(rng.normal(size=(L, 3)), pi)
            g = empirical_gamma_self(PointCloud(P), model, iters=3000)
            np.testing.assert_allclose(g.sum(axis=1), 1.0, atol=1e-6)
            np.testing.assert_allclose(g.sum(axis=0), n * pi, atol=1e-5)

    def test_four_points_enumeration(self, rng):
        P = rng.normal(size=(4, 3))
        mu = rng.normal(size=(2, 3))
        g = empirical_gamma_self(PointCloud(P), coord_model(mu, [0.5, 0.5]), epsilon=1e-3, iters=2000)
        cost = np.sum((P[:, None] - mu[None]) ** 2, axis=2)
        ours = np.sum(g * cost) / 4
        # vertices of the polytope are the balanced hard assignments
        opt = best_balanced_assignment(cost, [2, 2]) / 4
        assert abs(ours - opt) <= 0.01 * opt


class TestSelfConsistency:
    def test_one_hot_zero(self):
        S = np.eye(4)[[0, 1, 2, 3, 1]]
        assert self_consistency_loss(S, S, S, S) == 0.0

    def test_uniform_predictions(self, rng):
        N, L = 12, 5
        g = np.eye(L)[rng.integers(0, L, N)]
        U = np.full((N, L), 1 / L)
        assert self_consistency_loss(g, U, g, U) == pytest.approx(2 * N * np.log(L), abs=1e-12)

    def test_gibbs_bound(self, rng):
        for _ in range(100):
            n, L = rng.integers(2, 20), rng.integers(2, 7)
            gs, gt = random_simplex_rows(rng, n, L), random_simplex_rows(rng, n, L)
            Ss, St = random_simplex_rows(rng, n, L, 0.5), random_simplex_rows(rng, n, L, 0.5)
            loss = self_consistency_loss(gs, Ss, gt, St)
            assert loss - (row_entropy(gs) + row_entropy(gt)) >= -1e-9

    def test_entropy_is_minimum(self, rng):
        g = random_simplex_rows(rng, 10, 4)
        base = self_consistency_loss(g, g, g, g)
        assert base == pytest.approx(2 * row_entropy(g), abs=1e-12)
        for _ in range(20):
            d = rng.normal(size=g.shape)
            d -= d.mean(axis=1, keepdims=True)  # stay on the simplex
            step = 0.5 * np.min(g) / np.abs(d).max()
            S = g + step * d
            assert self_consistency_loss(g, S, g, S) >= base - 1e-12

    def test_clamp(self):
        g = np.array([[1.0, 0.0]])
        S = np.array([[0.0, 1.0]])
        assert self_consistency_loss(g, S, g, g) == pytest.approx(-np.log(LOG_CLAMP))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            cross_consistency_loss(np.ones((2, 2)), np.ones((2, 3)))


class TestCrossConsistency:
    def test_one_hot_and_uniform(self, rng):
        N, L = 9, 3
        g = np.eye(L)[rng.integers(0, L, N)]
        assert cross_consistency_loss(g, g) == 0.0
        assert cross_consistency_loss(g, np.full((N, L), 1 / L)) == pytest.approx(N * np.log(L), abs=1e-12)

    def test_gibbs_against_row_normalized(self, rng):
        for _ in range(50):
            g = rng.uniform(0, 1, (8, 3))
            S = random_simplex_rows(rng, 8, 3)
            assert cross_consistency_loss(g, S) >= cross_consistency_loss(g, g / g.sum(1, keepdims=True)) - 1e-9

    def test_aligned_clusters_get_equal_mass(self, rng):
        centres = np.array([[0, 0, 0], [10, 0, 0], [0, 10, 0], [0, 0, 10.0]])
        lab = np.repeat(np.arange(4), 5)
        P = centres[lab] + 0.1 * rng.normal(size=(20, 3))
        S = np.eye(4)[lab]
        xf = random_transform(rng)
        cs, ct = PointCloud(xf.inverse().apply(P)), PointCloud(P)
        pts, feats, Sm = merge_for_cross_consistency(cs, ct, S, S, xf)
        np.testing.assert_allclose(pts[:20], P, atol=1e-12)
        g = cross_consistency_gamma(pts, feats, Sm, iters=500)
        np.testing.assert_allclose(g.sum(axis=0), 40 / 4, atol=1e-6)
        # entropic blur leaves only a trace of mass off the true labels
        np.testing.assert_allclose(g, np.vstack([S, S]), atol=1e-3)

    def test_coordinate_only_reduction(self, rng):
        P = rng.normal(size=(30, 3))
        F = rng.normal(size=(30, 5))
        S = random_simplex_rows(rng, 30, 3)
        g = cross_consistency_gamma(P, F, S, lambda_coord=1.0, lambda_feat=0.0, iters=50)
        model = estimate_params(PointCloud(P), S)
        ref = empirical_gamma_self(PointCloud(P), coord_model(model.coord_means, np.full(3, 1 / 3)), iters=50)
        np.testing.assert_allclose(g, ref, atol=1e-9)

    def test_eight_points_enumeration(self, rng):
        P = rng.normal(size=(8, 3))
        F = rng.normal(size=(8, 2))
        S = random_simplex_rows(rng, 8, 2)
        g = cross_consistency_gamma(P, F, S, 0.3, 0.7, epsilon=1e-3, iters=3000)
        mu_e = S.T @ P / S.sum(0)[:, None]
        mu_f = S.T @ F / S.sum(0)[:, None]
        cost = 0.3 * ((P[:, None] - mu_e) ** 2).sum(2) + 0.7 * ((F[:, None] - mu_f) ** 2).sum(2)
        ours = np.sum(g * cost)
        opt = best_balanced_assignment(cost, [4, 4])
        assert abs(ours - opt) <= 0.01 * opt


def _orthonormal(rng, L, d):
    q, _ = np.linalg.qr(rng.normal(size=(d, L)))
    return q.T


class TestLocalContrastive:
    def test_single_cluster(self, rng):
        x = rng.normal(size=(1, 4))
        assert local_contrastive_loss(x, x, x, x) == 0.0

    def test_orthonormal_closed_form(self, rng):
        # diagonal logit 1, off-diagonal 0 in all three softmaxes: one
        # cross-cloud term plus one anchor term per cloud
        for L in (2, 3, 6):
            M = _orthonormal(rng, L, 8)
            expected = 3 * np.log(1 + (L - 1) * np.exp(-1.0))
            assert local_contrastive_loss(M, M, M, M) == pytest.approx(expected, abs=1e-12)

    def test_permutation_invariance(self, rng):
        a, b, c, d = (rng.normal(size=(5, 4)) for _ in range(4))
        p = rng.permutation(5)
        assert local_contrastive_loss(a[p], b[p], c[p], d[p]) == pytest.approx(
            local_contrastive_loss(a, b, c, d), abs=1e-12)

    def test_scale_multiplies_logits(self, rng):
        a, b, c, d = (rng.normal(size=(3, 4)) for _ in range(4))
        assert local_contrastive_loss(a, b, c, d, scale=2.0) == pytest.approx(
            local_contrastive_loss(2 * a, b, c, 2 * d), abs=1e-12)

    def test_anchors_are_nearest_points(self, rng):
        P = rng.normal(size=(40, 3))
        F = rng.normal(size=(40, 6))
        model = coord_model(rng.normal(size=(4, 3)), np.full(4, 0.25))
        A = nearest_point_anchors(PointCloud(P, F), model)
        for j, mu in enumerate(model.coord_means):
            np.testing.assert_array_equal(A[j], F[np.argmin(np.linalg.norm(P - mu, axis=1))])
        with pytest.raises(ValueError):
            nearest_point_anchors(PointCloud(P), model)


class TestPermutationInvariance:
    def test_all_losses(self, rng):
        n, L = 15, 4
        p = rng.permutation(L)
        gs, gt, Ss, St = (random_simplex_rows(rng, n, L) for _ in range(4))
        assert self_consistency_loss(gs[:, p], Ss[:, p], gt[:, p], St[:, p]) == pytest.approx(
            self_consistency_loss(gs, Ss, gt, St), abs=1e-12)
        assert cross_consistency_loss(gs[:, p], Ss[:, p]) == pytest.approx(cross_consistency_loss(gs, Ss), abs=1e-12)

    def test_gamma_is_equivariant(self, rng):
        P = rng.normal(size=(20, 3))
        mu = rng.normal(size=(4, 3))
        pi = rng.dirichlet(np.ones(4))
        p = rng.permutation(4)
        g = empirical_gamma_self(PointCloud(P), coord_model(mu, pi), iters=100)
        gp = empirical_gamma_self(PointCloud(P), coord_model(mu[p], pi[p]), iters=100)
        np.testing.assert_allclose(gp, g[:, p], atol=1e-12)
        F = rng.normal(size=(20, 2))
        S = random_simplex_rows(rng, 20, 4)
        c = cross_consistency_gamma(P, F, S, iters=100)
        np.testing.assert_allclose(cross_consistency_gamma(P, F, S[:, p], iters=100), c[:, p], atol=1e-12)


def test_total_loss_is_sum():
    assert total_loss(0.0, 0.0, 0.0) == 0.0
    assert total_loss(1.25, 2.5, -0.125) == pytest.approx(3.625, abs=1e-12)


def test_pipeline_state_is_finite(rng):
    from d2dreg.gmm import FitConfig, fit
    from d2dreg.core import compute_descriptors

    P = rng.normal(size=(120, 3)) * [2, 1, 0.5]
    xf = random_transform(rng)
    cs = compute_descriptors(PointCloud(P), 8)
    ct = compute_descriptors(PointCloud(xf.apply(P)), 8)
    ms, Ss = fit(cs, 4, FitConfig(max_em_iters=3))
    mt, St = fit(ct, 4, FitConfig(max_em_iters=3))
    Ss, St = np.asarray(Ss), np.asarray(St)
    sc = self_consistency_loss(empirical_gamma_self(cs, ms), Ss, empirical_gamma_self(ct, mt), St)
    pts, feats, Sm = merge_for_cross_consistency(cs, ct, Ss, St, xf)
    cc = cross_consistency_loss(cross_consistency_gamma(pts, feats, Sm), Sm)
    lc = local_contrastive_loss(ms.feat_means, mt.feat_means, nearest_point_anchors(cs, ms), nearest_point_anchors(ct, mt))
    assert np.isfinite(total_loss(sc, cc, lc))
