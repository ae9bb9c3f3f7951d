"""Cluster-level partial matching and point-level matching inside patches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PointCloud
from .errors import DegenerateWeights, NoCorrespondences, NoMatches
from .gmm import GmmModel, pairwise_l2_distance_diag
from .sinkhorn import DEFAULT_ITERS, TransportProblem, solve, solve_with_slack

__all__ = [
    "ClusterMatches",
    "Patch",
    "CorrespondenceSet",
    "residual_mass",
    "extended_marginals",
    "cluster_cost",
    "match_clusters",
    "build_patches",
    "match_points",
    "collect_correspondences",
    "TAU",
]

TAU = 0.1
MIN_POINT_WEIGHT = 1e-6


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Weighted (source index, target index) pairs."""

    source: np.ndarray
    target: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.source, dtype=np.int64).reshape(-1)
        t = np.asarray(self.target, dtype=np.int64).reshape(-1)
        w = np.asarray(self.weight, dtype=np.float64).reshape(-1)
        if not (s.shape == t.shape == w.shape):
            raise ValueError("source, target and weight must have equal length")
        if np.any(s < 0) or np.any(t < 0):
            raise ValueError("indices must be nonnegative")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "source", s)
        object.__setattr__(self, "target", t)
        object.__setattr__(self, "weight", w)

    def __len__(self):
        return self.source.shape[0]

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))

    @classmethod
    def from_pairs(cls, pairs):
        pairs = list(pairs)
        if not pairs:
            return cls.empty()
        s, t, w = zip(*pairs)
        return cls(s, t, w)

    def pairs(self):
        return list(zip(self.source.tolist(), self.target.tolist(), self.weight.tolist()))

    def scaled(self, factor):
        return CorrespondenceSet(self.source, self.target, self.weight * factor)

    def validate(self, n_source, n_target):
        if len(self) and (self.source.max() >= n_source or self.target.max() >= n_target):
            raise ValueError("correspondence index out of range")
        return self

    @staticmethod
    def merge(sets):
        """Union of several sets; duplicate (i, j) pairs are summed.

        Output is sorted by (source, target) so the result does not depend
        on the order of `sets`.
        """
        sets = [c for c in sets if len(c)]
        if not sets:
            return CorrespondenceSet.empty()
        s = np.concatenate([c.source for c in sets])
        t = np.concatenate([c.target for c in sets])
        w = np.concatenate([c.weight for c in sets])
        order = np.lexsort((w, t, s))
        s, t, w = s[order], t[order], w[order]
        keys = np.stack([s, t], axis=1)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        summed = np.zeros(len(uniq))
        np.add.at(summed, inverse.reshape(-1), w)
        return CorrespondenceSet(uniq[:, 0], uniq[:, 1], summed)


def residual_mass(weights_x, weights_y):
    """Mass of x's real components that y cannot absorb, index by index.

    Both vectors carry the outlier weight as their last entry; the real
    parts are compared after dividing by ``1 - outlier``. A shorter real part
    is padded with zeros.
    """
    wx = np.asarray(weights_x, dtype=np.float64)
    wy = np.asarray(weights_y, dtype=np.float64)
    ox, oy = wx[-1], wy[-1]
    if ox >= 1 - 1e-9 or oy >= 1 - 1e-9:
        raise DegenerateWeights("outlier weight leaves no mass for real components")
    rx, ry = wx[:-1] / (1.0 - ox), wy[:-1] / (1.0 - oy)
    n = max(len(rx), len(ry))
    rx = np.pad(rx, (0, n - len(rx)))
    ry = np.pad(ry, (0, n - len(ry)))
    return float(np.sum(np.maximum(rx - ry, 0.0)))


def extended_marginals(weights_x, weights_y):
    """Slack-extended marginal ``(pi_1..pi_{L-1}, r) / (1 + r - pi_L)`` for x."""
    wx = np.asarray(weights_x, dtype=np.float64)
    r = residual_mass(wx, weights_y)
    return np.append(wx[:-1], r) / (1.0 + r - wx[-1])


@dataclass(frozen=True, eq=False)
class ClusterMatches:
    """Retained component pairs plus the full slack-extended plan."""

    pairs: list
    plan: np.ndarray
    cost: np.ndarray
    row_marginals: np.ndarray
    col_marginals: np.ndarray
    source_components: np.ndarray
    target_components: np.ndarray
    threshold: float
    slack_cost: float

    def __len__(self):
        return len(self.pairs)


def _slack_marginals(model_x: GmmModel, model_y: GmmModel):
    """Extended marginal over x's active components plus the slack entry.

    Degenerate components leave the transport problem; their mass joins
    the outlier mass in the normalizer so the vector still sums to 1.
    """
    r = residual_mass(model_x.full_weights(), model_y.full_weights())
    w = model_x.weights[model_x.active]
    outlier = max(1.0 - w.sum(), 0.0)
    return np.append(w, r) / (1.0 + r - outlier)


def cluster_cost(model_s: GmmModel, model_t: GmmModel, normalized=False):
    """Feature-space Gaussian L2 distances between active components.

    With `normalized` each entry is divided by the sum of the two
    components' self-terms ``int N^2``, giving a scale-free value in [0, 1]:
    0 for identical components, close to 1 for non-overlapping ones.
    """
    act_s, act_t = model_s.active, model_t.active
    if model_s.feat_means is None or model_t.feat_means is None:
        raise ValueError("cluster matching needs feature-space components")
    vs, vt = model_s.feat_covs[act_s], model_t.feat_covs[act_t]
    D = pairwise_l2_distance_diag(model_s.feat_means[act_s], vs, model_t.feat_means[act_t], vt)
    if normalized:
        D = D / (_self_term(vs)[:, None] + _self_term(vt)[None, :])
    return D


def _self_term(variances):
    """int N(x; m, diag(v))^2 dx = N(0; 0, 2 diag(v)), per row."""
    d = variances.shape[1]
    return np.exp(-0.5 * (d * np.log(2 * np.pi) + np.sum(np.log(2 * variances), axis=1)))


def match_clusters(
    model_s: GmmModel,
    model_t: GmmModel,
    tau=TAU,
    slack_cost=None,
    epsilon=None,
    iters=DEFAULT_ITERS,
    threshold_mode="relative",
    cost=None,
    normalized_cost=False,
) -> ClusterMatches:
    """Partial optimal transport between the components of two mixtures.

    Pairs whose plan entry exceeds the threshold are kept, sorted by
    confidence. In ``relative`` mode the threshold is ``tau / L_eff`` with
    ``L_eff`` the larger active component count; ``raw`` uses ``tau``.
    A precomputed real-block `cost` over the active components may be passed.

    Residual masses compare the two full weight vectors index by index, so
    component j of one model is taken to correspond to component j of the
    other; a component absent from one side should keep its index with
    zero weight there.
    """
    act_s = model_s.active
    act_t = model_t.active
    if len(act_s) == 0 or len(act_t) == 0:
        raise NoMatches("a model has no active components")
    D = cluster_cost(model_s, model_t, normalized_cost) if cost is None else np.asarray(cost, float)
    z = float(np.median(D[np.isfinite(D)])) if slack_cost is None else float(slack_cost)
    a = _slack_marginals(model_s, model_t)
    b = _slack_marginals(model_t, model_s)
    # the two normalizers make both sides sum to 1 exactly in exact arithmetic
    b = b * (a.sum() / b.sum())
    result = solve_with_slack(D, a, b, z, epsilon, iters)
    plan = result.plan
    if threshold_mode == "relative":
        thr = tau / max(len(act_s), len(act_t))
    elif threshold_mode == "raw":
        thr = tau
    else:
        raise ValueError(f"unknown threshold mode {threshold_mode!r}")
    real = plan[:-1, :-1]
    ii, jj = np.nonzero(real > thr)
    conf = real[ii, jj]
    order = np.lexsort((jj, ii, -conf))
    pairs = [(int(act_s[i]), int(act_t[j]), float(c)) for i, j, c in zip(ii[order], jj[order], conf[order])]
    matches = ClusterMatches(pairs, plan, D, a, b, act_s, act_t, thr, z)
    if not pairs:
        err = NoMatches(f"no cluster pair above threshold {thr:.3g}")
        err.matches = matches
        raise err
    return matches


@dataclass(frozen=True, eq=False)
class Patch:
    component: int
    point_indices: np.ndarray
    sampled: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return len(self.sampled)


def _nearest_component(points, centroids):
    d2 = (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)  # first minimum -> lowest component index


def build_patches(cloud: PointCloud, model: GmmModel, S, K, seed=0):
    """Partition points by nearest active centroid and subsample each part.

    Patches larger than `K` keep `K` points drawn without replacement with
    probability proportional to the point's score for that component
    (weighted reservoir keys ``log(u) / w``). Returns one patch per
    component; degenerate components get empty patches.
    """
    S = np.asarray(S, dtype=np.float64)
    act = model.active
    owner = act[_nearest_component(cloud.points, model.coord_means[act])]
    patches = []
    for comp in range(model.n_components):
        members = np.flatnonzero(owner == comp)
        w = S[members, comp] if len(members) else np.zeros(0)
        if len(members) > K:
            rng = np.random.default_rng([int(seed), comp])
            u = rng.random(len(members))
            with np.errstate(divide="ignore"):
                keys = np.where(w > 0, np.log(u) / np.where(w > 0, w, 1.0), -np.inf)
            pick = np.sort(np.argsort(-keys, kind="stable")[:K])
            sampled, w = members[pick], w[pick]
        else:
            sampled = members
        total = w.sum()
        scores = w / total if total > 0 else np.full(len(sampled), 1.0 / max(len(sampled), 1))
        patches.append(Patch(comp, members, sampled, scores))
    return patches


def _unit_rows(F):
    norm = np.linalg.norm(F, axis=1, keepdims=True)
    return F / np.where(norm > 0, norm, 1.0)


def match_points(patch_s: Patch, patch_t: Patch, features_s, features_t, epsilon=None, iters=DEFAULT_ITERS):
    """Transport between two patches; each source row keeps its argmax column."""
    if len(patch_s) == 0 or len(patch_t) == 0:
        raise ValueError("patches must be non-empty")
    fs = _unit_rows(np.asarray(features_s, float)[patch_s.sampled])
    ft = _unit_rows(np.asarray(features_t, float)[patch_t.sampled])
    cost = np.sqrt(np.maximum(
        np.sum(fs**2, 1)[:, None] - 2.0 * fs @ ft.T + np.sum(ft**2, 1)[None, :], 0.0
    ))
    a = patch_s.scores / patch_s.scores.sum()
    b = patch_t.scores / patch_t.scores.sum()
    plan = solve(TransportProblem(cost, a, b, epsilon, iters)).plan
    best = np.argmax(plan, axis=1)
    w = plan[np.arange(len(best)), best]
    keep = w >= MIN_POINT_WEIGHT
    return CorrespondenceSet(patch_s.sampled[keep], patch_t.sampled[best[keep]], w[keep])


def collect_correspondences(
    cluster_matches,
    patches_s,
    patches_t,
    features_s,
    features_t,
    epsilon=None,
    iters=DEFAULT_ITERS,
):
    """Union of per-pair point matches, each scaled by its cluster confidence."""
    pairs = cluster_matches.pairs if isinstance(cluster_matches, ClusterMatches) else cluster_matches
    found = []
    for i, j, conf in pairs:
        ps, pt = patches_s[i], patches_t[j]
        if len(ps) == 0 or len(pt) == 0:
            continue
        found.append(match_points(ps, pt, features_s, features_t, epsilon, iters).scaled(conf))
    merged = CorrespondenceSet.merge(found)
    if len(merged) == 0:
        raise NoCorrespondences("matched patches produced no point correspondences")
    return merged
