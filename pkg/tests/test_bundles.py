import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from bundle_unmix.bundles import BundleConfig, BundleError, aeb_extract, cluster_candidates, vca
from bundle_unmix.data import validate_groups


def simplex_data(k=3, w=20, n_interior=200, seed=0):
    rng = np.random.default_rng(seed)
    V = rng.uniform(0.1, 1.0, size=(w, k))
    mix = rng.dirichlet(np.ones(k), size=n_interior).T
    X = np.concatenate([V, V @ mix], axis=1)
    perm = rng.permutation(X.shape[1])
    return V, X[:, perm]


def planted_vertex_scene(k=3, w=30, pure_per_vertex=20, n_mixed=300, seed=1):
    """Well separated vertices, each with a cloud of near-pure pixels."""
    rng = np.random.default_rng(seed)
    V = np.zeros((w, k))
    for l in range(k):
        V[:, l] = 0.1 + np.exp(-0.5 * ((np.arange(w) - (l + 0.5) * w / k) / 3.0) ** 2)
    pure = np.concatenate([V[:, [l]] * rng.uniform(0.97, 1.03, size=(1, pure_per_vertex)) for l in range(k)], axis=1)
    mix = rng.dirichlet(np.full(k, 0.7), size=n_mixed).T
    X = np.concatenate([pure, V @ mix], axis=1)
    return V, X[:, rng.permutation(X.shape[1])]


def nearest_vertex(C, V):
    Cn = C / np.linalg.norm(C, axis=0)
    Vn = V / np.linalg.norm(V, axis=0)
    return np.argmax(Vn.T @ Cn, axis=0)


class TestVCA:
    def test_finds_simplex_vertices(self):
        V, X = simplex_data()
        E, idx = vca(X, 3, seed=5)
        got = {tuple(np.round(E[:, j], 12)) for j in range(3)}
        want = {tuple(np.round(V[:, j], 12)) for j in range(3)}
        assert got == want
        np.testing.assert_array_equal(E, X[:, idx])

    @pytest.mark.parametrize("seed", range(5))
    def test_vertices_any_seed(self, seed):
        V, X = simplex_data(k=4, seed=seed)
        _, idx = vca(X, 4, seed=seed)
        assert len(set(idx.tolist())) == 4
        for j in idx:
            assert np.min(np.abs(V - X[:, [j]]).sum(axis=0)) < 1e-12

    def test_k1_brute_force(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(size=(8, 30))
        u1 = np.linalg.svd(X, full_matrices=False)[0][:, 0]
        best = int(np.argmax(np.abs(u1 @ X)))
        E, idx = vca(X, 1, seed=11)
        assert idx.tolist() == [best]

    def test_too_few_pixels(self):
        with pytest.raises(BundleError):
            vca(np.ones((5, 2)), 3)

    def test_zero_data(self):
        with pytest.raises(BundleError):
            vca(np.zeros((5, 10)), 2)


class TestClustering:
    def test_tight_clusters(self):
        rng = np.random.default_rng(0)
        centers = rng.uniform(0.1, 1, size=(15, 4))
        planted = np.repeat(np.arange(4), 6)
        C = centers[:, planted] + rng.normal(scale=1e-4, size=(15, planted.size))
        shuffle = rng.permutation(planted.size)
        labels = cluster_candidates(C[:, shuffle], 4, seed=3)
        assert adjusted_rand_score(planted[shuffle], labels) == 1.0
        assert labels[0] == 0

    def test_k_points(self):
        C = np.eye(3)
        assert sorted(cluster_candidates(C, 3).tolist()) == [0, 1, 2]


class TestAEB:
    def test_single_subset_is_vca(self):
        V, X = simplex_data()
        B, g = aeb_extract(X, BundleConfig(k=3, num_subsets=1, subset_fraction=1.0, seed=0))
        assert g.sizes == (1, 1, 1)
        assert {tuple(np.round(c, 12)) for c in B.T} == {tuple(np.round(c, 12)) for c in V.T}

    def test_planted_groups(self):
        V, X = planted_vertex_scene()
        cfg = BundleConfig(k=3, num_subsets=10, subset_fraction=0.2, seed=4)
        B, g = aeb_extract(X, cfg)
        validate_groups(g, B)
        assert g.r == 30
        assert adjusted_rand_score(nearest_vertex(B, V), g.labels()) == 1.0

    def test_deterministic(self):
        _, X = planted_vertex_scene()
        cfg = BundleConfig(k=3, num_subsets=5, subset_fraction=0.3, seed=9)
        B1, g1 = aeb_extract(X, cfg)
        B2, g2 = aeb_extract(X, cfg)
        assert B1.tobytes() == B2.tobytes()
        assert g1 == g2

    @pytest.mark.parametrize("kw", [dict(k=0), dict(k=2, num_subsets=0), dict(k=2, subset_fraction=0.0), dict(k=2, subset_fraction=1.5)])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            BundleConfig(**kw)
