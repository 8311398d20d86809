"""Exact t-SNE: bandwidth search, objective descent, cluster preservation."""

import numpy as np
import pytest
from sklearn.metrics import silhouette_score

from fcdlif.errors import ConfigurationError
from fcdlif.tsne import (TsneConfig, conditional_probabilities,
                         row_entropies_bits, tsne_embed,
                         _pairwise_sq_distances)


@pytest.fixture(scope="module")
def two_clusters():
    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 1.0, size=(50, 8))
    b = rng.normal(0.0, 1.0, size=(50, 8))
    b[:, 0] += 10.0
    return np.vstack([a, b]), np.array([0] * 50 + [1] * 50)


class TestBandwidthSearch:
    def test_entropy_matches_target(self, two_clusters):
        features, _ = two_clusters
        d2 = _pairwise_sq_distances(features)
        p, _ = conditional_probabilities(d2, 30.0)
        entropies = row_entropies_bits(p)
        assert np.abs(entropies - np.log2(30.0)).max() < 1e-4

    def test_rows_are_stochastic(self, two_clusters):
        features, _ = two_clusters
        d2 = _pairwise_sq_distances(features)
        p, _ = conditional_probabilities(d2, 15.0)
        assert np.allclose(p.sum(axis=1), 1.0)
        assert np.all(np.diag(p) == 0.0)

    def test_duplicates_survive(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(20, 4))
        x[5] = x[3]  # exact duplicate
        d2 = _pairwise_sq_distances(x)
        p, _ = conditional_probabilities(d2, 8.0)
        assert np.all(np.isfinite(p))


class TestEmbedding:
    def test_clusters_stay_separable(self, two_clusters):
        features, labels = two_clusters
        coords, info = tsne_embed(features,
                                  TsneConfig(perplexity=30, iterations=500,
                                             seed=1))
        assert silhouette_score(coords, labels) > 0.5
        assert info["final_kl"] < info["initial_kl"]

    def test_deterministic_per_seed(self, two_clusters):
        features, _ = two_clusters
        config = TsneConfig(perplexity=25, iterations=200, seed=9)
        a, _ = tsne_embed(features, config)
        b, _ = tsne_embed(features, config)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self, two_clusters):
        features, _ = two_clusters
        a, _ = tsne_embed(features, TsneConfig(perplexity=25, iterations=50,
                                               seed=1))
        b, _ = tsne_embed(features, TsneConfig(perplexity=25, iterations=50,
                                               seed=2))
        assert not np.array_equal(a, b)


class TestValidation:
    def test_perplexity_must_be_below_point_count(self):
        features = np.random.default_rng(0).normal(size=(10, 3))
        with pytest.raises(ConfigurationError, match="perplexity"):
            tsne_embed(features, TsneConfig(perplexity=10, iterations=10))

    def test_needs_five_points(self):
        features = np.random.default_rng(0).normal(size=(4, 3))
        with pytest.raises(ConfigurationError, match="5"):
            tsne_embed(features, TsneConfig(perplexity=2, iterations=10))

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            TsneConfig(perplexity=0.5)
        with pytest.raises(ConfigurationError):
            TsneConfig(iterations=0)
