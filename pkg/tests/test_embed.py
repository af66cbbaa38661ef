import numpy as np
import pytest
from scipy.spatial.distance import pdist

from repsel.data import FeatureMatrix
from repsel.embed import KL_TAIL, EmbeddingConfig, embed, joint_probabilities, pca, tsne


def _clusters(seed=0, per=50, k=3, dim=30, spread=10.0):
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((k, dim)) * spread
    x = np.vstack([c + rng.standard_normal((per, dim)) for c in centers])
    return x, np.repeat(np.arange(k), per)


@pytest.fixture(scope="module")
def cluster_run():
    x, labels = _clusters()
    return tsne(x, EmbeddingConfig(target_dim=10, seed=0)), labels


# ---------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ValueError):
        EmbeddingConfig(method="umap")
    with pytest.raises(ValueError):
        EmbeddingConfig(target_dim=0)
    with pytest.raises(ValueError):
        EmbeddingConfig(perplexity=0)
    with pytest.raises(ValueError):
        EmbeddingConfig(iterations=0)
    assert EmbeddingConfig(early_exaggeration=("4", "10")).early_exaggeration == (4.0, 10)


# ---------------------------------------------------------------- pca

def test_pca_subspace_data_reconstructs_exactly(rng):
    basis = np.linalg.qr(rng.standard_normal((8, 3)))[0]
    x = (basis @ rng.standard_normal((3, 40))).T + 2.0
    y = pca(x, 3)
    xc = x - x.mean(axis=0)
    # projection onto the fitted directions loses nothing
    recon = y @ (np.linalg.pinv(y) @ xc)
    assert np.max(np.abs(recon - xc)) <= 1e-9
    assert np.allclose(pdist(y), pdist(x), atol=1e-9)


def test_pca_full_dim_preserves_distances(rng):
    x = rng.standard_normal((25, 6))
    assert np.max(np.abs(pdist(pca(x, 6)) - pdist(x))) <= 1e-9


def test_pca_sign_convention_and_determinism(rng):
    x = rng.standard_normal((30, 5))
    a = pca(x, 3)
    assert np.array_equal(a, pca(x, 3))
    # flipping the data flips the scores but the directions keep their sign rule
    assert np.allclose(pca(-x, 3), -a, atol=1e-12)


def test_pca_errors():
    with pytest.raises(ValueError):
        pca(np.ones((5, 3)), 4)
    with pytest.raises(ValueError):
        pca(np.ones((2, 3)), 3)


def test_embed_passes_metadata_through(rng):
    m = FeatureMatrix(rng.standard_normal((6, 12)), tuple("abcdefghijkl"), np.arange(12) % 2, np.arange(12))
    out = embed(m, EmbeddingConfig(method="pca", target_dim=2))
    assert out.d == 2 and out.n == 12
    assert out.image_ids == m.image_ids
    assert np.array_equal(out.camera_ids, m.camera_ids)
    assert np.array_equal(out.true_labels, m.true_labels)


# ---------------------------------------------------------------- affinities

def test_joint_probabilities_valid(rng):
    p = joint_probabilities(rng.standard_normal((40, 5)), 10.0)
    assert np.max(np.abs(p - p.T)) <= 1e-15
    assert p.min() >= 0
    assert abs(p.sum() - 1.0) <= 1e-9
    assert np.all(np.diag(p) == 0)


def test_joint_probabilities_equidistant_points_uniform():
    n = 7
    p = joint_probabilities(np.eye(n), 3.0)
    off = ~np.eye(n, dtype=bool)
    assert np.allclose(p[off], 1.0 / (n * (n - 1)), atol=1e-12)


# ---------------------------------------------------------------- tsne

def test_tsne_too_few_points():
    with pytest.raises(ValueError, match="at least 91"):
        tsne(np.ones((50, 5)), EmbeddingConfig(perplexity=30))
    with pytest.raises(ValueError, match="feature dimension"):
        embed(FeatureMatrix(np.ones((5, 200))), EmbeddingConfig(target_dim=5))


def test_tsne_separates_clusters(cluster_run):
    res, labels = cluster_run
    y = res.embedding
    assert y.shape == (150, 10)
    dist = np.sqrt(((y[:, None] - y[None]) ** 2).sum(-1))
    same = np.equal.outer(labels, labels) & ~np.eye(150, dtype=bool)
    diff = ~np.equal.outer(labels, labels)
    assert dist[same].mean() < dist[diff].mean()


def test_tsne_kl_non_increasing_tail(cluster_run):
    res, _ = cluster_run
    tail = [v for _, v in res.kl_trace[-KL_TAIL:]]
    assert len(tail) == KL_TAIL
    assert all(b <= a + 1e-6 for a, b in zip(tail, tail[1:]))
    assert res.kl_trace[-1][0] == 1000


def test_tsne_reproducible_bitwise():
    x, _ = _clusters(seed=4, per=12, dim=8)
    cfg = EmbeddingConfig(target_dim=2, perplexity=5, iterations=300, seed=3)
    a = tsne(x, cfg).embedding
    b = tsne(x, cfg).embedding
    assert a.tobytes() == b.tobytes()
    c = tsne(x, EmbeddingConfig(target_dim=2, perplexity=5, iterations=300, seed=4)).embedding
    assert not np.array_equal(a, c)
