"""Low-dimensional embedding of pool features before selection.

``tsne`` is exact (O(n^2)) t-SNE: Gaussian input affinities calibrated to a
target perplexity, Student-t output kernel, gradient descent with momentum,
per-coordinate gains and early exaggeration. ``pca`` is a deterministic
fallback.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from repsel.data import FeatureMatrix

KL_EVERY = 50
KL_TAIL = 50


@dataclass(frozen=True)
class EmbeddingConfig:
    method: str = "tsne"
    target_dim: int = 10
    perplexity: float = 30.0
    iterations: int = 1000
    early_exaggeration: tuple = (12.0, 250)
    learning_rate: float | None = None   # None: max(n / exaggeration / 4, 50)
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("tsne", "pca"):
            raise ValueError(f"embedding method must be 'tsne' or 'pca', got {self.method!r}")
        if self.target_dim < 1:
            raise ValueError("target_dim must be >= 1")
        if self.perplexity <= 0:
            raise ValueError("perplexity must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        factor, duration = self.early_exaggeration
        object.__setattr__(self, "early_exaggeration", (float(factor), int(duration)))


@dataclass
class TSNEResult:
    embedding: np.ndarray     # (n, target_dim)
    p: np.ndarray             # joint input affinities
    kl_trace: list            # (iteration, KL(P || Q)) pairs


def embed(m: FeatureMatrix, cfg: EmbeddingConfig = EmbeddingConfig()) -> FeatureMatrix:
    """Project the columns of ``m`` to ``cfg.target_dim`` dimensions."""
    x = m.data.T
    if cfg.method == "pca":
        return m.with_data(pca(x, cfg.target_dim).T)
    if cfg.target_dim >= m.d:
        raise ValueError(f"target_dim ({cfg.target_dim}) must be below the feature dimension ({m.d})")
    return m.with_data(tsne(x, cfg).embedding.T)


def pca(x: np.ndarray, target_dim: int) -> np.ndarray:
    """Project rows of ``x`` onto the top principal directions.

    Each direction's sign is fixed so its largest-magnitude loading is
    positive.
    """
    n, d = x.shape
    if target_dim > d:
        raise ValueError(f"target_dim ({target_dim}) exceeds feature dimension ({d})")
    if n < target_dim:
        raise ValueError(f"pca needs at least target_dim={target_dim} samples, got {n}")
    xc = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(xc, full_matrices=True)
    comps = vt[:target_dim].copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(target_dim), pivot])
    signs[signs == 0] = 1.0
    comps *= signs[:, None]
    return xc @ comps.T


def _sq_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    dist = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(dist, 0.0, out=dist)
    np.fill_diagonal(dist, 0.0)
    return dist


def joint_probabilities(x: np.ndarray, perplexity: float, tol: float = 1e-5, max_steps: int = 100) -> np.ndarray:
    """Symmetric input affinities ``P`` with each conditional row matched to ``perplexity``."""
    n = x.shape[0]
    dist = _sq_distances(x)
    target = np.log(perplexity)
    cond = np.zeros((n, n))
    for i in range(n):
        di = np.delete(dist[i], i)
        beta, lo, hi = 1.0, -np.inf, np.inf
        for _ in range(max_steps):
            w = np.exp(-(di - di.min()) * beta)
            s = w.sum()
            entropy = np.log(s) + beta * np.sum((di - di.min()) * w) / s
            diff = entropy - target
            if abs(diff) < tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = beta / 2.0 if lo == -np.inf else 0.5 * (beta + lo)
        cond[i, np.arange(n) != i] = w / s
    p = cond + cond.T
    return p / p.sum()


def tsne(x: np.ndarray, cfg: EmbeddingConfig) -> TSNEResult:
    """Exact t-SNE on the rows of ``x``.

    The KL divergence (against the unexaggerated ``P``) is recorded every
    ``KL_EVERY`` iterations and at each of the final ``KL_TAIL`` positions.
    """
    n = x.shape[0]
    min_n = int(np.floor(3 * cfg.perplexity)) + 1
    if n < min_n:
        raise ValueError(f"t-SNE with perplexity {cfg.perplexity} needs at least {min_n} samples, got {n}")

    p = joint_probabilities(x, cfg.perplexity)
    pos = p > 0
    p_pos = p[pos]
    p_entropy = float(np.sum(p_pos * np.log(p_pos)))
    factor, duration = cfg.early_exaggeration
    p_exag = p * factor
    lr = cfg.learning_rate if cfg.learning_rate is not None else max(n / factor / 4.0, 50.0)

    def kl(num, total):
        # KL(P||Q) with q_ij = num_ij / total and log(1 + dist_ij) = -log(num_ij)
        return p_entropy - float(np.sum(p_pos * np.log(num[pos]))) + float(np.log(total))

    rng = np.random.default_rng(cfg.seed)
    y = 1e-4 * rng.standard_normal((n, cfg.target_dim))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    trace = []
    iters = cfg.iterations
    for it in range(iters + 1):
        # num_ij = 1 / (1 + ||y_i - y_j||^2), zero on the diagonal; one product
        # [y, 1, |y|^2] [-2y, |y|^2 + 1, 1]^T yields 1 + ||y_i - y_j||^2
        sq = np.sum(y * y, axis=1)[:, None]
        ones = np.ones_like(sq)
        num = np.hstack([y, ones, sq]) @ np.hstack([-2.0 * y, sq + 1.0, ones]).T
        np.reciprocal(num, out=num)
        np.fill_diagonal(num, 0.0)
        total = num.sum()
        if it % KL_EVERY == 0 or it >= iters - KL_TAIL:
            trace.append((it, kl(num, total)))
        if it == iters:
            break
        exaggerated = it < duration
        momentum = 0.5 if exaggerated else 0.8

        coef = num * (-1.0 / total)
        coef += p_exag if exaggerated else p
        coef *= num
        # grad_i = 4 sum_j coef_ij (y_i - y_j); one product gives coef @ y and the row sums
        prod = coef @ np.hstack([y, ones])
        grad = prod[:, -1:] * y
        grad -= prod[:, :-1]
        grad *= 4.0

        same = np.sign(grad) == np.sign(velocity)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        velocity = momentum * velocity - lr * gains * grad
        y = y + velocity
        y -= y.mean(axis=0)
    return TSNEResult(embedding=y, p=p, kl_trace=trace)
