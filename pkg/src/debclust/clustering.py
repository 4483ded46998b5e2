"""Deep-embedded-clustering objective.

Centroids are seeded by k-means on the initial embeddings; afterwards each
embedding gets a Student-t soft assignment ``Q`` over the centroids, a
sharpened and frequency-normalised target ``P`` is derived from ``Q``, and
``KL(P || Q)`` pulls the assignments towards the target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class ClusterState:
    centroids: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 2:
            raise ValueError(f"need a K x d centroid matrix with K >= 2, got {self.centroids.shape}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if len(np.unique(self.centroids, axis=0)) != len(self.centroids):
            raise ValueError("centroids must be pairwise distinct")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(x, x[chosen]).min(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.choice(np.setdiff1d(np.arange(n), chosen)))
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dists(x, x[idx:idx + 1])[:, 0])
    return x[chosen].copy()


def kmeans(x, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations from k-means++ seeds; returns ``(centroids, labels)``.

    Centroids come back sorted lexicographically by coordinate so the result
    does not depend on seeding order.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n < k:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    if len(np.unique(x, axis=0)) < k:
        raise ValueError(f"fewer than {k} distinct points")
    rng = np.random.default_rng(seed)
    centroids = _plusplus(x, k, rng)
    for _ in range(max_iter):
        d = _sq_dists(x, centroids)
        labels = d.argmin(axis=1)
        new = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
            else:
                far = int(d[np.arange(n), labels].argmax())
                new[j] = x[far]
                labels[far] = j
                d[far, :] = 0.0
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < tol:
            break
    order = np.lexsort(centroids.T[::-1])
    centroids = centroids[order]
    labels = _sq_dists(x, centroids).argmin(axis=1)
    return centroids, labels


def kmeans_init(embeddings, k: int, seed: int = 0, alpha: float = 1.0) -> ClusterState:
    centroids, _ = kmeans(embeddings, k, seed=seed)
    return ClusterState(centroids, alpha=alpha)


def soft_assign(embeddings, centroids, alpha: float = 1.0) -> Tensor:
    """Student-t kernel similarities of each row to each centroid, row-normalised.

    ``centroids`` may be a :class:`ClusterState`, an array, or a Tensor (to
    differentiate with respect to the centres).
    """
    if isinstance(centroids, ClusterState):
        centroids, alpha = centroids.centroids, centroids.alpha
    z = ad.as_tensor(embeddings)
    mu = ad.as_tensor(centroids)
    if z.ndim != 2 or mu.ndim != 2 or z.shape[1] != mu.shape[1]:
        raise ad.ShapeError("soft_assign", z.shape, mu.shape)
    n, d = z.shape
    k = mu.shape[0]
    diff = z.reshape(n, 1, d) - mu.reshape(1, k, d)
    sq = (diff * diff).sum(axis=2)
    kernel = (1.0 + sq / alpha) ** (-(alpha + 1.0) / 2.0)
    return kernel / kernel.sum(axis=1, keepdims=True)


def target_distribution(q) -> np.ndarray:
    """Square ``Q``, divide by cluster frequency, renormalise rows.  Carries no gradient."""
    q = q.data if isinstance(q, Tensor) else np.asarray(q, dtype=np.float64)
    freq = q.sum(axis=0)
    empty = np.flatnonzero(freq == 0)
    if empty.size:
        raise ValueError(f"cluster {int(empty[0])} has zero frequency")
    w = q**2 / freq
    return w / w.sum(axis=1, keepdims=True)


def kl_loss(p, q) -> Tensor:
    """``sum_ij p_ij log(p_ij / q_ij)`` with ``0 log 0 = 0``; differentiable in ``q``.

    Each cell is evaluated as ``p log(p/q) - p + q``, which is non-negative
    pointwise and sums to the same value when the rows of ``p`` and ``q``
    are distributions.  Cells are clamped at zero so rounding cannot push
    the total below zero when ``p`` and ``q`` nearly agree.
    """
    p = np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64)
    q = ad.as_tensor(q)
    if p.shape != q.shape:
        raise ad.ShapeError("kl_loss", p.shape, q.shape)
    support = p > 0
    if np.any(support & (q.data <= 0)):
        raise ValueError("q must be positive wherever p is positive")
    log_p = np.where(support, np.log(np.where(support, p, 1.0)), 0.0)
    q_safe = q + np.where(support, 0.0, (q.data <= 0).astype(np.float64))
    cells = p * (log_p - ad.log(q_safe)) + q - p
    return ad.maximum(cells, 0.0).sum()
