"""Debiased contrastive loss with a smoothing exponent on the negative term.

For a batch of ``N`` samples with two views each, every anchor
``z_i^(k)`` is compared with the ``2N - 2`` views of the other samples.
The per-view negative mean ``S_i^(k)`` is corrected for false negatives with
the positive-class prior ``tau_plus`` and clamped from below at
``exp(-1/tau)``; the two clamped terms are summed into ``D_i`` and the
per-sample loss is

    -2 log( e^{s_i/tau} / (e^{s_i/tau} + (1 + D_i)^lam) )

with ``s_i`` the cosine similarity of the positive pair.  The batch loss is
the per-sample sum divided by ``2N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.5
    tau_plus: float = 0.1
    lam: float = 2.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not 0 <= self.tau_plus < 1:
            raise ValueError(f"tau_plus must be in [0, 1), got {self.tau_plus}")
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")


@dataclass(frozen=True)
class ViewBatch:
    """Row ``i`` of ``z1`` and row ``i`` of ``z2`` are the two views of sample ``i``.

    Either member may be a :class:`Tensor` so gradients flow back to it.
    """

    z1: Tensor | np.ndarray
    z2: Tensor | np.ndarray

    def __post_init__(self):
        a, b = _value(self.z1), _value(self.z2)
        if a.ndim != 2 or a.shape != b.shape:
            raise ad.ShapeError("ViewBatch", a.shape, b.shape)
        if a.shape[0] < 2:
            raise ValueError(f"need at least 2 samples per batch, got {a.shape[0]}")
        if np.any(np.linalg.norm(a, axis=1) == 0) or np.any(np.linalg.norm(b, axis=1) == 0):
            raise ValueError("zero-norm representation in batch")

    @property
    def n(self) -> int:
        return _value(self.z1).shape[0]


def _value(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(a @ b / (na * nb))


def _negative_mask(n: int) -> np.ndarray:
    idx = np.arange(2 * n) % n
    return (idx[:, None] != idx[None, :]).astype(np.float64)


@dataclass(frozen=True)
class _Terms:
    neg_mean: Tensor    # (2N,), rows [view-1 anchors; view-2 anchors]
    pos_sim: Tensor     # (N,)
    clamped: Tensor     # (2N,)
    distance: Tensor    # (N,)
    losses: Tensor      # (N,)


def _terms(batch: ViewBatch, cfg: ContrastiveConfig) -> _Terms:
    n = batch.n
    z = ad.concat([batch.z1, batch.z2], axis=0)
    u = z / (z * z).sum(axis=1, keepdims=True) ** 0.5
    sims = u @ u.T
    neg = (ad.exp(sims / cfg.tau) * _negative_mask(n)).sum(axis=1) / (2 * n - 2)
    pos = (u[:n] * u[n:]).sum(axis=1)
    pos_exp = ad.exp(pos / cfg.tau)
    unclamped = (neg - cfg.tau_plus * ad.concat([pos_exp, pos_exp])) / (1.0 - cfg.tau_plus)
    clamped = ad.maximum(unclamped, math.exp(-1.0 / cfg.tau))
    dist = clamped[:n] + clamped[n:]
    losses = 2.0 * (ad.log(pos_exp + (1.0 + dist) ** cfg.lam) - pos / cfg.tau)
    return _Terms(neg, pos, clamped, dist, losses)


def neg_mean(batch: ViewBatch, i: int, k: int, cfg: ContrastiveConfig) -> float:
    """Mean of ``exp(sim/tau)`` between view ``k`` (1 or 2) of sample ``i`` and all other samples."""
    if k not in (1, 2):
        raise ValueError(f"view must be 1 or 2, got {k}")
    return float(_terms(batch, cfg).neg_mean.data[(k - 1) * batch.n + i])


def debiased_distance(batch: ViewBatch, i: int, cfg: ContrastiveConfig) -> float:
    return float(_terms(batch, cfg).distance.data[i])


def sample_loss(batch: ViewBatch, i: int, cfg: ContrastiveConfig) -> Tensor:
    return _terms(batch, cfg).losses[i]


def sample_losses(batch: ViewBatch, cfg: ContrastiveConfig) -> Tensor:
    return _terms(batch, cfg).losses


def batch_loss(batch: ViewBatch, cfg: ContrastiveConfig) -> Tensor:
    losses = _terms(batch, cfg).losses
    return losses.sum() / (2 * batch.n)


def clamp_margins(batch: ViewBatch, cfg: ContrastiveConfig) -> np.ndarray:
    """Signed distance of every unclamped per-view term from the clamp floor."""
    t = _terms(batch, cfg)
    pos_exp = np.exp(t.pos_sim.data / cfg.tau)
    unclamped = (t.neg_mean.data - cfg.tau_plus * np.concatenate([pos_exp, pos_exp])) / (1 - cfg.tau_plus)
    return unclamped - math.exp(-1.0 / cfg.tau)


def loss_oracle_scalar(batch: ViewBatch, cfg: ContrastiveConfig) -> float:
    """Plain-loop evaluation of the batch loss, sharing no code with :func:`batch_loss`."""
    z1 = [list(map(float, row)) for row in _value(batch.z1)]
    z2 = [list(map(float, row)) for row in _value(batch.z2)]
    n = len(z1)
    views = (z1, z2)

    def cos(a, b):
        dot = sum(x * y for x, y in zip(a, b))
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(y * y for y in b))
        return dot / (na * nb)

    total = 0.0
    for i in range(n):
        s_pos = cos(z1[i], z2[i])
        e_pos = math.exp(s_pos / cfg.tau)
        d = 0.0
        for k in range(2):
            anchor = views[k][i]
            acc = 0.0
            count = 0
            for j in range(n):
                if j == i:
                    continue
                for other in views:
                    acc += math.exp(cos(anchor, other[j]) / cfg.tau)
                    count += 1
            s = acc / count
            d += max(math.exp(-1.0 / cfg.tau), (s - cfg.tau_plus * e_pos) / (1.0 - cfg.tau_plus))
        total += -2.0 * math.log(e_pos / (e_pos + (1.0 + d) ** cfg.lam))
    return total / (2 * n)
