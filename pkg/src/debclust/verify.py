"""Seeded gradient-check suites comparing reverse-mode gradients with central differences.

The numerical side uses Richardson-extrapolated central differences so that
the ``h**2`` truncation error does not swamp small but correct gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .clustering import kl_loss, soft_assign, target_distribution
from .contrastive import ContrastiveConfig, ViewBatch, batch_loss, clamp_margins
from .encoder import MixerConfig, MLPConfig, encode, init_params, project
from .gradcheck import relative_error, richardson_grad

KINK_MARGIN = 1e-3


@dataclass(frozen=True)
class SuiteResult:
    name: str
    instances: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _check(loss_fn, values: dict[str, np.ndarray], h: float) -> float:
    """Worst relative error over every named input of ``loss_fn``."""
    leaves = {k: Tensor(v, requires_grad=True) for k, v in values.items()}
    gm = ad.backward(loss_fn(leaves))
    worst = 0.0
    for name, leaf in leaves.items():
        def f(x, name=name):
            return loss_fn({**values, name: x}).item()

        worst = max(worst, relative_error(gm[leaf], richardson_grad(f, values[name], h)))
    return worst


def _random_cfg(rng) -> ContrastiveConfig:
    return ContrastiveConfig(tau=float(rng.uniform(0.2, 1.0)), tau_plus=float(rng.uniform(0.0, 0.3)),
                             lam=float(rng.uniform(0.0, 5.0)))


def contrastive_suite(instances: int = 100, h: float = 1e-4, tol: float = 1e-5, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        while True:
            n, d = int(rng.integers(2, 9)), int(rng.integers(2, 17))
            cfg = _random_cfg(rng)
            z1, z2 = rng.standard_normal((n, d)), rng.standard_normal((n, d))
            if np.abs(clamp_margins(ViewBatch(z1, z2), cfg)).min() > KINK_MARGIN:
                break
        worst = max(worst, _check(lambda v: batch_loss(ViewBatch(v["z1"], v["z2"]), cfg), {"z1": z1, "z2": z2}, h))
    return SuiteResult("contrastive (batch loss wrt both views)", instances, worst, tol)


def clustering_suite(instances: int = 100, h: float = 1e-4, tol: float = 1e-5, seed: int = 1) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n, d, k = int(rng.integers(2, 9)), int(rng.integers(2, 17)), int(rng.integers(2, 6))
        z = rng.standard_normal((n, d))
        mu = rng.standard_normal((k, d))
        alpha = 1.0 if rng.random() < 0.5 else float(rng.uniform(0.5, 3.0))
        p = target_distribution(soft_assign(z, mu, alpha))
        worst = max(worst, _check(lambda v: kl_loss(p, soft_assign(v["z"], v["mu"], alpha)), {"z": z, "mu": mu}, h))
    return SuiteResult("clustering (KL wrt embeddings and centroids)", instances, worst, tol)


def _tiny_encoder(rng, i):
    if i % 2 == 0:
        return MLPConfig(in_dim=int(rng.integers(2, 6)), hidden=(int(rng.integers(2, 6)),),
                         head_hidden=int(rng.integers(2, 6)), embed_dim=int(rng.integers(2, 5)))
    return MixerConfig(in_channels=int(rng.integers(1, 3)), patch_size=2, depth=1,
                       channels=int(rng.integers(2, 4)), dw_kernel=3, dropout_rate=0.25,
                       head_hidden=3, embed_dim=3)


def _sample_input(rng, cfg, n):
    if isinstance(cfg, MLPConfig):
        return rng.standard_normal((n, cfg.in_dim))
    return rng.standard_normal((n, cfg.in_channels, 4, 4))


def _joint_loss(v, x1, x2, cfg, ccfg, gamma, mask_seed, target):
    w = {k: val for k, val in v.items() if k != "centroids"}
    e1 = encode(x1, w, cfg, "train", mask_seed)
    e2 = encode(x2, w, cfg, "train", mask_seed + 1)
    batch = ViewBatch(project(e1, w, cfg), project(e2, w, cfg))
    return batch_loss(batch, ccfg) + gamma * kl_loss(target, soft_assign(e1, v["centroids"]))


def encoder_suite(instances: int = 100, h: float = 1e-4, tol: float = 1e-5, seed: int = 2) -> SuiteResult:
    """Joint objective (contrastive on projected views + KL on embeddings) wrt every weight and centroid.

    Instances alternate between the MLP encoder and a one-block mixer run in
    train mode with fixed dropout masks; the KL target is held fixed.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(instances):
        while True:
            cfg = _tiny_encoder(rng, i)
            n = int(rng.integers(2, 5))
            ccfg = _random_cfg(rng)
            gamma = float(rng.uniform(0.1, 5.0))
            params = init_params(cfg, seed=int(rng.integers(1 << 31))).weights
            x1, x2 = _sample_input(rng, cfg, n), _sample_input(rng, cfg, n)
            centroids = rng.standard_normal((2, cfg.embedding_dim))
            mask_seed = int(rng.integers(1 << 31))
            e1 = encode(x1, params, cfg, "train", mask_seed)
            e2 = encode(x2, params, cfg, "train", mask_seed + 1)
            batch = ViewBatch(project(e1, params, cfg), project(e2, params, cfg))
            if np.abs(clamp_margins(batch, ccfg)).min() > KINK_MARGIN:
                break
        target = target_distribution(soft_assign(e1, centroids))
        values = {**params, "centroids": centroids}
        worst = max(worst, _check(
            lambda v: _joint_loss(v, x1, x2, cfg, ccfg, gamma, mask_seed, target), values, h))
    return SuiteResult("encoder + head + centroids (joint objective)", instances, worst, tol)


def run_all(instances: int = 100, h: float = 1e-4, tol: float = 1e-5) -> list[SuiteResult]:
    return [contrastive_suite(instances, h, tol), clustering_suite(instances, h, tol), encoder_suite(instances, h, tol)]
