"""Joint training: contrastive loss on projected views plus weighted KL clustering loss."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import container
from .autodiff import Tensor
from .clustering import kl_loss, kmeans_init, soft_assign, target_distribution
from .contrastive import ContrastiveConfig, ViewBatch, batch_loss
from .data import AugmentConfig, Dataset, augment_image, augment_vector
from .encoder import EncoderConfig, EncoderParams, encode, init_params, project, update_running_stats

CENTROIDS = "centroids"
HISTORY_HEADER = ("epoch", "contrastive_loss", "clustering_loss", "total_loss", "wall_seconds")


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-6
    eps: float = 1e-8


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    config: AdamConfig = field(default_factory=AdamConfig)

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray], config: AdamConfig | None = None) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0, config or AdamConfig())


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              no_decay: Sequence[str] = ()) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam with decoupled weight decay (``p -= lr * wd * p`` first)."""
    cfg = state.config
    t = state.t + 1
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ad.ShapeError(f"adam_step[{name}]", p.shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if cfg.weight_decay and name not in no_decay:
            p = p - cfg.lr * cfg.weight_decay * p
        m = cfg.beta1 * state.m[name] + (1 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1**t)
        v_hat = v / (1 - cfg.beta2**t)
        new_p[name] = p - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        new_m[name], new_v[name] = m, v
    return new_p, AdamState(new_m, new_v, t, cfg)


def mtl_loss(contrastive, clustering, gamma: float):
    """Total objective ``contrastive + gamma * clustering`` (floats or Tensors)."""
    return contrastive + gamma * clustering


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 5.0
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    target_refresh: str = "step"
    kl_reduction: str = "mean"
    cluster_on_view1: bool = False
    checkpoint_every: int = 0
    vector_noise: float = 1.0
    vector_drop: float = 0.1
    log_wall_time: bool = False

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.target_refresh not in ("step", "epoch"):
            raise ValueError(f"target_refresh must be 'step' or 'epoch', got {self.target_refresh!r}")
        if self.kl_reduction not in ("mean", "sum"):
            raise ValueError(f"kl_reduction must be 'mean' or 'sum', got {self.kl_reduction!r}")


@dataclass
class Model:
    config: EncoderConfig
    params: EncoderParams
    centroids: np.ndarray | None = None
    alpha: float = 1.0

    def trainable(self) -> dict[str, np.ndarray]:
        if self.centroids is None:
            raise ValueError("cluster centroids are not initialised")
        return {**self.params.weights, CENTROIDS: self.centroids}


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def make_views(x: np.ndarray, ids: Sequence[int], epoch: int, cfg: TrainConfig,
               ds: Dataset | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Two augmented views per sample; each view's seed depends only on (seed, epoch, sample, view)."""
    views = []
    for k in (1, 2):
        out = []
        for row, idx in zip(x, ids):
            s = derive_seed(cfg.seed, epoch, idx, k)
            if row.ndim == 3:
                img = ds.unstandardize(row) if ds is not None else row
                aug = augment_image(img, cfg.augment, s)
                out.append(ds.standardize(aug) if ds is not None else aug)
            else:
                out.append(augment_vector(row, cfg.vector_noise, cfg.vector_drop, s))
        views.append(np.stack(out))
    return views[0], views[1]


@dataclass
class StepResult:
    contrastive: float
    clustering: float
    total: float
    grads: dict[str, np.ndarray]
    model: Model
    adam: AdamState


def _forward_losses(model, weights, centroids, x, v1, v2, cfg, mask_seed, target, stats):
    enc = model.config
    z1 = project(encode(v1, weights, enc, "train", derive_seed(mask_seed, 1)), weights, enc)
    z2 = project(encode(v2, weights, enc, "train", derive_seed(mask_seed, 2)), weights, enc)
    contrastive = batch_loss(ViewBatch(z1, z2), cfg.contrastive)
    plain = v1 if cfg.cluster_on_view1 else x
    emb = encode(plain, weights, enc, "train", derive_seed(mask_seed, 0), stats=stats)
    q = soft_assign(emb, centroids, model.alpha)
    p = target_distribution(q) if target is None else target
    clustering = kl_loss(p, q)
    if cfg.kl_reduction == "mean":
        clustering = clustering / len(x)
    return contrastive, clustering, mtl_loss(contrastive, clustering, cfg.gamma)


def train_step(model: Model, x: np.ndarray, views: tuple[np.ndarray, np.ndarray], cfg: TrainConfig,
               adam: AdamState, mask_seed: int = 0, target: np.ndarray | None = None,
               dry_run: bool = False) -> StepResult:
    """One optimisation step on a batch.

    ``views`` holds the two augmented copies of ``x``; the clustering branch
    sees ``x`` itself.  The KL term is divided by the batch size unless
    ``cfg.kl_reduction`` is ``"sum"``, so ``gamma`` does not scale with it.
    The target distribution is recomputed from the batch assignments unless
    ``target`` supplies it, and never carries gradient.  With ``dry_run`` the losses and gradients are returned but
    nothing is updated.
    """
    if len(x) < 2:
        raise ValueError(f"batch must contain at least 2 samples, got {len(x)}")
    trainable = model.trainable()
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in trainable.items()}
    weights = {k: t for k, t in leaves.items() if k != CENTROIDS}
    stats: dict = {}
    c_loss, k_loss, total = _forward_losses(model, weights, leaves[CENTROIDS], x, views[0], views[1],
                                            cfg, mask_seed, target, stats)
    gm = ad.backward(total)
    grads = {k: gm[t] for k, t in leaves.items()}
    result = StepResult(c_loss.item(), k_loss.item(), total.item(), grads, model, adam)
    if dry_run:
        return result
    new_params, new_adam = adam_step(trainable, grads, adam, no_decay=(CENTROIDS,))
    centroids = new_params.pop(CENTROIDS)
    buffers = dict(model.params.buffers)
    momentum = getattr(model.config, "bn_momentum", 0.1)
    update_running_stats(buffers, stats, momentum)
    result.model = Model(model.config, EncoderParams(new_params, buffers), centroids, model.alpha)
    result.adam = new_adam
    return result


def embed(model: Model, samples: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode embeddings (pre-projection) for a sample array."""
    out = [encode(samples[i:i + batch_size], model.params.weights, model.config, "eval",
                  buffers=model.params.buffers).data
           for i in range(0, len(samples), batch_size)]
    if not out:
        return np.zeros((0, model.config.embedding_dim))
    return np.concatenate(out)


def config_hash(*configs) -> str:
    blob = json.dumps([_jsonable(c) for c in configs], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        d = asdict(obj)
        kind = getattr(obj, "kind", None)
        return {"kind": kind, **d} if kind else d
    return obj


@dataclass
class Checkpoint:
    model: Model
    adam: AdamState
    epoch: int
    config_hash: str

    def to_tensors(self) -> dict[str, np.ndarray]:
        t: dict[str, np.ndarray] = {}
        for k, v in self.model.params.weights.items():
            t[f"param/{k}"] = v
        for k, v in self.model.params.buffers.items():
            t[f"buffer/{k}"] = v
        if self.model.centroids is not None:
            t[CENTROIDS] = self.model.centroids
        for k in self.adam.m:
            t[f"adam.m/{k}"] = self.adam.m[k]
            t[f"adam.v/{k}"] = self.adam.v[k]
        t["adam.t"] = np.array(float(self.adam.t))
        t["epoch"] = np.array(float(self.epoch))
        t["alpha"] = np.array(float(self.model.alpha))
        t["config_sha256"] = np.frombuffer(bytes.fromhex(self.config_hash), dtype=np.uint8).astype(np.float64)
        return t

    def save(self, path) -> None:
        container.save(path, self.to_tensors())

    @classmethod
    def from_tensors(cls, t: Mapping[str, np.ndarray], encoder: EncoderConfig,
                     adam_config: AdamConfig | None = None) -> "Checkpoint":
        def section(prefix):
            return {k[len(prefix):]: v for k, v in t.items() if k.startswith(prefix)}

        params = EncoderParams(section("param/"), section("buffer/"))
        model = Model(encoder, params, t.get(CENTROIDS), float(t["alpha"]))
        adam = AdamState(section("adam.m/"), section("adam.v/"), int(t["adam.t"]), adam_config or AdamConfig())
        digest = bytes(t["config_sha256"].astype(np.uint8)).hex()
        return cls(model, adam, int(t["epoch"]), digest)

    @classmethod
    def load(cls, path, encoder: EncoderConfig, adam_config: AdamConfig | None = None) -> "Checkpoint":
        return cls.from_tensors(container.load(path), encoder, adam_config)


def init_model(ds: Dataset, encoder: EncoderConfig, cfg: TrainConfig) -> Model:
    """Fresh encoder weights plus centroids from k-means on the initial embeddings."""
    params = init_params(encoder, seed=cfg.seed)
    model = Model(encoder, params)
    state = kmeans_init(embed(model, ds.samples), ds.class_count, seed=cfg.seed)
    model.centroids = state.centroids
    return model


def _full_target(model: Model, ds: Dataset) -> np.ndarray:
    q = soft_assign(embed(model, ds.samples), model.centroids, model.alpha)
    return target_distribution(q)


def fit(ds: Dataset, encoder: EncoderConfig, cfg: TrainConfig,
        on_checkpoint: Callable[[Checkpoint], None] | None = None) -> tuple[Checkpoint, list[tuple]]:
    """Train from scratch; returns the final checkpoint and per-epoch loss rows."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    digest = config_hash(encoder, cfg)
    model = init_model(ds, encoder, cfg)
    adam = AdamState.zeros_like(model.trainable(), cfg.adam)
    history: list[tuple] = []
    n = len(ds)
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        order = np.random.default_rng(derive_seed(cfg.seed, epoch, 0x5EED)).permutation(n)
        full_p = _full_target(model, ds) if cfg.target_refresh == "epoch" else None
        sums = np.zeros(3)
        steps = 0
        for step, lo in enumerate(range(0, n, cfg.batch_size)):
            ids = order[lo:lo + cfg.batch_size]
            if len(ids) < 2:
                continue
            x = ds.samples[ids]
            views = make_views(x, ids, epoch, cfg, ds if ds.is_image else None)
            target = None if full_p is None else _renormalise(full_p[ids])
            res = train_step(model, x, views, cfg, adam, derive_seed(cfg.seed, epoch, step), target)
            model, adam = res.model, res.adam
            sums += (res.contrastive, res.clustering, res.total)
            steps += 1
        means = sums / max(steps, 1)
        wall = time.perf_counter() - start if cfg.log_wall_time else 0.0
        history.append((epoch + 1, *means.tolist(), wall))
        if on_checkpoint and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            on_checkpoint(Checkpoint(model, adam, epoch + 1, digest))
    return Checkpoint(model, adam, cfg.epochs, digest), history


def _renormalise(p: np.ndarray) -> np.ndarray:
    return p / p.sum(axis=1, keepdims=True)


def write_history(rows: Sequence[tuple], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for epoch, c, k, tot, wall in rows:
            w.writerow([epoch, repr(float(c)), repr(float(k)), repr(float(tot)), repr(float(wall))])


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
