"""Encoders ``f`` and the projection head ``h``.

Two encoders are available: a small GELU MLP for vector data and a
patch-mixer for images.  A mixing block is

    a   = x + BN(GELU(drop(depthwise(x))))
    out = a + BN(GELU(drop(pointwise(a))))

i.e. the usual residual around the depthwise stage plus a second residual
from the depthwise stage output to the pointwise stage output.  The image
embedding is the spatial average of the last block; the projection head
(linear, GELU, linear) is applied only on the contrastive path.

Parameters live in a flat ``{name: array}`` dict so they can be wrapped as
leaf Tensors for a step and written straight to the tensor container.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, MutableMapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class MixerConfig:
    in_channels: int = 3
    patch_size: int = 2
    depth: int = 4
    channels: int = 64
    dw_kernel: int = 7
    dropout_rate: float = 0.04
    head_hidden: int = 512
    embed_dim: int = 128
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    kind = "mixer"

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.dw_kernel % 2 == 0:
            raise ValueError(f"dw_kernel must be odd, got {self.dw_kernel}")
        for name in ("in_channels", "patch_size", "depth", "channels", "dw_kernel", "head_hidden", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def embedding_dim(self) -> int:
        return self.channels


@dataclass(frozen=True)
class MLPConfig:
    in_dim: int = 8
    hidden: tuple[int, ...] = (32, 32)
    head_hidden: int = 64
    embed_dim: int = 16

    kind = "mlp"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or min((self.in_dim, self.head_hidden, self.embed_dim, *self.hidden)) < 1:
            raise ValueError("all MLP widths must be >= 1 and at least one hidden layer is required")

    @property
    def embedding_dim(self) -> int:
        return self.hidden[-1]


EncoderConfig = MixerConfig | MLPConfig


@dataclass
class EncoderParams:
    """Trainable tensors plus batch-norm running statistics."""

    weights: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "EncoderParams":
        return EncoderParams({k: v.copy() for k, v in self.weights.items()},
                             {k: v.copy() for k, v in self.buffers.items()})


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _linear_init(rng, weights, name, n_in, n_out):
    weights[f"{name}.w"] = _uniform(rng, n_in, (n_in, n_out))
    weights[f"{name}.b"] = _uniform(rng, n_in, (n_out,))


def _bn_init(weights, buffers, name, c):
    weights[f"{name}.gamma"] = np.ones(c)
    weights[f"{name}.beta"] = np.zeros(c)
    buffers[f"{name}.mean"] = np.zeros(c)
    buffers[f"{name}.var"] = np.ones(c)


def init_params(cfg: EncoderConfig, seed: int = 0) -> EncoderParams:
    rng = np.random.default_rng(seed)
    w: dict[str, np.ndarray] = {}
    buf: dict[str, np.ndarray] = {}
    if isinstance(cfg, MLPConfig):
        widths = (cfg.in_dim, *cfg.hidden)
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            _linear_init(rng, w, f"enc.{i}", a, b)
    else:
        c, p, k = cfg.channels, cfg.patch_size, cfg.dw_kernel
        fan = cfg.in_channels * p * p
        _linear_init(rng, w, "embed", fan, c)
        _bn_init(w, buf, "embed.bn", c)
        for i in range(cfg.depth):
            w[f"block{i}.dw.w"] = _uniform(rng, k * k, (c, k, k))
            w[f"block{i}.dw.b"] = _uniform(rng, k * k, (c,))
            _bn_init(w, buf, f"block{i}.dw.bn", c)
            w[f"block{i}.pw.w"] = _uniform(rng, c, (c, c))
            w[f"block{i}.pw.b"] = _uniform(rng, c, (c,))
            _bn_init(w, buf, f"block{i}.pw.bn", c)
    _linear_init(rng, w, "head.0", cfg.embedding_dim, cfg.head_hidden)
    _linear_init(rng, w, "head.1", cfg.head_hidden, cfg.embed_dim)
    return EncoderParams(w, buf)


def param_count(cfg: EncoderConfig) -> int:
    """Number of trainable scalars, from the layer geometry alone."""
    head = cfg.embedding_dim * cfg.head_hidden + cfg.head_hidden + cfg.head_hidden * cfg.embed_dim + cfg.embed_dim
    if isinstance(cfg, MLPConfig):
        widths = (cfg.in_dim, *cfg.hidden)
        return sum(a * b + b for a, b in zip(widths[:-1], widths[1:])) + head
    c, p, k = cfg.channels, cfg.patch_size, cfg.dw_kernel
    embed = cfg.in_channels * p * p * c + c + 2 * c
    block = (c * k * k + c + 2 * c) + (c * c + c + 2 * c)
    return embed + cfg.depth * block + head


class _Forward:
    """Per-call state: parameter lookup, mode, dropout masks and batch statistics."""

    def __init__(self, params, mode, mask_seed, buffers, stats):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        self.params = params
        self.mode = mode
        self.mask_seed = mask_seed
        self.buffers = buffers
        self.stats = stats
        self.site = 0

    def __getitem__(self, name) -> Tensor:
        return ad.as_tensor(self.params[name])

    def dropout(self, x: Tensor, rate: float) -> Tensor:
        site = self.site
        self.site += 1
        if self.mode == "eval" or rate == 0:
            return x
        rng = np.random.default_rng([int(self.mask_seed), site])
        mask = (rng.random(x.shape) >= rate).astype(np.float64)
        return ad.dropout(x, mask, rate)

    def batchnorm(self, x: Tensor, name: str, eps: float) -> Tensor:
        gamma, beta = self[f"{name}.gamma"], self[f"{name}.beta"]
        if self.mode == "eval":
            if self.buffers is None:
                raise ValueError("eval mode needs batch-norm running statistics")
            return ad.batchnorm(x, gamma, beta, eps, self.buffers[f"{name}.mean"], self.buffers[f"{name}.var"])
        out = ad.batchnorm(x, gamma, beta, eps)
        if self.stats is not None:
            _, _, mu, var = out.ctx
            count = x.size // x.shape[1]
            unbiased = var * count / max(count - 1, 1)
            self.stats[name] = (mu, unbiased)
        return out


def _mixer_block(fw: _Forward, x: Tensor, i: int, cfg: MixerConfig) -> Tensor:
    if x.ndim != 4 or x.shape[1] != cfg.channels:
        raise ad.ShapeError("mixer_block", x.shape, (cfg.channels,))
    pre = f"block{i}"
    h = ad.depthwise_conv(x, fw[f"{pre}.dw.w"], fw[f"{pre}.dw.b"])
    h = fw.batchnorm(ad.gelu(fw.dropout(h, cfg.dropout_rate)), f"{pre}.dw.bn", cfg.bn_eps)
    a = x + h
    h = ad.pointwise_conv(a, fw[f"{pre}.pw.w"], fw[f"{pre}.pw.b"])
    h = fw.batchnorm(ad.gelu(fw.dropout(h, cfg.dropout_rate)), f"{pre}.pw.bn", cfg.bn_eps)
    return a + h


def mixer_block(x, params: Mapping, index: int, cfg: MixerConfig, mode: str = "eval",
                mask_seed: int = 0, buffers: Mapping | None = None) -> Tensor:
    """Apply block ``index`` to ``N x C x H x W`` (or a single ``C x H x W``) input."""
    x = ad.as_tensor(x)
    single = x.ndim == 3
    if single:
        x = x.reshape(1, *x.shape)
    out = _mixer_block(_Forward(params, mode, mask_seed, buffers, None), x, index, cfg)
    return out.reshape(out.shape[1:]) if single else out


def _patch_embed(fw: _Forward, x: Tensor, cfg: MixerConfig) -> Tensor:
    n, cin, hgt, wid = x.shape
    p = cfg.patch_size
    if cin != cfg.in_channels or hgt % p or wid % p:
        raise ad.ShapeError("patch_embed", x.shape, (cfg.in_channels, p))
    hp, wp = hgt // p, wid // p
    patches = x.reshape(n, cin, hp, p, wp, p).transpose(0, 2, 4, 1, 3, 5).reshape(n * hp * wp, cin * p * p)
    h = patches @ fw["embed.w"] + fw["embed.b"]
    h = h.reshape(n, hp, wp, cfg.channels).transpose(0, 3, 1, 2)
    return fw.batchnorm(ad.gelu(h), "embed.bn", cfg.bn_eps)


def encode(x, params: Mapping, cfg: EncoderConfig, mode: str = "eval", mask_seed: int = 0,
           buffers: Mapping | None = None, stats: MutableMapping | None = None) -> Tensor:
    """Embedding ``z = f(x)`` (pre-projection), one row per sample.

    In train mode batch-norm uses batch statistics; pass a dict as ``stats``
    to collect them for :func:`update_running_stats`.
    """
    x = ad.as_tensor(x)
    fw = _Forward(params, mode, mask_seed, buffers, stats)
    if isinstance(cfg, MLPConfig):
        if x.ndim != 2 or x.shape[1] != cfg.in_dim:
            raise ad.ShapeError("encode[mlp]", x.shape, (cfg.in_dim,))
        for i in range(len(cfg.hidden)):
            x = ad.gelu(x @ fw[f"enc.{i}.w"] + fw[f"enc.{i}.b"])
        return x
    if x.ndim == 3:
        x = x.reshape(1, *x.shape)
    if x.ndim != 4:
        raise ad.ShapeError("encode[mixer]", x.shape)
    h = _patch_embed(fw, x, cfg)
    for i in range(cfg.depth):
        h = _mixer_block(fw, h, i, cfg)
    return h.mean(axis=(2, 3))


def project(z, params: Mapping, cfg: EncoderConfig) -> Tensor:
    """Projection head: linear -> GELU -> linear."""
    z = ad.as_tensor(z)
    if z.ndim != 2 or z.shape[1] != cfg.embedding_dim:
        raise ad.ShapeError("project", z.shape, (cfg.embedding_dim,))
    h = ad.gelu(z @ ad.as_tensor(params["head.0.w"]) + ad.as_tensor(params["head.0.b"]))
    return h @ ad.as_tensor(params["head.1.w"]) + ad.as_tensor(params["head.1.b"])


def update_running_stats(buffers: MutableMapping[str, np.ndarray], stats: Mapping, momentum: float) -> None:
    for name, (mu, var) in stats.items():
        buffers[f"{name}.mean"] = (1 - momentum) * buffers[f"{name}.mean"] + momentum * mu
        buffers[f"{name}.var"] = (1 - momentum) * buffers[f"{name}.var"] + momentum * var
