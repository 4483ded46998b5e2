"""Minimal reverse-mode differentiation over dense float64 arrays.

Every operation creates a new immutable :class:`Tensor` node that remembers
the op, its inputs and any attributes.  :func:`backward` walks the recorded
graph in reverse topological order; :class:`Trace` exposes the same graph as
an ordered list of op records that can be replayed on new leaf values.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

_ids = itertools.count()


class ShapeError(ValueError):
    """Operand shapes are incompatible for an op."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")


class DomainError(ValueError):
    """An op was evaluated outside the domain where it is defined."""


@dataclass(frozen=True)
class Op:
    name: str
    forward: Callable[..., tuple[np.ndarray, Any]]
    vjp: Callable[..., tuple[np.ndarray | None, ...]]


class Tensor:
    """Immutable float64 value plus the op record that produced it."""

    __array_priority__ = 1000
    __slots__ = ("data", "requires_grad", "op", "inputs", "attrs", "ctx", "id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.op: Op | None = None
        self.inputs: tuple[Tensor, ...] = ()
        self.attrs: dict[str, Any] = {}
        self.ctx: Any = None
        self.id = next(_ids)
        self.name = name

    @classmethod
    def _from_op(cls, op: Op, inputs: tuple["Tensor", ...], attrs: dict, out: np.ndarray, ctx) -> "Tensor":
        t = cls.__new__(cls)
        out = np.asarray(out, dtype=np.float64)
        out.flags.writeable = False
        t.data = out
        t.requires_grad = any(x.requires_grad for x in inputs)
        t.op = op
        t.inputs = inputs
        t.attrs = attrs
        t.ctx = ctx
        t.id = next(_ids)
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        kind = self.op.name if self.op else "leaf"
        return f"Tensor({kind}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, other):
        return power(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(op: Op, *inputs, **attrs) -> Tensor:
    ts = tuple(as_tensor(x) for x in inputs)
    out, ctx = op.forward(*(t.data for t in ts), **attrs)
    return Tensor._from_op(op, ts, attrs, out, ctx)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(name: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(name, a.shape, b.shape) from None


# elementwise binary ---------------------------------------------------------

def _add_fwd(a, b):
    _broadcast_check("add", a, b)
    return a + b, None


def _add_vjp(g, ctx, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _sub_fwd(a, b):
    _broadcast_check("sub", a, b)
    return a - b, None


def _sub_vjp(g, ctx, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _mul_fwd(a, b):
    _broadcast_check("mul", a, b)
    return a * b, None


def _mul_vjp(g, ctx, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _div_fwd(a, b):
    _broadcast_check("div", a, b)
    if np.any(b == 0):
        raise DomainError("div: zero denominator")
    return a / b, None


def _div_vjp(g, ctx, a, b):
    return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


ADD = Op("add", _add_fwd, _add_vjp)
SUB = Op("sub", _sub_fwd, _sub_vjp)
MUL = Op("mul", _mul_fwd, _mul_vjp)
DIV = Op("div", _div_fwd, _div_vjp)


def add(a, b) -> Tensor:
    return _apply(ADD, a, b)


def sub(a, b) -> Tensor:
    return _apply(SUB, a, b)


def mul(a, b) -> Tensor:
    return _apply(MUL, a, b)


def div(a, b) -> Tensor:
    return _apply(DIV, a, b)


def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return a @ b, None


def _matmul_vjp(g, ctx, a, b):
    return g @ b.T, a.T @ g


MATMUL = Op("matmul", _matmul_fwd, _matmul_vjp)


def matmul(a, b) -> Tensor:
    return _apply(MATMUL, a, b)


# elementwise unary ----------------------------------------------------------

NEG = Op("neg", lambda a: (-a, None), lambda g, ctx, a: (-g,))


def neg(a) -> Tensor:
    return _apply(NEG, a)


def _exp_fwd(a):
    out = np.exp(a)
    return out, out


EXP = Op("exp", _exp_fwd, lambda g, out, a: (g * out,))


def exp(a) -> Tensor:
    return _apply(EXP, a)


def _log_fwd(a):
    if np.any(a <= 0):
        raise DomainError("log: non-positive argument")
    return np.log(a), None


LOG = Op("log", _log_fwd, lambda g, ctx, a: (g / a,))


def log(a) -> Tensor:
    return _apply(LOG, a)


def _pow_scalar_fwd(a, *, exponent):
    if float(exponent) != int(exponent) and np.any(a < 0):
        raise DomainError("pow: negative base with non-integer exponent")
    if exponent < 0 and np.any(a == 0):
        raise DomainError("pow: zero base with negative exponent")
    return np.power(a, exponent), None


def _pow_scalar_vjp(g, ctx, a, *, exponent):
    if exponent == 0:
        return (np.zeros_like(a),)
    return (g * exponent * np.power(a, exponent - 1),)


def _pow_node_fwd(a, b):
    _broadcast_check("pow", a, b)
    if np.any(a <= 0):
        raise DomainError("pow: base must be positive when the exponent is a node")
    out = np.power(a, b)
    return out, out


def _pow_node_vjp(g, out, a, b):
    return (
        _unbroadcast(g * b * np.power(a, b - 1), a.shape),
        _unbroadcast(g * out * np.log(a), b.shape),
    )


POW_SCALAR = Op("pow_scalar", _pow_scalar_fwd, _pow_scalar_vjp)
POW_NODE = Op("pow", _pow_node_fwd, _pow_node_vjp)


def power(a, exponent) -> Tensor:
    """``a ** exponent``; a Tensor exponent makes the exponent differentiable."""
    if isinstance(exponent, Tensor):
        return _apply(POW_NODE, a, exponent)
    return _apply(POW_SCALAR, a, exponent=float(exponent))


def _maximum_fwd(a, *, floor):
    return np.maximum(a, floor), None


def _maximum_vjp(g, ctx, a, *, floor):
    # ties go to the pass-through side
    return (g * (a >= floor),)


MAXIMUM = Op("maximum", _maximum_fwd, _maximum_vjp)


def maximum(a, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)`` against a scalar."""
    return _apply(MAXIMUM, a, floor=float(floor))


_GELU_C = np.sqrt(2.0 / np.pi)


def _gelu_fwd(a):
    inner = _GELU_C * (a + 0.044715 * a**3)
    t = np.tanh(inner)
    return 0.5 * a * (1.0 + t), t


def _gelu_vjp(g, t, a):
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * a**2)
    return (g * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * dinner),)


GELU = Op("gelu", _gelu_fwd, _gelu_vjp)


def gelu(a) -> Tensor:
    """Tanh approximation of the Gaussian error linear unit."""
    return _apply(GELU, a)


def _dropout_fwd(a, mask, *, rate):
    if mask.shape != a.shape:
        raise ShapeError("dropout", a.shape, mask.shape)
    scale = mask / (1.0 - rate)
    return a * scale, scale


DROPOUT = Op("dropout", _dropout_fwd, lambda g, scale, a, mask, *, rate: (g * scale, None))


def dropout(a, mask, rate: float) -> Tensor:
    """Inverted dropout with an explicit 0/1 keep-mask (mask carries no gradient)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    return _apply(DROPOUT, a, np.asarray(mask, dtype=np.float64), rate=float(rate))


# reductions and shape ops ---------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _sum_fwd(a, *, axis, keepdims):
    return a.sum(axis=axis, keepdims=keepdims), None


def _expand_reduced(g, a_shape, axis, keepdims):
    if not keepdims:
        for ax in sorted(_norm_axis(axis, len(a_shape))):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, a_shape)


def _sum_vjp(g, ctx, a, *, axis, keepdims):
    return (np.array(_expand_reduced(g, a.shape, axis, keepdims)),)


def _mean_fwd(a, *, axis, keepdims):
    return a.mean(axis=axis, keepdims=keepdims), None


def _mean_vjp(g, ctx, a, *, axis, keepdims):
    count = int(np.prod([a.shape[ax] for ax in _norm_axis(axis, a.ndim)]))
    return (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,)


SUM = Op("sum", _sum_fwd, _sum_vjp)
MEAN = Op("mean", _mean_fwd, _mean_vjp)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    return _apply(SUM, a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    return _apply(MEAN, a, axis=axis, keepdims=keepdims)


def _reshape_fwd(a, *, shape):
    try:
        return a.reshape(shape), None
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None


RESHAPE = Op("reshape", _reshape_fwd, lambda g, ctx, a, *, shape: (g.reshape(a.shape),))


def reshape(a, shape) -> Tensor:
    return _apply(RESHAPE, a, shape=tuple(shape))


def _transpose_fwd(a, *, axes):
    if axes is not None and sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, tuple(axes))
    return np.transpose(a, axes), None


def _transpose_vjp(g, ctx, a, *, axes):
    inv = None if axes is None else tuple(np.argsort(axes))
    return (np.transpose(g, inv),)


TRANSPOSE = Op("transpose", _transpose_fwd, _transpose_vjp)


def transpose(a, axes=None) -> Tensor:
    return _apply(TRANSPOSE, a, axes=None if axes is None else tuple(axes))


def _getitem_vjp(g, ctx, a, *, index):
    out = np.zeros_like(a)
    np.add.at(out, index, g)
    return (out,)


GETITEM = Op("getitem", lambda a, *, index: (np.array(a[index]), None), _getitem_vjp)


def getitem(a, index) -> Tensor:
    return _apply(GETITEM, a, index=index)


def _concat_fwd(*arrays, axis):
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError:
        raise ShapeError("concat", *(x.shape for x in arrays)) from None
    return out, None


def _concat_vjp(g, ctx, *arrays, axis):
    bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


CONCAT = Op("concat", _concat_fwd, _concat_vjp)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    return _apply(CONCAT, *tensors, axis=axis)


# layers ---------------------------------------------------------------------

def _bn_axes(x):
    if x.ndim == 2:
        return (0,), (1, -1)
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    raise ShapeError("batchnorm", x.shape)


def _batchnorm_fwd(x, gamma, beta, *, eps, running_mean, running_var):
    axes, bshape = _bn_axes(x)
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError("batchnorm", x.shape, gamma.shape, beta.shape)
    if running_mean is None:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
    else:
        mu, var = np.asarray(running_mean), np.asarray(running_var)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.reshape(bshape) + beta.reshape(bshape)
    return out, (xhat, inv_std, mu, var)


def _batchnorm_vjp(g, ctx, x, gamma, beta, *, eps, running_mean, running_var):
    xhat, inv_std, _, _ = ctx
    axes, bshape = _bn_axes(x)
    dgamma = (g * xhat).sum(axis=axes)
    dbeta = g.sum(axis=axes)
    gx = g * gamma.reshape(bshape)
    if running_mean is None:
        gx = (gx - gx.mean(axis=axes, keepdims=True)
              - xhat * (gx * xhat).mean(axis=axes, keepdims=True))
    return gx * inv_std.reshape(bshape), dgamma, dbeta


BATCHNORM = Op("batchnorm", _batchnorm_fwd, _batchnorm_vjp)


def batchnorm(x, gamma, beta, eps: float = 1e-5, running_mean=None, running_var=None) -> Tensor:
    """Per-channel normalisation over every axis except axis 1.

    Without running statistics the batch mean and (biased) variance are used;
    they are available afterwards as ``out.ctx[2]`` and ``out.ctx[3]``.
    """
    return _apply(BATCHNORM, x, gamma, beta, eps=float(eps),
                  running_mean=running_mean, running_var=running_var)


def _dw_fwd(x, w, b):
    if x.ndim != 4 or w.ndim != 3 or w.shape[0] != x.shape[1] or w.shape[1] != w.shape[2] \
            or w.shape[1] % 2 == 0 or b.shape != (x.shape[1],):
        raise ShapeError("depthwise_conv", x.shape, w.shape, b.shape)
    k = w.shape[1]
    p = k // 2
    _, _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.broadcast_to(b[None, :, None, None], x.shape).copy()
    for u in range(k):
        for v in range(k):
            out += w[None, :, u, v, None, None] * xp[:, :, u:u + h, v:v + wd]
    return out, xp


def _dw_vjp(g, xp, x, w, b):
    k = w.shape[1]
    p = k // 2
    _, _, h, wd = x.shape
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    for u in range(k):
        for v in range(k):
            gxp[:, :, u:u + h, v:v + wd] += w[None, :, u, v, None, None] * g
            gw[:, u, v] = (g * xp[:, :, u:u + h, v:v + wd]).sum(axis=(0, 2, 3))
    return gxp[:, :, p:p + h, p:p + wd], gw, g.sum(axis=(0, 2, 3))


DEPTHWISE_CONV = Op("depthwise_conv", _dw_fwd, _dw_vjp)


def depthwise_conv(x, w, b) -> Tensor:
    """Per-channel ``k x k`` cross-correlation with zero 'same' padding (odd k).

    ``x`` is ``N x C x H x W``, ``w`` is ``C x k x k`` and ``b`` has length C.
    """
    return _apply(DEPTHWISE_CONV, x, w, b)


def _pw_fwd(x, w, b):
    if x.ndim != 4 or w.ndim != 2 or w.shape[1] != x.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError("pointwise_conv", x.shape, w.shape, b.shape)
    return np.einsum("oc,nchw->nohw", w, x) + b[None, :, None, None], None


def _pw_vjp(g, ctx, x, w, b):
    return (np.einsum("oc,nohw->nchw", w, g),
            np.einsum("nohw,nchw->oc", g, x),
            g.sum(axis=(0, 2, 3)))


POINTWISE_CONV = Op("pointwise_conv", _pw_fwd, _pw_vjp)


def pointwise_conv(x, w, b) -> Tensor:
    """1x1 convolution mixing channels: ``w`` is ``C_out x C_in``."""
    return _apply(POINTWISE_CONV, x, w, b)


# graph traversal ------------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for parent in reversed(node.inputs):
            if parent.id not in seen:
                stack.append((parent, False))
    return order


class GradMap:
    """Gradients keyed by tensor; tensors the loss does not reach map to zeros."""

    def __init__(self, grads: dict[int, np.ndarray]):
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(t.id)
        return np.zeros(t.shape) if g is None else g

    def __contains__(self, t: Tensor) -> bool:
        return t.id in self._grads


def backward(loss: Tensor) -> GradMap:
    """Reverse-mode sweep from a scalar ``loss`` node."""
    if loss.size != 1:
        raise ShapeError("backward", loss.shape)
    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {loss.id: np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.get(node.id)
        if g is None or node.op is None:
            continue
        in_grads = node.op.vjp(g, node.ctx, *(t.data for t in node.inputs), **node.attrs)
        for parent, pg in zip(node.inputs, in_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                pg = _unbroadcast(pg, parent.shape)
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = np.array(pg, dtype=np.float64)
    leaf_grads = {n.id: grads[n.id] for n in order if n.id in grads and n.op is None}
    return GradMap(leaf_grads)


def grad(loss: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    gm = backward(loss)
    return [gm[t] for t in wrt]


class Trace:
    """Topologically ordered op records reachable from ``outputs``.

    ``forward`` re-evaluates the recorded ops with substitute leaf values and
    returns new output tensors; with the original leaves it reproduces the
    recorded values bit for bit.
    """

    def __init__(self, *outputs: Tensor):
        seen: dict[int, Tensor] = {}
        for out in outputs:
            for node in _toposort(out):
                seen.setdefault(node.id, node)
        self.nodes: list[Tensor] = sorted(seen.values(), key=lambda n: n.id)
        self.outputs: tuple[Tensor, ...] = outputs

    @property
    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.op is None]

    def forward(self, inputs: Mapping[Tensor, Any] | None = None) -> list[Tensor]:
        inputs = inputs or {}
        new: dict[int, Tensor] = {}
        for node in self.nodes:
            if node.op is None:
                if node in inputs:
                    value = np.asarray(inputs[node], dtype=np.float64)
                    if value.shape != node.shape:
                        raise ShapeError("forward", node.shape, value.shape)
                    new[node.id] = Tensor(value, requires_grad=node.requires_grad)
                else:
                    new[node.id] = node
                continue
            new[node.id] = _apply(node.op, *(new[p.id] for p in node.inputs), **node.attrs)
        return [new[o.id] for o in self.outputs]


def forward(trace: Trace, inputs: Mapping[Tensor, Any] | None = None) -> Tensor:
    """Replay ``trace`` and return its first output."""
    return trace.forward(inputs)[0]
