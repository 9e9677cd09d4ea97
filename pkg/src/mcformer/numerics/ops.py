"""Differentiable tensor operations.

Every function accepts Tensors (or array-likes, treated as constants) and
returns a new Tensor. Binary elementwise ops broadcast with numpy rules.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, as_tensor, record

_GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {list(a.shape)} with {list(b.shape)}") from exc


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return record((a, b), a.data + b.data, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return record((a, b), a.data - b.data, lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    return record(
        (a, b),
        ad * bd,
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, bd.shape)

    return record((a, b), out, bw)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return record((x,), x.data * c, lambda g: (g * c,))


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return record((x,), xd * xd, lambda g: (2.0 * g * xd,))


def absolute(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return record((x,), np.abs(xd), lambda g: (g * np.sign(xd),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record((x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def gelu(x) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = as_tensor(x)
    xd = x.data
    x2 = xd * xd
    inner = _GELU_C * (xd + 0.044715 * x2 * xd)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return record((x,), out, bw)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "gelu": gelu,
    "relu": relu,
}


def elementwise(op: str, *args, c: float | None = None) -> Tensor:
    """Dispatch by name: add, sub, mul, div, gelu, relu or scale (needs ``c``)."""
    if op == "scale":
        if c is None:
            raise ValueError("scale requires c")
        return scale(args[0], c)
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes; batch axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {list(a.shape)} @ {list(b.shape)}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch dims differ: {list(a.shape)} @ {list(b.shape)}") from exc
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            if ad.ndim == 2 and g.ndim > 2:
                ga = np.einsum("...nr,...kr->nk", g, np.broadcast_to(bd, g.shape[:-2] + bd.shape[-2:]))
            else:
                ga = g @ np.swapaxes(bd, -1, -2)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                # shared weight: fold batch axes into the contraction
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return (
            None if ga is None else _unbroadcast(ga, ad.shape),
            None if gb is None else _unbroadcast(gb, bd.shape),
        )

    return record((a, b), ad @ bd, bw)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return record((x,), np.asarray(out), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {list(old)} to {list(shape)}") from exc
    return record((x,), out, lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return record((x,), np.transpose(x.data, axes), lambda g: (np.transpose(g, inv),))


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, tuple(axes))


def index(x, idx) -> Tensor:
    """``x[idx]`` with numpy (basic or advanced) indexing; gradients scatter-add."""
    x = as_tensor(x)
    shape = x.shape
    out = x.data[idx]

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return record((x,), np.array(out), bw)


def concat(xs, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([x.data for x in xs], axis=axis)
    return record(xs, out, lambda g: tuple(np.split(g, splits, axis=axis)))


def softmax(x, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max subtraction for overflow safety."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {list(x.shape)}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return record((x,), s, bw)


def layer_norm(x, gamma, beta, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize each slice along ``axis`` to zero mean, unit (population)
    variance, then apply ``gamma * xhat + beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axis = axis % x.ndim
    n = x.shape[axis]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(
            f"gamma/beta must have shape [{n}], got {list(gamma.shape)} / {list(beta.shape)}"
        )
    bshape = [1] * x.ndim
    bshape[axis] = n
    gd = gamma.data.reshape(bshape)
    bd = beta.data.reshape(bshape)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gd + bd
    other = tuple(i for i in range(x.ndim) if i != axis)

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (
                gh
                - gh.mean(axis=axis, keepdims=True)
                - xhat * (gh * xhat).mean(axis=axis, keepdims=True)
            )
        ggamma = (g * xhat).sum(axis=other) if gamma.requires_grad else None
        gbeta = g.sum(axis=other) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return record((x, gamma, beta), out, bw)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return record((x,), x.data * keep, lambda g: (g * keep,))
