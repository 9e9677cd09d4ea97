"""Central finite-difference gradient checker."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, backward


def analytic_grad(f: Callable[[Tensor], Tensor], x: Tensor) -> np.ndarray:
    prev, x.requires_grad = x.requires_grad, True
    saved = x.grad
    x.grad = None
    try:
        with Tape() as tape:
            loss = f(x)
        backward(tape, loss)
        g = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    finally:
        x.grad = saved
        x.requires_grad = prev
    return g


def numeric_grad(f: Callable[[Tensor], Tensor], x: Tensor, eps: float) -> np.ndarray:
    flat = x.data.reshape(-1)
    out = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).item()
        flat[i] = orig - eps
        fm = f(x).item()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * eps)
    return out.reshape(x.shape)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6) -> float:
    """Max over elements of ``|a - c| / max(|a|, |c|, 1e-8)`` where ``a`` is the
    tape gradient and ``c`` the central difference ``(f(x+e) - f(x-e)) / 2e``.

    ``x.data`` is perturbed in place and restored, so ``f`` may close over
    other tensors that share ``x``. ``x.grad`` is left untouched.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError("eps must lie in (0, 1e-2]")
    a = analytic_grad(f, x)
    c = numeric_grad(f, x, eps)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(c)), 1e-8)
    return float(np.max(np.abs(a - c) / denom))
