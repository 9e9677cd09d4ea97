"""
Dense float64 tensors and the reverse-mode gradient tape.

A :class:`Tape` is opened explicitly around each forward pass::

    with Tape() as tape:
        loss = f(params)
    backward(tape, loss)

Operations executed while a tape is active record a node whenever at least
one input has ``requires_grad``. Outside a tape nothing is recorded, which is
how evaluation runs without bookkeeping cost.

Gradients accumulate into ``Tensor.grad`` of leaf tensors (tensors not
produced on the tape being replayed). Calling :func:`backward` twice without
:func:`zero_grads` in between therefore doubles the stored gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import InvalidShape, NotScalar

DTYPE = np.float64

_ACTIVE: list["Tape"] = []


class Tensor:
    """An n-dimensional float64 array that may take part in a gradient tape.

    ``data`` is a numpy array (row-major, contiguous on construction). The
    shape of a tensor never changes; :meth:`reshape` returns a new tensor.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id", "name", "__weakref__")

    # Make numpy defer to our reflected operators (ndarray + Tensor).
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=DTYPE, order="C")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[tuple[int, int]] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.node_id = None
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    # Operator sugar; implementations live in ops.py.
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    def __radd__(self, other):
        from .ops import add
        return add(other, self)

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    def __rmul__(self, other):
        from .ops import mul
        return mul(other, self)

    def __truediv__(self, other):
        from .ops import div
        return div(self, other)

    def __rtruediv__(self, other):
        from .ops import div
        return div(other, self)

    def __neg__(self):
        from .ops import scale
        return scale(self, -1.0)

    def __matmul__(self, other):
        from .ops import matmul
        return matmul(self, other)

    def reshape(self, *shape):
        from .ops import reshape
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        from .ops import transpose
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from .ops import sum as _sum
        return _sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from .ops import mean
        return mean(self, axis=axis, keepdims=keepdims)

    def __getitem__(self, index):
        from .ops import index as _index
        return _index(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=DTYPE))


@dataclass
class Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    nodes: list[Node] = field(default_factory=list)

    def __post_init__(self):
        self._id = id(self)

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def record(self, inputs, output, backward_fn) -> None:
        output.node_id = (self._id, len(self.nodes))
        output.requires_grad = True
        self.nodes.append(Node(tuple(inputs), output, backward_fn))

    def owns(self, t: Tensor) -> bool:
        return t.node_id is not None and t.node_id[0] == self._id

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Optional[Tape]:
    return _ACTIVE[-1] if _ACTIVE else None


def record(inputs: Iterable[Tensor], out: np.ndarray, backward_fn) -> Tensor:
    """Wrap ``out`` and record it on the active tape if any input needs grad."""
    inputs = tuple(inputs)
    result = Tensor._wrap(out)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(inputs, result, backward_fn)
    return result


def backward(tape: Tape, loss: Tensor) -> None:
    """Propagate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaves are tensors with ``requires_grad`` that were not produced on
    ``tape``. Gradients are added to any existing ``.grad``.
    """
    if loss.size != 1:
        raise NotScalar(f"loss must be a scalar, got shape {list(loss.shape)}")
    if not tape.owns(loss):
        raise NotScalar("loss was not recorded on this tape")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    last = loss.node_id[1]
    for node in reversed(tape.nodes[: last + 1]):
        g = pending.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if tape.owns(inp):
                key = id(inp)
                if key in pending:
                    pending[key] = pending[key] + gi
                else:
                    pending[key] = gi
            else:
                gi = np.broadcast_to(gi, inp.shape)
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def tensor_new(
    shape: Sequence[int],
    init: str = "zeros",
    *,
    value: float = 0.0,
    seed: Optional[int] = None,
    mean: float = 0.0,
    std: float = 1.0,
    requires_grad: bool = False,
    name: Optional[str] = None,
) -> Tensor:
    """Construct a tensor of ``shape``.

    ``init`` is ``"zeros"``, ``"value"`` (fill with ``value``) or
    ``"normal"``. Normal draws come from numpy's PCG64 bit generator seeded
    with ``seed`` and the standard-normal ziggurat sampler, so the same
    (shape, seed, mean, std) always yields the same bits.
    """
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0 or any(d < 1 for d in shape):
        raise InvalidShape(f"all dimensions must be >= 1, got {list(shape)}")
    if init == "zeros":
        arr = np.zeros(shape, dtype=DTYPE)
    elif init == "value":
        arr = np.full(shape, float(value), dtype=DTYPE)
    elif init == "normal":
        if seed is None:
            raise ValueError("seeded-normal init requires a seed")
        rng = np.random.Generator(np.random.PCG64(seed))
        arr = mean + std * rng.standard_normal(shape, dtype=DTYPE)
    else:
        raise ValueError(f"unknown init {init!r}")
    return Tensor(arr, requires_grad=requires_grad, name=name)
