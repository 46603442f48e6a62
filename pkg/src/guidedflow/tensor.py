"""Define-by-run reverse-mode differentiation over numpy arrays.

Every differentiable primitive is a :class:`Function` subclass with a
``forward`` working on raw arrays and a ``backward`` mapping the output
gradient to one gradient per input.  Calling ``Function.apply`` records a
node on the output tensor; :meth:`Tensor.backward` walks those nodes in
reverse topological order.

Layout is batch-channel-height-width throughout.  Elementwise ops require
equal shapes; use :func:`expand` to broadcast size-1 axes explicitly.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Any, Iterable, Optional, Sequence

import numpy as np

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording graph nodes."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


@contextlib.contextmanager
def precision(dtype):
    """Set the dtype used when wrapping non-array data (float32 or float64)."""
    prev = default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


class Node:
    __slots__ = ("fn", "parents")

    def __init__(self, fn: "Function", parents: tuple):
        self.fn = fn
        self.parents = parents


class Tensor:
    """An array plus an optional gradient and a backpointer into the graph.

    Leaf tensors created with ``requires_grad=True`` are parameters: they
    accumulate ``grad`` on every backward pass until the caller zeroes it.
    """

    __slots__ = ("data", "grad", "requires_grad", "node", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if not isinstance(data, np.ndarray) or arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(default_dtype())
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node: Optional[Node] = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- graph traversal -------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable parameter.

        ``self`` must be a scalar unless an explicit output gradient is given.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype)
            if grad.shape != self.shape:
                raise ValueError(f"output gradient shape {grad.shape} != tensor shape {self.shape}")
        if not self.requires_grad:
            return

        order = _topological(self)
        pending = {id(self): grad}
        for t in reversed(order):
            g = pending.pop(id(t), None)
            if t.node is None:
                if t.requires_grad:
                    if g is None:
                        g = np.zeros_like(t.data)
                    t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            if g is None:
                continue
            parent_grads = t.node.fn.backward(g)
            for p, pg in zip(t.node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Tensor):
            return Add.apply(self, other)
        return AddScalar.apply(self, value=float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return Sub.apply(self, other)
        return AddScalar.apply(self, value=-float(other))

    def __rsub__(self, other):
        return AddScalar.apply(MulScalar.apply(self, value=-1.0), value=float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return Mul.apply(self, other)
        return MulScalar.apply(self, value=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return Div.apply(self, other)
        return MulScalar.apply(self, value=1.0 / float(other))

    def __neg__(self):
        return MulScalar.apply(self, value=-1.0)

    def __pow__(self, exponent):
        return Pow.apply(self, exponent=float(exponent))

    def __getitem__(self, index):
        return Slice.apply(self, index=index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def abs(self) -> "Tensor":
        return Abs.apply(self)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def sqrt(self) -> "Tensor":
        return Pow.apply(self, exponent=0.5)


def _topological(root: Tensor) -> list:
    order: list = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """Base class for differentiable primitives.

    ``forward`` receives the input arrays (plus keyword configuration) and may
    stash whatever it needs on ``self``.  ``backward`` returns a sequence with
    one entry per input: an array shaped like that input, or ``None``.
    """

    name = "function"

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        fn = cls()
        out = Tensor(fn.forward(*(t.data for t in inputs), **kwargs))
        if _grad_enabled() and any(t.requires_grad for t in inputs):
            fn.needs = tuple(t.requires_grad for t in inputs)
            out.requires_grad = True
            out.node = Node(fn, inputs)
        return out


def _check_same(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


class Add(Function):
    name = "add"

    def forward(self, a, b):
        _check_same("add", a, b)
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        _check_same("sub", a, b)
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        _check_same("mul", a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class Div(Function):
    name = "div"

    def forward(self, a, b):
        _check_same("div", a, b)
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        gb = None
        if self.needs[1]:
            gb = -grad * self.a / (self.b * self.b)
        return grad / self.b, gb


class AddScalar(Function):
    name = "add_scalar"

    def forward(self, a, value):
        return a + a.dtype.type(value)

    def backward(self, grad):
        return (grad,)


class MulScalar(Function):
    name = "mul_scalar"

    def forward(self, a, value):
        self.value = a.dtype.type(value)
        return a * self.value

    def backward(self, grad):
        return (grad * self.value,)


class Pow(Function):
    name = "pow"

    def forward(self, a, exponent):
        self.a, self.exponent = a, exponent
        self.out = np.power(a, a.dtype.type(exponent))
        return self.out

    def backward(self, grad):
        e = self.a.dtype.type(self.exponent)
        with np.errstate(divide="ignore", invalid="ignore"):
            local = e * np.power(self.a, e - 1)
        return (grad * local,)


class Abs(Function):
    name = "abs"

    def forward(self, a):
        self.sign = np.sign(a)
        return np.abs(a)

    def backward(self, grad):
        return (grad * self.sign,)


class Exp(Function):
    name = "exp"

    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Sum(Function):
    name = "sum"

    def forward(self, a, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Function):
    name = "mean"

    def forward(self, a, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        out = np.asarray(a.mean(axis=axis, keepdims=keepdims))
        self.count = a.size // max(out.size, 1) if a.size else 1
        return out

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        g = np.broadcast_to(grad, self.shape) / grad.dtype.type(self.count)
        return (g.astype(grad.dtype, copy=False),)


class Reshape(Function):
    name = "reshape"

    def forward(self, a, shape):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Expand(Function):
    name = "expand"

    def forward(self, a, shape):
        shape = tuple(shape)
        if len(shape) != a.ndim or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
            raise ValueError(f"expand: cannot broadcast {a.shape} to {shape}")
        self.axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)
        return np.broadcast_to(a, shape).copy()

    def backward(self, grad):
        return (grad.sum(axis=self.axes, keepdims=True) if self.axes else grad,)


class Slice(Function):
    name = "slice"

    def forward(self, a, index):
        self.shape, self.index = a.shape, index
        return a[index].copy()

    def backward(self, grad):
        g = np.zeros(self.shape, dtype=grad.dtype)
        g[self.index] = grad
        return (g,)


class Concat(Function):
    name = "concat"

    def forward(self, *arrays, axis=1):
        ref = arrays[0]
        for a in arrays[1:]:
            if a.ndim != ref.ndim or any(
                s != t for i, (s, t) in enumerate(zip(a.shape, ref.shape)) if i != axis
            ):
                raise ValueError(f"concat: incompatible shapes {ref.shape} and {a.shape} on axis {axis}")
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return np.split(grad, self.splits, axis=self.axis)


class Pad(Function):
    """Spatial padding of the last two axes; ``mode`` is 'constant' (zero) or 'edge'."""

    name = "pad"

    def forward(self, a, pad, mode="constant"):
        self.pad, self.mode, self.shape = int(pad), mode, a.shape
        p = self.pad
        widths = [(0, 0)] * (a.ndim - 2) + [(p, p), (p, p)]
        return np.pad(a, widths, mode=mode)

    def backward(self, grad):
        p = self.pad
        if self.mode == "constant" or p == 0:
            return (grad[..., p:grad.shape[-2] - p, p:grad.shape[-1] - p].copy(),)
        h, w = self.shape[-2:]
        # fold replicated border rows/cols back onto the edge pixels
        g = grad.copy()
        g[..., p, :] += g[..., :p, :].sum(axis=-2)
        g[..., p + h - 1, :] += g[..., p + h:, :].sum(axis=-2)
        g[..., :, p] += g[..., :, :p].sum(axis=-1)
        g[..., :, p + w - 1] += g[..., :, p + w:].sum(axis=-1)
        return (g[..., p:p + h, p:p + w].copy(),)


def expand(t: Tensor, shape: Iterable[int]) -> Tensor:
    return Expand.apply(t, shape=tuple(shape))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def pad(t: Tensor, width: int, mode: str = "constant") -> Tensor:
    if mode not in ("constant", "edge"):
        raise ValueError(f"unknown pad mode {mode!r}")
    return Pad.apply(t, pad=width, mode=mode)


def stop_gradient(t: Tensor) -> Tensor:
    return t.detach()


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def zeros(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or default_dtype()))


def ones(shape, dtype=None) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype or default_dtype()))
