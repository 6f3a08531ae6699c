"""Dense float64 tensors with reverse-mode differentiation.

Every tensor produced by an operation keeps references to its inputs and a
closure that maps the output gradient to input gradients.  ``backward``
linearises that graph into a :class:`ComputationTape`, walks it once in
reverse and then drops the references so the graph can be collected.

Broadcasting is limited to a row vector ``(n,)``/``(1, n)`` or a column
vector ``(m, 1)`` against an ``(m, n)`` matrix.  Anything else is a
:class:`DimensionError`.
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "Tensor",
    "ComputationTape",
    "no_grad",
    "tensor",
    "zeros",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "shift",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "log",
    "elementwise",
    "sum_all",
    "mean_all",
    "softmax_rows",
    "concat",
    "stack",
    "take_row",
    "reshape",
    "transpose",
    "gather_rows",
    "backward",
    "grad_check",
]

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Build results without recording the graph (evaluation only)."""
    previous = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 2:
            raise DimensionError(f"only scalars, vectors and matrices are supported, got shape {arr.shape}")
        if arr.size == 0:
            raise DimensionError(f"tensor dimensions must be positive, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -other)

    def __rsub__(self, other):
        return shift(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape))


def _result(data: np.ndarray, parents: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    needs = _grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = parents
        out._backward = fn
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------- broadcasting

def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...], op: str) -> tuple[int, ...]:
    if a == b:
        return a
    big, small = (a, b) if len(a) >= len(b) else (b, a)
    if len(big) == 2:
        m, n = big
        if small in ((n,), (1, n), (m, 1)):
            return big
    raise DimensionError(f"{op}: incompatible shapes {a} and {b}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if len(shape) == 1:
        return grad.sum(axis=0)
    if shape[0] == 1:
        return grad.sum(axis=0, keepdims=True)
    return grad.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------- primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; 1-D operands act as row (left) or column (right) vectors."""
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    return _result(
        ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def shift(a: Tensor, c: float) -> Tensor:
    return _result(a.data + float(c), (a,), lambda g: (g,))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form never overflows and gives exactly 0.5 at 0
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,))


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(a, floor)``; the gradient is zero where the floor is active."""
    x = a.data
    if floor > 0.0:
        clipped = x < floor
        safe = np.where(clipped, floor, x)
    else:
        clipped = np.zeros(x.shape, dtype=bool)
        safe = x
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(safe)
    return _result(y, (a,), lambda g: (np.where(clipped, 0.0, g / safe),))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "exp": exp, "log": log, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *inputs: Tensor) -> Tensor:
    """Dispatch a pointwise op by name."""
    if op in _UNARY:
        if len(inputs) != 1:
            raise ContractError(f"{op} takes one input, got {len(inputs)}")
        return _UNARY[op](inputs[0])
    if op in _BINARY:
        if len(inputs) != 2:
            raise ContractError(f"{op} takes two inputs, got {len(inputs)}")
        return _BINARY[op](*inputs)
    raise ContractError(f"unknown elementwise op {op!r}")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return _result(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max-shift; a 1-D input is treated as one row."""
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax_rows: non-finite input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat: no inputs")
    ndim = tensors[0].ndim
    if ndim == 0 or any(t.ndim != ndim for t in tensors) or not -ndim <= axis < ndim:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    axis %= ndim
    for t in tensors[1:]:
        for d in range(ndim):
            if d != axis and t.shape[d] != tensors[0].shape[d]:
                raise DimensionError(
                    f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}"
                )
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _result(data, tuple(tensors), lambda g: np.split(g, bounds, axis=axis))


def stack(vectors: Sequence[Tensor]) -> Tensor:
    """Stack equal-length 1-D tensors as the rows of a matrix."""
    if not vectors or any(v.ndim != 1 or v.shape != vectors[0].shape for v in vectors):
        raise DimensionError(f"stack: need equal 1-D shapes, got {[v.shape for v in vectors]}")
    data = np.stack([v.data for v in vectors])
    return _result(data, tuple(vectors), lambda g: list(g))


def take_row(x: Tensor, i: int) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"take_row: need a matrix, got shape {x.shape}")
    if not 0 <= i < x.shape[0]:
        raise IndexError(f"take_row: row {i} out of range for {x.shape[0]} rows")
    shape = x.shape

    def grad_fn(g):
        full = np.zeros(shape)
        full[i] = g
        return (full,)

    return _result(x.data[i].copy(), (x,), grad_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = x.shape
    if math.prod(shape) != x.data.size:
        raise DimensionError(f"reshape: cannot view {src} as {shape}")
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose: need a matrix, got shape {x.shape}")
    return _result(x.data.T.copy(), (x,), lambda g: (g.T,))


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Embedding lookup; repeated ids accumulate their gradients."""
    if table.ndim != 2:
        raise DimensionError(f"gather_rows: table must be a matrix, got shape {table.shape}")
    idx = np.asarray(ids, dtype=np.int64).reshape(-1)
    n_rows = table.shape[0]
    bad = idx[(idx < 0) | (idx >= n_rows)]
    if bad.size:
        raise IndexError(f"gather_rows: id {int(bad[0])} out of range for {n_rows} rows")
    shape = table.shape

    def grad_fn(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _result(table.data[idx], (table,), grad_fn)


# ---------------------------------------------------------------- reverse pass

class ComputationTape:
    """Topologically ordered record of the operations that produced ``root``."""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        stack_: list[tuple[Tensor, bool]] = [(root, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack_.append((parent, False))

    def run(self) -> None:
        grads: dict[int, np.ndarray] = {id(self.root): np.ones(self.root.shape)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = np.asarray(pg, dtype=np.float64)
        self.release()

    def release(self) -> None:
        for node in self.nodes:
            node._parents = ()
            node._backward = None
        self.nodes = []


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every gradient-tracking tensor that ``loss`` depends on.

    Leaf gradients accumulate across calls; reset them with ``zero_grad`` between steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    ComputationTape(loss).run()


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Largest |analytic - central difference| / max(1, |central difference|) over all coordinates."""
    if not 0.0 < eps < 1e-2:
        raise ContractError(f"eps must lie in (0, 1e-2), got {eps}")
    for p in params:
        p.zero_grad()
    loss = f()
    if not math.isfinite(loss.item()):
        raise NumericError("grad_check: objective is not finite")
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                up = f().item()
            flat[i] = orig - eps
            with no_grad():
                down = f().item()
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError("grad_check: objective is not finite")
            numeric = (up - down) / (2.0 * eps)
            err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
