"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers
its inputs and a closure computing the vector-Jacobian product.  Calling
:func:`backward` on a scalar output sorts the reachable graph into a
:class:`Tape` and sweeps it in reverse, accumulating gradients additively.

Elementwise operations require identical shapes; broadcasting is explicit
through :func:`expand`.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    DegenerateInputError,
    DimensionError,
    DomainError,
    ShapeError,
    VocabularyError,
)

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "grad_check",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "sum",
    "matmul",
    "softmax_rows",
    "log_softmax_rows",
    "concat",
    "stack",
    "embedding_lookup",
    "reshape",
    "expand",
    "gather_cols",
    "segment_sum",
    "primitive_forward",
    "no_grad",
    "custom_op",
]

_state = threading.local()
_seq = itertools.count()


@contextmanager
def no_grad():
    """Within the block, operations build no graph (inference mode)."""
    prev = getattr(_state, "no_grad", False)
    _state.no_grad = True
    try:
        yield
    finally:
        _state.no_grad = prev


class _Scatter(NamedTuple):
    """Gradient contribution that lands on a sub-region of the parent."""

    index: object
    value: np.ndarray
    unbuffered: bool  # True when index may repeat and needs np.add.at


class Tensor:
    """An n-dimensional float64 array that may participate in a tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._id = next(_seq)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the buffer."""
        return self.data.reshape(-1)

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    # operator sugar; all of it routes through the strict ops below
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], fn: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out._id = next(_seq)
    if not getattr(_state, "no_grad", False) and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def custom_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable,
              op: str) -> Tensor:
    """Record an operation defined outside this module.

    ``backward_fn(g)`` must return one gradient (or None) per parent.
    """
    return _node(np.asarray(data, dtype=np.float64), tuple(parents), backward_fn, op)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# tape and backward sweep


class Tape:
    """Topologically ordered operation records reachable from one output."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        # creation order is a topological order, and unlike DFS order it does
        # not shift when unrelated branches are added to the graph
        found: dict[int, Tensor] = {}
        pending = [out]
        while pending:
            node = pending.pop()
            if id(node) in found:
                continue
            found[id(node)] = node
            pending.extend(p for p in node._parents if id(p) not in found)
        return cls(sorted(found.values(), key=lambda n: n._id))

    @property
    def records(self) -> list[tuple[str, tuple[int, ...], int]]:
        """(op kind, input node ids, output node id) in forward order."""
        return [
            (n.op, tuple(id(p) for p in n._parents), id(n))
            for n in self.nodes
            if n._parents
        ]

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]

    def sweep(self, out: Tensor) -> dict[int, np.ndarray]:
        grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.data)}
        for node in reversed(self.nodes):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                _accumulate(grads, parent, pg)
            if node._parents:
                del grads[id(node)]  # interior gradients are not retained
        return grads


def _accumulate(grads: dict[int, np.ndarray], node: Tensor, g) -> None:
    key = id(node)
    buf = grads.get(key)
    if isinstance(g, _Scatter):
        if buf is None:
            buf = np.zeros_like(node.data)
            grads[key] = buf
        if g.unbuffered:
            np.add.at(buf, g.index, g.value)
        else:
            buf[g.index] += g.value
        return
    if buf is None:
        grads[key] = np.array(g, dtype=np.float64, copy=True)
    else:
        buf += g


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Populate ``.grad`` on every tracked leaf reachable from ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape.from_output(loss)
    grads = tape.sweep(loss)
    result = {}
    for leaf in tape.leaves():
        g = grads.get(id(leaf))
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = g
        result[leaf] = g
    return result


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(x: Tensor, c) -> Tensor:
    """Multiply by a Python float or by a size-1 tensor."""
    if isinstance(c, Tensor):
        if c.size != 1:
            raise DimensionError(f"scale: factor must be scalar, got shape {c.shape}")
        cv = c.data.reshape(())
        return _node(
            x.data * cv,
            (x, c),
            lambda g: (g * cv, np.sum(g * x.data).reshape(c.shape)),
            "scale",
        )
    c = float(c)
    return _node(x.data * c, (x,), lambda g: (g * c,), "scale")


def neg(x: Tensor) -> Tensor:
    return _node(-x.data, (x,), lambda g: (-g,), "neg")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _node(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _node(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _node(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    if np.any(~(x.data > 0)):
        raise DomainError("log: input must be strictly positive")
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sum(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis)
    shape = x.shape

    def fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(np.asarray(out, dtype=np.float64), (x,), fn, "sum")


_UNARY = {"neg": neg, "tanh": tanh, "sigmoid": sigmoid, "exp": exp, "log": log, "sum": sum}
_BINARY = {"add": add, "mul": mul}


def primitive_forward(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch one of the named primitives by string kind."""
    if kind in _UNARY:
        if len(inputs) != 1:
            raise DimensionError(f"{kind} takes one operand, got {len(inputs)}")
        return _UNARY[kind](_as_tensor(inputs[0]), **kwargs)
    if kind in _BINARY:
        if len(inputs) != 2:
            raise DimensionError(f"{kind} takes two operands, got {len(inputs)}")
        return _BINARY[kind](_as_tensor(inputs[0]), _as_tensor(inputs[1]))
    if kind == "scale":
        x, c = inputs
        return scale(_as_tensor(x), c)
    raise ValueError(f"unknown primitive kind {kind!r}")


# ---------------------------------------------------------------------------
# structural ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    return _node(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


def _row_mask(x: Tensor, mask) -> np.ndarray | None:
    if mask is None:
        return None
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask).astype(bool)
    if m.shape != x.shape:
        raise DimensionError(f"mask shape {m.shape} does not match {x.shape}")
    if not np.all(m.any(axis=-1)):
        raise DegenerateInputError("softmax over a fully masked row")
    return m


def _masked_shift(x: np.ndarray, m: np.ndarray | None) -> np.ndarray:
    if m is None:
        return x - x.max(axis=-1, keepdims=True)
    filled = np.where(m, x, -np.inf)
    return np.where(m, x - filled.max(axis=-1, keepdims=True), -np.inf)


def softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; masked positions come out exactly 0."""
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DegenerateInputError("softmax over an empty row")
    m = _row_mask(x, mask)
    e = np.exp(_masked_shift(x.data, m))
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return _node(y, (x,), fn, "softmax")


def log_softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Log-softmax over the last axis; masked positions are reported as 0."""
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DegenerateInputError("log-softmax over an empty row")
    m = _row_mask(x, mask)
    z = _masked_shift(x.data, m)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)
    if m is not None:
        y = np.where(m, y, 0.0)

    def fn(g):
        if m is not None:
            g = np.where(m, g, 0.0)
        return (g - p * np.sum(g, axis=-1, keepdims=True),)

    return _node(y, (x,), fn, "log_softmax")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of zero tensors")
    ref = tensors[0]
    ax = axis % max(ref.ndim, 1)
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[k] != ref.shape[k] for k in range(ref.ndim) if k != ax
        ):
            raise DimensionError(f"concat: incompatible shapes {ref.shape} and {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def fn(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _node(np.concatenate([t.data for t in tensors], axis=ax), tensors, fn, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("stack of zero tensors")
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise DimensionError(f"stack: shape mismatch {tensors[0].shape} vs {t.shape}")
    n = len(tensors)

    def fn(g):
        return tuple(np.take(g, k, axis=axis) for k in range(n))

    return _node(np.stack([t.data for t in tensors], axis=axis), tensors, fn, "stack")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape {src} -> {tuple(shape)}: {exc}") from None
    return _node(out, (x,), lambda g: (g.reshape(src),), "reshape")


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-style broadcast; the gradient is summed back."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise DimensionError(f"expand: cannot broadcast {x.shape} to {shape}") from None
    lead = len(shape) - x.ndim
    kept = tuple(
        lead + k for k, n in enumerate(x.shape) if n == 1 and shape[lead + k] != 1
    )

    def fn(g):
        if lead:
            g = g.sum(axis=tuple(range(lead)))
        if kept:
            g = g.sum(axis=tuple(k - lead for k in kept), keepdims=True)
        return (g,)

    return _node(out, (x,), fn, "expand")


def _getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]
    advanced = _is_advanced(index)
    return _node(
        np.array(out, dtype=np.float64),
        (x,),
        lambda g: (_Scatter(index, g, advanced),),
        "getitem",
    )


def _is_advanced(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {table.shape}")
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)].reshape(-1)[0]
        raise VocabularyError(f"token id {int(bad)} outside [0, {vocab})")
    out = table.data[ids] if ids.size else np.zeros(ids.shape + (table.shape[1],))
    return _node(out, (table,), lambda g: (_Scatter(ids, g, True),), "embedding")


def gather_cols(x: Tensor, idx) -> Tensor:
    """``out[r, t] = x[r, idx[r, t]]`` for a 2-D ``x``."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.ndim != 2 or idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise DimensionError(f"gather_cols: bad shapes {x.shape} and {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise DimensionError("gather_cols: column index out of range")
    rows = np.arange(x.shape[0])[:, None]
    index = (np.broadcast_to(rows, idx.shape), idx)
    return _node(x.data[index], (x,), lambda g: (_Scatter(index, g, True),), "gather")


def segment_sum(x: Tensor, segments, num_segments: int, mask=None) -> Tensor:
    """Sum rows of ``x[b, i, :]`` into ``out[b, segments[b, i], :]``.

    Positions with a false ``mask`` contribute nothing.
    """
    seg = np.asarray(segments, dtype=np.int64)
    if x.ndim != 3 or seg.shape != x.shape[:2]:
        raise DimensionError(f"segment_sum: bad shapes {x.shape} and {seg.shape}")
    keep = np.ones(seg.shape, bool) if mask is None else np.asarray(mask, bool)
    assign = (seg[:, None, :] == np.arange(num_segments)[None, :, None]) & keep[:, None, :]
    assign = assign.astype(np.float64)
    return _node(
        np.matmul(assign, x.data),
        (x,),
        lambda g: (np.matmul(assign.transpose(0, 2, 1), g),),
        "segment_sum",
    )


# ---------------------------------------------------------------------------
# verification


def grad_check(
    f: Callable[[Tensor], Tensor], x, h: float = 1e-5
) -> float:
    """Max relative error between the tape gradient and central differences.

    The relative error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(base, requires_grad=True)
    out = f(leaf)
    backward(out)
    analytic = leaf.grad.reshape(-1)

    probe = base.copy()
    flat = probe.reshape(-1)
    numeric = np.empty_like(analytic)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = f(Tensor(probe)).item()
        flat[k] = orig - h
        down = f(Tensor(probe)).item()
        flat[k] = orig
        numeric[k] = (up - down) / (2.0 * h)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def leaves_of(out: Tensor) -> Iterable[Tensor]:
    return Tape.from_output(out).leaves()
