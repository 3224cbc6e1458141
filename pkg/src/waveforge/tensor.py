"""Dense float64 tensors with reverse-mode differentiation.

Every backward rule is itself written with differentiable tensor ops, so a
backward pass run with ``create_graph=True`` records onto the graph and can be
differentiated again.  That is the one level of nesting the gradient penalty
needs; nothing here tries to be a general higher-order system.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "TapeConsumedError",
    "tensor",
    "zeros_like",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scalar_mul",
    "power",
    "exp",
    "log",
    "sqrt",
    "reduce_sum",
    "reduce_mean",
    "expand",
    "reshape",
    "transpose",
    "matmul",
    "crop",
    "pad",
    "take_rows",
    "scatter_rows",
    "linear_along_axis",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class TapeConsumedError(RuntimeError):
    """Backward was run twice through a graph recorded only once."""


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextmanager
def _grad_mode(enabled: bool):
    prev = is_grad_enabled()
    _state.enabled = enabled
    try:
        yield
    finally:
        _state.enabled = prev


class Node:
    """One recorded primitive: its inputs and the vector-Jacobian product."""

    __slots__ = ("inputs", "vjp", "op", "consumed")

    def __init__(self, inputs: tuple["Tensor", ...], vjp: Callable, op: str):
        self.inputs = inputs
        self.vjp = vjp
        self.op = op
        self.consumed = False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if any(d < 1 for d in arr.shape):
            raise ShapeError("tensor", arr.shape)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros_like(t.data))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(tuple(inputs), vjp, op)
    return out


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise ShapeError(op, a.shape, b.shape)


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    # only scalar-with-tensor broadcasting exists
    if g.shape == shape:
        return g
    return reduce_sum(g)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("add", a, b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("sub", a, b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)),
        "sub",
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (neg(g),), "neg")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("mul", a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(mul(g, b), a.shape) if a.requires_grad else None,
            _unbroadcast(mul(g, a), b.shape) if b.requires_grad else None,
        ),
        "mul",
    )


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (scalar_mul(g, c),), "scalar_mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("div", a, b)
    out_data = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(div(g, b), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _make(out_data, (a, b), vjp, "div")


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    if p == 1.0:
        return a
    return _make(
        a.data**p,
        (a,),
        lambda g: (mul(g, scalar_mul(power(a, p - 1.0), p)),),
        "power",
    )


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def vjp(g):
        return (mul(g, exp(a)),)

    return _make(out_data, (a,), vjp, "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (div(g, a),), "log")


def sqrt(a: Tensor) -> Tensor:
    """Square root whose derivative at exactly zero is taken as zero."""
    out_data = np.sqrt(a.data)
    live = (out_data > 0).astype(np.float64)

    def vjp(g):
        # 1 / (2 sqrt(a)) on the live set, 0 where sqrt(a) == 0
        denom = scalar_mul(add(sqrt(a), Tensor(1.0 - live)), 2.0)
        return (mul(div(g, denom), Tensor(live)),)

    return _make(out_data, (a,), vjp, "sqrt")


# ---------------------------------------------------------------- reductions


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out_data = np.sum(a.data, axis=axes, keepdims=keepdims)
    kept_shape = tuple(1 if i in axes else d for i, d in enumerate(a.shape))

    def vjp(g):
        if not keepdims:
            g = reshape(g, kept_shape)
        return (expand(g, a.shape),)

    return _make(np.asarray(out_data), (a,), vjp, "reduce_sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return scalar_mul(reduce_sum(a, axes, keepdims), 1.0 / count)


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Broadcast size-1 axes of ``a`` up to ``shape`` (ranks must match)."""
    shape = tuple(shape)
    if a.shape == shape:
        return a
    if a.ndim != len(shape) or any(s != 1 and s != t for s, t in zip(a.shape, shape)):
        raise ShapeError("expand", a.shape, shape)
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)
    out_data = np.broadcast_to(a.data, shape).copy()
    return _make(
        out_data, (a,), lambda g: (reduce_sum(g, axes, keepdims=True),), "expand"
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out_data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    src = a.shape
    return _make(out_data, (a,), lambda g: (reshape(g, src),), "reshape")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(
        np.ascontiguousarray(np.transpose(a.data, axes)),
        (a,),
        lambda g: (transpose(g, inv),),
        "transpose",
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def vjp(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), vjp, "matmul")


# ---------------------------------------------------------------- indexing


def crop(a: Tensor, starts: Sequence[int], sizes: Sequence[int]) -> Tensor:
    """Copy the box ``[starts, starts + sizes)`` over the trailing axes."""
    lead = a.ndim - len(starts)
    index = (slice(None),) * lead + tuple(
        slice(s, s + n) for s, n in zip(starts, sizes)
    )
    if any(s < 0 or s + n > d for s, n, d in zip(starts, sizes, a.shape[lead:])):
        raise ShapeError("crop", a.shape, tuple(sizes))
    before = tuple(starts)
    after = tuple(d - s - n for s, n, d in zip(starts, sizes, a.shape[lead:]))
    return _make(
        a.data[index].copy(), (a,), lambda g: (pad(g, before, after),), "crop"
    )


def pad(a: Tensor, before: Sequence[int], after: Sequence[int]) -> Tensor:
    """Zero-pad the trailing axes; the adjoint of :func:`crop`."""
    lead = a.ndim - len(before)
    widths = [(0, 0)] * lead + list(zip(before, after))
    sizes = a.shape[lead:]
    return _make(
        np.pad(a.data, widths),
        (a,),
        lambda g: (crop(g, before, sizes),),
        "pad",
    )


def take_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """``table[index]`` along axis 0 (embedding lookup)."""
    index = np.asarray(index, dtype=np.int64)
    n = table.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"row index out of range for table with {n} rows")
    return _make(
        table.data[index],
        (table,),
        lambda g: (scatter_rows(g, index, n),),
        "take_rows",
    )


def scatter_rows(src: Tensor, index: np.ndarray, n_rows: int) -> Tensor:
    """Sum rows of ``src`` into a zero table of ``n_rows`` rows at ``index``."""
    out = np.zeros((n_rows,) + src.shape[1:])
    np.add.at(out, index, src.data)
    return _make(out, (src,), lambda g: (take_rows(g, index),), "scatter_rows")


def linear_along_axis(a: Tensor, matrix: np.ndarray, axis: int) -> Tensor:
    """Apply a fixed matrix ``M`` (out x in) along one axis of ``a``."""
    matrix = np.asarray(matrix, dtype=np.float64)
    axis = axis % a.ndim
    if a.shape[axis] != matrix.shape[1]:
        raise ShapeError("linear_along_axis", a.shape, matrix.shape)
    moved = np.moveaxis(a.data, axis, -1) @ matrix.T
    out_data = np.ascontiguousarray(np.moveaxis(moved, -1, axis))
    return _make(
        out_data,
        (a,),
        lambda g: (linear_along_axis(g, matrix.T, axis),),
        "linear_along_axis",
    )


# ---------------------------------------------------------------- backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def _run_backward(
    root: Tensor,
    seed: Tensor,
    create_graph: bool,
    retain_graph: bool,
) -> tuple[dict[int, Tensor], list[Tensor]]:
    order = _topo_order(root)
    grads: dict[int, Tensor] = {id(root): seed}
    with _grad_mode(create_graph):
        for t in reversed(order):
            g = grads.get(id(t))
            node = t.node
            if g is None or node is None:
                continue
            if node.consumed:
                raise TapeConsumedError(
                    f"graph through '{node.op}' was already used by a backward pass; "
                    "re-run the forward computation or pass retain_graph=True"
                )
            parent_grads = node.vjp(g)
            if not retain_graph:
                node.consumed = True
            for parent, pg in zip(node.inputs, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else add(prev, pg)
    return grads, order


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.size != 1:
        raise ShapeError("backward (loss must be scalar)", loss.shape)
    if not loss.requires_grad:
        return
    seed = Tensor(np.ones_like(loss.data))
    grads, order = _run_backward(loss, seed, False, retain_graph)
    for leaf in order:
        g = grads.get(id(leaf))
        if leaf.node is not None or g is None:
            continue
        leaf.grad = g.data.copy() if leaf.grad is None else leaf.grad + g.data


def grad(
    output: Tensor,
    inputs: Iterable[Tensor],
    grad_output: Tensor | None = None,
    create_graph: bool = False,
    retain_graph: bool | None = None,
) -> list[Tensor]:
    """Return gradients of ``output`` w.r.t. ``inputs`` without touching ``.grad``.

    With ``create_graph=True`` the returned tensors carry their own graph and
    can be fed to :func:`backward` (gradient-of-gradient).
    """
    inputs = list(inputs)
    if grad_output is None:
        if output.size != 1:
            raise ShapeError("grad (output must be scalar)", output.shape)
        grad_output = Tensor(np.ones_like(output.data))
    elif grad_output.shape != output.shape:
        raise ShapeError("grad", output.shape, grad_output.shape)
    if retain_graph is None:
        retain_graph = create_graph
    if not output.requires_grad:
        return [Tensor(np.zeros_like(t.data)) for t in inputs]
    grads, _ = _run_backward(output, grad_output, create_graph, retain_graph)
    out = []
    for t in inputs:
        g = grads.get(id(t))
        out.append(g if g is not None else Tensor(np.zeros_like(t.data)))
    return out
