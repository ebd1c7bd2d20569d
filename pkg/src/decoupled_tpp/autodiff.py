"""Reverse-mode automatic differentiation over a dynamic tape of array ops.

Values are float64 numpy arrays wrapped in :class:`Var`. Each primitive op
records its parents and a local vector-Jacobian product; :func:`backward`
replays the tape once in reverse topological order. The op set is deliberately
small: dense-chain MLP application (backed by the kernel backends), softplus,
elementwise arithmetic, reductions, gathers/scatters, and log-softmax — enough
to express event-sequence likelihoods without generic broadcasting machinery.

Long solver loops can be wrapped in :func:`checkpoint`, which stores only the
inputs of a sub-computation and re-runs it during the backward pass.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from . import kernels

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable taping inside the block; ops return plain constant Vars."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Var:
    """A node on the tape: a float64 array plus, when taped, its provenance."""

    __slots__ = ("value", "parents", "vjp", "requires_grad", "grad", "name")

    # make numpy defer to our reflected operators instead of broadcasting
    __array_ufunc__ = None

    def __init__(
        self,
        value,
        parents: tuple["Var", ...] = (),
        vjp: Callable | None = None,
        requires_grad: bool = False,
        name: str | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = self.name or ("leaf" if not self.parents else "op")
        return f"Var({tag}, shape={self.value.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; everything routes through the module-level primitives.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("Var/Var division is not a tape primitive")
        return mul(self, 1.0 / other)

    def backward(self, seed=None) -> None:
        backward(self, seed)


def parameter(value, name: str | None = None) -> Var:
    """A trainable leaf."""
    return Var(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def constant(value) -> Var:
    return Var(value)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def raw(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _taped(*xs: Var) -> bool:
    return _GRAD_ENABLED and any(x.requires_grad for x in xs)


def _make(value, parents, vjp) -> Var:
    if _taped(*parents):
        return Var(value, parents=parents, vjp=vjp, requires_grad=True)
    return Var(value)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return _make(out, (a, b), vjp)


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value * b.value

    def vjp(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return _make(out, (a, b), vjp)


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value @ b.value

    def vjp(g):
        return g @ b.value.T, a.value.T @ g

    return _make(out, (a, b), vjp)


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)

    def vjp(g):
        return (g * out,)

    return _make(out, (a,), vjp)


def log(a) -> Var:
    a = as_var(a)
    out = np.log(a.value)

    def vjp(g):
        return (g / a.value,)

    return _make(out, (a,), vjp)


def tanh(a) -> Var:
    a = as_var(a)
    out = np.tanh(a.value)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), vjp)


def softplus(a) -> Var:
    a = as_var(a)
    out = kernels.softplus(a.value)

    def vjp(g):
        return (kernels.softplus_grad(a.value, g),)

    return _make(out, (a,), vjp)


def maximum(a, floor: float) -> Var:
    """Elementwise max with a constant; gradient flows only where a > floor."""
    a = as_var(a)
    out = np.maximum(a.value, floor)

    def vjp(g):
        return (np.where(a.value > floor, g, 0.0),)

    return _make(out, (a,), vjp)


def total(a) -> Var:
    """Sum of all entries, as a scalar Var."""
    a = as_var(a)
    out = a.value.sum()

    def vjp(g):
        return (np.broadcast_to(np.asarray(g), a.value.shape).copy(),)

    return _make(out, (a,), vjp)


def sum_axis(a, axis: int, keepdims: bool = False) -> Var:
    a = as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return _make(out, (a,), vjp)


def mean(a) -> Var:
    a = as_var(a)
    return total(a) / a.value.size


def concat_cols(parts: Sequence) -> Var:
    parts = [as_var(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=1)
    widths = [p.value.shape[1] for p in parts]
    edges = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, edges[i] : edges[i + 1]] for i in range(len(parts)))

    return _make(out, tuple(parts), vjp)


def concat_rows(parts: Sequence) -> Var:
    parts = [as_var(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=0)
    counts = [p.value.shape[0] for p in parts]
    edges = np.cumsum([0] + counts)

    def vjp(g):
        return tuple(g[edges[i] : edges[i + 1]] for i in range(len(parts)))

    return _make(out, tuple(parts), vjp)


def slice_cols(a, start: int, stop: int) -> Var:
    a = as_var(a)
    out = a.value[:, start:stop]

    def vjp(g):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        return (full,)

    return _make(out, (a,), vjp)


def slice_rows(a, start: int, stop: int) -> Var:
    a = as_var(a)
    out = a.value[start:stop]

    def vjp(g):
        full = np.zeros_like(a.value)
        full[start:stop] = g
        return (full,)

    return _make(out, (a,), vjp)


def gather_rows(a, index: np.ndarray) -> Var:
    """Select rows by integer index (rows may repeat)."""
    a = as_var(a)
    index = np.asarray(index, dtype=np.intp)
    out = a.value[index]

    def vjp(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (a,), vjp)


def segment_sum(a, segment_ids: np.ndarray, num_segments: int) -> Var:
    """Sum rows of a into num_segments buckets given per-row bucket ids."""
    a = as_var(a)
    segment_ids = np.asarray(segment_ids, dtype=np.intp)
    out = np.zeros((num_segments,) + a.value.shape[1:], dtype=np.float64)
    np.add.at(out, segment_ids, a.value)

    def vjp(g):
        return (g[segment_ids],)

    return _make(out, (a,), vjp)


def take_per_row(a, cols: np.ndarray) -> Var:
    """out[m] = a[m, cols[m]] for a 2-D input."""
    a = as_var(a)
    cols = np.asarray(cols, dtype=np.intp)
    rows = np.arange(a.value.shape[0])
    out = a.value[rows, cols]

    def vjp(g):
        full = np.zeros_like(a.value)
        full[rows, cols] = g
        return (full,)

    return _make(out, (a,), vjp)


def reshape(a, shape) -> Var:
    a = as_var(a)
    out = a.value.reshape(shape)

    def vjp(g):
        return (g.reshape(a.value.shape),)

    return _make(out, (a,), vjp)


def log_softmax(a) -> Var:
    """Row-wise log softmax, numerically stable."""
    a = as_var(a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse

    def vjp(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _make(out, (a,), vjp)


def mlp(x, weights: Sequence, biases: Sequence, activation: str = "tanh") -> Var:
    """Apply a dense chain as a single fused tape node.

    weights/biases may be Vars (trainable) or arrays; the last layer is linear
    and hidden layers use the given activation.
    """
    x = as_var(x)
    ws = [as_var(w) for w in weights]
    bs = [as_var(b) for b in biases]
    w_vals = [w.value for w in ws]
    b_vals = [b.value for b in bs]
    out, acts = kernels.mlp_forward(x.value, w_vals, b_vals, activation)

    def vjp(g):
        dx, dws, dbs = kernels.mlp_backward(g, acts, w_vals, activation)
        return (dx, *dws, *dbs)

    return _make(out, (x, *ws, *bs), vjp)


def embedding_lookup(table, marks: np.ndarray) -> Var:
    """Rows of an embedding table selected by mark index."""
    return gather_rows(table, marks)


def checkpoint(fn: Callable, *inputs) -> Var:
    """Run fn(*inputs) without taping; re-run it with taping during backward.

    fn must be a pure function of its inputs returning a single Var. Memory
    stays proportional to the inputs/outputs instead of the inner tape.
    """
    inputs = tuple(as_var(x) for x in inputs)
    if not _taped(*inputs):
        with no_grad():
            return as_var(fn(*inputs))
    with no_grad():
        out_value = raw(fn(*inputs))

    def vjp(g):
        locals_ = [
            Var(x.value, requires_grad=x.requires_grad, name=x.name) for x in inputs
        ]
        out = fn(*locals_)
        backward(out, seed=g)
        return tuple(
            x.grad if x.grad is not None else np.zeros_like(x.value) for x in locals_
        )

    return Var(out_value, parents=inputs, vjp=vjp, requires_grad=True)


# ---------------------------------------------------------------------------
# backward pass


def backward(root: Var, seed=None) -> None:
    """Accumulate gradients of root into .grad of every reachable Var.

    root must be on the current tape (requires_grad). The default seed is 1
    for scalar losses; non-scalar roots need an explicit seed of their shape.
    """
    if not root.requires_grad:
        raise ValueError("backward called on a Var that is not on the tape")
    if seed is None:
        if root.value.size != 1:
            raise ValueError("non-scalar backward root needs an explicit seed")
        seed = np.ones_like(root.value)
    order: list[Var] = []
    visited: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad:
                stack.append((p, False))
    for node in order:
        node.grad = None
    root.grad = np.asarray(seed, dtype=np.float64).reshape(root.value.shape)
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        parent_grads = node.vjp(node.grad)
        for p, g in zip(node.parents, parent_grads):
            if not p.requires_grad or g is None:
                continue
            if p.grad is None:
                p.grad = np.array(g, dtype=np.float64)
            else:
                p.grad = p.grad + g


def collect_grads(params: Sequence[Var]) -> list[np.ndarray]:
    """Gradients per parameter after a backward pass; unreachable ones are zero."""
    return [
        p.grad if p.grad is not None else np.zeros_like(p.value) for p in params
    ]


def finite_difference(fn: Callable[[], float], arrays: Sequence[np.ndarray], eps: float = 1e-5):
    """Central finite differences of a scalar function w.r.t. given arrays.

    fn re-reads the arrays on every call, so perturbations are done in place.
    Used as the independent oracle for gradient tests.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = fn()
            flat[i] = keep - eps
            down = fn()
            flat[i] = keep
            gflat[i] = (up - down) / (2.0 * eps)
        grads.append(g)
    return grads
