"""Dense-tensor reverse-mode automatic differentiation on numpy arrays.

Every value is a float64 ``Tensor``. Operations build a computation graph by
recording, on each result, its parent tensors and a closure that pushes the
incoming gradient to them. ``backward`` walks the graph in reverse
topological order exactly once, so gradients accumulate additively across
fan-out. Graph construction order is creation order, which is already
topological; no global tape is kept, so independent graphs never share
mutable state.

Only the operations the relation-extraction model actually needs are
provided. Binary elementwise ops require equal shapes or a scalar on one
side; there is no general broadcasting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf, expit

from .errors import DomainError, ShapeError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode autodiff.

    ``grad`` stays ``None`` until a backward pass touches the tensor. For
    leaf tensors gradients accumulate additively across backward calls;
    zeroing between optimizer steps is the caller's job (``zero_grad``).
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op: str = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; numbers are treated as scalar constants.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], op: str,
          backward: Callable[[np.ndarray], None]) -> Tensor:
    """Build a graph node; collapses to a constant when no parent needs grad."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = parents
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are neither equal "
                     "nor scalar-broadcastable")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    # Undo scalar broadcasting: a scalar operand absorbs the full gradient sum.
    if t.shape == g.shape:
        return g
    return np.sum(g).reshape(t.shape)


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")

    def backward(g):
        _accumulate(a, _reduce_to(g, a))
        _accumulate(b, _reduce_to(g, b))

    return _node(a.data + b.data, (a, b), "add", backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")

    def backward(g):
        _accumulate(a, _reduce_to(g, a))
        _accumulate(b, _reduce_to(-g, b))

    return _node(a.data - b.data, (a, b), "sub", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")

    def backward(g):
        _accumulate(a, _reduce_to(g * b.data, a))
        _accumulate(b, _reduce_to(g * a.data, b))

    return _node(a.data * b.data, (a, b), "mul", backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        _accumulate(a, g * c)

    return _node(a.data * c, (a,), "scale", backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - y * y))

    return _node(y, (a,), "tanh", backward)


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)

    def backward(g):
        _accumulate(a, g * y * (1.0 - y))

    return _node(y, (a,), "sigmoid", backward)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * y)

    return _node(y, (a,), "exp", backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError(f"log: input has non-positive entries (min {a.data.min()})")

    def backward(g):
        _accumulate(a, g / a.data)

    return _node(np.log(a.data), (a,), "log", backward)


def gelu(a: Tensor) -> Tensor:
    # Exact erf form; derivative 0.5*(1+erf(x/sqrt 2)) + x*pdf(x).
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))

    def backward(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
        _accumulate(a, g * (cdf + a.data * pdf))

    return _node(a.data * cdf, (a,), "gelu", backward)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    y = np.clip(a.data, lo, hi)

    def backward(g):
        _accumulate(a, g * ((a.data > lo) & (a.data < hi)))

    return _node(y, (a,), "clip", backward)


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: both operands must be 2-D, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), "matmul", backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {a.shape}")

    def backward(g):
        _accumulate(a, g.T)

    return _node(a.data.T.copy(), (a,), "transpose", backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), "reshape", backward)


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather slices along ``axis``; backward scatter-adds (repeats accumulate)."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"take: indices must be 1-D, got shape {idx.shape}")

    def backward(g):
        if not a.requires_grad:
            return
        buf = np.zeros_like(a.data)
        np.add.at(buf, (slice(None),) * axis + (idx,), g)
        _accumulate(a, buf)

    return _node(np.take(a.data, idx, axis=axis), (a,), "take", backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = tuple(tensors)
    if not ts:
        raise ShapeError("stack: need at least one tensor")
    first = ts[0].shape
    for t in ts[1:]:
        if t.shape != first:
            raise ShapeError(f"stack: mismatched shapes {first} and {t.shape}")

    def backward(g):
        for i, t in enumerate(ts):
            _accumulate(t, np.take(g, i, axis=axis))

    return _node(np.stack([t.data for t in ts], axis=axis), ts, "stack", backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a vector to the last axis of ``x`` (the one sanctioned broadcast)."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")

    def backward(g):
        _accumulate(x, g)
        _accumulate(b, g.reshape(-1, b.shape[0]).sum(axis=0))

    return _node(x.data + b.data, (x, b), "add_bias", backward)


# ---------------------------------------------------------------------------
# reductions


def _check_axis(a: Tensor, axis: int, op: str) -> int:
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for shape {a.shape}")
    axis %= a.data.ndim
    if a.shape[axis] == 0:
        raise ShapeError(f"{op}: empty reduction axis {axis} in shape {a.shape}")
    return axis


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        def backward(g):
            _accumulate(a, np.broadcast_to(g, a.shape).copy())

        return _node(a.data.sum(), (a,), "sum", backward)

    axis = _check_axis(a, axis, "sum")

    def backward(g):
        _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _node(a.data.sum(axis=axis), (a,), "sum", backward)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = a.data.size
        return scale(sum_(a), 1.0 / n)
    axis = _check_axis(a, axis, "mean")
    return scale(sum_(a, axis), 1.0 / a.shape[axis])


def amax(a: Tensor, axis: int) -> Tensor:
    """Max along one axis; the gradient flows to the first argmax entry."""
    axis = _check_axis(a, axis, "amax")
    out = a.data.max(axis=axis)
    arg = a.data.argmax(axis=axis)

    def backward(g):
        if not a.requires_grad:
            return
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, np.expand_dims(arg, axis),
                          np.expand_dims(g, axis), axis=axis)
        _accumulate(a, buf)

    return _node(out, (a,), "amax", backward)


def logsumexp(a: Tensor, axis: int) -> Tensor:
    """Stable ``log(sum(exp(x)))`` along one axis, via max subtraction."""
    axis = _check_axis(a, axis, "logsumexp")
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)

    def backward(g):
        _accumulate(a, np.expand_dims(g, axis) * (e / s))

    return _node(out, (a,), "logsumexp", backward)


def softmax(a: Tensor, axis: int) -> Tensor:
    axis = _check_axis(a, axis, "softmax")
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(a, y * (g - inner))

    return _node(y, (a,), "softmax", backward)


def normalize_sum(a: Tensor, axis: int) -> Tensor:
    """Divide by the sum along ``axis`` so slices become distributions."""
    axis = _check_axis(a, axis, "normalize_sum")
    s = a.data.sum(axis=axis, keepdims=True)
    if np.any(s <= 0.0):
        raise DomainError(f"normalize_sum: non-positive slice sum (min {s.min()})")
    y = a.data / s

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(a, (g - inner) / s)

    return _node(y, (a,), "normalize_sum", backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward(g):
        _accumulate(beta, g.reshape(-1, d).sum(axis=0))
        _accumulate(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        gx = g * gamma.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * (gx - m1 - xhat * m2))

    return _node(gamma.data * xhat + beta.data, (x, gamma, beta), "layer_norm", backward)


# ---------------------------------------------------------------------------
# backward driver


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative post-order DFS; only grad-relevant nodes are ever linked.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``root``.

    ``root`` must be a scalar. Interior node gradients are rebuilt from
    scratch; leaf gradients accumulate until explicitly zeroed.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    for node in order:
        if node._backward is not None:
            node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# finite-difference gradient checking


@dataclass
class GradCheckReport:
    """Per-parameter comparison of analytic vs central-difference gradients."""

    tol: float
    step: float
    max_rel_err: dict[str, float] = field(default_factory=dict)
    worst_param: str = ""
    worst_err: float = 0.0
    checked: int = 0

    @property
    def passed(self) -> bool:
        return self.worst_err < self.tol

    def summary(self) -> str:
        lines = [f"{name}: max rel err {err:.3e}" for name, err in self.max_rel_err.items()]
        lines.append(f"worst: {self.worst_param} ({self.worst_err:.3e}), "
                     f"tol {self.tol:.1e} -> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def grad_check(f: Callable[[], Tensor], params: Mapping[str, Tensor],
               step: float = 1e-5, tol: float = 1e-4,
               samples_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must be deterministic given the current parameter values and is
    re-evaluated from scratch for every probe. ``samples_per_param`` limits
    probing to a random subset of entries per parameter (all entries when
    ``None``). Relative error uses ``|a - n| / max(|a| + |n|, 1e-3)`` so
    exact-zero gradients do not divide by zero.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for p in params.values():
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}

    report = GradCheckReport(tol=tol, step=step)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n_entries = flat.size
        if samples_per_param is None or samples_per_param >= n_entries:
            idxs = np.arange(n_entries)
        else:
            idxs = rng.choice(n_entries, size=samples_per_param, replace=False)
        worst = 0.0
        ana_flat = analytic[name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f().item()
            flat[i] = orig - step
            f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = ana_flat[i]
            err = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-3)
            if err > worst:
                worst = err
            report.checked += 1
        report.max_rel_err[name] = worst
        if worst >= report.worst_err:
            report.worst_err = worst
            report.worst_param = name
    return report
