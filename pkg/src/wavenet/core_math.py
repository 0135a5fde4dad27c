"""Dense float64 tensors with reverse-mode automatic differentiation.

Every array the model touches is a :class:`Tensor`. Operations record their
inputs and a backward rule when gradient tracking is on; ``Tensor.backward``
walks that graph in reverse topological order. The graph lives only as long
as the tensors that reference it, so each forward pass builds a fresh tape.
"""

from __future__ import annotations

import contextlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ShapeError

log = logging.getLogger(__name__)

# Added under the square root in sqrt's derivative, so d/dx sqrt(0) stays finite.
SQRT_EPS = 1e-12
LN_EPS = 1e-5
DIV_EPS = 1e-12

# Counts of recoverable numeric events (empty reductions, eps-guarded divisions).
telemetry: Counter[str] = Counter()

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 array that can take part in gradient tracking.

    Extended-precision (``np.longdouble``) data is kept as is so that
    :func:`grad_check` can evaluate losses with less rounding; everything
    else is stored as float64.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    # Make ``ndarray <op> Tensor`` defer to the Tensor's reflected operator.
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        data = np.asarray(data)
        self.data = data if data.dtype == np.longdouble else data.astype(np.float64, copy=False)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dims(self) -> list[int]:
        return list(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() on a non-scalar tensor needs an explicit gradient")
            grad = np.ones_like(self.data)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(_topo_order(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

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

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _topo_order(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible dims {a.dims} and {b.dims}") from None


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    """a / b, with exact zeros in ``b`` replaced by DIV_EPS."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "div")
    zero = b.data == 0
    if zero.any():
        telemetry["div_by_zero_guarded"] += int(zero.sum())
        denom = np.where(zero, DIV_EPS, b.data)
    else:
        denom = b.data
    out = a.data / denom

    def backward(g):
        return _unbroadcast(g / denom, a.shape), _unbroadcast(-g * out / denom, b.shape)

    return _result(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def sqrt(a) -> Tensor:
    """Square root of a nonnegative tensor.

    The forward value is exact; the derivative uses 1 / (2 sqrt(x + SQRT_EPS))
    so it stays finite at x = 0.
    """
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        return (g * 0.5 / np.sqrt(a.data + SQRT_EPS),)

    return _result(out, (a,), backward)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def clamp_min(a, c: float = 0.0) -> Tensor:
    """max(a, c); the gradient is passed only where a > c."""
    a = as_tensor(a)
    keep = a.data > c
    return _result(np.where(keep, a.data, c), (a,), lambda g: (g * keep,))


def relu(a) -> Tensor:
    return clamp_min(a, 0.0)


_EW_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}
_EW_UNARY = {"sqrt": sqrt, "square": square, "neg": neg, "relu": relu}


def ew(op: str, a, b=None, *, c: float = 0.0) -> Tensor:
    """Dispatch an elementwise op by name (``relu_clamp_min`` takes ``c``)."""
    if op in _EW_BINARY:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return _EW_BINARY[op](a, b)
    if op in _EW_UNARY:
        return _EW_UNARY[op](a)
    if op == "relu_clamp_min":
        return clamp_min(a, c)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- linear algebra and shape ops ----------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may carry leading batch axes; ``b`` is either a plain matrix shared
    across the batch or has the same batch axes as ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible dims {a.dims} and {b.dims}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ in {a.dims} and {b.dims}")
    shared = b.ndim == 2
    if shared:
        # one large GEMM instead of numpy's per-batch loop
        k, p = b.shape
        out = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (p,))
    else:
        out = a.data @ b.data

    def backward(g):
        if shared:
            ga = (g.reshape(-1, p) @ b.data.T).reshape(a.shape)
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, p)
        else:
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _result(out, (a, b), backward)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible dims {[t.dims for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return np.split(g, bounds, axis=axis)

    return _result(out, ts, backward)


def embedding(table, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` (vocab x d) at integer ``ids`` of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids)

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _result(table.data[ids], (table,), backward)


# -- reductions ----------------------------------------------------------------


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _result(out, (a,), backward)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis, keepdims), 1.0 / n)


def max(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Maximum; ties share the incoming gradient equally."""
    a = as_tensor(a)
    out_k = a.data.max(axis=axis, keepdims=True)
    hit = a.data == out_k
    share = hit / hit.sum(axis=axis, keepdims=True)
    if keepdims:
        out = out_k
    else:
        out = out_k.reshape(()) if axis is None else out_k.squeeze(axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis) if axis is not None else np.reshape(g, (1,) * a.ndim)
        return (g * share,)

    return _result(out, (a,), backward)


def masked_mean(a, weights: np.ndarray, axis: int) -> Tensor:
    """Weighted mean along ``axis``; ``weights`` broadcast against ``a``.

    A slice whose weights sum to zero yields 0 with zero gradient and is
    counted under ``telemetry['empty_reduction']``.
    """
    a = as_tensor(a)
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), a.shape)
    total = w.sum(axis=axis, keepdims=True)
    empty = total == 0
    if empty.any():
        telemetry["empty_reduction"] += int(empty.sum())
        log.warning("masked_mean over %d empty slice(s)", int(empty.sum()))
    scale = np.where(empty, 0.0, w / np.where(empty, 1.0, total))
    out = (a.data * scale).sum(axis=axis)

    def backward(g):
        return (np.expand_dims(g, axis) * scale,)

    return _result(out, (a,), backward)


def reduce(op: str, a, axis: int | None = None, weights: np.ndarray | None = None) -> Tensor:
    """Dispatch a reduction by name; ``mean`` with ``weights`` is a masked mean."""
    a = as_tensor(a)
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"reduce: axis {axis} out of range for dims {a.dims}")
    if op == "sum":
        return sum(a, axis)
    if op == "mean":
        if weights is not None:
            return masked_mean(a, weights, axis if axis is not None else -1)
        return mean(a, axis)
    if op == "max":
        return max(a, axis)
    raise ValueError(f"unknown reduction {op!r}")


# -- fused layers --------------------------------------------------------------


def layer_norm(a, gain, bias, eps: float = LN_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.dims} / bias {bias.dims} vs width {d}")
    xc = a.data - a.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        dxhat = g * gain.data
        da = inv / d * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        lead = tuple(range(a.ndim - 1))
        return da, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gain.data + bias.data, (a, gain, bias), backward)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross entropy: logits {logits.dims} vs labels {list(labels.shape)}")
    n_classes = logits.shape[1]
    bad = np.flatnonzero((labels < 0) | (labels >= n_classes))
    if bad.size:
        raise ValueError(f"labels out of range [0, {n_classes}) at positions {bad.tolist()}")
    b = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    total = ez.sum(axis=1, keepdims=True)
    rows = np.arange(b)
    loss = (np.log(total[:, 0]) - z[rows, labels]).mean()

    def backward(g):
        grad = ez / total
        grad[rows, labels] -= 1.0
        return (grad * (g / b),)

    return _result(np.asarray(loss), (logits,), backward)


def dropout(a, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    a = as_tensor(a)
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _result(a.data * keep, (a,), lambda g: (g * keep,))


# -- verification --------------------------------------------------------------


@dataclass
class GradCheckReport:
    h: float
    max_rel_err: dict[str, float] = field(default_factory=dict)
    aborted: str | None = None

    @property
    def worst(self) -> float:
        return float(np.max(list(self.max_rel_err.values()))) if self.max_rel_err else 0.0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.aborted is None and self.worst < tol


def relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    extended: bool = True,
) -> GradCheckReport:
    """Compare backprop gradients of scalar ``f()`` with central differences.

    ``f`` must be deterministic and read the current values of ``params``.
    With ``max_entries`` set, a seeded sample of that many entries per
    parameter is checked instead of every entry.

    The analytic gradient is always computed in float64. With ``extended``
    the perturbed losses are evaluated with the parameters lifted to
    ``np.longdouble``: in float64 the difference quotient carries about
    ulp(f)/h ~ 1e-11 of rounding noise, which swamps the relative error of
    entries whose true gradient is below ~1e-7. Where longdouble is plain
    double (some ARM and Windows builds) this changes nothing.
    """
    report = GradCheckReport(h=h)
    for p in params.values():
        p.grad = None
    out = f()
    if not np.isfinite(out.data).all():
        report.aborted = "non-finite loss at the base point"
        return report
    out.backward()
    rng = np.random.default_rng(seed)
    saved = {name: p.data for name, p in params.items()}
    if extended:
        for p in params.values():
            p.data = p.data.astype(np.longdouble)
    try:
        with no_grad():
            for name, p in params.items():
                analytic = p.grad if p.grad is not None else np.zeros(p.shape)
                flat = p.data.reshape(-1)
                idx = np.arange(flat.size)
                if max_entries is not None and flat.size > max_entries:
                    idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
                numeric = np.empty(idx.size)
                for j, i in enumerate(idx):
                    orig = flat[i]
                    flat[i] = orig + h
                    fp = f().data.reshape(-1)[0]
                    flat[i] = orig - h
                    fm = f().data.reshape(-1)[0]
                    flat[i] = orig
                    if not (np.isfinite(fp) and np.isfinite(fm)):
                        report.aborted = f"non-finite loss while perturbing {name}[{i}]"
                        return report
                    numeric[j] = (fp - fm) / (2 * h)
                errs = relative_error(analytic.reshape(-1)[idx], numeric)
                report.max_rel_err[name] = float(errs.max()) if errs.size else 0.0
    finally:
        for name, p in params.items():
            p.data = saved[name]
    return report
