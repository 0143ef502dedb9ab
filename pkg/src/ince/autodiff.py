"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Only the operations needed by the tabular encoders are provided: elementwise
arithmetic, (batched) matmul, relu, softmax, concatenation, stacking,
indexing/gather, reductions and the two training losses.

The graph is recorded dynamically: every op returns a :class:`Tensor` holding
its parents and a closure mapping the output gradient to parent gradients.
:meth:`Tensor.backward` walks the graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractViolation, NumericError

_DEBUG = False
_GRAD_ENABLED = True
_RELU_TRACE: list | None = None


def set_debug(flag: bool) -> None:
    """Enable NaN/Inf validation of every forward and backward result."""
    global _DEBUG
    _DEBUG = bool(flag)


@contextlib.contextmanager
def debug_numerics():
    global _DEBUG
    old = _DEBUG
    _DEBUG = True
    try:
        yield
    finally:
        _DEBUG = old


@contextlib.contextmanager
def no_grad():
    """Run ops without recording the graph (inference)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def _check_finite(arr: np.ndarray, op: str, phase: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value in {phase} of op '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float64 array that records how it was computed."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        if _DEBUG:
            _check_finite(data, op, "forward")
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
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

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{tag})"

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractViolation("division is only supported by constants")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    # -- differentiation ----------------------------------------------------

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring it."""
        if grad is None:
            if self.data.size != 1:
                raise ContractViolation(
                    f"backward() needs a scalar output, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.shape:
                raise ContractViolation("seed gradient shape differs from output shape")
        if not self.requires_grad:
            return
        order = topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if _DEBUG:
                    _check_finite(pg, node.op, "backward")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` with every parent before its children."""
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


# -- elementwise --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(ad * bd, (a, b), backward, "mul")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    if _RELU_TRACE is not None:
        _RELU_TRACE.append((mask, bool(np.any(x.data == 0))))

    def backward(g):
        return (g * mask,)

    return Tensor._make(x.data * mask, (x,), backward, "relu")


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """``np.matmul`` semantics for operands of rank >= 2, with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation("matmul operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            if ad.ndim == 2 and g.ndim > 2:
                # weight on the left (constant incidence case): sum over batch
                gm = np.moveaxis(g, -2, 0).reshape(g.shape[-2], -1)
                bm = np.moveaxis(np.broadcast_to(bd, g.shape[:-2] + bd.shape[-2:]), -2, 0)
                ga = gm @ bm.reshape(bd.shape[-2], -1).T
            else:
                ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2 and g.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return Tensor._make(np.matmul(ad, bd), (a, b), backward, "matmul")


# -- shape ops -----------------------------------------------------------------


def reshape(x: Tensor, shape: tuple) -> Tensor:
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return Tensor._make(x.data.reshape(shape), (x,), backward, "reshape")


def transpose(x: Tensor, axes: tuple | None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return Tensor._make(np.transpose(x.data, axes), (x,), backward, "transpose")


def expand(x: Tensor, shape: tuple) -> Tensor:
    """Broadcast ``x`` to ``shape``; gradients are summed back."""
    old = x.shape

    def backward(g):
        return (_unbroadcast(g, old),)

    return Tensor._make(np.broadcast_to(x.data, shape).copy(), (x,), backward, "expand")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._make(data, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    data = np.stack([t.data for t in tensors], axis=axis)
    return Tensor._make(data, tensors, backward, "stack")


def _is_basic_index(key) -> bool:
    items = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is None or k is Ellipsis for k in items)


def getitem(x: Tensor, key) -> Tensor:
    shape = x.shape
    basic = _is_basic_index(key)

    def backward(g):
        full = np.zeros(shape)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return Tensor._make(x.data[key], (x,), backward, "getitem")


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather entries along ``axis`` with a 1-D index array; repeats accumulate on the way back."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ContractViolation("take expects a 1-D index array")
    axis = axis % x.ndim
    n = x.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ContractViolation(f"gather index out of range [0, {n})")

    def backward(g):
        # one-hot matmul keeps the scatter-add on BLAS and deterministic
        onehot = np.zeros((n, idx.size))
        onehot[idx, np.arange(idx.size)] = 1.0
        gm = np.moveaxis(g, axis, 0)
        rest = gm.shape[1:]
        out = (onehot @ gm.reshape(idx.size, -1)).reshape((n,) + rest)
        return (np.moveaxis(out, 0, axis),)

    return Tensor._make(np.take(x.data, idx, axis=axis), (x,), backward, "take")


# -- reductions -----------------------------------------------------------------


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum_(x, axis, keepdims), 1.0 / count)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), backward, "softmax")


# -- losses -----------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of ``logits`` (B, C) against integer ``labels``."""
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ContractViolation("cross_entropy expects logits (B, C) and labels (B,)")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(labels))
    loss = np.mean(logsum - z[rows, labels])
    n = len(labels)

    def backward(g):
        p = np.exp(z - logsum[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return Tensor._make(np.asarray(loss), (logits,), backward, "cross_entropy")


def mse(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    diff = pred.data - target
    n = diff.size

    def backward(g):
        return (diff * (2.0 * g / n),)

    return Tensor._make(np.asarray(np.mean(diff * diff)), (pred,), backward, "mse")


# -- driver -------------------------------------------------------------------------


def forward_backward(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Return d(loss)/d(param) for every named parameter.

    Existing ``.grad`` buffers are cleared first, so the result reflects this
    loss only.  Parameters not reached by the graph get a zero gradient.
    """
    if loss.data.size != 1:
        raise ContractViolation(f"loss must be scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError(f"loss is not finite (op '{loss.op}')")
    for p in params.values():
        p.grad = None
    loss.backward()
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


# -- Adam -----------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> AdamState:
    """Apply one bias-corrected Adam update to ``params`` in place."""
    if set(params) != set(grads):
        raise ContractViolation("params and grads must have the same keys")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ContractViolation(
                f"gradient for {name!r} has shape {grads[name].shape}, parameter {p.shape}"
            )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


# -- gradient checking ----------------------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    checked: int
    skipped: int

    @property
    def all_skipped(self) -> bool:
        return self.checked == 0 and self.skipped > 0


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tol: float
    h: float

    @property
    def max_rel_error(self) -> float:
        errs = [e.max_rel_error for e in self.entries if e.checked]
        return max(errs) if errs else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if e.checked and e.max_rel_error >= self.tol]


def _traced(fn: Callable[[], Tensor]) -> tuple[float, list]:
    global _RELU_TRACE
    _RELU_TRACE = []
    try:
        value = float(fn().data)
        trace = _RELU_TRACE
    finally:
        _RELU_TRACE = None
    return value, trace


def _same_kinks(base: list, other: list) -> bool:
    if len(base) != len(other):
        return False
    return all(np.array_equal(m0, m1) for (m0, _), (m1, _) in zip(base, other))


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    grad_floor: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    every call.  The relative error of one coordinate is
    ``|a - n| / max(|a|, |n|, grad_floor)``.  Coordinates whose perturbation
    flips any relu mask (or that sit on an exact relu kink) are skipped.
    """
    if not (0.0 < h <= 1e-2):
        raise ContractViolation("finite difference step must lie in (0, 1e-2]")
    loss = loss_fn()
    analytic = forward_backward(loss, params)
    _, base_trace = _traced(loss_fn)
    on_kink = any(zero for _, zero in base_trace)
    rng = np.random.default_rng(seed)
    entries = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst, checked, skipped = 0.0, 0, 0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp, tp = _traced(loss_fn)
            flat[c] = orig - h
            fm, tm = _traced(loss_fn)
            flat[c] = orig
            if on_kink or not (_same_kinks(base_trace, tp) and _same_kinks(base_trace, tm)):
                skipped += 1
                continue
            num = (fp - fm) / (2.0 * h)
            ana = float(analytic[name].reshape(-1)[c])
            err = abs(ana - num) / max(abs(ana), abs(num), grad_floor)
            worst = max(worst, err)
            checked += 1
        entries.append(GradCheckEntry(name, worst, checked, skipped))
    return GradCheckReport(entries, tol, h)


def numerical_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (fn(xp) - fn(xm)) / (2.0 * h)
    return g


def parameters_of(modules: Iterable) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for m in modules:
        out.update(m.parameters())
    return out


__all__ = [
    "AdamState",
    "GradCheckReport",
    "Tensor",
    "adam_step",
    "add",
    "concat",
    "cross_entropy",
    "debug_numerics",
    "expand",
    "finite_diff_check",
    "forward_backward",
    "getitem",
    "matmul",
    "mean",
    "mse",
    "mul",
    "no_grad",
    "numerical_gradient",
    "parameter",
    "relu",
    "reshape",
    "set_debug",
    "softmax",
    "stack",
    "sub",
    "sum_",
    "take",
    "topological_order",
    "transpose",
]
