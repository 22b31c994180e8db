"""
Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable computation in the package is composed from the
primitives defined here. A :class:`Tensor` produced by an operation keeps
references to its inputs and a closure computing the vector-Jacobian
product, so calling :func:`backward` on a scalar walks the recorded graph
in reverse topological order.

Binary elementwise ops broadcast like numpy; the gradient is summed back
to each operand's shape.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NumericError

LEAKY_SLOPE = 0.01

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording operations on the tape."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array that optionally participates in differentiation.

    Attributes:
        data: the forward value (``np.ndarray`` of float64).
        grad: gradient accumulator, filled by :func:`backward`.
        op: name of the operation that produced this node (``"leaf"`` for inputs).
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_vjp", "name")
    # make ``ndarray <op> Tensor`` dispatch to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._vjp = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def __len__(self):
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced a non-finite value")
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._vjp = vjp
    return out


def record(data: np.ndarray, parents: Sequence[Tensor], vjp, op: str) -> Tensor:
    """Register a custom primitive. ``vjp(g)`` returns one gradient (or None) per parent."""
    return _make(np.asarray(data, dtype=np.float64), parents, vjp, op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                 "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    if (b.data == 0).any():
        raise DomainError("div: division by zero")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * out / bd, bd.shape)),
                 "div")


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if (x.data <= 0).any():
        raise DomainError("log: argument must be positive")
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sigmoid_array(z: np.ndarray) -> np.ndarray:
    """Logistic function via tanh: overflow-free and odd-symmetric about 0.5."""
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = sigmoid_array(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)
    return _make(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batching over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch shapes {a.shape} and {b.shape} differ") from None
    ad, bd = a.data, b.data

    if bd.ndim == 2:
        # shared right operand: fold the batch into rows
        def vjp(g):
            ga = g @ bd.T if a.requires_grad else None
            gb = (ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
                  if b.requires_grad else None)
            return ga, gb
    else:
        def vjp(g):
            ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
            gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
            return (None if ga is None else _unbroadcast(ga, ad.shape),
                    None if gb is None else _unbroadcast(gb, bd.shape))

    return _make(ad @ bd, (a, b), vjp, "matmul")


# ---------------------------------------------------------------- reductions, shape


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), vjp, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    return _make(np.swapaxes(x.data, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),), "swapaxes")


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis
               for p in parts)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    basic = _is_basic(index)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make(np.array(x.data[index]), (x,), vjp, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: {exc}") from None
    n = len(tensors)
    return _make(out, tensors,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack")


# ---------------------------------------------------------------- normalizers


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax; each slice along ``axis`` sums to one."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError(f"softmax: empty axis {axis} for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (x,),
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError(f"log_softmax: empty axis {axis} for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    p = np.exp(out)
    return _make(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),), "log_softmax")


def cross_entropy_with_logits(logits, gold) -> Tensor:
    """``-log softmax(logits)[gold]`` along the last axis.

    ``logits`` of shape ``[n]`` with an integer ``gold`` gives a scalar;
    ``[..., n]`` with an integer array ``gold`` of shape ``[...]`` gives one
    loss per row.
    """
    logits = as_tensor(logits)
    if logits.ndim == 0:
        raise DimensionError("cross_entropy_with_logits: logits must have at least one axis")
    n = logits.shape[-1]
    gold = np.asarray(gold, dtype=np.int64)
    if gold.shape != logits.shape[:-1]:
        raise DimensionError(
            f"cross_entropy_with_logits: gold shape {gold.shape} vs logits {logits.shape}")
    if (gold < 0).any() or (gold >= n).any():
        raise IndexError(f"cross_entropy_with_logits: gold index out of range [0, {n})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    onehot = np.zeros_like(logp)
    np.put_along_axis(onehot, gold[..., None], 1.0, axis=-1)
    loss = -(logp * onehot).sum(axis=-1)
    p = np.exp(logp)
    return _make(loss, (logits,), lambda g: (np.asarray(g)[..., None] * (p - onehot),),
                 "cross_entropy")


def layer_norm(x, gain, shift, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gain`` and add ``shift``."""
    x, gain, shift = as_tensor(x), as_tensor(gain), as_tensor(shift)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def vjp(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return (dx, _unbroadcast(g * xhat, gd.shape), _unbroadcast(g, shift.shape))

    return _make(xhat * gd + shift.data, (x, gain, shift), vjp, "layer_norm")


# ---------------------------------------------------------------- reverse pass


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Fill ``.grad`` of every node reachable from the scalar ``root``.

    Accumulators are reset first, so repeated calls give identical results.
    """
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topological(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node._vjp(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
    for node in order:
        if node.requires_grad and node.grad is None:
            node.grad = np.zeros_like(node.data)


# ---------------------------------------------------------------- gradient checking


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def finite_diff_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Maximum relative error between the tape gradient of ``f`` at ``x``
    and a central difference with step ``h``.

    The error per coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    base = np.array(as_tensor(x).data, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    out = f(leaf)
    backward(out)
    analytic = leaf.grad.reshape(-1).copy()
    numeric = np.empty_like(analytic)
    with no_grad():
        for i in range(base.size):
            xp = base.copy()
            xp.flat[i] += h
            xm = base.copy()
            xm.flat[i] -= h
            # divide by the step actually taken; x +- h is itself rounded
            numeric[i] = (f(Tensor(xp)).item() - f(Tensor(xm)).item()) / (xp.flat[i] - xm.flat[i])
    return _rel_err(analytic, numeric)


def param_grad_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                     h: float = 1e-5, coords: Iterable[tuple[str, int]] | None = None,
                     atol: float = 0.0) -> tuple[float, str]:
    """Finite-difference check of ``loss_fn`` with respect to named parameters.

    ``loss_fn`` reads the parameter tensors in place. ``coords`` restricts the
    check to ``(name, flat_index)`` pairs; by default every coordinate of
    every parameter is perturbed. Coordinates whose absolute difference is at
    most ``atol`` count as exact, which lets callers ignore gradients below
    the resolution of a central difference. Returns the maximum relative
    error and the name of the parameter where it occurred.
    """
    out = loss_fn()
    backward(out)
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy()
             for k, p in params.items()}
    if coords is None:
        coords = [(k, i) for k, p in params.items() for i in range(p.data.size)]
    worst, where = 0.0, ""
    with no_grad():
        for name, i in coords:
            arr = params[name].data
            orig = arr.flat[i]
            arr.flat[i] = orig + h
            step = arr.flat[i]
            fp = loss_fn().item()
            arr.flat[i] = orig - h
            step -= arr.flat[i]
            fm = loss_fn().item()
            arr.flat[i] = orig
            a, n = grads[name].reshape(-1)[i], (fp - fm) / step
            err = 0.0 if abs(a - n) <= atol else _rel_err(np.array([a]), np.array([n]))
            if err > worst:
                worst, where = err, name
    return worst, where
