"""A small numpy-backed tensor with a reverse-mode gradient tape.

Every op computes its forward value eagerly and, when any input requires a
gradient, records a node holding a closure that maps the output gradient to
input gradients. ``Tensor.backward`` walks the recorded graph once in reverse
topological order.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse, special

_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True
_ATTENTION_LOG: list | None = None
_CHECK_FINITE = False


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def get_default_dtype() -> np.dtype:
    return _DTYPE


def set_default_dtype(dtype) -> None:
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default floating dtype (float32 or float64)."""
    old = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


@contextlib.contextmanager
def debug_finite():
    """Raise NonFiniteError as soon as any op produces a non-finite value."""
    global _CHECK_FINITE
    old = _CHECK_FINITE
    _CHECK_FINITE = True
    try:
        yield
    finally:
        _CHECK_FINITE = old


@contextlib.contextmanager
def record_attention():
    """Collect every attention weight matrix computed inside the block."""
    global _ATTENTION_LOG
    old = _ATTENTION_LOG
    log: list[tuple[str, np.ndarray]] = []
    _ATTENTION_LOG = log
    try:
        yield log
    finally:
        _ATTENTION_LOG = old


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f" or arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name
        self.op = "leaf"

    # -- basic properties ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}, op={self.op})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- autograd ---------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf's ``.grad``.

        The graph is released afterwards; intermediate gradients are not kept.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match tensor shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._backward is None:
                if g is not None and node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is None:
                continue
            in_grads = node._backward(g)
            for p, pg in zip(node._parents, in_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    raise ShapeError(f"internal: {node.op} produced gradient {pg.shape} for input {p.shape}")
                key = id(p)
                grads[key] = grads[key] + pg if key in grads else pg
            node._parents = ()
            node._backward = None

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __pow__(self, p): return power(self, p)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)
    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)
    def exp(self): return exp(self)
    def log(self): return log(self)
    def tanh(self): return tanh(self)
    def sigmoid(self): return sigmoid(self)


TensorLike = Tensor | np.ndarray | float | int


def as_tensor(x: TensorLike, like: Tensor | None = None) -> Tensor:
    """Wrap a constant. It takes the dtype of ``like`` when given; scalars and
    non-float arrays take the default dtype so they never promote float32 work."""
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if like is not None:
        return Tensor(arr.astype(like.dtype, copy=False))
    if arr.ndim > 0 and arr.dtype.kind == "f" and arr.dtype in (np.float32, np.float64):
        return Tensor(arr)
    return Tensor(arr.astype(_DTYPE))


def _operands(a: TensorLike, b: TensorLike) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, as_tensor(b, like=a)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return as_tensor(a, like=b), b
    return as_tensor(a), as_tensor(b)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str = "custom") -> Tensor:
    """Create an op output. ``backward(g)`` must return one gradient (or None) per parent."""
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"op {op} produced a non-finite value")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    out.op = op
    return out


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise arithmetic -------------------------------------------------

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _operands(a, b)
    _check_broadcast(a, b, "add")
    return make_node(a.data + b.data, (a, b),
                     lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _operands(a, b)
    _check_broadcast(a, b, "sub")
    return make_node(a.data - b.data, (a, b),
                     lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _operands(a, b)
    _check_broadcast(a, b, "mul")
    return make_node(a.data * b.data, (a, b),
                     lambda g: (unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                                unbroadcast(g * a.data, b.shape) if b.requires_grad else None), "mul")


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _operands(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return make_node(out, (a, b),
                     lambda g: (unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                                unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None), "div")


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: TensorLike, p: float) -> Tensor:
    a = as_tensor(a)
    return make_node(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = special.expit(a.data)
    return make_node(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_node(np.where(mask, a.data, 0), (a,), lambda g: (g * mask,), "relu")


_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: TensorLike) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x / _SQRT_2))
    out = (x * cdf).astype(x.dtype)
    return make_node(out, (a,),
                     lambda g: ((g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x))).astype(x.dtype),), "gelu")


def clamp(a: TensorLike, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip values; gradient passes where the input lies inside [lo, hi]."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    mask = np.ones(a.shape, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
    if hi is not None:
        mask &= a.data <= hi
    return make_node(out, (a,), lambda g: (g * mask,), "clamp")


# -- shape ops -------------------------------------------------------------

def reshape(a: TensorLike, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: TensorLike, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def broadcast_to(a: TensorLike, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {tuple(shape)}") from None
    return make_node(out, (a,), lambda g: (unbroadcast(g, a.shape),), "broadcast")


def concat(xs: Sequence[TensorLike], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]} on axis {axis}") from None
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))
    return make_node(out, xs, backward, "concat")


def stack(xs: Sequence[TensorLike], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    expanded = [reshape(x, x.shape[:axis % (x.ndim + 1)] + (1,) + x.shape[axis % (x.ndim + 1):]) for x in xs]
    return concat(expanded, axis=axis)


def getitem(a: TensorLike, idx) -> Tensor:
    a = as_tensor(a)
    if isinstance(idx, Tensor):
        raise TypeError("index with numpy arrays, not Tensors")
    out = a.data[idx]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)
    return make_node(np.array(out, copy=True), (a,), backward, "getitem")


def gather(a: TensorLike, index, axis: int = 0) -> Tensor:
    """Rows of ``a`` selected by an integer array of any shape (axis 0 only)."""
    a = as_tensor(a)
    if axis != 0:
        raise ValueError("gather supports axis 0 only")
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < -a.shape[0] or index.max() >= a.shape[0]):
        raise ShapeError(f"gather: index out of range for first axis of size {a.shape[0]}")
    out = a.data[index]

    def backward(g):
        flat_idx = index.reshape(-1) % a.shape[0]
        g2 = g.reshape(flat_idx.shape[0], -1)
        # scatter-add as a sparse product; summation order is fixed by the CSR layout
        scatter = sparse.csr_matrix((np.ones(flat_idx.shape[0], dtype=g.dtype),
                                     (flat_idx, np.arange(flat_idx.shape[0]))),
                                    shape=(a.shape[0], flat_idx.shape[0]))
        return (np.asarray(scatter @ g2).reshape(a.shape).astype(g.dtype, copy=False),)
    return make_node(out, (a,), backward, "gather")


# -- reductions ------------------------------------------------------------

def tsum(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return make_node(np.asarray(out), (a,), backward, "sum")


def mean(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / n)


# -- linear algebra --------------------------------------------------------

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _operands(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible") from None

    def backward(g):
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb
    return make_node(out, (a, b), backward, "matmul")


def linear(x: TensorLike, W: TensorLike, b: TensorLike | None = None) -> Tensor:
    """x @ W + b with W shaped (in, out)."""
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {W.shape}")
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, x.shape[-1])), W)
    if b is not None:
        y = add(y, b)
    return reshape(y, lead + (W.shape[1],))


# -- normalization and attention -------------------------------------------

def softmax(a: TensorLike, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return make_node(out, (a,), backward, "softmax")


LAYER_NORM_EPS = 1e-5


def layer_norm(x: TensorLike, gamma: TensorLike | None = None, beta: TensorLike | None = None,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis; a constant row maps to zeros before the affine part."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).astype(x.dtype)

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * xhat).mean(axis=-1, keepdims=True)
        return ((inv * (g - gm - xhat * gxm)).astype(x.dtype),)
    y = make_node(xhat, (x,), backward, "layer_norm")
    if gamma is not None:
        y = mul(y, gamma)
    if beta is not None:
        y = add(y, beta)
    return y


def scaled_dot_attention(q: TensorLike, k: TensorLike, v: TensorLike, bias: TensorLike | None = None,
                         tag: str = "attention") -> Tensor:
    """softmax(q k^T / sqrt(d) + bias) v over the last two axes."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} are incompatible")
    d = q.shape[-1]
    logits = matmul(q, swap_last(k)) * (1.0 / math.sqrt(d))
    if bias is not None:
        logits = add(logits, bias)
    w = softmax(logits, axis=-1)
    if _ATTENTION_LOG is not None:
        _ATTENTION_LOG.append((tag, w.data.copy()))
    return matmul(w, v)


def log_attention(tag: str, weights: np.ndarray) -> None:
    if _ATTENTION_LOG is not None:
        _ATTENTION_LOG.append((tag, np.array(weights, copy=True)))


def mse(x: TensorLike, y: TensorLike) -> Tensor:
    x, y = _operands(x, y)
    if x.shape != y.shape:
        raise ShapeError(f"mse: shapes {x.shape} and {y.shape} differ")
    diff = x.data - y.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=x.dtype)
    return make_node(out, (x, y), lambda g: (2.0 * g * diff / n, -2.0 * g * diff / n), "mse")


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
