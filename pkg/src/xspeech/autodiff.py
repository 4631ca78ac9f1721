"""Dense tensors with a reverse-mode gradient tape.

Every differentiable operation records a node holding its parents and a
closure that maps the output gradient to parent gradients. ``backward``
orders the recorded nodes topologically and runs each closure exactly once.

Broadcasting is deliberately narrow: tensors combine elementwise only when
shapes match, when one side is a python scalar, or when the right operand is
a 1-d vector matching the trailing (channel) axis. Constant numpy masks may
multiply a tensor with ordinary numpy broadcasting; they carry no gradient.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "ConfigurationError",
    "tensor",
    "no_grad",
    "default_dtype",
    "get_default_dtype",
    "matmul",
    "conv1d",
    "layer_norm",
    "softmax",
    "log_softmax",
    "relu",
    "gelu",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "embedding_lookup",
    "gather_rows",
    "concat",
    "dropout",
    "mse",
    "bce_with_logits",
    "kl_div",
    "stop_gradient",
]

KL_EPS = 1e-8


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """Raised for invalid static configuration (kernel sizes, widths, ...)."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def get_default_dtype():
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def no_grad():
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def default_dtype(dtype):
    prev = get_default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


class Tensor:
    """An n-dimensional float array that can take part in the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(get_default_dtype())
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = ""
        self.name = name

    # -- basic properties -------------------------------------------------
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- tape --------------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None, retain_graph: bool = False) -> None:
        """Populate ``grad`` on every leaf reachable from this tensor."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward without a seed needs a scalar output, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            if not retain_graph:
                node._backward = None
                node._parents = ()

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, -other if not isinstance(other, Tensor) else neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def sum(self, axis=None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return reduce_mean(self, axis)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    arr = np.array(data, dtype=dtype or get_default_dtype())
    return Tensor(arr, requires_grad=requires_grad)


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(data: np.ndarray, parents: Iterable[Tensor], backward, op: str) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
    return out


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.data)


# -- elementwise --------------------------------------------------------------


def _check_binary(a: Tensor, b: Tensor, opname: str) -> str:
    if a.shape == b.shape:
        return "same"
    if b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1]:
        return "channel"
    if b.size == 1 and b.ndim == 0:
        return "scalar"
    raise DimensionError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, kind: str) -> np.ndarray:
    if kind == "same":
        return g
    if kind == "channel":
        return g.reshape(-1, g.shape[-1]).sum(axis=0)
    return np.asarray(g.sum(), dtype=g.dtype)


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        if c.ndim and c.shape != a.shape:
            raise DimensionError(f"add: incompatible shapes {a.shape} and {c.shape}")
        return _make(a.data + c, (a,), lambda g: (g,), "add_const")
    if not isinstance(a, Tensor):
        return add(b, a)
    kind = _check_binary(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, _reduce_to(g, kind)), "add")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        return _make(a.data * c, (a,), lambda g: (_unbroadcast(g * c, a.shape),), "mul_const")
    kind = _check_binary(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return g * bd, _reduce_to(g * ad, kind)

    return _make(ad * bd, (a, b), backward, "mul")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    c = x.dtype.type(_GELU_C)
    x2 = x * x
    t = np.tanh(c * x * (1 + x.dtype.type(0.044715) * x2))
    out = 0.5 * x * (1 + t)

    def backward(g):
        dinner = c * (1 + x.dtype.type(3 * 0.044715) * x2)
        return (g * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * dinner),)

    return _make(out, (a,), backward, "gelu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out**2),), "tanh")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_np(a.data)
    return _make(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


# -- shape ---------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def index_select(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward, "index")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        sl = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[axis] = slice(lo, hi)
            out.append(g[tuple(sl)])
        return out

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather ``x[idx]`` along axis 0; gradients scatter back by summation."""
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]

    def backward(g):
        full = np.zeros((n,) + g.shape[1:], dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), backward, "gather_rows")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]}): {ids.tolist()}")
    return gather_rows(table, ids)


# -- reductions ----------------------------------------------------------------


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis)), (a,), backward, "sum")


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(reduce_sum(a, axis), 1.0 / float(count))


# -- linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-d operands, or batched over one shared leading axis."""
    if a.ndim != b.ndim or a.ndim not in (2, 3) or a.shape[-1] != b.shape[-2] or (
        a.ndim == 3 and a.shape[0] != b.shape[0]
    ):
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        if ad.ndim == 2:
            return g @ bd.T, ad.T @ g
        return g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g

    return _make(ad @ bd, (a, b), backward, "matmul")


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    pad = (k - 1) // 2
    xp = np.pad(x, ((pad, pad), (0, 0)))
    # (T, C, K) -> (T, K, C) so columns line up with w.reshape(K*C_in, C_out)
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)
    return np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(x.shape[0], k * x.shape[1])


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Same-padded 1-d cross-correlation over time.

    x is ``[T, C_in]``, w is ``[K, C_in, C_out]`` with odd K, b is ``[C_out]``.
    """
    k, c_in, c_out = w.shape
    if k % 2 == 0:
        raise ConfigurationError(f"conv1d kernel size must be odd, got {k}")
    if x.ndim != 2 or x.shape[1] != c_in:
        raise DimensionError(f"conv1d: input {x.shape} does not match kernel {w.shape}")
    t = x.shape[0]
    cols = _im2col(x.data, k)
    wmat = w.data.reshape(k * c_in, c_out)
    out = cols @ wmat
    if b is not None:
        out = out + b.data
    pad = (k - 1) // 2

    def backward(g):
        gw = (cols.T @ g).reshape(k, c_in, c_out)
        gcols = (g @ wmat.T).reshape(t, k, c_in)
        gxp = np.zeros((t + 2 * pad, c_in), dtype=g.dtype)
        for j in range(k):
            gxp[j : j + t] += gcols[:, j, :]
        gx = gxp[pad : pad + t]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward, "conv1d")


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the trailing axis; no learned affine."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _make(y, (x,), backward, "layer_norm")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make(p, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward, "log_softmax")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return mul(x, keep)


# -- losses --------------------------------------------------------------------


def mse(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    if a.shape != b.shape:
        raise DimensionError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    return reduce_mean(diff * diff)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Summed binary cross-entropy, ``-sum[t log s(z) + (1-t) log(1-s(z))]``."""
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise DimensionError(f"bce_with_logits: shape mismatch {logits.shape} vs {t.shape}")
    z = logits.data
    # log(1 + exp(-|z|)) + max(z, 0) - z t
    loss = np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0) - z * t
    sig = _sigmoid_np(z)
    return _make(np.asarray(loss.sum()), (logits,), lambda g: (g * (sig - t),), "bce")


def kl_div(p: Tensor, q: Tensor, axis: int = -1) -> Tensor:
    """Discrete KL(p || q) along ``axis``, summed over all other axes.

    Zeros in q where p > 0 are floored at 1e-8 rather than producing inf;
    terms with p == 0 contribute nothing.
    """
    if p.shape != q.shape:
        raise DimensionError(f"kl_div: shape mismatch {p.shape} vs {q.shape}")
    pd, qd = p.data, q.data
    qc = np.maximum(qd, qd.dtype.type(KL_EPS))
    pos = pd > 0
    safe_p = np.where(pos, pd, 1)
    val = np.where(pos, pd * (np.log(safe_p) - np.log(qc)), 0).sum()

    def backward(g):
        gp = np.where(pos, np.log(safe_p) - np.log(qc) + 1, 0) * g
        gq = -(pd / qc) * (qd > KL_EPS) * g
        return gp, gq

    return _make(np.asarray(val, dtype=pd.dtype), (p, q), backward, "kl_div")
