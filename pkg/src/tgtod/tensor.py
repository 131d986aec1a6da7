"""Small dense tensor engine with reverse-mode differentiation.

Values are float64 numpy arrays. Every op checks its output for NaN/Inf and
records a backward closure on a tape when any input requires a gradient.
Broadcasting is deliberately limited: a row vector may be added to the last
axis (bias), and the ``*_col`` ops apply a trailing size-1 column explicitly.
"""
from __future__ import annotations

import contextlib
import threading
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NumericFault(ArithmeticError):
    """Raised when an op produces a non-finite value."""


class GradientError(RuntimeError):
    pass


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def track_allocations():
    """Record the shape of every tensor an op creates inside the block."""
    log: list[tuple[int, ...]] = []
    prev = getattr(_state, "alloc_log", None)
    _state.alloc_log = log
    try:
        yield log
    finally:
        _state.alloc_log = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericFault(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self.shape))

    def __rsub__(self, other):
        return sub(_wrap(other, self.shape), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


class Parameter(Tensor):
    """A trainable leaf tensor. Adam moments live on the optimizer."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)

    def zero_grad(self) -> None:
        self.grad = None


def _wrap(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(shape, float(x)))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericFault(f"{op} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    log = getattr(_state, "alloc_log", None)
    if log is not None:
        log.append(data.shape)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


# --- elementwise ---------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a row vector matching a's last axis."""
    if a.shape == b.shape:
        def bw(g):
            _accum(a, g)
            _accum(b, g)
        return _make(a.data + b.data, (a, b), bw, "add")
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        def bw(g):
            _accum(a, g)
            _accum(b, g.reshape(-1, b.shape[0]).sum(axis=0))
        return _make(a.data + b.data, (a, b), bw, "add")
    raise ShapeError(f"add: shapes {a.shape} and {b.shape} are incompatible")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)

    def bw(g):
        _accum(a, g)
        _accum(b, -g)
    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)
    return _make(a.data * b.data, (a, b), bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: _accum(a, g * c), "scale")


def _check_col(op: str, a: Tensor, col: Tensor) -> None:
    if col.shape != a.shape[:-1] + (1,):
        raise ShapeError(f"{op}: shapes {a.shape} and {col.shape} are incompatible")


def add_col(a: Tensor, col: Tensor) -> Tensor:
    """``a + col`` where ``col`` has a trailing axis of size 1."""
    _check_col("add_col", a, col)

    def bw(g):
        _accum(a, g)
        _accum(col, g.sum(axis=-1, keepdims=True))
    return _make(a.data + col.data, (a, col), bw, "add_col")


def div_col(a: Tensor, col: Tensor) -> Tensor:
    _check_col("div_col", a, col)
    inv = 1.0 / col.data

    def bw(g):
        _accum(a, g * inv)
        _accum(col, -(g * a.data).sum(axis=-1, keepdims=True) * inv * inv)
    return _make(a.data * inv, (a, col), bw, "div_col")


def mul_col(a: Tensor, col: Tensor) -> Tensor:
    _check_col("mul_col", a, col)

    def bw(g):
        _accum(a, g * col.data)
        _accum(col, (g * a.data).sum(axis=-1, keepdims=True))
    return _make(a.data * col.data, (a, col), bw, "mul_col")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: _accum(a, g * mask), "relu")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: _accum(a, g * out), "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), lambda g: _accum(a, g / a.data), "log")


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)
    return _make(out, (a,), lambda g: _accum(a, g * out * (1.0 - out)), "sigmoid")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: _accum(a, g * inside), "clip")


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: _accum(a, 2.0 * g * a.data), "square")


# --- reductions ----------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    return _make(np.array(a.data.sum()), (a,),
                 lambda g: _accum(a, np.broadcast_to(g, a.shape)), "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.array(a.data.mean()), (a,),
                 lambda g: _accum(a, np.broadcast_to(g / n, a.shape)), "mean")


def sum_last(a: Tensor) -> Tensor:
    """Sum over the last axis, keeping it as size 1."""
    return _make(a.data.sum(axis=-1, keepdims=True), (a,),
                 lambda g: _accum(a, np.broadcast_to(g, a.shape)), "sum_last")


def mean_rows(a: Tensor) -> Tensor:
    """Column-wise mean over the row axis (axis -2)."""
    if a.ndim < 2:
        raise ShapeError(f"mean_rows: need at least 2 dims, got {a.shape}")
    n = a.shape[-2]

    def bw(g):
        _accum(a, np.broadcast_to(np.expand_dims(g, -2) / n, a.shape))
    return _make(a.data.mean(axis=-2), (a,), bw, "mean_rows")


def max_last_const(a: Tensor) -> Tensor:
    """Per-row max over the last axis as a gradient-free constant column."""
    return Tensor(a.data.max(axis=-1, keepdims=True))


# --- linear algebra ----------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 2-D operands, batched (…,n,k)@(k,m), or equal-batch 3-D."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    out = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                _accum(b, a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
            else:
                _accum(b, np.swapaxes(a.data, -1, -2) @ g)
    return _make(out, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    return _make(np.swapaxes(a.data, -1, -2).copy(), (a,),
                 lambda g: _accum(a, np.swapaxes(g, -1, -2)), "transpose")


def sparse_matmul(adj, a: Tensor) -> Tensor:
    """``adj @ a`` with a constant scipy sparse matrix ``adj``."""
    if adj.shape[1] != a.shape[0]:
        raise ShapeError(f"sparse_matmul: shapes {adj.shape} and {a.shape} are incompatible")
    adj_t = adj.T.tocsr()
    return _make(np.asarray(adj @ a.data), (a,),
                 lambda g: _accum(a, np.asarray(adj_t @ g)), "sparse_matmul")


# --- softmax -------------------------------------------------------------------

def row_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        _accum(a, out * (g - (g * out).sum(axis=-1, keepdims=True)))
    return _make(out, (a,), bw, "row_softmax")


# --- structural ----------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = list(tensors)
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise ShapeError(f"concat: shapes {ts[0].shape} and {t.shape} are incompatible")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        for t, part in zip(ts, np.split(g, sizes, axis=ax)):
            _accum(t, part)
    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError(f"stack: shapes {ts[0].shape} and {t.shape} are incompatible")
    ax = axis % (ts[0].ndim + 1)

    def bw(g):
        for i, t in enumerate(ts):
            _accum(t, np.take(g, i, axis=ax))
    return _make(np.stack([t.data for t in ts], axis=ax), ts, bw, "stack")


def take_rows(a: Tensor, index) -> Tensor:
    """Gather rows along axis 0 (repeats allowed)."""
    idx = np.asarray(index, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)
    return _make(a.data[idx], (a,), bw, "take_rows")


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        _accum(a, full)
    return _make(a.data[..., start:stop].copy(), (a,), bw, "slice")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: _accum(a, g.reshape(a.shape)), "reshape")


def broadcast_rows(v: Tensor, n: int) -> Tensor:
    """Repeat a vector ``v`` (d,) into an (n, d) matrix."""
    if v.ndim != 1:
        raise ShapeError(f"broadcast_rows: need a vector, got {v.shape}")
    return _make(np.tile(v.data, (n, 1)), (v,), lambda g: _accum(v, g.sum(axis=0)), "broadcast_rows")


# --- differentiation -------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every Parameter reachable from the scalar ``loss``.

    Gradients must be zeroed (``adam_step`` or ``zero_grad``) between calls;
    a second backward onto un-zeroed parameters raises GradientError.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo(loss)
    for node in order:
        if isinstance(node, Parameter) and node.grad is not None:
            raise GradientError(f"gradient of {node.name or 'parameter'} was not zeroed")
    if not loss.requires_grad:
        return
    for node in order:
        if node is not loss and not isinstance(node, Parameter) and node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            node.grad = None
    # the tape is single-use
    for node in order:
        node._backward = None
        node._parents = ()


# --- initialization and optimization -------------------------------------------------------

def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, name: str | None = None) -> Parameter:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-limit, limit, size=(fan_in, fan_out)), name=name)


def zeros(shape, name: str | None = None) -> Parameter:
    return Parameter(np.zeros(shape), name=name)


class Adam:
    """Adam with bias correction. ``step`` zeroes gradients after updating."""

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is not None:
                g = p.grad
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(optimizer: Adam) -> None:
    optimizer.step()


# --- checkpoint format ----------------------------------------------------------------

def save_tensors(named: dict[str, np.ndarray], directory: str | Path) -> None:
    """Write ``params.bin`` (little-endian float64, concatenated) and ``manifest.txt``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    offset = 0
    lines = []
    with open(directory / "params.bin", "wb") as fh:
        for name in sorted(named):
            arr = np.ascontiguousarray(named[name], dtype="<f8")
            fh.write(arr.tobytes())
            shape = "x".join(str(s) for s in arr.shape) or "scalar"
            lines.append(f"{name}\t{shape}\t{offset}\t{arr.size}")
            offset += arr.size
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_tensors(directory: str | Path) -> dict[str, np.ndarray]:
    directory = Path(directory)
    flat = np.fromfile(directory / "params.bin", dtype="<f8")
    out: dict[str, np.ndarray] = {}
    for line in (directory / "manifest.txt").read_text().splitlines():
        if not line.strip():
            continue
        name, shape, offset, size = line.split("\t")
        dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
        start = int(offset)
        out[name] = flat[start:start + int(size)].reshape(dims).astype(np.float64)
    return out
