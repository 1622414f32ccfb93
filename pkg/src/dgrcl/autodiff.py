"""Dense float64 tensors with a reverse-mode gradient tape.

Only the primitives the model needs are provided.  Every op works on
whole arrays and records a single entry on the active :class:`Tape`;
``backward`` replays those entries in reverse.

Usage::

    with Tape() as tape:
        y = ad.sum(ad.hadamard(x, x))
    backward(y)
    x.grad  # 2 * x.data
"""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import DetachedTensor, NonFinite, NotScalar, ShapeMismatch

OP_KINDS = (
    "matmul", "add", "subtract", "hadamard", "scalar_mul", "relu", "tanh",
    "sigmoid", "softmax_rows", "log", "exp", "sum", "mean", "concat_rows",
    "transpose", "l2_normalize_rows",
)

_ids = itertools.count(1)
_tape_stack: list["Tape"] = []


class Tensor:
    """Row-major float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "grad", "requires_grad", "tape_id", "name", "_tape")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape_id = None
        self.name = name
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise NotScalar(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return hadamard(self, other)
        return scalar_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class _Record:
    __slots__ = ("kind", "inputs", "output", "saved", "grad_fn")

    def __init__(self, kind, inputs, output, saved, grad_fn):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.saved = saved
        self.grad_fn = grad_fn


class Tape:
    """Ordered record of operations; one per training step.

    Entering the tape as a context manager makes it the active tape.  Ops
    executed while no tape is active (or on inputs that need no gradient)
    are not recorded.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.id = next(_ids)

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def clear(self):
        for rec in self.records:
            rec.output.tape_id = None
            rec.output._tape = None
        self.records.clear()

    def _append(self, kind, inputs, output, saved, grad_fn):
        output.tape_id = (self.id, len(self.records))
        output._tape = self
        output.requires_grad = True
        self.records.append(_Record(kind, inputs, output, saved, grad_fn))


def active_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


def _check_finite(arrays):
    for a in arrays:
        if not np.isfinite(a).all():
            raise NonFinite("operand contains NaN or Inf")


def _emit(kind, inputs, out_data, saved, grad_fn):
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.requires_grad = False
    out.tape_id = None
    out.name = None
    out._tape = None
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape._append(kind, inputs, out, saved, grad_fn)
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(kind, a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{kind}: shapes {a.shape} and {b.shape} differ")


def _need_2d(kind, *ts):
    for t in ts:
        if t.data.ndim != 2:
            raise ShapeMismatch(f"{kind}: expected a 2-D operand, got shape {t.shape}")


# ---------------------------------------------------------------- primitives

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _need_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    _check_finite((a.data, b.data))
    ad, bd = a.data, b.data

    def grad_fn(g):
        return g @ bd.T, ad.T @ g

    return _emit("matmul", (a, b), ad @ bd, None, grad_fn)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    _check_finite((a.data, b.data))
    return _emit("add", (a, b), a.data + b.data, None, lambda g: (g, g))


def subtract(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("subtract", a, b)
    _check_finite((a.data, b.data))
    return _emit("subtract", (a, b), a.data - b.data, None, lambda g: (g, -g))


def hadamard(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("hadamard", a, b)
    _check_finite((a.data, b.data))
    ad, bd = a.data, b.data
    return _emit("hadamard", (a, b), ad * bd, None, lambda g: (g * bd, g * ad))


def scalar_mul(a, c):
    a = _as_tensor(a)
    c = float(c)
    if not np.isfinite(c):
        raise NonFinite("scalar_mul: non-finite scalar")
    _check_finite((a.data,))
    return _emit("scalar_mul", (a,), a.data * c, c, lambda g: (g * c,))


def relu(a):
    a = _as_tensor(a)
    _check_finite((a.data,))
    mask = a.data > 0
    # subgradient at exactly 0 is 0
    return _emit("relu", (a,), np.where(mask, a.data, 0.0), mask, lambda g: (g * mask,))


def tanh(a):
    a = _as_tensor(a)
    _check_finite((a.data,))
    y = np.tanh(a.data)
    return _emit("tanh", (a,), y, y, lambda g: (g * (1.0 - y * y),))


def sigmoid(a):
    a = _as_tensor(a)
    _check_finite((a.data,))
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit("sigmoid", (a,), y, y, lambda g: (g * y * (1.0 - y),))


def softmax_rows(a):
    a = _as_tensor(a)
    _need_2d("softmax_rows", a)
    _check_finite((a.data,))
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _emit("softmax_rows", (a,), y, y, grad_fn)


def log(a):
    a = _as_tensor(a)
    _check_finite((a.data,))
    if (a.data <= 0).any():
        raise NonFinite("log: non-positive input")
    x = a.data
    return _emit("log", (a,), np.log(x), None, lambda g: (g / x,))


def exp(a):
    a = _as_tensor(a)
    _check_finite((a.data,))
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    if not np.isfinite(y).all():
        raise NonFinite("exp: overflow")
    return _emit("exp", (a,), y, y, lambda g: (g * y,))


def sum(a):  # noqa: A001 - mirrors the op name
    a = _as_tensor(a)
    _check_finite((a.data,))
    shape = a.shape
    return _emit("sum", (a,), np.array([[a.data.sum()]]), None,
                 lambda g: (np.full(shape, g.reshape(-1)[0]),))


def mean(a):
    a = _as_tensor(a)
    _check_finite((a.data,))
    shape, n = a.shape, a.data.size
    return _emit("mean", (a,), np.array([[a.data.mean()]]), None,
                 lambda g: (np.full(shape, g.reshape(-1)[0] / n),))


def concat_rows(tensors: Sequence[Tensor]):
    ts = tuple(_as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeMismatch("concat_rows: no operands")
    _need_2d("concat_rows", *ts)
    cols = {t.shape[1] for t in ts}
    if len(cols) != 1:
        raise ShapeMismatch(f"concat_rows: column counts differ {sorted(cols)}")
    _check_finite([t.data for t in ts])
    bounds = np.cumsum([0] + [t.shape[0] for t in ts])

    def grad_fn(g):
        return tuple(g[bounds[k]:bounds[k + 1]] for k in range(len(ts)))

    return _emit("concat_rows", ts, np.concatenate([t.data for t in ts], axis=0), None, grad_fn)


def transpose(a):
    a = _as_tensor(a)
    _need_2d("transpose", a)
    _check_finite((a.data,))
    return _emit("transpose", (a,), a.data.T.copy(), None, lambda g: (g.T,))


def l2_normalize_rows(a):
    a = _as_tensor(a)
    _need_2d("l2_normalize_rows", a)
    _check_finite((a.data,))
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    nz = norms > 0
    safe = np.where(nz, norms, 1.0)
    y = np.where(nz, a.data / safe, 0.0)

    def grad_fn(g):
        proj = (g * y).sum(axis=1, keepdims=True)
        return (np.where(nz, (g - y * proj) / safe, 0.0),)

    return _emit("l2_normalize_rows", (a,), y, y, grad_fn)


_DISPATCH = {
    "matmul": matmul, "add": add, "subtract": subtract, "hadamard": hadamard,
    "scalar_mul": scalar_mul, "relu": relu, "tanh": tanh, "sigmoid": sigmoid,
    "softmax_rows": softmax_rows, "log": log, "exp": exp, "sum": sum,
    "mean": mean, "transpose": transpose, "l2_normalize_rows": l2_normalize_rows,
}


def forward(op_kind: str, operands: Sequence[Tensor], scalar: float | None = None) -> Tensor:
    """Dispatch a primitive by name (``scalar`` is the factor for scalar_mul)."""
    if op_kind == "concat_rows":
        return concat_rows(operands)
    if op_kind not in _DISPATCH:
        raise ValueError(f"unknown op kind {op_kind!r}")
    if op_kind == "scalar_mul":
        return scalar_mul(operands[0], scalar)
    return _DISPATCH[op_kind](*operands)


# ------------------------------------------------------------------ backward

def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every gradient-requiring leaf of ``loss``'s tape.

    Leaves that appear on the tape but do not influence ``loss`` receive a
    zero gradient.  Gradients are assigned, not accumulated.
    """
    if loss.data.size != 1:
        raise NotScalar(f"loss has shape {loss.shape}; backward needs a scalar")
    if loss.tape_id is None:
        raise DetachedTensor("loss was not produced on an active tape")
    tape, pos = loss._tape, loss.tape_id[1]
    if tape is None or pos >= len(tape.records) or tape.records[pos].output is not loss:
        raise DetachedTensor("loss tape is no longer available")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records[: pos + 1]):
        for t in rec.inputs:
            if t.requires_grad and t.tape_id is None:
                leaves[id(t)] = t
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.grad_fn(g)):
            if not t.requires_grad:
                continue
            key = id(t)
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
    for key, leaf in leaves.items():
        g = grads.get(key)
        leaf.grad = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.shape)


# --------------------------------------------------------------- grad checks

def finite_diff_check(f: Callable[..., Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``x`` is a tensor/array or a list of them; ``f`` is called with the same
    arguments and must return a scalar tensor.  The error per coordinate is
    ``|analytic - numeric| / (|analytic| + 1e-8)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    xs = list(x) if isinstance(x, (list, tuple)) else [x]
    xs = [t if isinstance(t, Tensor) else parameter(np.array(t, dtype=np.float64)) for t in xs]
    for t in xs:
        t.requires_grad = True
    with Tape():
        out = f(*xs)
    if out.tape_id is None:
        analytic = [np.zeros_like(t.data) for t in xs]
    else:
        backward(out)
        analytic = [t.grad.copy() for t in xs]

    def value():
        return f(*xs).item()

    worst = 0.0
    for t, a in zip(xs, analytic):
        flat = t.data.reshape(-1)
        af = a.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = value()
            flat[k] = orig - eps
            fm = value()
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFinite("f is not finite near x")
            num = (fp - fm) / (2.0 * eps)
            worst = max(worst, abs(af[k] - num) / (abs(af[k]) + 1e-8))
    return worst
