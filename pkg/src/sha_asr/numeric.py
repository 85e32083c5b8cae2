"""Minimal reverse-mode autodiff over float64 numpy arrays.

A :class:`Tape` records every op whose inputs require gradients while it is
active; ``tape.backward(loss)`` replays the records in reverse and then drops
them. Outside a tape, ops are plain numpy evaluations and build no graph.

    >>> W = Tensor(np.eye(2), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_(affine(Tensor([[1.0, 2.0]]), W, Tensor(np.zeros(2))))
    ...     tape.backward(loss)
    >>> W.grad.tolist()
    [[1.0, 1.0], [2.0, 2.0]]
"""
import threading
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DistributionError, LabelError, NumericError

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


class Tape:
    """Records ops for one forward pass; discarded after :meth:`backward`."""

    def __init__(self):
        self.records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        self.records = []
        return False

    def backward(self, loss, grad=None):
        if loss.grad is None:
            loss.grad = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for out in reversed(self.records):
            if out.grad is not None:
                out._backward(out.grad)
        for out in self.records:
            out._backward = None
            out.grad = None
        self.records = []


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: non-finite values")


def _result(data, parents, backward, op):
    _check_finite(data, op)
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward
        tape.records.append(out)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _accum(t, g):
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


# --------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: {a.shape} vs {b.shape}") from exc

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _result(data, (a, b), backward, "add")


def sub(a, b):
    return add(a, mul(b, -1.0))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul: {a.shape} vs {b.shape}") from exc

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(data, (a, b), backward, "mul")


def matmul(a, b):
    """``a @ b`` for 2-D or batched (leading-dim broadcast) operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError as exc:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}") from exc

    def backward(g):
        _accum(a, g @ np.swapaxes(b.data, -1, -2))
        _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return _result(data, (a, b), backward, "matmul")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return _result(a.data * mask, (a,), backward, "relu")


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _result(np.asarray(data, dtype=np.float64), (a,), backward, "sum")


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _result(data, (a,), backward, "reshape")


def swap_last(a):
    a = as_tensor(a)

    def backward(g):
        _accum(a, np.swapaxes(g, -1, -2))

    return _result(np.swapaxes(a.data, -1, -2), (a,), backward, "swap_last")


def take_rows(a, index):
    """Gather rows of ``a`` (along axis 0) with an integer array of any shape."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        if not a.requires_grad:
            return
        ga = np.zeros_like(a.data)
        np.add.at(ga, index, g)
        _accum(a, ga)

    return _result(a.data[index], (a,), backward, "take_rows")


def select(a, key):
    """Basic (non-fancy) indexing, e.g. ``select(w, (slice(None), 0))``."""
    a = as_tensor(a)

    def backward(g):
        if not a.requires_grad:
            return
        ga = np.zeros_like(a.data)
        ga[key] = g
        _accum(a, ga)

    return _result(np.array(a.data[key], dtype=np.float64), (a,), backward, "select")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, sizes, axis=axis)):
            _accum(t, part)

    return _result(data, tensors, backward, "concat")


# --------------------------------------------------------------------------
# softmax family


def _log_softmax_data(x, axis):
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(logits, axis=-1):
    logits = as_tensor(logits)
    if logits.data.shape[axis] < 1:
        raise DimensionError("softmax over empty axis")
    _check_finite(logits.data, "softmax input")
    p = np.exp(_log_softmax_data(logits.data, axis))

    def backward(g):
        _accum(logits, p * (g - (g * p).sum(axis=axis, keepdims=True)))

    return _result(p, (logits,), backward, "softmax")


def log_softmax(logits, axis=-1):
    logits = as_tensor(logits)
    _check_finite(logits.data, "log_softmax input")
    lp = _log_softmax_data(logits.data, axis)

    def backward(g):
        p = np.exp(lp)
        _accum(logits, g - p * g.sum(axis=axis, keepdims=True))

    return _result(lp, (logits,), backward, "log_softmax")


# --------------------------------------------------------------------------
# layers and losses


def affine(x, W, b):
    """``x @ W + b`` with shape checking."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.data.ndim != 2 or x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise DimensionError(f"affine: x{x.shape} W{W.shape} b{b.shape}")
    return add(matmul(x, W), b)


def cross_entropy(log_probs, labels):
    """Mean negative log-likelihood of integer ``labels`` under row ``log_probs``."""
    log_probs = as_tensor(log_probs)
    labels = np.asarray(labels, dtype=np.int64)
    if log_probs.data.ndim != 2 or labels.shape != (log_probs.shape[0],):
        raise DimensionError(f"cross_entropy: {log_probs.shape} vs labels {labels.shape}")
    K = log_probs.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise LabelError(f"label out of range [0, {K})")
    B = labels.shape[0]
    rows = np.arange(B)
    value = -log_probs.data[rows, labels].mean()

    def backward(g):
        ga = np.zeros_like(log_probs.data)
        ga[rows, labels] = -g / B
        _accum(log_probs, ga)

    return _result(np.asarray(value), (log_probs,), backward, "cross_entropy")


def check_distribution(probs, tol=1e-6):
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise DistributionError("negative or non-finite probability")
    dev = np.abs(probs.sum(axis=-1) - 1.0)
    if dev.size and dev.max() > tol:
        raise DistributionError(f"rows must sum to 1 (max deviation {dev.max():.3g})")
    return probs


def kl_divergence(teacher, student_log_probs):
    """Mean over rows of KL(teacher || student); the teacher is a constant."""
    t = check_distribution(teacher.data if isinstance(teacher, Tensor) else teacher)
    s = as_tensor(student_log_probs)
    if t.shape != s.shape or t.ndim != 2:
        raise DimensionError(f"kl_divergence: {t.shape} vs {s.shape}")
    B = t.shape[0]
    pos = t > 0
    tlogt = np.where(pos, t * np.log(np.where(pos, t, 1.0)), 0.0)
    value = (tlogt - t * s.data).sum() / B

    def backward(g):
        _accum(s, -g * t / B)

    return _result(np.asarray(value), (s,), backward, "kl_divergence")


# --------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper):
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **hyper)


def adam_step(params, grads, state):
    """Pure Adam update with bias correction.

    Returns ``(new_params, new_state)``; inputs are not modified.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise DimensionError("adam_step: parameter/gradient/state count mismatch")
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise DimensionError(f"adam_step: shapes {p.shape}, {g.shape}, {m.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, t, state.lr, state.beta1, state.beta2, state.eps)
    return new_p, new_state


class Adam:
    """In-place Adam over a fixed list of parameter tensors."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState.zeros_like([p.data for p in self.params], lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new_p, self.state = adam_step([p.data for p in self.params], grads, self.state)
        for p, arr in zip(self.params, new_p):
            p.data = arr


# --------------------------------------------------------------------------
# gradient-check oracle


def finite_diff_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar ``f`` at array ``x``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def relative_error(a, b, floor=1e-10):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))
