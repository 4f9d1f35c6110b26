"""Dense float32 tensors with reverse-mode automatic differentiation.

Graphs are built implicitly: every op links its output to its inputs and
stashes a closure computing the input gradients. ``Tensor.backward`` walks
the graph once in reverse topological order, so gradients are exact and
deterministic for a fixed graph. All values are float32; set
``CHECK_FINITE = True`` (tests do) to assert every forward result is free
of NaN/Inf.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

CHECK_FINITE = False

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class DimensionError(ValueError):
    """Operand shapes violate an op's contract."""


class GraphError(RuntimeError):
    """Backward invoked on an invalid node (e.g. non-scalar loss)."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents: tuple = ()
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-mode sweep from a scalar loss.

        Visits each reachable node exactly once, in reverse topological
        order; repeated calls on an unchanged graph produce identical
        gradients (accumulation starts from None each time grads are
        cleared by the caller).
        """
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray):
    # first write is a copy so pass-through gradients stay bit-identical
    if t.grad is None:
        t.grad = g.astype(np.float32, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if CHECK_FINITE and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite value produced by forward op")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# structural ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    out = _make(out_data, (a, b), backward)
    return out


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over matching leading dims: [N,p,q] @ [N,q,r]."""
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise DimensionError(f"bmm shapes disagree: {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward():
        g = out.grad
        if a.requires_grad:
            _accum(a, np.matmul(g, b.data.swapaxes(-1, -2)))
        if b.requires_grad:
            _accum(b, np.matmul(a.data.swapaxes(-1, -2), g))

    out = _make(out_data, (a, b), backward)
    return out


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        out_data = a.data + b.data
    except ValueError as e:
        raise DimensionError(f"add shapes not broadcastable: {a.shape} + {b.shape}") from e

    def backward():
        g = out.grad
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    out = _make(out_data, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        out_data = a.data * b.data
    except ValueError as e:
        raise DimensionError(f"mul shapes not broadcastable: {a.shape} * {b.shape}") from e

    def backward():
        g = out.grad
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    out = _make(out_data, (a, b), backward)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    a = _coerce(a)
    out_data = a.data.reshape(shape)

    def backward():
        if a.requires_grad:
            _accum(a, out.grad.reshape(a.data.shape))

    out = _make(out_data, (a,), backward)
    return out


def transpose(a: Tensor, axes) -> Tensor:
    a = _coerce(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_data = a.data.transpose(axes)

    def backward():
        if a.requires_grad:
            _accum(a, out.grad.transpose(inv))

    out = _make(out_data, (a,), backward)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward():
        g = out.grad
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, g[tuple(sl)])

    out = _make(out_data, tuple(ts), backward)
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = _coerce(a)
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out_data = a.data[sl]

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[sl] = out.grad
            _accum(a, g)

    out = _make(out_data, (a,), backward)
    return out


def embedding(table: Tensor, indices) -> Tensor:
    """Row lookup: out[i] = table[indices[i]]; backward scatter-adds."""
    table = _coerce(table)
    idx = np.asarray(indices, dtype=np.int64)
    out_data = table.data[idx]

    def backward():
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, idx, out.grad)
            _accum(table, g)

    out = _make(out_data, (table,), backward)
    return out


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float32)

    def backward():
        if a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.data.shape).astype(np.float32))

    out = _make(out_data, (a,), backward)
    return out


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def sigmoid(a: Tensor) -> Tensor:
    a = _coerce(a)
    # two-branch form avoids overflow in exp for large |x|
    z = np.exp(-np.abs(a.data))
    out_data = np.where(a.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(np.float32)

    def backward():
        if a.requires_grad:
            s = out.data
            _accum(a, out.grad * s * (1.0 - s))

    out = _make(out_data, (a,), backward)
    return out


def tanh(a: Tensor) -> Tensor:
    a = _coerce(a)
    out_data = np.tanh(a.data)

    def backward():
        if a.requires_grad:
            _accum(a, out.grad * (1.0 - out.data * out.data))

    out = _make(out_data, (a,), backward)
    return out


def relu(a: Tensor) -> Tensor:
    a = _coerce(a)
    out_data = np.maximum(a.data, 0.0)

    def backward():
        if a.requires_grad:
            _accum(a, out.grad * (a.data > 0))

    out = _make(out_data, (a,), backward)
    return out


def log(a: Tensor) -> Tensor:
    a = _coerce(a)
    out_data = np.log(a.data)

    def backward():
        if a.requires_grad:
            _accum(a, out.grad / a.data)

    out = _make(out_data, (a,), backward)
    return out


def powc(a: Tensor, p: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    a = _coerce(a)
    out_data = np.power(a.data, np.float32(p))

    def backward():
        if a.requires_grad:
            _accum(a, out.grad * p * np.power(a.data, np.float32(p - 1.0)))

    out = _make(out_data, (a,), backward)
    return out


def abs_(a: Tensor) -> Tensor:
    a = _coerce(a)
    out_data = np.abs(a.data)

    def backward():
        if a.requires_grad:
            _accum(a, out.grad * np.sign(a.data))  # subgradient 0 at 0

    out = _make(out_data, (a,), backward)
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis, max-shifted for stability."""
    a = _coerce(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward():
        if a.requires_grad:
            s = out.data
            g = out.grad
            _accum(a, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    out = _make(out_data, (a,), backward)
    return out


_POINTWISE = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "log": log,
    "softmax": softmax,
    "mul": mul,
    "add": add,
}


def pointwise(kind: str, *inputs) -> Tensor:
    """Dispatch by name; binary kinds broadcast, softmax normalises last axis."""
    try:
        fn = _POINTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown pointwise kind {kind!r}") from None
    return fn(*inputs)


def dropout(a: Tensor, rate: float, rng) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return a
    a = _coerce(a)
    keep = rng.bernoulli(np.full(a.data.shape, 1.0 - rate)) / np.float32(1.0 - rate)
    return mul(a, Tensor(keep))


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits: Tensor, targets, pad_id: int) -> Tensor:
    """Mean negative log-likelihood over non-pad positions.

    logits: [N, V]; targets: N integer token ids; positions equal to
    pad_id are excluded from the mean.
    """
    logits = _coerce(logits)
    t = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or t.shape != (logits.data.shape[0],):
        raise DimensionError(
            f"cross_entropy expects logits [N,V] and N targets, got {logits.shape} / {t.shape}"
        )
    valid = t != pad_id
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("cross_entropy: every position is padding, mean undefined")
    v = logits.data.shape[1]
    if np.any((t[valid] < 0) | (t[valid] >= v)):
        raise DimensionError("cross_entropy: target id outside [0, vocab)")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(t.shape[0])
    safe_t = np.where(valid, t, 0)
    nll = -logp[rows, safe_t]
    out_data = np.float32(nll[valid].mean())

    def backward():
        if logits.requires_grad:
            g = np.exp(logp)  # softmax
            g[rows, safe_t] -= 1.0
            g *= (valid / n_valid)[:, None]
            _accum(logits, out.grad * g)

    out = _make(out_data, (logits,), backward)
    return out


def layer_norm(a: Tensor, scale: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then affine. Composed from primitives."""
    mu = mean(a, axis=-1, keepdims=True)
    centered = add(a, mul(mu, -1.0))
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = powc(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), scale), bias)
