"""Dense float64 tensors with tape-recorded reverse-mode differentiation.

Everything is a plain numpy array underneath.  Operations executed while a
``Tape`` is active are recorded; ``backward`` replays the record in reverse
to accumulate gradients onto the leaves.  There is no broadcasting beyond
trailing-aligned parameter broadcast (a ``(C,)`` bias against a ``(B, S, C)``
activation); this keeps every backward rule auditable.

Tapes are tracked per thread, so independent simulated clients can run
their forward/backward passes concurrently as long as they never share
tensors.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ConfigError, DomainError, NumericError, ShapeError, StateError
from .special import digamma as _digamma_values
from .special import trigamma as _trigamma_values

_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def _active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by '{op}'")


class Tensor:
    """A dense float64 array plus gradient bookkeeping.

    ``requires_grad`` marks leaves that should receive gradients;
    intermediate results inherit it from their inputs while a tape is
    active.  ``grad`` is populated (accumulating across backward calls)
    only on leaves.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Operator sugar; scalars and arrays are lifted to constants.
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


class Tape:
    """Ordered record of operations for one forward pass.

    Records are appended in execution order, so every operation's inputs
    precede it and a reverse sweep is a valid reverse-topological order.
    A tape supports exactly one backward pass.
    """

    __slots__ = ("_records", "_consumed")

    def __init__(self):
        self._records: list = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise StateError("tape context exited out of order")
        stack.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    @property
    def consumed(self) -> bool:
        return self._consumed


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def constant(value) -> Tensor:
    """Wrap an array as a non-differentiable tensor."""
    return Tensor(value, requires_grad=False)


def _emit(data: np.ndarray, inputs: Sequence[Tensor], rule: Callable, op: str) -> Tensor:
    """Create an output tensor and record it on the active tape."""
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        if tape._consumed:
            raise StateError("cannot record onto a consumed tape")
        out.requires_grad = True
        tape._records.append((out, tuple(inputs), rule))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every requires_grad leaf.

    ``loss`` must be a scalar.  Gradients sum over fan-out.  The tape is
    consumed; calling backward on it twice raises ``StateError``.
    """
    if tape._consumed:
        raise StateError("backward already ran on this tape")
    tape._consumed = True
    if loss.data.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")

    produced = {id(rec[0]) for rec in tape._records}
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad and id(loss) not in produced:
        leaves[id(loss)] = loss

    for out, inputs, rule in reversed(tape._records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        input_grads = rule(g)
        for tens, gi in zip(inputs, input_grads):
            if gi is None or not tens.requires_grad:
                continue
            key = id(tens)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.asarray(gi, dtype=np.float64)
            if key not in produced:
                leaves[key] = tens

    for key, tens in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        g = np.ascontiguousarray(np.broadcast_to(g, tens.data.shape))
        if tens.grad is None:
            tens.grad = g.copy()
        else:
            tens.grad = tens.grad + g


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    if g.shape != shape:
        raise ShapeError(f"cannot reduce gradient of shape {g.shape} to {shape}")
    return g


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from exc

    def rule(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit(data, (a, b), rule, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}") from exc

    def rule(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit(data, (a, b), rule, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from exc

    def rule(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _emit(data, (a, b), rule, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError as exc:
        raise ShapeError(f"div: {a.shape} vs {b.shape}") from exc

    def rule(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _emit(data, (a, b), rule, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def rule(g):
        return (-g,)

    return _emit(-a.data, (a,), rule, "neg")


def matmul(a, b) -> Tensor:
    """Matrix product; stacked batches broadcast on the leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul expects operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions {a.shape} x {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}") from exc

    def rule(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return _emit(data, (a, b), rule, "matmul")


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {a.shape} -> {shape}") from exc

    def rule(g):
        return (g.reshape(a.data.shape),)

    return _emit(data, (a,), rule, "reshape")


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for ndim {a.ndim}")
    inverse = tuple(np.argsort(axes))

    def rule(g):
        return (g.transpose(inverse),)

    return _emit(a.data.transpose(axes), (a,), rule, "transpose")


def concat(tensors, axis: int = -1) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat of zero tensors")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat: incompatible shapes") from exc
    ax = axis if axis >= 0 else data.ndim + axis
    sizes = [p.data.shape[ax] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def rule(g):
        slicer = [slice(None)] * g.ndim
        pieces = []
        for i in range(len(parts)):
            slicer[ax] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(slicer)])
        return tuple(pieces)

    return _emit(data, parts, rule, "concat")


# ---------------------------------------------------------------------------
# reductions


def _normalize_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    ax = _normalize_axis(axis, a.ndim)
    data = a.data.sum(axis=ax, keepdims=keepdims)

    def rule(g):
        if ax is None:
            return (np.broadcast_to(g, a.data.shape),)
        ge = g if keepdims else np.expand_dims(g, ax)
        return (np.broadcast_to(ge, a.data.shape),)

    return _emit(np.asarray(data, dtype=np.float64), (a,), rule, "sum")


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    ax = _normalize_axis(axis, a.ndim)
    data = a.data.mean(axis=ax, keepdims=keepdims)
    if ax is None:
        count = a.data.size
    else:
        count = int(np.prod([a.data.shape[i] for i in ax]))

    def rule(g):
        if ax is None:
            return (np.broadcast_to(g / count, a.data.shape),)
        ge = g if keepdims else np.expand_dims(g, ax)
        return (np.broadcast_to(ge / count, a.data.shape),)

    return _emit(np.asarray(data, dtype=np.float64), (a,), rule, "mean")


def tvariance(a, axis=0, keepdims: bool = False) -> Tensor:
    """Population (1/N) variance along ``axis``."""
    a = _as_tensor(a)
    ax = _normalize_axis(axis, a.ndim)
    mu = a.data.mean(axis=ax, keepdims=True)
    centered = a.data - mu
    data = (centered * centered).mean(axis=ax, keepdims=keepdims)
    count = int(np.prod([a.data.shape[i] for i in ax]))

    def rule(g):
        ge = g if keepdims else np.expand_dims(g, ax)
        return (2.0 * centered * ge / count,)

    return _emit(np.asarray(data, dtype=np.float64), (a,), rule, "variance")


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def rule(g):
        return (g * mask,)

    return _emit(np.where(mask, a.data, 0.0), (a,), rule, "relu")


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid_values(a.data)

    def rule(g):
        return (g * s * (1.0 - s),)

    return _emit(s, (a,), rule, "sigmoid")


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    data = np.logaddexp(0.0, a.data)

    def rule(g):
        return (g * _sigmoid_values(a.data),)

    return _emit(data, (a,), rule, "softplus")


def tlog(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive input")

    def rule(g):
        return (g / a.data,)

    return _emit(np.log(a.data), (a,), rule, "log")


def clamp_min(a, floor: float) -> Tensor:
    """max(x, floor); the subgradient passes only where x > floor."""
    a = _as_tensor(a)
    mask = a.data > floor

    def rule(g):
        return (g * mask,)

    return _emit(np.maximum(a.data, floor), (a,), rule, "clamp_min")


def digamma(a) -> Tensor:
    """Elementwise digamma; the backward rule is trigamma."""
    a = _as_tensor(a)
    data = _digamma_values(a.data)

    def rule(g):
        return (g * _trigamma_values(a.data),)

    return _emit(np.asarray(data, dtype=np.float64), (a,), rule, "digamma")


def dropout(a, p: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    a = _as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return a
    if rng is None:
        raise ConfigError("dropout with p > 0 requires an explicit generator")
    scale = 1.0 / (1.0 - p)
    mask = (rng.random(a.data.shape) >= p) * scale

    def rule(g):
        return (g * mask,)

    return _emit(a.data * mask, (a,), rule, "dropout")


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    s = ex / ex.sum(axis=axis, keepdims=True)

    def rule(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return ((g - inner) * s,)

    return _emit(s, (a,), rule, "softmax")


# ---------------------------------------------------------------------------
# structured ops


def conv1d(x, kernel, padding: Optional[int] = None) -> Tensor:
    """Cross-correlation along the sequence axis.

    ``x`` is (B, L, Cin), ``kernel`` is (K, Cin, Cout) with odd K; the
    default padding K//2 preserves the sequence length.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeError("conv1d expects x (B, L, Cin) and kernel (K, Cin, Cout)")
    k_taps, c_in, _ = kernel.shape
    if k_taps % 2 == 0:
        raise ConfigError(f"conv1d kernel size must be odd, got {k_taps}")
    if x.shape[2] != c_in:
        raise ShapeError(f"conv1d channels: input {x.shape[2]} vs kernel {c_in}")
    pad = k_taps // 2 if padding is None else int(padding)
    length = x.shape[1]
    out_len = length + 2 * pad - k_taps + 1
    if out_len < 1:
        raise ShapeError("conv1d output length would be < 1")

    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    data = None
    for t in range(k_taps):
        term = xp[:, t : t + out_len, :] @ kernel.data[t]
        data = term if data is None else data + term

    def rule(g):
        gk = np.empty_like(kernel.data)
        gxp = np.zeros_like(xp)
        for t in range(k_taps):
            window = xp[:, t : t + out_len, :]
            gk[t] = np.tensordot(window, g, axes=([0, 1], [0, 1]))
            gxp[:, t : t + out_len, :] += g @ kernel.data[t].T
        gx = gxp[:, pad : pad + length, :] if pad else gxp
        return gx, gk

    return _emit(data, (x, kernel), rule, "conv1d")


def maxpool1d(x, k: int = 2) -> Tensor:
    """Non-overlapping max pooling over the sequence axis of (B, L, C)."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeError("maxpool1d expects (B, L, C)")
    b, length, c = x.shape
    if length % k != 0:
        raise ShapeError(f"maxpool1d: length {length} not divisible by {k}")
    xr = x.data.reshape(b, length // k, k, c)
    idx = xr.argmax(axis=2)
    data = np.take_along_axis(xr, idx[:, :, None, :], axis=2).squeeze(axis=2)

    def rule(g):
        gr = np.zeros_like(xr)
        np.put_along_axis(gr, idx[:, :, None, :], g[:, :, None, :], axis=2)
        return (gr.reshape(b, length, c),)

    return _emit(data, (x,), rule, "maxpool1d")


def adaptive_avgpool(x) -> Tensor:
    """Average over the sequence axis: (B, L, C) -> (B, C)."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeError("adaptive_avgpool expects (B, L, C)")
    length = x.shape[1]

    def rule(g):
        return (np.broadcast_to(g[:, None, :] / length, x.data.shape),)

    return _emit(x.data.mean(axis=1), (x,), rule, "adaptive_avgpool")


def layernorm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError("layernorm: gamma/beta must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = gamma.data * xhat + beta.data
    width = x.shape[-1]

    def rule(g):
        dgamma = _unbroadcast(g * xhat, gamma.data.shape)
        dbeta = _unbroadcast(g, beta.data.shape)
        dxhat = g * gamma.data
        term = dxhat - dxhat.mean(axis=-1, keepdims=True)
        term -= xhat * (dxhat * xhat).sum(axis=-1, keepdims=True) / width
        return term * inv, dgamma, dbeta

    return _emit(data, (x, gamma, beta), rule, "layernorm")


def batchnorm1d(
    x,
    gamma,
    beta,
    running_mean: Tensor,
    running_var: Tensor,
    mode: str,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over the leading axes.

    ``x`` is (B, C) or (B, L, C).  Train mode normalizes with current batch
    statistics (population variance) and updates the running buffers in
    place; eval mode normalizes with the running buffers.  A train-mode
    batch of one sample is rejected because its variance is undefined.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim not in (2, 3):
        raise ShapeError("batchnorm1d expects (B, C) or (B, L, C)")
    channels = x.shape[-1]
    for name, t in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if t.shape != (channels,):
            raise ShapeError(f"batchnorm1d: {name} must have shape ({channels},)")
    if mode not in ("train", "eval"):
        raise ConfigError(f"batchnorm1d mode must be 'train' or 'eval', got {mode!r}")

    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        if x.shape[0] < 2:
            raise ShapeError("batchnorm1d train mode needs batch size >= 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean.data = (1.0 - momentum) * running_mean.data + momentum * mu
        running_var.data = (1.0 - momentum) * running_var.data + momentum * var
    else:
        mu = running_mean.data
        var = running_var.data

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = gamma.data * xhat + beta.data
    count = int(np.prod([x.shape[i] for i in axes]))

    if mode == "train":

        def rule(g):
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dxhat = g * gamma.data
            term = dxhat - dxhat.mean(axis=axes, keepdims=True)
            term -= xhat * (dxhat * xhat).sum(axis=axes, keepdims=True) / count
            return term * inv, dgamma, dbeta, None, None

    else:

        def rule(g):
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            return g * gamma.data * inv, dgamma, dbeta, None, None

    return _emit(data, (x, gamma, beta, running_mean, running_var), rule, "batchnorm1d")
