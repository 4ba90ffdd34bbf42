"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every tensor wraps a float64 ndarray. Operations executed while a Tape is
active record a backward rule; ``backward(loss)`` replays the tape in exact
reverse recording order and accumulates gradients on every reachable leaf
with ``requires_grad``. Tensors created outside a tape are plain values.

Broadcasting is deliberately limited: an operand may be a scalar, may omit
leading axes, or may carry singleton axes; gradients are reduced back with a
single sum-over-expanded-axes rule so every backward stays auditable.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericError

_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of operations; single-threaded, single-use."""

    __slots__ = ("nodes", "spent")

    def __init__(self):
        self.nodes = []  # (output, parents, backward_fn) in recording order
        self.spent = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def param(data) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data, parents, backward_fn) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    tape = active_tape()
    if tape is not None and out.requires_grad:
        out._tape = tape
        tape.nodes.append((out, parents, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    squeezed = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squeezed:
        grad = grad.sum(axis=squeezed, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, opname: str):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise DimensionError(
            f"{opname}: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None


# --- arithmetic ---


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _emit(a.data * b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(
            f"matmul requires 2-d or higher operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}"
        )
    try:
        np.broadcast_shapes(a.data.shape[:-2], b.data.shape[:-2])
    except ValueError:
        raise DimensionError(
            f"matmul batch dimensions disagree: {a.data.shape} @ {b.data.shape}"
        ) from None

    if b.data.ndim == 2 and a.data.ndim > 2:
        # flatten batch axes so BLAS sees one big 2-d product
        lead = a.data.shape[:-1]
        k, n = b.data.shape
        flat = a.data.reshape(-1, k)
        data = (flat @ b.data).reshape(lead + (n,))

        def backward(g):
            gflat = g.reshape(-1, n)
            ga = (gflat @ b.data.T).reshape(a.data.shape)
            gb = flat.T @ gflat
            return ga, gb

        return _emit(data, (a, b), backward)

    def backward(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape)
        return ga, gb

    return _emit(a.data @ b.data, (a, b), backward)


# --- activations ---


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def backward(g):
        return (g * y * (1.0 - y),)

    return _emit(y, (x,), backward)


def relu(x) -> Tensor:
    x = _wrap(x)

    def backward(g):
        return (g * (x.data > 0),)

    return _emit(np.maximum(x.data, 0.0), (x,), backward)


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = _wrap(x)
    pos = x.data > 0

    def backward(g):
        return (g * np.where(pos, 1.0, slope),)

    return _emit(np.where(pos, x.data, slope * x.data), (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    # min/max propagate NaN and catch either infinity without a bool temp
    if x.data.size and not (np.isfinite(x.data.min()) and np.isfinite(x.data.max())):
        raise NumericError("softmax input contains non-finite values")
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.data.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return ((g - (g * y).sum(axis=axis, keepdims=True)) * y,)

    return _emit(y, (x,), backward)


# --- structure ---


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    old = x.data.shape

    def backward(g):
        return (g.reshape(old),)

    return _emit(x.data.reshape(shape), (x,), backward)


def swapaxes(x, a: int, b: int) -> Tensor:
    x = _wrap(x)

    def backward(g):
        return (g.swapaxes(a, b),)

    return _emit(x.data.swapaxes(a, b), (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of an empty list")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries from ``start`` along ``axis``."""
    x = _wrap(x)
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return _emit(x.data[index], (x,), backward)


def take(x, indices, axis: int = 0) -> Tensor:
    """Gather constant ``indices`` along ``axis``; backward scatter-adds."""
    x = _wrap(x)
    idx = np.asarray(indices, dtype=np.intp)
    prefix = (slice(None),) * axis

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, prefix + (idx,), g)
        return (gx,)

    return _emit(np.take(x.data, idx, axis=axis), (x,), backward)


def mask_fill(x, keep_mask, fill: float = -1e30) -> Tensor:
    """Replace entries where ``keep_mask`` is False by ``fill``.

    The mask is constant: masked entries pass no gradient, which is what
    makes causality tests exact instead of merely small.
    """
    x = _wrap(x)
    keep = np.broadcast_to(np.asarray(keep_mask, dtype=bool), x.data.shape)

    def backward(g):
        return (g * keep,)

    return _emit(np.where(keep, x.data, fill), (x,), backward)


# --- reductions ---


def _reduce_count(shape, axis):
    if axis is None:
        return int(np.prod(shape)) if shape else 1
    return shape[axis]


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _emit(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    n = _reduce_count(x.data.shape, axis)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape) / n,)

    return _emit(x.data.mean(axis=axis, keepdims=keepdims), (x,), backward)


# --- normalization and regularization ---

LAYER_NORM_EPS = 1e-5


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis; zero-variance rows map to the bias."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    if gain.data.shape != x.data.shape[-1:] or bias.data.shape != x.data.shape[-1:]:
        raise DimensionError(
            f"layer_norm gain/bias {gain.data.shape}/{bias.data.shape} "
            f"do not match last axis of {x.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        dgain = _unbroadcast(g * xhat, gain.data.shape)
        dbias = _unbroadcast(g, bias.data.shape)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgain, dbias

    return _emit(xhat * gain.data + bias.data, (x, gain, bias), backward)


def dropout(x, rate: float, rng, training: bool) -> Tensor:
    """Zero entries with probability ``rate`` and rescale survivors.

    Evaluation mode returns the input unchanged (same tensor, bit-identical).
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = _wrap(x)
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.data.shape) >= rate
    scale = 1.0 / (1.0 - rate)

    def backward(g):
        return (g * keep * scale,)

    return _emit(x.data * keep * scale, (x,), backward)


# --- loss and backward ---


def mse_loss(pred, target) -> Tensor:
    pred, target = _wrap(pred), _wrap(target)
    if pred.data.shape != target.data.shape:
        raise ContractError(
            f"mse_loss shapes disagree: {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        scaled = (2.0 / n) * g * diff
        return scaled, -scaled

    return _emit(np.mean(diff * diff), (pred, target), backward)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable requires_grad leaf of ``loss``."""
    tape = loss._tape
    if tape is None or not tape.nodes:
        raise ContractError("backward: loss was not recorded on a tape")
    if tape.spent:
        raise ContractError("backward: tape already consumed; build a new tape")
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    tape.spent = True
    grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
    for out, parents, backward_fn in reversed(tape.nodes):
        g = grads.pop(out, None)
        if g is None:
            continue
        for parent, pg in zip(parents, backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            held = grads.get(parent)
            grads[parent] = pg if held is None else held + pg
    for tensor, g in grads.items():
        tensor.grad = g if tensor.grad is None else tensor.grad + g
    tape.nodes.clear()


def zero_grads(params) -> None:
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = None


# --- optimizer ---


@dataclass
class AdamState:
    """Adam moments plus step counter; moments are zero-initialized lazily."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``params``."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ContractError(
                f"adam_step: gradient shape {g.shape} != parameter shape "
                f"{p.data.shape} for {name!r}"
            )
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; (seed, stream) pairs give independent streams."""
    return np.random.Generator(np.random.Philox(key=[seed, stream]))
