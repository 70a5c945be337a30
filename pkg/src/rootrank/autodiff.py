"""Dense float64 tensors with reverse-mode automatic differentiation.

Every model quantity in this package is a rank-0/1/2 :class:`Tensor`.
Operations executed against a :class:`Tape` record their backward rule;
:func:`backward` replays the tape in exact reverse order to produce
gradients of a scalar loss with respect to every leaf that requires
them.  Passing ``tape=None`` runs the same forward math without
recording, for inference.

The op set is closed: matmul, add, sub, mul, scalar_mul, sigmoid, tanh,
relu, softmax, concat, split, transpose, sum (reduce), log, layer_norm.
All ops reject non-finite results.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    """A rank <= 2 float64 array, optionally participating in gradients."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ValueError(f"tensors are rank <= 2, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise FloatingPointError("tensor holds non-finite values")
        self.data = arr
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


# Backward callbacks receive the output gradient and return one gradient
# array (or None) per op input, in input order.
_Backward = Callable[[np.ndarray], tuple]


class Tape:
    """Append-only record of executed ops, replayed in reverse by backward()."""

    __slots__ = ("_records", "_produced")

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], _Backward]] = []
        self._produced: set[int] = set()

    def __len__(self) -> int:
        return len(self._records)

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], bwd: _Backward) -> None:
        self._records.append((out, inputs, bwd))
        self._produced.add(id(out))

    def apply(self, op: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
        """Generic dispatch by op name; same contracts as the named functions."""
        try:
            fn = _OPS[op]
        except KeyError:
            raise ValueError(f"unknown op kind {op!r}") from None
        return fn(self, *inputs, **attrs)


class Gradients:
    """Gradient lookup for the leaves of one backward pass.

    Leaves that never influenced the loss map to zeros of their shape.
    """

    __slots__ = ("_by_id",)

    def __init__(self, by_id: dict[int, np.ndarray]):
        self._by_id = by_id

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._by_id.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Exact reverse-mode gradients of a scalar loss over the whole tape."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    if id(loss) not in tape._produced:
        raise ValueError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, bwd in reversed(tape._records):
        g_out = grads.get(id(out))
        if g_out is None:
            continue
        for inp, g_in in zip(inputs, bwd(g_out)):
            if g_in is None or not inp.requires_grad:
                continue
            acc = grads.get(id(inp))
            if acc is None:
                # Copy: a backward rule may hand the same array to several
                # inputs, and accumulation below mutates in place.
                grads[id(inp)] = g_in.copy()
            else:
                acc += g_in
    return Gradients(grads)


def _make(tape: Tape | None, data: np.ndarray, inputs: tuple[Tensor, ...], bwd: _Backward) -> Tensor:
    if not np.isfinite(data).all():
        raise FloatingPointError("op produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(t.requires_grad for t in inputs)
    if tape is not None and out.requires_grad:
        tape._record(out, inputs, bwd)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Op kinds


def matmul(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: (n,k)@(k,m) -> (n,m) or (n,k)@(k,) -> (n,)."""
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise ValueError(f"matmul: unsupported shapes {a.shape} @ {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    if b.data.ndim == 2:
        def bwd(g):
            return g @ b.data.T, a.data.T @ g
    else:
        def bwd(g):
            return np.outer(g, b.data), a.data.T @ g
    return _make(tape, out, (a, b), bwd)


def add(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)
    return _make(tape, out, (a, b), bwd)


def sub(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    def bwd(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)
    return _make(tape, out, (a, b), bwd)


def mul(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product, with numpy broadcasting."""
    out = a.data * b.data
    def bwd(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)
    return _make(tape, out, (a, b), bwd)


def scalar_mul(tape: Tape | None, a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = a.data * c
    def bwd(g):
        return (g * c,)
    return _make(tape, out, (a,), bwd)


def sigmoid(tape: Tape | None, a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    def bwd(g):
        return (g * s * (1.0 - s),)
    return _make(tape, s, (a,), bwd)


def tanh(tape: Tape | None, a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    def bwd(g):
        return (g * (1.0 - t * t),)
    return _make(tape, t, (a,), bwd)


def relu(tape: Tape | None, a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0.0
    def bwd(g):
        return (g * mask,)
    return _make(tape, out, (a,), bwd)


def softmax(tape: Tape | None, a: Tensor, axis: int = 0) -> Tensor:
    """Softmax over vectors: rank-1 directly, rank-2 independently along ``axis``.

    Implemented with max subtraction, so it is shift invariant and never
    overflows.
    """
    x = a.data
    if x.ndim == 1:
        ax = 0
    else:
        if axis not in (0, 1):
            raise ValueError("softmax: axis must be 0 or 1 for matrices")
        ax = axis
    if x.shape[ax] == 0:
        raise ValueError("softmax over an empty axis")
    shifted = x - x.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=ax, keepdims=True)
    def bwd(g):
        dot = (p * g).sum(axis=ax, keepdims=True)
        return (p * (g - dot),)
    return _make(tape, p, (a,), bwd)


def concat(tape: Tape | None, *tensors: Tensor) -> Tensor:
    """Concatenate along the last axis."""
    if not tensors:
        raise ValueError("concat of zero tensors")
    ndim = tensors[0].data.ndim
    if any(t.data.ndim != ndim for t in tensors):
        raise ValueError("concat: mixed ranks")
    ax = ndim - 1
    out = np.concatenate([t.data for t in tensors], axis=ax)
    widths = [t.data.shape[ax] for t in tensors]
    bounds = np.cumsum(widths)[:-1]
    def bwd(g):
        return tuple(np.split(g, bounds, axis=ax))
    return _make(tape, out, tuple(tensors), bwd)


def split(tape: Tape | None, a: Tensor, parts: int) -> list[Tensor]:
    """Split into ``parts`` equal chunks along the last axis."""
    ax = a.data.ndim - 1
    width = a.data.shape[ax]
    if parts < 1 or width % parts != 0:
        raise ValueError(f"split: {width} columns do not divide into {parts} parts")
    step = width // parts
    outs = []
    for i in range(parts):
        lo = i * step
        piece = a.data[..., lo:lo + step]
        def bwd(g, lo=lo):
            full = np.zeros_like(a.data)
            full[..., lo:lo + step] = g
            return (full,)
        outs.append(_make(tape, piece.copy(), (a,), bwd))
    return outs


def transpose(tape: Tape | None, a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError("transpose: rank-2 only")
    out = a.data.T.copy()
    def bwd(g):
        return (g.T,)
    return _make(tape, out, (a,), bwd)


def reduce_sum(tape: Tape | None, a: Tensor, axis: int | None = None) -> Tensor:
    out = a.data.sum(axis=axis)
    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)
    return _make(tape, out, (a,), bwd)


def log(tape: Tape | None, a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    def bwd(g):
        return (g / a.data,)
    return _make(tape, out, (a,), bwd)


def layer_norm(tape: Tape | None, a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-vector normalization over the last axis with learned gain and bias."""
    x = a.data
    d = x.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError(f"layer_norm: gain/bias must have shape ({d},)")
    mean = x.mean(axis=-1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    def bwd(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        axes = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=axes) if axes else g * xhat
        dbias = g.sum(axis=axes) if axes else g
        return dx, dgain, dbias
    return _make(tape, out, (a, gain, bias), bwd)


_OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scalar_mul": scalar_mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "softmax": softmax,
    "concat": concat,
    "split": split,
    "transpose": transpose,
    "sum": reduce_sum,
    "log": log,
    "layer_norm": layer_norm,
}


def clamp_unit_interval(tape: Tape | None, p: Tensor, eps: float = 1e-12) -> Tensor:
    """Pin values into [eps, 1-eps] using relu hinges (differentiable in the interior)."""
    eps_t = constant(np.full_like(p.data, eps))
    hi_t = constant(np.full_like(p.data, 1.0 - eps))
    raised = add(tape, p, relu(tape, sub(tape, eps_t, p)))
    return sub(tape, raised, relu(tape, sub(tape, raised, hi_t)))


def grad_check(f: Callable[[Tape | None, Sequence[Tensor]], Tensor],
               params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(tape, params)`` must build a scalar loss from scratch on each
    call.  Parameter entries are perturbed in place and restored.
    """
    tape = Tape()
    loss = f(tape, params)
    grads = backward(tape, loss)
    worst = 0.0
    for p in params:
        analytic = grads[p].reshape(-1)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f(None, params).item()
            flat[i] = orig - h
            f_minus = f(None, params).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]), abs(numeric))
            if err > worst:
                worst = err
    return worst
