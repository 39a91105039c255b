"""Minimal reverse-mode autodiff on float64 numpy arrays.

Everything is desk scale: parameters are small dense matrices, a forward
pass records a few hundred nodes, and gradients are exact reverse-mode
vector-Jacobian products.  Two interchangeable backends expose the same
primitive set, so model code is written once:

* :class:`ArrayOps` - plain numpy, no gradient tracking (fast rollouts,
  finite-difference oracles).
* :class:`TapeOps` - records every primitive on a :class:`Tape` so
  :func:`backward` can replay it in reverse.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

Matrix = np.ndarray  # row-major float64 throughout


def _as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


class Tape:
    """Ordered record of primitive operations for reverse-mode replay.

    Nodes are appended in forward order, so iterating the tape backwards
    visits each node after all of its consumers: a valid reverse
    topological order.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def leaf(self, value, name: str | None = None) -> "Node":
        return Node(self, _as_f64(value), parents=(), vjp=None, name=name)

    constant = leaf


class Node:
    """One tape entry: a value plus how to push gradients to its parents."""

    __slots__ = ("tape", "value", "parents", "vjp", "name", "grad", "index")

    def __init__(self, tape: Tape, value: np.ndarray, parents: tuple, vjp, name=None):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.name = name
        self.grad: np.ndarray | None = None
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _tape_of(*operands) -> Tape:
    for op in operands:
        if isinstance(op, Node):
            return op.tape
    raise TypeError("at least one operand must be a tape Node")


def _wrap(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.constant(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    if b.value.ndim != 2:
        raise ValueError(f"matmul expects a 2-D right operand, got shape {b.value.shape}")
    av, bv = a.value, b.value
    if av.shape[-1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    out = av @ bv

    def vjp(g):
        ga = g @ bv.T
        gb = np.tensordot(av, g, axes=(tuple(range(av.ndim - 1)), tuple(range(g.ndim - 1))))
        return ga, gb

    return Node(tape, out, (a, b), vjp)


def add(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    out = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Node(tape, out, (a, b), vjp)


def sub(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    out = a.value - b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), -_unbroadcast(g, b.value.shape)

    return Node(tape, out, (a, b), vjp)


def mul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    out = a.value * b.value

    def vjp(g):
        return (_unbroadcast(g * b.value, a.value.shape),
                _unbroadcast(g * a.value, b.value.shape))

    return Node(tape, out, (a, b), vjp)


def relu(x) -> Node:
    tape = _tape_of(x)
    x = _wrap(tape, x)
    gate = x.value > 0.0
    out = np.where(gate, x.value, 0.0)

    def vjp(g):
        return (g * gate,)

    return Node(tape, out, (x,), vjp)


def square(x) -> Node:
    tape = _tape_of(x)
    x = _wrap(tape, x)
    out = x.value * x.value

    def vjp(g):
        return (g * 2.0 * x.value,)

    return Node(tape, out, (x,), vjp)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Node:
    tape = _tape_of(x)
    x = _wrap(tape, x)
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.value.shape).copy(),)

    return Node(tape, np.asarray(out, dtype=np.float64), (x,), vjp)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Node:
    tape = _tape_of(x)
    x = _wrap(tape, x)
    count = x.value.size if axis is None else x.value.shape[axis]
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def take_neighbors(x, idx: np.ndarray) -> Node:
    """Gather neighbor rows: ``x[..., idx, :]``.

    ``x`` is ``(N, D)`` or ``(B, N, D)`` and ``idx`` an integer array
    ``(N, S)`` of row indices; the result has shape ``(..., N, S, D)``.
    The backward pass scatter-adds, so repeated indices accumulate.
    """
    tape = _tape_of(x)
    x = _wrap(tape, x)
    idx = np.asarray(idx, dtype=np.intp)
    xv = x.value
    if xv.ndim == 2:
        out = xv[idx, :]
    elif xv.ndim == 3:
        out = xv[:, idx, :]
    else:
        raise ValueError(f"take_neighbors expects 2-D or 3-D input, got shape {xv.shape}")

    def vjp(g):
        gx = np.zeros_like(xv)
        if xv.ndim == 2:
            np.add.at(gx, idx, g)
        else:
            np.add.at(gx, (slice(None), idx), g)
        return (gx,)

    return Node(tape, out, (x,), vjp)


def expand_dims(x, axis: int) -> Node:
    tape = _tape_of(x)
    x = _wrap(tape, x)
    out = np.expand_dims(x.value, axis)

    def vjp(g):
        return (np.squeeze(g, axis=axis),)

    return Node(tape, out, (x,), vjp)


def _masked_softmax(z: np.ndarray, valid: np.ndarray | None) -> np.ndarray:
    if valid is None:
        m = z.max(axis=-1, keepdims=True)
        e = np.exp(z - m)
        return e / e.sum(axis=-1, keepdims=True)
    valid = np.broadcast_to(np.asarray(valid, dtype=bool), z.shape)
    if not valid.any(axis=-1).all():
        raise ValueError("softmax_temp: every slot masked in at least one row")
    neg = np.where(valid, z, -np.inf)
    m = neg.max(axis=-1, keepdims=True)
    e = np.where(valid, np.exp(z - m), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_temp(e, tau: float = 1.0, valid: np.ndarray | None = None) -> Node:
    """Temperature softmax over the last axis with optional validity mask.

    Invalid slots receive probability 0 and are excluded from the
    normalization; the max is subtracted before exponentiation so large
    scores cannot overflow.
    """
    if tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    tape = _tape_of(e)
    e = _wrap(tape, e)
    alpha = _masked_softmax(e.value / tau, valid)

    def vjp(g):
        inner = (g * alpha).sum(axis=-1, keepdims=True)
        return (alpha * (g - inner) / tau,)

    return Node(tape, alpha, (e,), vjp)


def dense(x, w, b=None, activation: str = "none") -> Node:
    """``act(x @ w + b)`` with ``activation`` one of ``relu`` / ``none``."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    if activation == "relu":
        return relu(out)
    if activation == "none":
        return out
    raise ValueError(f"unknown activation {activation!r}")


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable node.

    ``loss`` must be scalar.  Adjoints for the walk are kept local, so
    calling backward for several losses on one tape sums their gradients.
    """
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    adjoint: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
    for node in reversed(loss.tape.nodes[: loss.index + 1]):
        g = adjoint.pop(node.index, None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            prev = adjoint.get(parent.index)
            adjoint[parent.index] = pg if prev is None else prev + pg


class ArrayOps:
    """Plain-numpy twin of the tape primitives (no gradient tracking)."""

    @staticmethod
    def matmul(a, b):
        return a @ b

    @staticmethod
    def add(a, b):
        return a + b

    @staticmethod
    def sub(a, b):
        return a - b

    @staticmethod
    def mul(a, b):
        return a * b

    @staticmethod
    def relu(x):
        return np.maximum(x, 0.0)

    @staticmethod
    def square(x):
        return x * x

    @staticmethod
    def reduce_sum(x, axis=None, keepdims=False):
        return np.asarray(x.sum(axis=axis, keepdims=keepdims), dtype=np.float64)

    @staticmethod
    def reduce_mean(x, axis=None, keepdims=False):
        return np.asarray(x.mean(axis=axis, keepdims=keepdims), dtype=np.float64)

    @staticmethod
    def take_neighbors(x, idx):
        return x[idx, :] if x.ndim == 2 else x[:, idx, :]

    @staticmethod
    def expand_dims(x, axis):
        return np.expand_dims(x, axis)

    @staticmethod
    def softmax_temp(e, tau=1.0, valid=None):
        if tau <= 0.0:
            raise ValueError(f"temperature must be positive, got {tau}")
        return _masked_softmax(e / tau, valid)

    @staticmethod
    def dense(x, w, b=None, activation="none"):
        out = x @ w
        if b is not None:
            out = out + b
        if activation == "relu":
            return np.maximum(out, 0.0)
        if activation == "none":
            return out
        raise ValueError(f"unknown activation {activation!r}")

    @staticmethod
    def value(x):
        return x


class TapeOps:
    """Tape-recording backend; operands may be Nodes or ndarrays."""

    def __init__(self, tape: Tape):
        self.tape = tape

    def matmul(self, a, b):
        return matmul(_wrap(self.tape, a), _wrap(self.tape, b))

    def add(self, a, b):
        return add(_wrap(self.tape, a), _wrap(self.tape, b))

    def sub(self, a, b):
        return sub(_wrap(self.tape, a), _wrap(self.tape, b))

    def mul(self, a, b):
        return mul(_wrap(self.tape, a), _wrap(self.tape, b))

    def relu(self, x):
        return relu(_wrap(self.tape, x))

    def square(self, x):
        return square(_wrap(self.tape, x))

    def reduce_sum(self, x, axis=None, keepdims=False):
        return reduce_sum(_wrap(self.tape, x), axis=axis, keepdims=keepdims)

    def reduce_mean(self, x, axis=None, keepdims=False):
        return reduce_mean(_wrap(self.tape, x), axis=axis, keepdims=keepdims)

    def take_neighbors(self, x, idx):
        return take_neighbors(_wrap(self.tape, x), idx)

    def expand_dims(self, x, axis):
        return expand_dims(_wrap(self.tape, x), axis)

    def softmax_temp(self, e, tau=1.0, valid=None):
        return softmax_temp(_wrap(self.tape, e), tau=tau, valid=valid)

    def dense(self, x, w, b=None, activation="none"):
        return dense(_wrap(self.tape, x), _wrap(self.tape, w),
                     None if b is None else _wrap(self.tape, b), activation)

    @staticmethod
    def value(x):
        return x.value if isinstance(x, Node) else x


@dataclass
class AdamState:
    """Per-parameter Adam moments plus the shared step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> dict[str, np.ndarray]:
    """One Adam update, in place.  Non-finite gradients abort untouched."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape "
                             f"{params[name].shape} for {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        m = state.m.setdefault(name, np.zeros_like(params[name]))
        v = state.v.setdefault(name, np.zeros_like(params[name]))
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        params[name] -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return params


def finite_difference_gradients(f: Callable[[dict[str, np.ndarray]], float],
                                params: dict[str, np.ndarray],
                                h: float = 1e-5,
                                names: Iterable[str] | None = None) -> dict[str, np.ndarray]:
    """Central-difference gradients of a scalar function of the parameters."""
    out: dict[str, np.ndarray] = {}
    for name in (names if names is not None else params):
        p = params[name]
        g = np.zeros_like(p)
        flat, gflat = p.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f(params)
            flat[i] = orig - h
            lo = f(params)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        out[name] = g
    return out


def max_relative_error(analytic: dict[str, np.ndarray],
                       numeric: dict[str, np.ndarray],
                       floor: float = 1e-8) -> float:
    """Largest per-tensor norm-scaled deviation between two gradient sets."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
        worst = max(worst, float(np.abs(a - n).max(initial=0.0)) / scale)
    return worst


def save_params(params: dict[str, np.ndarray], path) -> None:
    """Write a checkpoint as a JSON map ``{name: {shape, values}}``.

    Python float repr round-trips IEEE doubles exactly, so load/save is
    bit-exact for finite values.
    """
    payload = {
        name: {"shape": list(arr.shape), "values": arr.ravel().tolist()}
        for name, arr in params.items()
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_params(path) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return {
        name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload.items()
    }
