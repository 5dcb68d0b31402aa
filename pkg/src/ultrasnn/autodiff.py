"""Reverse-mode automatic differentiation over dense float64 tensors.

A ``Tape`` records every primitive applied to tensors that require
gradients (define-by-run); ``backward`` replays the tape in reverse and
accumulates exact adjoints, so the backward pass differentiates exactly
the function the forward pass computed.

Only the primitives the spiking-network equations need are provided:
elementwise arithmetic with limited (numpy-style) broadcasting, matmul,
exp/log/sigmoid, a temperature log-sum-exp with gradients in both the
stacked argument and the temperature, stack/roll/reshape structure ops,
and sum/mean reductions.  Everything is float64; there is no internal
parallelism, so gradient accumulation order is fixed by tape order and
replays are bit-identical.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ContractError, InputError, ParameterError, ShapeError

_ACTIVE = threading.local()


def _active_tape():
    return getattr(_ACTIVE, "tape", None)


class Node:
    """One recorded primitive: parent slots and a vjp closure over the
    saved primals.  ``parents[i] is None`` marks a constant input."""

    __slots__ = ("op", "parents", "vjp")

    def __init__(self, op, parents, vjp):
        self.op = op
        self.parents = parents
        self.vjp = vjp


class Tensor:
    """Dense float64 array, optionally tracked on the active tape.

    ``requires_grad`` marks trainable leaves; tensors produced by ops
    inherit it from their inputs.  ``data`` is always a C-contiguous
    float64 ndarray.
    """

    __slots__ = ("data", "requires_grad", "_tape", "_node_id")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self._tape = None
        self._node_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all routing through the module-level primitives
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered op record plus per-node gradient accumulators.

    Use as a context manager around a forward pass; call ``backward`` on
    a scalar result, then read gradients with ``grad``.  A tape is
    single-threaded; independent tapes may live on independent threads.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaf_ids: dict[int, int] = {}
        self._grads: dict[int, np.ndarray] = {}

    def __enter__(self):
        if _active_tape() is not None:
            raise ContractError("tapes do not nest")
        _ACTIVE.tape = self
        return self

    def __exit__(self, *exc):
        _ACTIVE.tape = None
        return False

    def _node_for(self, t: Tensor):
        """Node id of ``t`` on this tape, registering a leaf on first use.

        Tensors recorded on another tape are treated as leaves here.
        """
        if t._tape is self:
            return t._node_id
        key = id(t)
        nid = self._leaf_ids.get(key)
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(Node("leaf", (), None))
            self._leaf_ids[key] = nid
        return nid

    def record(self, op, out_data, parents, vjp):
        """Attach one primitive to the tape.

        ``parents`` are the input Tensors; gradients flow only to those
        with ``requires_grad``.  ``vjp(grad_out)`` must return one
        gradient array per parent (``None`` allowed for constants).
        """
        out = Tensor(out_data, requires_grad=True)
        parent_ids = tuple(
            self._node_for(p) if p.requires_grad else None for p in parents
        )
        out._tape = self
        out._node_id = len(self.nodes)
        self.nodes.append(Node(op, parent_ids, vjp))
        return out

    def backward(self, root: Tensor):
        """Accumulate d(root)/d(leaf) for every recorded tensor.

        Visits each node exactly once, in reverse recording order.
        """
        if root._tape is not self:
            raise ContractError("backward root was not recorded on this tape")
        if root.data.size != 1:
            raise ContractError("backward requires a scalar root")
        grads: dict[int, np.ndarray] = {root._node_id: np.ones_like(root.data)}
        for nid in range(root._node_id, -1, -1):
            g = grads.pop(nid, None)
            if g is None:
                continue
            node = self.nodes[nid]
            self._grads[nid] = self._grads.get(nid, 0.0) + g
            if node.vjp is None:
                continue
            parent_grads = node.vjp(g)
            for pid, pg in zip(node.parents, parent_grads):
                if pid is None or pg is None:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg

    def grad(self, t: Tensor):
        """Gradient of the last ``backward`` root w.r.t. ``t`` (None if
        ``t`` never received gradient)."""
        if t._tape is self:
            nid = t._node_id
        else:
            nid = self._leaf_ids.get(id(t))
        if nid is None:
            return None
        g = self._grads.get(nid)
        if g is None:
            return None
        return np.broadcast_to(g, t.data.shape).astype(np.float64, copy=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _record(op, out_data, parents, vjp):
    """Run-or-record: constants short-circuit the tape entirely."""
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        return tape.record(op, out_data, parents, vjp)
    out = Tensor(out_data)
    out.requires_grad = any(p.requires_grad for p in parents)
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (adjoint of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast") from exc


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record("add", out, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record("sub", out, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    out = ad * bd

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record("mul", out, (a, b), vjp)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        return (
            _unbroadcast(g / bd, ad.shape),
            _unbroadcast(-g * ad / (bd * bd), bd.shape),
        )

    return _record("div", out, (a, b), vjp)


def scale(a, c: float):
    """Multiply by a python constant (never differentiates w.r.t. c)."""
    a = as_tensor(a)
    c = float(c)
    out = a.data * c

    def vjp(g):
        return (g * c,)

    return _record("scale", out, (a,), vjp)


# ---------------------------------------------------------------------------
# transcendental


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _record("exp", out, (a,), vjp)


def log(a):
    a = as_tensor(a)
    ad = a.data
    out = np.log(ad)

    def vjp(g):
        return (g / ad,)

    return _record("log", out, (a,), vjp)


def sigmoid(a):
    """Numerically stable logistic; output in (0,1), gradient s*(1-s)."""
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _record("sigmoid", out, (a,), vjp)


# ---------------------------------------------------------------------------
# log-sum-exp with temperature


def lse(x, eps, axis=0):
    """Temperature log-sum-exp along ``axis``.

    out = m + eps * log(sum_i exp((x_i - m)/eps)) with m the per-slice
    max, so finite inputs can never overflow.  Bounds max(x) <= out <=
    max(x) + eps*log(n) hold to float64 precision.  Gradient w.r.t. x is
    softmax(x/eps); eps may be a scalar Tensor (learnable temperature)
    and then receives d(out)/d(eps) = (out - sum_i p_i x_i)/eps.
    """
    x = as_tensor(x)
    eps_t = as_tensor(eps)
    if eps_t.data.size != 1:
        raise ParameterError("lse temperature must be scalar")
    e = float(eps_t.data)
    if not e > 0.0:
        raise ParameterError(f"lse temperature must be positive, got {e}")
    if np.isnan(x.data).any():
        raise InputError("lse input contains NaN")
    if x.data.shape[axis] < 1:
        raise ShapeError("lse reduce axis must have length >= 1")
    xd = x.data
    m = np.max(xd, axis=axis, keepdims=True)
    z = np.exp((xd - m) / e)
    ssum = np.sum(z, axis=axis, keepdims=True)
    out_k = m + e * np.log(ssum)
    out = np.squeeze(out_k, axis=axis)
    p = z / ssum  # softmax(x/eps), saved for the vjp

    def vjp(g):
        gk = np.expand_dims(g, axis=axis)
        gx = gk * p
        if eps_t.requires_grad:
            px = np.sum(p * xd, axis=axis, keepdims=True)
            geps = np.sum(gk * (out_k - px) / e)
            ge = np.asarray(geps).reshape(eps_t.data.shape)
        else:
            ge = None
        return gx, ge

    return _record("lse", out, (x, eps_t), vjp)


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects rank-2 operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.data.shape} @ {b.data.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _record("matmul", out, (a, b), vjp)


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    base = ts[0].data.shape
    for t in ts[1:]:
        if t.data.shape != base:
            raise ShapeError("stack requires identical shapes")
    out = np.stack([t.data for t in ts], axis=axis)

    def vjp(g):
        parts = np.split(g, len(ts), axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in parts)

    return _record("stack", out, tuple(ts), vjp)


def roll(a, shift, axis):
    """Circular shift (wrap-around indexing along ``axis``)."""
    a = as_tensor(a)
    out = np.roll(a.data, shift, axis=axis)

    def vjp(g):
        return (np.roll(g, -shift, axis=axis),)

    return _record("roll", out, (a,), vjp)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(old),)

    return _record("reshape", out, (a,), vjp)


def tsum(a, axis=None):
    a = as_tensor(a)
    ad = a.data
    out = np.sum(ad, axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, ad.shape).copy(),)
        gk = np.expand_dims(g, axis=axis)
        return (np.broadcast_to(gk, ad.shape).copy(),)

    return _record("sum", out, (a,), vjp)


def mean(a, axis=None):
    a = as_tensor(a)
    ad = a.data
    n = ad.size if axis is None else ad.shape[axis]
    out = np.mean(ad, axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / n, ad.shape).copy(),)
        gk = np.expand_dims(g / n, axis=axis)
        return (np.broadcast_to(gk, ad.shape).copy(),)

    return _record("mean", out, (a,), vjp)


def record_custom(op, out_data, parents, vjp):
    """Hook for ops with hand-specified backward rules (the surrogate
    spike primitives live outside this module; exact ops do not use this)."""
    return _record(op, out_data, tuple(as_tensor(p) for p in parents), vjp)


def backward(tape: Tape, root: Tensor):
    """Module-level alias for ``tape.backward(root)``."""
    tape.backward(root)
