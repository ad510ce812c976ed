"""Reverse-mode automatic differentiation over dense float64 tensors.

Define-by-run: operations execute eagerly on numpy arrays and, when a Tape
is active, append a backward rule to it. The tape is rebuilt on every
forward pass, so graphs may change shape between steps (sampled noise,
dropout masks). Broadcasting is deliberately limited: same-rank shapes with
unit axes, scalars, and a trailing vector against a matrix.
"""

import threading

import numpy as np

from .errors import DegenerateRowError, DimensionError, DomainError, ParameterError

_STACK = threading.local()


def _tape_stack():
    if not hasattr(_STACK, "tapes"):
        _STACK.tapes = []
    return _STACK.tapes


def current_tape():
    """The innermost active Tape, or None outside any recording context."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense n-d array of float64 values with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self._tape is None:
            raise DimensionError("tensor was not recorded on a tape")
        self._tape.backward(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        return transpose(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Tape:
    """Ordered record of operations for one forward pass.

    backward() walks the record once, in reverse order. Gradients for
    intermediate tensors live in a scratch map; only leaves (tensors never
    produced by a node on this tape) get their .grad populated, and repeated
    backward calls accumulate into it.
    """

    def __init__(self):
        self.nodes = []
        self._outputs = set()

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def record(self, inputs, output, backward_fn):
        self.nodes.append((inputs, output, backward_fn))
        self._outputs.add(id(output))
        output._tape = self

    def backward(self, loss):
        if loss.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        scratch = {id(loss): np.ones_like(loss.data)}
        if id(loss) not in self._outputs and loss.requires_grad:
            self._add_leaf_grad(loss, scratch[id(loss)])
        for inputs, output, backward_fn in reversed(self.nodes):
            g = scratch.pop(id(output), None)
            if g is None:
                continue
            for tensor, gi in zip(inputs, backward_fn(g)):
                if gi is None or not tensor.requires_grad:
                    continue
                if id(tensor) in self._outputs:
                    acc = scratch.get(id(tensor))
                    scratch[id(tensor)] = gi if acc is None else acc + gi
                else:
                    self._add_leaf_grad(tensor, gi)

    @staticmethod
    def _add_leaf_grad(tensor, g):
        if tensor.grad is None:
            tensor.grad = np.zeros_like(tensor.data)
        tensor.grad += g


def backward(loss):
    """Run the backward pass of the tape that recorded `loss`."""
    loss.backward()


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


def _record(inputs, out_data, backward_fn, requires_grad=None):
    if requires_grad is None:
        requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(out_data)
    out.requires_grad = requires_grad
    tape = current_tape()
    if requires_grad and tape is not None:
        tape.record(inputs, out, backward_fn)
    return out


def _check_broadcast(sa, sb):
    # allowed: equal rank with per-axis (n, n), (n, 1) or (1, n); a scalar;
    # or a trailing vector against the last axis of the other operand
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) == len(sb):
        if all(m == n or m == 1 or n == 1 for m, n in zip(sa, sb)):
            return
    elif abs(len(sa) - len(sb)) == 1:
        longer, shorter = (sa, sb) if len(sa) > len(sb) else (sb, sa)
        if len(shorter) >= 1 and longer[-len(shorter):] == shorter:
            return
    raise DimensionError(f"shapes {sa} and {sb} are not broadcast-compatible here")


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(a, b, fwd, da, db):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out_data = fwd(a.data, b.data)

    def backward_fn(g):
        ga = _unbroadcast(da(g, a.data, b.data), a.shape) if a.requires_grad else None
        gb = _unbroadcast(db(g, a.data, b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return _record((a, b), out_data, backward_fn)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    b = as_tensor(b)
    if np.any(b.data == 0.0):
        raise DomainError("division by zero")
    return _binary(
        a, b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def neg(a):
    a = as_tensor(a)
    return _record((a,), -a.data, lambda g: (-g,))


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return _record((a,), out_data, lambda g: (g * out_data,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log of a non-positive value")
    return _record((a,), np.log(a.data), lambda g: (g / a.data,))


def pow_const(a, p):
    a = as_tensor(a)
    p = float(p)
    if not p.is_integer() and np.any(a.data <= 0.0):
        raise DomainError(f"x**{p} needs positive x")
    out_data = a.data ** p
    return _record((a,), out_data, lambda g: (g * p * a.data ** (p - 1.0),))


def relu(a):
    a = as_tensor(a)
    keep = a.data > 0.0
    return _record((a,), np.where(keep, a.data, 0.0), lambda g: (g * keep,))


def leaky_relu(a, slope=0.2):
    a = as_tensor(a)
    factor = np.where(a.data > 0.0, 1.0, slope)
    return _record((a,), a.data * factor, lambda g: (g * factor,))


def elu(a):
    a = as_tensor(a)
    pos = a.data > 0.0
    out_data = np.where(pos, a.data, np.expm1(a.data))
    # d/dx elu(x) = 1 for x > 0, exp(x) = elu(x) + 1 otherwise
    factor = np.where(pos, 1.0, out_data + 1.0)
    return _record((a,), out_data, lambda g: (g * factor,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} x {b.shape} do not chain")
    out_data = a.data @ b.data

    def backward_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _record((a, b), out_data, backward_fn)


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError("transpose expects a 2-d tensor")
    return _record((a,), a.data.T.copy(), lambda g: (g.T,))


def softmax_rows(x, mask=None):
    """Row-wise softmax of a 2-d tensor, stabilized by per-row max shift.

    mask (boolean, True = visible) zeroes masked entries exactly and
    renormalizes each row over its visible support.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError("softmax_rows expects a 2-d tensor")
    if mask is None:
        shifted = x.data - x.data.max(axis=1, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise DimensionError(f"mask shape {mask.shape} != input shape {x.shape}")
        if not mask.any(axis=1).all():
            raise DegenerateRowError("softmax row with every entry masked")
        visible = np.where(mask, x.data, -np.inf)
        shifted = visible - visible.max(axis=1, keepdims=True)
        e = np.exp(shifted)
    denom = e.sum(axis=1, keepdims=True)
    w = e / denom

    def backward_fn(g):
        return (w * (g - (g * w).sum(axis=1, keepdims=True)),)

    return _record((x,), w, backward_fn)


def softmax_segments(x, segment_ids, num_segments):
    """Per-segment softmax of a 1-d tensor; the flat twin of softmax_rows.

    Entries sharing a segment id normalize together. Callers own the
    degenerate-segment check; an empty segment simply never appears in the
    output. -inf entries are allowed and get exactly zero weight.
    """
    x = as_tensor(x)
    if x.ndim != 1:
        raise DimensionError("softmax_segments expects a 1-d tensor")
    segment_ids = np.asarray(segment_ids, dtype=np.intp)
    if segment_ids.shape != x.shape:
        raise DimensionError("segment ids must match the input shape")
    shift = np.full(num_segments, -np.inf)
    np.maximum.at(shift, segment_ids, x.data)
    e = np.exp(x.data - shift[segment_ids])
    denom = np.bincount(segment_ids, weights=e, minlength=num_segments)
    w = e / denom[segment_ids]

    def backward_fn(g):
        gw = g * w
        dot = np.bincount(segment_ids, weights=gw, minlength=num_segments)
        return (gw - w * dot[segment_ids],)

    return _record((x,), w, backward_fn)


def _normalize_axis(axis, ndim):
    if axis is None:
        return None
    if not isinstance(axis, int) or not (-ndim <= axis < ndim):
        raise DimensionError(f"axis {axis} invalid for ndim {ndim}")
    return axis % ndim if ndim else 0


def _reduce(x, axis, keepdims, op):
    x = as_tensor(x)
    axis = _normalize_axis(axis, x.ndim)
    out_data = getattr(x.data, op)(axis=axis, keepdims=keepdims)
    count = x.size if axis is None else x.shape[axis]

    def backward_fn(g):
        g = np.asarray(g, dtype=np.float64)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        g = np.broadcast_to(g, x.shape).copy()
        if op == "mean":
            g /= count
        return (g,)

    return _record((x,), out_data, backward_fn)


def reduce_sum(x, axis=None, keepdims=False):
    return _reduce(x, axis, keepdims, "sum")


def reduce_mean(x, axis=None, keepdims=False):
    return _reduce(x, axis, keepdims, "mean")


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out_data = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _record((x,), out_data, lambda g: (g.reshape(x.shape),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty list")
    axis = _normalize_axis(axis, tensors[0].ndim)
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(
            i != axis and other[i] != ref[i] for i in range(len(ref))
        ):
            raise DimensionError(f"concat shapes {tensors[0].shape} vs {t.shape} on axis {axis}")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(tuple(tensors), out_data, backward_fn)


def dropout(x, p, rng, training):
    """Inverted dropout: zero entries with probability p, scale by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _record((x,), x.data * keep, lambda g: (g * keep,))


def unary_with_derivative(x, value, derivative):
    """Record a custom elementwise op from a precomputed value and d/dx."""
    x = as_tensor(x)
    value = np.asarray(value, dtype=np.float64)
    derivative = np.asarray(derivative, dtype=np.float64)
    return _record((x,), value, lambda g: (g * derivative,))


def binary_with_derivatives(a, b, value, da, db):
    """Two-input twin of unary_with_derivative, with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    value = np.asarray(value, dtype=np.float64)
    da = np.asarray(da, dtype=np.float64)
    db = np.asarray(db, dtype=np.float64)

    def backward_fn(g):
        ga = _unbroadcast(g * da, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * db, b.shape) if b.requires_grad else None
        return ga, gb

    return _record((a, b), value, backward_fn)


def gather_rows(x, index):
    """Select rows of a 1-d or 2-d tensor; backward scatter-adds."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if index.ndim != 1:
        raise DimensionError("gather_rows index must be 1-d")
    if x.ndim not in (1, 2):
        raise DimensionError("gather_rows expects a 1-d or 2-d tensor")
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise DimensionError("gather_rows index out of range")
    out_data = x.data[index]

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _record((x,), out_data, backward_fn)


def segment_sum(x, segment_ids, num_segments):
    """Sum entries of x into num_segments buckets given by segment_ids."""
    x = as_tensor(x)
    segment_ids = np.asarray(segment_ids, dtype=np.intp)
    if segment_ids.ndim != 1 or segment_ids.shape[0] != x.shape[0]:
        raise DimensionError("segment_ids must be 1-d and match the leading axis")
    if segment_ids.size and (segment_ids.min() < 0 or segment_ids.max() >= num_segments):
        raise DimensionError("segment id out of range")
    out_shape = (num_segments,) + x.shape[1:]
    out_data = np.zeros(out_shape)
    np.add.at(out_data, segment_ids, x.data)

    def backward_fn(g):
        return (g[segment_ids],)

    return _record((x,), out_data, backward_fn)


def segment_max_constant(values, segment_ids, num_segments):
    """Per-segment maximum of a raw array; a stabilization constant, not an op."""
    values = np.asarray(values, dtype=np.float64)
    out = np.full(num_segments, -np.inf)
    np.maximum.at(out, np.asarray(segment_ids, dtype=np.intp), values)
    return out
