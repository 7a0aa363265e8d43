"""Reverse-mode automatic differentiation on numpy arrays.

A :class:`Tape` records every primitive evaluated on :class:`Var` operands
together with the vector-Jacobian products of its inputs. ``Var`` implements
``__array_ufunc__``, so ordinary numpy expressions (``np.log1p(x)``,
``np.maximum(x, 0.0)``, ``a @ w``) record themselves when any operand is a
``Var`` and evaluate plainly otherwise. The same model code therefore serves
both the differentiable training episode and fast tape-free evaluation.

Supported primitives: add, subtract, multiply, divide, negative, power with a
constant exponent, exp, expm1, log, log1p, sqrt, tanh, maximum/minimum against
a constant (``np.maximum(x, 0)`` is the positive part), matmul, comparisons
against constants, plus :func:`stack`, slicing, reshape and sum/mean.

Comparisons produce 0/1 constants: they are recorded without parents, so no
adjoint flows through them. The subgradient of ``max(x, c)`` at ``x == c``
is 0.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteError

__all__ = ["Tape", "Var", "stack", "value_of", "backward"]


def value_of(x):
    """Numeric value of a ``Var`` or plain number/array."""
    return x.value if isinstance(x, Var) else x


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tape:
    """Linear record of primitive evaluations (a Wengert list).

    With ``track_kinks=True`` the tape keeps ``kink_margin``, the smallest
    ``|x - c|`` seen by any ``maximum``/``minimum`` node, i.e. how far the
    recorded point is from a non-differentiable kink.
    """

    def __init__(self, track_kinks=False):
        self._parents = []
        self._ops = []
        self._shapes = []
        self.track_kinks = track_kinks
        self.kink_margin = np.inf

    def __len__(self):
        return len(self._parents)

    def var(self, value) -> Var:
        """Create a leaf variable."""
        value = np.asarray(value, dtype=np.float64)
        if not np.isfinite(value).all():
            raise NonFiniteError("leaf value is not finite")
        return self._push("leaf", value, ())

    def _push(self, op, value, parents):
        self._parents.append(parents)
        self._ops.append(op)
        self._shapes.append(np.shape(value))
        return Var(self, len(self._parents) - 1, value)

    def record(self, op, value, inputs, vjps):
        """Append a node; ``vjps[i]`` maps the output adjoint to input ``i``'s.

        Constant inputs (anything that is not a ``Var`` of this tape) are
        skipped. Raises :class:`NonFiniteError` if ``value`` is not finite.
        """
        if not np.isfinite(value).all():
            raise NonFiniteError(f"{op} produced a non-finite value (node {len(self)})")
        parents = tuple(
            (x.index, vjp)
            for x, vjp in zip(inputs, vjps)
            if isinstance(x, Var) and vjp is not None
        )
        return self._push(op, value, parents)

    def constant(self, op, value):
        """Record a non-differentiable node (no parents, zero partials)."""
        return self._push(op, np.asarray(value, dtype=np.float64), ())

    def backward(self, loss, wrt):
        """Adjoints of the scalar ``loss`` with respect to ``wrt``.

        ``wrt`` is a single ``Var`` or a sequence of them. Variables that do
        not influence the loss get zero gradients.
        """
        if not isinstance(loss, Var) or loss.tape is not self:
            raise ValueError("loss must be a Var recorded on this tape")
        if np.ndim(loss.value) != 0:
            raise ValueError("loss must be a scalar")
        if not np.isfinite(loss.value):
            raise NonFiniteError("loss is not finite")
        adj = [None] * len(self._parents)
        adj[loss.index] = np.float64(1.0)
        for i in range(loss.index, -1, -1):
            g = adj[i]
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite adjoint at node {i} ({self._ops[i]})")
            for p, vjp in self._parents[i]:
                c = _unbroadcast(vjp(g), self._shapes[p])
                adj[p] = c if adj[p] is None else adj[p] + c
        single = isinstance(wrt, Var)
        out = []
        for v in [wrt] if single else wrt:
            g = adj[v.index]
            out.append(np.zeros(self._shapes[v.index]) if g is None else np.asarray(g, dtype=np.float64))
        return out[0] if single else out


def backward(tape, loss, wrt):
    """Gradient of ``loss`` with respect to ``wrt`` (see :meth:`Tape.backward`)."""
    return tape.backward(loss, wrt)


# Primitive table: ufunc -> fn(*values) -> (value, vjps)

def _add(a, b):
    return a + b, (lambda g: g, lambda g: g)


def _sub(a, b):
    return a - b, (lambda g: g, lambda g: -g)


def _mul(a, b):
    return a * b, (lambda g: g * b, lambda g: g * a)


def _div(a, b):
    y = a / b
    return y, (lambda g: g / b, lambda g: -g * y / b)


def _neg(a):
    return -a, (lambda g: -g,)


def _exp(a):
    y = np.exp(a)
    return y, (lambda g: g * y,)


def _expm1(a):
    y = np.expm1(a)
    return y, (lambda g: g * (y + 1.0),)


def _log(a):
    return np.log(a), (lambda g: g / a,)


def _log1p(a):
    return np.log1p(a), (lambda g: g / (1.0 + a),)


def _sqrt(a):
    y = np.sqrt(a)
    return y, (lambda g: g / (2.0 * y),)


def _tanh(a):
    y = np.tanh(a)
    return y, (lambda g: g * (1.0 - y * y),)


def _matmul(a, b):
    y = a @ b
    a2, b2 = np.ndim(a) == 2, np.ndim(b) == 2
    if a2 and b2:
        vjps = (lambda g: g @ b.T, lambda g: a.T @ g)
    elif a2:
        vjps = (lambda g: np.outer(g, b), lambda g: a.T @ g)
    elif b2:
        vjps = (lambda g: b @ g, lambda g: np.outer(a, g))
    else:
        vjps = (lambda g: g * b, lambda g: g * a)
    return y, vjps


_PRIMITIVES = {
    np.add: ("add", _add),
    np.subtract: ("sub", _sub),
    np.multiply: ("mul", _mul),
    np.true_divide: ("div", _div),
    np.negative: ("neg", _neg),
    np.exp: ("exp", _exp),
    np.expm1: ("expm1", _expm1),
    np.log: ("log", _log),
    np.log1p: ("log1p", _log1p),
    np.sqrt: ("sqrt", _sqrt),
    np.tanh: ("tanh", _tanh),
    np.matmul: ("matmul", _matmul),
}

_COMPARISONS = (np.greater, np.greater_equal, np.less, np.less_equal)


def _check_constant(x, op):
    if isinstance(x, Var):
        raise TypeError(f"{op}: only one operand may be differentiable")


class Var:
    """A value recorded on a :class:`Tape`."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape, index, value):
        self.tape = tape
        self.index = index
        self.value = value

    def __repr__(self):
        return f"Var(node={self.index}, value={self.value!r})"

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    def __len__(self):
        return len(self.value)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            return NotImplemented
        tape = next(x.tape for x in inputs if isinstance(x, Var))
        vals = [value_of(x) for x in inputs]
        if ufunc in _PRIMITIVES:
            name, fn = _PRIMITIVES[ufunc]
            y, vjps = fn(*vals)
            return tape.record(name, y, inputs, vjps)
        if ufunc is np.power:
            base, p = inputs
            _check_constant(p, "pow_const")
            if not isinstance(base, Var):
                return NotImplemented
            a = base.value
            y = a**p
            return tape.record("pow_const", y, (base,), (lambda g: g * p * a ** (p - 1.0),))
        if ufunc in (np.maximum, np.minimum):
            a, b = inputs
            if isinstance(b, Var):
                a, b = b, a
            _check_constant(b, ufunc.__name__)
            av = a.value
            y = ufunc(av, b)
            mask = (av > b) if ufunc is np.maximum else (av < b)
            if tape.track_kinks and np.size(av):
                tape.kink_margin = min(tape.kink_margin, float(np.min(np.abs(av - b))))
            return tape.record(ufunc.__name__, y, (a,), (lambda g: g * mask,))
        if ufunc in _COMPARISONS:
            return tape.constant(ufunc.__name__, ufunc(*vals).astype(np.float64))
        return NotImplemented

    # Python operators route through the ufunc table.
    def __add__(self, other):
        return np.add(self, other)

    def __radd__(self, other):
        return np.add(other, self)

    def __sub__(self, other):
        return np.subtract(self, other)

    def __rsub__(self, other):
        return np.subtract(other, self)

    def __mul__(self, other):
        return np.multiply(self, other)

    def __rmul__(self, other):
        return np.multiply(other, self)

    def __truediv__(self, other):
        return np.true_divide(self, other)

    def __rtruediv__(self, other):
        return np.true_divide(other, self)

    def __neg__(self):
        return np.negative(self)

    def __pow__(self, p):
        return np.power(self, p)

    def __matmul__(self, other):
        return np.matmul(self, other)

    def __rmatmul__(self, other):
        return np.matmul(other, self)

    def __gt__(self, other):
        return np.greater(self, other)

    def __ge__(self, other):
        return np.greater_equal(self, other)

    def __lt__(self, other):
        return np.less(self, other)

    def __le__(self, other):
        return np.less_equal(self, other)

    def __getitem__(self, key):
        shape = self.shape

        basic = all(isinstance(k, (slice, int)) for k in (key if isinstance(key, tuple) else (key,)))

        def vjp(g):
            full = np.zeros(shape)
            if basic:
                full[key] = g
            else:
                np.add.at(full, key, g)
            return full

        return self.tape.record("getitem", np.asarray(self.value[key]), (self,), (vjp,))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return self.tape.record(
            "reshape", np.reshape(self.value, shape), (self,), (lambda g: np.reshape(g, old),)
        )

    def sum(self, axis=None, out=None, **_):
        if out is not None:
            raise TypeError("out= is not supported")
        shape = self.shape

        def vjp(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape)

        return self.tape.record("sum", np.sum(self.value, axis=axis), (self,), (vjp,))

    def mean(self, axis=None, out=None, **_):
        n = np.size(self.value) if axis is None else np.shape(self.value)[axis]
        return self.sum(axis=axis, out=out) / n


def stack(columns, axis=-1):
    """``np.stack`` that records on a tape if any column is a ``Var``.

    Scalars and lower-rank columns are broadcast to the common shape first.
    """
    vals = [np.asarray(value_of(c), dtype=np.float64) for c in columns]
    shape = np.broadcast_shapes(*(v.shape for v in vals))
    y = np.stack([np.broadcast_to(v, shape) for v in vals], axis=axis)
    tapes = [c.tape for c in columns if isinstance(c, Var)]
    if not tapes:
        return y
    ax = axis if axis >= 0 else y.ndim + axis
    vjps = [(lambda g, i=i: np.take(g, i, axis=ax)) for i in range(len(columns))]
    return tapes[0].record("stack", y, columns, vjps)
