"""Reverse-mode differentiation on a linear tape.

Every value produced while a :class:`Tape` is active is appended to
``tape.nodes`` in creation order, so the list index is a valid topological
order. Backward passes can themselves be recorded (``create_graph=True``),
which is what the gradient-penalty term needs: gradients of a function of
input gradients with respect to network parameters.
"""

from __future__ import annotations

import numpy as np


def _sum_to(x, shape):
    """Sum ``x`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    if x.shape == tuple(shape):
        return x
    lead = x.ndim - len(shape)
    if lead > 0:
        x = x.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and x.shape[i] != 1)
    if axes:
        x = x.sum(axis=axes, keepdims=True)
    return x.reshape(shape)


def _scatter(g, index, shape):
    out = np.zeros(shape)
    np.add.at(out, index, g)
    return out


class Node:
    """A value recorded on a tape."""

    __slots__ = ("tape", "value", "op", "inputs", "attrs", "requires_grad", "index")

    def __init__(self, tape, value, op, inputs, attrs, requires_grad, index):
        self.tape = tape
        self.value = value
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.requires_grad = requires_grad
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape}, index={self.index})"

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.tape.div(self, other)

    def __neg__(self):
        return self.tape.neg(self)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __getitem__(self, index):
        return self.tape.getitem(self, index)

    @property
    def T(self):
        return self.tape.transpose(self)


# Forward rules. Each takes input values plus attrs and returns a new array.
_FORWARD = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "neg": lambda a: -a,
    "matmul": lambda a, b: a @ b,
    "transpose": lambda a: a.T,
    "square": lambda a: a * a,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
    "leaky_relu": lambda a, slope: np.where(a > 0, a, slope * a),
    "sum": lambda a, axis, keepdims: np.sum(a, axis=axis, keepdims=keepdims),
    "sum_to": lambda a, shape: _sum_to(a, shape),
    "broadcast_to": lambda a, shape: np.broadcast_to(a, shape).copy(),
    "reshape": lambda a, shape: a.reshape(shape),
    "getitem": lambda a, index: np.array(a[index]),
    "scatter": lambda a, index, shape: _scatter(a, index, shape),
    "concat": lambda *xs, axis: np.concatenate(xs, axis=axis),
}


class _NumpyOps:
    """Same method names as :class:`Tape`, evaluated eagerly without recording."""

    @staticmethod
    def const(x):
        return x

    add = staticmethod(_FORWARD["add"])
    sub = staticmethod(_FORWARD["sub"])
    mul = staticmethod(_FORWARD["mul"])
    div = staticmethod(_FORWARD["div"])
    neg = staticmethod(_FORWARD["neg"])
    matmul = staticmethod(_FORWARD["matmul"])
    transpose = staticmethod(_FORWARD["transpose"])
    square = staticmethod(_FORWARD["square"])

    @staticmethod
    def sum_to(a, shape):
        return _sum_to(a, shape)

    @staticmethod
    def broadcast_to(a, shape):
        return np.broadcast_to(a, shape)

    @staticmethod
    def reshape(a, shape):
        return a.reshape(shape)

    @staticmethod
    def getitem(a, index):
        return a[index]

    @staticmethod
    def scatter(a, index, shape):
        return _scatter(a, index, shape)


_NP = _NumpyOps()


# Vector-Jacobian products. ``F`` is either a Tape (recorded, differentiable)
# or _NP (eager). ``ins``/``out`` are handles in the matching representation.
def _vjp_add(F, g, ins, out, attrs):
    a, b = ins
    return F.sum_to(g, a.shape), F.sum_to(g, b.shape)


def _vjp_sub(F, g, ins, out, attrs):
    a, b = ins
    return F.sum_to(g, a.shape), F.neg(F.sum_to(g, b.shape))


def _vjp_mul(F, g, ins, out, attrs):
    a, b = ins
    return F.sum_to(F.mul(g, b), a.shape), F.sum_to(F.mul(g, a), b.shape)


def _vjp_div(F, g, ins, out, attrs):
    a, b = ins
    ga = F.div(g, b)
    gb = F.neg(F.mul(ga, out))
    return F.sum_to(ga, a.shape), F.sum_to(gb, b.shape)


def _vjp_neg(F, g, ins, out, attrs):
    return (F.neg(g),)


def _vjp_matmul(F, g, ins, out, attrs):
    a, b = ins
    return F.matmul(g, F.transpose(b)), F.matmul(F.transpose(a), g)


def _vjp_transpose(F, g, ins, out, attrs):
    return (F.transpose(g),)


def _vjp_square(F, g, ins, out, attrs):
    (a,) = ins
    return (F.mul(F.mul(g, a), 2.0),)


def _vjp_sqrt(F, g, ins, out, attrs):
    return (F.div(g, F.mul(out, 2.0)),)


def _vjp_tanh(F, g, ins, out, attrs):
    return (F.mul(g, F.sub(1.0, F.square(out))),)


def _vjp_leaky_relu(F, g, ins, out, attrs):
    (a,) = ins
    x = a.value if isinstance(a, Node) else a
    # Derivative is piecewise constant, so it enters the graph as a constant:
    # the second derivative is 0 everywhere, including at the kink.
    mask = np.where(x > 0, 1.0, attrs["slope"])
    return (F.mul(g, F.const(mask)),)


def _vjp_sum(F, g, ins, out, attrs):
    (a,) = ins
    axis = attrs["axis"]
    if axis is not None and not attrs["keepdims"]:
        shape = list(a.shape)
        for ax in sorted(np.atleast_1d(axis) % len(shape)):
            shape[ax] = 1
        g = F.reshape(g, tuple(shape))
    return (F.broadcast_to(g, a.shape),)


def _vjp_sum_to(F, g, ins, out, attrs):
    (a,) = ins
    return (F.broadcast_to(g, a.shape),)


def _vjp_broadcast_to(F, g, ins, out, attrs):
    (a,) = ins
    return (F.sum_to(g, a.shape),)


def _vjp_reshape(F, g, ins, out, attrs):
    (a,) = ins
    return (F.reshape(g, a.shape),)


def _vjp_getitem(F, g, ins, out, attrs):
    (a,) = ins
    return (F.scatter(g, attrs["index"], a.shape),)


def _vjp_scatter(F, g, ins, out, attrs):
    return (F.getitem(g, attrs["index"]),)


def _vjp_concat(F, g, ins, out, attrs):
    axis = attrs["axis"]
    grads = []
    start = 0
    for x in ins:
        n = x.shape[axis]
        index = [slice(None)] * len(x.shape)
        index[axis] = slice(start, start + n)
        grads.append(F.getitem(g, tuple(index)))
        start += n
    return tuple(grads)


_VJP = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "neg": _vjp_neg,
    "matmul": _vjp_matmul,
    "transpose": _vjp_transpose,
    "square": _vjp_square,
    "sqrt": _vjp_sqrt,
    "tanh": _vjp_tanh,
    "leaky_relu": _vjp_leaky_relu,
    "sum": _vjp_sum,
    "sum_to": _vjp_sum_to,
    "broadcast_to": _vjp_broadcast_to,
    "reshape": _vjp_reshape,
    "getitem": _vjp_getitem,
    "scatter": _vjp_scatter,
    "concat": _vjp_concat,
}


class Tape:
    """Records primitive operations for later reverse sweeps.

    A tape is single-threaded. Leaves are created with :meth:`variable`
    (differentiable), :meth:`constant`, or :meth:`param`, which memoizes one
    leaf per parameter array so that repeated uses of a weight accumulate
    into a single gradient.
    """

    def __init__(self, check_finite=True):
        self.nodes = []
        self.check_finite = check_finite
        self._params = {}

    def __len__(self):
        return len(self.nodes)

    # -- leaves ---------------------------------------------------------
    def _leaf(self, value, requires_grad):
        value = np.asarray(value, dtype=np.float64)
        node = Node(self, value, None, (), {}, requires_grad, len(self.nodes))
        self.nodes.append(node)
        return node

    def variable(self, value):
        return self._leaf(np.array(value, dtype=np.float64), True)

    def constant(self, value):
        return self._leaf(value, False)

    const = constant

    def param(self, array):
        """Leaf bound to ``array``; the same array always maps to the same leaf."""
        key = id(array)
        hit = self._params.get(key)
        if hit is not None and hit[0] is array:
            return hit[1]
        node = self._leaf(array, True)
        self._params[key] = (array, node)
        return node

    def _lift(self, x):
        if isinstance(x, Node):
            if x.tape is not self:
                raise ValueError("node belongs to a different tape")
            return x
        return self.constant(x)

    def _record(self, op, inputs, **attrs):
        inputs = tuple(self._lift(x) for x in inputs)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            value = _FORWARD[op](*(x.value for x in inputs), **attrs)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite value produced by {op!r}")
        requires_grad = any(x.requires_grad for x in inputs)
        node = Node(self, value, op, inputs, attrs, requires_grad, len(self.nodes))
        self.nodes.append(node)
        return node

    # -- primitives -----------------------------------------------------
    def add(self, a, b):
        return self._record("add", (a, b))

    def sub(self, a, b):
        return self._record("sub", (a, b))

    def mul(self, a, b):
        return self._record("mul", (a, b))

    def div(self, a, b):
        return self._record("div", (a, b))

    def neg(self, a):
        return self._record("neg", (a,))

    def matmul(self, a, b):
        return self._record("matmul", (a, b))

    def transpose(self, a):
        return self._record("transpose", (a,))

    def square(self, a):
        return self._record("square", (a,))

    def sqrt(self, a):
        return self._record("sqrt", (a,))

    def tanh(self, a):
        return self._record("tanh", (a,))

    def leaky_relu(self, a, slope):
        return self._record("leaky_relu", (a,), slope=float(slope))

    def sum(self, a, axis=None, keepdims=False):
        return self._record("sum", (a,), axis=axis, keepdims=keepdims)

    def mean(self, a, axis=None):
        a = self._lift(a)
        n = a.value.size if axis is None else a.value.shape[axis]
        return self.mul(self.sum(a, axis=axis), 1.0 / n)

    def sum_to(self, a, shape):
        return self._record("sum_to", (a,), shape=tuple(shape))

    def broadcast_to(self, a, shape):
        return self._record("broadcast_to", (a,), shape=tuple(shape))

    def reshape(self, a, shape):
        return self._record("reshape", (a,), shape=tuple(shape))

    def getitem(self, a, index):
        return self._record("getitem", (a,), index=index)

    def scatter(self, a, index, shape):
        return self._record("scatter", (a,), index=index, shape=tuple(shape))

    def concat(self, xs, axis=-1):
        xs = [self._lift(x) for x in xs]
        axis = axis % xs[0].value.ndim
        return self._record("concat", xs, axis=axis)

    # -- reverse sweeps -------------------------------------------------
    def replay(self):
        """Recompute every recorded value from the leaves, in tape order."""
        values = []
        for node in self.nodes:
            if node.op is None:
                values.append(node.value)
            else:
                args = [values[x.index] for x in node.inputs]
                values.append(_FORWARD[node.op](*args, **node.attrs))
        return values

    def gradient(self, output, wrt=None, seed=None, create_graph=False):
        """Reverse sweep from ``output``.

        Returns a list aligned with ``wrt`` (or a dict over every
        differentiable leaf when ``wrt`` is None). With ``create_graph`` the
        gradients are Nodes on this tape and can be differentiated again;
        otherwise they are arrays. Leaves not connected to ``output`` get
        zero gradients.
        """
        output = self._lift(output)
        if seed is None:
            if output.value.size != 1:
                raise ValueError("gradient of a non-scalar output needs an explicit seed")
            seed = np.ones_like(output.value)
        seed = np.broadcast_to(np.asarray(seed, dtype=np.float64), output.shape)

        # Ancestors of output that carry gradient, in reverse tape order.
        live = set()
        stack = [output]
        while stack:
            node = stack.pop()
            if node.index in live or not node.requires_grad:
                continue
            live.add(node.index)
            stack.extend(node.inputs)

        F = self if create_graph else _NP
        grads = {output.index: self.constant(seed) if create_graph else np.array(seed)}
        for index in sorted(live, reverse=True):
            node = self.nodes[index]
            g = grads.get(index)
            if g is None or node.op is None:
                continue
            if create_graph:
                ins, out = node.inputs, node
            else:
                ins, out = tuple(x.value for x in node.inputs), node.value
            parts = _VJP[node.op](F, g, ins, out, node.attrs)
            for x, gx in zip(node.inputs, parts):
                if not x.requires_grad:
                    continue
                prev = grads.get(x.index)
                grads[x.index] = gx if prev is None else F.add(prev, gx)

        def finish(node):
            g = grads.get(node.index)
            if g is None:
                g = np.zeros_like(node.value)
                return self.constant(g) if create_graph else g
            if create_graph:
                return g
            g = np.array(g, dtype=np.float64)
            return g.reshape(node.shape)

        if wrt is None:
            return {
                node: finish(node)
                for node in self.nodes
                if node.op is None and node.requires_grad
            }
        return [finish(self._lift(w)) for w in wrt]


def reverse_gradients(tape, output):
    """Gradients of scalar ``output`` for every differentiable leaf on ``tape``."""
    return tape.gradient(output)
