"""Minimal reverse-mode tape over numpy arrays.

A :class:`Var` wraps an ndarray and remembers the :class:`Tape` node that
produced it. Arithmetic on ``Var`` objects records nodes; ``Tape.gradients``
walks them backwards. The generic helpers at the bottom of this module
(``sqrt``, ``relu``, ``where`` ...) accept either plain ndarrays or ``Var``
objects, which lets the rendering kernels run unchanged with or without a
tape and produce bit-identical forward values in both modes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np


@dataclass
class Node:
    op: str
    inputs: tuple
    out: "Var"
    fn: Callable[..., np.ndarray]
    vjp: Callable[[np.ndarray], tuple]
    ctx: dict = field(default_factory=dict)


class Tape:
    """Ordered record of primitive operations."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.leaves: dict[str, Var] = {}
        self.outputs: dict[str, Var] = {}
        self._next_id = 0

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def leaf(self, name: str, value) -> "Var":
        if name in self.leaves:
            raise ValueError(f"leaf {name!r} already registered")
        v = Var(self, np.array(value, dtype=np.float64))
        self.leaves[name] = v
        return v

    def record(self, op: str, inputs: Sequence["Var"], value: np.ndarray,
               fn: Callable[..., np.ndarray], vjp: Callable, **ctx) -> "Var":
        out = Var(self, value)
        self.nodes.append(Node(op, tuple(inputs), out, fn, vjp, ctx))
        return out

    def find(self, op: str) -> list[Node]:
        return [n for n in self.nodes if n.op == op]

    def replay(self, overrides: dict[str, np.ndarray] | None = None) -> dict[int, np.ndarray]:
        """Re-run every node forward from the leaf values.

        Returns a map from var id to recomputed value. ``overrides`` replaces
        named leaf values, which turns the tape into a re-evaluable function
        of its inputs (the node functions hold every other constant).
        """
        values: dict[int, np.ndarray] = {}
        for name, leaf in self.leaves.items():
            if overrides and name in overrides:
                values[leaf.id] = np.array(overrides[name], dtype=np.float64)
            else:
                values[leaf.id] = leaf.value
        for node in self.nodes:
            args = [values[v.id] for v in node.inputs]
            values[node.out.id] = node.fn(*args)
        return values

    def gradients(self, output: "Var", seed=1.0) -> dict[int, np.ndarray]:
        seed = np.broadcast_to(np.asarray(seed, dtype=np.float64), output.shape)
        adj: dict[int, np.ndarray] = {output.id: np.array(seed)}
        for node in reversed(self.nodes):
            g = adj.get(node.out.id)
            if g is None:
                continue
            grads = node.vjp(g)
            for var, gi in zip(node.inputs, grads):
                if gi is None:
                    continue
                if var.id in adj:
                    adj[var.id] = adj[var.id] + gi
                else:
                    adj[var.id] = gi
        return adj

    def grad_of(self, output: "Var", seed=1.0) -> dict[str, np.ndarray]:
        """Adjoints of every named leaf (zeros where unreachable)."""
        adj = self.gradients(output, seed)
        return {name: adj.get(v.id, np.zeros_like(v.value)) for name, v in self.leaves.items()}


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def value(x):
    return x.value if isinstance(x, Var) else x


class Var:
    # ndarray (op) Var must defer to Var's reflected operators
    __array_ufunc__ = None

    def __init__(self, tape: Tape, val: np.ndarray) -> None:
        self.tape = tape
        self.value = np.asarray(val)
        self.id = tape._new_id()

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.shape})"

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __len__(self) -> int:
        return len(self.value)

    # -- binary arithmetic -------------------------------------------------
    def _binary(self, other, op: str, f, da, db, reflected=False):
        a, b = (other, self) if reflected else (self, other)
        av, bv = value(a), value(b)
        out = f(av, bv)
        ins, fns = [], []
        if isinstance(a, Var):
            ins.append(a)
        if isinstance(b, Var):
            ins.append(b)
        a_is, b_is = isinstance(a, Var), isinstance(b, Var)
        a_shape, b_shape = np.shape(av), np.shape(bv)

        def fn(*vals):
            it = iter(vals)
            x = next(it) if a_is else av
            y = next(it) if b_is else bv
            return f(x, y)

        def vjp(g):
            res = []
            if a_is:
                res.append(_unbroadcast(da(g, av, bv), a_shape))
            if b_is:
                res.append(_unbroadcast(db(g, av, bv), b_shape))
            return tuple(res)

        return self.tape.record(op, ins, out, fn, vjp)

    def __add__(self, o):
        return self._binary(o, "add", np.add, lambda g, a, b: g, lambda g, a, b: g)

    def __radd__(self, o):
        return self._binary(o, "add", np.add, lambda g, a, b: g, lambda g, a, b: g, True)

    def __sub__(self, o):
        return self._binary(o, "sub", np.subtract, lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, o):
        return self._binary(o, "sub", np.subtract, lambda g, a, b: g, lambda g, a, b: -g, True)

    def __mul__(self, o):
        return self._binary(o, "mul", np.multiply, lambda g, a, b: g * b, lambda g, a, b: g * a)

    def __rmul__(self, o):
        return self._binary(o, "mul", np.multiply, lambda g, a, b: g * b, lambda g, a, b: g * a, True)

    def __truediv__(self, o):
        return self._binary(o, "div", np.divide, lambda g, a, b: g / b,
                            lambda g, a, b: -g * a / (b * b))

    def __rtruediv__(self, o):
        return self._binary(o, "div", np.divide, lambda g, a, b: g / b,
                            lambda g, a, b: -g * a / (b * b), True)

    def __neg__(self):
        return self.tape.record("neg", [self], np.negative(self.value), np.negative,
                                lambda g: (-g,))

    def __pow__(self, p):
        if p != 2:
            raise NotImplementedError("only squaring is supported")
        x = self.value
        return self.tape.record("square", [self], x * x, lambda v: v * v,
                                lambda g: (2.0 * g * x,))

    # -- structural ----------------------------------------------------------
    def __getitem__(self, idx):
        x = self.value
        shape = x.shape

        def vjp(g):
            full = np.zeros(shape, dtype=np.float64)
            np.add.at(full, idx, g)
            return (full,)

        return self.tape.record("gather", [self], x[idx], lambda v: v[idx], vjp)

    def reshape(self, *shape):
        old = self.shape
        return self.tape.record("reshape", [self], self.value.reshape(*shape),
                                lambda v: v.reshape(*shape), lambda g: (g.reshape(old),))

    def sum(self, axis=None, keepdims=False):
        x = self.value
        shape = x.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self.tape.record("sum", [self], x.sum(axis=axis, keepdims=keepdims),
                                lambda v: v.sum(axis=axis, keepdims=keepdims), vjp)

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis) / float(n)


# -- generic helpers (ndarray or Var) ------------------------------------------

def _unary(x, op, f, df):
    if not isinstance(x, Var):
        return f(x)
    xv = x.value
    return x.tape.record(op, [x], f(xv), f, lambda g: (g * df(xv),))


def sqrt(x):
    def d(v):
        with np.errstate(divide="ignore"):
            return np.where(v > 0, 0.5 / np.sqrt(np.where(v > 0, v, 1.0)), 0.0)
    return _unary(x, "sqrt", np.sqrt, d)


def exp(x):
    return _unary(x, "exp", np.exp, np.exp)


def relu(x):
    """max(0, x) with subgradient 0 at the kink."""
    return _unary(x, "relu", lambda v: np.maximum(v, 0.0), lambda v: (v > 0).astype(np.float64))


def absolute(x):
    return _unary(x, "abs", np.abs, np.sign)


def clip01(x):
    return _unary(x, "clip01", lambda v: np.clip(v, 0.0, 1.0),
                  lambda v: ((v > 0) & (v < 1)).astype(np.float64))


def where(cond, a, b):
    """Select with a constant boolean condition."""
    cond = np.asarray(cond, dtype=bool)
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.where(cond, a, b)
    tape = a.tape if isinstance(a, Var) else b.tape
    av, bv = value(a), value(b)
    out = np.where(cond, av, bv)
    ins = [v for v in (a, b) if isinstance(v, Var)]
    a_is, b_is = isinstance(a, Var), isinstance(b, Var)
    a_shape, b_shape = np.shape(av), np.shape(bv)

    def fn(*vals):
        it = iter(vals)
        x = next(it) if a_is else av
        y = next(it) if b_is else bv
        return np.where(cond, x, y)

    def vjp(g):
        res = []
        if a_is:
            res.append(_unbroadcast(np.where(cond, g, 0.0), a_shape))
        if b_is:
            res.append(_unbroadcast(np.where(cond, 0.0, g), b_shape))
        return tuple(res)

    return tape.record("where", ins, out, fn, vjp)


def stack(items: Sequence[Any], axis: int = -1):
    vars_ = [x for x in items if isinstance(x, Var)]
    vals = [value(x) for x in items]
    if not vars_:
        return np.stack(vals, axis=axis)
    tape = vars_[0].tape
    shape = np.broadcast_shapes(*[np.shape(v) for v in vals])
    vals = [np.broadcast_to(v, shape) for v in vals]
    is_var = [isinstance(x, Var) for x in items]
    out = np.stack(vals, axis=axis)
    ax = axis if axis >= 0 else out.ndim + axis

    def fn(*vv):
        it = iter(vv)
        return np.stack([np.broadcast_to(next(it), shape) if flag else v
                         for flag, v in zip(is_var, vals)], axis=axis)

    def vjp(g):
        res = []
        for k, (flag, x) in enumerate(zip(is_var, items)):
            if flag:
                res.append(_unbroadcast(np.take(g, k, axis=ax), x.shape))
        return tuple(res)

    return tape.record("stack", vars_, out, fn, vjp)


def scatter(x, index: np.ndarray, size: int):
    """Place ``x`` (n, ...) into a zero array of length ``size`` at ``index``."""
    def f(v):
        out = np.zeros((size,) + np.shape(v)[1:], dtype=np.float64)
        out[index] = v
        return out
    if not isinstance(x, Var):
        return f(x)
    return x.tape.record("scatter", [x], f(x.value), f, lambda g: (g[index],))
