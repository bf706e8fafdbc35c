"""A small tape-based autodiff engine over numpy arrays.

Nodes are evaluated eagerly when created and appended to a flat tape, so the
tape is always in topological order.  ``backward`` runs reverse mode with
numpy adjoints.  ``jvp`` runs forward mode, but builds every tangent as new
nodes on the same tape; the returned directional derivative is therefore an
ordinary node and can itself be differentiated with ``backward``
(forward-over-reverse).

Values are float64 arrays of any small shape.  Binary ops follow numpy
broadcasting and adjoints are summed back to the operand shape.
"""
from __future__ import annotations

import numpy as np
from scipy import special

from .weibull import log_gamma


class AutodiffError(RuntimeError):
    """Misuse of the tape API (bad seeds, non-scalar roots, foreign vars)."""


class _Node:
    __slots__ = ("op", "inputs", "attrs", "value", "name")

    def __init__(self, op, inputs, attrs, value, name=None):
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.value = value
        self.name = name


class Var:
    """Handle on one node of a :class:`Tape`."""

    __slots__ = ("tape", "idx")
    __array_priority__ = 100.0

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.idx].value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        node = self.tape.nodes[self.idx]
        return f"Var({node.op}#{self.idx}, shape={self.shape})"

    def _wrap(self, other):
        return other if isinstance(other, Var) else self.tape.const(other)

    def __add__(self, other):
        return self.tape.apply("add", self, self._wrap(other))

    def __radd__(self, other):
        return self.tape.apply("add", self._wrap(other), self)

    def __sub__(self, other):
        return self.tape.apply("sub", self, self._wrap(other))

    def __rsub__(self, other):
        return self.tape.apply("sub", self._wrap(other), self)

    def __mul__(self, other):
        return self.tape.apply("mul", self, self._wrap(other))

    def __rmul__(self, other):
        return self.tape.apply("mul", self._wrap(other), self)

    def __truediv__(self, other):
        return self.tape.apply("div", self, self._wrap(other))

    def __rtruediv__(self, other):
        return self.tape.apply("div", self._wrap(other), self)

    def __neg__(self):
        return self.tape.apply("neg", self)

    def __pow__(self, p):
        if isinstance(p, Var):
            raise AutodiffError("only constant exponents are supported; use exp/log")
        return self.tape.apply("pow", self, p=float(p))

    def __matmul__(self, other):
        return self.tape.apply("matmul", self, self._wrap(other))

    def __rmatmul__(self, other):
        return self.tape.apply("matmul", self._wrap(other), self)

    @property
    def T(self):
        return self.tape.apply("transpose", self)

    def sum(self, axis=None):
        return self.tape.apply("sum", self, axis=axis)

    def mean(self, axis=None):
        return self.tape.apply("mean", self, axis=axis)


class Tape:
    """Append-only list of primitive operations."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.nonfinite: list[int] = []

    def __len__(self):
        return len(self.nodes)

    def _push(self, op, inputs, attrs, value, name=None) -> Var:
        self.nodes.append(_Node(op, inputs, attrs, value, name))
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value, name=None) -> Var:
        return self._push("leaf", (), None, np.array(value, dtype=float), name)

    def const(self, value) -> Var:
        return self._push("const", (), None, np.asarray(value, dtype=float))

    def apply(self, op: str, *args: Var, **attrs) -> Var:
        for a in args:
            if a.tape is not self:
                raise AutodiffError("cannot mix variables from different tapes")
        value = _OPS[op].forward(*(self.nodes[a.idx].value for a in args), **attrs)
        return self._push(op, tuple(a.idx for a in args), attrs, value)

    def leaves(self) -> list[Var]:
        return [Var(self, i) for i, n in enumerate(self.nodes) if n.op == "leaf"]

    def forward(self, bindings: dict | None = None, upto: Var | None = None) -> np.ndarray:
        """Replay the tape with new leaf values and return the value of ``upto``.

        ``bindings`` maps leaf Vars (or leaf names) to values; leaves not
        mentioned keep their current value.  Non-finite node values are
        recorded in :attr:`nonfinite`.
        """
        if bindings:
            names = {n.name: i for i, n in enumerate(self.nodes) if n.op == "leaf" and n.name is not None}
            for key, val in bindings.items():
                if isinstance(key, Var):
                    idx = key.idx
                elif key in names:
                    idx = names[key]
                else:
                    raise AutodiffError(f"unbound leaf {key!r}")
                node = self.nodes[idx]
                if node.op != "leaf":
                    raise AutodiffError(f"node {idx} is not a leaf")
                node.value = np.array(val, dtype=float)
        stop = len(self.nodes) if upto is None else upto.idx + 1
        nodes = self.nodes
        self.nonfinite = []
        with np.errstate(all="ignore"):
            for i in range(stop):
                node = nodes[i]
                if node.op in ("leaf", "const"):
                    continue
                node.value = _OPS[node.op].forward(*(nodes[j].value for j in node.inputs), **node.attrs)
                if not np.all(np.isfinite(node.value)):
                    self.nonfinite.append(i)
        return nodes[stop - 1].value

    def backward(self, root: Var, wrt=None) -> list[np.ndarray] | dict:
        """Reverse-mode gradient of a scalar ``root``.

        Returns a list aligned with ``wrt`` when given, otherwise a dict
        keyed by leaf index.  Unreached leaves get zero gradients.
        """
        if root.tape is not self:
            raise AutodiffError("root belongs to another tape")
        if root.value.size != 1:
            raise AutodiffError(f"backward needs a scalar root, got shape {root.shape}")
        nodes = self.nodes
        adj: dict[int, np.ndarray] = {root.idx: np.ones_like(root.value)}
        for i in range(root.idx, -1, -1):
            g = adj.get(i)
            if g is None:
                continue
            node = nodes[i]
            if node.op in ("leaf", "const"):
                continue
            rule = _OPS[node.op]
            if rule.vjp is None:
                continue
            in_vals = [nodes[j].value for j in node.inputs]
            grads = rule.vjp(g, node.value, *in_vals, **node.attrs)
            for j, gj in zip(node.inputs, grads):
                if gj is None or nodes[j].op == "const":
                    continue
                gj = _unbroadcast(gj, nodes[j].value.shape)
                if j in adj:
                    adj[j] = adj[j] + gj
                else:
                    adj[j] = gj
        if wrt is None:
            return {i: adj.get(i, np.zeros_like(n.value)) for i, n in enumerate(nodes) if n.op == "leaf"}
        return [adj.get(v.idx, np.zeros_like(v.value)) for v in wrt]

    def jvp(self, root, seeds: dict):
        """Directional derivative of ``root`` along leaf directions ``seeds``.

        ``root`` may be a Var or a list of Vars (one tangent sweep serves
        all of them).  The tangent of every intermediate node is built from
        primitives on this tape, so the result supports ``backward``.
        """
        roots = list(root) if isinstance(root, (list, tuple)) else [root]
        last = max(r.idx for r in roots)
        tangents: dict[int, Var] = {}
        start = last + 1
        for leaf, direction in seeds.items():
            if not isinstance(leaf, Var) or leaf.tape is not self or self.nodes[leaf.idx].op != "leaf":
                raise AutodiffError("jvp seeds must be leaf variables of this tape")
            direction = np.broadcast_to(np.asarray(direction, dtype=float), leaf.shape)
            tangents[leaf.idx] = self.const(direction)
            start = min(start, leaf.idx)
        nodes = self.nodes
        for i in range(start, last + 1):
            node = nodes[i]
            if node.op in ("leaf", "const"):
                continue
            in_t = [tangents.get(j) for j in node.inputs]
            if all(t is None for t in in_t):
                continue
            rule = _OPS[node.op]
            if rule.jvp is None:
                continue
            out = rule.jvp(self, Var(self, i), [Var(self, j) for j in node.inputs], in_t, **node.attrs)
            if out is not None:
                if out.shape != node.value.shape:
                    out = out + self.const(np.zeros(node.value.shape))
                tangents[i] = out
        results = []
        for r in roots:
            t = tangents.get(r.idx)
            results.append(self.const(np.zeros_like(r.value)) if t is None else t)
        return results if isinstance(root, (list, tuple)) else results[0]


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


class _Op:
    __slots__ = ("forward", "vjp", "jvp")

    def __init__(self, forward, vjp=None, jvp=None):
        self.forward = forward
        self.vjp = vjp
        self.jvp = jvp


def _tsum(*terms):
    terms = [t for t in terms if t is not None]
    if not terms:
        return None
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def _expand_sum_grad(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def _count(shape, axis):
    if axis is None:
        return int(np.prod(shape))
    axes = (axis,) if np.isscalar(axis) else axis
    return int(np.prod([shape[a] for a in axes]))


def _matmul_vjp(g, out, a, b):
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if a.ndim == 2 and b.ndim == 1:
        return np.outer(g, b), a.T @ g
    if a.ndim == 1 and b.ndim == 2:
        return b @ g, np.outer(a, g)
    return g @ b.T, a.T @ g


def _softplus(x):
    return np.logaddexp(0.0, x)


def _step(x):
    return (x > 0).astype(float)


_OPS: dict[str, _Op] = {
    "add": _Op(
        np.add,
        lambda g, out, a, b: (g, g),
        lambda tp, o, ins, ts: _tsum(*ts),
    ),
    "sub": _Op(
        np.subtract,
        lambda g, out, a, b: (g, -g),
        lambda tp, o, ins, ts: _tsum(ts[0], None if ts[1] is None else -ts[1]),
    ),
    "neg": _Op(
        np.negative,
        lambda g, out, a: (-g,),
        lambda tp, o, ins, ts: -ts[0],
    ),
    "mul": _Op(
        np.multiply,
        lambda g, out, a, b: (g * b, g * a),
        lambda tp, o, ins, ts: _tsum(
            None if ts[0] is None else ts[0] * ins[1],
            None if ts[1] is None else ins[0] * ts[1],
        ),
    ),
    "div": _Op(
        np.divide,
        lambda g, out, a, b: (g / b, -g * out / b),
        lambda tp, o, ins, ts: _tsum(ts[0], None if ts[1] is None else -(o * ts[1])) / ins[1],
    ),
    "exp": _Op(
        np.exp,
        lambda g, out, a: (g * out,),
        lambda tp, o, ins, ts: o * ts[0],
    ),
    "log": _Op(
        np.log,
        lambda g, out, a: (g / a,),
        lambda tp, o, ins, ts: ts[0] / ins[0],
    ),
    "pow": _Op(
        lambda a, p: np.power(a, p),
        lambda g, out, a, p: (g * p * np.power(a, p - 1.0),),
        lambda tp, o, ins, ts, p: (ins[0] ** (p - 1.0)) * p * ts[0],
    ),
    "softplus": _Op(
        _softplus,
        lambda g, out, a: (g * special.expit(a),),
        lambda tp, o, ins, ts: sigmoid(ins[0]) * ts[0],
    ),
    "sigmoid": _Op(
        special.expit,
        lambda g, out, a: (g * out * (1.0 - out),),
        lambda tp, o, ins, ts: o * (1.0 - o) * ts[0],
    ),
    "abs": _Op(
        np.abs,
        lambda g, out, a: (g * np.sign(a),),
        lambda tp, o, ins, ts: tp.apply("sign", ins[0]) * ts[0],
    ),
    "max0": _Op(
        lambda a: np.maximum(a, 0.0),
        lambda g, out, a: (g * (a > 0),),
        lambda tp, o, ins, ts: tp.apply("step", ins[0]) * ts[0],
    ),
    # zero-derivative helpers: indicator, sign, and an explicit gradient stop
    "step": _Op(_step),
    "sign": _Op(np.sign),
    "stop_gradient": _Op(lambda a: a),
    "matmul": _Op(
        np.matmul,
        _matmul_vjp,
        lambda tp, o, ins, ts: _tsum(
            None if ts[0] is None else ts[0] @ ins[1],
            None if ts[1] is None else ins[0] @ ts[1],
        ),
    ),
    "transpose": _Op(
        np.transpose,
        lambda g, out, a: (g.T,),
        lambda tp, o, ins, ts: ts[0].T,
    ),
    "sum": _Op(
        lambda a, axis: np.sum(a, axis=axis),
        lambda g, out, a, axis: (_expand_sum_grad(g, a.shape, axis),),
        lambda tp, o, ins, ts, axis: ts[0].sum(axis=axis),
    ),
    "mean": _Op(
        lambda a, axis: np.mean(a, axis=axis),
        lambda g, out, a, axis: (_expand_sum_grad(g, a.shape, axis) / _count(a.shape, axis),),
        lambda tp, o, ins, ts, axis: ts[0].mean(axis=axis),
    ),
    "lgamma": _Op(
        lambda a: np.asarray(log_gamma(a)),
        lambda g, out, a: (g * special.digamma(a),),
        lambda tp, o, ins, ts: tp.apply("polygamma", ins[0], n=0) * ts[0],
    ),
    "polygamma": _Op(
        lambda a, n: special.polygamma(n, a),
        lambda g, out, a, n: (g * special.polygamma(n + 1, a),),
        lambda tp, o, ins, ts, n: tp.apply("polygamma", ins[0], n=n + 1) * ts[0],
    ),
}


# functional spellings


def exp(x: Var) -> Var:
    return x.tape.apply("exp", x)


def log(x: Var) -> Var:
    return x.tape.apply("log", x)


def softplus(x: Var) -> Var:
    return x.tape.apply("softplus", x)


def sigmoid(x: Var) -> Var:
    return x.tape.apply("sigmoid", x)


def abs_(x: Var) -> Var:
    return x.tape.apply("abs", x)


def max0(x: Var) -> Var:
    """Hinge max(x, 0); subgradient 0 at the kink."""
    return x.tape.apply("max0", x)


def step(x: Var) -> Var:
    """Indicator 1{x > 0}, treated as a constant by both AD modes."""
    return x.tape.apply("step", x)


def stop_gradient(x: Var) -> Var:
    return x.tape.apply("stop_gradient", x)


def lgamma(x: Var) -> Var:
    return x.tape.apply("lgamma", x)


def dot(a: Var, b: Var) -> Var:
    return a @ b


def gradient_errors(tape: Tape, root: Var, leaves, h: float = 1e-5, floor: float = 1e-8) -> np.ndarray:
    """Per-coordinate relative error of ``backward`` against central differences.

    The step is scaled by ``max(1, |x|)``.  Errors are
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    Leaf values are restored afterwards.
    """
    analytic = tape.backward(root, wrt=leaves)
    originals = [v.value.copy() for v in leaves]
    errs = []
    try:
        for leaf, orig, grad in zip(leaves, originals, analytic):
            flat = orig.ravel()
            for k in range(flat.size):
                step_k = h * max(1.0, abs(flat[k]))
                bumped = flat.copy()
                bumped[k] += step_k
                up = float(tape.forward({leaf: bumped.reshape(orig.shape)}, upto=root))
                bumped[k] -= 2 * step_k
                down = float(tape.forward({leaf: bumped.reshape(orig.shape)}, upto=root))
                tape.forward({leaf: orig}, upto=root)
                numeric = (up - down) / (2 * step_k)
                a = float(grad.ravel()[k])
                errs.append(abs(a - numeric) / max(abs(a), abs(numeric), floor))
    finally:
        tape.forward({leaf: orig for leaf, orig in zip(leaves, originals)})
    return np.asarray(errs)


def check_gradients(tape: Tape, root: Var, leaves, h: float = 1e-5) -> float:
    """Largest relative gradient error over all coordinates of ``leaves``."""
    errs = gradient_errors(tape, root, leaves, h)
    return float(errs.max()) if errs.size else 0.0
