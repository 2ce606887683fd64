"""Reverse-mode automatic differentiation on small dense computation graphs.

Values are float64 numpy arrays: matrices, vectors (biases), and scalars
(shape ``()``).  Nodes evaluate eagerly on construction.  The backward pass
does not write numeric adjoints directly; it extends the graph with adjoint
nodes built from the same operation set.  Expressions that contain gradients
(an input-gradient norm, say) therefore stay differentiable, which is what
makes gradient-penalty terms trainable -- differentiating the penalty with
respect to network parameters differentiates through the adjoint subgraph
(reverse-over-reverse).

Every operation's vector-Jacobian rule is written in terms of the public
operations below, so the extended graph is closed under differentiation.
Operations with piecewise-linear kinks (leaky_relu at 0, clip at its bounds)
use the subgradient of the negative/interior branch consistently; their
second derivative is treated as zero, exact almost everywhere.

No randomness, no global state: identical inputs give bit-identical values.
Graphs are confined to the thread that builds them.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError, ShapeError, UnsupportedOpError


class Node:
    """One evaluated operation in the graph."""

    __slots__ = ("op", "inputs", "value", "requires_grad", "extra")

    def __init__(self, op, inputs, value, requires_grad, extra=None):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.requires_grad = requires_grad
        self.extra = extra

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


class Parameter(Node):
    """Trainable leaf with a named identity and a gradient accumulator."""

    __slots__ = ("name", "grad")

    def __init__(self, name, values):
        values = _as_value(values, "parameter").copy()
        super().__init__("param", (), values, True)
        self.name = name
        self.grad = np.zeros_like(values)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def _as_value(values, what):
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr


def constant(values):
    """Leaf that no gradient flows into."""
    return Node("const", (), _as_value(values, "constant"), False)


def variable(values):
    """Non-parameter leaf that gradients can be taken with respect to."""
    return Node("var", (), _as_value(values, "variable"), True)


def as_node(values):
    return values if isinstance(values, Node) else constant(values)


def detach(node):
    """Same value, cut off from the graph."""
    return constant(node.value)


def _make(op, inputs, value, extra=None):
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite values produced by op '{op}'")
    needs = any(i.requires_grad for i in inputs)
    return Node(op, tuple(inputs), value, needs, extra)


def _want_matrix(node, op):
    if node.value.ndim != 2:
        raise ShapeError(f"{op}: expected a matrix, got shape {node.value.shape}")


# ---------------------------------------------------------------------------
# operations


def matmul(a, b):
    a, b = as_node(a), as_node(b)
    _want_matrix(a, "matmul")
    _want_matrix(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    return _make("matmul", (a, b), a.value @ b.value)


def transpose(a):
    a = as_node(a)
    _want_matrix(a, "transpose")
    return _make("transpose", (a,), a.value.T.copy())


def bias_add(x, b):
    x, b = as_node(x), as_node(b)
    _want_matrix(x, "bias_add")
    if b.value.ndim != 1 or b.shape[0] != x.shape[1]:
        raise ShapeError(f"bias_add: bias {b.shape} does not match matrix {x.shape}")
    return _make("bias_add", (x, b), x.value + b.value)


def sum_rows(x):
    """Column-wise sum over the batch axis: (r, c) -> (c,)."""
    x = as_node(x)
    _want_matrix(x, "sum_rows")
    return _make("sum_rows", (x,), x.value.sum(axis=0))


def concat_cols(*parts):
    parts = tuple(as_node(p) for p in parts)
    if len(parts) < 2:
        raise ContractError("concat_cols needs at least two operands")
    rows = parts[0].shape[0]
    for p in parts:
        _want_matrix(p, "concat_cols")
        if p.shape[0] != rows:
            raise ShapeError(
                f"concat_cols: row counts differ, {[p.shape for p in parts]}"
            )
    widths = tuple(p.shape[1] for p in parts)
    value = np.concatenate([p.value for p in parts], axis=1)
    return _make("concat_cols", parts, value, extra=widths)


def slice_cols(x, start, stop):
    x = as_node(x)
    _want_matrix(x, "slice_cols")
    if not (0 <= start <= stop <= x.shape[1]):
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for {x.shape}")
    return _make("slice_cols", (x,), x.value[:, start:stop].copy(), extra=(start, stop))


def leaky_relu(x, slope=0.2):
    x = as_node(x)
    mask = np.where(x.value > 0.0, 1.0, float(slope))
    return _make("leaky_relu", (x,), x.value * mask, extra=mask)


def sigmoid(x):
    x = as_node(x)
    # exp(-logaddexp(0, -v)) is 1/(1+exp(-v)) without overflow at either tail
    return _make("sigmoid", (x,), np.exp(-np.logaddexp(0.0, -x.value)))


def clip(x, lo, hi):
    """Clamp values; gradient passes only strictly inside the bounds."""
    x = as_node(x)
    mask = ((x.value > lo) & (x.value < hi)).astype(np.float64)
    return _make("clip", (x,), np.clip(x.value, lo, hi), extra=mask)


def _want_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes differ, {a.shape} vs {b.shape}")


def add(a, b):
    a, b = as_node(a), as_node(b)
    _want_same_shape(a, b, "add")
    return _make("add", (a, b), a.value + b.value)


def sub(a, b):
    a, b = as_node(a), as_node(b)
    _want_same_shape(a, b, "sub")
    return _make("sub", (a, b), a.value - b.value)


def mul(a, b):
    a, b = as_node(a), as_node(b)
    _want_same_shape(a, b, "mul")
    return _make("mul", (a, b), a.value * b.value)


def scalar_mul(x, c):
    x = as_node(x)
    return _make("scalar_mul", (x,), x.value * float(c), extra=float(c))


def neg(x):
    return scalar_mul(x, -1.0)


def scale(s, x):
    """Product of a scalar node and a tensor node."""
    s, x = as_node(s), as_node(x)
    if s.value.shape != ():
        raise ShapeError(f"scale: scalar operand has shape {s.shape}")
    return _make("scale", (s, x), s.value * x.value)


def sum_all(x):
    x = as_node(x)
    return _make("sum_all", (x,), np.asarray(x.value.sum()))


def mean(x):
    x = as_node(x)
    if x.value.size == 0:
        raise ContractError("mean of an empty tensor")
    return _make("mean", (x,), np.asarray(x.value.mean()))


def row_sum(x):
    """Sum over the last axis, keeping it: (r, c) -> (r, 1)."""
    x = as_node(x)
    _want_matrix(x, "row_sum")
    return _make("row_sum", (x,), x.value.sum(axis=1, keepdims=True))


def broadcast_cols(v, n):
    v = as_node(v)
    if v.value.ndim != 2 or v.shape[1] != 1:
        raise ShapeError(f"broadcast_cols: expected (r, 1), got {v.shape}")
    return _make("broadcast_cols", (v,), np.repeat(v.value, n, axis=1), extra=int(n))


def square(x):
    x = as_node(x)
    return _make("square", (x,), x.value * x.value)


def sqrt(x):
    x = as_node(x)
    with np.errstate(invalid="ignore"):
        return _make("sqrt", (x,), np.sqrt(x.value))


def log(x):
    x = as_node(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        return _make("log", (x,), np.log(x.value))


def exp(x):
    x = as_node(x)
    with np.errstate(over="ignore"):
        return _make("exp", (x,), np.exp(x.value))


def reciprocal(x):
    x = as_node(x)
    with np.errstate(divide="ignore"):
        return _make("reciprocal", (x,), 1.0 / x.value)


def row_l2_norm(x, eps=1e-12):
    """Per-row Euclidean norm, (r, c) -> (r, 1).

    A tiny eps under the square root keeps the gradient finite when a row is
    exactly zero; the bias it adds is far below test tolerances.
    """
    x = as_node(x)
    _want_matrix(x, "row_l2_norm")
    ssq = row_sum(square(x))
    return sqrt(add(ssq, constant(np.full(ssq.shape, float(eps)))))


# ---------------------------------------------------------------------------
# vector-Jacobian rules, each expressed through the operations above


def _vjp_matmul(node, g):
    a, b = node.inputs
    ga = matmul(g, transpose(b)) if a.requires_grad else None
    gb = matmul(transpose(a), g) if b.requires_grad else None
    return ga, gb


def _vjp_transpose(node, g):
    return (transpose(g),)


def _vjp_bias_add(node, g):
    x, b = node.inputs
    return (g if x.requires_grad else None, sum_rows(g) if b.requires_grad else None)


def _vjp_sum_rows(node, g):
    (x,) = node.inputs
    return (bias_add(constant(np.zeros(x.shape)), g),)


def _vjp_concat_cols(node, g):
    grads = []
    offset = 0
    for p, width in zip(node.inputs, node.extra):
        grads.append(slice_cols(g, offset, offset + width) if p.requires_grad else None)
        offset += width
    return tuple(grads)


def _vjp_slice_cols(node, g):
    (x,) = node.inputs
    start, stop = node.extra
    rows, cols = x.shape
    parts = []
    if start > 0:
        parts.append(constant(np.zeros((rows, start))))
    parts.append(g)
    if stop < cols:
        parts.append(constant(np.zeros((rows, cols - stop))))
    return (parts[0] if len(parts) == 1 else concat_cols(*parts),)


def _vjp_mask(node, g):
    # leaky_relu and clip: gradient is a constant mask, zero curvature
    return (mul(g, constant(node.extra)),)


def _vjp_sigmoid(node, g):
    one = constant(np.ones(node.shape))
    return (mul(g, mul(node, sub(one, node))),)


def _vjp_add(node, g):
    a, b = node.inputs
    return (g if a.requires_grad else None, g if b.requires_grad else None)


def _vjp_sub(node, g):
    a, b = node.inputs
    return (g if a.requires_grad else None, neg(g) if b.requires_grad else None)


def _vjp_mul(node, g):
    a, b = node.inputs
    ga = mul(g, b) if a.requires_grad else None
    gb = mul(g, a) if b.requires_grad else None
    return ga, gb


def _vjp_scalar_mul(node, g):
    return (scalar_mul(g, node.extra),)


def _vjp_scale(node, g):
    s, x = node.inputs
    gs = sum_all(mul(g, x)) if s.requires_grad else None
    gx = scale(s, g) if x.requires_grad else None
    return gs, gx


def _vjp_sum_all(node, g):
    (x,) = node.inputs
    return (scale(g, constant(np.ones(x.shape))),)


def _vjp_mean(node, g):
    (x,) = node.inputs
    return (scale(g, constant(np.full(x.shape, 1.0 / x.value.size))),)


def _vjp_row_sum(node, g):
    (x,) = node.inputs
    return (broadcast_cols(g, x.shape[1]),)


def _vjp_broadcast_cols(node, g):
    return (row_sum(g),)


def _vjp_square(node, g):
    (x,) = node.inputs
    return (mul(g, scalar_mul(x, 2.0)),)


def _vjp_sqrt(node, g):
    return (mul(g, scalar_mul(reciprocal(node), 0.5)),)


def _vjp_log(node, g):
    (x,) = node.inputs
    return (mul(g, reciprocal(x)),)


def _vjp_exp(node, g):
    return (mul(g, node),)


def _vjp_reciprocal(node, g):
    return (mul(g, neg(square(node))),)


_VJP = {
    "matmul": _vjp_matmul,
    "transpose": _vjp_transpose,
    "bias_add": _vjp_bias_add,
    "sum_rows": _vjp_sum_rows,
    "concat_cols": _vjp_concat_cols,
    "slice_cols": _vjp_slice_cols,
    "leaky_relu": _vjp_mask,
    "clip": _vjp_mask,
    "sigmoid": _vjp_sigmoid,
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "scalar_mul": _vjp_scalar_mul,
    "scale": _vjp_scale,
    "sum_all": _vjp_sum_all,
    "mean": _vjp_mean,
    "row_sum": _vjp_row_sum,
    "broadcast_cols": _vjp_broadcast_cols,
    "square": _vjp_square,
    "sqrt": _vjp_sqrt,
    "log": _vjp_log,
    "exp": _vjp_exp,
    "reciprocal": _vjp_reciprocal,
}

_LEAF_OPS = frozenset({"param", "const", "var"})


def _topo_order(root):
    """Post-order over the requires_grad subgraph: inputs before consumers."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for inp in node.inputs:
            if inp.requires_grad and id(inp) not in seen:
                stack.append((inp, False))
    return order


def _build_adjoints(root):
    """Adjoint node for every requires_grad node reachable from ``root``."""
    order = _topo_order(root)
    adjoints = {root: constant(np.ones(root.shape))}
    for node in reversed(order):
        g = adjoints.get(node)
        if g is None:
            continue
        if node.op in _LEAF_OPS:
            continue
        rule = _VJP.get(node.op)
        if rule is None:
            raise UnsupportedOpError(f"no differentiation rule for op '{node.op}'")
        for inp, contrib in zip(node.inputs, rule(node, g)):
            if contrib is None or not inp.requires_grad:
                continue
            prev = adjoints.get(inp)
            adjoints[inp] = contrib if prev is None else add(prev, contrib)
    return adjoints


def grad(output, wrt):
    """Adjoint nodes of a scalar ``output`` with respect to each node in ``wrt``.

    The returned nodes are part of the graph, so any expression built from
    them (a gradient norm, a penalty) can itself be differentiated.
    Nodes in ``wrt`` that the output does not depend on get zero adjoints.
    """
    output = as_node(output)
    if output.value.shape != ():
        raise ContractError(
            f"grad needs a scalar output, got shape {output.value.shape}"
        )
    adjoints = _build_adjoints(output) if output.requires_grad else {}
    return [
        adjoints.get(w) or constant(np.zeros(w.shape))
        for w in wrt
    ]


def backward(root):
    """Accumulate d(root)/d(param) into ``.grad`` of every reachable Parameter."""
    root = as_node(root)
    if root.value.shape != ():
        raise ContractError(
            f"backward needs a scalar root, got shape {root.value.shape}"
        )
    if not root.requires_grad:
        return
    for node, adj in _build_adjoints(root).items():
        if isinstance(node, Parameter):
            node.grad += adj.value


def input_gradient_norm(score, x, cond=None, eps=1e-12):
    """Per-row L2 norm of the score's gradient with respect to its input.

    ``score`` is a callable building a (rows, 1) score node from an input
    node (plus an optional conditioning node).  The input values are wrapped
    in a fresh leaf, so the norm differentiates with respect to the score
    function's parameters only -- exactly the quantity a gradient penalty
    regularizes.
    """
    x_leaf = variable(x.value if isinstance(x, Node) else x)
    out = score(x_leaf) if cond is None else score(x_leaf, as_node(cond))
    if out.value.ndim != 2 or out.value.shape[1] != 1:
        raise ContractError(
            f"input_gradient_norm: score must be (rows, 1), got {out.value.shape}"
        )
    (gx,) = grad(sum_all(out), [x_leaf])
    return row_l2_norm(gx, eps=eps)
