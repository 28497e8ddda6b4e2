"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A :class:`DiffValue` wraps an ndarray together with the recipe that produced
it. Calling :func:`backward` on a scalar node walks the recorded graph once in
reverse topological order and accumulates d(scalar)/d(leaf) into ``grad`` on
every reachable node that requires gradients. Gradients are always summed into
``grad``, never overwritten, so fan-out and repeated backward calls compose.

The primitive set is intentionally small and shape-strict: dense (and
constant-sparse) matrix products, a handful of elementwise maps, row softmax /
log-sum-exp, and the scatter/gather ops that move between per-pair vectors and
symmetric matrices. There is no general broadcasting; the only relaxation is
that ``add`` and ``mul`` accept a single-element operand against any shape.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import ShapeMismatchError, UnsupportedPrimitiveError

__all__ = [
    "DiffValue", "constant", "parameter", "backward",
    "matmul", "transpose", "add", "mul", "scale",
    "relu", "sigmoid", "exp", "log", "softplus",
    "softmax_rows", "logsumexp_rows", "sum_all", "dropout",
    "stack_columns", "gather_rows", "sym_from_pairs", "pair_dot", "pair_bias",
]


class DiffValue:
    """A node in a dynamically recorded computation graph.

    ``value`` is the forward result, ``grad`` (same shape, lazily allocated)
    collects gradient contributions. Leaves are created directly or via
    :func:`parameter` / :func:`constant`; interior nodes only through the
    primitive functions in this module.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False):
        if sp.issparse(value):
            if requires_grad:
                raise UnsupportedPrimitiveError("sparse values cannot require gradients")
            self.value = value.tocsr()
        else:
            self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"DiffValue(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # Sugar for readable objective code; everything delegates to the module
    # functions so the primitive set stays the single source of truth.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(_as_diff(other), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(value):
    """Wrap an array as a non-differentiable leaf."""
    return value if isinstance(value, DiffValue) else DiffValue(value)


def parameter(value):
    """Wrap an array copy as a trainable leaf."""
    return DiffValue(np.array(value, dtype=np.float64, copy=True), requires_grad=True)


def _as_diff(x):
    if isinstance(x, DiffValue):
        return x
    return DiffValue(x)


def _make(value, parents, backward_fn):
    out = DiffValue(value)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(node, g):
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


def _accum_reduced(node, g):
    # Single-element operands absorb the sum of the incoming gradient.
    if not node.requires_grad:
        return
    if node.value.size == 1 and np.ndim(g) and np.size(g) > 1:
        _accum(node, np.asarray(np.sum(g)).reshape(node.value.shape))
    else:
        _accum(node, g)


def _require_2d(*nodes):
    for n in nodes:
        if n.value.ndim != 2:
            raise ShapeMismatchError(f"expected a 2-D operand, got shape {n.value.shape}")


def _elementwise_shapes(a, b):
    if a.value.shape == b.value.shape:
        return
    if a.value.size == 1 or b.value.size == 1:
        return
    raise ShapeMismatchError(f"incompatible shapes {a.value.shape} and {b.value.shape}")


# --- core primitives ----------------------------------------------------------

def matmul(a, b):
    a, b = _as_diff(a), _as_diff(b)
    if not sp.issparse(a.value):
        _require_2d(a)
    _require_2d(b)
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeMismatchError(f"matmul {a.value.shape} @ {b.value.shape}")
    out = a.value @ b.value

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.value.T)
        if b.requires_grad:
            _accum(b, a.value.T @ g)

    return _make(out, (a, b), bw)


def transpose(a):
    a = _as_diff(a)
    _require_2d(a)

    def bw(g):
        _accum(a, g.T)

    return _make(a.value.T, (a,), bw)


def add(a, b):
    a, b = _as_diff(a), _as_diff(b)
    _elementwise_shapes(a, b)

    def bw(g):
        _accum_reduced(a, g)
        _accum_reduced(b, g)

    return _make(a.value + b.value, (a, b), bw)


def mul(a, b):
    a, b = _as_diff(a), _as_diff(b)
    _elementwise_shapes(a, b)

    def bw(g):
        if a.requires_grad:
            _accum_reduced(a, g * b.value)
        if b.requires_grad:
            _accum_reduced(b, g * a.value)

    return _make(a.value * b.value, (a, b), bw)


def scale(a, c):
    a = _as_diff(a)
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return _make(a.value * c, (a,), bw)


def relu(a):
    a = _as_diff(a)
    # Derivative at exactly zero is defined as zero.
    keep = a.value > 0

    def bw(g):
        _accum(a, g * keep)

    return _make(np.where(keep, a.value, 0.0), (a,), bw)


def sigmoid(a):
    a = _as_diff(a)
    s = expit(a.value)

    def bw(g):
        _accum(a, g * s * (1.0 - s))

    return _make(s, (a,), bw)


def exp(a):
    a = _as_diff(a)
    e = np.exp(a.value)

    def bw(g):
        _accum(a, g * e)

    return _make(e, (a,), bw)


def log(a):
    a = _as_diff(a)

    def bw(g):
        _accum(a, g / a.value)

    return _make(np.log(a.value), (a,), bw)


def softplus(a):
    a = _as_diff(a)

    def bw(g):
        _accum(a, g * expit(a.value))

    return _make(np.logaddexp(0.0, a.value), (a,), bw)


def softmax_rows(a):
    a = _as_diff(a)
    _require_2d(a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        _accum(a, s * (g - (g * s).sum(axis=1, keepdims=True)))

    return _make(s, (a,), bw)


def logsumexp_rows(a):
    a = _as_diff(a)
    _require_2d(a)
    m = a.value.max(axis=1, keepdims=True)
    e = np.exp(a.value - m)
    z = e.sum(axis=1, keepdims=True)

    def bw(g):
        _accum(a, g * (e / z))

    return _make(np.log(z) + m, (a,), bw)


def sum_all(a):
    a = _as_diff(a)

    def bw(g):
        _accum(a, np.broadcast_to(g, a.value.shape))

    return _make(np.asarray(a.value.sum()), (a,), bw)


def dropout(a, rate, rng):
    """Inverted dropout: zero entries with probability ``rate``, rescale the rest."""
    a = _as_diff(a)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    keep = 1.0 - rate
    mask = (rng.random(a.value.shape) < keep) / keep

    def bw(g):
        _accum(a, g * mask)

    return _make(a.value * mask, (a,), bw)


# --- structural primitives ------------------------------------------------------

def stack_columns(columns):
    """Concatenate (n, 1) nodes into an (n, k) matrix."""
    cols = [_as_diff(c) for c in columns]
    _require_2d(*cols)
    for c in cols:
        if c.value.shape != cols[0].value.shape or c.value.shape[1] != 1:
            raise ShapeMismatchError("stack_columns expects matching (n, 1) columns")
    out = np.hstack([c.value for c in cols])

    def bw(g):
        for j, c in enumerate(cols):
            _accum(c, g[:, j:j + 1])

    return _make(out, tuple(cols), bw)


def gather_rows(a, idx):
    a = _as_diff(a)
    _require_2d(a)
    idx = np.asarray(idx, dtype=np.intp)

    def bw(g):
        if a.requires_grad:
            ga = np.zeros_like(a.value)
            np.add.at(ga, idx, g)
            _accum(a, ga)

    return _make(a.value[idx], (a,), bw)


def sym_from_pairs(v, n, pair_idx):
    """Scatter a length n(n-1)/2 vector into a symmetric matrix with zero diagonal."""
    v = _as_diff(v)
    iu, ju = pair_idx
    if v.value.shape != iu.shape:
        raise ShapeMismatchError(f"pair vector shape {v.value.shape} != {iu.shape}")
    m = np.zeros((n, n))
    m[iu, ju] = v.value
    m[ju, iu] = v.value

    def bw(g):
        _accum(v, g[iu, ju] + g[ju, iu])

    return _make(m, (v,), bw)


def pair_dot(z, zt, pair_idx):
    """Per-pair dot products z_i . zt_j; accepts the same node for both factors."""
    z, zt = _as_diff(z), _as_diff(zt)
    _require_2d(z, zt)
    iu, ju = pair_idx
    out = np.einsum("pd,pd->p", z.value[iu], zt.value[ju])

    def bw(g):
        if z.requires_grad:
            gz = np.zeros_like(z.value)
            np.add.at(gz, iu, g[:, None] * zt.value[ju])
            _accum(z, gz)
        if zt.requires_grad:
            gzt = np.zeros_like(zt.value)
            np.add.at(gzt, ju, g[:, None] * z.value[iu])
            _accum(zt, gzt)

    return _make(out, (z, zt), bw)


def pair_bias(b, pair_idx):
    """Per-pair sums b_i + b_j from a length-n vector."""
    b = _as_diff(b)
    if b.value.ndim != 1:
        raise ShapeMismatchError(f"pair_bias expects a 1-D vector, got {b.value.shape}")
    iu, ju = pair_idx

    def bw(g):
        if b.requires_grad:
            gb = np.zeros_like(b.value)
            np.add.at(gb, iu, g)
            np.add.at(gb, ju, g)
            _accum(b, gb)

    return _make(b.value[iu] + b.value[ju], (b,), bw)


# --- graph traversal ------------------------------------------------------------

def _topo_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root):
    """Accumulate d(root)/d(leaf) into ``grad`` for every reachable node."""
    if not isinstance(root, DiffValue):
        raise UnsupportedPrimitiveError("backward expects a DiffValue")
    if root.value.shape != ():
        raise ShapeMismatchError(f"backward root must be a scalar, got shape {root.value.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    _accum(root, np.asarray(1.0))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
