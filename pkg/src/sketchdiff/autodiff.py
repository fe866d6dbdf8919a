"""Tape-style reverse-mode automatic differentiation over float64 numpy arrays.

Every differentiable value is a GradNode wrapping a C-order float64 ndarray.
Operations build a fresh acyclic graph per forward pass; backward() walks it
once in reverse topological order and accumulates vector-Jacobian products.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """An operation or layer received incompatibly shaped operands."""


class GradNode:
    """One value in the computation graph.

    parents holds (node, vjp) pairs; each vjp maps the gradient at this node
    to that parent's gradient contribution. Leaves created with
    requires_grad=True (parameters, or inputs being differentiated against)
    receive a .grad array after backward().
    """

    __slots__ = ("value", "parents", "requires_grad", "grad", "name")

    def __init__(self, value, parents=(), requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in self.parents)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"GradNode(shape={self.value.shape}, requires_grad={self.requires_grad}, name={self.name})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


def constant(x) -> GradNode:
    return GradNode(x)


def parameter(x, name: str) -> GradNode:
    return GradNode(np.array(x, dtype=np.float64), requires_grad=True, name=name)


def as_node(x) -> GradNode:
    return x if isinstance(x, GradNode) else GradNode(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad over the axes numpy broadcasting expanded, back to shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> GradNode:
    a, b = as_node(a), as_node(b)
    return GradNode(
        a.value + b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ),
    )


def sub(a, b) -> GradNode:
    a, b = as_node(a), as_node(b)
    return GradNode(
        a.value - b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(-g, b.value.shape)),
        ),
    )


def mul(a, b) -> GradNode:
    a, b = as_node(a), as_node(b)
    return GradNode(
        a.value * b.value,
        parents=(
            (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
        ),
    )


def div(a, b) -> GradNode:
    a, b = as_node(a), as_node(b)
    out = a.value / b.value
    return GradNode(
        out,
        parents=(
            (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(-g * out / b.value, b.value.shape)),
        ),
    )


def neg(a) -> GradNode:
    a = as_node(a)
    return GradNode(-a.value, parents=((a, lambda g: -g),))


def matmul(a, b) -> GradNode:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.value.shape} @ {b.value.shape}")
    return GradNode(
        a.value @ b.value,
        parents=(
            (a, lambda g: g @ b.value.T),
            (b, lambda g: a.value.T @ g),
        ),
    )


def relu(a) -> GradNode:
    a = as_node(a)
    out = np.maximum(a.value, 0.0)
    return GradNode(out, parents=((a, lambda g: g * (out > 0.0)),))


def tanh(a) -> GradNode:
    a = as_node(a)
    t = np.tanh(a.value)
    return GradNode(t, parents=((a, lambda g: g * (1.0 - t * t)),))


def exp(a) -> GradNode:
    a = as_node(a)
    e = np.exp(a.value)
    return GradNode(e, parents=((a, lambda g: g * e),))


def log(a) -> GradNode:
    a = as_node(a)
    return GradNode(np.log(a.value), parents=((a, lambda g: g / a.value),))


def sqrt(a) -> GradNode:
    """Square root with the zero-safe convention sqrt'(0) := 0."""
    a = as_node(a)
    r = np.sqrt(a.value)

    def vjp(g):
        return np.where(r > 0.0, g * 0.5 / np.where(r > 0.0, r, 1.0), 0.0)

    return GradNode(r, parents=((a, vjp),))


def sum_(a, axis=None, keepdims=False) -> GradNode:
    a = as_node(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        g2 = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g2, a.value.shape).copy()

    return GradNode(out, parents=((a, vjp),))


def mean_(a, axis=None, keepdims=False) -> GradNode:
    a = as_node(a)
    n = a.value.size if axis is None else np.prod([a.value.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape) -> GradNode:
    a = as_node(a)
    orig = a.value.shape
    return GradNode(a.value.reshape(shape), parents=((a, lambda g: g.reshape(orig)),))


def pad_edge(a, width: int) -> GradNode:
    """Replicate-pad the two trailing (spatial) axes of a 4-D tensor."""
    a = as_node(a)
    if a.value.ndim != 4:
        raise ShapeError(f"pad_edge expects a 4-D tensor, got shape {a.value.shape}")
    pw = ((0, 0), (0, 0), (width, width), (width, width))
    out = np.pad(a.value, pw, mode="edge")
    _, _, h, w = a.value.shape
    rows = np.clip(np.arange(-width, h + width), 0, h - 1)
    cols = np.clip(np.arange(-width, w + width), 0, w - 1)

    def vjp(g):
        gi = np.zeros_like(a.value)
        # fold replicated border gradients back onto their source cells
        np.add.at(gi, (slice(None), slice(None), rows[:, None], cols[None, :]), g)
        return gi

    return GradNode(out, parents=((a, vjp),))


def conv2d(x, k, stride: int = 1, pad: int = 0) -> GradNode:
    """2-D convolution (cross-correlation), NCHW input, OIHW kernel.

    Implemented as a direct shift-and-matmul decomposition over kernel
    offsets, working in NHWC internally so every copy and accumulation runs
    over unit-stride channels.
    """
    x, k = as_node(x), as_node(k)
    if x.value.ndim != 4 or k.value.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.value.shape}, {k.value.shape}")
    B, C, H, W = x.value.shape
    O, CI, KH, KW = k.value.shape
    if CI != C:
        raise ShapeError(f"conv2d: input has {C} channels, kernel expects {CI}")
    xp = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.value
    HP, WP = xp.shape[2], xp.shape[3]
    OH = (HP - KH) // stride + 1
    OW = (WP - KW) // stride + 1
    if OH < 1 or OW < 1:
        raise ShapeError(f"conv2d: kernel {KH}x{KW} larger than padded input {HP}x{WP}")
    xh = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))  # (B, HP, WP, C)
    kh = np.ascontiguousarray(k.value.transpose(2, 3, 1, 0))  # (KH, KW, C, O)
    he = (OH - 1) * stride + 1
    we = (OW - 1) * stride + 1
    acc = np.zeros((B * OH * OW, O))
    cols = []  # per-offset (B*OH*OW, C) blocks, reused by the kernel vjp
    for i in range(KH):
        for j in range(KW):
            blk = np.ascontiguousarray(xh[:, i : i + he : stride, j : j + we : stride, :]).reshape(-1, C)
            cols.append(blk)
            acc += blk @ kh[i, j]
    out = np.ascontiguousarray(acc.reshape(B, OH, OW, O).transpose(0, 3, 1, 2))

    def _g_flat(g):
        return np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, O)

    def vjp_x(g):
        g2 = _g_flat(g)
        dxh = np.zeros((B, HP, WP, C))
        idx = 0
        for i in range(KH):
            for j in range(KW):
                dxh[:, i : i + he : stride, j : j + we : stride, :] += (g2 @ kh[i, j].T).reshape(B, OH, OW, C)
                idx += 1
        dx = np.ascontiguousarray(dxh.transpose(0, 3, 1, 2))
        return dx[:, :, pad : HP - pad, pad : WP - pad] if pad else dx

    def vjp_k(g):
        g2 = _g_flat(g)
        dk = np.empty((KH, KW, C, O))
        idx = 0
        for i in range(KH):
            for j in range(KW):
                dk[i, j] = cols[idx].T @ g2
                idx += 1
        return np.ascontiguousarray(dk.transpose(3, 2, 0, 1))

    return GradNode(out, parents=((x, vjp_x), (k, vjp_k)))


def log_softmax(a, axis: int = -1) -> GradNode:
    a = as_node(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def vjp(g):
        return g - sm * g.sum(axis=axis, keepdims=True)

    return GradNode(out, parents=((a, vjp),))


def gather_rows(table, idx) -> GradNode:
    """Row lookup table[idx] for an integer index vector (embedding)."""
    table = as_node(table)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows expects a 1-D index vector, got shape {idx.shape}")

    def vjp(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, idx, g)
        return gt

    return GradNode(table.value[idx], parents=((table, vjp),))


def take_columns(a, cols) -> GradNode:
    """Per-row element pick a[i, cols[i]] from a 2-D tensor."""
    a = as_node(a)
    cols = np.asarray(cols, dtype=np.intp)
    n = a.value.shape[0]
    rows = np.arange(n)

    def vjp(g):
        ga = np.zeros_like(a.value)
        ga[rows, cols] = g
        return ga

    return GradNode(a.value[rows, cols], parents=((a, vjp),))


def _topo_order(root: GradNode) -> list:
    """Reverse topological order of grad-requiring nodes, iteratively."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            order.append(node)
        else:
            stack.append((node, True))
            for p, _ in node.parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
    return order


def backward(loss: GradNode) -> dict:
    """Backpropagate from a scalar loss.

    Populates .grad on every reachable requires_grad node and returns the
    {name: gradient} map for the named ones (parameters).
    """
    if loss.value.shape != ():
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(1.0)}
    named = {}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = np.asarray(g, dtype=np.float64)
        if node.name is not None:
            named[node.name] = node.grad
        for parent, vjp in node.parents:
            if not parent.requires_grad:
                continue
            pg = vjp(g)
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return named
