"""Reverse-mode automatic differentiation over dense channels-first fields.

The graph is a plain DAG of `Node` objects; each operation records a
backward closure over its inputs. Backward visits nodes exactly once in
reverse topological order and accumulates gradients sequentially, so a
fixed graph yields bit-identical gradients on every run.

Subgraphs that cannot reach a parameter (requires_grad False everywhere)
carry no backward closures and are skipped entirely.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError


class Node:
    """One vertex of the autodiff graph: a value plus backward plumbing."""

    __slots__ = ("value", "grad", "parents", "op", "requires_grad", "_backward")

    def __init__(self, value, parents=(), op="leaf", requires_grad=False):
        self.value = value
        self.grad = None
        self.parents = parents
        self.op = op
        self.requires_grad = requires_grad
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def leaf(value, requires_grad=False):
    value = np.ascontiguousarray(value)
    return Node(value, requires_grad=requires_grad)


def as_node(x):
    if isinstance(x, Node):
        return x
    return leaf(np.asarray(x))


def _make(value, parents, op, backward):
    rg = any(p.requires_grad for p in parents)
    node = Node(np.ascontiguousarray(value), parents=tuple(parents), op=op, requires_grad=rg)
    if rg:
        node._backward = backward
    return node


def _check_same_shape(op, a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op}: shapes {a.value.shape} and {b.value.shape} differ")


def topo_order(root):
    """Postorder over the sub-DAG that requires gradients."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            stack.append((p, False))
    return order


def backward(loss):
    """Populate .grad on every reachable node; return the visited leaves.

    `loss` must be scalar (all extents 1). Accumulation order is fixed by
    the graph construction order, so repeated calls after zero_grad()
    reproduce gradients bit-exactly.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return []
    order = topo_order(loss)
    loss.accumulate(np.ones_like(loss.value))
    leaves = []
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
        elif not node.parents:
            leaves.append(node)
    return leaves


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_node(a), as_node(b)
    _check_same_shape("add", a, b)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return _make(a.value + b.value, (a, b), "add", bw)


def sub(a, b):
    a, b = as_node(a), as_node(b)
    _check_same_shape("sub", a, b)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(-g)

    return _make(a.value - b.value, (a, b), "sub", bw)


def mul(a, b):
    a, b = as_node(a), as_node(b)
    _check_same_shape("mul", a, b)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * b.value)
        if b.requires_grad:
            b.accumulate(g * a.value)

    return _make(a.value * b.value, (a, b), "mul", bw)


def div(a, b):
    a, b = as_node(a), as_node(b)
    _check_same_shape("div", a, b)
    out = a.value / b.value

    def bw(g):
        if a.requires_grad:
            a.accumulate(g / b.value)
        if b.requires_grad:
            b.accumulate(-g * out / b.value)

    return _make(out, (a, b), "div", bw)


def scale(a, s):
    a = as_node(a)
    s = float(s)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * s)

    return _make(a.value * s, (a,), "scale", bw)


def add_scalar(a, s):
    a = as_node(a)
    s = float(s)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g)

    return _make(a.value + s, (a,), "add_scalar", bw)


def square(a):
    a = as_node(a)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * (2.0 * a.value))

    return _make(a.value * a.value, (a,), "square", bw)


def leaky_relu(a, slope=0.2):
    a = as_node(a)
    out = np.where(a.value > 0, a.value, a.value * a.value.dtype.type(slope))

    def bw(g):
        if a.requires_grad:
            a.accumulate(np.where(a.value > 0, g, g * g.dtype.type(slope)))

    return _make(out, (a,), "leaky_relu", bw)


def softsign(a):
    a = as_node(a)
    denom = 1.0 + np.abs(a.value)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g / (denom * denom))

    return _make(a.value / denom, (a,), "softsign", bw)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def concat_channels(nodes):
    nodes = [as_node(n) for n in nodes]
    spatial = nodes[0].value.shape[1:]
    for n in nodes[1:]:
        if n.value.shape[1:] != spatial:
            raise ShapeError(
                f"concat_channels: spatial extents differ, {n.value.shape[1:]} vs {spatial}"
            )
    out = np.concatenate([n.value for n in nodes], axis=0)
    offsets = np.cumsum([0] + [n.value.shape[0] for n in nodes])

    def bw(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            if n.requires_grad:
                n.accumulate(g[lo:hi])

    return _make(out, tuple(nodes), "concat_channels", bw)


def broadcast_spatial(a, spatial):
    """Tile a (C,) vector across a spatial grid; adjoint sums it back."""
    a = as_node(a)
    if a.value.ndim != 1:
        raise ShapeError(f"broadcast_spatial: expected (C,) input, got {a.value.shape}")
    spatial = tuple(spatial)
    out = np.broadcast_to(a.value.reshape((-1,) + (1,) * len(spatial)), (a.value.shape[0],) + spatial)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g.sum(axis=tuple(range(1, g.ndim))))

    return _make(out.copy(), (a,), "broadcast_spatial", bw)


def axis_diff(a, axis):
    """Forward difference along spatial axis `axis` (extent shrinks by 1)."""
    a = as_node(a)
    ax = 1 + axis
    if a.value.shape[ax] < 2:
        raise ShapeError(f"axis_diff: extent {a.value.shape[ax]} too small along axis {axis}")
    hi = [slice(None)] * a.value.ndim
    lo = [slice(None)] * a.value.ndim
    hi[ax] = slice(1, None)
    lo[ax] = slice(None, -1)
    hi, lo = tuple(hi), tuple(lo)
    out = a.value[hi] - a.value[lo]

    def bw(g):
        if a.requires_grad:
            acc = np.zeros_like(a.value)
            acc[hi] += g
            acc[lo] -= g
            a.accumulate(acc)

    return _make(out, (a,), "axis_diff", bw)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def mean(a):
    a = as_node(a)
    n = a.value.size
    out = np.asarray([a.value.mean()], dtype=a.value.dtype)

    def bw(g):
        if a.requires_grad:
            a.accumulate(np.full_like(a.value, g[0] / n))

    return _make(out, (a,), "mean", bw)


def sum_all(a):
    a = as_node(a)
    out = np.asarray([a.value.sum()], dtype=a.value.dtype)

    def bw(g):
        if a.requires_grad:
            a.accumulate(np.full_like(a.value, g[0]))

    return _make(out, (a,), "sum", bw)


# ---------------------------------------------------------------------------
# stencil / sampling ops backed by the kernel layer
# ---------------------------------------------------------------------------

def conv(x, w, b=None, stride=1):
    """N-D convolution, zero padding.

    stride 1 keeps spatial extents ("same" padding for odd kernels);
    stride 2 uses padding 1 and halves even extents (3^D kernels).
    """
    x, w = as_node(x), as_node(w)
    b = as_node(b) if b is not None else None
    rank = x.value.ndim - 1
    if w.value.ndim != rank + 2:
        raise ShapeError(f"conv: weight rank {w.value.ndim} does not fit input rank {x.value.ndim}")
    if w.value.shape[1] != x.value.shape[0]:
        raise ShapeError(
            f"conv: weight expects {w.value.shape[1]} input channels, input has {x.value.shape[0]}"
        )
    k = w.value.shape[2]
    if stride == 1:
        if k % 2 == 0:
            raise ShapeError(f"conv: stride-1 kernels must be odd, got {k}")
        pad = (k - 1) // 2
    elif stride == 2:
        pad = 1
        if any(e % 2 for e in x.value.shape[1:]):
            raise ShapeError(f"conv: stride-2 needs even extents, got {x.value.shape[1:]}")
    else:
        raise ShapeError(f"conv: unsupported stride {stride}")
    out = kernels.conv_fwd(x.value, w.value, None if b is None else b.value, stride, pad)
    in_spatial = x.value.shape[1:]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        if x.requires_grad:
            x.accumulate(kernels.conv_bwd_x(g, w.value, stride, pad, in_spatial))
        if w.requires_grad:
            w.accumulate(kernels.conv_bwd_w(x.value, g, stride, pad, w.value.shape[2:]))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=tuple(range(1, g.ndim))))

    return _make(out, parents, "conv", bw)


def conv_transpose(x, w, b=None):
    """Stride-2 transpose convolution (padding 1); kernel 4 doubles extents."""
    x, w = as_node(x), as_node(w)
    b = as_node(b) if b is not None else None
    if w.value.shape[0] != x.value.shape[0]:
        raise ShapeError(
            f"conv_transpose: weight expects {w.value.shape[0]} input channels, "
            f"input has {x.value.shape[0]}"
        )
    out = kernels.tconv_fwd(x.value, w.value, None if b is None else b.value)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        if x.requires_grad:
            x.accumulate(kernels.tconv_bwd_x(g, w.value))
        if w.requires_grad:
            w.accumulate(kernels.tconv_bwd_w(x.value, g, w.value.shape[2:]))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=tuple(range(1, g.ndim))))

    return _make(out, parents, "conv_transpose", bw)


def grid_sample(img, disp):
    """Sample img at x + disp(x), linear interpolation, border clamp."""
    img, disp = as_node(img), as_node(disp)
    rank = img.value.ndim - 1
    if disp.value.shape[0] != rank or disp.value.shape[1:] != img.value.shape[1:]:
        raise ShapeError(
            f"grid_sample: displacement shape {disp.value.shape} does not match "
            f"image spatial extents {img.value.shape[1:]}"
        )
    out = kernels.warp_linear(img.value, disp.value)

    def bw(g):
        gimg, gdisp = kernels.warp_linear_bwd(img.value, disp.value, g)
        if img.requires_grad:
            img.accumulate(gimg)
        if disp.requires_grad:
            disp.accumulate(gdisp)

    return _make(out, (img, disp), "grid_sample", bw)


def resize_linear(x, factor):
    """Linear resampling by 0.5 (floor halving) or 2, align-corners false."""
    x = as_node(x)
    in_spatial = x.value.shape[1:]
    if factor == 0.5:
        out_spatial = tuple(e // 2 for e in in_spatial)
        if any(e < 2 for e in out_spatial):
            raise ShapeError(f"resize_linear: extents {in_spatial} too small to halve")
    elif factor == 2:
        out_spatial = tuple(e * 2 for e in in_spatial)
    else:
        raise ShapeError(f"resize_linear: factor must be 0.5 or 2, got {factor}")
    out = kernels.resize_linear(x.value, out_spatial)

    def bw(g):
        if x.requires_grad:
            x.accumulate(kernels.resize_linear_bwd(g, in_spatial))

    return _make(out, (x,), "resize_linear", bw)


def window_sum(x, width):
    """Sum over the centered width^D window, zero padded (self-adjoint)."""
    x = as_node(x)
    if width < 1 or width % 2 == 0:
        raise ShapeError(f"window_sum: width must be odd and positive, got {width}")
    out = kernels.window_sum(x.value, width)

    def bw(g):
        if x.requires_grad:
            x.accumulate(kernels.window_sum(g, width))

    return _make(out, (x,), "window_sum", bw)


def scalar(node):
    """Python float from a scalar node."""
    return float(node.value.reshape(()))
