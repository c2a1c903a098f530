"""Dense tensors with reverse-mode automatic differentiation.

The graph is built dynamically: every op that touches a tensor with
``requires_grad`` records a :class:`Node` holding its parents and a closure
that maps the upstream gradient to per-parent gradients. Nodes carry a
monotonically increasing sequence number, so sorting reachable nodes by it
gives the forward evaluation order and :func:`backward` walks it in exact
reverse.

Broadcasting is deliberately narrow: binary ops accept equal shapes, or a
``[C, 1, 1]`` operand against a ``[C, H, W]`` one. Nothing else.
"""
import contextlib
import itertools
import threading

import numpy as np

from .errors import DomainError, NumericError, ShapeError, UsageError

_seq = itertools.count()
_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread (inference)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Node:
    __slots__ = ("op", "parents", "backward_fn", "seq", "consumed")

    def __init__(self, op, parents, backward_fn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.seq = next(_seq)
        self.consumed = False

    def __repr__(self):
        return f"Node({self.op}, seq={self.seq})"


def _as_float_array(data, dtype):
    arr = np.asarray(data)
    if dtype is not None:
        return np.ascontiguousarray(arr, dtype=dtype)
    if arr.dtype in (np.float32, np.float64):
        return np.ascontiguousarray(arr)
    return np.ascontiguousarray(arr, dtype=np.float32)


class Tensor:
    """A float32/float64 array plus optional gradient and graph node."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None
        self.name = name

    @classmethod
    def from_op(cls, data, parents, backward_fn, op):
        """Wrap an op result, recording a node when any parent needs grad.

        ``backward_fn(g)`` must return one gradient array (or ``None``) per
        parent, each with that parent's shape.
        """
        out = cls(data)
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.node = Node(op, tuple(parents), backward_fn)
        return out

    # -- basic properties ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def is_finite(self):
        return bool(np.isfinite(self.data).all())

    def check_finite(self, what="tensor"):
        if not self.is_finite():
            bad = int((~np.isfinite(self.data)).sum())
            raise NumericError(f"{what} holds {bad} non-finite value(s)")
        return self

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def backward(self):
        backward(self)


def _wrap(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _broadcast_shape(a, b):
    if a.shape == b.shape:
        return a.shape
    for big, small in ((a, b), (b, a)):
        if (small.ndim == 0 or small.size == 1) and small.ndim <= big.ndim:
            return big.shape
        if (big.ndim == 3 and small.ndim == 3 and small.shape[1:] == (1, 1)
                and small.shape[0] == big.shape[0]):
            return big.shape
    raise ShapeError(f"cannot combine shapes {a.shape} and {b.shape}; only "
                     "equal shapes or [C,1,1] against [C,H,W] are allowed")


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    if len(shape) == 0 or int(np.prod(shape)) == 1:
        return g.sum().reshape(shape)
    return g.sum(axis=(1, 2), keepdims=True)


# -- elementwise ops ---------------------------------------------------------


def add(a, b):
    a = _wrap(a, b) if not isinstance(a, Tensor) else a
    b = _wrap(b, a)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _reduce_to(g, sa), _reduce_to(g, sb)

    return Tensor.from_op(a.data + b.data, (a, b), bw, "add")


def mul(a, b):
    a = _wrap(a, b) if not isinstance(a, Tensor) else a
    b = _wrap(b, a)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _reduce_to(g * bd, ad.shape) if a.requires_grad else None
        gb = _reduce_to(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(ad * bd, (a, b), bw, "mul")


def relu(x):
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return Tensor.from_op(np.where(mask, x.data, 0).astype(x.dtype), (x,), bw, "relu")


def sigmoid(x):
    d = x.data
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)

    def bw(g):
        return (g * y * (1 - y),)

    return Tensor.from_op(y, (x,), bw, "sigmoid")


_ELEMENTWISE = {"add": add, "mul": mul, "relu": relu, "sigmoid": sigmoid}


def elementwise(op_kind, *inputs):
    """Dispatch one of ``add``, ``mul``, ``relu``, ``sigmoid`` by name."""
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*inputs)


# -- reductions and reshapes -------------------------------------------------


def reduce_mean(x, axes=None):
    """Mean over ``axes`` (all axes when ``None``); reduced axes are dropped."""
    if axes is None:
        axes = tuple(range(x.ndim))
    elif isinstance(axes, int):
        axes = (axes,)
    axes = tuple(sorted(a % x.ndim if x.ndim else a for a in axes))
    for a in axes:
        if not 0 <= a < x.ndim:
            raise ShapeError(f"axis {a} out of range for shape {x.shape}")
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise DomainError("mean over an empty extent")
    shape = x.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))

    def bw(g):
        return (np.broadcast_to(g.reshape(kept) / count, shape).astype(x.dtype),)

    out = x.data.mean(axis=axes) if axes else x.data.copy()
    return Tensor.from_op(np.asarray(out, dtype=x.dtype), (x,), bw, "mean")


def tsum(x):
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(g, shape).astype(x.dtype),)

    return Tensor.from_op(np.asarray(x.data.sum(), dtype=x.dtype), (x,), bw, "sum")


def reshape(x, shape):
    old = x.shape

    def bw(g):
        return (g.reshape(old),)

    return Tensor.from_op(x.data.reshape(shape), (x,), bw, "reshape")


# -- graph traversal ---------------------------------------------------------


def topo_order(root):
    """Nodes reachable from ``root`` in forward evaluation order."""
    seen = set()
    nodes = []
    stack = [root]
    while stack:
        t = stack.pop()
        n = t.node
        if n is None or id(n) in seen:
            continue
        seen.add(id(n))
        nodes.append((n, t))
        stack.extend(n.parents)
    nodes.sort(key=lambda nt: nt[0].seq)
    return nodes


def backward(loss):
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Leaf gradients accumulate across calls; clear them with
    :func:`zero_grad`. The graph is released afterwards, so a second call on
    the same loss raises :class:`UsageError`.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = _accum(loss.grad, np.ones_like(loss.data))
            return
        raise UsageError("loss was not produced by a recorded graph")
    if loss.node.consumed:
        raise UsageError("backward already ran on this graph; rebuild it with a new forward pass")

    order = topo_order(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for node, out in reversed(order):
        g = pending.pop(id(out), None)
        if g is None:
            continue
        grads = node.backward_fn(g)
        for p, gp in zip(node.parents, grads):
            if gp is None or not p.requires_grad:
                continue
            if p.node is None:
                p.grad = _accum(p.grad, gp, p.data)
            else:
                pending[id(p)] = _accum(pending.get(id(p)), gp)
    for node, _ in order:
        node.consumed = True
        node.backward_fn = None


def _accum(acc, g, like=None):
    if like is not None:
        g = np.asarray(g, dtype=like.dtype).reshape(like.shape)
    if acc is None:
        return np.array(g, copy=True)
    return acc + g


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


# -- finite-difference oracle ------------------------------------------------


def finite_difference_check(f, point, epsilon=1e-4):
    """Compare analytic and central-difference gradients of scalar ``f``.

    ``f`` maps a Tensor to a scalar Tensor. The point is promoted to float64.
    Returns ``max |a - n| / max(|a|, |n|, 1e-8)`` over all coordinates.
    """
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    loss = f(x)
    backward(loss)
    analytic = np.zeros_like(x0) if x.grad is None else x.grad

    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        xp = flat.copy()
        xp[i] += epsilon
        fp = f(Tensor(xp.reshape(x0.shape))).item()
        xm = flat.copy()
        xm[i] -= epsilon
        fm = f(Tensor(xm.reshape(x0.shape))).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        nflat[i] = (fp - fm) / (2 * epsilon)
    return relative_error(analytic, numeric)


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom))


def param_gradient_check(loss_fn, tensors, epsilon=1e-4, indices=None):
    """Finite-difference check for tensors a closure reads in place.

    ``loss_fn()`` rebuilds the graph from the current ``.data`` of
    ``tensors`` and returns a scalar Tensor. ``indices`` optionally maps a
    tensor position in ``tensors`` to the flat coordinates to probe.
    Returns the worst relative error seen.
    """
    zero_grad(tensors)
    backward(loss_fn())
    worst = 0.0
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        coords = range(flat.size) if indices is None or ti not in indices else indices[ti]
        analytic = (np.zeros_like(t.data) if t.grad is None else t.grad).reshape(-1)
        a_sel, n_sel = [], []
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = loss_fn().item()
            flat[i] = orig - epsilon
            fm = loss_fn().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite loss probing coordinate {i}")
            a_sel.append(analytic[i])
            n_sel.append((fp - fm) / (2 * epsilon))
        worst = max(worst, relative_error(a_sel, n_sel))
    zero_grad(tensors)
    return worst
