"""Differentiable layer primitives on single ``[C, H, W]`` images."""
import numpy as np

from . import kernels
from .errors import ShapeError
from .tensor import Tensor, grad_enabled

# Forward passes without grad tracking split im2col into row bands whose
# column matrix stays below this many elements.
_COL_BUDGET = 1 << 24


def conv_out_size(n, kernel, stride, padding):
    """Output extent of a zero-padded convolution: ``(n + 2p - k) // s + 1``."""
    return (n + 2 * padding - kernel) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x [Cin,H,W]`` with ``weight [Cout,Cin,k,k]``."""
    cout, cin, k, k2 = weight.shape
    if x.ndim != 3 or x.shape[0] != cin or k != k2:
        raise ShapeError(f"conv2d: input {x.shape} does not match weight {weight.shape}")
    _, h, w = x.shape
    ho = conv_out_size(h, k, stride, padding)
    wo = conv_out_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {k}")
    wmat = weight.data.reshape(cout, cin * k * k)
    direct = k == 1 and stride == 1 and padding == 0
    track = grad_enabled() and any(t is not None and t.requires_grad for t in (x, weight, bias))

    if direct:
        cols = x.data.reshape(cin, h * w)
        out = wmat @ cols
    else:
        xpad = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
        rows = ho if track else max(1, min(ho, _COL_BUDGET // max(1, cin * k * k * wo)))
        if rows >= ho:
            cols = kernels.im2col(xpad, k, stride, 0, ho, wo)
            out = wmat @ cols
        else:
            cols = None
            out = np.empty((cout, ho * wo), dtype=x.dtype)
            for r0 in range(0, ho, rows):
                r1 = min(ho, r0 + rows)
                out[:, r0 * wo:r1 * wo] = wmat @ kernels.im2col(xpad, k, stride, r0, r1, wo)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(cout, ho, wo)

    def bw(g):
        g2 = g.reshape(cout, ho * wo)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = wmat.T @ g2
            if direct:
                gx = dcols.reshape(cin, h, w)
            else:
                hp, wp = h + 2 * padding, w + 2 * padding
                full = kernels.col2im(np.ascontiguousarray(dcols), cin, hp, wp, k, stride, ho, wo)
                gx = full[:, padding:padding + h, padding:padding + w]
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, bw, "conv2d")


def group_norm(x, gamma, beta, groups, eps=1e-5):
    c = x.shape[0]
    if c % groups:
        raise ShapeError(f"group_norm: {c} channels not divisible into {groups} groups")
    y, xhat, rstd = kernels.group_norm_forward(x.data, groups, gamma.data, beta.data, eps)

    def bw(g):
        dx, dgamma, dbeta = kernels.group_norm_backward(
            np.ascontiguousarray(g), xhat, rstd, gamma.data, groups)
        return dx, dgamma, dbeta

    return Tensor.from_op(y, (x, gamma, beta), bw, "group_norm")


def linear(v, weight, bias=None):
    """``weight @ v (+ bias)`` for a vector ``v``."""
    if v.ndim != 1 or weight.shape[1] != v.shape[0]:
        raise ShapeError(f"linear: weight {weight.shape} cannot act on {v.shape}")
    vd, wd = v.data, weight.data
    out = wd @ vd
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gv = wd.T @ g if v.requires_grad else None
        gw = np.outer(g, vd) if weight.requires_grad else None
        if bias is None:
            return gv, gw
        return gv, gw, g

    parents = (v, weight) if bias is None else (v, weight, bias)
    return Tensor.from_op(out, parents, bw, "linear")


def upsample_nearest2x(x):
    def bw(g):
        return (kernels.upsample2x_backward(np.ascontiguousarray(g)),)

    return Tensor.from_op(kernels.upsample2x(x.data), (x,), bw, "upsample2x")


def avg_pool2x(x):
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2x needs even extents, got {x.shape}")
    out = x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def bw(g):
        return (np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25,)

    return Tensor.from_op(out.astype(x.dtype), (x,), bw, "avgpool2x")


def pad_bottom_right(x, rows, cols):
    """Zero-pad ``rows`` below and ``cols`` to the right."""
    if rows == 0 and cols == 0:
        return x
    c, h, w = x.shape

    def bw(g):
        return (g[:, :h, :w],)

    return Tensor.from_op(np.pad(x.data, ((0, 0), (0, rows), (0, cols))), (x,), bw, "pad")


def crop(x, height, width):
    """Keep the top-left ``height x width`` window."""
    c, h, w = x.shape
    if (height, width) == (h, w):
        return x

    def bw(g):
        full = np.zeros((c, h, w), dtype=g.dtype)
        full[:, :height, :width] = g
        return (full,)

    return Tensor.from_op(np.ascontiguousarray(x.data[:, :height, :width]), (x,), bw, "crop")
