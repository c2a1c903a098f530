"""Hot numeric kernels used by the differentiable ops.

Every kernel exists twice: a pure-numpy version (``np_*``) and a numba
``@njit`` version (``nb_*``). The public names at the bottom of the module
point at whichever set ``_backend.USE_NUMBA`` selects. Both sets are always
importable so the benchmark and the tests can compare them side by side.

Array layout is channel-first ``[C, H, W]`` everywhere.
"""
import numpy as np

from ._backend import BACKEND, HAVE_NUMBA, USE_NUMBA  # noqa: F401

# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def np_im2col(xpad, k, stride, row0, row1, wo):
    """Gather ``k*k`` shifted views of a padded input into a column matrix.

    ``row0:row1`` selects a band of output rows so callers can chunk large
    images. Returns ``[Cin*k*k, (row1-row0)*wo]``.
    """
    cin = xpad.shape[0]
    nrow = row1 - row0
    cols = np.empty((cin, k, k, nrow, wo), dtype=xpad.dtype)
    for di in range(k):
        r = row0 * stride + di
        for dj in range(k):
            cols[:, di, dj] = xpad[:, r:r + stride * (nrow - 1) + 1:stride,
                                   dj:dj + stride * (wo - 1) + 1:stride]
    return cols.reshape(cin * k * k, nrow * wo)


def np_col2im(cols, cin, hp, wp, k, stride, ho, wo):
    """Scatter-add a column matrix back onto a zero ``[cin, hp, wp]`` canvas."""
    out = np.zeros((cin, hp, wp), dtype=cols.dtype)
    c = cols.reshape(cin, k, k, ho, wo)
    for di in range(k):
        for dj in range(k):
            out[:, di:di + stride * (ho - 1) + 1:stride,
                dj:dj + stride * (wo - 1) + 1:stride] += c[:, di, dj]
    return out


def np_upsample2x(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def np_upsample2x_backward(g):
    c, h2, w2 = g.shape
    return g.reshape(c, h2 // 2, 2, w2 // 2, 2).sum(axis=(2, 4))


def np_group_norm_forward(x, groups, gamma, beta, eps):
    """Return ``(y, xhat, rstd)``; ``rstd`` has one entry per group."""
    c, h, w = x.shape
    xg = x.reshape(groups, -1)
    mean = xg.mean(axis=1, keepdims=True)
    var = ((xg - mean) ** 2).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * rstd).reshape(c, h, w).astype(x.dtype, copy=False)
    y = xhat * gamma[:, None, None] + beta[:, None, None]
    return y, xhat, rstd.ravel().astype(x.dtype, copy=False)


def np_group_norm_backward(dy, xhat, rstd, gamma, groups):
    c, h, w = dy.shape
    dgamma = (dy * xhat).sum(axis=(1, 2))
    dbeta = dy.sum(axis=(1, 2))
    dxhat = (dy * gamma[:, None, None]).reshape(groups, -1)
    xh = xhat.reshape(groups, -1)
    m = dxhat.shape[1]
    s1 = dxhat.sum(axis=1, keepdims=True)
    s2 = (dxhat * xh).sum(axis=1, keepdims=True)
    dx = (rstd[:, None] / m) * (m * dxhat - s1 - xh * s2)
    return dx.reshape(c, h, w).astype(dy.dtype, copy=False), dgamma, dbeta


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def nb_im2col(xpad, k, stride, row0, row1, wo):
        cin = xpad.shape[0]
        nrow = row1 - row0
        cols = np.empty((cin * k * k, nrow * wo), dtype=xpad.dtype)
        for c in range(cin):
            for di in range(k):
                for dj in range(k):
                    r = (c * k + di) * k + dj
                    for i in range(nrow):
                        src = (row0 + i) * stride + di
                        base = i * wo
                        for j in range(wo):
                            cols[r, base + j] = xpad[c, src, j * stride + dj]
        return cols

    @njit(cache=True)
    def nb_col2im(cols, cin, hp, wp, k, stride, ho, wo):
        out = np.zeros((cin, hp, wp), dtype=cols.dtype)
        for c in range(cin):
            for di in range(k):
                for dj in range(k):
                    r = (c * k + di) * k + dj
                    for i in range(ho):
                        dst = i * stride + di
                        base = i * wo
                        for j in range(wo):
                            out[c, dst, j * stride + dj] += cols[r, base + j]
        return out

    @njit(cache=True)
    def nb_upsample2x(x):
        c, h, w = x.shape
        out = np.empty((c, 2 * h, 2 * w), dtype=x.dtype)
        for ch in range(c):
            for i in range(2 * h):
                for j in range(2 * w):
                    out[ch, i, j] = x[ch, i // 2, j // 2]
        return out

    @njit(cache=True)
    def nb_upsample2x_backward(g):
        c, h2, w2 = g.shape
        out = np.zeros((c, h2 // 2, w2 // 2), dtype=g.dtype)
        for ch in range(c):
            for i in range(h2):
                for j in range(w2):
                    out[ch, i // 2, j // 2] += g[ch, i, j]
        return out

    @njit(cache=True)
    def nb_group_norm_forward(x, groups, gamma, beta, eps):
        c, h, w = x.shape
        cpg = c // groups
        m = cpg * h * w
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(groups, dtype=x.dtype)
        for g in range(groups):
            s = 0.0
            for ch in range(g * cpg, (g + 1) * cpg):
                for i in range(h):
                    for j in range(w):
                        s += x[ch, i, j]
            mean = s / m
            v = 0.0
            for ch in range(g * cpg, (g + 1) * cpg):
                for i in range(h):
                    for j in range(w):
                        d = x[ch, i, j] - mean
                        v += d * d
            r = 1.0 / np.sqrt(v / m + eps)
            rstd[g] = r
            for ch in range(g * cpg, (g + 1) * cpg):
                ga = gamma[ch]
                be = beta[ch]
                for i in range(h):
                    for j in range(w):
                        xh = (x[ch, i, j] - mean) * r
                        xhat[ch, i, j] = xh
                        y[ch, i, j] = xh * ga + be
        return y, xhat, rstd

    @njit(cache=True)
    def nb_group_norm_backward(dy, xhat, rstd, gamma, groups):
        c, h, w = dy.shape
        cpg = c // groups
        m = cpg * h * w
        dx = np.empty_like(dy)
        dgamma = np.zeros(c, dtype=dy.dtype)
        dbeta = np.zeros(c, dtype=dy.dtype)
        for g in range(groups):
            s1 = 0.0
            s2 = 0.0
            for ch in range(g * cpg, (g + 1) * cpg):
                ga = gamma[ch]
                sg = 0.0
                sb = 0.0
                for i in range(h):
                    for j in range(w):
                        d = dy[ch, i, j]
                        xh = xhat[ch, i, j]
                        sg += d * xh
                        sb += d
                        s1 += d * ga
                        s2 += d * ga * xh
                dgamma[ch] = sg
                dbeta[ch] = sb
            scale = rstd[g] / m
            for ch in range(g * cpg, (g + 1) * cpg):
                ga = gamma[ch]
                for i in range(h):
                    for j in range(w):
                        dx[ch, i, j] = scale * (m * dy[ch, i, j] * ga - s1
                                                - xhat[ch, i, j] * s2)
        return dx, dgamma, dbeta


if USE_NUMBA:
    im2col = nb_im2col
    col2im = nb_col2im
    upsample2x = nb_upsample2x
    upsample2x_backward = nb_upsample2x_backward
    group_norm_forward = nb_group_norm_forward
    group_norm_backward = nb_group_norm_backward
else:
    im2col = np_im2col
    col2im = np_col2im
    upsample2x = np_upsample2x
    upsample2x_backward = np_upsample2x_backward
    group_norm_forward = np_group_norm_forward
    group_norm_backward = np_group_norm_backward
