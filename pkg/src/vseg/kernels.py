"""Hot inner loops, each in a numba version and a pure-numpy version.

The public names at the bottom of this module dispatch to the numba variant
unless ``VSEG_DISABLE_NUMBA`` is set (see :mod:`vseg._accel`). Both variants
are always importable so they can be cross-checked and benchmarked.

Layouts: feature maps are ``(B, C, H, W)``; im2col output is one row per
output pixel, ``(B*H*W, C*9)``, with column index ``c*9 + dy*3 + dx`` so
that a convolution is a single tall matrix product with the weights.
"""
import numpy as np

from ._accel import njit, numba_enabled, prange


# ---------------------------------------------------------------- numpy path

def im2col3x3_np(xp):
    """Unfold a zero-padded batch ``(B, C, H+2, W+2)`` into ``(B*H*W, C*9)`` rows."""
    B, C, Hp, Wp = xp.shape
    H, W = Hp - 2, Wp - 2
    rows = np.empty((B, H, W, C, 3, 3), dtype=xp.dtype)
    for dy in range(3):
        for dx in range(3):
            rows[..., dy, dx] = xp[:, :, dy:dy + H, dx:dx + W].transpose(0, 2, 3, 1)
    return rows.reshape(B * H * W, C * 9)


def col2im3x3_np(grows, B, H, W):
    """Adjoint of :func:`im2col3x3_np`, cropped back to the unpadded ``(B, C, H, W)``."""
    C = grows.shape[1] // 9
    g = grows.reshape(B, H, W, C, 3, 3)
    gp = np.zeros((B, C, H + 2, W + 2), dtype=grows.dtype)
    for dy in range(3):
        for dx in range(3):
            gp[:, :, dy:dy + H, dx:dx + W] += g[..., dy, dx].transpose(0, 3, 1, 2)
    return np.ascontiguousarray(gp[:, :, 1:H + 1, 1:W + 1])


def maxpool2x2_forward_np(x):
    B, C, H, W = x.shape
    h, w = H // 2, W // 2
    win = x.reshape(B, C, h, 2, w, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, h, w, 4)
    # np.argmax returns the first occurrence: ties go to the first element in row-major order
    arg = np.argmax(win, axis=-1).astype(np.int8)
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, arg


def maxpool2x2_backward_np(grad_out, arg):
    B, C, h, w = grad_out.shape
    g = np.zeros((B, C, h, w, 4), dtype=grad_out.dtype)
    np.put_along_axis(g, arg[..., None].astype(np.intp), grad_out[..., None], axis=-1)
    return g.reshape(B, C, h, w, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * h, 2 * w)


def _axis_weights(n, centers):
    """Lower/upper tile index and upper weight for every coordinate 0..n-1."""
    pos = np.arange(n, dtype=np.float64)
    t = len(centers)
    hi = np.searchsorted(centers, pos, side="right")
    lo = np.clip(hi - 1, 0, t - 1)
    hi = np.clip(hi, 0, t - 1)
    span = centers[hi] - centers[lo]
    wt = np.where(span > 0, (pos - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
    return lo, hi, wt


def clahe_interpolate_np(img, luts, cy, cx):
    """Bilinear blend of the four surrounding tile mappings; returns uint8."""
    H, W = img.shape
    y0, y1, wy = _axis_weights(H, cy)
    x0, x1, wx = _axis_weights(W, cx)
    v = img.astype(np.intp)
    Y0, Y1, WY = y0[:, None], y1[:, None], wy[:, None]
    X0, X1, WX = x0[None, :], x1[None, :], wx[None, :]
    top = (1.0 - WX) * luts[Y0, X0, v] + WX * luts[Y0, X1, v]
    bot = (1.0 - WX) * luts[Y1, X0, v] + WX * luts[Y1, X1, v]
    val = (1.0 - WY) * top + WY * bot
    return np.floor(val + 0.5).astype(np.uint8)


def stitch_accumulate_np(acc, cnt, preds, oy, ox):
    """Add each ``(p, p)`` prediction into ``acc`` at its origin and bump ``cnt``."""
    p = preds.shape[1]
    for k in range(preds.shape[0]):
        y, x = oy[k], ox[k]
        acc[y:y + p, x:x + p] += preds[k]
        cnt[y:y + p, x:x + p] += 1


# ---------------------------------------------------------------- numba path

@njit(cache=True, parallel=True)
def im2col3x3_nb(xp):
    B, C, Hp, Wp = xp.shape
    H, W = Hp - 2, Wp - 2
    rows = np.empty((B * H * W, C * 9), dtype=xp.dtype)
    for by in prange(B * H):
        b = by // H
        y = by % H
        for x in range(W):
            r = by * W + x
            for c in range(C):
                for dy in range(3):
                    for dx in range(3):
                        rows[r, c * 9 + dy * 3 + dx] = xp[b, c, y + dy, x + dx]
    return rows


@njit(cache=True, parallel=True)
def col2im3x3_nb(grows, B, H, W):
    C = grows.shape[1] // 9
    gp = np.zeros((B, C, H + 2, W + 2), dtype=grows.dtype)
    # one sample per task keeps the scatter-adds race free
    for b in prange(B):
        for y in range(H):
            for x in range(W):
                r = (b * H + y) * W + x
                for c in range(C):
                    k = c * 9
                    for dy in range(3):
                        for dx in range(3):
                            gp[b, c, y + dy, x + dx] += grows[r, k + dy * 3 + dx]
    return np.ascontiguousarray(gp[:, :, 1:H + 1, 1:W + 1])


@njit(cache=True, parallel=True)
def maxpool2x2_forward_nb(x):
    B, C, H, W = x.shape
    h, w = H // 2, W // 2
    out = np.empty((B, C, h, w), dtype=x.dtype)
    arg = np.empty((B, C, h, w), dtype=np.int8)
    for bc in prange(B * C):
        b = bc // C
        c = bc % C
        for i in range(h):
            for j in range(w):
                best = x[b, c, 2 * i, 2 * j]
                k = 0
                for q in range(1, 4):
                    v = x[b, c, 2 * i + q // 2, 2 * j + q % 2]
                    if v > best:
                        best = v
                        k = q
                out[b, c, i, j] = best
                arg[b, c, i, j] = k
    return out, arg


@njit(cache=True, parallel=True)
def maxpool2x2_backward_nb(grad_out, arg):
    B, C, h, w = grad_out.shape
    g = np.zeros((B, C, 2 * h, 2 * w), dtype=grad_out.dtype)
    for bc in prange(B * C):
        b = bc // C
        c = bc % C
        for i in range(h):
            for j in range(w):
                q = arg[b, c, i, j]
                g[b, c, 2 * i + q // 2, 2 * j + q % 2] = grad_out[b, c, i, j]
    return g


@njit(cache=True)
def _axis_weights_nb(n, centers):
    t = centers.shape[0]
    lo = np.empty(n, dtype=np.int64)
    hi = np.empty(n, dtype=np.int64)
    wt = np.zeros(n, dtype=np.float64)
    i = 0
    for p in range(n):
        while i < t and centers[i] <= p:
            i += 1
        a = min(max(i - 1, 0), t - 1)
        b = min(i, t - 1)
        lo[p] = a
        hi[p] = b
        span = centers[b] - centers[a]
        if span > 0:
            wt[p] = (p - centers[a]) / span
    return lo, hi, wt


@njit(cache=True, parallel=True)
def clahe_interpolate_nb(img, luts, cy, cx):
    H, W = img.shape
    y0, y1, wy = _axis_weights_nb(H, cy)
    x0, x1, wx = _axis_weights_nb(W, cx)
    out = np.empty((H, W), dtype=np.uint8)
    for y in prange(H):
        a, b, fy = y0[y], y1[y], wy[y]
        for x in range(W):
            c, d, fx = x0[x], x1[x], wx[x]
            v = img[y, x]
            top = (1.0 - fx) * luts[a, c, v] + fx * luts[a, d, v]
            bot = (1.0 - fx) * luts[b, c, v] + fx * luts[b, d, v]
            out[y, x] = np.uint8(np.floor((1.0 - fy) * top + fy * bot + 0.5))
    return out


@njit(cache=True)
def stitch_accumulate_nb(acc, cnt, preds, oy, ox):
    P, p, _ = preds.shape
    for k in range(P):
        y0 = oy[k]
        x0 = ox[k]
        for i in range(p):
            for j in range(p):
                acc[y0 + i, x0 + j] += preds[k, i, j]
                cnt[y0 + i, x0 + j] += 1


# ---------------------------------------------------------------- dispatch

if numba_enabled():
    BACKEND = "numba"
    im2col3x3 = im2col3x3_nb
    col2im3x3 = col2im3x3_nb
    maxpool2x2_forward = maxpool2x2_forward_nb
    maxpool2x2_backward = maxpool2x2_backward_nb
    clahe_interpolate = clahe_interpolate_nb
    stitch_accumulate = stitch_accumulate_nb
else:
    BACKEND = "numpy"
    im2col3x3 = im2col3x3_np
    col2im3x3 = col2im3x3_np
    maxpool2x2_forward = maxpool2x2_forward_np
    maxpool2x2_backward = maxpool2x2_backward_np
    clahe_interpolate = clahe_interpolate_np
    stitch_accumulate = stitch_accumulate_np
