"""Naive loop-based references for the tensor ops.

Everything here is written as plainly as possible (explicit loops, one
pixel at a time) and imports only numpy, so these stay independent of the
vectorized implementations they verify.
"""

import numpy as np


def naive_conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    bsz, cin, h, wid = x.shape
    cout, cin_g, kh, kw = w.shape
    xp = np.zeros((bsz, cin, h + 2 * ph, wid + 2 * pw), dtype=np.float64)
    xp[:, :, ph:ph + h, pw:pw + wid] = x
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wid + 2 * pw - kw) // sw + 1
    out = np.zeros((bsz, cout, ho, wo), dtype=np.float64)
    out_per_group = cout // groups
    for n in range(bsz):
        for co in range(cout):
            g = co // out_per_group
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cin_g):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (xp[n, g * cin_g + ci, i * sh + u, j * sw + v]
                                        * w[co, ci, u, v])
                    out[n, co, i, j] = acc + (b[co] if b is not None else 0.0)
    return out.astype(x.dtype)


def naive_pool2d(x, kind, kernel, stride=None):
    kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
    if stride is None:
        stride = (kh, kw)
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    bsz, c, h, wid = x.shape
    ho = (h - kh) // sh + 1
    wo = (wid - kw) // sw + 1
    out = np.zeros((bsz, c, ho, wo), dtype=x.dtype)
    for n in range(bsz):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    patch = x[n, ch, i * sh:i * sh + kh, j * sw:j * sw + kw]
                    out[n, ch, i, j] = patch.mean() if kind == "avg" else patch.max()
    return out


def naive_matmul(a, b):
    if a.ndim == 2:
        n, k = a.shape
        k2, m = b.shape
        out = np.zeros((n, m), dtype=a.dtype)
        for i in range(n):
            for j in range(m):
                out[i, j] = sum(a[i, t] * b[t, j] for t in range(k))
        return out
    out = np.stack([naive_matmul(ai, bi) for ai, bi in zip(a, b)])
    return out


def naive_bilinear(x, out_hw):
    """Half-pixel-center bilinear upsampling, one output pixel at a time."""
    bsz, c, h, w = x.shape
    ho, wo = out_hw
    out = np.zeros((bsz, c, ho, wo), dtype=x.dtype)
    for i in range(ho):
        yi = max((i + 0.5) * h / ho - 0.5, 0.0)
        y0 = min(int(np.floor(yi)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = yi - y0
        for j in range(wo):
            xj = max((j + 0.5) * w / wo - 0.5, 0.0)
            x0 = min(int(np.floor(xj)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = xj - x0
            out[:, :, i, j] = ((1 - fy) * (1 - fx) * x[:, :, y0, x0]
                               + (1 - fy) * fx * x[:, :, y0, x1]
                               + fy * (1 - fx) * x[:, :, y1, x0]
                               + fy * fx * x[:, :, y1, x1])
    return out


def naive_nearest(x, factors):
    fh, fw = factors
    bsz, c, h, w = x.shape
    out = np.zeros((bsz, c, h * fh, w * fw), dtype=x.dtype)
    for i in range(h * fh):
        for j in range(w * fw):
            out[:, :, i, j] = x[:, :, i // fh, j // fw]
    return out


def naive_softmax(x, axis):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def naive_channel_shuffle(x, groups):
    """Direct index-map form: output j takes input (j % g) * (C/g) + j // g."""
    c = x.shape[1]
    cg = c // groups
    order = [(j % groups) * cg + j // groups for j in range(c)]
    return x[:, order]
