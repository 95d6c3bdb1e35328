"""Independent naive reference implementations used to check the engine.

Everything here is deliberately loop-based and slow: these are the oracles
the fast im2col paths are tested against, so they must not share code with
the package.
"""

import numpy as np


def conv2d_naive(x, w, b, stride=(1, 1), padding=(0, 0)):
    sh, sw = stride
    ph, pw = padding
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    ho = (h - kh) // sh + 1
    wo = (wd - kw) // sw + 1
    out = np.zeros((n, f, ho, wo), dtype=np.float64)
    for ni in range(n):
        for fi in range(f):
            for oi in range(ho):
                for oj in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += x[ni, ci, oi * sh + u, oj * sw + v] * w[fi, ci, u, v]
                    out[ni, fi, oi, oj] = acc + b[fi]
    return out


def conv3d_naive(x, w, b, stride=(1, 1, 1), padding=(0, 0, 0)):
    st, sh, sw = stride
    pt, ph, pw = padding
    if pt or ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    n, c, t, h, wd = x.shape
    f, _, kt, kh, kw = w.shape
    to = (t - kt) // st + 1
    ho = (h - kh) // sh + 1
    wo = (wd - kw) // sw + 1
    out = np.zeros((n, f, to, ho, wo), dtype=np.float64)
    for ni in range(n):
        for fi in range(f):
            for ot in range(to):
                for oi in range(ho):
                    for oj in range(wo):
                        acc = 0.0
                        for ci in range(c):
                            for q in range(kt):
                                for u in range(kh):
                                    for v in range(kw):
                                        acc += (x[ni, ci, ot * st + q, oi * sh + u, oj * sw + v]
                                                * w[fi, ci, q, u, v])
                        out[ni, fi, ot, oi, oj] = acc + b[fi]
    return out


def maxpool2d_naive(x, window=(2, 2), stride=(2, 2)):
    wh, ww = window
    sh, sw = stride
    lead = x.shape[:-2]
    h, wd = x.shape[-2:]
    ho = (h - wh) // sh + 1
    wo = (wd - ww) // sw + 1
    out = np.zeros(lead + (ho, wo), dtype=x.dtype)
    for idx in np.ndindex(*lead):
        for oi in range(ho):
            for oj in range(wo):
                out[idx + (oi, oj)] = x[idx][oi * sh:oi * sh + wh, oj * sw:oj * sw + ww].max()
    return out


def maxpool3d_naive(x, window=(2, 2, 2), stride=(2, 2, 2)):
    wt, wh, ww = window
    st, sh, sw = stride
    lead = x.shape[:-3]
    t, h, wd = x.shape[-3:]
    to = (t - wt) // st + 1
    ho = (h - wh) // sh + 1
    wo = (wd - ww) // sw + 1
    out = np.zeros(lead + (to, ho, wo), dtype=x.dtype)
    for idx in np.ndindex(*lead):
        for ot in range(to):
            for oi in range(ho):
                for oj in range(wo):
                    block = x[idx][ot * st:ot * st + wt, oi * sh:oi * sh + wh, oj * sw:oj * sw + ww]
                    out[idx + (ot, oi, oj)] = block.max()
    return out


def matmul_naive(a, b):
    n, d = a.shape
    d2, k = b.shape
    assert d == d2
    out = np.zeros((n, k), dtype=np.float64)
    for i in range(n):
        for j in range(k):
            acc = 0.0
            for m in range(d):
                acc += a[i, m] * b[m, j]
            out[i, j] = acc
    return out


def central_difference(f, arr, eps=1e-3, coords=None):
    """Central finite differences of scalar f w.r.t. arr at the given coords.

    Returns a dict {coord: derivative}.  ``coords`` defaults to every entry.
    """
    arr = arr.copy()
    if coords is None:
        coords = list(np.ndindex(*arr.shape)) if arr.ndim else [()]
    grads = {}
    for c in coords:
        old = arr[c]
        arr[c] = old + eps
        fp = f(arr)
        arr[c] = old - eps
        fm = f(arr)
        arr[c] = old
        grads[c] = (fp - fm) / (2 * eps)
    return grads


def max_rel_error(analytic, numeric_map):
    """Max relative error between analytic grads and a central-difference map."""
    worst = 0.0
    for c, num in numeric_map.items():
        an = analytic[c]
        denom = max(abs(an), abs(num), 1e-8)
        worst = max(worst, abs(an - num) / denom)
    return worst
