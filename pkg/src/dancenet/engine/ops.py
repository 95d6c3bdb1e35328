"""Differentiable operators: conv2d/conv3d, pooling, linear, relu, concat,
reshape and softmax cross-entropy.

Convolutions are valid (no padding) by default with an optional symmetric
zero-padding parameter; output extents follow floor((in + 2p - k) / stride) + 1.
Forward paths are im2col + GEMM; the naive loop versions live in the tests as
oracles.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, record, register_op


def _tuplize(v, n, name):
    if isinstance(v, (tuple, list)):
        t = tuple(int(x) for x in v)
        if len(t) != n:
            raise ValueError(f"{name} must have {n} entries, got {v!r}")
    else:
        t = (int(v),) * n
    if any(x < 0 for x in t) or (name == "stride" and any(x < 1 for x in t)):
        raise ValueError(f"invalid {name} {v!r}")
    return t


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

def _conv2d_raw(arrays, params):
    x, w, b = arrays
    sh, sw = params["stride"]
    ph, pw = params["padding"]
    N, C, H, W = x.shape
    F, _, kh, kw = w.shape
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    Ho, Wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * kh * kw)
    out = cols @ w.reshape(F, -1).T + b
    out = np.ascontiguousarray(out.reshape(N, Ho, Wo, F).transpose(0, 3, 1, 2))
    return out, {"cols": cols}


def _conv2d_backward(dout, ctx, inputs, params, needs):
    x, w, b = (t.data for t in inputs)
    sh, sw = params["stride"]
    ph, pw = params["padding"]
    N, C, H, W = x.shape
    F, _, kh, kw = w.shape
    Ho, Wo = dout.shape[2], dout.shape[3]
    do = dout.transpose(0, 2, 3, 1).reshape(-1, F)
    dx = dw = db = None
    if needs[1]:
        dw = (do.T @ ctx["cols"]).reshape(w.shape)
    if needs[2]:
        db = do.sum(axis=0)
    if needs[0]:
        dcols = (do @ w.reshape(F, -1)).reshape(N, Ho, Wo, C, kh, kw)
        dcols = dcols.transpose(0, 3, 4, 5, 1, 2)
        dxp = np.zeros((N, C, H + 2 * ph, W + 2 * pw), dtype=dout.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw] += dcols[:, :, i, j]
        dx = dxp[:, :, ph:ph + H, pw:pw + W] if (ph or pw) else dxp
    return dx, dw, db


def conv2d(x, w, b, stride=1, padding=0):
    """Valid 2D convolution of x[N,C,H,W] with kernel w[F,C,kh,kw] plus bias b[F]."""
    stride = _tuplize(stride, 2, "stride")
    padding = _tuplize(padding, 2, "padding")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input/kernel, got {x.shape} and {w.shape}")
    N, C, H, W = x.shape
    F, Cw, kh, kw = w.shape
    if C != Cw:
        raise ValueError(f"conv2d channel mismatch: input {tuple(x.shape)} vs kernel {tuple(w.shape)}")
    if kh > H + 2 * padding[0] or kw > W + 2 * padding[1]:
        raise ValueError(f"conv2d kernel {tuple(w.shape)} larger than padded input {tuple(x.shape)}")
    if b.shape != (F,):
        raise ValueError(f"conv2d bias shape {tuple(b.shape)} does not match {F} filters")
    params = {"stride": stride, "padding": padding}
    out, ctx = _conv2d_raw([x.data, w.data, b.data], params)
    return record("conv2d", [x, w, b], params, out, ctx, _conv2d_backward)


# ---------------------------------------------------------------------------
# conv3d
# ---------------------------------------------------------------------------

def _conv3d_raw(arrays, params):
    x, w, b = arrays
    st, sh, sw = params["stride"]
    pt, ph, pw = params["padding"]
    N, C, T, H, W = x.shape
    F, _, kt, kh, kw = w.shape
    if pt or ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    win = sliding_window_view(x, (kt, kh, kw), axis=(2, 3, 4))[:, :, ::st, ::sh, ::sw]
    To, Ho, Wo = win.shape[2], win.shape[3], win.shape[4]
    cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(N * To * Ho * Wo, C * kt * kh * kw)
    out = cols @ w.reshape(F, -1).T + b
    out = np.ascontiguousarray(out.reshape(N, To, Ho, Wo, F).transpose(0, 4, 1, 2, 3))
    return out, {"cols": cols}


def _conv3d_backward(dout, ctx, inputs, params, needs):
    x, w, b = (t.data for t in inputs)
    st, sh, sw = params["stride"]
    pt, ph, pw = params["padding"]
    N, C, T, H, W = x.shape
    F, _, kt, kh, kw = w.shape
    To, Ho, Wo = dout.shape[2], dout.shape[3], dout.shape[4]
    do = dout.transpose(0, 2, 3, 4, 1).reshape(-1, F)
    dx = dw = db = None
    if needs[1]:
        dw = (do.T @ ctx["cols"]).reshape(w.shape)
    if needs[2]:
        db = do.sum(axis=0)
    if needs[0]:
        dcols = (do @ w.reshape(F, -1)).reshape(N, To, Ho, Wo, C, kt, kh, kw)
        dcols = dcols.transpose(0, 4, 5, 6, 7, 1, 2, 3)
        dxp = np.zeros((N, C, T + 2 * pt, H + 2 * ph, W + 2 * pw), dtype=dout.dtype)
        for it in range(kt):
            for ih in range(kh):
                for iw in range(kw):
                    dxp[:, :, it:it + st * To:st, ih:ih + sh * Ho:sh, iw:iw + sw * Wo:sw] += \
                        dcols[:, :, it, ih, iw]
        dx = dxp[:, :, pt:pt + T, ph:ph + H, pw:pw + W] if (pt or ph or pw) else dxp
    return dx, dw, db


def conv3d(x, w, b, stride=1, padding=0):
    """Valid 3D convolution of x[N,C,T,H,W] with kernel w[F,C,kt,kh,kw] plus bias b[F]."""
    stride = _tuplize(stride, 3, "stride")
    padding = _tuplize(padding, 3, "padding")
    if x.data.ndim != 5 or w.data.ndim != 5:
        raise ValueError(f"conv3d expects 5-d input/kernel, got {x.shape} and {w.shape}")
    N, C, T, H, W = x.shape
    F, Cw, kt, kh, kw = w.shape
    if C != Cw:
        raise ValueError(f"conv3d channel mismatch: input {tuple(x.shape)} vs kernel {tuple(w.shape)}")
    if kt > T + 2 * padding[0] or kh > H + 2 * padding[1] or kw > W + 2 * padding[2]:
        raise ValueError(f"conv3d kernel {tuple(w.shape)} larger than padded input {tuple(x.shape)}")
    if b.shape != (F,):
        raise ValueError(f"conv3d bias shape {tuple(b.shape)} does not match {F} filters")
    params = {"stride": stride, "padding": padding}
    out, ctx = _conv3d_raw([x.data, w.data, b.data], params)
    return record("conv3d", [x, w, b], params, out, ctx, _conv3d_backward)


# ---------------------------------------------------------------------------
# max pooling
# ---------------------------------------------------------------------------

def _maxpool_raw(arrays, params):
    (x,) = arrays
    dims = params["dims"]
    window = params["window"]
    stride = params["stride"]
    axes = tuple(range(x.ndim - dims, x.ndim))
    win = sliding_window_view(x, window, axis=axes)
    slicer = (Ellipsis,) + tuple(slice(None, None, s) for s in stride) + (slice(None),) * dims
    win = win[slicer]
    out_spatial = win.shape[x.ndim - dims:x.ndim]
    flat = win.reshape(win.shape[:x.ndim] + (-1,))
    arg = flat.argmax(axis=-1)
    out = flat.max(axis=-1)
    return np.ascontiguousarray(out), {"arg": arg, "out_spatial": out_spatial}


def _maxpool_backward(dout, ctx, inputs, params, needs):
    if not needs[0]:
        return (None,)
    x = inputs[0].data
    dims = params["dims"]
    window = params["window"]
    stride = params["stride"]
    arg = ctx["arg"]
    spatial = x.shape[x.ndim - dims:]
    lead = int(np.prod(x.shape[:x.ndim - dims], dtype=np.int64))
    # window-local coordinates of each argmax
    local = []
    rem = arg
    for k in range(dims - 1, -1, -1):
        local.insert(0, rem % window[k])
        rem = rem // window[k]
    # absolute flat index into the pooled axes
    flat_idx = np.zeros_like(arg)
    for k in range(dims):
        starts = np.arange(arg.shape[arg.ndim - dims + k]) * stride[k]
        shape = [1] * arg.ndim
        shape[arg.ndim - dims + k] = -1
        coord = local[k] + starts.reshape(shape)
        flat_idx = flat_idx * spatial[k] + coord
    dx = np.zeros((lead, int(np.prod(spatial, dtype=np.int64))), dtype=dout.dtype)
    rows = np.arange(lead)[:, None]
    np.add.at(dx, (rows, flat_idx.reshape(lead, -1)), dout.reshape(lead, -1))
    return (dx.reshape(x.shape),)


def maxpool(x, window, stride, dims=2):
    """Max pooling over the trailing `dims` axes; argmax indices are cached."""
    if dims not in (2, 3):
        raise ValueError(f"maxpool dims must be 2 or 3, got {dims}")
    window = _tuplize(window, dims, "window")
    stride = _tuplize(stride, dims, "stride")
    if any(wi < 1 for wi in window):
        raise ValueError(f"invalid window {window}")
    if x.data.ndim < dims + 1:
        raise ValueError(f"maxpool needs at least {dims + 1}-d input, got shape {tuple(x.shape)}")
    spatial = x.shape[x.data.ndim - dims:]
    for wi, ext in zip(window, spatial):
        if wi > ext:
            raise ValueError(f"pool window {window} larger than input extent {tuple(spatial)}")
    params = {"window": window, "stride": stride, "dims": dims}
    out, ctx = _maxpool_raw([x.data], params)
    return record("maxpool", [x], params, out, ctx, _maxpool_backward)


# ---------------------------------------------------------------------------
# linear / relu / concat / reshape
# ---------------------------------------------------------------------------

def _linear_raw(arrays, params):
    x, w, b = arrays
    return x @ w + b, {}


def _linear_backward(dout, ctx, inputs, params, needs):
    x, w, b = (t.data for t in inputs)
    dx = dout @ w.T if needs[0] else None
    dw = x.T @ dout if needs[1] else None
    db = dout.sum(axis=0) if needs[2] else None
    return dx, dw, db


def linear(x, w, b):
    """x[N,D] @ w[D,K] + b[K]."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ValueError(f"linear expects 2-d input/weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"linear dimension mismatch: input {tuple(x.shape)} vs weight {tuple(w.shape)}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"linear bias shape {tuple(b.shape)} does not match weight {tuple(w.shape)}")
    out, ctx = _linear_raw([x.data, w.data, b.data], {})
    return record("linear", [x, w, b], {}, out, ctx, _linear_backward)


def _relu_raw(arrays, params):
    (x,) = arrays
    return np.maximum(x, 0), {"mask": x > 0}


def _relu_backward(dout, ctx, inputs, params, needs):
    if not needs[0]:
        return (None,)
    return (dout * ctx["mask"],)


def relu(x):
    """Elementwise max(0, x)."""
    out, ctx = _relu_raw([x.data], {})
    return record("relu", [x], {}, out, ctx, _relu_backward)


def _concat_raw(arrays, params):
    return np.concatenate(arrays, axis=1), {}


def _concat_backward(dout, ctx, inputs, params, needs):
    widths = [t.shape[1] for t in inputs]
    splits = np.cumsum(widths)[:-1]
    pieces = np.split(dout, splits, axis=1)
    return tuple(p if needed else None for p, needed in zip(pieces, needs))


def concat(tensors):
    """Feature-axis concatenation of [N,Di] tensors, in argument order."""
    if not tensors:
        raise ValueError("concat requires a nonempty list of tensors")
    n = tensors[0].shape[0]
    for t in tensors:
        if t.data.ndim != 2:
            raise ValueError(f"concat expects 2-d tensors, got shape {tuple(t.shape)}")
        if t.shape[0] != n:
            raise ValueError(
                f"concat batch-size mismatch: {tuple(tensors[0].shape)} vs {tuple(t.shape)}")
    out, ctx = _concat_raw([t.data for t in tensors], {})
    return record("concat", list(tensors), {}, out, ctx, _concat_backward)


def _reshape_raw(arrays, params):
    (x,) = arrays
    return x.reshape(params["shape"]).copy(), {}


def _reshape_backward(dout, ctx, inputs, params, needs):
    if not needs[0]:
        return (None,)
    return (dout.reshape(inputs[0].shape),)


def reshape(x, shape):
    """Row-major reshape; returns a new Tensor.  One entry may be -1."""
    shape = tuple(int(s) for s in shape)
    if shape.count(-1) == 1:
        known = int(np.prod([s for s in shape if s != -1], dtype=np.int64))
        if known == 0 or x.size % known:
            raise ValueError(f"cannot reshape {tuple(x.shape)} to {shape}")
        shape = tuple(x.size // known if s == -1 else s for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ValueError(f"cannot reshape {tuple(x.shape)} to {shape}")
    params = {"shape": shape}
    out, ctx = _reshape_raw([x.data], params)
    return record("reshape", [x], params, out, ctx, _reshape_backward)


# ---------------------------------------------------------------------------
# softmax cross-entropy
# ---------------------------------------------------------------------------

def _softmax_xent_raw(arrays, params):
    (z,) = arrays
    labels = params["labels"]
    n = z.shape[0]
    # reduce in float64 so ln(C) comes out exact for uniform logits
    z64 = z.astype(np.float64)
    m = z64.max(axis=1, keepdims=True)
    e = np.exp(z64 - m)
    se = e.sum(axis=1, keepdims=True)
    logp = (z64 - m) - np.log(se)
    loss = -logp[np.arange(n), labels].mean()
    return np.asarray(loss), {"probs": e / se}


def _softmax_xent_backward(dout, ctx, inputs, params, needs):
    if not needs[0]:
        return (None,)
    z = inputs[0]
    labels = params["labels"]
    n = z.shape[0]
    d = ctx["probs"].copy()
    d[np.arange(n), labels] -= 1.0
    d *= float(dout) / n
    return (d.astype(z.dtype, copy=False),)


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label], max-stabilized."""
    if logits.data.ndim != 2:
        raise ValueError(f"expected logits [N,C], got shape {tuple(logits.shape)}")
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise ValueError(f"label {bad} out of range for {c} classes")
    params = {"labels": labels}
    out, ctx = _softmax_xent_raw([logits.data], params)
    return record("softmax_xent", [logits], params, out, ctx, _softmax_xent_backward)


for _name, _fn in [
    ("conv2d", _conv2d_raw),
    ("conv3d", _conv3d_raw),
    ("maxpool", _maxpool_raw),
    ("linear", _linear_raw),
    ("relu", _relu_raw),
    ("concat", _concat_raw),
    ("reshape", _reshape_raw),
    ("softmax_xent", _softmax_xent_raw),
]:
    register_op(_name, _fn)
