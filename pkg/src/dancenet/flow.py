"""Dense optical flow from local polynomial expansion.

Each frame is approximated around every pixel by a quadratic
f(u) ~ u^T A u + b^T u + c fitted by Gaussian-weighted least squares over a
clamped window; displacement follows from how the linear coefficients shift
between the two frames, solved per pixel over the same applicability window,
iterated coarse-to-fine over an image pyramid.

Also provides the 3-channel flow-image encoding, the training-split flow
mean image, and Middlebury-compatible .flo file I/O.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

FLO_MAGIC = 202021.25  # spells "PIEH" when read as ascii float bytes

# two-sided affine encoding for dx/dy, one-sided for magnitude
GRAY_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class FlowParams:
    pyramid_levels: int = 3
    pyramid_scale: float = 0.5
    window_radius: int = 7
    iterations: int = 3
    poly_sigma: float = 1.5
    regularization: float = 1e-6

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError(f"pyramid_levels must be >= 1, got {self.pyramid_levels}")
        if not 0.0 < self.pyramid_scale < 1.0:
            raise ValueError(f"pyramid_scale must be in (0,1), got {self.pyramid_scale}")
        if self.window_radius < 2:
            raise ValueError(f"window_radius must be >= 2, got {self.window_radius}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.poly_sigma <= 0:
            raise ValueError(f"poly_sigma must be > 0, got {self.poly_sigma}")

    def min_side(self):
        """Smallest image side the coarsest pyramid level still supports."""
        need = 2 * self.window_radius + 1
        return int(np.ceil(need / self.pyramid_scale ** (self.pyramid_levels - 1)))

    def max_levels_for(self, height, width):
        """Largest level count whose top level keeps 2r+1 pixels per side."""
        need = 2 * self.window_radius + 1
        levels = 1
        side = min(height, width)
        while levels < self.pyramid_levels and side * self.pyramid_scale ** levels >= need:
            levels += 1
        return levels


@dataclass
class FlowField:
    dx: np.ndarray  # horizontal displacement, pixels per frame pair
    dy: np.ndarray  # vertical displacement

    def __post_init__(self):
        if self.dx.shape != self.dy.shape or self.dx.ndim != 2:
            raise ValueError(f"dx/dy shape mismatch: {self.dx.shape} vs {self.dy.shape}")
        if not (np.isfinite(self.dx).all() and np.isfinite(self.dy).all()):
            raise ValueError("flow field contains non-finite values")

    @property
    def height(self):
        return self.dx.shape[0]

    @property
    def width(self):
        return self.dx.shape[1]

    def magnitude(self):
        return np.hypot(self.dx, self.dy)


def grayscale(image):
    """Luminance conversion (0.299 R + 0.587 G + 0.114 B) to float64."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        r, g, b = GRAY_WEIGHTS
        return r * arr[..., 0] + g * arr[..., 1] + b * arr[..., 2]
    raise ValueError(f"expected HxW or HxWx3 image, got shape {arr.shape}")


# ---------------------------------------------------------------------------
# separable correlation helpers (edge-clamped borders)
# ---------------------------------------------------------------------------

def _correlate1d(img, kernel, axis):
    r = (len(kernel) - 1) // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (r, r)
    padded = np.pad(img, pad, mode="edge")
    out = np.zeros_like(img, dtype=np.float64)
    for i, k in enumerate(kernel):
        if k == 0.0:
            continue
        sl = [slice(None)] * img.ndim
        sl[axis] = slice(i, i + img.shape[axis])
        out += k * padded[tuple(sl)]
    return out


def _gaussian(radius, sigma):
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return t, g / g.sum()


def _smooth(img, kernel):
    return _correlate1d(_correlate1d(img, kernel, 0), kernel, 1)


# ---------------------------------------------------------------------------
# polynomial expansion
# ---------------------------------------------------------------------------

def polynomial_expansion(image, params: FlowParams):
    """Per-pixel quadratic fit: returns (A [H,W,2,2], b [H,W,2], c [H,W]).

    Basis (1, x, y, x^2, y^2, xy) in window coordinates, x horizontal.  The
    normal-equations matrix is identical for every pixel, so one 6x6 inverse
    and six separable correlations cover the whole image.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a grayscale HxW image, got shape {img.shape}")
    r = params.window_radius
    if img.shape[0] < 2 * r + 1 or img.shape[1] < 2 * r + 1:
        raise ValueError(
            f"image {img.shape} too small for window radius {r} (needs {2 * r + 1} per side)")
    t, g = _gaussian(r, params.poly_sigma)
    gt = g * t
    gt2 = g * t * t

    # moments: correlate with the y-part along axis 0, the x-part along axis 1
    def mom(ky, kx):
        return _correlate1d(_correlate1d(img, ky, 0), kx, 1)

    v = np.stack([
        mom(g, g),     # 1
        mom(g, gt),    # x
        mom(gt, g),    # y
        mom(g, gt2),   # x^2
        mom(gt2, g),   # y^2
        mom(gt, gt),   # xy
    ], axis=-1)

    xs, ys = np.meshgrid(t, t)  # window coordinate grids
    w2d = np.outer(g, g)
    basis = np.stack([np.ones_like(xs), xs, ys, xs * xs, ys * ys, xs * ys], axis=-1)
    gram = np.einsum("hw,hwi,hwj->ij", w2d, basis, basis)
    coeffs = v @ np.linalg.inv(gram).T

    c = coeffs[..., 0]
    b = coeffs[..., 1:3].copy()
    a = np.empty(img.shape + (2, 2), dtype=np.float64)
    a[..., 0, 0] = coeffs[..., 3]
    a[..., 1, 1] = coeffs[..., 4]
    a[..., 0, 1] = coeffs[..., 5] / 2.0
    a[..., 1, 0] = coeffs[..., 5] / 2.0
    return a, b, c


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _bilinear_sample(values, xs, ys):
    """Sample values [H,W,K] at float coords (xs, ys), edge-clamped."""
    h, w = values.shape[:2]
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    v00 = values[y0, x0]
    v01 = values[y0, x1]
    v10 = values[y1, x0]
    v11 = values[y1, x1]
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    return top * (1 - fy) + bot * fy


def resize_bilinear(img, out_h, out_w):
    """Bilinear resize of [H,W] or [H,W,K]; constant images stay constant."""
    arr = np.asarray(img, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[..., None]
    h, w = arr.shape[:2]
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    xg, yg = np.meshgrid(xs, ys)
    out = _bilinear_sample(arr, xg, yg)
    return out[..., 0] if squeeze else out


def _downsample(img, scale):
    h, w = img.shape
    out_h = max(1, int(round(h * scale)))
    out_w = max(1, int(round(w * scale)))
    # light anti-alias blur before subsampling
    sigma = 0.5 * np.sqrt(max(1.0 / scale ** 2 - 1.0, 1e-6))
    radius = max(1, int(np.ceil(2 * sigma)))
    _, g = _gaussian(radius, sigma)
    return resize_bilinear(_smooth(img, g), out_h, out_w)


# ---------------------------------------------------------------------------
# displacement estimation
# ---------------------------------------------------------------------------

def estimate_flow(frame_a, frame_b, params: FlowParams | None = None) -> FlowField:
    """Coarse-to-fine dense flow such that frame_a(p) ~ frame_b(p + d(p))."""
    params = params or FlowParams()
    f1 = grayscale(frame_a)
    f2 = grayscale(frame_b)
    if f1.shape != f2.shape:
        raise ValueError(f"frame dimension mismatch: {f1.shape} vs {f2.shape}")
    need = 2 * params.window_radius + 1
    h, w = f1.shape
    if min(h, w) < need:
        raise ValueError(f"image {f1.shape} too small for window radius {params.window_radius}")
    top = min(h, w) * params.pyramid_scale ** (params.pyramid_levels - 1)
    if top < need:
        raise ValueError(
            f"top pyramid level ({top:.1f} px) smaller than window ({need} px); "
            f"reduce pyramid_levels or window_radius")

    pyr1, pyr2 = [f1], [f2]
    for _ in range(params.pyramid_levels - 1):
        pyr1.append(_downsample(pyr1[-1], params.pyramid_scale))
        pyr2.append(_downsample(pyr2[-1], params.pyramid_scale))

    _, g = _gaussian(params.window_radius, params.poly_sigma)
    eps = params.regularization
    dx = dy = None
    for level in range(params.pyramid_levels - 1, -1, -1):
        a1, b1, _ = polynomial_expansion(pyr1[level], params)
        a2, b2, _ = polynomial_expansion(pyr2[level], params)
        lh, lw = pyr1[level].shape
        if dx is None:
            dx = np.zeros((lh, lw))
            dy = np.zeros((lh, lw))
        else:
            sy = lh / dx.shape[0]
            sx = lw / dx.shape[1]
            dx = resize_bilinear(dx, lh, lw) * sx
            dy = resize_bilinear(dy, lh, lw) * sy
        # pack frame-b coefficients for one warped gather per iteration
        packed2 = np.concatenate([a2.reshape(lh, lw, 4), b2], axis=-1)
        xg, yg = np.meshgrid(np.arange(lw, dtype=np.float64),
                             np.arange(lh, dtype=np.float64))
        for _ in range(params.iterations):
            warped = _bilinear_sample(packed2, xg + dx, yg + dy)
            a_avg = 0.5 * (a1 + warped[..., :4].reshape(lh, lw, 2, 2))
            db = -0.5 * (warped[..., 4:] - b1)
            d_prior = np.stack([dx, dy], axis=-1)
            db = db + np.einsum("hwij,hwj->hwi", a_avg, d_prior)
            # per-pixel normal equations, smoothed over the applicability window
            ata = np.einsum("hwki,hwkj->hwij", a_avg, a_avg)
            atb = np.einsum("hwki,hwk->hwi", a_avg, db)
            g11 = _smooth(ata[..., 0, 0], g) + eps
            g12 = _smooth(ata[..., 0, 1], g)
            g22 = _smooth(ata[..., 1, 1], g) + eps
            h1 = _smooth(atb[..., 0], g)
            h2 = _smooth(atb[..., 1], g)
            det = g11 * g22 - g12 * g12
            dx = (g22 * h1 - g12 * h2) / det
            dy = (g11 * h2 - g12 * h1) / det
    return FlowField(dx.astype(np.float32), dy.astype(np.float32))


# ---------------------------------------------------------------------------
# flow-image encoding
# ---------------------------------------------------------------------------

def flow_to_image(flow: FlowField, max_mag: float = 8.0) -> np.ndarray:
    """Encode flow as uint8 [H,W,3]: dx, dy mapped from [-m,m] to [0,255],
    magnitude from [0,m], all clamped."""
    if max_mag <= 0:
        raise ValueError(f"max_mag must be positive, got {max_mag}")
    m = float(max_mag)
    ch0 = np.clip((flow.dx.astype(np.float64) + m) / (2 * m), 0.0, 1.0) * 255.0
    ch1 = np.clip((flow.dy.astype(np.float64) + m) / (2 * m), 0.0, 1.0) * 255.0
    ch2 = np.clip(flow.magnitude().astype(np.float64) / m, 0.0, 1.0) * 255.0
    return np.stack([np.round(ch0), np.round(ch1), np.round(ch2)], axis=-1).astype(np.uint8)


def image_to_flow(image: np.ndarray, max_mag: float = 8.0) -> FlowField:
    """Decode flow_to_image output back to displacements (quantized)."""
    m = float(max_mag)
    arr = np.asarray(image, dtype=np.float64)
    dx = arr[..., 0] / 255.0 * 2 * m - m
    dy = arr[..., 1] / 255.0 * 2 * m - m
    return FlowField(dx.astype(np.float32), dy.astype(np.float32))


def compute_flow_mean_image(images) -> np.ndarray:
    """Per-pixel, per-channel float64 mean over a stream of [H,W,3] images."""
    total = None
    count = 0
    for img in images:
        arr = np.asarray(img, dtype=np.float64)
        if total is None:
            total = np.zeros_like(arr)
        elif arr.shape != total.shape:
            raise ValueError(f"flow image shape mismatch: {arr.shape} vs {total.shape}")
        total += arr
        count += 1
    if count == 0:
        raise ValueError("cannot average an empty stream of flow images")
    return total / count


# ---------------------------------------------------------------------------
# Middlebury .flo I/O
# ---------------------------------------------------------------------------

def write_flo(flow: FlowField, path) -> None:
    h, w = flow.dx.shape
    interleaved = np.empty((h, w, 2), dtype="<f4")
    interleaved[..., 0] = flow.dx
    interleaved[..., 1] = flow.dy
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", w, h))
        f.write(interleaved.tobytes(order="C"))


def read_flo(path) -> FlowField:
    with open(path, "rb") as f:
        buf = f.read()
    (magic,) = struct.unpack_from("<f", buf, 0)
    if abs(magic - FLO_MAGIC) > 1e-3:
        raise ValueError(f"bad .flo magic {magic!r} in {path}")
    w, h = struct.unpack_from("<ii", buf, 4)
    data = np.frombuffer(buf, dtype="<f4", count=2 * w * h, offset=12).reshape(h, w, 2)
    return FlowField(data[..., 0].copy(), data[..., 1].copy())
