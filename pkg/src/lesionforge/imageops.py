"""Image normalization, the four-filter bank, and seeded affine augmentation.

Images are H×W×C float arrays with values in [0,1], channel-interleaved,
C in {1, 3}. All border handling uses reflect padding (mirror about the edge
pixel) so lesion images never pick up dark halos.
"""

from dataclasses import dataclass

import numpy as np

LUMA = (0.299, 0.587, 0.114)
SOBEL_MAX = 4.0 * np.sqrt(2.0)


def normalize(raw) -> np.ndarray:
    """Map an 8-bit image (values in [0,255]) onto [0,1] by dividing by 255."""
    arr = np.asarray(raw, dtype=np.float64)
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError(f"8-bit input expected, got range [{arr.min()},{arr.max()}]")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def luma(img: np.ndarray) -> np.ndarray:
    """Collapse a 3-channel image to single-channel luma; pass 1-channel through."""
    if img.shape[2] == 1:
        return img[:, :, 0]
    r, g, b = img[:, :, 0], img[:, :, 1], img[:, :, 2]
    return LUMA[0] * r + LUMA[1] * g + LUMA[2] * b


def _check_ksize(ksize: int, h: int, w: int):
    if ksize % 2 == 0 or ksize < 3:
        raise ValueError(f"kernel size must be odd and >= 3, got {ksize}")
    r = ksize // 2
    if r >= h or r >= w:
        raise ValueError(f"kernel radius {r} too large for {h}x{w} image")


def gaussian_kernel1d(sigma: float, ksize: int) -> np.ndarray:
    """Normalized 1-D kernel k_i proportional to exp(-i^2 / (2 sigma^2))."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if ksize % 2 == 0 or ksize < 3:
        raise ValueError(f"kernel size must be odd and >= 3, got {ksize}")
    i = np.arange(ksize) - ksize // 2
    k = np.exp(-(i ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _conv1d_reflect(img: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (r, r)
    xp = np.pad(img, pad, mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(xp, len(kernel), axis=axis)
    return np.tensordot(win, kernel, axes=([-1], [0]))


def gaussian_blur(img: np.ndarray, sigma: float, ksize: int) -> np.ndarray:
    """Separable Gaussian smoothing with reflect borders."""
    _check_ksize(ksize, img.shape[0], img.shape[1])
    k = gaussian_kernel1d(sigma, ksize)
    out = _conv1d_reflect(img, k, axis=0)
    out = _conv1d_reflect(out, k, axis=1)
    return np.clip(out, 0.0, 1.0)


def median_filter(img: np.ndarray, ksize: int) -> np.ndarray:
    """Per-channel ksize×ksize window median with reflect borders."""
    _check_ksize(ksize, img.shape[0], img.shape[1])
    r = ksize // 2
    xp = np.pad(img, ((r, r), (r, r), (0, 0)), mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(xp, (ksize, ksize), axis=(0, 1))
    return np.median(win.reshape(*img.shape, ksize * ksize), axis=-1)


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


def _conv2d_reflect(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    r = kernel.shape[0] // 2
    xp = np.pad(plane, r, mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel.shape)
    return np.einsum("hwij,ij->hw", win, kernel)


def sobel_magnitude(img: np.ndarray) -> np.ndarray:
    """Gradient magnitude sqrt(Gx^2+Gy^2)/(4*sqrt(2)), single channel in [0,1].

    3-channel input is reduced to luma first; 4*sqrt(2) is the largest
    magnitude the 3×3 Sobel pair can produce on [0,1] inputs.
    """
    _check_ksize(3, img.shape[0], img.shape[1])
    plane = luma(img)
    gx = _conv2d_reflect(plane, SOBEL_X)
    gy = _conv2d_reflect(plane, SOBEL_Y)
    mag = np.sqrt(gx ** 2 + gy ** 2) / SOBEL_MAX
    return np.clip(mag, 0.0, 1.0)[:, :, None]


def hist_equalize(img: np.ndarray) -> np.ndarray:
    """Per-channel histogram equalization over 256 bins.

    out = round((cdf(v) - cdf_min) / (N - cdf_min) * 255) / 255; a constant
    channel is returned unchanged since the denominator degenerates to zero.
    """
    out = np.empty_like(img)
    n = img.shape[0] * img.shape[1]
    for c in range(img.shape[2]):
        plane = img[:, :, c]
        bins = np.rint(np.clip(plane, 0.0, 1.0) * 255.0).astype(np.int64)
        hist = np.bincount(bins.reshape(-1), minlength=256)
        cdf = np.cumsum(hist)
        cdf_min = cdf[hist.nonzero()[0][0]]
        if n == cdf_min:
            out[:, :, c] = plane
            continue
        lut = np.rint((cdf - cdf_min) / (n - cdf_min) * 255.0) / 255.0
        out[:, :, c] = lut[bins]
    return out


# ---------------------------------------------------------------------------
# filter chains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterStep:
    kind: str
    sigma: float = 1.0
    ksize: int = 3


DEFAULT_CHAIN = "gaussian:1.0:5,median:3,hist_eq"


def parse_filter_chain(text: str) -> list:
    """Parse 'gaussian:1.0:5,median:3,hist_eq' style chain specs."""
    steps = []
    text = text.strip()
    if not text:
        return steps
    for part in text.split(","):
        fields = part.strip().split(":")
        kind = fields[0]
        if kind == "gaussian":
            if len(fields) != 3:
                raise ValueError(f"gaussian needs sigma and ksize, got {part!r}")
            step = FilterStep("gaussian", sigma=float(fields[1]), ksize=int(fields[2]))
            if step.sigma <= 0:
                raise ValueError(f"gaussian sigma must be > 0, got {step.sigma}")
        elif kind == "median":
            if len(fields) != 2:
                raise ValueError(f"median needs ksize, got {part!r}")
            step = FilterStep("median", ksize=int(fields[1]))
        elif kind in ("sobel", "hist_eq"):
            if len(fields) != 1:
                raise ValueError(f"{kind} takes no arguments, got {part!r}")
            step = FilterStep(kind)
        else:
            raise ValueError(f"unknown filter {kind!r} in chain {text!r}")
        if step.kind in ("gaussian", "median") and (step.ksize % 2 == 0 or step.ksize < 3):
            raise ValueError(f"{kind} ksize must be odd and >= 3, got {step.ksize}")
        steps.append(step)
    return steps


def apply_filter_chain(img: np.ndarray, steps) -> np.ndarray:
    """Apply filter steps left-to-right; an empty chain is the identity."""
    for step in steps:
        if step.kind == "gaussian":
            img = gaussian_blur(img, step.sigma, step.ksize)
        elif step.kind == "median":
            img = median_filter(img, step.ksize)
        elif step.kind == "sobel":
            img = sobel_magnitude(img)
        elif step.kind == "hist_eq":
            img = hist_equalize(img)
        else:
            raise ValueError(f"unknown filter step {step.kind!r}")
    return img


# ---------------------------------------------------------------------------
# affine warps and augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineParams:
    rotation_deg: float = 0.0
    zoom: float = 1.0
    tx_frac: float = 0.0
    ty_frac: float = 0.0
    flip_h: bool = False
    flip_v: bool = False


IDENTITY = AffineParams()


def _fold_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Reflect integer indices into [0, n-1] (mirror about edge pixels)."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def _bilinear_sample(img: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    """Sample img at float coords (sy, sx) with bilinear weights and reflect fill."""
    h, w = img.shape[0], img.shape[1]
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    wy = (sy - y0)[..., None]
    wx = (sx - x0)[..., None]
    y0f, y1f = _fold_index(y0, h), _fold_index(y0 + 1, h)
    x0f, x1f = _fold_index(x0, w), _fold_index(x0 + 1, w)
    top = img[y0f, x0f] * (1.0 - wx) + img[y0f, x1f] * wx
    bot = img[y1f, x0f] * (1.0 - wx) + img[y1f, x1f] * wx
    return top * (1.0 - wy) + bot * wy


def affine_transform(img: np.ndarray, p: AffineParams) -> np.ndarray:
    """Inverse-mapped affine warp about the image center.

    Rotation, zoom (zoom > 1 magnifies, cropping borders), fractional
    translation and flips, sampled bilinearly with reflect fill. Output has
    the input's shape; identity parameters reproduce the input exactly.
    """
    if p.zoom <= 0:
        raise ValueError(f"zoom must be positive, got {p.zoom}")
    h, w = img.shape[0], img.shape[1]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ty, tx = p.ty_frac * h, p.tx_frac * w
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    u = xx - cx - tx
    v = yy - cy - ty
    if p.rotation_deg != 0.0:
        theta = np.deg2rad(p.rotation_deg)
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        u, v = cos_t * u + sin_t * v, -sin_t * u + cos_t * v
    if p.zoom != 1.0:
        u, v = u / p.zoom, v / p.zoom
    sx = cx + u
    sy = cy + v
    if p.flip_h:
        sx = (w - 1) - sx
    if p.flip_v:
        sy = (h - 1) - sy
    return np.clip(_bilinear_sample(img, sy, sx), 0.0, 1.0)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with pixel-center alignment; identity when sizes match."""
    h, w = img.shape[0], img.shape[1]
    if (h, w) == (out_h, out_w):
        return img.copy()
    sy = (np.arange(out_h, dtype=np.float64) + 0.5) * h / out_h - 0.5
    sx = (np.arange(out_w, dtype=np.float64) + 0.5) * w / out_w - 0.5
    syy, sxx = np.meshgrid(sy, sx, indexing="ij")
    return np.clip(_bilinear_sample(img, syy, sxx), 0.0, 1.0)


@dataclass(frozen=True)
class AugmentRanges:
    rotation_deg: float = 30.0
    zoom_min: float = 0.8
    zoom_max: float = 1.2
    max_shift: float = 0.1
    flip_prob: float = 0.5


def sample_affine_params(rng_seed: int, ranges: AugmentRanges) -> AffineParams:
    """Draw augmentation parameters uniformly from the configured ranges.

    The generator is keyed by rng_seed alone, so a (sample, copy) counter pair
    mapped through a stable hash gives order-independent reproducibility.
    """
    rng = np.random.default_rng(rng_seed)
    rot = rng.uniform(-ranges.rotation_deg, ranges.rotation_deg)
    zoom = rng.uniform(ranges.zoom_min, ranges.zoom_max)
    tx = rng.uniform(-ranges.max_shift, ranges.max_shift)
    ty = rng.uniform(-ranges.max_shift, ranges.max_shift)
    flip_h = bool(rng.random() < ranges.flip_prob)
    flip_v = bool(rng.random() < ranges.flip_prob)
    return AffineParams(rot, zoom, tx, ty, flip_h, flip_v)


def random_augment(img: np.ndarray, rng_seed: int,
                   ranges: AugmentRanges = AugmentRanges()) -> np.ndarray:
    """Apply a seeded random affine perturbation; same seed, same output."""
    return affine_transform(img, sample_affine_params(rng_seed, ranges))
