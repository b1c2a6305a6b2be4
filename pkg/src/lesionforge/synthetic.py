"""Synthetic desk-scale datasets: blob/stripe/speckle textures and noisy ellipses.

The texture triple gives three classes separable by spatial structure rather
than color, so pooled backbone features (not mean intensity) must carry the
signal. The ellipse pairs drive segmentation experiments with exact masks.
"""

from pathlib import Path

import numpy as np

from .imgio import write_image, write_mask
from .util import rng_for

TEXTURE_CLASSES = ("blob", "stripes", "speckle")


def _tint(rng):
    return 1.0 + 0.08 * rng.uniform(-1.0, 1.0, size=3)


def blob_image(rng, size: int) -> np.ndarray:
    """One bright round blob on a mid-gray field."""
    img = 0.35 + 0.05 * rng.standard_normal((size, size, 3))
    cy, cx = rng.uniform(0.3 * size, 0.7 * size, size=2)
    r = rng.uniform(0.16, 0.28) * size
    yy, xx = np.mgrid[:size, :size]
    bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * r * r))
    img += 0.45 * bump[:, :, None] * _tint(rng)
    return np.clip(img, 0.0, 1.0)


def stripe_image(rng, size: int) -> np.ndarray:
    """Sinusoidal stripes, mildly tilted; narrow orientation range keeps the
    class compact under orientation-selective features."""
    theta = rng.uniform(0, np.pi / 4)
    freq = rng.uniform(2.5, 4.0)
    phase = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[:size, :size]
    wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) / size + phase)
    img = 0.5 + 0.3 * wave[:, :, None] * _tint(rng)
    img += 0.03 * rng.standard_normal((size, size, 3))
    return np.clip(img, 0.0, 1.0)


def speckle_image(rng, size: int) -> np.ndarray:
    """Coarse binary speckle blocks around mid-gray.

    Blocks of 3-4 px keep the texture visible after the default
    blur+median preprocessing chain.
    """
    block = int(rng.integers(3, 5))
    coarse = rng.random((size // block + 1, size // block + 1))
    field = np.where(np.kron(coarse, np.ones((block, block)))[:size, :size] > 0.5, 1.0, -1.0)
    img = 0.5 + 0.3 * field[:, :, None] * _tint(rng)
    img += 0.05 * rng.standard_normal((size, size, 3))
    return np.clip(img, 0.0, 1.0)


_TEXTURES = (blob_image, stripe_image, speckle_image)


def write_texture_dataset(root, n_per_class: int = 300, size: int = 32,
                          seed: int = 0) -> Path:
    """Write a 3-class texture dataset and its manifest; returns the manifest path."""
    root = Path(root)
    img_dir = root / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    lines = ["# labels: " + ",".join(TEXTURE_CLASSES), "path,label"]
    for cid, (cls, gen) in enumerate(zip(TEXTURE_CLASSES, _TEXTURES)):
        for i in range(n_per_class):
            img = gen(rng_for(seed, "texture", cid, i), size)
            name = f"{cls}_{i:04d}.png"
            write_image(img_dir / name, img)
            lines.append(f"images/{name},{cls}")
    manifest = root / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def ellipse_pair(rng, size: int):
    """(image, mask): a bright noisy ellipse on a dark noisy background."""
    cy, cx = rng.uniform(0.35 * size, 0.65 * size, size=2)
    ry, rx = rng.uniform(0.15 * size, 0.3 * size, size=2)
    angle = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    ca, sa = np.cos(angle), np.sin(angle)
    u = (xx - cx) * ca + (yy - cy) * sa
    v = -(xx - cx) * sa + (yy - cy) * ca
    mask = ((u / rx) ** 2 + (v / ry) ** 2 <= 1.0).astype(np.float64)
    img = 0.25 + 0.06 * rng.standard_normal((size, size, 3))
    img += mask[:, :, None] * (0.5 + 0.04 * rng.standard_normal((size, size, 3)))
    return np.clip(img, 0.0, 1.0), mask


def make_ellipse_pairs(n: int, size: int = 32, seed: int = 0) -> list:
    return [ellipse_pair(rng_for(seed, "ellipse", i), size) for i in range(n)]


def write_ellipse_dataset(root, n: int = 40, size: int = 32, seed: int = 0) -> Path:
    """Write ellipse images + masks and a manifest with a mask column.

    Alternating binary labels keep the manifest valid for the classifier
    stages even though segmentation only consumes the mask column.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    lines = ["# labels: small,large", "path,label,split,mask"]
    for i, (img, mask) in enumerate(make_ellipse_pairs(n, size, seed)):
        label = "large" if mask.sum() >= size * size * 0.12 else "small"
        split = "train" if i < int(0.8 * n) else "val"
        write_image(root / "images" / f"e{i:03d}.png", img)
        write_mask(root / "masks" / f"e{i:03d}.pgm", mask)
        lines.append(f"images/e{i:03d}.png,{label},{split},masks/e{i:03d}.pgm")
    manifest = root / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def render_filter_panels(out_dir, img: np.ndarray = None, seed: int = 0) -> list:
    """Write per-filter output panels (original + four filters) as PNGs.

    Returns the written paths; mirrors the side-by-side filter comparison
    figures used to inspect preprocessing quality.
    """
    from .imageops import (gaussian_blur, hist_equalize, median_filter,
                           sobel_magnitude)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if img is None:
        img = lesion_like_image(seed=seed)
    panels = {
        "original": img,
        "gaussian": gaussian_blur(img, 1.0, 5),
        "median": median_filter(img, 3),
        "sobel": sobel_magnitude(img),
        "hist_eq": hist_equalize(img),
    }
    written = []
    for name, panel in panels.items():
        path = out_dir / f"panel_{name}.png"
        write_image(path, panel)
        written.append(path)
    return written


def lesion_like_image(size: int = 96, seed: int = 0) -> np.ndarray:
    """A dermoscopy-flavored sample: skin-toned field, dark blob, speckle noise."""
    rng = rng_for(seed, "lesion-like")
    img = np.empty((size, size, 3))
    img[:, :, 0] = 0.80
    img[:, :, 1] = 0.62
    img[:, :, 2] = 0.55
    img += 0.04 * rng.standard_normal((size, size, 3))
    cy, cx = size * 0.52, size * 0.48
    yy, xx = np.mgrid[:size, :size]
    r = size * 0.24
    wobble = 1.0 + 0.18 * np.sin(5.0 * np.arctan2(yy - cy, xx - cx) + rng.uniform(0, 6.0))
    inside = ((yy - cy) ** 2 + (xx - cx) ** 2) <= (r * wobble) ** 2
    depth = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    img -= inside[:, :, None] * (0.35 + 0.25 * depth[:, :, None]) * np.array([0.9, 1.0, 0.8])
    salt = rng.random((size, size)) < 0.01
    img[salt] = 1.0
    return np.clip(img, 0.0, 1.0)
