"""8-bit image file I/O: PNG via Pillow, binary PPM/PGM written directly.

Every written file carries a provenance note (config digest + seed) — a tEXt
chunk for PNG, a comment line for PPM/PGM — without affecting pixel data.
"""

from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL.PngImagePlugin import PngInfo

from .imageops import normalize, to_uint8

META_KEY = "lesionforge"


def read_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PPM/PGM into an H×W×C float image in [0,1]."""
    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        arr = np.asarray(im, dtype=np.uint8)
    return normalize(arr)


def write_image(path, img: np.ndarray, note: str = ""):
    """Write a [0,1] image as 8-bit PNG or binary PPM/PGM, chosen by suffix."""
    path = Path(path)
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    suffix = path.suffix.lower()
    if suffix == ".png":
        info = PngInfo()
        if note:
            info.add_text(META_KEY, note)
        PILImage.fromarray(arr).save(path, format="PNG", pnginfo=info)
    elif suffix in (".ppm", ".pgm"):
        _write_netpbm(path, arr, note)
    else:
        raise ValueError(f"unsupported image suffix {suffix!r} (use .png/.ppm/.pgm)")


def _write_netpbm(path: Path, arr: np.ndarray, note: str):
    if arr.ndim == 2:
        magic = b"P5"
        if path.suffix.lower() == ".ppm":
            arr = np.repeat(arr[:, :, None], 3, axis=2)
            magic = b"P6"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
        if path.suffix.lower() == ".pgm":
            raise ValueError("cannot write 3-channel image as PGM")
    else:
        raise ValueError(f"unsupported array shape {arr.shape} for netpbm")
    h, w = arr.shape[0], arr.shape[1]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        if note:
            fh.write(b"# " + note.encode("utf-8") + b"\n")
        fh.write(f"{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_mask(path) -> np.ndarray:
    """Read a single-channel mask (0 = background, 255 = lesion) as H×W in [0,1]."""
    with PILImage.open(path) as im:
        if im.mode != "L":
            im = im.convert("L")
        arr = np.asarray(im, dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def write_mask(path, mask: np.ndarray, note: str = ""):
    """Write an H×W mask in [0,1] as an 8-bit single-channel PGM/PNG."""
    mask = np.asarray(mask)
    if mask.ndim == 3:
        mask = mask[:, :, 0]
    write_image(path, mask[:, :, None], note=note)
