"""Dual-encoder lesion segmentation at desk scale.

Two parallel convolutional encoders of different depth see the same input;
their bottleneck features are fused by channel concatenation and decoded by
nearest-upsample + convolution blocks into a sigmoid mask. Masks multiply or
crop the source image so classification sees the lesion, not the background.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import nn
from .imageops import resize_bilinear
from .util import rng_for


@dataclass(frozen=True)
class DualEncoderConfig:
    encoder_a_depth: int = 2
    encoder_b_depth: int = 3
    base_channels: int = 16

    def __post_init__(self):
        if self.encoder_b_depth <= self.encoder_a_depth:
            raise ValueError("encoder B must be deeper than encoder A")


class DualEncoderNet:
    """Parallel shallow/deep encoders, concat bottleneck, small upsampling decoder."""

    def __init__(self, cfg: DualEncoderConfig = DualEncoderConfig(),
                 seed: int = 0, in_channels: int = 3, dtype=np.float32):
        self.cfg = cfg
        base = cfg.base_channels
        pools = cfg.encoder_a_depth  # both encoders end at the same scale
        self.scale = 2 ** pools

        def enc_block(tag, i, c_in, c_out, pool):
            layers = [nn.Conv2d(c_in, c_out, 3, name=f"{tag}.c{i}", seed=seed, dtype=dtype),
                      nn.ReLU()]
            if pool:
                layers.append(nn.MaxPool2d(2))
            return layers

        chans_a = [base * 2 ** i for i in range(cfg.encoder_a_depth)]
        layers_a, c_prev = [], in_channels
        for i, c in enumerate(chans_a):
            layers_a += enc_block("enc_a", i, c_prev, c, pool=True)
            c_prev = c
        self.enc_a = nn.Sequential(layers_a)
        width_a = c_prev

        layers_b, c_prev = [], in_channels
        for i in range(cfg.encoder_b_depth):
            c = chans_a[min(i, len(chans_a) - 1)]
            layers_b += enc_block("enc_b", i, c_prev, c, pool=i < pools)
            c_prev = c
        # 1x1 projection keeps encoder B's fused width equal to encoder A's
        layers_b.append(nn.Conv2d(c_prev, width_a, 1, name="enc_b.match",
                                  seed=seed, dtype=dtype))
        self.enc_b = nn.Sequential(layers_b)

        fused = 2 * width_a
        dec = []
        c_prev = fused
        for i in range(pools):
            c = max(fused // 2 ** (i + 1), base)
            dec += [nn.UpsampleNearest2x(),
                    nn.Conv2d(c_prev, c, 3, name=f"dec.c{i}", seed=seed, dtype=dtype),
                    nn.ReLU()]
            c_prev = c
        dec.append(nn.Conv2d(c_prev, 1, 1, name="dec.out", seed=seed, dtype=dtype))
        dec.append(nn.Sigmoid())
        self.decoder = nn.Sequential(dec)

    def params(self):
        return self.enc_a.params() + self.enc_b.params() + self.decoder.params()

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[2] % self.scale or x.shape[3] % self.scale:
            raise ValueError(f"spatial dims {x.shape[2:]} must be multiples of {self.scale}")
        if x.shape[2] < 2 * self.scale or x.shape[3] < 2 * self.scale:
            raise ValueError(f"input {x.shape[2:]} too small for {self.scale}x downsampling")
        a = self.enc_a.forward(x)
        b = self.enc_b.forward(x)
        self._split = a.shape[1]
        z = np.concatenate([a, b], axis=1)
        return self.decoder.forward(z)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        dz = self.decoder.backward(grad)
        da, db = dz[:, :self._split], dz[:, self._split:]
        return self.enc_a.backward(da) + self.enc_b.backward(db)


def train_segmenter(net: DualEncoderNet, pairs, epochs: int, lr: float = 0.001,
                    batch_size: int = 8, seed: int = 0):
    """Adam on the Dice+BCE loss; returns per-epoch mean loss history.

    pairs is a list of (H×W×C image, H×W binary mask) in [0,1]. Deterministic
    given (pairs, seed, epochs); zero epochs leaves the network unchanged.
    """
    if not pairs:
        raise ValueError("need at least one training pair")
    dtype = net.params()[0].value.dtype
    xs = np.stack([img.transpose(2, 0, 1) for img, _ in pairs]).astype(dtype)
    ys = np.stack([np.asarray(m, dtype=dtype)[None] for _, m in pairs])
    opt = nn.Adam(net.params(), lr=lr)
    history = []
    n = len(pairs)
    for epoch in range(epochs):
        order = rng_for(seed, "seg-epoch", epoch).permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            pred = net.forward(xs[idx])
            loss, dpred = nn.dice_bce_loss(pred, ys[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite segmentation loss at epoch {epoch}")
            opt.zero_grad()
            net.backward(dpred.astype(dtype))
            opt.step()
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def predict_mask(net: DualEncoderNet, img: np.ndarray) -> np.ndarray:
    """Sigmoid mask in [0,1] with the input's spatial dims (H×W)."""
    dtype = net.params()[0].value.dtype
    x = np.ascontiguousarray(img.transpose(2, 0, 1)[None], dtype=dtype)
    return net.forward(x)[0, 0].astype(np.float64)


def binarize_mask(mask: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a soft mask to exactly {0,1}; ties go to 1."""
    return (np.asarray(mask) >= threshold).astype(np.float64)


def dice_coefficient(pred: np.ndarray, target: np.ndarray) -> float:
    """Overlap 2|P∩G| / (|P|+|G|) between binary masks; 1.0 when both empty."""
    p = binarize_mask(pred)
    g = binarize_mask(target)
    denom = p.sum() + g.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * (p * g).sum() / denom)


CROP_PAD = 8


def apply_mask(img: np.ndarray, mask: np.ndarray, mode: str = "multiply") -> np.ndarray:
    """Focus an image on the masked lesion region.

    multiply: per-pixel image*mask broadcast over channels.
    crop: tight bounding box of the binary mask padded by 8 px, resized back
    to the input dims. An empty mask in crop mode falls back to multiply and
    emits a warning.
    """
    mask = np.asarray(mask)
    if mask.ndim == 3:
        mask = mask[:, :, 0]
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask dims {mask.shape} do not match image {img.shape[:2]}")
    if mode == "multiply":
        return img * mask[:, :, None]
    if mode != "crop":
        raise ValueError(f"mode must be 'multiply' or 'crop', got {mode!r}")
    binary = binarize_mask(mask)
    ys, xs = np.nonzero(binary)
    if ys.size == 0:
        warnings.warn("empty binary mask in crop mode; falling back to multiply")
        return img * mask[:, :, None]
    h, w = img.shape[0], img.shape[1]
    y0, y1 = max(int(ys.min()) - CROP_PAD, 0), min(int(ys.max()) + CROP_PAD + 1, h)
    x0, x1 = max(int(xs.min()) - CROP_PAD, 0), min(int(xs.max()) + CROP_PAD + 1, w)
    return resize_bilinear(img[y0:y1, x0:x1], h, w)
