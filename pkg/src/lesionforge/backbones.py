"""Frozen surrogate feature extractors with three distinct architectural signatures.

Each kind is a small seeded network emitting 64 channels at 1/16 spatial
resolution (128×128 input -> 64×8×8):

  S-MOBILE — depthwise-separable downsampling stack with linear bottlenecks
             (the expansion-1 inverted-residual pattern; no activation after
             pointwise projections).
  S-VGG    — plain stacked 3×3 convolutions with max pooling.
  S-INCEPT — parallel 3×3 and 5×5 branches concatenated per stage.

All parameters are frozen at construction; the same (kind, seed) always
yields identical weights. Pooled features travel through feature-table files
(header `id,<width>`, rows `sample_id,f0,...`).
"""

import numpy as np

from . import nn
from .util import stable_seed

KINDS = ("S-MOBILE", "S-VGG", "S-INCEPT")
KIND_SEED_OFFSET = {"S-MOBILE": 1001, "S-VGG": 2003, "S-INCEPT": 3001}
FEATURE_CHANNELS = 64
MIN_INPUT = 16


def _s_mobile(seed, in_ch, dtype):
    s = seed
    return nn.Sequential([
        nn.Conv2d(in_ch, 16, 3, stride=2, name="mob.stem", seed=s, dtype=dtype),
        nn.ReLU(),
        nn.DepthwiseConv2d(16, 3, stride=2, name="mob.dw1", seed=s, dtype=dtype),
        nn.ReLU(),
        nn.Conv2d(16, 32, 1, name="mob.proj1", seed=s, dtype=dtype),  # linear bottleneck
        nn.DepthwiseConv2d(32, 3, stride=2, name="mob.dw2", seed=s, dtype=dtype),
        nn.ReLU(),
        nn.Conv2d(32, 64, 1, name="mob.proj2", seed=s, dtype=dtype),  # linear bottleneck
        nn.DepthwiseConv2d(64, 3, stride=2, name="mob.dw3", seed=s, dtype=dtype),
        nn.ReLU(),
    ])


def _s_vgg(seed, in_ch, dtype):
    s = seed
    return nn.Sequential([
        nn.Conv2d(in_ch, 16, 3, name="vgg.c1", seed=s, dtype=dtype), nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Conv2d(16, 32, 3, name="vgg.c2", seed=s, dtype=dtype), nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Conv2d(32, 48, 3, name="vgg.c3", seed=s, dtype=dtype), nn.ReLU(),
        nn.Conv2d(48, 48, 3, name="vgg.c4", seed=s, dtype=dtype), nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Conv2d(48, 64, 3, name="vgg.c5", seed=s, dtype=dtype), nn.ReLU(),
        nn.Conv2d(64, 64, 3, name="vgg.c6", seed=s, dtype=dtype), nn.ReLU(),
        nn.MaxPool2d(2),
    ])


def _s_incept(seed, in_ch, dtype):
    s = seed
    block_a = nn.ParallelConcat([
        nn.Sequential([nn.Conv2d(16, 16, 3, stride=2, name="inc.a3", seed=s, dtype=dtype),
                       nn.ReLU()]),
        nn.Sequential([nn.Conv2d(16, 16, 5, stride=2, name="inc.a5", seed=s, dtype=dtype),
                       nn.ReLU()]),
    ])
    block_b = nn.ParallelConcat([
        nn.Sequential([nn.Conv2d(32, 32, 3, stride=2, name="inc.b3", seed=s, dtype=dtype),
                       nn.ReLU()]),
        nn.Sequential([nn.Conv2d(32, 32, 5, stride=2, name="inc.b5", seed=s, dtype=dtype),
                       nn.ReLU()]),
    ])
    return nn.Sequential([
        nn.Conv2d(in_ch, 16, 3, stride=2, name="inc.stem", seed=s, dtype=dtype),
        nn.ReLU(),
        nn.MaxPool2d(2),
        block_a,
        block_b,
    ])


_BUILDERS = {"S-MOBILE": _s_mobile, "S-VGG": _s_vgg, "S-INCEPT": _s_incept}


def build_backbone(kind: str, seed: int, in_channels: int = 3,
                   dtype=np.float32) -> nn.Sequential:
    """Construct a frozen surrogate of the given kind with deterministic weights."""
    if kind not in KINDS:
        raise ValueError(f"unknown backbone kind {kind!r}; expected one of {KINDS}")
    net = _BUILDERS[kind](stable_seed(seed, kind, KIND_SEED_OFFSET[kind]),
                          in_channels, dtype)
    for p in net.params():
        p.frozen = True
    return net


def extract_features(net: nn.Sequential, img: np.ndarray) -> np.ndarray:
    """Forward an H×W×C image in [0,1] through a backbone; returns C_f×h×w."""
    h, w = img.shape[0], img.shape[1]
    if h < MIN_INPUT or w < MIN_INPUT:
        raise ValueError(f"input {h}x{w} below architecture minimum "
                         f"{MIN_INPUT}x{MIN_INPUT}")
    dtype = net.params()[0].value.dtype
    x = np.ascontiguousarray(img.transpose(2, 0, 1)[None], dtype=dtype)
    return net.forward(x)[0]


def pooled_features(net: nn.Sequential, img: np.ndarray) -> np.ndarray:
    """Global-average-pooled feature vector for one image."""
    fm = extract_features(net, img)
    return fm.mean(axis=(1, 2))


# ---------------------------------------------------------------------------
# feature tables (bridge for externally computed features)
# ---------------------------------------------------------------------------

def write_feature_table(path, ids, features: np.ndarray):
    """Write pooled features as `id,<width>` header plus one row per sample."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or len(ids) != features.shape[0]:
        raise ValueError(f"need one id per row, got {len(ids)} ids for "
                         f"shape {features.shape}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"id,{features.shape[1]}\n")
        for sid, row in zip(ids, features):
            if "," in sid:
                raise ValueError(f"sample id may not contain commas: {sid!r}")
            fh.write(sid + "," + ",".join(repr(float(v)) for v in row) + "\n")


def read_feature_table(path):
    """Read a feature table; returns (ids, N×W array). Validates row widths."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if len(header) != 2 or header[0] != "id":
            raise ValueError(f"{path}: expected 'id,<width>' header, got {header}")
        try:
            width = int(header[1])
        except ValueError:
            raise ValueError(f"{path}: non-integer width {header[1]!r}") from None
        ids, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != width + 1:
                raise ValueError(f"{path}:{lineno}: expected {width} features, "
                                 f"got {len(fields) - 1}")
            ids.append(fields[0])
            rows.append([float(v) for v in fields[1:]])
    if not ids:
        raise ValueError(f"{path}: empty feature table")
    return ids, np.asarray(rows, dtype=np.float64)


def export_features(net, samples, read_fn, path):
    """Extract pooled features for (id, image-path) pairs and write a table."""
    ids = [sid for sid, _ in samples]
    feats = np.stack([pooled_features(net, read_fn(p)) for _, p in samples])
    write_feature_table(path, ids, feats)
    return ids, feats


def validate_coverage(ids, required_ids, path="feature table"):
    """Every required sample id must be present in the table."""
    have = set(ids)
    missing = [sid for sid in required_ids if sid not in have]
    if missing:
        preview = ", ".join(missing[:5])
        raise ValueError(f"{path}: missing {len(missing)} sample ids "
                         f"(first few: {preview})")
