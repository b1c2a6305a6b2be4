"""Softmax heads over frozen backbone features, with soft-voting inference.

Two modes: FUSION trains a single dense+softmax head on the concatenated
pooled features; SOFT_VOTE trains one head per backbone and averages their
probability vectors with configurable model weights.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .util import rng_for

MODES = ("FUSION", "SOFT_VOTE")
BACKBONE_ORDER = ("S-MOBILE", "S-VGG", "S-INCEPT")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.lr <= 0:
            raise ValueError(f"invalid training config: {self}")


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray                      # K-vector summing to 1
    label: int                             # lowest index attaining the max
    per_model_probs: tuple = ()            # SOFT_VOTE only
    model_weights: tuple = ()


def pool_and_concat(f1: np.ndarray, f2: np.ndarray, f3: np.ndarray) -> np.ndarray:
    """GAP three C×H×W feature maps and concatenate in fixed backbone order."""
    for fm in (f1, f2, f3):
        if fm is None:
            raise ValueError("all three feature maps must be present")
    return np.concatenate([np.asarray(fm).mean(axis=(1, 2)) for fm in (f1, f2, f3)])


class SoftmaxHead:
    """Dense layer + softmax over pooled feature vectors."""

    def __init__(self, in_features: int, n_classes: int,
                 name: str = "head", seed: int = 0, dtype=np.float32):
        self.dense = nn.Dense(in_features, n_classes, name=name, seed=seed, dtype=dtype)
        self.softmax = nn.Softmax()
        self.n_classes = n_classes

    def params(self):
        return self.dense.params()

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.softmax.forward(self.dense.forward(x))

    def backward(self, dprobs: np.ndarray) -> np.ndarray:
        return self.dense.backward(self.softmax.backward(dprobs))

    def probs(self, x: np.ndarray) -> np.ndarray:
        dtype = self.dense.w.value.dtype
        return self.forward(np.asarray(x, dtype=dtype)).astype(np.float64)


def train_head(features: np.ndarray, labels, class_weights=None,
               cfg: TrainConfig = TrainConfig(), name: str = "head",
               val: tuple = None) -> tuple:
    """Train one dense+softmax head with weighted cross-entropy and Adam.

    features: N×F pooled vectors; labels: N ints. Returns (head, history)
    where history maps 'train_loss'/'val_loss' to per-epoch values.
    Deterministic given (features, labels, cfg).
    """
    features = np.asarray(features)
    labels = np.asarray(labels)
    n, f = features.shape
    distinct = np.unique(labels)
    if distinct.size < 2:
        raise ValueError("degenerate single-class training set")
    k = int(labels.max()) + 1 if class_weights is None else len(class_weights)
    k = max(k, int(distinct.max()) + 1)
    if distinct.size < k:
        warnings.warn(f"{name}: only {distinct.size} of {k} classes present in training data")

    head = SoftmaxHead(f, k, name=name, seed=cfg.seed)
    dtype = head.dense.w.value.dtype
    xs = features.astype(dtype)
    opt = nn.Adam(head.params(), lr=cfg.lr)
    history = {"train_loss": [], "val_loss": []}
    for epoch in range(cfg.epochs):
        order = rng_for(cfg.seed, "head-epoch", name, epoch).permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            probs = head.forward(xs[idx])
            loss, dprobs = nn.weighted_cross_entropy(probs, labels[idx], class_weights)
            opt.zero_grad()
            head.backward(dprobs.astype(dtype))
            opt.step()
            losses.append(loss)
        history["train_loss"].append(float(np.mean(losses)))
        if val is not None:
            vx, vy = val
            vloss, _ = nn.weighted_cross_entropy(head.probs(vx), vy, class_weights)
            history["val_loss"].append(float(vloss))
    return head, history


def uniform_weights(n: int = 3) -> tuple:
    return tuple([1.0 / n] * n)


def soft_vote(per_model_probs, weights=None) -> Prediction:
    """Weighted average of per-model probability vectors for one sample.

    Ties in the argmax break to the lowest class index.
    """
    vecs = [np.asarray(p, dtype=np.float64) for p in per_model_probs]
    k = vecs[0].shape[0]
    for v in vecs:
        if v.shape != (k,):
            raise ValueError(f"probability vector length mismatch: {v.shape} vs ({k},)")
        if abs(v.sum() - 1.0) > 1e-6:
            raise ValueError(f"probabilities must sum to 1, got {v.sum()!r}")
    if weights is None:
        weights = uniform_weights(len(vecs))
    weights = tuple(float(w) for w in weights)
    if len(weights) != len(vecs):
        raise ValueError(f"{len(weights)} weights for {len(vecs)} models")
    if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-6:
        raise ValueError(f"model weights must be nonnegative and sum to 1: {weights}")
    avg = np.zeros(k)
    for w, v in zip(weights, vecs):
        avg += w * v
    return Prediction(probs=avg, label=int(np.argmax(avg)),
                      per_model_probs=tuple(vecs), model_weights=weights)


def soft_vote_batch(per_model_probs, weights=None) -> np.ndarray:
    """Weighted average over a list of N×K probability arrays."""
    mats = [np.asarray(p, dtype=np.float64) for p in per_model_probs]
    if weights is None:
        weights = uniform_weights(len(mats))
    out = np.zeros_like(mats[0])
    for w, m in zip(weights, mats):
        out += w * m
    return out
