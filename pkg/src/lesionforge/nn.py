"""Minimal reverse-mode layer vocabulary on numpy arrays.

A fixed set of layers with hand-written backward passes, plus losses, Adam,
finite-difference gradient checking and binary parameter serialization.
There is no general autodiff graph: networks are small compositions of these
layers wired explicitly, which keeps every gradient auditable.

Conventions: activations are N,C,H,W; dense inputs are N,F; parameters are
float32 for training and float64 for gradient checks.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .util import rng_for


class Parameter:
    """A named value with a gradient buffer and a frozen flag.

    Frozen parameters are never touched by the optimizer; they stay
    bit-identical for the lifetime of the network.
    """

    __slots__ = ("name", "value", "grad", "frozen")

    def __init__(self, name: str, value: np.ndarray, frozen: bool = False):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.frozen = frozen

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.value.shape}, frozen={self.frozen})"


def he_uniform(shape, fan_in: int, name: str, seed: int, dtype=np.float32) -> np.ndarray:
    """Seeded He-uniform init, deterministic per (name, seed)."""
    limit = np.sqrt(6.0 / fan_in)
    rng = rng_for(seed, "init", name)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Layer:
    def params(self) -> list:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _pair(pad: str, size: int, k: int, stride: int):
    """Padding (before, after) for one spatial axis."""
    if pad == "valid":
        return 0, 0
    if pad == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + k - size, 0)
        return total // 2, total - total // 2
    raise ValueError(f"pad must be 'same' or 'valid', got {pad!r}")


def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Strided k×k view of padded NCHW input: N,C,OH,OW,k,k."""
    w = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    return w[:, :, ::stride, ::stride]


class Conv2d(Layer):
    """Cross-correlation with O×C×k×k kernels and per-output bias."""

    def __init__(self, in_channels, out_channels, ksize, stride=1, pad="same",
                 name="conv", seed=0, dtype=np.float32):
        fan_in = in_channels * ksize * ksize
        self.w = Parameter(f"{name}.w",
                           he_uniform((out_channels, in_channels, ksize, ksize),
                                      fan_in, f"{name}.w", seed, dtype))
        self.b = Parameter(f"{name}.b", np.zeros(out_channels, dtype=dtype))
        self.stride = stride
        self.pad = pad
        self.ksize = ksize
        self._cache = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x):
        o, c, k, _ = self.w.value.shape
        if x.ndim != 4 or x.shape[1] != c:
            raise ValueError(f"{self.w.name}: expected N,{c},H,W input, got {x.shape}")
        p0, p1 = _pair(self.pad, x.shape[2], k, self.stride)
        q0, q1 = _pair(self.pad, x.shape[3], k, self.stride)
        xp = np.pad(x, ((0, 0), (0, 0), (p0, p1), (q0, q1)))
        win = _windows(xp, k, self.stride)
        n, _, oh, ow = win.shape[0], win.shape[1], win.shape[2], win.shape[3]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)
        w2 = self.w.value.reshape(o, -1)
        out = cols @ w2.T + self.b.value
        self._cache = (cols, xp.shape, (p0, q0), x.shape, (n, oh, ow))
        return out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)

    def backward(self, grad):
        cols, xp_shape, (p0, q0), x_shape, (n, oh, ow) = self._cache
        o, c, k, _ = self.w.value.shape
        g2 = grad.transpose(0, 2, 3, 1).reshape(n * oh * ow, o)
        self.w.grad += (g2.T @ cols).reshape(self.w.value.shape)
        self.b.grad += g2.sum(axis=0)
        dcols = (g2 @ self.w.value.reshape(o, -1)).reshape(n, oh, ow, c, k, k)
        dcols = dcols.transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros(xp_shape, dtype=grad.dtype)
        s = self.stride
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + oh * s:s, j:j + ow * s:s] += dcols[:, :, :, :, i, j]
        h, w_ = x_shape[2], x_shape[3]
        return dxp[:, :, p0:p0 + h, q0:q0 + w_]


class DepthwiseConv2d(Layer):
    """One k×k filter per input channel; no cross-channel mixing, C_out = C_in."""

    def __init__(self, channels, ksize, stride=1, pad="same",
                 name="dwconv", seed=0, dtype=np.float32):
        fan_in = ksize * ksize
        self.w = Parameter(f"{name}.w",
                           he_uniform((channels, ksize, ksize), fan_in,
                                      f"{name}.w", seed, dtype))
        self.b = Parameter(f"{name}.b", np.zeros(channels, dtype=dtype))
        self.stride = stride
        self.pad = pad
        self._cache = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x):
        c, k, _ = self.w.value.shape
        if x.ndim != 4 or x.shape[1] != c:
            raise ValueError(f"{self.w.name}: expected N,{c},H,W input, got {x.shape}")
        p0, p1 = _pair(self.pad, x.shape[2], k, self.stride)
        q0, q1 = _pair(self.pad, x.shape[3], k, self.stride)
        xp = np.pad(x, ((0, 0), (0, 0), (p0, p1), (q0, q1)))
        win = _windows(xp, k, self.stride)
        out = np.einsum("nchwij,cij->nchw", win, self.w.value, optimize=True)
        out += self.b.value[None, :, None, None]
        self._cache = (win, xp.shape, (p0, q0), x.shape)
        return out

    def backward(self, grad):
        win, xp_shape, (p0, q0), x_shape = self._cache
        c, k, _ = self.w.value.shape
        self.w.grad += np.einsum("nchwij,nchw->cij", win, grad, optimize=True)
        self.b.grad += grad.sum(axis=(0, 2, 3))
        n, _, oh, ow = grad.shape
        dxp = np.zeros(xp_shape, dtype=grad.dtype)
        s = self.stride
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + oh * s:s, j:j + ow * s:s] += \
                    grad * self.w.value[None, :, i, j, None, None]
        h, w_ = x_shape[2], x_shape[3]
        return dxp[:, :, p0:p0 + h, q0:q0 + w_]


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)


class Sigmoid(Layer):
    def forward(self, x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self._out = out
        return out

    def backward(self, grad):
        return grad * self._out * (1.0 - self._out)


class MaxPool2d(Layer):
    """Window max; the gradient routes entirely to the argmax position."""

    def __init__(self, ksize, stride=None):
        self.ksize = ksize
        self.stride = stride or ksize

    def forward(self, x):
        k, s = self.ksize, self.stride
        if k > x.shape[2] or k > x.shape[3]:
            raise ValueError(f"pool window {k} larger than input {x.shape[2:]}")
        win = _windows(x, k, s)
        n, c, oh, ow = win.shape[:4]
        flat = win.reshape(n, c, oh, ow, k * k)
        self._argmax = flat.argmax(axis=-1)
        self._x_shape = x.shape
        return np.take_along_axis(flat, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        k, s = self.ksize, self.stride
        n, c, oh, ow = grad.shape
        dx = np.zeros(self._x_shape, dtype=grad.dtype)
        ni, ci, hi, wi = np.ogrid[:n, :c, :oh, :ow]
        rows = hi * s + self._argmax // k
        cols = wi * s + self._argmax % k
        np.add.at(dx, (np.broadcast_to(ni, grad.shape),
                       np.broadcast_to(ci, grad.shape), rows, cols), grad)
        return dx


class GlobalAvgPool(Layer):
    """N,C,H,W -> N,C spatial mean per channel."""

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self._shape
        return np.broadcast_to(grad[:, :, None, None], self._shape) / (h * w)


class UpsampleNearest2x(Layer):
    def forward(self, x):
        return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)

    def backward(self, grad):
        n, c, h, w = grad.shape
        return grad.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class Dense(Layer):
    def __init__(self, in_features, out_features, name="dense", seed=0, dtype=np.float32):
        self.w = Parameter(f"{name}.w",
                           he_uniform((in_features, out_features), in_features,
                                      f"{name}.w", seed, dtype))
        self.b = Parameter(f"{name}.b", np.zeros(out_features, dtype=dtype))

    def params(self):
        return [self.w, self.b]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.w.value.shape[0]:
            raise ValueError(f"{self.w.name}: expected N,{self.w.value.shape[0]} "
                             f"input, got {x.shape}")
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, grad):
        self.w.grad += self._x.T @ grad
        self.b.grad += grad.sum(axis=0)
        return grad @ self.w.value.T


class Softmax(Layer):
    """Row-wise softmax, max-subtracted for stability."""

    def forward(self, x):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        self._p = e / e.sum(axis=1, keepdims=True)
        return self._p

    def backward(self, grad):
        p = self._p
        return p * (grad - (grad * p).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Functional softmax over rows of an N,K array."""
    return Softmax().forward(np.asarray(logits, dtype=np.float64))


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


class ParallelConcat(Layer):
    """Run branches on the same input and concatenate outputs along channels."""

    def __init__(self, branches):
        self.branches = list(branches)

    def params(self):
        out = []
        for b in self.branches:
            out.extend(b.params())
        return out

    def forward(self, x):
        outs = [b.forward(x) for b in self.branches]
        self._splits = np.cumsum([o.shape[1] for o in outs])[:-1]
        return np.concatenate(outs, axis=1)

    def backward(self, grad):
        parts = np.split(grad, self._splits, axis=1)
        dx = None
        for b, g in zip(self.branches, parts):
            d = b.backward(g)
            dx = d if dx is None else dx + d
        return dx


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

LOG_CLAMP = 1e-12


def weighted_cross_entropy(probs: np.ndarray, labels, class_weights=None):
    """Class-weighted categorical cross-entropy over probability rows.

    L = mean_i w[y_i] * (-log p_i[y_i]), with the log argument clamped at
    1e-12. Returns (loss, dL/dprobs); the gradient is zero where the clamp
    is active, consistent with the clamped loss value.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    n, k = probs.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match {n} rows")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0,{k}), got range "
                         f"[{labels.min()},{labels.max()}]")
    w = np.ones(k, dtype=probs.dtype) if class_weights is None \
        else np.asarray(class_weights, dtype=probs.dtype)
    picked = probs[np.arange(n), labels]
    clamped = np.maximum(picked, LOG_CLAMP)
    loss = float(np.mean(w[labels] * -np.log(clamped)))
    dprobs = np.zeros_like(probs)
    live = picked >= LOG_CLAMP
    dprobs[np.arange(n), labels] = np.where(live, -w[labels] / (n * clamped), 0.0)
    return loss, dprobs


def dice_bce_loss(pred: np.ndarray, target: np.ndarray, smooth=1.0, bce_weight=0.5):
    """Blend of binary cross-entropy and soft-Dice overlap loss.

    loss = bce_weight * BCE + (1 - bce_weight) * (1 - (2*sum(p*g)+s)/(sum(p)+sum(g)+s))
    Returns (loss, dL/dpred). Inputs are probability maps in [0,1] of equal shape.
    """
    if pred.shape != target.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {target.shape}")
    eps = 1e-7
    p = np.clip(pred, eps, 1.0 - eps)
    size = pred.size
    bce = float(np.mean(-(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))))
    inter = float((pred * target).sum())
    sp, sg = float(pred.sum()), float(target.sum())
    dice_term = 1.0 - (2.0 * inter + smooth) / (sp + sg + smooth)
    loss = bce_weight * bce + (1.0 - bce_weight) * dice_term

    live = (pred > eps) & (pred < 1.0 - eps)
    dbce = np.where(live, (-(target / p) + (1.0 - target) / (1.0 - p)) / size, 0.0)
    denom = sp + sg + smooth
    ddice = -(2.0 * target * denom - (2.0 * inter + smooth)) / denom ** 2
    dpred = bce_weight * dbce + (1.0 - bce_weight) * ddice
    return loss, dpred.astype(pred.dtype)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, param: Parameter) -> "AdamState":
        return cls(m=np.zeros_like(param.value), v=np.zeros_like(param.value))


def adam_step(param: Parameter, state: AdamState, lr=0.001,
              beta1=0.9, beta2=0.999, eps=1e-8):
    """One textbook Adam update with bias correction, in place."""
    if param.frozen:
        raise ValueError(f"adam_step on frozen parameter {param.name}")
    g = param.grad
    if not np.all(np.isfinite(g)):
        bad = int(np.count_nonzero(~np.isfinite(g)))
        raise FloatingPointError(
            f"non-finite gradient in {param.name}: {bad}/{g.size} entries")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    param.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Optimizer loop over a parameter list; frozen parameters are skipped."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.states = {id(p): AdamState.like(p) for p in self.params}

    def step(self):
        for p in self.params:
            if p.frozen:
                continue
            adam_step(p, self.states[id(p)], self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    name: str
    tolerance: float
    max_rel_err: float = 0.0
    per_tensor: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def _relative_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return np.abs(analytic - numeric) / denom


def grad_check(name, loss_fn, tensors, analytic, tolerance,
               h=1e-5, max_coords=None, seed=0) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    loss_fn() recomputes the scalar loss from the current contents of
    `tensors` (dict name -> float64 array, perturbed in place). `analytic`
    maps the same names to precomputed gradients. When max_coords is set,
    a seeded random subset of coordinates per tensor is checked, which keeps
    composed-network checks fast.
    """
    report = GradCheckReport(name=name, tolerance=tolerance)
    for tname, x in tensors.items():
        if x.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 tensors, {tname} is {x.dtype}")
        flat = x.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng_for(seed, "gradcheck", name, tname).choice(
                flat.size, size=max_coords, replace=False)
        num = np.zeros(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn()
            flat[i] = orig - h
            fm = loss_fn()
            flat[i] = orig
            num[j] = (fp - fm) / (2.0 * h)
        ana = analytic[tname].reshape(-1)[idx]
        err = float(_relative_error(ana, num).max()) if idx.size else 0.0
        report.per_tensor[tname] = err
        report.max_rel_err = max(report.max_rel_err, err)
    return report


# ---------------------------------------------------------------------------
# parameter serialization
# ---------------------------------------------------------------------------

MAGIC = b"LFW1"


def save_parameters(path, params):
    """Write named tensors as versioned little-endian binary (magic LFW1)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            value = np.ascontiguousarray(p.value, dtype="<f4")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<I", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(value.tobytes())


def load_parameters(path) -> dict:
    """Read an LFW1 file back into {name: float32 array}."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(dims)
            out[name] = data.astype(np.float32)
        return out


def load_into(params, path):
    """Restore parameter values by name; shapes must match exactly."""
    table = load_parameters(path)
    for p in params:
        if p.name not in table:
            raise KeyError(f"{path}: missing tensor {p.name!r}")
        stored = table[p.name]
        if stored.shape != p.value.shape:
            raise ValueError(f"{p.name}: stored shape {stored.shape} != {p.value.shape}")
        p.value[...] = stored.astype(p.value.dtype)
