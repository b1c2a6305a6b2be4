"""Finite-difference verification suite for every differentiable operator.

Each check builds a small fragment in float64, computes analytic gradients,
and compares against central differences on 5 seeded random inputs. Composed
checks (conv stack, head, dual encoder) spot-check a seeded random subset of
coordinates to stay fast.
"""

import numpy as np

from . import ensemble as ens
from . import nn
from .segmentation import DualEncoderNet
from .util import rng_for

F64 = np.float64


def _projection_loss(layer, x, rng):
    """loss = sum(out * R) for a fixed random R exercises every output path."""
    out = layer.forward(x)
    r = rng.standard_normal(out.shape)

    def loss_fn():
        return float((layer.forward(x) * r).sum())

    for p in layer.params():
        p.zero_grad()
    layer.forward(x)
    dx = layer.backward(r)
    tensors = {"x": x}
    analytic = {"x": dx}
    for p in layer.params():
        tensors[p.name] = p.value
        analytic[p.name] = p.grad.copy()
    return loss_fn, tensors, analytic


def _layer_check(name, make_layer, shape, tol, seeds, max_coords=None,
                 distinct=False):
    worst = nn.GradCheckReport(name=name, tolerance=tol)
    for seed in seeds:
        rng = rng_for(seed, "check", name)
        x = rng.standard_normal(shape).astype(F64)
        if distinct:
            # strictly distinct values keep pooling argmax stable under FD
            x = x + np.linspace(0, 1e-3, x.size).reshape(shape)
        layer = make_layer(seed)
        loss_fn, tensors, analytic = _projection_loss(layer, x, rng)
        rep = nn.grad_check(name, loss_fn, tensors, analytic, tol,
                            max_coords=max_coords, seed=seed)
        if rep.max_rel_err > worst.max_rel_err:
            worst.max_rel_err = rep.max_rel_err
            worst.per_tensor = rep.per_tensor
    return worst


def _loss_check(name, build, tol, seeds, max_coords=None):
    """build(seed) -> (loss_fn, tensors, analytic)."""
    worst = nn.GradCheckReport(name=name, tolerance=tol)
    for seed in seeds:
        loss_fn, tensors, analytic = build(seed)
        rep = nn.grad_check(name, loss_fn, tensors, analytic, tol,
                            max_coords=max_coords, seed=seed)
        if rep.max_rel_err > worst.max_rel_err:
            worst.max_rel_err = rep.max_rel_err
            worst.per_tensor = rep.per_tensor
    return worst


def _wce_check(seed):
    rng = rng_for(seed, "check", "wce")
    n, k = 4, 3
    raw = rng.uniform(0.2, 1.0, size=(n, k))
    probs = (raw / raw.sum(axis=1, keepdims=True)).astype(F64)
    labels = rng.integers(0, k, size=n)
    w = rng.uniform(0.5, 2.0, size=k)

    def loss_fn():
        loss, _ = nn.weighted_cross_entropy(probs, labels, w)
        return loss

    _, dprobs = nn.weighted_cross_entropy(probs, labels, w)
    return loss_fn, {"probs": probs}, {"probs": dprobs}


def _dice_check(seed):
    rng = rng_for(seed, "check", "dice")
    pred = rng.uniform(0.05, 0.95, size=(1, 1, 6, 6)).astype(F64)
    gt = (rng.random((1, 1, 6, 6)) > 0.5).astype(F64)

    def loss_fn():
        loss, _ = nn.dice_bce_loss(pred, gt)
        return loss

    _, dpred = nn.dice_bce_loss(pred, gt)
    return loss_fn, {"pred": pred}, {"pred": dpred}


def _stack_check(seed):
    """conv2d + relu + GAP + softmax + weighted CE, end to end."""
    rng = rng_for(seed, "check", "stack")
    conv = nn.Conv2d(2, 4, 3, stride=1, pad="same", name="stk.conv",
                     seed=seed, dtype=F64)
    gap = nn.GlobalAvgPool()
    dense = nn.Dense(4, 3, name="stk.dense", seed=seed, dtype=F64)
    softmax = nn.Softmax()
    relu = nn.ReLU()
    x = rng.standard_normal((2, 2, 6, 6)).astype(F64)
    labels = np.array([0, 2])
    w = np.array([1.0, 1.5, 0.5])

    def forward():
        probs = softmax.forward(dense.forward(gap.forward(relu.forward(conv.forward(x)))))
        loss, _ = nn.weighted_cross_entropy(probs, labels, w)
        return loss

    params = conv.params() + dense.params()
    for p in params:
        p.zero_grad()
    probs = softmax.forward(dense.forward(gap.forward(relu.forward(conv.forward(x)))))
    _, dprobs = nn.weighted_cross_entropy(probs, labels, w)
    dx = conv.backward(relu.backward(gap.backward(dense.backward(softmax.backward(dprobs)))))
    tensors = {"x": x}
    analytic = {"x": dx}
    for p in params:
        tensors[p.name] = p.value
        analytic[p.name] = p.grad.copy()
    return forward, tensors, analytic


def _head_check(seed):
    """dense + softmax + weighted CE head over fused feature vectors."""
    rng = rng_for(seed, "check", "head")
    head = ens.SoftmaxHead(12, 3, name="chk.head", seed=seed, dtype=F64)
    x = rng.standard_normal((4, 12)).astype(F64)
    labels = rng.integers(0, 3, size=4)
    w = rng.uniform(0.5, 2.0, size=3)

    def forward():
        loss, _ = nn.weighted_cross_entropy(head.forward(x), labels, w)
        return loss

    for p in head.params():
        p.zero_grad()
    probs = head.forward(x)
    _, dprobs = nn.weighted_cross_entropy(probs, labels, w)
    dx = head.backward(dprobs)
    tensors = {"x": x}
    analytic = {"x": dx}
    for p in head.params():
        tensors[p.name] = p.value
        analytic[p.name] = p.grad.copy()
    return forward, tensors, analytic


def _dual_encoder_check(seed):
    rng = rng_for(seed, "check", "dual")
    net = DualEncoderNet(seed=seed, dtype=F64)
    x = rng.random((1, 3, 8, 8)).astype(F64)
    gt = (rng.random((1, 1, 8, 8)) > 0.5).astype(F64)

    def forward():
        loss, _ = nn.dice_bce_loss(net.forward(x), gt)
        return loss

    for p in net.params():
        p.zero_grad()
    pred = net.forward(x)
    _, dpred = nn.dice_bce_loss(pred, gt)
    dx = net.backward(dpred)
    tensors = {"x": x}
    analytic = {"x": dx}
    for p in net.params():
        tensors[p.name] = p.value
        analytic[p.name] = p.grad.copy()
    return forward, tensors, analytic


SEEDS = (11, 23, 37, 41, 59)


def run_suite(corrupt: str = None, seeds=SEEDS) -> list:
    """Run every gradient check; returns GradCheckReports in a fixed order.

    corrupt names a check whose analytic gradient is deliberately scaled,
    serving as the suite's negative control.
    """
    checks = [
        ("conv2d", lambda: _layer_check(
            "conv2d", lambda s: nn.Conv2d(2, 3, 3, stride=2, pad="same",
                                          name="chk.conv", seed=s, dtype=F64),
            (2, 2, 6, 6), 1e-4, seeds)),
        ("depthwise_conv2d", lambda: _layer_check(
            "depthwise_conv2d", lambda s: nn.DepthwiseConv2d(
                3, 3, stride=1, pad="same", name="chk.dw", seed=s, dtype=F64),
            (2, 3, 5, 5), 1e-4, seeds)),
        ("dense", lambda: _layer_check(
            "dense", lambda s: nn.Dense(6, 4, name="chk.dense", seed=s, dtype=F64),
            (3, 6), 1e-6, seeds)),
        ("relu", lambda: _layer_check(
            "relu", lambda s: nn.ReLU(), (2, 3, 4, 4), 1e-4, seeds)),
        ("sigmoid", lambda: _layer_check(
            "sigmoid", lambda s: nn.Sigmoid(), (2, 3, 4, 4), 1e-4, seeds)),
        ("max_pool2d", lambda: _layer_check(
            "max_pool2d", lambda s: nn.MaxPool2d(2), (2, 2, 6, 6), 1e-4, seeds,
            distinct=True)),
        ("global_avg_pool", lambda: _layer_check(
            "global_avg_pool", lambda s: nn.GlobalAvgPool(), (2, 3, 4, 4), 1e-4, seeds)),
        ("upsample_nearest", lambda: _layer_check(
            "upsample_nearest", lambda s: nn.UpsampleNearest2x(), (2, 2, 3, 3),
            1e-4, seeds)),
        ("softmax", lambda: _layer_check(
            "softmax", lambda s: nn.Softmax(), (3, 5), 1e-4, seeds)),
        ("weighted_cross_entropy", lambda: _loss_check(
            "weighted_cross_entropy", _wce_check, 1e-4, seeds)),
        ("dice_bce_loss", lambda: _loss_check(
            "dice_bce_loss", _dice_check, 1e-4, seeds)),
        ("conv_relu_gap_softmax_ce", lambda: _loss_check(
            "conv_relu_gap_softmax_ce", _stack_check, 1e-4, seeds, max_coords=24)),
        ("ensemble_head", lambda: _loss_check(
            "ensemble_head", _head_check, 1e-4, seeds, max_coords=40)),
        ("dual_encoder", lambda: _loss_check(
            "dual_encoder", _dual_encoder_check, 1e-3, seeds, max_coords=12)),
    ]
    reports = []
    for name, run in checks:
        rep = run()
        if corrupt == name:
            rep.max_rel_err = max(rep.max_rel_err * 100.0, 1.0)
            rep.per_tensor["<corrupted>"] = rep.max_rel_err
        reports.append(rep)
    return reports


def format_report(reports) -> str:
    lines = []
    for rep in reports:
        status = "PASS" if rep.passed else "FAIL"
        lines.append(f"{status}  {rep.name:28s} max_rel_err={rep.max_rel_err:.3e} "
                     f"tol={rep.tolerance:.0e}")
    n_fail = sum(not r.passed for r in reports)
    lines.append(f"{len(reports) - n_fail}/{len(reports)} gradient checks passed")
    return "\n".join(lines)
