"""Central-difference gradient checking for layers, stacks and whole models."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    BatchNorm,
    Conv1d,
    Conv2d,
    Dense,
    Dropout,
    Layer,
    MaxPool2d,
    Relu,
    Reshape,
    ResidualBlock,
    Sequential,
    Sigmoid,
    bce_loss,
    sigmoid,
)
from .models import ArchitectureSpec, Model, build_model

TOLERANCE = 1e-4
# a coordinate whose +/- step flips a relu or max-pool winner is retried with step/10
KINK_RETRIES = 3
# reduced width for whole-architecture checks; keeps every model under 50k parameters
CHECK_CHANNEL_SCALE = 1 / 16


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_tensor: dict = field(default_factory=dict)
    n_checked: int = 0
    n_kinks: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def _pattern(layers) -> list[bytes]:
    """Active relu units and max-pool winners of the last forward pass."""
    out = []
    for l in layers:
        c = l._cache[0] if isinstance(l, MaxPool2d) else l._cache
        out.append(np.asarray(c).tobytes())
    return out


def _layers_of(stack) -> Layer:
    if isinstance(stack, Model):
        return stack.net
    if isinstance(stack, Layer):
        return stack
    return Sequential(list(stack))


def gradient_check(stack, x, y, h: float = 1e-5, per_tensor: int = 4, seed: int = 0,
                   include_input: bool = True, freeze_dropout: bool = False) -> GradCheckResult:
    """Compare analytic gradients with central differences.

    ``stack`` is a :class:`Model`, a layer, or a list of layers. When the
    stack does not end in one probability per row, its output is reduced to a
    logit with a fixed random probe vector and passed through a sigmoid, so
    the scalar loss is always mean binary cross-entropy against ``y``.
    Dropout is switched off unless ``freeze_dropout`` is set, in which case
    one mask is drawn and replayed for every evaluation. Running batch-norm
    statistics are restored afterwards.

    A difference quotient is only meaningful where the loss is smooth, so if
    the perturbation changes which relu units are active or which element
    wins a max-pool window, the coordinate is retried with a step ten times
    smaller (up to ``KINK_RETRIES`` times) and skipped, counted in
    ``n_kinks``, if it still straddles a kink.

    Returns the maximum over sampled coordinates of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    net = _layers_of(stack)
    x = np.array(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = np.random.default_rng(seed)
    layers = [l for _, l in net.named_layers()]
    saved_buffers = [{k: v.copy() for k, v in l.buffers.items()} for l in layers]
    dropouts = [l for l in layers if isinstance(l, Dropout)]
    saved_dropout = [(d.disabled, d.frozen) for d in dropouts]
    for d in dropouts:
        if freeze_dropout:
            d.frozen = True
            d.buffers.pop("mask", None)
            if d.rng is None:
                d.rng = np.random.default_rng(seed)
        else:
            d.disabled = True

    probe = None

    def loss_and_dout(inp):
        nonlocal probe
        out = net.forward(inp, train=True)
        y_ = y.astype(out.dtype)
        if out.ndim == 1:
            return bce_loss(out, y_)
        flat = out.reshape(out.shape[0], -1)
        if probe is None:
            probe = rng.standard_normal(flat.shape[1]) / np.sqrt(flat.shape[1])
        p = sigmoid(flat @ probe)
        loss, dp = bce_loss(p, y_)
        dz = dp * p * (1.0 - p)
        return loss, (dz[:, None] * probe[None, :]).reshape(out.shape)

    # difference quotients are evaluated in extended precision so their rounding
    # noise stays far below the tolerance even for parameters with zero gradient
    x_ext = x.astype(np.longdouble)
    kinked = [l for l in layers if isinstance(l, (Relu, MaxPool2d))]
    try:
        _, dout = loss_and_dout(x)
        loss_and_dout(x_ext)
        base_pattern = _pattern(kinked)
        net.zero_grad()
        dx = net.backward(dout)
        targets = []
        for li, layer in enumerate(layers):
            for k in layer.params:
                targets.append((f"{li}:{layer.kind}.{k}", layer.params[k], layer.grads[k].copy()))
        if include_input:
            targets.append(("input", x_ext, dx.copy()))

        result = GradCheckResult(0.0)
        for name, arr, grad in targets:
            flat_idx = rng.choice(arr.size, size=min(per_tensor, arr.size), replace=False)
            worst = 0.0
            for fi in flat_idx:
                idx = np.unravel_index(fi, arr.shape)
                orig = arr[idx]
                step = h
                for _ in range(KINK_RETRIES + 1):
                    arr[idx] = orig + step
                    up = np.longdouble(arr[idx]) - np.longdouble(orig)
                    lp, _ = loss_and_dout(x_ext)
                    crossed = _pattern(kinked) != base_pattern
                    arr[idx] = orig - step
                    down = np.longdouble(orig) - np.longdouble(arr[idx])
                    lm, _ = loss_and_dout(x_ext)
                    crossed = crossed or _pattern(kinked) != base_pattern
                    arr[idx] = orig
                    if not crossed:
                        break
                    step /= 10
                if crossed:
                    result.n_kinks += 1
                    continue
                num = float((lp - lm) / (up + down))
                ana = float(grad[idx])
                err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
                worst = max(worst, err)
                result.n_checked += 1
            result.per_tensor[name] = worst
            result.max_rel_error = max(result.max_rel_error, worst)
        return result
    finally:
        for l, buf in zip(layers, saved_buffers):
            for k, v in buf.items():
                l.buffers[k] = v
        for d, (dis, fro) in zip(dropouts, saved_dropout):
            d.disabled, d.frozen = dis, fro


def layer_suite(seed: int = 0) -> dict[str, tuple]:
    """One small stack per layer kind: name -> (stack, x, freeze_dropout)."""
    r = np.random.default_rng(seed)
    B = 4
    return {
        "dense+sigmoid+bce": ([Dense(6, 1, r, init="xavier"), Sigmoid(), Reshape(())], r.standard_normal((B, 6)), False),
        "dense": ([Dense(6, 5, r)], r.standard_normal((B, 6)), False),
        "conv1d": ([Conv1d(2, 3, 3, r)], r.standard_normal((B, 2, 7)), False),
        "conv2d": ([Conv2d(2, 3, 3, r)], r.standard_normal((B, 2, 5, 4)), False),
        "conv2d-wide": ([Conv2d(9, 4, 3, r)], r.standard_normal((B, 9, 3, 4)), False),
        "conv2d-1x1": ([Conv2d(3, 2, 1, r)], r.standard_normal((B, 3, 3, 3)), False),
        "maxpool2d": ([Conv2d(2, 3, 3, r), MaxPool2d()], r.standard_normal((B, 2, 5, 5)), False),
        "batchnorm-2d": ([Dense(6, 5, r), BatchNorm(5)], r.standard_normal((B, 6)), False),
        "batchnorm-4d": ([BatchNorm(3)], r.standard_normal((B, 3, 3, 2)), False),
        "dropout": ([Dense(6, 8, r), Dropout(0.5, np.random.default_rng(seed))], r.standard_normal((B, 6)), True),
        "relu": ([Dense(6, 8, r), Relu()], r.standard_normal((B, 6)), False),
        "sigmoid": ([Dense(6, 3, r), Sigmoid()], r.standard_normal((B, 6)), False),
        "conv2d+batchnorm+relu": ([Conv2d(2, 3, 3, r, bias=False), BatchNorm(3), Relu()], r.standard_normal((B, 2, 4, 5)), False),
        "resnet-block-1x1-skip": ([ResidualBlock(2, 3, r)], r.standard_normal((B, 2, 4, 3)), False),
        "resnet-block-identity": ([ResidualBlock(3, 3, r)], r.standard_normal((B, 3, 4, 3)), False),
    }


ARCHITECTURES = (("vgg", 8), ("vgg", 12), ("vgg", 16), ("resnet", 18), ("resnet", 34), ("mlp", 8))


def architecture_suite(widths=(16, 15), channel_scale: float = CHECK_CHANNEL_SCALE, seed: int = 0):
    """name -> (model, x) for every architecture at reduced width."""
    r = np.random.default_rng(seed)
    out = {}
    for L in widths:
        for fam, depth in ARCHITECTURES:
            spec = ArchitectureSpec(fam, depth, L, channel_scale)
            out[f"{fam}-{depth}/L={L}"] = (build_model(spec, seed), r.standard_normal((4, L)))
    return out


def run_suite(seed: int = 0, widths=(16, 15), per_tensor: int = 4, per_tensor_arch: int = 2):
    """Run every layer-kind and architecture check; returns ``[(name, max_rel_error)]``."""
    rows = []
    y = np.array([0.0, 1.0, 1.0, 0.0])
    for name, (stack, x, freeze) in layer_suite(seed).items():
        res = gradient_check(stack, x, y, per_tensor=per_tensor, seed=seed, freeze_dropout=freeze)
        rows.append((name, res.max_rel_error))
    for name, (model, x) in architecture_suite(widths, seed=seed).items():
        res = gradient_check(model, x, y, per_tensor=per_tensor_arch, seed=seed)
        rows.append((name, res.max_rel_error))
    return rows
