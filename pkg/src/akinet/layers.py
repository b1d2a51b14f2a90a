"""Double-precision layers with hand-written forward and backward passes.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every layer
caches what its backward pass needs during ``forward`` and raises
:class:`StateError` if ``backward`` is called without a preceding forward.
Gradients land in ``layer.grads`` under the same keys as ``layer.params``.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, LabelError, NumericError, StateError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
BCE_CLAMP = 1e-12

# sigmoid outputs are kept strictly inside (0, 1)
_P_LO = np.finfo(np.float64).tiny
_P_HI = np.nextafter(1.0, 0.0)


class Layer:
    kind = "Layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None
        self._train = False

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def children(self) -> tuple["Layer", ...]:
        return ()

    def _need_cache(self):
        if self._cache is None:
            raise StateError(f"{self.kind}.backward called before forward")
        return self._cache

    def zero_grad(self):
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)
        for c in self.children():
            c.zero_grad()

    def named_layers(self, prefix: str = "") -> Iterator[tuple[str, "Layer"]]:
        yield prefix, self
        for i, c in enumerate(self.children()):
            yield from c.named_layers(f"{prefix}.{i}" if prefix else str(i))

    def __repr__(self):
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self.params.items())
        return f"{self.kind}({shapes})"


def _check_shape(x: np.ndarray, ndim: int, axis: int, expected: int, who: str):
    if x.ndim != ndim:
        raise DimensionError(f"{who}: expected a {ndim}-d input, got shape {x.shape}")
    if x.shape[axis] != expected:
        raise DimensionError(
            f"{who}: expected size {expected} on axis {axis}, got {x.shape[axis]} (shape {x.shape})"
        )


class Dense(Layer):
    """Fully connected layer, ``y = x @ W + b`` with ``W`` of shape (in, out)."""

    kind = "Dense"

    def __init__(self, n_in: int, n_out: int, rng=None, init: str = "he"):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.params["W"] = _init_weight((n_in, n_out), n_in, n_out, rng, init)
        self.params["b"] = np.zeros(n_out)

    def forward(self, x, train=False):
        _check_shape(x, 2, 1, self.n_in, "Dense")
        self._cache = x
        self._train = train
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        x = self._need_cache()
        self.grads["W"] = x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["W"].T


class Conv1d(Layer):
    """Stride-1 cross-correlation over the last axis with zero 'same' padding."""

    kind = "Conv1d"

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, rng=None, bias: bool = True):
        super().__init__()
        if kernel % 2 != 1:
            raise ConfigError("only odd kernel sizes give 'same' padding")
        self.c_in, self.c_out, self.k = c_in, c_out, kernel
        fan_in = c_in * kernel
        self.params["W"] = _init_weight((c_out, c_in, kernel), fan_in, c_out * kernel, rng, "he")
        if bias:
            self.params["b"] = np.zeros(c_out)

    def forward(self, x, train=False):
        _check_shape(x, 3, 1, self.c_in, "Conv1d")
        B, C, L = x.shape
        p = self.k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
        # (B, C, L, k) -> (B, L, C, k)
        cols = sliding_window_view(xp, self.k, axis=2).transpose(0, 2, 1, 3).reshape(B * L, C * self.k)
        y = cols @ self.params["W"].reshape(self.c_out, -1).T
        if "b" in self.params:
            y += self.params["b"]
        self._cache = (cols, x.shape)
        self._train = train
        return y.reshape(B, L, self.c_out).transpose(0, 2, 1)

    def backward(self, dy):
        cols, (B, C, L) = self._need_cache()
        k, p = self.k, self.k // 2
        d2 = dy.transpose(0, 2, 1).reshape(B * L, self.c_out)
        self.grads["W"] = (d2.T @ cols).reshape(self.params["W"].shape)
        if "b" in self.params:
            self.grads["b"] = d2.sum(axis=0)
        dcols = (d2 @ self.params["W"].reshape(self.c_out, -1)).reshape(B, L, C, k)
        dxp = np.zeros((B, C, L + 2 * p))
        for i in range(k):
            dxp[:, :, i:i + L] += dcols[:, :, :, i].transpose(0, 2, 1)
        return dxp[:, :, p:p + L]


class Conv2d(Layer):
    """Stride-1 square-kernel cross-correlation with zero 'same' padding.

    Implemented as im2col followed by one matrix product; the tests compare it
    against a direct four-loop convolution.
    """

    kind = "Conv2d"

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, rng=None, bias: bool = True):
        super().__init__()
        if kernel % 2 != 1:
            raise ConfigError("only odd kernel sizes give 'same' padding")
        self.c_in, self.c_out, self.k = c_in, c_out, kernel
        fan_in = c_in * kernel * kernel
        self.params["W"] = _init_weight(
            (c_out, c_in, kernel, kernel), fan_in, c_out * kernel * kernel, rng, "he"
        )
        if bias:
            self.params["b"] = np.zeros(c_out)

    def forward(self, x, train=False):
        _check_shape(x, 4, 1, self.c_in, "Conv2d")
        B, C, H, W = x.shape
        k, p = self.k, self.k // 2
        # cols has shape (C*k*k, B*H*W); the long contiguous axis keeps the copy cheap
        if k == 1:
            cols = x.transpose(1, 0, 2, 3).reshape(C, B * H * W)
        else:
            xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
            win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (B, C, H, W, k, k)
            cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(C * k * k, B * H * W)
        y = self.params["W"].reshape(self.c_out, -1) @ cols
        if "b" in self.params:
            y += self.params["b"][:, None]
        self._cache = (cols, x.shape)
        self._train = train
        return y.reshape(self.c_out, B, H, W).transpose(1, 0, 2, 3)

    def backward(self, dy):
        cols, (B, C, H, W) = self._need_cache()
        k, p = self.k, self.k // 2
        d2 = dy.transpose(1, 0, 2, 3).reshape(self.c_out, B * H * W)
        self.grads["W"] = (d2 @ cols.T).reshape(self.params["W"].shape)
        if "b" in self.params:
            self.grads["b"] = d2.sum(axis=1)
        if k == 1:
            dcols = self.params["W"].reshape(self.c_out, -1).T @ d2
            return dcols.reshape(C, B, H, W).transpose(1, 0, 2, 3)
        if C >= 8:
            # input gradient as a 'same' correlation of dy with the flipped, transposed kernel
            dyp = np.zeros((self.c_out, B, H + 2 * p, W + 2 * p))
            dyp[:, :, p:p + H, p:p + W] = d2.reshape(self.c_out, B, H, W)
            dcols = np.empty((self.c_out, k, k, B, H, W))
            for i in range(k):
                for j in range(k):
                    dcols[:, i, j] = dyp[:, :, i:i + H, j:j + W]
            wf = self.params["W"][:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(C, -1)
            dx = wf @ dcols.reshape(self.c_out * k * k, -1)
            return dx.reshape(C, B, H, W).transpose(1, 0, 2, 3)
        dcols = (self.params["W"].reshape(self.c_out, -1).T @ d2).reshape(C, k, k, B, H, W)
        dxp = np.zeros((C, B, H + 2 * p, W + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + H, j:j + W] += dcols[:, i, j]
        return dxp[:, :, p:p + H, p:p + W].transpose(1, 0, 2, 3)


class MaxPool2d(Layer):
    """2x2 max pooling, stride 2, ceil mode (partial edge windows allowed)."""

    kind = "MaxPool2d"

    def forward(self, x, train=False):
        if x.ndim != 4:
            raise DimensionError(f"MaxPool2d: expected a 4-d input, got shape {x.shape}")
        B, C, H, W = x.shape
        Ho, Wo = -(-H // 2), -(-W // 2)
        xp = x
        if (2 * Ho, 2 * Wo) != (H, W):
            xp = np.full((B, C, 2 * Ho, 2 * Wo), -np.inf, dtype=x.dtype)
            xp[:, :, :H, :W] = x
        win = xp.reshape(B, C, Ho, 2, Wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, 4)
        arg = win.argmax(axis=-1)
        self._cache = (arg, x.shape)
        self._train = train
        return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        arg, (B, C, H, W) = self._need_cache()
        Ho, Wo = arg.shape[2:]
        dwin = np.zeros((B, C, Ho, Wo, 4))
        np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
        dxp = dwin.reshape(B, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * Ho, 2 * Wo)
        return dxp[:, :, :H, :W]


class BatchNorm(Layer):
    """Per-channel normalization over every axis except axis 1.

    Train mode uses biased batch statistics for the output and updates the
    running estimates with momentum 0.1 (running variance uses the unbiased
    batch variance). Eval mode uses the running estimates.
    """

    kind = "BatchNorm"

    def __init__(self, channels: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def _bshape(self, x):
        return (1, self.channels) + (1,) * (x.ndim - 2)

    def forward(self, x, train=False):
        if x.ndim < 2:
            raise DimensionError(f"BatchNorm: expected at least 2 axes, got shape {x.shape}")
        _check_shape(x, x.ndim, 1, self.channels, "BatchNorm")
        axes = (0,) + tuple(range(2, x.ndim))
        m = x.size // self.channels
        bs = self._bshape(x)
        if train:
            if m < 2:
                raise NumericError(
                    "BatchNorm: degenerate variance, only one element per channel in the batch"
                )
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.buffers["running_mean"] *= 1 - self.momentum
            self.buffers["running_mean"] += self.momentum * mean
            self.buffers["running_var"] *= 1 - self.momentum
            self.buffers["running_var"] += self.momentum * var * m / (m - 1)
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bs)) * inv_std.reshape(bs)
        self._cache = (xhat, inv_std, axes, m)
        self._train = train
        return xhat * self.params["gamma"].reshape(bs) + self.params["beta"].reshape(bs)

    def backward(self, dy):
        xhat, inv_std, axes, m = self._need_cache()
        bs = self._bshape(dy)
        self.grads["gamma"] = (dy * xhat).sum(axis=axes)
        self.grads["beta"] = dy.sum(axis=axes)
        dxhat = dy * self.params["gamma"].reshape(bs)
        if not self._train:
            return dxhat * inv_std.reshape(bs)
        s1 = dxhat.sum(axis=axes).reshape(bs)
        s2 = (dxhat * xhat).sum(axis=axes).reshape(bs)
        return (inv_std.reshape(bs) / m) * (m * dxhat - s1 - xhat * s2)


class Dropout(Layer):
    """Inverted dropout; the identity in eval mode.

    ``rng`` must be a ``numpy.random.Generator``; the owning model assigns it.
    ``frozen`` replays the last mask instead of drawing a new one, which lets
    the gradient checker differentiate through a fixed mask.
    """

    kind = "Dropout"

    def __init__(self, rate: float = 0.5, rng=None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self.frozen = False
        self.disabled = False

    def forward(self, x, train=False):
        self._train = train
        if not train or self.rate == 0.0 or self.disabled:
            self._cache = "identity"
            return x
        if self.frozen and self.buffers.get("mask") is not None and self.buffers["mask"].shape == x.shape:
            mask = self.buffers["mask"]
        else:
            if self.rng is None:
                raise StateError("Dropout in train mode needs an rng")
            keep = self.rng.random(x.shape) >= self.rate
            mask = keep / (1.0 - self.rate)
            self.buffers["mask"] = mask
        self._cache = mask
        return x * mask

    def backward(self, dy):
        mask = self._need_cache()
        if isinstance(mask, str):
            return dy
        return dy * mask


class Relu(Layer):
    kind = "Relu"

    def forward(self, x, train=False):
        self._cache = x > 0
        self._train = train
        return np.where(self._cache, x, 0.0)

    def backward(self, dy):
        return dy * self._need_cache()


def _floating(x) -> np.ndarray:
    x = np.asarray(x)
    return x if np.issubdtype(x.dtype, np.floating) else x.astype(np.float64)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function, clipped to the open interval (0, 1)."""
    x = _floating(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return np.clip(out, _P_LO, _P_HI)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


class Sigmoid(Layer):
    kind = "Sigmoid"

    def forward(self, x, train=False):
        p = sigmoid(x)
        self._cache = p
        self._train = train
        return p

    def backward(self, dy):
        p = self._need_cache()
        return dy * p * (1.0 - p)


def activation_forward(kind: str, x: np.ndarray) -> np.ndarray:
    if kind.lower() == "relu":
        return relu(x)
    if kind.lower() == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation {kind!r}")


class Reshape(Layer):
    """Reshape everything after the batch axis to ``shape``."""

    kind = "Reshape"

    def __init__(self, shape: tuple[int, ...]):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x, train=False):
        self._cache = x.shape
        self._train = train
        try:
            return x.reshape((x.shape[0],) + self.shape)
        except ValueError as e:
            raise DimensionError(f"Reshape: cannot map {x.shape[1:]} to {self.shape}") from e

    def backward(self, dy):
        return dy.reshape(self._need_cache())


class GlobalAvgPool2d(Layer):
    kind = "GlobalAvgPool2d"

    def forward(self, x, train=False):
        if x.ndim != 4:
            raise DimensionError(f"GlobalAvgPool2d: expected a 4-d input, got shape {x.shape}")
        self._cache = x.shape
        self._train = train
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        B, C, H, W = self._need_cache()
        return np.broadcast_to(dy[:, :, None, None] / (H * W), (B, C, H, W)).copy()


class Sequential(Layer):
    kind = "Sequential"

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def children(self):
        return tuple(self.layers)

    def forward(self, x, train=False):
        self._train = train
        for layer in self.layers:
            x = layer.forward(x, train)
        self._cache = True
        return x

    def backward(self, dy):
        self._need_cache()
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class ResidualBlock(Layer):
    """Basic residual block: conv-bn-relu-conv-bn plus skip, then relu.

    The skip path is a 1x1 convolution with batch norm when the channel count
    changes and the identity otherwise.
    """

    kind = "ResidualBlock"

    def __init__(self, c_in: int, c_out: int, rng=None):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.main = Sequential([
            Conv2d(c_in, c_out, 3, rng, bias=False),
            BatchNorm(c_out),
            Relu(),
            Conv2d(c_out, c_out, 3, rng, bias=False),
            BatchNorm(c_out),
        ])
        self.skip = None
        if c_in != c_out:
            self.skip = Sequential([Conv2d(c_in, c_out, 1, rng, bias=False), BatchNorm(c_out)])
        self.out = Relu()

    def children(self):
        return (self.main, self.out) if self.skip is None else (self.main, self.skip, self.out)

    def forward(self, x, train=False):
        self._train = train
        s = x if self.skip is None else self.skip.forward(x, train)
        self._cache = True
        return self.out.forward(self.main.forward(x, train) + s, train)

    def backward(self, dy):
        self._need_cache()
        d = self.out.backward(dy)
        dx = self.main.backward(d)
        return dx + (d if self.skip is None else self.skip.backward(d))


def bce_loss(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy of probabilities ``p`` against 0/1 labels.

    Returns ``(loss, dloss/dp)``. Probabilities are clamped to
    ``[1e-12, 1 - 1e-12]`` before taking logs; the gradient is evaluated at
    the clamped point.
    """
    p = _floating(p)
    y = np.asarray(y, dtype=p.dtype)
    if p.shape != y.shape:
        raise DimensionError(f"bce_loss: probabilities {p.shape} vs labels {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise LabelError("bce_loss: labels must be 0 or 1")
    n = p.size
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    grad = (pc - y) / (pc * (1.0 - pc)) / n
    return loss, grad


def _init_weight(shape, fan_in, fan_out, rng, init):
    if rng is None:
        rng = np.random.default_rng(0)
    if init == "he":
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    if init == "xavier":
        return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shape)
    if init == "zeros":
        return np.zeros(shape)
    raise ConfigError(f"unknown init {init!r}")
