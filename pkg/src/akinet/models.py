"""Architecture plans, model construction, training, prediction and checkpoints.

CNN family layout (input ``x`` of shape ``(batch, L)``)::

    (B, L) -> (B, 1, L) -> conv1d 16 filters k=3 -> (B, 16, L)
           -> image (B, 1, 16, L) -> batchnorm -> 2-d block
           -> global average pool -> FC 64 -> relu -> dropout
           -> FC 16 -> relu -> FC 1 -> sigmoid -> (B,)

The MLP baseline is ``depth`` dense layers of width 64 with relu followed by
a single sigmoid unit.
"""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import CheckpointError, ConfigError, DataError, DimensionError, StateError
from .layers import (
    BatchNorm,
    Conv1d,
    Conv2d,
    Dense,
    Dropout,
    GlobalAvgPool2d,
    Layer,
    MaxPool2d,
    Relu,
    Reshape,
    ResidualBlock,
    Sequential,
    Sigmoid,
    bce_loss,
)
from .optim import Adam, Hyperparams
from .seeding import rng_for

CHECKPOINT_VERSION = 1
FRONT_FILTERS = 16
HEAD_WIDTHS = (64, 16)
MLP_WIDTH = 64

VGG_PLANS = {
    8: ([2, 2, 2, 2], [32, 64, 128, 128]),
    12: ([2, 2, 3, 3, 2], [32, 64, 128, 128, 128]),
    16: ([2, 2, 3, 3, 3, 3], [32, 64, 128, 128, 128, 128]),
}
RESNET_PLANS = {
    18: [2, 2, 2, 2],
    34: [3, 4, 6, 3],
}
RESNET_STEM = 32
RESNET_CHANNELS = [32, 64, 128, 256]

VALID_DEPTHS = {
    "vgg": (8, 12, 16),
    "resnet": (18, 34),
    "mlp": (8, 12, 16, 18, 34),
}


@dataclass(frozen=True)
class ArchitectureSpec:
    family: str
    depth: int
    input_length: int = 16
    channel_scale: float = 1.0
    dropout_rate: float = 0.5

    def __post_init__(self):
        fam = str(self.family).lower()
        object.__setattr__(self, "family", fam)
        if fam not in VALID_DEPTHS:
            raise ConfigError(f"unknown family {self.family!r}; choose vgg, resnet or mlp")
        if self.depth not in VALID_DEPTHS[fam]:
            raise ConfigError(
                f"{fam} depth must be one of {VALID_DEPTHS[fam]}, got {self.depth}"
            )
        if int(self.input_length) != self.input_length or self.input_length < 1:
            raise ConfigError(f"input_length must be a positive integer, got {self.input_length}")
        if not self.channel_scale > 0:
            raise ConfigError(f"channel_scale must be positive, got {self.channel_scale}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    def to_dict(self) -> dict:
        return asdict(self)


def cnn_spec_for_depth(depth: int, input_length: int = 16, channel_scale: float = 1.0) -> ArchitectureSpec:
    """CNN cell used in the depth sweep: VGG for 8/12/16, ResNet for 18/34."""
    family = "vgg" if depth in VGG_PLANS else "resnet"
    return ArchitectureSpec(family, depth, input_length, channel_scale)


def _scaled(c: int, scale: float) -> int:
    return max(1, int(round(c * scale)))


@dataclass
class BlockPlan:
    """Ordered plan of the 2-d block.

    ``steps`` holds ``("conv", channels)``, ``("res", channels)`` and
    ``("pool",)`` entries. Pools are requests; :func:`build_model` drops a
    pool once either spatial dimension has shrunk to 1.
    """

    family: str
    depth: int
    steps: list = field(default_factory=list)

    @property
    def conv_layers(self) -> int:
        return sum(1 if s[0] == "conv" else 2 if s[0] == "res" else 0 for s in self.steps)

    @property
    def requested_pools(self) -> int:
        return sum(s[0] == "pool" for s in self.steps)

    @property
    def weight_layers(self) -> int:
        # VGG depth counts 3x3 convs; ResNet depth also counts the final FC layer
        if self.family == "resnet":
            return self.conv_layers + 1
        return self.conv_layers


def plan_2d_block(family: str, depth: int, channel_scale: float = 1.0) -> BlockPlan:
    family = family.lower()
    plan = BlockPlan(family, depth)
    if family == "vgg":
        if depth not in VGG_PLANS:
            raise ConfigError(f"no VGG plan for depth {depth}")
        counts, chans = VGG_PLANS[depth]
        for n, c in zip(counts, chans):
            plan.steps += [("conv", _scaled(c, channel_scale))] * n
            plan.steps.append(("pool",))
    elif family == "resnet":
        if depth not in RESNET_PLANS:
            raise ConfigError(f"no ResNet plan for depth {depth}")
        plan.steps.append(("conv", _scaled(RESNET_STEM, channel_scale)))
        for i, (n, c) in enumerate(zip(RESNET_PLANS[depth], RESNET_CHANNELS)):
            if i > 0:
                plan.steps.append(("pool",))
            plan.steps += [("res", _scaled(c, channel_scale))] * n
    else:
        raise ConfigError(f"no 2-d block for family {family!r}")
    return plan


class Model:
    """A layer stack plus the spec and RNG streams it was built from."""

    def __init__(self, spec: ArchitectureSpec, net: Sequential, seed: int, shapes=None):
        self.spec = spec
        self.net = net
        self.seed = int(seed)
        self.mode = "eval"
        self.shapes = shapes or []
        self.dropout_rng = rng_for(seed, "dropout")
        for _, layer in net.named_layers():
            if isinstance(layer, Dropout):
                layer.rng = self.dropout_rng
        self._last_forward_mode = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_length:
            raise DimensionError(
                f"model expects inputs of shape (batch, {self.spec.input_length}), got {x.shape}"
            )
        self.mode = "train" if train else "eval"
        self._last_forward_mode = self.mode
        return self.net.forward(x, train)

    def backward(self, dp: np.ndarray) -> np.ndarray:
        if self._last_forward_mode != "train":
            raise StateError("backward requires a completed forward pass in train mode")
        return self.net.backward(dp)

    def parameters(self) -> list[tuple[str, Layer, str]]:
        out = []
        for name, layer in self.net.named_layers():
            for k in layer.params:
                out.append((f"{name}.{k}", layer, k))
        return out

    def param_arrays(self) -> list[np.ndarray]:
        return [layer.params[k] for _, layer, k in self.parameters()]

    def grad_arrays(self) -> list[np.ndarray]:
        return [layer.grads[k] for _, layer, k in self.parameters()]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.param_arrays())

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.net.named_layers():
            for k, v in layer.params.items():
                out[f"{name}.{k}"] = v
            for k, v in layer.buffers.items():
                if k != "mask":
                    out[f"{name}:{k}"] = v
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise CheckpointError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, layer in self.net.named_layers():
            for k in layer.params:
                layer.params[k][...] = _checked(state[f"{name}.{k}"], layer.params[k].shape, name)
            for k in list(layer.buffers):
                if k != "mask":
                    layer.buffers[k][...] = _checked(state[f"{name}:{k}"], layer.buffers[k].shape, name)


def _checked(arr, shape, name):
    if arr.shape != shape:
        raise CheckpointError(f"{name}: stored shape {arr.shape} does not match {shape}")
    return arr


def build_model(spec: ArchitectureSpec, seed: int = 0) -> Model:
    rng = rng_for(seed, "init")
    L = spec.input_length
    layers: list[Layer] = []
    shapes = [("input", (L,))]
    if spec.family == "mlp":
        width = L
        for _ in range(spec.depth):
            layers += [Dense(width, MLP_WIDTH, rng), Relu()]
            width = MLP_WIDTH
        layers += [Dense(width, 1, rng, init="xavier"), Sigmoid(), Reshape(())]
        shapes.append(("hidden", (MLP_WIDTH,)))
    else:
        layers += [
            Reshape((1, L)),
            Conv1d(1, FRONT_FILTERS, 3, rng),
            Reshape((1, FRONT_FILTERS, L)),
            BatchNorm(1),
        ]
        h, w, c = FRONT_FILTERS, L, 1
        shapes.append(("image", (c, h, w)))
        for step in plan_2d_block(spec.family, spec.depth, spec.channel_scale).steps:
            if step[0] == "conv":
                layers += [Conv2d(c, step[1], 3, rng, bias=False), BatchNorm(step[1]), Relu()]
                c = step[1]
            elif step[0] == "res":
                layers.append(ResidualBlock(c, step[1], rng))
                c = step[1]
            elif h > 1 and w > 1:
                layers.append(MaxPool2d())
                h, w = -(-h // 2), -(-w // 2)
            shapes.append((step[0], (c, h, w)))
        layers += [
            GlobalAvgPool2d(),
            Dense(c, HEAD_WIDTHS[0], rng),
            Relu(),
            Dropout(spec.dropout_rate),
            Dense(HEAD_WIDTHS[0], HEAD_WIDTHS[1], rng),
            Relu(),
            Dense(HEAD_WIDTHS[1], 1, rng, init="xavier"),
            Sigmoid(),
            Reshape(()),
        ]
        shapes.append(("head", (1,)))
    return Model(spec, Sequential(layers), seed, shapes)


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    diverged: bool = False


def train(
    model: Model,
    X: np.ndarray,
    y: np.ndarray,
    h: Hyperparams,
    progress: Callable[[int, float], None] | None = None,
) -> TrainReport:
    """Minibatch Adam on mean binary cross-entropy.

    ``X`` must already be normalized. Batch order is drawn from ``h.seed``.
    A trailing batch of one row is skipped because batch norm cannot
    normalize it. Training stops early and sets ``diverged`` if the loss
    becomes non-finite.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise DataError("cannot train on an empty training set")
    if len(X) != len(y):
        raise DimensionError(f"{len(X)} rows but {len(y)} labels")
    report = TrainReport()
    if h.epochs == 0:
        return report
    opt = Adam.from_hyperparams(h)
    order_rng = rng_for(h.seed, "shuffle")
    n = len(X)
    params = model.param_arrays()
    for epoch in range(h.epochs):
        order = order_rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, h.batch_size):
            idx = order[start:start + h.batch_size]
            if len(idx) < 2 and n > 1:
                continue
            p = model.forward(X[idx], train=True)
            loss, dp = bce_loss(p, y[idx])
            if not np.isfinite(loss):
                report.diverged = True
                report.epoch_losses.append(float("nan"))
                return report
            model.backward(dp)
            opt.step(params, model.grad_arrays())
            total += loss * len(idx)
            seen += len(idx)
        report.epoch_losses.append(total / seen)
        if progress is not None:
            progress(epoch, report.epoch_losses[-1])
        if not all(np.all(np.isfinite(a)) for a in params):
            report.diverged = True
            return report
    model.mode = "eval"
    return report


def predict_matrix(model: Model, X: np.ndarray, chunk: int = 1024) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = [model.forward(X[i:i + chunk], train=False) for i in range(0, len(X), chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def predict(model: Model, records, stats) -> np.ndarray:
    """Probabilities for ``records`` (a Dataset or list of PatientRecord)."""
    from .data import apply_normalization, feature_matrix

    X = feature_matrix(records)
    if X.shape[1] != model.spec.input_length:
        from .errors import SchemaError

        raise SchemaError(
            f"records have {X.shape[1]} features but the model expects {model.spec.input_length}"
        )
    return predict_matrix(model, apply_normalization(X, stats))


def save_checkpoint(path, model: Model, stats=None) -> None:
    """Write spec, parameters, buffers, normalization stats and seed to an .npz file."""
    meta = {
        "format": "akinet-checkpoint",
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "seed": model.seed,
        "stats": None if stats is None else stats.to_dict(),
    }
    arrays = {f"t/{k}": v for k, v in model.state_dict().items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Return ``(model, stats)``; ``stats`` is None when none were saved."""
    from .data import NormalizationStats

    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            state = {k[2:]: z[k] for k in z.files if k.startswith("t/")}
    except (OSError, ValueError, KeyError) as e:
        raise CheckpointError(f"{path}: not a readable checkpoint ({e})") from e
    if meta.get("format") != "akinet-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')!r} v{meta.get('version')}")
    model = build_model(ArchitectureSpec(**meta["spec"]), meta["seed"])
    model.load_state_dict(state)
    stats = None if meta["stats"] is None else NormalizationStats.from_dict(meta["stats"])
    return model, stats
