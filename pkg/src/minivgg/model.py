"""VGG-family network construction, initialization and staged transfer."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor_core as tc
from .errors import ConfigError, IntegrityError, ShapeError

# Conv stacks per variant; "M" marks a 2x2 max-pool.
VGG_LAYERS = {
    "A": [64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M"],
    "B": [64, 64, "M", 128, 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M"],
    "D": [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M"],
}
ARCH_NAMES = {"vgg11": "A", "vgg13": "B", "vgg16": "D"}
DEPTHS = {"A": 11, "B": 13, "D": 16}
MIN_WIDTH = 8
NUM_POOLS = 5


def scale_width(base: int, scale: Fraction) -> int:
    """Scale a channel count and round half-up to a multiple of 4."""
    w = int(math.floor(Fraction(base) * scale / 4 + Fraction(1, 2))) * 4
    if w < MIN_WIDTH:
        raise ConfigError(f"width_scale {scale} shrinks width {base} to {w} (< {MIN_WIDTH})")
    return w


@dataclass(frozen=True)
class ArchConfig:
    variant: str = "A"
    width_scale: Fraction = Fraction(1)
    input_size: int = 224
    num_classes: int = 205
    fc_width: int = 4096

    def __post_init__(self):
        variant = ARCH_NAMES.get(self.variant, self.variant)
        object.__setattr__(self, "variant", variant)
        object.__setattr__(self, "width_scale", Fraction(self.width_scale).limit_denominator(1 << 16))
        if variant not in VGG_LAYERS:
            raise ConfigError(f"unknown VGG variant {self.variant!r}; expected A, B or D")
        if not 0 < self.width_scale <= 1:
            raise ConfigError(f"width_scale must lie in (0, 1], got {self.width_scale}")
        if self.input_size < 2 ** NUM_POOLS:
            raise ConfigError(f"input_size must be >= {2 ** NUM_POOLS}, got {self.input_size}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        # raises on widths below the floor
        self.conv_widths()
        scale_width(self.fc_width, self.width_scale)

    @property
    def depth(self) -> int:
        return DEPTHS[self.variant]

    @property
    def arch_name(self) -> str:
        return {v: k for k, v in ARCH_NAMES.items()}[self.variant]

    def conv_widths(self) -> list[int]:
        return [scale_width(v, self.width_scale) for v in VGG_LAYERS[self.variant] if v != "M"]

    @property
    def scaled_fc_width(self) -> int:
        return scale_width(self.fc_width, self.width_scale)

    @property
    def final_spatial(self) -> int:
        s = self.input_size
        for _ in range(NUM_POOLS):
            s //= 2
        return s

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Ordered parameter names and shapes, in forward order."""
        shapes: dict[str, tuple[int, ...]] = {}
        c = 3
        for i, w in enumerate(self.conv_widths(), start=1):
            shapes[f"conv{i}_w"] = (w, c, 3, 3)
            shapes[f"conv{i}_b"] = (w,)
            c = w
        fc_in = c * self.final_spatial ** 2
        fc = self.scaled_fc_width
        for name, fan_in, fan_out in (("fc6", fc_in, fc), ("fc7", fc, fc), ("fc8", fc, self.num_classes)):
            shapes[f"{name}_w"] = (fan_in, fan_out)
            shapes[f"{name}_b"] = (fan_out,)
        return shapes

    def layer_plan(self) -> list[tuple]:
        """Ordered layer list: ``(kind, name)`` tuples."""
        plan: list[tuple] = []
        i = 0
        for v in VGG_LAYERS[self.variant]:
            if v == "M":
                plan.append(("pool", f"pool{len([p for p in plan if p[0] == 'pool']) + 1}"))
            else:
                i += 1
                plan += [("conv", f"conv{i}"), ("relu", f"relu{i}")]
        plan.append(("flatten", "flatten"))
        plan += [("fc", "fc6"), ("relu", "fc6_relu"), ("dropout", "drop6"),
                 ("fc", "fc7"), ("relu", "fc7_relu"), ("dropout", "drop7"),
                 ("fc", "fc8")]
        return plan


@dataclass(frozen=True)
class InitSpec:
    """Gaussian initialization.

    ``mode="fixed"`` draws every weight from N(mean, std_dev^2).
    ``mode="fan_in"`` uses std = sqrt(2 / fan_in) per layer and ignores ``std_dev``.
    Samples come from numpy's PCG64 generator (ziggurat normals) seeded with
    ``seed``, consumed parameter by parameter in forward order.
    """
    seed: int = 0
    mean: float = 0.0
    std_dev: float = 0.01
    bias_fill: float = 0.0
    mode: str = "fixed"

    def __post_init__(self):
        if self.mode not in ("fixed", "fan_in"):
            raise ConfigError(f"unknown init mode {self.mode!r}")
        if self.std_dev <= 0:
            raise ConfigError("std_dev must be positive")


class Network:
    """A VGG network: ordered layers plus named parameters, gradients and momentum."""

    def __init__(self, config: ArchConfig, params: dict[str, np.ndarray], dropout_ratio: float = 0.5):
        self.config = config
        self.dropout_ratio = dropout_ratio
        self.layers = config.layer_plan()
        shapes = config.param_shapes()
        if list(params) != list(shapes):
            raise IntegrityError("parameter names do not match the architecture")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise IntegrityError(f"{name}: shape {params[name].shape} != expected {shape}")
        self.params = {k: tc.as_tensor(v) for k, v in params.items()}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.momentum = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.channel_mean = np.zeros(3, dtype=np.float32)
        self.iteration = 0

    def __repr__(self):
        c = self.config
        return f"Network({c.arch_name}, scale={c.width_scale}, input={c.input_size}, classes={c.num_classes})"

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def copy(self) -> "Network":
        net = Network(self.config, {k: v.copy() for k, v in self.params.items()}, self.dropout_ratio)
        net.momentum = {k: v.copy() for k, v in self.momentum.items()}
        net.channel_mean = self.channel_mean.copy()
        net.iteration = self.iteration
        return net

    def conv_names(self) -> list[str]:
        return [name for kind, name in self.layers if kind == "conv"]

    def forward(self, x, train: bool = False, rng=None, stop_at: str | None = None):
        """Run the network on an NCHW batch.

        In train mode dropout needs randomness: ``rng`` is either one
        ``Generator`` for the whole batch or a sequence with one generator per
        sample (rows then get masks independent of how the batch is split).
        Returns ``(output, tape)``; ``output`` is the logits unless
        ``stop_at`` names an earlier layer.
        """
        x = tc.as_tensor(x)
        tape = []
        p = self.params
        for kind, name in self.layers:
            if kind == "conv":
                x, cache = tc.conv2d(x, p[name + "_w"], p[name + "_b"])
            elif kind == "relu":
                x, cache = tc.relu(x)
            elif kind == "pool":
                x, cache = tc.maxpool2x2(x)
            elif kind == "flatten":
                cache = x.shape
                x = x.reshape(x.shape[0], -1)
            elif kind == "fc":
                x, cache = tc.linear(x, p[name + "_w"], p[name + "_b"])
            elif kind == "dropout":
                mask = None
                if train and self.dropout_ratio > 0:
                    if rng is None:
                        raise ConfigError("train-mode forward with dropout needs an rng")
                    if isinstance(rng, np.random.Generator):
                        mask = tc.dropout_mask(x.shape, self.dropout_ratio, rng)
                    else:
                        mask = np.stack([tc.dropout_mask(x.shape[1:], self.dropout_ratio, r) for r in rng])
                x, cache = tc.dropout(x, self.dropout_ratio, train, mask=mask)
            tape.append((kind, name, cache))
            if name == stop_at:
                break
        return x, tape

    def backward(self, tape, grad) -> dict[str, np.ndarray]:
        """Backpropagate ``grad`` through ``tape``; returns fresh gradient arrays."""
        grads: dict[str, np.ndarray] = {}
        for kind, name, cache in reversed(tape):
            if kind == "conv":
                grad, gw, gb = tc.conv2d_backward(grad, cache)
                grads[name + "_w"], grads[name + "_b"] = gw, gb
            elif kind == "relu":
                grad = tc.relu_backward(grad, cache)
            elif kind == "pool":
                grad = tc.maxpool2x2_backward(grad, cache)
            elif kind == "flatten":
                grad = grad.reshape(cache)
            elif kind == "fc":
                grad, gw, gb = tc.linear_backward(grad, cache)
                grads[name + "_w"], grads[name + "_b"] = gw, gb
            elif kind == "dropout":
                grad = tc.dropout_backward(grad, cache)
        return {k: grads[k] for k in self.params}

    def loss_and_grads(self, x, labels, train: bool = True, rng=None):
        """Mean softmax cross-entropy over the batch and its parameter gradients."""
        logits, tape = self.forward(x, train=train, rng=rng)
        loss, probs = tc.softmax_cross_entropy(logits, labels)
        grads = self.backward(tape, tc.softmax_cross_entropy_backward(probs, labels))
        return loss, probs, grads

    def predict_proba(self, x, batch_size: int = 256) -> np.ndarray:
        x = tc.as_tensor(x)
        out = [tc.softmax(self.forward(x[i:i + batch_size])[0]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.num_classes), tc.DTYPE)


def build(config: ArchConfig, init: InitSpec = InitSpec(), dropout_ratio: float = 0.5) -> Network:
    rng = np.random.Generator(np.random.PCG64(init.seed))
    params = {}
    for name, shape in config.param_shapes().items():
        if name.endswith("_b"):
            params[name] = np.full(shape, init.bias_fill, dtype=tc.DTYPE)
            continue
        if init.mode == "fan_in":
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            std = math.sqrt(2.0 / fan_in)
        else:
            std = init.std_dev
        params[name] = rng.normal(init.mean, std, size=shape).astype(tc.DTYPE)
    return Network(config, params, dropout_ratio)


def param_count(config: ArchConfig) -> int:
    return sum(int(np.prod(s)) for s in config.param_shapes().values())


def transfer_init(deep: Network, shallow: Network) -> Network:
    """Staged initialization of a deeper network from a trained shallower one.

    Each of the first four conv layers of ``deep`` takes weight and bias from
    the earliest not-yet-used conv layer of ``shallow`` with the same weight
    shape (layers without a match keep their values). ``fc6`` and ``fc7``
    are copied; ``fc8`` is not. Returns a new network; inputs are untouched.
    """
    out = deep.copy()
    for name, src in transfer_plan(deep, shallow).items():
        out.params[name + "_w"] = shallow.params[src + "_w"].copy()
        out.params[name + "_b"] = shallow.params[src + "_b"].copy()
    for fc in ("fc6", "fc7"):
        for suffix in ("_w", "_b"):
            key = fc + suffix
            if deep.params[key].shape != shallow.params[key].shape:
                raise ShapeError(f"{key}: cannot copy {shallow.params[key].shape} into {deep.params[key].shape}")
            out.params[key] = shallow.params[key].copy()
    return out


def transfer_plan(deep: Network, shallow: Network) -> dict[str, str]:
    """Mapping deep conv layer -> shallow source used by :func:`transfer_init`."""
    plan, used = {}, set()
    for name in deep.conv_names()[:4]:
        shape = deep.params[name + "_w"].shape
        for src in shallow.conv_names():
            if src not in used and shallow.params[src + "_w"].shape == shape:
                used.add(src)
                plan[name] = src
                break
    return plan


def describe(config: ArchConfig) -> str:
    """Human-readable layer / parameter table."""
    rows = [f"{config.arch_name} (variant {config.variant}, {config.depth} weight layers), "
            f"scale {config.width_scale}, input {config.input_size}, classes {config.num_classes}"]
    shapes = config.param_shapes()
    for name, shape in shapes.items():
        rows.append(f"  {name:<10} {'x'.join(map(str, shape)):>20} {int(np.prod(shape)):>12,}")
    rows.append(f"  {'total':<10} {'':>20} {param_count(config):>12,}")
    return "\n".join(rows)
