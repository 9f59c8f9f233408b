"""Residual units and the 6n+2 ResNet family built on :mod:`skelres.tensor`.

Two unit kinds are supported:

* ``ORIGINAL``: ``y = relu(bn(conv(relu(bn(conv(x))))) + shortcut(x))``
* ``PROPOSED``: ``y = conv(dropout(relu(bn(conv(relu(bn(x))))))) + shortcut(x)``

The proposed unit has no activation after the addition, so a stack of them
is additive: the output of unit L equals the input of unit l plus the sum
of the branch outputs in between.

Parameters live in a flat ``dict[str, ndarray]`` keyed by dotted names
(``stage2.unit0.conv1.w``). BatchNorm running statistics are stored in the
same dict under ``*.running_mean`` / ``*.running_var`` but are not
trainable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import DepthError, KindError, ShapeError

VALID_DEPTHS = (20, 32, 44, 56, 110)
DEFAULT_WIDTHS = (16, 32, 64)
RUNNING_SUFFIXES = (".running_mean", ".running_var")


class UnitKind(str, enum.Enum):
    ORIGINAL = "original"
    PROPOSED = "proposed"

    @classmethod
    def parse(cls, value) -> "UnitKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise KindError(f"unknown unit kind {value!r}; expected 'original' or 'proposed'") from None


@dataclass(frozen=True)
class ResidualUnitSpec:
    kind: UnitKind
    in_channels: int
    out_channels: int
    stride: int = 1
    dropout_rate: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", UnitKind.parse(self.kind))
        if self.stride not in (1, 2):
            raise ShapeError(f"stride must be 1 or 2, got {self.stride}")
        if (self.stride == 2) != (self.out_channels > self.in_channels):
            raise ShapeError("stride 2 is used exactly when a unit widens its channels")
        if self.out_channels < self.in_channels:
            raise ShapeError("units never reduce the channel count")

    @property
    def identity_shortcut(self) -> bool:
        return self.stride == 1 and self.in_channels == self.out_channels


@dataclass(frozen=True)
class NetworkSpec:
    depth: int
    kind: UnitKind
    num_classes: int
    widths: tuple[int, ...] = DEFAULT_WIDTHS
    dropout_rate: float = 0.5
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "kind", UnitKind.parse(self.kind))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.depth not in VALID_DEPTHS:
            raise DepthError(
                f"depth {self.depth} is not supported; valid depths are "
                f"{', '.join(map(str, VALID_DEPTHS))} (6n+2)"
            )
        if len(self.widths) != 3 or any(w < 1 for w in self.widths) or list(self.widths) != sorted(set(self.widths)):
            raise ShapeError(f"widths must be three strictly increasing positive ints, got {self.widths}")
        if self.num_classes < 1:
            raise ShapeError("num_classes must be positive")

    @property
    def units_per_stage(self) -> int:
        return (self.depth - 2) // 6

    @property
    def num_units(self) -> int:
        return 3 * self.units_per_stage

    def units(self) -> list[tuple[str, ResidualUnitSpec]]:
        out = []
        prev = self.widths[0]
        for s, width in enumerate(self.widths):
            for u in range(self.units_per_stage):
                stride = 2 if (u == 0 and width > prev) else 1
                out.append((
                    f"stage{s + 1}.unit{u}",
                    ResidualUnitSpec(self.kind, prev, width, stride, self.dropout_rate),
                ))
                prev = width
        return out

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "kind": self.kind.value,
            "num_classes": self.num_classes,
            "widths": list(self.widths),
            "dropout_rate": self.dropout_rate,
            "in_channels": self.in_channels,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        return cls(
            depth=int(d["depth"]),
            kind=UnitKind.parse(d["kind"]),
            num_classes=int(d["num_classes"]),
            widths=tuple(d.get("widths", DEFAULT_WIDTHS)),
            dropout_rate=float(d.get("dropout_rate", 0.5)),
            in_channels=int(d.get("in_channels", 3)),
        )


@dataclass
class LayerGrads:
    grad_input: np.ndarray
    grad_params: dict[str, np.ndarray] = field(default_factory=dict)


def is_trainable(name: str) -> bool:
    return not name.endswith(RUNNING_SUFFIXES)


def is_decayed(name: str) -> bool:
    """Weight decay applies to conv and FC weights only."""
    return name.endswith(".w")


def sub_params(params: Mapping[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    p = prefix + "."
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}


# ---------------------------------------------------------------------------
# initialization


def _he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _init_conv(rng, f, c, k, dtype, prefix, bias=True):
    params = {f"{prefix}.w": _he_normal(rng, (f, c, k, k), c * k * k, dtype)}
    if bias:
        params[f"{prefix}.b"] = np.zeros(f, dtype=dtype)
    return params


def _init_bn(c, dtype, prefix):
    return {
        f"{prefix}.gamma": np.ones(c, dtype=dtype),
        f"{prefix}.beta": np.zeros(c, dtype=dtype),
        f"{prefix}.running_mean": np.zeros(c, dtype=dtype),
        f"{prefix}.running_var": np.ones(c, dtype=dtype),
    }


def init_unit_params(spec: ResidualUnitSpec, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    cin, cout = spec.in_channels, spec.out_channels
    params = {}
    # a bias feeding straight into train-mode BN is cancelled by the batch mean
    params.update(_init_conv(rng, cout, cin, 3, dtype, "conv1", bias=False))
    params.update(_init_conv(rng, cout, cout, 3, dtype, "conv2", bias=spec.kind is UnitKind.PROPOSED))
    if spec.kind is UnitKind.ORIGINAL:
        params.update(_init_bn(cout, dtype, "bn1"))
    else:
        params.update(_init_bn(cin, dtype, "bn1"))
    params.update(_init_bn(cout, dtype, "bn2"))
    return params


def build_network(depth: int, kind, num_classes: int, seed: int = 0, widths=DEFAULT_WIDTHS,
                  dropout_rate: float = 0.5, dtype=np.float32) -> tuple[NetworkSpec, dict[str, np.ndarray]]:
    """He-normal convolution/FC weights, zero biases, BN gamma=1 and beta=0."""
    spec = NetworkSpec(depth, UnitKind.parse(kind), num_classes, tuple(widths), dropout_rate)
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    params.update(_init_conv(rng, spec.widths[0], spec.in_channels, 3, dtype, "stem.conv", bias=False))
    params.update(_init_bn(spec.widths[0], dtype, "stem.bn"))
    for prefix, unit in spec.units():
        for k, v in init_unit_params(unit, rng, dtype).items():
            params[f"{prefix}.{k}"] = v
    c = spec.widths[-1]
    params["fc.w"] = _he_normal(rng, (c, num_classes), c, dtype)
    params["fc.b"] = np.zeros(num_classes, dtype=dtype)
    return spec, params


# ---------------------------------------------------------------------------
# residual units


def shortcut_forward(x, out_channels: int, stride: int):
    """Identity, or stride-2 top-left subsampling followed by zero channel padding."""
    if stride == 1 and x.shape[1] == out_channels:
        return x
    y = x[:, :, ::stride, ::stride]
    extra = out_channels - x.shape[1]
    if extra:
        y = np.concatenate([y, np.zeros((y.shape[0], extra) + y.shape[2:], dtype=x.dtype)], axis=1)
    return np.ascontiguousarray(y)


def shortcut_backward(dy, in_shape, stride: int):
    if stride == 1 and dy.shape[1] == in_shape[1]:
        return dy
    dx = np.zeros(in_shape, dtype=dy.dtype)
    dx[:, :, ::stride, ::stride] = dy[:, : in_shape[1]]
    return dx


def _bn(x, params, name, mode, running):
    out, cache, (rm, rv) = T.batchnorm_forward(
        x, params[f"{name}.gamma"], params[f"{name}.beta"], mode,
        params[f"{name}.running_mean"], params[f"{name}.running_var"],
    )
    if mode == "train":
        running[f"{name}.running_mean"] = rm
        running[f"{name}.running_var"] = rv
    return out, cache


def unit_forward(spec: ResidualUnitSpec, params: Mapping[str, np.ndarray], x, mode: str = "train",
                 rng: Optional[np.random.Generator] = None):
    """Forward pass of one residual unit.

    ``cache["branch"]`` holds the residual branch output F(x) (for the
    original unit: before the post-addition ReLU) and ``cache["running"]``
    the updated BatchNorm statistics in train mode.
    """
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"unit expects {spec.in_channels} input channels, got shape {x.shape}")
    running: dict[str, np.ndarray] = {}
    c: dict = {"x_shape": x.shape, "running": running}
    if spec.kind is UnitKind.ORIGINAL:
        h, c["conv1"] = T.conv2d_forward(x, params["conv1.w"], None, spec.stride, "same")
        h, c["bn1"] = _bn(h, params, "bn1", mode, running)
        h, c["relu1"] = T.relu_forward(h)
        h, c["conv2"] = T.conv2d_forward(h, params["conv2.w"], None, 1, "same")
        branch, c["bn2"] = _bn(h, params, "bn2", mode, running)
        y, c["relu_out"] = T.relu_forward(branch + shortcut_forward(x, spec.out_channels, spec.stride))
    else:
        h, c["bn1"] = _bn(x, params, "bn1", mode, running)
        h, c["relu1"] = T.relu_forward(h)
        h, c["conv1"] = T.conv2d_forward(h, params["conv1.w"], None, spec.stride, "same")
        h, c["bn2"] = _bn(h, params, "bn2", mode, running)
        h, c["relu2"] = T.relu_forward(h)
        h, c["dropout"] = T.dropout_forward(h, spec.dropout_rate, mode, rng)
        branch, c["conv2"] = T.conv2d_forward(h, params["conv2.w"], params["conv2.b"], 1, "same")
        y = branch + shortcut_forward(x, spec.out_channels, spec.stride)
    c["branch"] = branch
    return y, c


def unit_backward(spec: ResidualUnitSpec, params: Mapping[str, np.ndarray], cache, grad_y) -> LayerGrads:
    g: dict[str, np.ndarray] = {}
    if spec.kind is UnitKind.ORIGINAL:
        d = T.relu_backward(grad_y, cache["relu_out"])
        d_short = d
        d, g["bn2.gamma"], g["bn2.beta"] = T.batchnorm_backward(d, cache["bn2"])
        d, g["conv2.w"], _ = T.conv2d_backward(d, cache["conv2"])
        d = T.relu_backward(d, cache["relu1"])
        d, g["bn1.gamma"], g["bn1.beta"] = T.batchnorm_backward(d, cache["bn1"])
        d, g["conv1.w"], _ = T.conv2d_backward(d, cache["conv1"])
    else:
        d_short = grad_y
        d, g["conv2.w"], g["conv2.b"] = T.conv2d_backward(grad_y, cache["conv2"])
        d = T.dropout_backward(d, cache["dropout"])
        d = T.relu_backward(d, cache["relu2"])
        d, g["bn2.gamma"], g["bn2.beta"] = T.batchnorm_backward(d, cache["bn2"])
        d, g["conv1.w"], _ = T.conv2d_backward(d, cache["conv1"])
        d = T.relu_backward(d, cache["relu1"])
        d, g["bn1.gamma"], g["bn1.beta"] = T.batchnorm_backward(d, cache["bn1"])
    grad_input = d + shortcut_backward(d_short, cache["x_shape"], spec.stride)
    return LayerGrads(grad_input, g)


# ---------------------------------------------------------------------------
# full network


def _check_input(spec: NetworkSpec, x):
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"network expects (N, {spec.in_channels}, H, W) input, got {x.shape}")
    n_down = sum(1 for _, u in spec.units() if u.stride == 2)
    if min(x.shape[2:]) < 2 ** n_down:
        raise ShapeError(f"input {x.shape[2:]} too small for {n_down} downsampling stages")


def network_forward(spec: NetworkSpec, params: Mapping[str, np.ndarray], x, mode: str = "infer",
                    rng: Optional[np.random.Generator] = None):
    """Stem, residual units, global mean pooling and the FC classifier.

    Returns ``(logits, cache)``; in train mode ``cache["running"]`` maps full
    parameter names to updated BatchNorm statistics.
    """
    _check_input(spec, x)
    if mode == "train" and rng is None and spec.kind is UnitKind.PROPOSED and spec.dropout_rate > 0:
        raise ValueError("train mode needs an rng for dropout")
    running: dict[str, np.ndarray] = {}
    cache: dict = {"running": running, "units": []}
    h, cache["stem.conv"] = T.conv2d_forward(x, params["stem.conv.w"], None, 1, "same")
    h, cache["stem.bn"] = _bn(h, params, "stem.bn", mode, running)
    h, cache["stem.relu"] = T.relu_forward(h)
    for prefix, unit in spec.units():
        h, ucache = unit_forward(unit, sub_params(params, prefix), h, mode, rng)
        for k, v in ucache["running"].items():
            running[f"{prefix}.{k}"] = v
        cache["units"].append(ucache)
    h, cache["pool"] = T.global_mean_pool_forward(h)
    logits, cache["fc"] = T.fc_forward(h, params["fc.w"], params["fc.b"])
    return logits, cache


def network_backward(spec: NetworkSpec, params: Mapping[str, np.ndarray], cache, dlogits) -> LayerGrads:
    grads: dict[str, np.ndarray] = {}
    d, grads["fc.w"], grads["fc.b"] = T.fc_backward(dlogits, cache["fc"])
    d = T.global_mean_pool_backward(d, cache["pool"])
    for (prefix, unit), ucache in zip(reversed(spec.units()), reversed(cache["units"])):
        lg = unit_backward(unit, sub_params(params, prefix), ucache, d)
        d = lg.grad_input
        for k, v in lg.grad_params.items():
            grads[f"{prefix}.{k}"] = v
    d = T.relu_backward(d, cache["stem.relu"])
    d, grads["stem.bn.gamma"], grads["stem.bn.beta"] = T.batchnorm_backward(d, cache["stem.bn"])
    d, grads["stem.conv.w"], _ = T.conv2d_backward(d, cache["stem.conv"])
    return LayerGrads(d, grads)


def predict(spec: NetworkSpec, params, x, batch_size: int = 256) -> np.ndarray:
    """Infer-mode logits, evaluated in batches."""
    outs = [network_forward(spec, params, x[i:i + batch_size], "infer")[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0, spec.num_classes), dtype=np.float32)


# ---------------------------------------------------------------------------
# identity-path analysis


@dataclass
class ResidualTrace:
    inputs: list[np.ndarray]
    branches: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.inputs[-1]

    def accumulate(self, start: int, stop: int) -> np.ndarray:
        """``x_start + F(x_start) + ... + F(x_{stop-1})`` summed left to right."""
        acc = self.inputs[start]
        for f in self.branches[start:stop]:
            acc = acc + f
        return acc


def residual_trace(units: Sequence[ResidualUnitSpec], unit_params: Sequence[Mapping[str, np.ndarray]], x,
                   mode: str = "infer", rng: Optional[np.random.Generator] = None) -> ResidualTrace:
    """Run a stack of identity-shortcut proposed units, recording each unit input and branch output."""
    if len(units) != len(unit_params):
        raise ShapeError("need one parameter set per unit")
    for u in units:
        if u.kind is not UnitKind.PROPOSED:
            raise KindError("residual_trace only applies to proposed units; the post-addition ReLU of "
                            "original units breaks additivity")
        if not u.identity_shortcut:
            raise ShapeError("residual_trace needs stride-1, same-width units")
    inputs, branches = [x], []
    for u, p in zip(units, unit_params):
        x, cache = unit_forward(u, p, x, mode, rng)
        branches.append(cache["branch"])
        inputs.append(x)
    return ResidualTrace(inputs, branches)


def stage_units(spec: NetworkSpec, params: Mapping[str, np.ndarray], stage: int, identity_only: bool = True):
    """``(unit_specs, unit_params)`` for one stage (1-based), optionally skipping the widening unit."""
    specs, ps = [], []
    for prefix, unit in spec.units():
        if not prefix.startswith(f"stage{stage}."):
            continue
        if identity_only and not unit.identity_shortcut:
            continue
        specs.append(unit)
        ps.append(sub_params(params, prefix))
    return specs, ps


# ---------------------------------------------------------------------------
# parameter counting


def _unit_param_count(u: ResidualUnitSpec) -> int:
    cin, cout = u.in_channels, u.out_channels
    convs = cin * cout * 9 + cout * cout * 9
    bias = cout if u.kind is UnitKind.PROPOSED else 0
    bns = 2 * cout + 2 * (cout if u.kind is UnitKind.ORIGINAL else cin)
    return convs + bias + bns


def count_params(spec_or_params) -> int:
    """Trainable parameter count (conv weights, residual-branch biases, BN gamma/beta, FC).

    Accepts a :class:`NetworkSpec` (closed form) or a parameter dict.
    """
    if isinstance(spec_or_params, NetworkSpec):
        s = spec_or_params
        w0, wl = s.widths[0], s.widths[-1]
        stem = s.in_channels * w0 * 9 + 2 * w0
        fc = wl * s.num_classes + s.num_classes
        return stem + sum(_unit_param_count(u) for _, u in s.units()) + fc
    return int(sum(v.size for k, v in spec_or_params.items() if is_trainable(k)))
