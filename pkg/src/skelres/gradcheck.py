"""Finite-difference verification of every layer, both unit kinds and a small network."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from . import tensor as T
from .resnet import (
    ResidualUnitSpec,
    UnitKind,
    build_network,
    init_unit_params,
    is_trainable,
    network_backward,
    network_forward,
    unit_backward,
    unit_forward,
)

TOLERANCES = {
    "conv2d": 1e-5,
    "conv2d_1x1": 1e-5,
    "batchnorm_train": 1e-4,
    "batchnorm_infer": 1e-5,
    "relu": 1e-6,
    "dropout": 1e-5,
    "global_mean_pool": 1e-5,
    "fully_connected": 1e-5,
    "softmax_cross_entropy": 1e-6,
    # units contain BatchNorm, so they inherit its tolerance
    "unit_original": 1e-4,
    "unit_original_down": 1e-4,
    "unit_proposed": 1e-4,
    "unit_proposed_down": 1e-4,
    "network_original": 1e-3,
    "network_proposed": 1e-3,
}

LAYER_CHECKS = (
    "conv2d", "conv2d_1x1", "batchnorm_train", "batchnorm_infer", "relu", "dropout",
    "global_mean_pool", "fully_connected", "softmax_cross_entropy",
)


@dataclass
class CheckResult:
    name: str
    seed: int
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _linear_loss(forward: Callable, backward: Callable, out_shape, rng):
    """Scalarize a layer as ``sum(out * R)`` for a fixed random ``R``."""
    r = rng.standard_normal(out_shape)

    def fn(inp):
        out, cache = forward(inp)
        return float(np.sum(out * r)), backward(r, cache)

    return fn


def _layer_problem(name: str, rng: np.random.Generator, corrupt: Optional[str]):
    def maybe_corrupt(grads):
        if corrupt == name:
            return {k: (v * 1.001 if v is not None else None) for k, v in grads.items()}
        return grads

    if name in ("conv2d", "conv2d_1x1"):
        k = 3 if name == "conv2d" else 1
        stride = int(rng.integers(1, 3))
        pad = "same" if k == 3 else 0
        inputs = {
            "x": rng.standard_normal((2, 3, 5, 5)),
            "w": rng.standard_normal((4, 3, k, k)),
            "b": rng.standard_normal(4),
        }
        out_shape = T.conv2d_forward(inputs["x"], inputs["w"], inputs["b"], stride, pad)[0].shape

        def fwd(p):
            return T.conv2d_forward(p["x"], p["w"], p["b"], stride, pad)

        def bwd(d, cache):
            dx, dw, db = T.conv2d_backward(d, cache)
            return maybe_corrupt({"x": dx, "w": dw, "b": db})

        return inputs, _linear_loss(fwd, bwd, out_shape, rng)

    if name in ("batchnorm_train", "batchnorm_infer"):
        mode = name.split("_")[1]
        inputs = {
            "x": rng.standard_normal((4, 3, 3, 3)) * 2 + 0.5,
            "gamma": rng.uniform(0.5, 1.5, 3),
            "beta": rng.standard_normal(3),
        }
        rm, rv = rng.standard_normal(3), rng.uniform(0.5, 2.0, 3)

        def fwd(p):
            out, cache, _ = T.batchnorm_forward(p["x"], p["gamma"], p["beta"], mode, rm, rv)
            return out, cache

        def bwd(d, cache):
            dx, dg, db = T.batchnorm_backward(d, cache)
            return maybe_corrupt({"x": dx, "gamma": dg, "beta": db})

        return inputs, _linear_loss(fwd, bwd, inputs["x"].shape, rng)

    if name == "relu":
        shape = (2, 3, 4, 4)
        # keep inputs away from the kink at 0
        x = rng.uniform(0.1, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
        return {"x": x}, _linear_loss(
            lambda p: T.relu_forward(p["x"]),
            lambda d, c: maybe_corrupt({"x": T.relu_backward(d, c)}),
            shape, rng,
        )

    if name == "dropout":
        shape = (2, 3, 4, 4)
        mask_seed = int(rng.integers(2**31))
        return {"x": rng.standard_normal(shape)}, _linear_loss(
            lambda p: T.dropout_forward(p["x"], 0.5, "train", np.random.default_rng(mask_seed)),
            lambda d, c: maybe_corrupt({"x": T.dropout_backward(d, c)}),
            shape, rng,
        )

    if name == "global_mean_pool":
        return {"x": rng.standard_normal((2, 3, 4, 4))}, _linear_loss(
            lambda p: T.global_mean_pool_forward(p["x"]),
            lambda d, c: maybe_corrupt({"x": T.global_mean_pool_backward(d, c)}),
            (2, 3), rng,
        )

    if name == "fully_connected":
        inputs = {"x": rng.standard_normal((3, 5)), "w": rng.standard_normal((5, 4)), "b": rng.standard_normal(4)}

        def bwd(d, cache):
            dx, dw, db = T.fc_backward(d, cache)
            return maybe_corrupt({"x": dx, "w": dw, "b": db})

        return inputs, _linear_loss(lambda p: T.fc_forward(p["x"], p["w"], p["b"]), bwd, (3, 4), rng)

    if name == "softmax_cross_entropy":
        labels = rng.integers(0, 5, size=4)

        def fn(p):
            loss, grad = T.softmax_cross_entropy(p["logits"], labels)
            return loss, maybe_corrupt({"logits": grad})

        return {"logits": rng.standard_normal((4, 5))}, fn

    raise KeyError(name)


def check_layer(name: str, seed: int, eps: float = 1e-4, corrupt: Optional[str] = None) -> CheckResult:
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    inputs, fn = _layer_problem(name, rng, corrupt)
    return CheckResult(name, seed, T.finite_diff_check(fn, inputs, eps), TOLERANCES[name])


def _randomize_bn(params, rng):
    for k in params:
        if k.endswith(".gamma"):
            params[k] = rng.uniform(0.5, 1.5, params[k].shape)
        elif k.endswith(".beta") or k.endswith(".b"):
            params[k] = rng.standard_normal(params[k].shape) * 0.1
    return params


def check_unit(kind, seed: int, downsample: bool = False, eps: float = 1e-4, mode: str = "train") -> CheckResult:
    kind = UnitKind.parse(kind)
    rng = np.random.default_rng([seed, 7 if kind is UnitKind.ORIGINAL else 11, int(downsample)])
    spec = ResidualUnitSpec(kind, 2, 4 if downsample else 2, 2 if downsample else 1)
    params = _randomize_bn({k: v.astype(np.float64) for k, v in init_unit_params(spec, rng, np.float64).items()}, rng)
    x = rng.standard_normal((2, 2, 4, 4))
    out_shape = (2, spec.out_channels, 2 if downsample else 4, 2 if downsample else 4)
    r = rng.standard_normal(out_shape)
    mask_seed = int(rng.integers(2**31))
    trainable = [k for k in params if is_trainable(k)]

    def fn(inp):
        p = {**params, **{k: inp[k] for k in trainable}}
        y, cache = unit_forward(spec, p, inp["x"], mode, np.random.default_rng(mask_seed))
        lg = unit_backward(spec, p, cache, r)
        return float(np.sum(y * r)), {"x": lg.grad_input, **lg.grad_params}

    inputs = {"x": x, **{k: params[k] for k in trainable}}
    name = f"unit_{kind.value}" + ("_down" if downsample else "")
    return CheckResult(name, seed, T.finite_diff_check(fn, inputs, eps), TOLERANCES[name])


def check_network(kind, seed: int, depth: int = 20, widths=(2, 4, 8), eps: float = 1e-6,
                  max_entries: Optional[int] = 12) -> CheckResult:
    """Full forward/backward of a width-reduced network under softmax cross-entropy.

    A deep stack of ReLUs puts many pre-activations near zero, so a smaller
    step than the per-layer checks is needed to avoid straddling kinks.
    """
    kind = UnitKind.parse(kind)
    rng = np.random.default_rng([seed, 99])
    spec, params = build_network(depth, kind, 3, seed=seed, widths=widths, dtype=np.float64)
    params = _randomize_bn(params, rng)
    x = rng.standard_normal((2, 3, 8, 8))
    labels = rng.integers(0, 3, size=2)
    mask_seed = int(rng.integers(2**31))
    trainable = [k for k in params if is_trainable(k)]

    def fn(inp):
        p = {**params, **{k: inp[k] for k in trainable}}
        logits, cache = network_forward(spec, p, inp["x"], "train", np.random.default_rng(mask_seed))
        loss, dlogits = T.softmax_cross_entropy(logits, labels)
        lg = network_backward(spec, p, cache, dlogits)
        return loss, {"x": lg.grad_input, **lg.grad_params}

    inputs = {"x": x, **{k: params[k] for k in trainable}}
    errors = T.finite_diff_check(fn, inputs, eps, max_entries=max_entries, rng=np.random.default_rng(seed))
    return CheckResult(f"network_{kind.value}", seed, errors, TOLERANCES[f"network_{kind.value}"])


def run_gradcheck(seeds: Iterable[int] = range(20), kinds=("original", "proposed"), depth: int = 20,
                  network_seeds: Iterable[int] = (0,), corrupt: Optional[str] = None) -> list[CheckResult]:
    results = []
    seeds = list(seeds)
    for name in LAYER_CHECKS:
        for s in seeds:
            results.append(check_layer(name, s, corrupt=corrupt))
    for kind in kinds:
        for down in (False, True):
            for s in seeds:
                results.append(check_unit(kind, s, down))
    for kind in kinds:
        for s in network_seeds:
            results.append(check_network(kind, s, depth))
    return results


def summarize(results: list[CheckResult]) -> list[dict]:
    """One row per check name: worst error over seeds, tolerance, pass flag."""
    rows: dict[str, dict] = {}
    for r in results:
        row = rows.setdefault(r.name, {"check": r.name, "max_rel_error": 0.0, "tolerance": r.tolerance,
                                       "seeds": 0, "passed": True, "worst_param": None})
        row["seeds"] += 1
        if r.max_error >= row["max_rel_error"]:
            row["max_rel_error"] = r.max_error
            row["worst_param"] = max(r.errors, key=r.errors.get) if r.errors else None
        row["passed"] = row["passed"] and r.passed
    return list(rows.values())
