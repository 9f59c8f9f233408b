import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelres.errors import DepthError, KindError, ShapeError
from skelres.gradcheck import check_network, check_unit
from skelres.resnet import (
    VALID_DEPTHS,
    NetworkSpec,
    ResidualTrace,
    ResidualUnitSpec,
    UnitKind,
    build_network,
    count_params,
    init_unit_params,
    is_decayed,
    is_trainable,
    network_forward,
    predict,
    residual_trace,
    shortcut_backward,
    shortcut_forward,
    stage_units,
    unit_backward,
    unit_forward,
)


def unit_stack(kind, n, channels=4, seed=0, zero_last_conv=False):
    rng = np.random.default_rng(seed)
    specs = [ResidualUnitSpec(kind, channels, channels, 1) for _ in range(n)]
    params = []
    for s in specs:
        p = {k: v.astype(np.float64) for k, v in init_unit_params(s, rng, np.float64).items()}
        for k in p:
            if k.endswith(".gamma"):
                p[k] = rng.uniform(0.5, 1.5, p[k].shape)
            elif k.endswith(".beta") or k.endswith(".b"):
                p[k] = rng.normal(0, 0.1, p[k].shape)
            elif k.endswith("running_mean"):
                p[k] = rng.normal(0, 0.2, p[k].shape)
            elif k.endswith("running_var"):
                p[k] = rng.uniform(0.5, 2.0, p[k].shape)
        if zero_last_conv:
            p["conv2.w"] = np.zeros_like(p["conv2.w"])
            if "conv2.b" in p:
                p["conv2.b"] = np.zeros_like(p["conv2.b"])
        params.append(p)
    return specs, params


def run_stack(specs, params, x, mode, seed=0):
    rng = np.random.default_rng(seed)
    caches = []
    for s, p in zip(specs, params):
        x, c = unit_forward(s, p, x, mode, rng)
        caches.append(c)
    return x, caches


def back_stack(specs, params, caches, g):
    for s, p, c in reversed(list(zip(specs, params, caches))):
        g = unit_backward(s, p, c, g).grad_input
    return g


# ---------------------------------------------------------------------------
# specs


@pytest.mark.parametrize("depth", [1, 8, 21, 26, 38, 200])
def test_invalid_depths(depth):
    with pytest.raises(DepthError):
        NetworkSpec(depth, "proposed", 8)


@pytest.mark.parametrize("depth, n", [(20, 3), (32, 5), (44, 7), (56, 9), (110, 18)])
def test_units_per_stage(depth, n):
    spec = NetworkSpec(depth, "original", 8)
    assert spec.units_per_stage == n
    units = spec.units()
    assert len(units) == 3 * n == spec.num_units
    downs = [name for name, u in units if u.stride == 2]
    assert downs == ["stage2.unit0", "stage3.unit0"]
    assert [u.out_channels for _, u in units] == [16] * n + [32] * n + [64] * n


def test_unit_spec_invariants():
    with pytest.raises(ShapeError):
        ResidualUnitSpec("proposed", 16, 32, 1)
    with pytest.raises(ShapeError):
        ResidualUnitSpec("proposed", 16, 16, 2)
    with pytest.raises(ShapeError):
        ResidualUnitSpec("proposed", 32, 16, 2)
    with pytest.raises(KindError):
        ResidualUnitSpec("preact", 16, 16)
    assert ResidualUnitSpec("ORIGINAL", 4, 4).kind is UnitKind.ORIGINAL


def test_spec_dict_round_trip():
    spec = NetworkSpec(44, "proposed", 6, (8, 16, 32), 0.3)
    assert NetworkSpec.from_dict(spec.to_dict()) == spec


def test_parameter_naming():
    _, params = build_network(20, "proposed", 8)
    assert "stem.conv.b" not in params
    assert "stage1.unit0.conv2.b" in params and "stage1.unit0.conv1.b" not in params
    assert is_decayed("stage1.unit0.conv1.w") and is_decayed("fc.w")
    assert not is_decayed("fc.b") and not is_decayed("stem.bn.gamma")
    assert not is_trainable("stem.bn.running_mean") and is_trainable("stem.bn.beta")
    _, orig = build_network(20, "original", 8)
    assert "stage1.unit0.conv2.b" not in orig


def test_he_initialization_scale():
    _, params = build_network(110, "original", 8, seed=3)
    w = params["stage3.unit5.conv1.w"]
    assert abs(w.std() - np.sqrt(2.0 / (64 * 9))) < 0.01 * np.sqrt(2.0 / (64 * 9)) * 10
    assert params["stage3.unit5.bn1.gamma"].tolist() == [1.0] * 64


# ---------------------------------------------------------------------------
# parameter counts


FROZEN_COUNTS = {
    ("original", 20): 269592, ("original", 32): 464024, ("original", 44): 658456,
    ("original", 56): 852888, ("original", 110): 1727832,
    ("proposed", 20): 269832, ("proposed", 32): 464488, ("proposed", 44): 659144,
    ("proposed", 56): 853800, ("proposed", 110): 1729752,
}


@pytest.mark.parametrize("kind", ["original", "proposed"])
@pytest.mark.parametrize("depth", VALID_DEPTHS)
def test_count_params_matches_built_tensors(kind, depth):
    spec, params = build_network(depth, kind, 8)
    assert count_params(spec) == count_params(params) == FROZEN_COUNTS[(kind, depth)]


def test_count_params_by_hand_for_depth_20():
    stem = 3 * 16 * 9 + 2 * 16
    stage1 = 3 * (2 * 16 * 16 * 9 + 4 * 16)
    stage2 = (16 * 32 * 9 + 32 * 32 * 9 + 4 * 32) + 2 * (2 * 32 * 32 * 9 + 4 * 32)
    stage3 = (32 * 64 * 9 + 64 * 64 * 9 + 4 * 64) + 2 * (2 * 64 * 64 * 9 + 4 * 64)
    fc = 64 * 8 + 8
    assert count_params(NetworkSpec(20, "original", 8)) == stem + stage1 + stage2 + stage3 + fc


# ---------------------------------------------------------------------------
# shortcut


def test_shortcut_subsamples_and_pads():
    x = np.arange(2 * 2 * 4 * 4, dtype=float).reshape(2, 2, 4, 4)
    y = shortcut_forward(x, 4, 2)
    assert y.shape == (2, 4, 2, 2)
    np.testing.assert_array_equal(y[:, :2], x[:, :, ::2, ::2])
    assert np.all(y[:, 2:] == 0)
    dx = shortcut_backward(np.ones_like(y), x.shape, 2)
    assert dx.sum() == 2 * 2 * 4
    np.testing.assert_array_equal(dx[:, :, 1::2], 0)
    assert shortcut_forward(x, 2, 1) is x


# ---------------------------------------------------------------------------
# units and network


@pytest.mark.parametrize("kind", ["original", "proposed"])
@pytest.mark.parametrize("down", [False, True])
def test_unit_gradients(kind, down):
    for seed in range(3):
        r = check_unit(kind, seed, down)
        assert r.passed, (kind, down, seed, r.errors)


@pytest.mark.parametrize("kind", ["original", "proposed"])
def test_unit_gradients_infer_mode(kind):
    r = check_unit(kind, 0, False, mode="infer")
    assert r.passed, r.errors


@pytest.mark.parametrize("kind", ["original", "proposed"])
def test_network_gradients(kind):
    r = check_network(kind, 1)
    assert r.passed, r.errors


def test_network_forward_shapes_and_determinism():
    spec, params = build_network(20, "proposed", 5, widths=(4, 8, 16))
    x = np.random.default_rng(0).normal(size=(3, 3, 32, 32)).astype(np.float32)
    a = predict(spec, params, x)
    b = predict(spec, params, x, batch_size=1)
    assert a.shape == (3, 5)
    np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6)
    np.testing.assert_array_equal(a, predict(spec, params, x))


def test_dropout_only_active_in_train_mode():
    spec, params = build_network(20, "proposed", 3, widths=(2, 4, 8), dtype=np.float64)
    x = np.random.default_rng(0).normal(size=(4, 3, 8, 8))
    t1, _ = network_forward(spec, params, x, "train", np.random.default_rng(1))
    t2, _ = network_forward(spec, params, x, "train", np.random.default_rng(2))
    assert not np.array_equal(t1, t2)
    i1, _ = network_forward(spec, params, x, "infer")
    np.testing.assert_array_equal(i1, network_forward(spec, params, x, "infer")[0])


def test_train_mode_reports_running_stats():
    spec, params = build_network(20, "original", 3, widths=(2, 4, 8))
    _, cache = network_forward(spec, params, np.ones((2, 3, 8, 8), np.float32), "train")
    keys = set(cache["running"])
    assert keys == {k for k in params if k.endswith((".running_mean", ".running_var"))}


def test_network_input_checks():
    spec, params = build_network(20, "proposed", 3, widths=(2, 4, 8))
    with pytest.raises(ShapeError):
        network_forward(spec, params, np.zeros((1, 1, 8, 8)))
    with pytest.raises(ShapeError):
        network_forward(spec, params, np.zeros((1, 3, 2, 2)))
    with pytest.raises(ValueError):
        network_forward(spec, params, np.zeros((2, 3, 8, 8)), "train")


# ---------------------------------------------------------------------------
# identity propagation


@pytest.mark.parametrize("mode", ["train", "infer"])
def test_proposed_stack_with_zeroed_final_convs_is_identity(mode):
    specs, params = unit_stack("proposed", 10, zero_last_conv=True)
    x = np.random.default_rng(5).normal(size=(3, 4, 6, 6))
    y, caches = run_stack(specs, params, x, mode)
    assert np.array_equal(y, x)
    g = np.random.default_rng(6).normal(size=x.shape)
    assert np.array_equal(back_stack(specs, params, caches, g), g)


def test_original_stack_with_zeroed_final_convs_clips_negatives():
    specs, params = unit_stack("original", 10, zero_last_conv=True)
    for p in params:
        p["bn2.beta"] = np.zeros_like(p["bn2.beta"])
    x = np.random.default_rng(5).normal(size=(3, 4, 6, 6))
    y, _ = run_stack(specs, params, x, "train")
    assert (x < 0).any()
    assert not np.array_equal(y, x)
    np.testing.assert_array_equal(y, np.maximum(x, 0))


# ---------------------------------------------------------------------------
# additivity


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 8), mode=st.sampled_from(["train", "infer"]))
def test_proposed_trace_is_additive(seed, n, mode):
    specs, params = unit_stack("proposed", n, seed=seed)
    x = np.random.default_rng(seed + 1).normal(size=(2, 4, 5, 5))
    trace = residual_trace(specs, params, x, mode, np.random.default_rng(seed))
    for start in range(n + 1):
        # the forward pass is the left-to-right sum, so this is exact
        assert np.array_equal(trace.accumulate(start, n), trace.output)
        delta = trace.output - trace.inputs[start]
        total = sum(trace.branches[start:], np.zeros_like(x))
        np.testing.assert_allclose(delta, total, rtol=0, atol=1e-12 * max(1.0, np.abs(trace.output).max()))


def test_original_stack_violates_additivity():
    specs, params = unit_stack("original", 4, seed=2)
    x = np.random.default_rng(3).normal(size=(2, 4, 5, 5))
    _, caches = run_stack(specs, params, x, "infer")
    inputs = [x] + [None] * 4
    for i, (s, p) in enumerate(zip(specs, params)):
        inputs[i + 1] = unit_forward(s, p, inputs[i], "infer")[0]
    trace = ResidualTrace(inputs, [c["branch"] for c in caches])
    assert not np.allclose(trace.accumulate(0, 4), trace.output)


def test_residual_trace_rejects_original_and_projection_units():
    specs, params = unit_stack("original", 2)
    with pytest.raises(KindError):
        residual_trace(specs, params, np.zeros((1, 4, 3, 3)))
    down = ResidualUnitSpec("proposed", 2, 4, 2)
    with pytest.raises(ShapeError):
        residual_trace([down], [init_unit_params(down, np.random.default_rng(0))], np.zeros((1, 2, 4, 4)))


def test_stage_units_on_built_network():
    spec, params = build_network(32, "proposed", 4, widths=(2, 4, 8), dtype=np.float64)
    specs, ps = stage_units(spec, params, 2)
    assert len(specs) == 4
    x = np.random.default_rng(0).normal(size=(2, 4, 8, 8))
    trace = residual_trace(specs, ps, x)
    assert np.array_equal(trace.accumulate(0, 4), trace.output)
    assert len(stage_units(spec, params, 2, identity_only=False)[0]) == 5
