import json
import math
from importlib import resources
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from PIL import Image

from skelres.encoder import (
    DEFAULT_POLICY,
    SHIPPED_LAYOUTS,
    AugmentPolicy,
    JointPermutation,
    augment,
    center_crop,
    encode_image,
    load_permutation,
    load_png,
    normalize_and_quantize,
    reorder_joints,
    resize,
    round_half_away,
    save_png,
)
from skelres.errors import CropTooLargeError, DegenerateRangeError, LengthMismatchError, UnsupportedPngError
from skelres.skeldata import SkeletonSequence

# ---------------------------------------------------------------------------
# exact scalar oracles


def oracle_round(v: Fraction) -> int:
    return math.floor(v + Fraction(1, 2)) if v >= 0 else -math.floor(-v + Fraction(1, 2))


def oracle_quantize(coords):
    """Per-pixel min-max scaling over every coordinate, in exact rationals."""
    n, k, _ = coords.shape
    vals = [Fraction(float(v)) for v in coords.ravel()]
    lo, hi = min(vals), max(vals)
    out = np.zeros((k, n, 3), dtype=np.int64)
    for f in range(n):
        for j in range(k):
            for c in range(3):
                out[j, f, c] = oracle_round(255 * (Fraction(float(coords[f, j, c])) - lo) / (hi - lo))
    return out


def oracle_nearest(img, ht, wt):
    hs, ws = img.shape[:2]
    rows = [math.floor((Fraction(i) + Fraction(1, 2)) * hs / ht) for i in range(ht)]
    cols = [math.floor((Fraction(j) + Fraction(1, 2)) * ws / wt) for j in range(wt)]
    return np.array([[img[r, c] for c in cols] for r in rows])


def _keys(d):
    d = abs(d)
    if d <= 1:
        return Fraction(3, 2) * d**3 - Fraction(5, 2) * d**2 + 1
    if d < 2:
        return -Fraction(1, 2) * d**3 + Fraction(5, 2) * d**2 - 4 * d + 2
    return Fraction(0)


def _taps(ns, nt):
    out = []
    for i in range(nt):
        x = (Fraction(i) + Fraction(1, 2)) * Fraction(ns, nt) - Fraction(1, 2)
        b = math.floor(x)
        out.append([(min(max(b + t, 0), ns - 1), _keys(x - (b + t))) for t in (-1, 0, 1, 2)])
    return out


def oracle_bicubic_exact(img, ht, wt):
    """Unrounded, unclamped exact values, ``(ht, wt)`` for a single channel."""
    rows, cols = _taps(img.shape[0], ht), _taps(img.shape[1], wt)
    return [[sum(wr * wc * int(img[r, c]) for r, wr in rows[i] for c, wc in cols[j]) for j in range(wt)]
            for i in range(ht)]


def seq(coords):
    return SkeletonSequence(np.asarray(coords, dtype=np.float64), 1, 1, 1)


# ---------------------------------------------------------------------------
# normalization


def test_round_half_away():
    np.testing.assert_array_equal(round_half_away(np.array([0.5, 1.5, 2.5, -0.5, -1.5, 127.5, 0.49])),
                                  [1, 2, 3, -1, -2, 128, 0])


def test_range_endpoints_and_midpoint():
    img = normalize_and_quantize(seq([[[-1.0, 0.0, 1.0]]]))
    assert img.tolist() == [[[0, 128, 255]]]


def test_degenerate_sequence():
    with pytest.raises(DegenerateRangeError):
        normalize_and_quantize(seq(np.full((4, 3, 3), 0.7)))


def test_layout_is_joints_by_frames():
    coords = [[[0.0, 1.0, 2.0], [0.5, -1.0, 3.0]],
              [[1.5, 0.25, -0.5], [2.0, 2.5, 1.0]],
              [[3.0, -1.0, 0.1], [0.3, 0.7, 1.9]]]
    img = normalize_and_quantize(seq(coords))
    assert img.dtype == np.uint8 and img.shape == (2, 3, 3)
    # frozen from the rational oracle
    assert img.tolist() == [
        [[64, 128, 191], [159, 80, 32], [255, 0, 70]],
        [[96, 0, 255], [191, 223, 128], [83, 108, 185]],
    ]


coords_strategy = hnp.arrays(
    np.float64,
    st.tuples(st.integers(1, 8), st.integers(1, 6), st.just(3)),
    elements=st.floats(-5.0, 5.0, allow_nan=False, width=64),
)


@settings(max_examples=100, deadline=None)
@given(coords=coords_strategy)
def test_matches_scalar_oracle(coords):
    assume(coords.max() > coords.min())
    np.testing.assert_array_equal(normalize_and_quantize(seq(coords)), oracle_quantize(coords))


@settings(max_examples=100, deadline=None)
@given(coords=coords_strategy)
def test_endpoints_attained(coords):
    assume(coords.max() > coords.min())
    img = normalize_and_quantize(seq(coords))
    assert img.min() == 0 and img.max() == 255


@settings(max_examples=100, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    a=st.sampled_from([0.5, 2.0, 4.0, 0.25, 8.0]),
    b=st.integers(-64, 64).map(lambda i: i / 8),
)
def test_positive_affine_invariance(seed, a, b):
    # power-of-two scales and dyadic shifts keep a*X+b exact, so invariance is exact
    coords = np.random.default_rng(seed).integers(-512, 512, (7, 5, 3)) / 16.0
    assume(coords.max() > coords.min())
    np.testing.assert_array_equal(normalize_and_quantize(seq(a * coords + b)), normalize_and_quantize(seq(coords)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(0.1, 10.0), b=st.floats(-10.0, 10.0))
def test_general_affine_invariance_up_to_rounding_ties(seed, a, b):
    coords = np.random.default_rng(seed).normal(size=(6, 4, 3))
    base = normalize_and_quantize(seq(coords)).astype(int)
    moved = normalize_and_quantize(seq(a * coords + b)).astype(int)
    assert np.abs(base - moved).max() <= 1
    # a differing pixel must sit on a rounding tie of the exact value
    scaled = 255 * (coords - coords.min()) / (coords.max() - coords.min())
    frac = (scaled - np.floor(scaled)).transpose(1, 0, 2)
    assert np.all(np.abs(frac[base != moved] - 0.5) < 1e-6)


# ---------------------------------------------------------------------------
# joint permutations


@pytest.mark.parametrize("name", SHIPPED_LAYOUTS)
def test_shipped_layouts_are_bijections_grouped_by_part(name):
    perm = load_permutation(name)
    assert sorted(perm.order) == list(range(len(perm)))
    doc = json.loads(resources.files("skelres.layouts").joinpath(f"{name}.json").read_text())
    parts = doc["parts"]
    assert list(parts) == ["P1_left_arm", "P2_right_arm", "P3_trunk", "P4_left_leg", "P5_right_leg"]
    # the order lists the parts back to back in that sequence
    assert [j for p in parts.values() for j in p] == list(perm.order)


def test_kinect_v1_order():
    assert load_permutation("kinect_v1_20").order == (4, 5, 6, 7, 8, 9, 10, 11, 3, 2, 1, 0,
                                                      12, 13, 14, 15, 16, 17, 18, 19)


def test_permutation_validation():
    with pytest.raises(ValueError):
        JointPermutation("bad", (0, 0, 1))
    with pytest.raises(ValueError):
        JointPermutation.from_json('{"layout": "x", "order": [0], "extra": 1}')


def test_reorder_and_inverse():
    perm = load_permutation("kard_15")
    arr = np.random.default_rng(0).integers(0, 256, (15, 4, 3), dtype=np.uint8)
    out = reorder_joints(arr, perm)
    for row, src in enumerate(perm.order):
        np.testing.assert_array_equal(out[row], arr[src])
    np.testing.assert_array_equal(reorder_joints(out, perm.inverse()), arr)


def test_reorder_length_mismatch():
    with pytest.raises(LengthMismatchError):
        reorder_joints(np.zeros((20, 3, 3), np.uint8), load_permutation("kard_15"))


def test_permutation_json_round_trip(tmp_path):
    perm = JointPermutation("custom", (2, 0, 1))
    path = tmp_path / "p.json"
    path.write_text(perm.to_json())
    assert load_permutation(path) == perm
    assert JointPermutation.identity(3).order == (0, 1, 2)


# ---------------------------------------------------------------------------
# resizing


def test_nearest_frozen_indices():
    img = np.arange(5, dtype=np.uint8)[:, None, None].repeat(3, axis=1).repeat(3, axis=2)
    assert resize(img, (3, 7), "nearest")[:, 0, 0].tolist() == [0, 2, 4]
    row = np.arange(3, dtype=np.uint8)[None, :, None].repeat(3, axis=2)
    assert resize(row, (1, 7), "nearest")[0, :, 0].tolist() == [0, 0, 1, 1, 1, 2, 2]


@settings(max_examples=60, deadline=None)
@given(
    img=hnp.arrays(np.uint8, st.tuples(st.integers(1, 30), st.integers(1, 30), st.just(3))),
    ht=st.integers(1, 48),
    wt=st.integers(1, 48),
)
def test_nearest_matches_oracle(img, ht, wt):
    np.testing.assert_array_equal(resize(img, (ht, wt), "nearest"), oracle_nearest(img, ht, wt))


def test_bicubic_frozen_examples():
    checker = np.array([[0, 255], [255, 0]], dtype=np.uint8)
    assert resize(checker, (4, 4), "bicubic").tolist() == [
        [0, 41, 214, 255], [41, 83, 172, 214], [214, 172, 83, 41], [255, 214, 41, 0],
    ]
    assert resize(np.array([[10, 200, 30]], np.uint8), (1, 7), "bicubic").tolist() == [[0, 30, 134, 200, 143, 49, 18]]


@settings(max_examples=40, deadline=None)
@given(
    img=hnp.arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12))),
    ht=st.integers(1, 20),
    wt=st.integers(1, 20),
)
def test_bicubic_matches_exact_oracle(img, ht, wt):
    got = resize(img, (ht, wt), "bicubic").astype(int)
    exact = oracle_bicubic_exact(img, ht, wt)
    for i in range(ht):
        for j in range(wt):
            v = min(max(exact[i][j], Fraction(0)), Fraction(255))
            want = oracle_round(v)
            if got[i, j] != want:
                # float rounding may only flip an exact half
                assert abs(got[i, j] - want) == 1
                assert abs(v - math.floor(v) - Fraction(1, 2)) < Fraction(1, 10**9)


def test_bicubic_preserves_constant_and_same_size():
    const = np.full((5, 9, 3), 77, dtype=np.uint8)
    assert np.all(resize(const, (32, 32), "bicubic") == 77)
    img = np.random.default_rng(1).integers(0, 256, (6, 7, 3), dtype=np.uint8)
    for method in ("nearest", "bicubic"):
        np.testing.assert_array_equal(resize(img, (6, 7), method), img)


def test_resize_rejects_unknown_method_and_empty_target():
    img = np.zeros((2, 2, 3), np.uint8)
    with pytest.raises(ValueError):
        resize(img, (4, 4), "lanczos")
    with pytest.raises(ValueError):
        resize(img, (0, 4))


def test_encode_image_shapes():
    s = SkeletonSequence(np.random.default_rng(0).normal(size=(17, 20, 3)), 1, 1, 1)
    assert encode_image(s, target=None).shape == (20, 17, 3)
    assert encode_image(s, load_permutation("kinect_v1_20"), (32, 32), "bicubic").shape == (32, 32, 3)
    raw = encode_image(s, target=None)
    np.testing.assert_array_equal(encode_image(s, load_permutation("kinect_v1_20"), None),
                                  raw[list(load_permutation("kinect_v1_20").order)])


# ---------------------------------------------------------------------------
# augmentation


def test_default_policy_counts():
    assert DEFAULT_POLICY.samples_per_image == 24
    img = np.random.default_rng(0).integers(0, 256, (40, 40, 3), dtype=np.uint8)
    out = augment(img, DEFAULT_POLICY, np.random.default_rng(3))
    assert len(out) == 24
    assert all(o.shape == (32, 32, 3) and o.dtype == np.uint8 for o in out)


def _find_crop(img, crop):
    h, w = crop.shape[:2]
    for top in range(img.shape[0] - h + 1):
        for left in range(img.shape[1] - w + 1):
            if np.array_equal(img[top:top + h, left:left + w], crop):
                return top, left
    return None


def test_samples_are_crops_and_their_flips():
    img = np.random.default_rng(0).integers(0, 256, (40, 40, 3), dtype=np.uint8)
    out = augment(img, DEFAULT_POLICY, np.random.default_rng(5))
    for i in range(0, 24, 3):
        crop, hflip, vflip = out[i:i + 3]
        assert _find_crop(img, crop) is not None
        np.testing.assert_array_equal(hflip, crop[:, ::-1])
        np.testing.assert_array_equal(vflip, crop[::-1])


def test_augment_deterministic_under_seed():
    img = np.random.default_rng(0).integers(0, 256, (40, 40, 3), dtype=np.uint8)
    a = augment(img, AugmentPolicy(rng_seed=9))
    b = augment(img, AugmentPolicy(rng_seed=9))
    c = augment(img, AugmentPolicy(rng_seed=10))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_augment_flags_and_errors():
    img = np.zeros((40, 40, 3), np.uint8)
    assert len(augment(img, AugmentPolicy(horizontal_flip=False))) == 16
    assert len(augment(img, AugmentPolicy(crops_per_image=0))) == 0
    with pytest.raises(CropTooLargeError):
        AugmentPolicy(pre_resize=(30, 30))
    with pytest.raises(ValueError):
        augment(np.zeros((32, 32, 3), np.uint8))


def test_center_crop():
    img = np.arange(40 * 40 * 3, dtype=np.int64).reshape(40, 40, 3)
    np.testing.assert_array_equal(center_crop(img, (32, 32)), img[4:36, 4:36])
    with pytest.raises(CropTooLargeError):
        center_crop(img, (41, 2))


# ---------------------------------------------------------------------------
# PNG


@settings(max_examples=25, deadline=None)
@given(img=hnp.arrays(np.uint8, st.tuples(st.integers(1, 20), st.integers(1, 20), st.just(3))))
def test_png_round_trip(tmp_path_factory, img):
    path = tmp_path_factory.mktemp("png") / "x.png"
    save_png(img, path)
    np.testing.assert_array_equal(load_png(path), img)


def test_png_rejects_other_formats(tmp_path):
    for mode, name in [("L", "gray.png"), ("RGBA", "rgba.png"), ("P", "pal.png"), ("I;16", "deep.png")]:
        Image.new(mode, (4, 4)).save(tmp_path / name)
        with pytest.raises(UnsupportedPngError):
            load_png(tmp_path / name)
    (tmp_path / "junk.png").write_bytes(b"not a png at all, just some text")
    with pytest.raises(UnsupportedPngError):
        load_png(tmp_path / "junk.png")


def test_save_png_rejects_bad_arrays(tmp_path):
    with pytest.raises(UnsupportedPngError):
        save_png(np.zeros((4, 4, 3), np.float32), tmp_path / "a.png")
    with pytest.raises(UnsupportedPngError):
        save_png(np.zeros((4, 4), np.uint8), tmp_path / "b.png")
