"""Skeleton-to-image encoding, resizing, augmentation and PNG I/O.

Images are ``(H, W, 3)`` uint8 arrays; rows index joints and columns
index frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import (
    CropTooLargeError,
    DegenerateRangeError,
    LengthMismatchError,
    UnsupportedPngError,
)
from .skeldata import SkeletonSequence

RESIZE_METHODS = ("nearest", "bicubic")


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def normalize_and_quantize(seq: SkeletonSequence) -> np.ndarray:
    """Map every coordinate to ``[0, 255]`` using the sequence-wide min/max.

    The same bounds are shared by x, y and z. Returns a ``(K, N, 3)`` uint8
    array whose channels are the quantized (x, y, z) of joint k in frame n.
    """
    coords = seq.coords if isinstance(seq, SkeletonSequence) else np.asarray(seq, dtype=np.float64)
    lo, hi = coords.min(), coords.max()
    if not hi > lo:
        raise DegenerateRangeError(f"all coordinates equal {lo!r}; cannot normalize")
    scaled = 255.0 * (coords - lo) / (hi - lo)
    q = np.clip(round_half_away(scaled), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(q.transpose(1, 0, 2))


@dataclass(frozen=True)
class JointPermutation:
    layout: str
    order: tuple[int, ...]

    def __post_init__(self):
        order = tuple(int(i) for i in self.order)
        if sorted(order) != list(range(len(order))):
            raise ValueError(f"layout {self.layout!r}: order is not a permutation of 0..{len(order) - 1}")
        object.__setattr__(self, "order", order)

    def __len__(self):
        return len(self.order)

    def inverse(self) -> "JointPermutation":
        inv = [0] * len(self.order)
        for i, j in enumerate(self.order):
            inv[j] = i
        return JointPermutation(self.layout + "^-1", tuple(inv))

    @classmethod
    def identity(cls, k: int) -> "JointPermutation":
        return cls(f"identity-{k}", tuple(range(k)))

    def to_json(self) -> str:
        return json.dumps({"layout": self.layout, "order": list(self.order)})

    @classmethod
    def from_json(cls, text: str) -> "JointPermutation":
        doc = json.loads(text)
        if set(doc) - {"layout", "order", "parts"} or "order" not in doc:
            raise ValueError("permutation file needs 'layout' and 'order' keys only")
        return cls(str(doc.get("layout", "custom")), tuple(doc["order"]))


SHIPPED_LAYOUTS = ("kinect_v1_20", "kinect_v2_25", "kard_15")


def load_permutation(name_or_path) -> JointPermutation:
    """Load a shipped layout by name (see ``SHIPPED_LAYOUTS``) or a JSON file by path."""
    if str(name_or_path) in SHIPPED_LAYOUTS:
        text = resources.files("skelres.layouts").joinpath(f"{name_or_path}.json").read_text()
    else:
        text = Path(name_or_path).read_text()
    return JointPermutation.from_json(text)


def reorder_joints(array: np.ndarray, perm: JointPermutation) -> np.ndarray:
    order = perm.order if isinstance(perm, JointPermutation) else tuple(perm)
    if len(order) != array.shape[0]:
        raise LengthMismatchError(f"permutation has {len(order)} entries, array has {array.shape[0]} rows")
    return array[list(order)]


# ---------------------------------------------------------------------------
# resizing


def _nearest_index(n_src: int, n_dst: int) -> np.ndarray:
    # integer form of floor((i + 0.5) * n_src / n_dst), avoids float drift
    i = np.arange(n_dst)
    return np.minimum(((2 * i + 1) * n_src) // (2 * n_dst), n_src - 1)


def _cubic_weights(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic kernel weights for the four taps around fractional offset ``t``."""
    d = np.stack([1 + t, t, 1 - t, 2 - t], axis=-1)
    w = np.where(
        d <= 1,
        (a + 2) * d**3 - (a + 3) * d**2 + 1,
        a * d**3 - 5 * a * d**2 + 8 * a * d - 4 * a,
    )
    return w


def _cubic_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """``(n_dst, n_src)`` interpolation matrix with clamp-to-edge boundaries."""
    m = np.zeros((n_dst, n_src))
    center = (np.arange(n_dst) + 0.5) * n_src / n_dst - 0.5
    base = np.floor(center).astype(int)
    w = _cubic_weights(center - base)
    for tap in range(4):
        idx = np.clip(base - 1 + tap, 0, n_src - 1)
        np.add.at(m, (np.arange(n_dst), idx), w[:, tap])
    return m


def resize(img: np.ndarray, target: Sequence[int], method: str = "nearest") -> np.ndarray:
    """Resize an ``(H, W)`` or ``(H, W, C)`` uint8 image.

    ``nearest`` samples source pixel ``floor((i + 0.5) * Hs / Ht)``;
    ``bicubic`` applies a separable Catmull-Rom kernel, clamps to [0, 255]
    and rounds half away from zero.
    """
    ht, wt = int(target[0]), int(target[1])
    if ht < 1 or wt < 1 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("source and target dimensions must be >= 1")
    hs, ws = img.shape[:2]
    if (hs, ws) == (ht, wt):
        return img.copy()
    if method == "nearest":
        return img[_nearest_index(hs, ht)][:, _nearest_index(ws, wt)]
    if method == "bicubic":
        rows = _cubic_matrix(hs, ht)
        cols = _cubic_matrix(ws, wt)
        src = img.astype(np.float64)
        out = np.einsum("ih,hw...->iw...", rows, src)
        out = np.einsum("jw,iw...->ij...", cols, out)
        return round_half_away(np.clip(out, 0, 255)).astype(np.uint8)
    raise ValueError(f"unknown resize method {method!r}; expected one of {RESIZE_METHODS}")


def encode_image(
    seq: SkeletonSequence,
    perm: Optional[JointPermutation] = None,
    target: Optional[Sequence[int]] = (32, 32),
    method: str = "nearest",
) -> np.ndarray:
    """Encode a sequence as a joints-by-frames RGB image resized to ``target``."""
    arr = normalize_and_quantize(seq)
    if perm is not None:
        arr = reorder_joints(arr, perm)
    if target is None:
        return arr
    return resize(arr, target, method)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentPolicy:
    pre_resize: tuple[int, int] = (40, 40)
    crop_size: tuple[int, int] = (32, 32)
    crops_per_image: int = 8
    horizontal_flip: bool = True
    vertical_flip: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.crops_per_image < 0:
            raise ValueError("crops_per_image must be >= 0")
        if self.crop_size[0] > self.pre_resize[0] or self.crop_size[1] > self.pre_resize[1]:
            raise CropTooLargeError(f"crop {self.crop_size} exceeds image {self.pre_resize}")

    @property
    def samples_per_image(self) -> int:
        return self.crops_per_image * (1 + int(self.horizontal_flip) + int(self.vertical_flip))


DEFAULT_POLICY = AugmentPolicy()


def augment(img: np.ndarray, policy: AugmentPolicy = DEFAULT_POLICY, rng: Optional[np.random.Generator] = None) -> list[np.ndarray]:
    """Random crops, each followed by its horizontal and vertical mirror.

    Output order per crop is crop, horizontal flip, vertical flip (flags
    permitting). ``rng`` overrides ``policy.rng_seed`` when given.
    """
    h, w = img.shape[:2]
    if (h, w) != tuple(policy.pre_resize):
        raise ValueError(f"image is {h}x{w}, policy expects {policy.pre_resize}")
    ch, cw = policy.crop_size
    if ch > h or cw > w:
        raise CropTooLargeError(f"crop {policy.crop_size} exceeds image {(h, w)}")
    if rng is None:
        rng = np.random.default_rng(policy.rng_seed)
    out = []
    for _ in range(policy.crops_per_image):
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        crop = img[top:top + ch, left:left + cw].copy()
        out.append(crop)
        if policy.horizontal_flip:
            out.append(crop[:, ::-1].copy())
        if policy.vertical_flip:
            out.append(crop[::-1].copy())
    return out


def center_crop(img: np.ndarray, size: Sequence[int]) -> np.ndarray:
    h, w = img.shape[:2]
    ch, cw = size
    if ch > h or cw > w:
        raise CropTooLargeError(f"crop {tuple(size)} exceeds image {(h, w)}")
    top, left = (h - ch) // 2, (w - cw) // 2
    return img[top:top + ch, left:left + cw].copy()


# ---------------------------------------------------------------------------
# PNG


_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def save_png(img: np.ndarray, path) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise UnsupportedPngError(f"expected (H, W, 3) uint8 image, got {img.dtype} {img.shape}")
    Image.fromarray(np.ascontiguousarray(img)).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(29)
    # IHDR is always the first chunk: bit depth at byte 24, colour type at 25
    if len(head) < 29 or head[:8] != _PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise UnsupportedPngError(f"{path}: not a PNG file")
    bit_depth, colour_type = head[24], head[25]
    if bit_depth != 8 or colour_type != 2:
        raise UnsupportedPngError(
            f"{path}: expected 8-bit RGB (depth 8, colour type 2), got depth {bit_depth}, colour type {colour_type}"
        )
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
