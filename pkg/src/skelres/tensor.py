"""Dense layer primitives with hand-written backward passes.

Every layer is a ``*_forward`` function returning ``(out, cache)`` and a
``*_backward`` function consuming ``(dout, cache)``. Arrays are plain numpy
ndarrays in NCHW layout; float64 is used for gradient checking and float32
for training. Layers never mutate their inputs.
"""

from __future__ import annotations

from typing import Callable, Mapping, Optional

import numpy as np

from .errors import LabelRangeError, RateError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


# ---------------------------------------------------------------------------
# convolution


def _resolve_pad(pad, kh: int, kw: int) -> int:
    if pad == "same":
        if kh != kw or kh % 2 == 0:
            raise ShapeError("'same' padding needs an odd square kernel")
        return (kh - 1) // 2
    if isinstance(pad, (int, np.integer)) and pad >= 0:
        return int(pad)
    raise ShapeError(f"unsupported padding {pad!r}")


def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _check_conv(x, w, b, stride):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weights, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, weights expect {w.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} does not match {w.shape[0]} filters")
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")


def _window(a, i, j, stride, ho, wo):
    """View of the kernel-offset ``(i, j)`` taps over the last two axes."""
    return a[..., i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


def _im2col(xp, kh, kw, stride, ho, wo):
    """Patch matrix ``(C*kh*kw, N*ho*wo)``, channel-major so each copy is a contiguous row."""
    n, c = xp.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xp.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = _window(xt, i, j, stride, ho, wo)
    return cols.reshape(c * kh * kw, n * ho * wo)


def conv2d_forward(x, w, b=None, stride: int = 1, pad=0, method: str = "im2col"):
    """Cross-correlation of ``x (N,C,H,W)`` with ``w (F,C,kh,kw)`` plus bias.

    ``method`` selects the patch-matrix path (``im2col``) or the
    shift-and-accumulate loop over kernel offsets (``direct``).
    """
    _check_conv(x, w, b, stride)
    f, c, kh, kw = w.shape
    p = _resolve_pad(pad, kh, kw)
    n, _, h, wd = x.shape
    ho, wo = conv_output_size(h, kh, stride, p), conv_output_size(wd, kw, stride, p)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit input {h}x{wd} with pad {p}")
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x

    if method == "im2col":
        cols = _im2col(xp, kh, kw, stride, ho, wo)
        out = (w.reshape(f, -1) @ cols).reshape(f, n, ho, wo).transpose(1, 0, 2, 3)
    elif method == "direct":
        out = np.zeros((n, f, ho, wo), dtype=np.result_type(x, w))
        for i in range(kh):
            for j in range(kw):
                out += np.einsum("nchw,fc->nfhw", _window(xp, i, j, stride, ho, wo), w[:, :, i, j])
    else:
        raise ValueError(f"unknown conv method {method!r}")
    if b is not None:
        out = out + b.reshape(1, f, 1, 1)
    out = np.ascontiguousarray(out)
    return out, (xp, w, b is not None, stride, p, x.shape)


def conv2d_backward(dout, cache):
    """Returns ``(dx, dw, db)``; ``db`` is None when the forward had no bias."""
    xp, w, has_bias, stride, p, x_shape = cache
    f, c, kh, kw = w.shape
    n, _, ho, wo = dout.shape
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    dmat = dout.transpose(1, 0, 2, 3).reshape(f, -1)

    dw = (dmat @ cols.T).reshape(w.shape)
    db = dmat.sum(axis=1) if has_bias else None
    dcols = (w.reshape(f, -1).T @ dmat).reshape(c, kh, kw, n, ho, wo)
    # col2im: scatter each kernel offset back onto the padded input, channel-major
    dxt = np.zeros((c, n) + xp.shape[2:], dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            _window(dxt, i, j, stride, ho, wo)[...] += dcols[:, i, j]
    h, wd = x_shape[2:]
    dxt = dxt[:, :, p:p + h, p:p + wd] if p else dxt
    return np.ascontiguousarray(dxt.transpose(1, 0, 2, 3)), dw, db


# ---------------------------------------------------------------------------
# batch normalization


def batchnorm_forward(
    x,
    gamma,
    beta,
    mode: str = "train",
    running_mean=None,
    running_var=None,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
):
    """Spatial batch normalization over the N, H, W axes.

    Returns ``(out, cache, (new_running_mean, new_running_var))``. In train
    mode the running statistics move towards the (biased) batch statistics as
    ``momentum * running + (1 - momentum) * batch``; in infer mode they are
    used for normalization and returned unchanged.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm shapes do not agree: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    c = x.shape[1]
    if running_mean is None:
        running_mean = np.zeros(c, dtype=x.dtype)
    if running_var is None:
        running_var = np.ones(c, dtype=x.dtype)

    if mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise ShapeError("train-mode batchnorm needs at least two values per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        new_mean = momentum * running_mean + (1 - momentum) * mean
        new_var = momentum * running_var + (1 - momentum) * var
    elif mode == "infer":
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")

    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(1, c, 1, 1)) * invstd.reshape(1, c, 1, 1)
    out = gamma.reshape(1, c, 1, 1) * xhat + beta.reshape(1, c, 1, 1)
    out = out.astype(x.dtype, copy=False)
    return out, (xhat, gamma, invstd, mode), (new_mean.astype(x.dtype), new_var.astype(x.dtype))


def batchnorm_backward(dout, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, gamma, invstd, mode = cache
    c = dout.shape[1]
    dbeta = dout.sum(axis=(0, 2, 3))
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dxhat = dout * gamma.reshape(1, c, 1, 1)
    if mode == "infer":
        return dxhat * invstd.reshape(1, c, 1, 1), dgamma, dbeta
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    sum_dxhat = dxhat.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
    dx = (invstd.reshape(1, c, 1, 1) / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# pointwise layers


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, cache):
    return np.where(cache > 0, dout, 0).astype(dout.dtype, copy=False)


def dropout_forward(x, rate: float, mode: str = "train", rng: Optional[np.random.Generator] = None):
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)`` at train time."""
    if not 0 <= rate < 1:
        raise RateError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0:
        return x, None
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit rng")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    return x * mask, mask


def dropout_backward(dout, cache):
    return dout if cache is None else dout * cache


def global_mean_pool_forward(x):
    if x.ndim != 4:
        raise ShapeError(f"global mean pool expects NCHW input, got {x.shape}")
    return x.mean(axis=(2, 3)), x.shape


def global_mean_pool_backward(dout, cache):
    n, c, h, w = cache
    return np.broadcast_to((dout / (h * w))[:, :, None, None], cache).copy()


def fc_forward(x, w, b):
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"fully connected shapes do not agree: x {x.shape}, w {w.shape}, b {b.shape}")
    return x @ w + b, (x, w)


def fc_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. ``logits``."""
    labels = np.asarray(labels)
    n, m = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= m):
        raise LabelRangeError(f"labels must lie in [0, {m})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -log_probs[np.arange(n), labels].mean()
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1
    return float(loss), grad / n


# ---------------------------------------------------------------------------
# finite differences


def relative_error(analytic, numeric, floor: float = 1e-8):
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_gradient(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-4, indices=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. entries of ``arr`` (perturbed in place, then restored)."""
    grad = np.zeros_like(arr, dtype=np.float64)
    it = indices if indices is not None else np.ndindex(arr.shape)
    for idx in it:
        old = arr[idx]
        arr[idx] = old + eps
        plus = f()
        arr[idx] = old - eps
        minus = f()
        arr[idx] = old
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def finite_diff_check(
    fn: Callable[[Mapping[str, np.ndarray]], tuple[float, Mapping[str, np.ndarray]]],
    inputs: Mapping[str, np.ndarray],
    eps: float = 1e-4,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> dict[str, float]:
    """Compare analytic gradients with central differences.

    ``fn(inputs)`` must return ``(loss, grads)`` where ``grads`` maps a subset
    of the input names to gradient arrays. Returns the maximum relative error
    per checked name. ``max_entries`` samples that many entries per array.
    """
    work = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    _, grads = fn(work)
    report = {}
    for name, analytic in grads.items():
        if analytic is None:
            continue
        arr = work[name]
        indices = None
        if max_entries is not None and arr.size > max_entries:
            rng = rng or np.random.default_rng(0)
            flat = rng.choice(arr.size, size=max_entries, replace=False)
            indices = [np.unravel_index(i, arr.shape) for i in flat]
        numeric = numeric_gradient(lambda: fn(work)[0], arr, eps, indices)
        if indices is None:
            err = relative_error(analytic, numeric)
        else:
            a = np.array([analytic[i] for i in indices])
            nn = np.array([numeric[i] for i in indices])
            err = relative_error(a, nn)
        report[name] = float(err.max()) if err.size else 0.0
    return report
