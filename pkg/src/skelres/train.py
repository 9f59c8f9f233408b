"""SGD training, evaluation and protocol-level experiment orchestration."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .encoder import AugmentPolicy, DEFAULT_POLICY, JointPermutation, augment, center_crop, encode_image
from .errors import ConfigError, EmptyDatasetError, OutOfRangeError, ShapeError
from .resnet import NetworkSpec, build_network, is_decayed, network_backward, network_forward
from .skeldata import ProtocolSplit, SkeletonSequence, make_split

logger = logging.getLogger(__name__)

Schedule = list[tuple[int, int, float]]

STEP_SCHEDULE: Schedule = [(1, 75, 0.01), (76, 150, 0.001), (151, 200, 0.0001)]


def step_schedule(epochs: int = 200) -> Schedule:
    """The 0.01 / 0.001 / 0.0001 step schedule, boundaries scaled to ``epochs``.

    For 200 epochs this is exactly 1-75, 76-150, 151-200.
    """
    if epochs == 200:
        return list(STEP_SCHEDULE)
    if epochs < 1:
        return []
    b1 = max(1, round(epochs * 75 / 200))
    b2 = max(b1, round(epochs * 150 / 200))
    sched = [(1, b1, 0.01)]
    if b2 > b1:
        sched.append((b1 + 1, b2, 0.001))
    if epochs > b2:
        sched.append((b2 + 1, epochs, 0.0001))
    return sched


def validate_schedule(schedule: Schedule, epochs: int) -> None:
    expected = 1
    for start, end, rate in sorted(schedule):
        if start != expected or end < start:
            raise ValueError(f"schedule must cover epochs 1..{epochs} without gaps or overlaps")
        if rate < 0:
            raise ValueError("learning rates must be non-negative")
        expected = end + 1
    if expected != epochs + 1:
        raise ValueError(f"schedule must cover epochs 1..{epochs} without gaps or overlaps")


def lr_at_epoch(schedule: Schedule, epoch: int) -> float:
    for start, end, rate in schedule:
        if start <= epoch <= end:
            return rate
    raise OutOfRangeError(f"epoch {epoch} is outside the schedule")


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
             velocity: Mapping[str, np.ndarray], lr: float, momentum: float = 0.9,
             weight_decay: float = 1e-4):
    """Momentum SGD with L2 weight decay on conv/FC weights.

    ``v <- momentum * v + (grad + wd * param)``, ``param <- param - lr * v``.
    Returns new ``(params, velocity)`` dicts; only names present in ``grads``
    are updated.
    """
    new_params, new_velocity = dict(params), dict(velocity)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        step = g + weight_decay * p if (weight_decay and is_decayed(name)) else g
        v = (momentum * v + step).astype(p.dtype, copy=False)
        new_velocity[name] = v
        new_params[name] = (p - lr * v).astype(p.dtype, copy=False)
    return new_params, new_velocity


@dataclass
class TrainConfig:
    depth: int = 20
    unit_kind: str = "proposed"
    batch_size: Optional[int] = None
    epochs: int = 200
    lr_schedule: Optional[Schedule] = None
    weight_decay: float = 1e-4
    momentum: float = 0.9
    augment: Optional[AugmentPolicy] = DEFAULT_POLICY
    resize_method: str = "nearest"
    seed: int = 0
    widths: tuple[int, ...] = (16, 32, 64)
    dropout_rate: float = 0.5
    input_size: tuple[int, int] = (32, 32)
    allow_ntu: bool = False

    def __post_init__(self):
        if self.batch_size is None:
            self.batch_size = 64 if self.depth == 110 else 128
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_schedule is None:
            self.lr_schedule = step_schedule(self.epochs)
        self.lr_schedule = [(int(a), int(b), float(r)) for a, b, r in self.lr_schedule]
        validate_schedule(self.lr_schedule, self.epochs)
        if self.augment is not None and tuple(self.augment.crop_size) != tuple(self.input_size):
            raise ValueError("augmentation crop size must equal the network input size")


@dataclass
class Metrics:
    epoch: int
    train_loss: Optional[float] = None
    train_error_pct: Optional[float] = None
    test_error_pct: Optional[float] = None
    confusion: Optional[np.ndarray] = None
    wall_time: float = 0.0

    @property
    def test_accuracy(self) -> Optional[float]:
        if self.confusion is None or self.confusion.sum() == 0:
            return None
        return float(np.trace(self.confusion) / self.confusion.sum())

    def csv_row(self) -> list:
        def fmt(v):
            return "" if v is None else repr(float(v))
        return [self.epoch, fmt(self.train_loss), fmt(self.train_error_pct), fmt(self.test_error_pct),
                f"{self.wall_time:.3f}"]


@dataclass
class Model:
    spec: NetworkSpec
    params: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def to_input(images: np.ndarray) -> np.ndarray:
    """uint8 ``(N, H, W, 3)`` images to float32 ``(N, 3, H, W)`` in [-1, 1]."""
    x = np.asarray(images, dtype=np.float32).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(x / np.float32(127.5) - np.float32(1.0))


def train_epoch(model: Model, images: np.ndarray, labels: np.ndarray, config: TrainConfig,
                rng: np.random.Generator, lr: float, epoch: int = 0) -> Metrics:
    """One pass over shuffled data in mini-batches; the partial last batch is kept."""
    n = len(images)
    if n == 0:
        raise EmptyDatasetError("no training samples")
    start = time.perf_counter()
    order = rng.permutation(n)
    total_loss, wrong = 0.0, 0
    for i in range(0, n, config.batch_size):
        idx = order[i:i + config.batch_size]
        x, y = to_input(images[idx]), labels[idx]
        logits, cache = network_forward(model.spec, model.params, x, "train", rng)
        loss, dlogits = T.softmax_cross_entropy(logits, y)
        grads = network_backward(model.spec, model.params, cache, dlogits).grad_params
        params, model.velocity = sgd_step(model.params, grads, model.velocity, lr,
                                          config.momentum, config.weight_decay)
        params.update(cache["running"])
        model.params = params
        total_loss += loss * len(idx)
        wrong += int((logits.argmax(axis=1) != y).sum())
    return Metrics(epoch=epoch, train_loss=total_loss / n, train_error_pct=100.0 * wrong / n,
                   wall_time=time.perf_counter() - start)


def evaluate(model: Model, images: np.ndarray, labels: np.ndarray, batch_size: int = 256,
             epoch: int = 0) -> Metrics:
    """Infer-mode predictions (running BN statistics, no dropout) and a confusion matrix."""
    n = len(images)
    if n == 0:
        raise EmptyDatasetError("no evaluation samples")
    start = time.perf_counter()
    m = model.spec.num_classes
    confusion = np.zeros((m, m), dtype=np.int64)
    for i in range(0, n, batch_size):
        logits, _ = network_forward(model.spec, model.params, to_input(images[i:i + batch_size]), "infer")
        np.add.at(confusion, (labels[i:i + batch_size], logits.argmax(axis=1)), 1)
    acc = np.trace(confusion) / n
    return Metrics(epoch=epoch, test_error_pct=100.0 * (1 - acc), confusion=confusion,
                   wall_time=time.perf_counter() - start)


# ---------------------------------------------------------------------------
# encoding helpers


def encode_train_images(seqs: Sequence[SkeletonSequence], perm: Optional[JointPermutation],
                        config: TrainConfig) -> np.ndarray:
    size = config.augment.pre_resize if config.augment is not None else config.input_size
    return np.stack([encode_image(s, perm, size, config.resize_method) for s in seqs])


def encode_eval_images(seqs: Sequence[SkeletonSequence], perm: Optional[JointPermutation],
                       config: TrainConfig) -> np.ndarray:
    """One image per sequence: a center crop of the pre-resized image, or a direct resize."""
    if config.augment is None:
        return np.stack([encode_image(s, perm, config.input_size, config.resize_method) for s in seqs])
    return np.stack([
        center_crop(encode_image(s, perm, config.augment.pre_resize, config.resize_method), config.input_size)
        for s in seqs
    ])


def augment_batch(images: np.ndarray, labels: np.ndarray, policy: Optional[AugmentPolicy],
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if policy is None:
        return images, labels
    out, out_labels = [], []
    for img, label in zip(images, labels):
        samples = augment(img, policy, rng)
        out.extend(samples)
        out_labels.extend([label] * len(samples))
    if not out:
        raise EmptyDatasetError("augmentation policy produced no samples")
    return np.stack(out), np.asarray(out_labels, dtype=np.int64)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class FitResult:
    model: Model
    split: ProtocolSplit
    history: list[Metrics]
    best_epoch: int
    best_params: dict[str, np.ndarray]

    @property
    def final(self) -> Metrics:
        return self.history[-1]

    @property
    def best(self) -> Metrics:
        return next(m for m in self.history if m.epoch == self.best_epoch)


CSV_HEADER = ["epoch", "train_loss", "train_err", "test_err", "seconds"]


def write_metrics_csv(path, history: Sequence[Metrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for m in history:
            w.writerow(m.csv_row())


def fit(config: TrainConfig, corpus: Sequence[SkeletonSequence], protocol: str,
        perm: Optional[JointPermutation] = None, out_dir=None, checkpoint_meta: Optional[dict] = None,
        on_epoch: Optional[Callable[[Metrics], None]] = None) -> FitResult:
    """Split, encode, train for ``config.epochs`` and evaluate after every epoch.

    When ``out_dir`` is given, ``metrics.csv``, ``best.skrn`` (highest test
    accuracy, earliest epoch on ties) and ``final.skrn`` are written there.
    With ``epochs=0`` only the initialized model is evaluated.
    """
    split = make_split(corpus, protocol)
    if split.protocol.startswith("ntu-") and not config.allow_ntu:
        raise ConfigError("allow_ntu", "NTU-scale training is disabled; set allow_ntu to enable it")
    train_keys, test_keys = set(split.train), set(split.test)
    if train_keys & test_keys:
        raise AssertionError("train and test identifiers overlap")
    by_key = {s.key: s for s in corpus}
    train_seqs = [by_key[k] for k in split.train]
    test_seqs = [by_key[k] for k in split.test]
    if not test_seqs:
        raise EmptyDatasetError(f"protocol {split.protocol} selects no test sequences")
    if config.epochs > 0 and not train_seqs:
        raise EmptyDatasetError(f"protocol {split.protocol} selects no training sequences")
    # leakage guard: only training identifiers reach the training encoder
    assert not {s.key for s in train_seqs} & test_keys

    train_labels = np.array([split.labels[s.key] for s in train_seqs], dtype=np.int64)
    test_labels = np.array([split.labels[s.key] for s in test_seqs], dtype=np.int64)
    train_images = encode_train_images(train_seqs, perm, config) if train_seqs else None
    test_images = encode_eval_images(test_seqs, perm, config)

    spec, params = build_network(config.depth, config.unit_kind, split.num_classes, config.seed,
                                 config.widths, config.dropout_rate)
    model = Model(spec, params)
    history: list[Metrics] = []
    best_epoch, best_acc, best_params = 0, -1.0, dict(params)

    if config.epochs == 0:
        m = evaluate(model, test_images, test_labels, epoch=0)
        history.append(m)
        best_acc = m.test_accuracy
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        start = time.perf_counter()
        images, labels = augment_batch(train_images, train_labels, config.augment, rng)
        m = train_epoch(model, images, labels, config, rng, lr_at_epoch(config.lr_schedule, epoch), epoch)
        ev = evaluate(model, test_images, test_labels, epoch=epoch)
        m.test_error_pct, m.confusion = ev.test_error_pct, ev.confusion
        m.wall_time = time.perf_counter() - start
        history.append(m)
        if m.test_accuracy > best_acc:
            best_epoch, best_acc, best_params = epoch, m.test_accuracy, dict(model.params)
        logger.info("epoch %d lr %.4g loss %.4f train_err %.2f%% test_err %.2f%% (%.1fs)", epoch,
                    lr_at_epoch(config.lr_schedule, epoch), m.train_loss, m.train_error_pct,
                    m.test_error_pct, m.wall_time)
        if on_epoch is not None:
            on_epoch(m)

    result = FitResult(model, split, history, best_epoch, best_params)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "metrics.csv", history)
        meta = dict(checkpoint_meta or {})
        meta.update({
            "protocol": split.protocol,
            "classes": list(split.classes),
            "resize_method": config.resize_method,
            "input_size": list(config.input_size),
            "pre_resize": list(config.augment.pre_resize) if config.augment is not None else None,
            "permutation": list(perm.order) if perm is not None else None,
            "seed": config.seed,
        })
        save_checkpoint(out / "best.skrn", spec, best_params, {**meta, "epoch": best_epoch})
        save_checkpoint(out / "final.skrn", spec, model.params, {**meta, "epoch": history[-1].epoch})
    return result


def eval_config_from_meta(meta: Mapping) -> TrainConfig:
    """Rebuild the encoding-relevant part of a TrainConfig from checkpoint metadata."""
    input_size = tuple(meta.get("input_size") or (32, 32))
    pre = meta.get("pre_resize")
    policy = None if pre is None else replace(DEFAULT_POLICY, pre_resize=tuple(pre), crop_size=input_size)
    return TrainConfig(epochs=0, augment=policy, resize_method=meta.get("resize_method", "nearest"),
                       input_size=input_size, allow_ntu=True)
