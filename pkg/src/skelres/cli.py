"""Command-line entry point: ``skelres {encode,train,eval,gradcheck,inspect}``.

Diagnostics go to stderr; data goes to files or stdout. Every command exits
0 only when nothing failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .checkpoint import MAGIC, load_checkpoint
from .encoder import (
    RESIZE_METHODS,
    SHIPPED_LAYOUTS,
    AugmentPolicy,
    JointPermutation,
    encode_image,
    load_permutation,
    save_png,
)
from .errors import ConfigError, ProtocolMismatchError, SkelResError, UnknownProtocolError
from .gradcheck import run_gradcheck, summarize
from .resnet import VALID_DEPTHS, NetworkSpec, count_params
from .skeldata import canonical_protocol, corpus_statistics, load_corpus, load_sequence, make_split
from .train import Model, TrainConfig, encode_eval_images, eval_config_from_meta, evaluate, fit, validate_schedule

logger = logging.getLogger("skelres")

REFERENCE_CONFIGS = (
    "msr-as1", "msr-as2", "msr-as3",
    "kard-set1-A", "kard-set1-B", "kard-set1-C",
    "kard-set2-A", "kard-set2-B", "kard-set2-C",
    "kard-set3-A", "kard-set3-B", "kard-set3-C",
    "ntu-xsub", "ntu-xview",
)


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass
class DatasetConfig:
    path: str
    format: str = "text"
    joints_per_frame: int = 20
    values_per_joint: int = 4
    pattern: Optional[str] = None

    def load(self):
        return load_corpus(self.path, self.format, self.joints_per_frame, self.values_per_joint, self.pattern)


@dataclass
class ExperimentConfig:
    protocol: str
    dataset: DatasetConfig
    output_dir: str
    train: TrainConfig
    permutation: Optional[str] = None

    def load_permutation(self) -> Optional[JointPermutation]:
        return None if self.permutation is None else load_permutation(self.permutation)

    def to_dict(self) -> dict:
        t = self.train
        doc = {
            "protocol": self.protocol,
            "dataset": asdict(self.dataset),
            "permutation": self.permutation,
            "output_dir": self.output_dir,
        }
        for name in _TRAIN_KEYS:
            value = getattr(t, name)
            doc[name] = list(value) if isinstance(value, tuple) else value
        doc["lr_schedule"] = [list(s) for s in t.lr_schedule]
        doc["augment"] = None if t.augment is None else {
            k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(t.augment).items()
        }
        return doc


_TRAIN_KEYS = ("depth", "unit_kind", "batch_size", "epochs", "weight_decay", "momentum",
               "resize_method", "seed", "widths", "dropout_rate", "input_size", "allow_ntu")
_TOP_KEYS = {"protocol", "dataset", "permutation", "output_dir", "lr_schedule", "augment", *_TRAIN_KEYS}
_DATASET_KEYS = {f.name for f in fields(DatasetConfig)}
_AUGMENT_KEYS = {f.name for f in fields(AugmentPolicy)}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _int(doc, key, field, lo=None, default=None, optional=False):
    v = doc.get(key, default)
    if v is None and optional:
        return None
    if not _is_int(v) or (lo is not None and v < lo):
        raise ConfigError(field, f"expected an integer{'' if lo is None else f' >= {lo}'}, got {v!r}")
    return v


def _num(doc, key, field, lo=0.0, hi=None, default=None):
    v = doc.get(key, default)
    if not _is_num(v) or v < lo or (hi is not None and v >= hi):
        bound = f"in [{lo}, {hi})" if hi is not None else f">= {lo}"
        raise ConfigError(field, f"expected a number {bound}, got {v!r}")
    return float(v)


def _int_list(doc, key, field, n, default):
    v = doc.get(key, default)
    if not isinstance(v, (list, tuple)) or len(v) != n or not all(_is_int(i) and i >= 1 for i in v):
        raise ConfigError(field, f"expected {n} positive integers, got {v!r}")
    return tuple(v)


def _reject_unknown(doc: Mapping, allowed, prefix=""):
    for key in doc:
        if key not in allowed:
            raise ConfigError(prefix + key, "unknown key")


def _parse_augment(doc) -> Optional[AugmentPolicy]:
    if doc is None:
        return None
    if not isinstance(doc, dict):
        raise ConfigError("augment", "expected an object or null")
    _reject_unknown(doc, _AUGMENT_KEYS, "augment.")
    d = AugmentPolicy()
    kw = {
        "pre_resize": _int_list(doc, "pre_resize", "augment.pre_resize", 2, d.pre_resize),
        "crop_size": _int_list(doc, "crop_size", "augment.crop_size", 2, d.crop_size),
        "crops_per_image": _int(doc, "crops_per_image", "augment.crops_per_image", 0, d.crops_per_image),
        "rng_seed": _int(doc, "rng_seed", "augment.rng_seed", 0, d.rng_seed),
    }
    for flag in ("horizontal_flip", "vertical_flip"):
        v = doc.get(flag, getattr(d, flag))
        if not isinstance(v, bool):
            raise ConfigError(f"augment.{flag}", f"expected true or false, got {v!r}")
        kw[flag] = v
    try:
        return AugmentPolicy(**kw)
    except SkelResError as exc:
        raise ConfigError("augment.crop_size", str(exc)) from None


def parse_experiment_config(doc: Mapping[str, Any], check_paths: bool = True) -> ExperimentConfig:
    """Validate a config document. Raises ConfigError naming the offending field."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    _reject_unknown(doc, _TOP_KEYS)

    protocol = doc.get("protocol")
    if not isinstance(protocol, str):
        raise ConfigError("protocol", "missing or not a string")
    try:
        protocol = canonical_protocol(protocol)
    except UnknownProtocolError as exc:
        raise ConfigError("protocol", str(exc)) from None

    ds = doc.get("dataset")
    if not isinstance(ds, dict):
        raise ConfigError("dataset", "expected an object with at least a 'path'")
    _reject_unknown(ds, _DATASET_KEYS, "dataset.")
    if not isinstance(ds.get("path"), str):
        raise ConfigError("dataset.path", "missing or not a string")
    fmt = ds.get("format", "text")
    if fmt not in ("text", "json"):
        raise ConfigError("dataset.format", f"expected 'text' or 'json', got {fmt!r}")
    pattern = ds.get("pattern")
    if pattern is not None and not isinstance(pattern, str):
        raise ConfigError("dataset.pattern", "expected a glob string or null")
    dataset = DatasetConfig(
        ds["path"], fmt,
        _int(ds, "joints_per_frame", "dataset.joints_per_frame", 1, 20),
        _int(ds, "values_per_joint", "dataset.values_per_joint", 3, 4),
        pattern,
    )

    out = doc.get("output_dir")
    if not isinstance(out, str):
        raise ConfigError("output_dir", "missing or not a string")
    perm = doc.get("permutation")
    if perm is not None and not isinstance(perm, str):
        raise ConfigError("permutation", "expected a layout name, a file path or null")

    depth = _int(doc, "depth", "depth", default=20)
    if depth not in VALID_DEPTHS:
        raise ConfigError("depth", f"depth must be one of {VALID_DEPTHS}, got {depth}")
    kind = doc.get("unit_kind", "proposed")
    if kind not in ("original", "proposed"):
        raise ConfigError("unit_kind", f"expected 'original' or 'proposed', got {kind!r}")
    epochs = _int(doc, "epochs", "epochs", 0, 200)
    resize_method = doc.get("resize_method", "nearest")
    if resize_method not in RESIZE_METHODS:
        raise ConfigError("resize_method", f"expected one of {RESIZE_METHODS}, got {resize_method!r}")
    allow_ntu = doc.get("allow_ntu", False)
    if not isinstance(allow_ntu, bool):
        raise ConfigError("allow_ntu", "expected true or false")

    schedule = doc.get("lr_schedule")
    if schedule is not None:
        if not isinstance(schedule, list) or not all(
            isinstance(s, list) and len(s) == 3 and _is_int(s[0]) and _is_int(s[1]) and _is_num(s[2])
            for s in schedule
        ):
            raise ConfigError("lr_schedule", "expected a list of [first_epoch, last_epoch, rate]")
        try:
            validate_schedule([tuple(s) for s in schedule], epochs)
        except ValueError as exc:
            raise ConfigError("lr_schedule", str(exc)) from None

    augment = _parse_augment(doc.get("augment", asdict(AugmentPolicy())))
    input_size = _int_list(doc, "input_size", "input_size", 2, (32, 32))
    if augment is not None and augment.crop_size != input_size:
        raise ConfigError("augment.crop_size", f"must equal input_size {list(input_size)}")

    train = TrainConfig(
        depth=depth,
        unit_kind=kind,
        batch_size=_int(doc, "batch_size", "batch_size", 1, optional=True),
        epochs=epochs,
        lr_schedule=schedule,
        weight_decay=_num(doc, "weight_decay", "weight_decay", default=1e-4),
        momentum=_num(doc, "momentum", "momentum", hi=1.0, default=0.9),
        augment=augment,
        resize_method=resize_method,
        seed=_int(doc, "seed", "seed", 0, 0),
        widths=_int_list(doc, "widths", "widths", 3, (16, 32, 64)),
        dropout_rate=_num(doc, "dropout_rate", "dropout_rate", hi=1.0, default=0.5),
        input_size=input_size,
        allow_ntu=allow_ntu,
    )
    cfg = ExperimentConfig(protocol, dataset, out, train, perm)
    if check_paths:
        validate_paths(cfg)
    return cfg


def validate_paths(cfg: ExperimentConfig) -> None:
    if not Path(cfg.dataset.path).is_dir():
        raise ConfigError("dataset.path", f"directory not found: {cfg.dataset.path}")
    if cfg.permutation is not None and cfg.permutation not in SHIPPED_LAYOUTS:
        if not Path(cfg.permutation).is_file():
            raise ConfigError("permutation", f"not a shipped layout and no such file: {cfg.permutation}")


def load_experiment_config(path, overrides: Optional[Mapping[str, Any]] = None,
                           check_paths: bool = True) -> ExperimentConfig:
    """Read a JSON config, apply flag overrides (flag wins), then validate.

    Override keys are top-level config keys, or ``dataset.<key>`` for the
    dataset block.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    if isinstance(doc, dict):
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key.startswith("dataset."):
                doc.setdefault("dataset", {})[key.split(".", 1)[1]] = value
            else:
                doc[key] = value
    return parse_experiment_config(doc, check_paths)


def reference_config_path(name: str) -> Path:
    """Path of a bundled reference config, e.g. ``msr-as1``."""
    if name not in REFERENCE_CONFIGS:
        raise ConfigError("config", f"no bundled config {name!r}; choose from {REFERENCE_CONFIGS}")
    return Path(str(resources.files("skelres.configs").joinpath(f"{name}.json")))


def _resolve_config(arg: str) -> Path:
    return reference_config_path(arg) if arg in REFERENCE_CONFIGS and not Path(arg).exists() else Path(arg)


# ---------------------------------------------------------------------------
# commands


def worker_count() -> int:
    raw = os.environ.get("SKELRES_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("SKELRES_THREADS", f"expected a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("SKELRES_THREADS", f"expected a positive integer, got {raw!r}")
    return n


def cmd_encode(args) -> int:
    perm = load_permutation(args.permutation) if args.permutation else None
    sequences, failures = load_corpus(args.dataset, args.format, args.joints_per_frame,
                                      args.values_per_joint, args.pattern)
    failures = [{"path": f.path, "error": f.error} for f in failures]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    size = tuple(args.size)

    seen, jobs = set(), []
    for seq in sequences:
        name = f"{seq.key}.png"
        if name in seen:
            failures.append({"path": name, "error": "duplicate sequence identifier"})
            continue
        seen.add(name)
        jobs.append((name, seq))

    def work(job):
        name, seq = job
        try:
            save_png(encode_image(seq, perm, size, args.method), out / name)
            return name, seq.metadata(), None
        except (SkelResError, ValueError, OSError) as exc:
            return name, None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(work, jobs))

    images = {}
    for name, meta, err in results:
        if err is None:
            images[name] = meta
        else:
            failures.append({"path": name, "error": err})
    manifest = {
        "size": list(size),
        "method": args.method,
        "permutation": perm.layout if perm is not None else None,
        "images": dict(sorted(images.items())),
        "failures": failures,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    for f in failures:
        print(f"encode: failed {f['path']}: {f['error']}", file=sys.stderr)
    print(f"encode: wrote {len(images)} images, {len(failures)} failures", file=sys.stderr)
    return 1 if failures else 0


def _train_overrides(args) -> dict:
    over = {
        "dataset.path": args.dataset,
        "output_dir": args.output_dir,
        "protocol": args.protocol,
        "permutation": args.permutation,
        "depth": args.depth,
        "unit_kind": args.unit_kind,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "resize_method": args.resize_method,
    }
    if args.allow_ntu:
        over["allow_ntu"] = True
    return over


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Train per ``cfg``; writes metrics.csv, best/final checkpoints, config.json and summary.json."""
    start = time.perf_counter()
    corpus, failures = cfg.dataset.load()
    for f in failures:
        logger.warning("skipping %s: %s", f.path, f.error)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    meta = {"dataset": {k: v for k, v in asdict(cfg.dataset).items() if k != "path"},
            "permutation_layout": cfg.permutation}
    result = fit(cfg.train, corpus, cfg.protocol, cfg.load_permutation(), out, checkpoint_meta=meta)
    final, best = result.final, result.best
    summary = {
        "protocol": cfg.protocol,
        "split": result.split.name,
        "depth": cfg.train.depth,
        "unit_kind": cfg.train.unit_kind,
        "seed": cfg.train.seed,
        "epochs": cfg.train.epochs,
        "num_classes": result.split.num_classes,
        "num_train": len(result.split.train),
        "num_test": len(result.split.test),
        "load_failures": len(failures),
        "final_epoch": final.epoch,
        "final_test_accuracy": final.test_accuracy,
        "best_epoch": best.epoch,
        "best_test_accuracy": best.test_accuracy,
        "parameter_count": count_params(result.model.spec),
        "wall_time_seconds": time.perf_counter() - start,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_train(args) -> int:
    cfg = load_experiment_config(_resolve_config(args.config), _train_overrides(args))
    summary = run_experiment(cfg)
    print(json.dumps(summary, indent=2))
    return 0


def _protocol_mismatch(spec: NetworkSpec, meta: Mapping, split) -> Optional[str]:
    if spec.num_classes != split.num_classes:
        return f"checkpoint has {spec.num_classes} classes, protocol {split.protocol} has {split.num_classes}"
    classes = meta.get("classes")
    if classes is not None and list(classes) != list(split.classes):
        return f"checkpoint classes {classes} differ from protocol classes {list(split.classes)}"
    return None


def evaluate_checkpoint(checkpoint, dataset: DatasetConfig, protocol: Optional[str] = None) -> dict:
    spec, params, meta = load_checkpoint(checkpoint)
    protocol = canonical_protocol(protocol or meta.get("protocol", ""))
    corpus, failures = dataset.load()
    for f in failures:
        logger.warning("skipping %s: %s", f.path, f.error)
    split = make_split(corpus, protocol)
    problem = _protocol_mismatch(spec, meta, split)
    if problem:
        raise ProtocolMismatchError(problem)
    order = meta.get("permutation")
    perm = None if order is None else JointPermutation(meta.get("permutation_layout") or "checkpoint", tuple(order))
    by_key = {s.key: s for s in corpus}
    test = [by_key[k] for k in split.test]
    labels = np.array([split.labels[k] for k in split.test], dtype=np.int64)
    images = encode_eval_images(test, perm, eval_config_from_meta(meta))
    m = evaluate(Model(spec, params), images, labels, epoch=int(meta.get("epoch", 0)))
    conf = m.confusion
    totals = conf.sum(axis=1)
    per_class = {
        str(a): (float(conf[i, i] / totals[i]) if totals[i] else None) for i, a in enumerate(split.classes)
    }
    return {
        "checkpoint": str(checkpoint),
        "protocol": split.protocol,
        "split": split.name,
        "epoch": m.epoch,
        "num_test": int(conf.sum()),
        "test_accuracy": m.test_accuracy,
        "test_error_pct": m.test_error_pct,
        "per_class_accuracy": per_class,
        "classes": list(split.classes),
        "confusion": conf.tolist(),
    }


def write_confusion_csv(path, classes: Sequence[int], confusion) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + [str(c) for c in classes])
        for c, row in zip(classes, confusion):
            w.writerow([str(c)] + [int(v) for v in row])


def cmd_eval(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"no such checkpoint: {args.checkpoint}")
    _, _, meta = load_checkpoint(args.checkpoint)
    ds_meta = meta.get("dataset", {})
    dataset = DatasetConfig(
        args.dataset,
        args.format or ds_meta.get("format", "text"),
        args.joints_per_frame or ds_meta.get("joints_per_frame", 20),
        args.values_per_joint or ds_meta.get("values_per_joint", 4),
        args.pattern if args.pattern is not None else ds_meta.get("pattern"),
    )
    if not Path(dataset.path).is_dir():
        raise FileNotFoundError(f"no such dataset directory: {dataset.path}")
    report = evaluate_checkpoint(args.checkpoint, dataset, args.protocol)
    out = Path(args.out_dir or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_metrics.json").write_text(json.dumps(report, indent=2) + "\n")
    write_confusion_csv(out / "confusion.csv", report["classes"], report["confusion"])
    print(json.dumps({k: v for k, v in report.items() if k != "confusion"}, indent=2))
    return 0


def cmd_gradcheck(args) -> int:
    kinds = ("original", "proposed") if args.kind == "both" else (args.kind,)
    seeds = range(args.seed, args.seed + args.num_seeds)
    rows = summarize(run_gradcheck(seeds, kinds, args.depth, network_seeds=(args.seed,), corrupt=args.corrupt))
    for r in rows:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{r['check']:<24} max_rel_error={r['max_rel_error']:.3e}  tol={r['tolerance']:.0e}  "
              f"seeds={r['seeds']:<3} {status}")
    if args.report:
        Path(args.report).write_text(json.dumps(rows, indent=2) + "\n")
    failed = [r["check"] for r in rows if not r["passed"]]
    if failed:
        print(f"gradcheck: failed {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def inspect_path(path, fmt: Optional[str] = None, joints_per_frame: int = 20, values_per_joint: int = 4,
                 pattern: Optional[str] = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file or directory: {path}")
    if path.is_dir():
        if fmt is None:
            fmt = "json" if any(path.glob("*.json")) else "text"
        sequences, failures = load_corpus(path, fmt, joints_per_frame, values_per_joint, pattern)
        return {"dataset": str(path), **corpus_statistics(sequences),
                "failures": [{"path": f.path, "error": f.error} for f in failures]}
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        spec, params, meta = load_checkpoint(path)
        return {
            "checkpoint": str(path),
            "spec": spec.to_dict(),
            "num_units": spec.num_units,
            "units": [name for name, _ in spec.units()],
            "parameter_count": count_params(params),
            "meta": meta,
        }
    if fmt is None:
        fmt = "json" if path.suffix == ".json" else "text"
    seq = load_sequence(path, fmt, joints_per_frame, values_per_joint)
    return {"sequence": str(path), "key": seq.key, **seq.metadata(), "frames": seq.num_frames,
            "joints_per_frame": seq.joints_per_frame}


def cmd_inspect(args) -> int:
    print(json.dumps(inspect_path(args.path, args.format, args.joints_per_frame or 20,
                                  args.values_per_joint or 4, args.pattern), indent=2))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_dataset_options(p, defaults: bool = True):
    p.add_argument("--format", choices=("text", "json"), default="text" if defaults else None,
                   help="dataset file format")
    p.add_argument("--joints-per-frame", type=int, default=20 if defaults else None)
    p.add_argument("--values-per-joint", type=int, default=4 if defaults else None)
    p.add_argument("--pattern", default=None, help="glob for dataset files (default *.txt or *.json)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skelres", description="Skeleton action recognition with residual networks.")
    parser.add_argument("--version", action="version", version=f"skelres {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode a skeleton corpus to PNG images")
    p.add_argument("dataset", help="directory of skeleton files")
    _add_dataset_options(p)
    p.add_argument("--permutation", help=f"joint layout ({', '.join(SHIPPED_LAYOUTS)}) or JSON file")
    p.add_argument("--size", type=int, nargs=2, default=[32, 32], metavar=("H", "W"))
    p.add_argument("--method", choices=RESIZE_METHODS, default="nearest")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train on one protocol from an experiment config")
    p.add_argument("config", help=f"config JSON path or bundled name ({REFERENCE_CONFIGS[0]}, ...)")
    p.add_argument("--dataset", help="override dataset.path")
    p.add_argument("--output-dir")
    p.add_argument("--protocol")
    p.add_argument("--permutation")
    p.add_argument("--depth", type=int)
    p.add_argument("--unit-kind", choices=("original", "proposed"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resize-method", choices=RESIZE_METHODS)
    p.add_argument("--allow-ntu", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a protocol's test split")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    _add_dataset_options(p, defaults=False)
    p.add_argument("--protocol", help="defaults to the protocol stored in the checkpoint")
    p.add_argument("--out-dir", help="defaults to the checkpoint's directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer, unit and a small network")
    p.add_argument("--depth", type=int, default=20)
    p.add_argument("--kind", choices=("original", "proposed", "both"), default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-seeds", type=int, default=20)
    p.add_argument("--report", help="also write the summary as JSON")
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="summarize a checkpoint, a sequence file or a dataset directory")
    p.add_argument("path")
    _add_dataset_options(p, defaults=False)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"skelres {args.command}: config error in {exc}", file=sys.stderr)
    except (SkelResError, OSError, ValueError) as exc:
        print(f"skelres {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
