"""Skeleton sequences, dataset adapters and evaluation protocol splits."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import (
    MissingMetadataError,
    NonFiniteError,
    NumericError,
    RowCountError,
    SchemaError,
    UnknownProtocolError,
)


@dataclass(frozen=True)
class Joint:
    x: float
    y: float
    z: float


@dataclass(eq=False)
class SkeletonSequence:
    """A skeleton sequence stored as an ``(N, K, 3)`` coordinate array.

    Metadata fields are optional so that raw text files can be parsed before
    their identity is known; protocols that need a field raise
    ``MissingMetadataError`` when it is absent.
    """

    coords: np.ndarray
    subject_id: Optional[int] = None
    action_id: Optional[int] = None
    repetition: Optional[int] = None
    camera_id: Optional[int] = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 3 or coords.shape[2] != 3:
            raise SchemaError("frames", f"expected (N, K, 3) coordinates, got {coords.shape}")
        if coords.shape[0] < 1 or coords.shape[1] < 1:
            raise SchemaError("frames", "a sequence needs at least one frame and one joint")
        if not np.all(np.isfinite(coords)):
            raise NonFiniteError("sequence contains NaN or infinite coordinates")
        self.coords = coords

    @property
    def num_frames(self) -> int:
        return self.coords.shape[0]

    @property
    def joints_per_frame(self) -> int:
        return self.coords.shape[1]

    @property
    def frames(self) -> list[list[Joint]]:
        return [[Joint(*map(float, j)) for j in frame] for frame in self.coords]

    @property
    def key(self) -> str:
        """Stable identifier, e.g. ``a02_s01_e03`` (``_c2`` appended when a camera is set)."""
        parts = []
        for prefix, value in (("a", self.action_id), ("s", self.subject_id), ("e", self.repetition)):
            parts.append(f"{prefix}{value:02d}" if value is not None else f"{prefix}xx")
        key = "_".join(parts)
        if self.camera_id is not None:
            key += f"_c{self.camera_id}"
        return key

    def with_coords(self, coords) -> "SkeletonSequence":
        return SkeletonSequence(coords, self.subject_id, self.action_id, self.repetition, self.camera_id)

    def __eq__(self, other):
        if not isinstance(other, SkeletonSequence):
            return NotImplemented
        return (
            self.metadata() == other.metadata()
            and self.coords.shape == other.coords.shape
            and bool(np.array_equal(self.coords, other.coords))
        )

    def metadata(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "action_id": self.action_id,
            "repetition": self.repetition,
            "camera_id": self.camera_id,
        }


# ---------------------------------------------------------------------------
# text adapter


def parse_text_skeleton(text, joints_per_frame: int, values_per_joint: int = 3, **metadata) -> SkeletonSequence:
    """Parse whitespace-separated rows, one joint per row, into a sequence.

    Only the first three values of each row are kept; anything after them
    (e.g. a tracking confidence) is discarded.
    """
    if values_per_joint < 3:
        raise ValueError("values_per_joint must be at least 3")
    if joints_per_frame < 1:
        raise ValueError("joints_per_frame must be positive")
    if not isinstance(text, str):
        text = text.read()

    tokens = text.split()
    if len(tokens) % values_per_joint:
        raise RowCountError(
            f"{len(tokens)} values is not a whole number of {values_per_joint}-value rows"
        )
    values = np.empty(len(tokens), dtype=np.float64)
    for i, tok in enumerate(tokens):
        try:
            values[i] = float(tok)
        except ValueError:
            raise NumericError(f"unparseable token {tok!r} at position {i}") from None

    rows = values.reshape(-1, values_per_joint)
    if len(rows) == 0 or len(rows) % joints_per_frame:
        raise RowCountError(f"{len(rows)} rows is not divisible by joints_per_frame={joints_per_frame}")
    xyz = rows[:, :3]
    if not np.all(np.isfinite(xyz)):
        raise NonFiniteError("sequence contains NaN or infinite coordinates")
    return SkeletonSequence(xyz.reshape(-1, joints_per_frame, 3), **metadata)


_MSR_NAME = re.compile(r"a(\d+)_s(\d+)_e(\d+)(?:_c(\d+))?", re.IGNORECASE)
_NTU_NAME = re.compile(r"S(\d{3})C(\d{3})P(\d{3})R(\d{3})A(\d{3})")


def metadata_from_filename(name: str) -> dict:
    """Extract subject/action/repetition (and camera) from a dataset file name.

    Understands the ``a01_s02_e03`` convention and NTU's ``S001C002P003R002A013``.
    Returns an empty dict when neither pattern matches.
    """
    m = _NTU_NAME.search(name)
    if m:
        _, camera, subject, rep, action = map(int, m.groups())
        return {"subject_id": subject, "action_id": action, "repetition": rep, "camera_id": camera}
    m = _MSR_NAME.search(name)
    if m:
        action, subject, rep = map(int, m.groups()[:3])
        meta = {"subject_id": subject, "action_id": action, "repetition": rep}
        if m.group(4) is not None:
            meta["camera_id"] = int(m.group(4))
        return meta
    return {}


# ---------------------------------------------------------------------------
# canonical JSON

_REQUIRED = ("subject_id", "action_id", "repetition", "joints_per_frame", "frames")
_OPTIONAL = ("camera_id",)


def write_canonical_json(seq: SkeletonSequence) -> str:
    for name in ("subject_id", "action_id", "repetition"):
        if getattr(seq, name) is None:
            raise SchemaError(name, f"{name} is required for canonical JSON")
    doc = {
        "subject_id": seq.subject_id,
        "action_id": seq.action_id,
        "repetition": seq.repetition,
        "joints_per_frame": seq.joints_per_frame,
        "frames": seq.coords.tolist(),
    }
    if seq.camera_id is not None:
        doc["camera_id"] = seq.camera_id
    # json uses repr(float), which round-trips doubles exactly
    return json.dumps(doc)


def parse_canonical_json(text: str) -> SkeletonSequence:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("document", f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("document", "top level must be an object")
    for name in _REQUIRED:
        if name not in doc:
            raise SchemaError(name, f"missing field {name!r}")
    for name in doc:
        if name not in _REQUIRED and name not in _OPTIONAL:
            raise SchemaError(name, f"unknown field {name!r}")

    meta = {}
    for name in ("subject_id", "action_id", "repetition", "joints_per_frame") + _OPTIONAL:
        if name not in doc:
            continue
        value = doc[name]
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise SchemaError(name, f"{name} must be a positive integer")
        meta[name] = value
    k = meta.pop("joints_per_frame")

    frames = doc["frames"]
    if not isinstance(frames, list) or not frames:
        raise SchemaError("frames", "frames must be a non-empty list")
    for n, frame in enumerate(frames):
        if not isinstance(frame, list) or len(frame) != k:
            raise SchemaError("frames", f"frame {n} must hold {k} joints")
        for joint in frame:
            if (
                not isinstance(joint, list)
                or len(joint) != 3
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in joint)
            ):
                raise SchemaError("frames", f"frame {n} has a malformed joint {joint!r}")
    return SkeletonSequence(np.array(frames, dtype=np.float64), **meta)


# ---------------------------------------------------------------------------
# corpus loading


@dataclass
class LoadFailure:
    path: str
    error: str


def load_sequence(path, fmt: str = "text", joints_per_frame: int = 20, values_per_joint: int = 4) -> SkeletonSequence:
    path = Path(path)
    text = path.read_text()
    if fmt == "json":
        return parse_canonical_json(text)
    if fmt == "text":
        meta = metadata_from_filename(path.name)
        return parse_text_skeleton(text, joints_per_frame, values_per_joint, **meta)
    raise ValueError(f"unknown dataset format {fmt!r}")


def load_corpus(
    directory,
    fmt: str = "text",
    joints_per_frame: int = 20,
    values_per_joint: int = 4,
    pattern: Optional[str] = None,
) -> tuple[list[SkeletonSequence], list[LoadFailure]]:
    """Load every matching file under ``directory``; parse errors are collected, not raised."""
    directory = Path(directory)
    if pattern is None:
        pattern = "*.json" if fmt == "json" else "*.txt"
    sequences, failures = [], []
    for path in sorted(directory.glob(pattern)):
        try:
            sequences.append(load_sequence(path, fmt, joints_per_frame, values_per_joint))
        except (OSError, ValueError, RowCountError, NumericError, NonFiniteError, SchemaError) as exc:
            failures.append(LoadFailure(str(path), f"{type(exc).__name__}: {exc}"))
    return sequences, failures


# ---------------------------------------------------------------------------
# protocols

MSR_ACTIONS = {
    1: "high arm wave", 2: "horizontal arm wave", 3: "hammer", 4: "hand catch",
    5: "forward punch", 6: "high throw", 7: "draw x", 8: "draw tick",
    9: "draw circle", 10: "hand clap", 11: "two hand wave", 12: "side-boxing",
    13: "bend", 14: "forward kick", 15: "side kick", 16: "jogging",
    17: "tennis swing", 18: "tennis serve", 19: "golf swing", 20: "pickup & throw",
}

MSR_SUBSETS = {
    "as1": ("horizontal arm wave", "hammer", "forward punch", "high throw",
            "hand clap", "bend", "tennis serve", "pickup & throw"),
    "as2": ("high arm wave", "hand catch", "draw x", "draw tick",
            "draw circle", "two hand wave", "forward kick", "side-boxing"),
    "as3": ("high throw", "forward kick", "side kick", "jogging",
            "tennis swing", "tennis serve", "golf swing", "pickup & throw"),
}

KARD_ACTIONS = {
    1: "horizontal arm wave", 2: "high arm wave", 3: "two-hand wave", 4: "catch cap",
    5: "high throw", 6: "draw x", 7: "draw tick", 8: "toss paper",
    9: "forward kick", 10: "side kick", 11: "take umbrella", 12: "bend",
    13: "hand clap", 14: "walk", 15: "phone call", 16: "drink",
    17: "sit down", 18: "stand up",
}

KARD_SETS = {
    "set1": ("horizontal arm wave", "two-hand wave", "bend", "phone call",
             "stand up", "forward kick", "draw x", "walk"),
    "set2": ("high arm wave", "side kick", "catch cap", "draw tick",
             "hand clap", "forward kick", "bend", "sit down"),
    "set3": ("draw tick", "drink", "sit down", "phone call",
             "take umbrella", "toss paper", "high throw", "horizontal arm wave"),
}

MSR_TRAIN_SUBJECTS = frozenset({1, 3, 5, 7, 9})
MSR_TEST_SUBJECTS = frozenset({2, 4, 6, 8, 10})
NTU_XSUB_TRAIN_SUBJECTS = frozenset(
    {1, 2, 4, 5, 8, 9, 13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34, 35, 38}
)
NTU_XVIEW_TRAIN_CAMERAS = frozenset({2, 3})
NTU_XVIEW_TEST_CAMERAS = frozenset({1})
NTU_NUM_ACTIONS = 60

KARD_EXPERIMENT_RULES = {
    "A": "train=repetition 1; test=repetitions 2-3",
    "B": "train=repetitions 1-2; test=repetition 3",
    "C": "train=odd subject ids; test=even subject ids",
}


def _ids_for(names, table) -> tuple[int, ...]:
    lookup = {v: k for k, v in table.items()}
    return tuple(sorted(lookup[n] for n in names))


PROTOCOLS = (
    [f"msr-{s}" for s in MSR_SUBSETS]
    + [f"kard-{s}-{e}" for s in KARD_SETS for e in "ABC"]
    + ["ntu-xsub", "ntu-xview"]
)


@dataclass
class ProtocolSplit:
    """Train/test membership produced by :func:`make_split`.

    ``classes`` lists the dataset action ids in label order, so the integer
    label of a sequence is ``classes.index(action_id)``.
    """

    name: str
    protocol: str
    train: list[str]
    test: list[str]
    classes: tuple[int, ...]
    rule: str = ""
    labels: dict[str, int] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def label(self, action_id: int) -> int:
        return self.classes.index(action_id)


def canonical_protocol(protocol: str) -> str:
    p = protocol.strip().lower()
    m = re.fullmatch(r"kard-(set[123])-([abc])", p)
    if m:
        return f"kard-{m.group(1)}-{m.group(2).upper()}"
    if p in PROTOCOLS:
        return p
    raise UnknownProtocolError(f"unknown protocol {protocol!r}; choose from {', '.join(PROTOCOLS)}")


def protocol_classes(protocol: str) -> tuple[int, ...]:
    protocol = canonical_protocol(protocol)
    if protocol.startswith("msr-"):
        return _ids_for(MSR_SUBSETS[protocol[4:]], MSR_ACTIONS)
    if protocol.startswith("kard-"):
        return _ids_for(KARD_SETS[protocol.split("-")[1]], KARD_ACTIONS)
    return tuple(range(1, NTU_NUM_ACTIONS + 1))


def _need(seq: SkeletonSequence, *names):
    for name in names:
        if getattr(seq, name) is None:
            raise MissingMetadataError(f"sequence {seq.key} has no {name}")


def _assign(protocol: str, seq: SkeletonSequence, classes) -> Optional[str]:
    """Return 'train', 'test' or None (not selected by the protocol)."""
    if protocol.startswith("msr-"):
        _need(seq, "subject_id", "action_id")
        if seq.action_id not in classes:
            return None
        if seq.subject_id in MSR_TRAIN_SUBJECTS:
            return "train"
        if seq.subject_id in MSR_TEST_SUBJECTS:
            return "test"
        return None
    if protocol.startswith("kard-"):
        experiment = protocol[-1]
        _need(seq, "action_id", *(("subject_id",) if experiment == "C" else ("repetition",)))
        if seq.action_id not in classes:
            return None
        if experiment == "C":
            return "train" if seq.subject_id % 2 else "test"
        n_train = 1 if experiment == "A" else 2
        if seq.repetition <= n_train:
            return "train"
        return "test" if seq.repetition <= 3 else None
    if protocol == "ntu-xsub":
        _need(seq, "subject_id", "action_id")
        if seq.action_id not in classes:
            return None
        return "train" if seq.subject_id in NTU_XSUB_TRAIN_SUBJECTS else "test"
    if protocol == "ntu-xview":
        _need(seq, "camera_id", "action_id")
        if seq.action_id not in classes:
            return None
        if seq.camera_id in NTU_XVIEW_TRAIN_CAMERAS:
            return "train"
        if seq.camera_id in NTU_XVIEW_TEST_CAMERAS:
            return "test"
        return None
    raise UnknownProtocolError(protocol)


def make_split(sequences: Iterable[SkeletonSequence], protocol: str) -> ProtocolSplit:
    protocol = canonical_protocol(protocol)
    classes = protocol_classes(protocol)
    if protocol.startswith("msr-"):
        rule = "train=subjects 1,3,5,7,9; test=subjects 2,4,6,8,10"
    elif protocol.startswith("kard-"):
        rule = KARD_EXPERIMENT_RULES[protocol[-1]]
    elif protocol == "ntu-xsub":
        rule = "train=subjects " + ",".join(map(str, sorted(NTU_XSUB_TRAIN_SUBJECTS))) + "; test=others"
    else:
        rule = "train=cameras 2,3; test=camera 1"

    train, test, labels = set(), set(), {}
    for seq in sequences:
        side = _assign(protocol, seq, classes)
        if side is None:
            continue
        key = seq.key
        if key in labels:
            raise SchemaError("key", f"duplicate sequence identifier {key}")
        labels[key] = classes.index(seq.action_id)
        (train if side == "train" else test).add(key)
    return ProtocolSplit(
        name=f"{protocol}[{rule}]",
        protocol=protocol,
        train=sorted(train),
        test=sorted(test),
        classes=classes,
        rule=rule,
        labels=labels,
    )


def corpus_statistics(sequences: list[SkeletonSequence]) -> dict:
    """Per-action and per-subject counts plus the frame-count distribution."""
    by_action: dict = {}
    by_subject: dict = {}
    frames = [s.num_frames for s in sequences]
    for s in sequences:
        by_action[s.action_id] = by_action.get(s.action_id, 0) + 1
        by_subject[s.subject_id] = by_subject.get(s.subject_id, 0) + 1
    stats = {
        "sequences": len(sequences),
        "per_action": {str(k): v for k, v in sorted(by_action.items(), key=lambda kv: (kv[0] is None, kv[0]))},
        "per_subject": {str(k): v for k, v in sorted(by_subject.items(), key=lambda kv: (kv[0] is None, kv[0]))},
    }
    if frames:
        stats["frames"] = {
            "min": int(min(frames)),
            "max": int(max(frames)),
            "mean": float(np.mean(frames)),
            "median": float(np.median(frames)),
        }
    if sequences:
        stats["joints_per_frame"] = sorted({s.joints_per_frame for s in sequences})
    return stats

