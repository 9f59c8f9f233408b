"""Synthetic skeleton corpora shaped like the real datasets.

Each action gets its own motion signature (which joints move, along which
axis, at what frequency), so small networks can separate the classes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from skelres.skeldata import SkeletonSequence


def motion(action: int, subject: int, repetition: int, joints: int = 20, frames: int = 30,
           camera: int | None = None, noise: float = 0.01) -> SkeletonSequence:
    rng = np.random.default_rng([action, subject, repetition, camera or 0])
    base = np.random.default_rng(subject).uniform(-0.5, 0.5, (joints, 3)) + np.array([0.0, 0.0, 2.5])
    t = np.linspace(0.0, 1.0, frames)[:, None]
    sig = np.random.default_rng(1000 + action)
    moving = sig.choice(joints, size=max(2, joints // 4), replace=False)
    axis = int(sig.integers(3))
    freq = 0.5 + action % 4
    coords = np.repeat(base[None], frames, axis=0)
    coords[:, moving, axis] += 0.6 * np.sin(2 * np.pi * freq * t + sig.uniform(0, np.pi, len(moving)))
    coords += noise * rng.standard_normal(coords.shape)
    return SkeletonSequence(coords, subject_id=subject, action_id=action, repetition=repetition, camera_id=camera)


def msr_corpus(actions=range(1, 21), subjects=range(1, 11), repetitions=(1, 2), joints: int = 20,
               frames: int = 24) -> list[SkeletonSequence]:
    return [motion(a, s, e, joints, frames) for a in actions for s in subjects for e in repetitions]


def to_text(seq: SkeletonSequence, values_per_joint: int = 4) -> str:
    """Whitespace text in the row-per-joint layout, padding with confidence 1."""
    rows = []
    for frame in seq.coords:
        for x, y, z in frame:
            extra = " 1" * (values_per_joint - 3)
            rows.append(f"{float(x)!r} {float(y)!r} {float(z)!r}{extra}")
    return "\n".join(rows) + "\n"


def write_msr_dir(directory, sequences, values_per_joint: int = 4) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for seq in sequences:
        name = f"a{seq.action_id:02d}_s{seq.subject_id:02d}_e{seq.repetition:02d}_skeleton.txt"
        (directory / name).write_text(to_text(seq, values_per_joint))
    return directory
