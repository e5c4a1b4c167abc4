"""Motion containers for a 6-joint 2-D stick figure.

Channel layout (D = 12, two channels per joint, in this order):

    root        ground-plane trajectory (x, z)
    head        body-frame (lateral, height)
    left_hand   body-frame (lateral, height)
    right_hand  body-frame (lateral, height)
    left_foot   body-frame (lateral, height)
    right_foot  body-frame (lateral, height)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from app.core.errors import InsufficientFramesError

JOINTS = ("root", "head", "left_hand", "right_hand", "left_foot", "right_foot")
N_JOINTS = len(JOINTS)
N_CHANNELS = 2 * N_JOINTS
DEFAULT_FPS = 20

REST_POSE = np.array(
    [
        [0.0, 0.0],
        [0.0, 1.6],
        [-0.35, 1.0],
        [0.35, 1.0],
        [-0.15, 0.0],
        [0.15, 0.0],
    ]
)


@dataclass(frozen=True, eq=False)
class MotionSequence:
    frames: np.ndarray
    fps: int = DEFAULT_FPS

    def __post_init__(self) -> None:
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise InsufficientFramesError(f"Motion needs a T x D array with T >= 1, got shape {frames.shape}")
        if not np.isfinite(frames).all():
            raise ValueError("Motion frames must be finite")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_channels(self) -> int:
        return self.frames.shape[1]

    def velocity(self, per_second: bool = False) -> np.ndarray:
        """First differences along time, shape (T-1) x D; ``per_second`` scales by fps."""
        if self.n_frames < 2:
            raise InsufficientFramesError(f"velocity needs at least 2 frames, got {self.n_frames}")
        diff = np.diff(self.frames, axis=0)
        return diff * self.fps if per_second else diff

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, MotionSequence):
            return NotImplemented
        return self.fps == other.fps and np.array_equal(self.frames, other.frames)

    __hash__ = None  # type: ignore[assignment]


@dataclass
class MotionSample:
    id: str
    text: str
    family: str
    motion: MotionSequence
    seed: int
    params: dict[str, Any] = field(default_factory=dict, compare=False)


def velocity(m: MotionSequence) -> np.ndarray:
    return m.velocity()


def pad_to_multiple(frames: np.ndarray, multiple: int) -> tuple[np.ndarray, int]:
    """Repeat the last frame until T is a multiple of ``multiple``; returns the pad length too."""
    pad = (-frames.shape[0]) % multiple
    if pad:
        frames = np.concatenate([frames, np.repeat(frames[-1:], pad, axis=0)], axis=0)
    return frames, pad
