"""
Procedural motion-language corpus.

Six parametric families plus two-step "a+b" compositions. Every sample is a
pure function of (family, seed, spec): its frame counts, motion parameters,
jitter and description all come from generators seeded by ``derive_seed``.

Per-family envelope on |channel value| (before jitter; jitter adds at most
3 * noise since it is clipped at three standard deviations):

    walk-straight   max(2.0, 1.5 * (T - 1) / fps)   root drifts at <= 1.5 m/s
    walk-circle     3.1                             circle radius <= 1.5
    wave-arm        1.8                             raised hand <= 1.7
    squat           1.7
    turn-in-place   1.7
    jump            2.1                             hop height <= 0.4
    a+b             envelope(a) + envelope(b)       b's root is shifted to a's end
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Union

import numpy as np
import orjson

from app.core.errors import CorpusFormatError, InsufficientFramesError, UnknownFamilyError
from app.models.motion import REST_POSE, MotionSample, MotionSequence
from app.schemas.corpus import CorpusSpec
from app.utils.seeding import derive_seed

logger = logging.getLogger(__name__)

SIMPLE_FAMILIES = ("walk-straight", "walk-circle", "wave-arm", "squat", "turn-in-place", "jump")

SUBJECTS = ("a person", "someone", "a man", "a woman", "the figure")

_REPS_WORDS = {1: "once", 2: "twice", 3: "three times", 4: "four times"}
_SPEEDS = {"slow": (0.6, "slowly"), "normal": (1.0, "at a steady pace"), "fast": (1.5, "quickly")}
_ANGLES = {90: "a quarter turn", 180: "halfway around", 360: "all the way around"}

# channel indices
ROOT_X, ROOT_Z = 0, 1
HEIGHTS = [3, 5, 7, 9, 11]
LATERALS = [2, 4, 6, 8, 10]
UPPER_HEIGHTS = [3, 5, 7]


def _rest(n_frames: int) -> np.ndarray:
    frames = np.tile(REST_POSE.reshape(-1), (n_frames, 1))
    frames[:, ROOT_X] = 0.0
    frames[:, ROOT_Z] = 0.0
    return frames


def _phase(n_frames: int) -> np.ndarray:
    if n_frames < 2:
        return np.zeros(n_frames)
    return np.arange(n_frames) / (n_frames - 1)


def _gait(frames: np.ndarray, t: np.ndarray, freq: float, lift: float = 0.1) -> None:
    w = 2.0 * np.pi * freq * t
    frames[:, 9] += lift * np.maximum(0.0, np.sin(w))
    frames[:, 11] += lift * np.maximum(0.0, np.sin(w + np.pi))
    frames[:, 5] += 0.05 * np.sin(w + np.pi)
    frames[:, 7] += 0.05 * np.sin(w)


def _walk_straight(n: int, fps: int, rng: np.random.Generator) -> tuple[np.ndarray, dict[str, Any]]:
    speed_key = str(rng.choice(list(_SPEEDS)))
    direction = str(rng.choice(["forward", "backward"]))
    speed = _SPEEDS[speed_key][0]
    t = np.arange(n) / fps
    frames = _rest(n)
    frames[:, ROOT_Z] = (1.0 if direction == "forward" else -1.0) * speed * t
    _gait(frames, t, 1.2 + 0.6 * speed)
    return frames, {"speed": speed_key, "direction": direction}


def _walk_circle(n: int, fps: int, rng: np.random.Generator) -> tuple[np.ndarray, dict[str, Any]]:
    radius = float(rng.uniform(0.8, 1.5))
    turn = str(rng.choice(["clockwise", "counterclockwise"]))
    sign = -1.0 if turn == "clockwise" else 1.0
    theta = 2.0 * np.pi * _phase(n)
    frames = _rest(n)
    # closed loop: theta runs 0 -> 2*pi over the sequence
    frames[:, ROOT_X] = sign * radius * np.sin(theta)
    frames[:, ROOT_Z] = radius * (1.0 - np.cos(theta))
    _gait(frames, np.arange(n) / fps, 1.8)
    return frames, {"radius": radius, "turn": turn, "size": "small" if radius < 1.15 else "large"}


def _wave_arm(n: int, fps: int, rng: np.random.Generator) -> tuple[np.ndarray, dict[str, Any]]:
    side = str(rng.choice(["left", "right"]))
    reps = int(rng.integers(2, 5))
    u = _phase(n)
    raised = np.clip(3.0 * np.sin(np.pi * u), 0.0, 1.0)
    lat, height = (4, 5) if side == "left" else (6, 7)
    sign = -1.0 if side == "left" else 1.0
    frames = _rest(n)
    frames[:, height] += 0.7 * raised
    frames[:, lat] += sign * 0.1 * raised + 0.15 * raised * np.sin(2.0 * np.pi * reps * u)
    return frames, {"side": side, "reps": reps}


def _squat(n: int, fps: int, rng: np.random.Generator) -> tuple[np.ndarray, dict[str, Any]]:
    reps = int(rng.integers(1, 4))
    depth = float(rng.uniform(0.3, 0.5))
    drop = depth * 0.5 * (1.0 - np.cos(2.0 * np.pi * reps * _phase(n)))
    frames = _rest(n)
    for ch in UPPER_HEIGHTS:
        frames[:, ch] -= drop
    return frames, {"reps": reps, "depth": depth}


def _turn_in_place(n: int, fps: int, rng: np.random.Generator) -> tuple[np.ndarray, dict[str, Any]]:
    direction = str(rng.choice(["left", "right"]))
    angle = int(rng.choice(list(_ANGLES)))
    heading = (1.0 if direction == "left" else -1.0) * np.radians(angle) * _phase(n)
    frames = _rest(n)
    # lateral offsets shrink as the body turns side-on to the viewer
    frames[:, LATERALS] = REST_POSE[1:, 0][None, :] * np.cos(heading)[:, None]
    _gait(frames, np.arange(n) / fps, 1.5, lift=0.05)
    return frames, {"direction": direction, "angle": angle}


def _jump(n: int, fps: int, rng: np.random.Generator) -> tuple[np.ndarray, dict[str, Any]]:
    reps = int(rng.integers(1, 4))
    height = float(rng.uniform(0.2, 0.4))
    bump = height * np.sin(np.pi * reps * _phase(n)) ** 2
    frames = _rest(n)
    for ch in HEIGHTS:
        frames[:, ch] += bump
    return frames, {"reps": reps, "height": height}


GENERATORS: Dict[str, Callable[[int, int, np.random.Generator], tuple[np.ndarray, dict[str, Any]]]] = {
    "walk-straight": _walk_straight,
    "walk-circle": _walk_circle,
    "wave-arm": _wave_arm,
    "squat": _squat,
    "turn-in-place": _turn_in_place,
    "jump": _jump,
}

# Paraphrase variants per family; fields come from the generator parameters
VERB_PHRASES: Dict[str, tuple[str, ...]] = {
    "walk-straight": ("walks {direction} {speed_words}", "takes steps {direction} {speed_words}",
                      "moves {direction} on foot {speed_words}"),
    "walk-circle": ("walks in a {size} circle {turn}", "walks around a {size} loop {turn}",
                    "paces a {size} circle {turn}"),
    "wave-arm": ("waves the {side} hand {reps_words}", "raises the {side} arm and waves {reps_words}",
                 "waves {reps_words} with the {side} hand"),
    "squat": ("squats down {reps_words}", "does a deep squat {reps_words}",
              "bends the knees and squats {reps_words}"),
    "turn-in-place": ("turns {angle_words} to the {direction}", "spins {angle_words} to the {direction}",
                      "turns in place {angle_words} to the {direction}"),
    "jump": ("jumps {reps_words}", "hops up {reps_words}", "jumps in place {reps_words}"),
}


def parse_family(family: str) -> List[str]:
    parts = family.split("+")
    if len(parts) > 2 or any(p not in GENERATORS for p in parts):
        raise UnknownFamilyError(family)
    return parts


def family_envelope(family: str, n_frames: int, fps: int, noise: float = 0.0) -> float:
    base = {
        "walk-straight": max(2.0, 1.5 * (n_frames - 1) / fps),
        "walk-circle": 3.1,
        "wave-arm": 1.8,
        "squat": 1.7,
        "turn-in-place": 1.7,
        "jump": 2.1,
    }
    return sum(base[p] for p in parse_family(family)) + 3.0 * noise * len(parse_family(family))


def _words(params: dict[str, Any]) -> dict[str, Any]:
    fields = dict(params)
    if "reps" in params:
        fields["reps_words"] = _REPS_WORDS[params["reps"]]
    if "speed" in params:
        fields["speed_words"] = _SPEEDS[params["speed"]][1]
    if "angle" in params:
        fields["angle_words"] = _ANGLES[params["angle"]]
    return fields


def describe(parts: List[str], part_params: List[dict[str, Any]], rng: np.random.Generator) -> str:
    subject = str(rng.choice(SUBJECTS))
    phrases = [str(rng.choice(VERB_PHRASES[p])).format(**_words(params)) for p, params in zip(parts, part_params)]
    return f"{subject} {' then '.join(phrases)}"


def blend(a: np.ndarray, b: np.ndarray, overlap: int) -> np.ndarray:
    """Concatenate with a linear cross-fade over ``overlap`` frames; b's root starts where a ends."""
    b = b.copy()
    b[:, ROOT_X] += a[-1, ROOT_X] - b[0, ROOT_X]
    b[:, ROOT_Z] += a[-1, ROOT_Z] - b[0, ROOT_Z]
    if overlap == 0:
        return np.concatenate([a, b], axis=0)
    alpha = (np.arange(1, overlap + 1) / (overlap + 1))[:, None]
    mixed = (1.0 - alpha) * a[-overlap:] + alpha * b[:overlap]
    return np.concatenate([a[:-overlap], mixed, b[overlap:]], axis=0)


def generate_sample(family: str, seed: int, spec: CorpusSpec, sample_id: str = "") -> MotionSample:
    """Regenerate one sample; equal (family, seed, spec) give bit-identical frames."""
    parts = parse_family(family)
    pieces = []
    part_params = []
    for index, part in enumerate(parts):
        rng = np.random.default_rng(derive_seed(seed, "part", index))
        n_frames = int(rng.integers(spec.min_frames, spec.max_frames + 1))
        frames, params = GENERATORS[part](n_frames, spec.fps, rng)
        if spec.noise > 0:
            frames = frames + spec.noise * np.clip(rng.standard_normal(frames.shape), -3.0, 3.0)
        pieces.append(frames)
        part_params.append(params)
    frames = pieces[0] if len(pieces) == 1 else blend(pieces[0], pieces[1], spec.blend_overlap)
    text = describe(parts, part_params, np.random.default_rng(derive_seed(seed, "text")))
    params: dict[str, Any] = part_params[0] if len(parts) == 1 else {"parts": part_params}
    return MotionSample(
        id=sample_id or f"{family}-{seed}",
        text=text,
        family=family,
        motion=MotionSequence(frames, fps=spec.fps),
        seed=seed,
        params=params,
    )


def generate_corpus(spec: CorpusSpec) -> List[MotionSample]:
    for family in spec.families:
        parse_family(family)
    samples = []
    for family, count in spec.families.items():
        for index in range(count):
            samples.append(
                generate_sample(family, derive_seed(spec.seed, family, index), spec, f"{family}-{index:04d}")
            )
    logger.info("Generated %d samples over %d families", len(samples), len(spec.families))
    return samples


def split_corpus(samples: List[MotionSample], spec: CorpusSpec) -> Dict[str, List[MotionSample]]:
    """Per-family seeded partition into train/val/test, keeping corpus order inside each split."""
    by_family: Dict[str, List[int]] = {}
    for position, sample in enumerate(samples):
        by_family.setdefault(sample.family, []).append(position)
    assignment: Dict[int, str] = {}
    for family, positions in by_family.items():
        rng = np.random.default_rng(derive_seed(spec.seed, "split", family))
        order = [positions[i] for i in rng.permutation(len(positions))]
        n_train = min(len(order), int(round(spec.splits[0] * len(order))))
        n_val = min(len(order) - n_train, int(round(spec.splits[1] * len(order))))
        for rank, position in enumerate(order):
            assignment[position] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    splits: Dict[str, List[MotionSample]] = {"train": [], "val": [], "test": []}
    for position, sample in enumerate(samples):
        splits[assignment[position]].append(sample)
    return splits


def save_jsonl(path: Union[str, Path], samples: Iterable[MotionSample]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        for sample in samples:
            record = {
                "id": sample.id,
                "text": sample.text,
                "family": sample.family,
                "fps": sample.motion.fps,
                "frames": sample.motion.frames,
                "seed": sample.seed,
            }
            fh.write(orjson.dumps(record, option=orjson.OPT_SERIALIZE_NUMPY))
            fh.write(b"\n")
    return path


_REQUIRED = ("id", "text", "family", "fps", "frames", "seed")


def load_jsonl(path: Union[str, Path]) -> List[MotionSample]:
    samples = []
    with open(path, "rb") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = orjson.loads(line)
            except orjson.JSONDecodeError as exc:
                raise CorpusFormatError(line_no, f"invalid JSON ({exc})") from exc
            if not isinstance(record, dict):
                raise CorpusFormatError(line_no, "expected a JSON object")
            missing = [key for key in _REQUIRED if key not in record]
            if missing:
                raise CorpusFormatError(line_no, f"missing fields {missing}")
            try:
                motion = MotionSequence(np.asarray(record["frames"], dtype=np.float64), fps=int(record["fps"]))
            except (ValueError, TypeError, InsufficientFramesError) as exc:
                raise CorpusFormatError(line_no, f"bad frames ({exc})") from exc
            samples.append(
                MotionSample(
                    id=str(record["id"]),
                    text=str(record["text"]),
                    family=str(record["family"]),
                    motion=motion,
                    seed=int(record["seed"]),
                )
            )
    return samples
