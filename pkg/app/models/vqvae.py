"""
VQ-VAE motion tokenizer.

Encoder: two strided temporal convolutions (kernel = stride = 2, ReLU), then a
linear map to the code dimension, so every 4 frames become one latent. With
kernel equal to stride a convolution is a reshape followed by a matmul. The
decoder mirrors it with transposed convolutions (matmul then reshape).

Inputs are padded by repeating the final frame up to a multiple of 4; the pad
length travels with the latents so ``decode`` callers can trim.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from app.core.autodiff import Tape, Var
from app.core.checkpoint import load_checkpoint, save_checkpoint
from app.core.errors import InsufficientFramesError, InvalidTokenError
from app.core.optim import ParameterSet
from app.models.codebook import Codebook
from app.models.motion import DEFAULT_FPS, MotionSequence, pad_to_multiple

logger = logging.getLogger(__name__)

DOWNSAMPLE = 4
CHECKPOINT_KIND = "tokenizer"


@dataclass
class LatentSequence:
    latents: np.ndarray
    downsample: int = DOWNSAMPLE
    pad: int = 0


def init_params(n_channels: int, hidden: int, code_dim: int, rng: np.random.Generator) -> ParameterSet:
    def dense(fan_in: int, fan_out: int) -> np.ndarray:
        return rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)

    return ParameterSet({
        "enc.w1": dense(2 * n_channels, hidden),
        "enc.b1": np.zeros(hidden),
        "enc.w2": dense(2 * hidden, hidden),
        "enc.b2": np.zeros(hidden),
        "enc.w3": dense(hidden, code_dim) * 0.5,
        "enc.b3": np.zeros(code_dim),
        "dec.w1": dense(code_dim, hidden),
        "dec.b1": np.zeros(hidden),
        "dec.w2": dense(hidden, 2 * hidden),
        "dec.b2": np.zeros(2 * hidden),
        "dec.w3": dense(hidden, 2 * n_channels) * 0.5,
        "dec.b3": np.zeros(2 * n_channels),
    })


def encoder_graph(tape: Tape, x: Var) -> Var:
    """(T, D) frames with T divisible by 4 -> (T/4, d) latents."""
    p = tape.params
    n, d = x.shape
    h = tape.reshape(x, (n // 2, 2 * d))
    h = tape.relu(h @ p["enc.w1"] + p["enc.b1"])
    hidden = h.shape[1]
    h = tape.reshape(h, (n // 4, 2 * hidden))
    h = tape.relu(h @ p["enc.w2"] + p["enc.b2"])
    return h @ p["enc.w3"] + p["enc.b3"]


def decoder_graph(tape: Tape, zq: Var) -> Var:
    """(n, d) quantized latents -> (4n, D) frames."""
    p = tape.params
    n = zq.shape[0]
    h = tape.relu(zq @ p["dec.w1"] + p["dec.b1"])
    h = tape.relu(h @ p["dec.w2"] + p["dec.b2"])
    hidden = h.shape[1] // 2
    h = tape.reshape(h, (2 * n, hidden))
    out = h @ p["dec.w3"] + p["dec.b3"]
    channels = out.shape[1] // 2
    return tape.reshape(out, (4 * n, channels))


@dataclass
class MotionTokenizer:
    params: ParameterSet
    codebook: Codebook
    n_channels: int
    hidden: int
    fps: int = DEFAULT_FPS

    @classmethod
    def create(cls, n_channels: int, hidden: int, codebook_size: int, code_dim: int,
               rng: np.random.Generator, decay: float = 0.99, eps_count: float = 1e-5,
               fps: int = DEFAULT_FPS) -> "MotionTokenizer":
        return cls(
            params=init_params(n_channels, hidden, code_dim, rng),
            codebook=Codebook.create(codebook_size, code_dim, rng, decay=decay, eps_count=eps_count),
            n_channels=n_channels,
            hidden=hidden,
            fps=fps,
        )

    @property
    def codebook_size(self) -> int:
        return self.codebook.size

    @property
    def code_dim(self) -> int:
        return self.codebook.dim

    def encode(self, m: MotionSequence) -> LatentSequence:
        if m.n_frames < DOWNSAMPLE:
            raise InsufficientFramesError(f"encode needs at least {DOWNSAMPLE} frames, got {m.n_frames}")
        frames, pad = pad_to_multiple(m.frames, DOWNSAMPLE)
        tape = Tape(self.params, record=False)
        z = encoder_graph(tape, tape.constant(frames))
        return LatentSequence(z.value, DOWNSAMPLE, pad)

    def quantize(self, z: LatentSequence) -> tuple[list[int], LatentSequence]:
        indices, zq = self.codebook.quantize(z.latents)
        return [int(i) for i in indices], LatentSequence(zq, z.downsample, z.pad)

    def check_tokens(self, tokens: Sequence[int]) -> None:
        for position, index in enumerate(tokens):
            if not 0 <= int(index) < self.codebook.size:
                raise InvalidTokenError(position, int(index), self.codebook.size)

    def decode(self, tokens: Sequence[int], n_frames: Optional[int] = None) -> MotionSequence:
        """Frames for ``tokens``: 4 per token, trimmed to ``n_frames`` when given."""
        self.check_tokens(tokens)
        if len(tokens) == 0:
            raise InsufficientFramesError("decode needs at least one token")
        tape = Tape(self.params, record=False)
        out = decoder_graph(tape, tape.constant(self.codebook.lookup(tokens))).value
        if n_frames is not None:
            out = out[:n_frames]
        return MotionSequence(out, fps=self.fps)

    def tokenize(self, m: MotionSequence) -> list[int]:
        tokens, _ = self.quantize(self.encode(m))
        return tokens

    def reconstruct(self, m: MotionSequence) -> MotionSequence:
        return self.decode(self.tokenize(m), n_frames=m.n_frames)

    # -- persistence -------------------------------------------------------
    def metadata(self) -> dict:
        return {
            "codebook_size": self.codebook.size,
            "code_dim": self.codebook.dim,
            "downsample": DOWNSAMPLE,
            "n_channels": self.n_channels,
            "hidden": self.hidden,
            "fps": self.fps,
            "decay": self.codebook.decay,
            "eps_count": self.codebook.eps_count,
        }

    def save(self, path: Union[str, Path]) -> Path:
        tensors = dict(self.params.values)
        tensors["codebook.codes"] = self.codebook.codes
        tensors["codebook.ema_counts"] = self.codebook.ema_counts
        tensors["codebook.ema_sums"] = self.codebook.ema_sums
        return save_checkpoint(path, tensors, CHECKPOINT_KIND, self.metadata())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MotionTokenizer":
        tensors, meta = load_checkpoint(path, expected_kind=CHECKPOINT_KIND)
        codebook = Codebook(
            codes=tensors["codebook.codes"].copy(),
            ema_counts=tensors["codebook.ema_counts"].copy(),
            ema_sums=tensors["codebook.ema_sums"].copy(),
            decay=meta["decay"],
            eps_count=meta["eps_count"],
            initialized=True,
        )
        params = ParameterSet({k: v for k, v in tensors.items() if not k.startswith("codebook.")})
        return cls(params, codebook, meta["n_channels"], meta["hidden"], meta["fps"])
