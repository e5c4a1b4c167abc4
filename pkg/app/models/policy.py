"""
Causal transformer token policy.

Pre-norm blocks of masked multi-head self-attention and a ReLU
feed-forward, learned absolute positions, and an untied output projection.
The causal mask is an additive constant of -1e9 above the diagonal.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from app.core.autodiff import Tape, Var
from app.core.checkpoint import load_checkpoint, save_checkpoint
from app.core.errors import ContextOverflowError, ShapeError
from app.core.optim import ParameterSet
from app.schemas.training import SftConfig

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "policy"
MASK_VALUE = -1e9


def causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), MASK_VALUE), k=1)


@dataclass
class PolicyModel:
    params: ParameterSet
    vocab_size: int
    d_model: int
    n_layers: int
    n_heads: int
    d_ff: int
    context_length: int

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ShapeError("attention heads", [(self.d_model,), (self.n_heads,)])

    @classmethod
    def create(cls, vocab_size: int, cfg: SftConfig, rng: np.random.Generator) -> "PolicyModel":
        c, f, std = cfg.d_model, cfg.d_ff, cfg.init_std
        values: dict[str, np.ndarray] = {
            "tok_emb": rng.standard_normal((vocab_size, c)) * std,
            "pos_emb": rng.standard_normal((cfg.context_length, c)) * std,
        }
        for layer in range(cfg.n_layers):
            prefix = f"blocks.{layer}"
            values[f"{prefix}.ln1.g"] = np.ones(c)
            values[f"{prefix}.ln1.b"] = np.zeros(c)
            for name in ("wq", "wk", "wv", "wo"):
                values[f"{prefix}.attn.{name}"] = rng.standard_normal((c, c)) * std
            values[f"{prefix}.ln2.g"] = np.ones(c)
            values[f"{prefix}.ln2.b"] = np.zeros(c)
            values[f"{prefix}.mlp.w1"] = rng.standard_normal((c, f)) * std
            values[f"{prefix}.mlp.b1"] = np.zeros(f)
            values[f"{prefix}.mlp.w2"] = rng.standard_normal((f, c)) * std
            values[f"{prefix}.mlp.b2"] = np.zeros(c)
        values["ln_f.g"] = np.ones(c)
        values["ln_f.b"] = np.zeros(c)
        values["head.w"] = rng.standard_normal((c, vocab_size)) * std
        values["head.b"] = np.zeros(vocab_size)
        return cls(ParameterSet(values), vocab_size, c, cfg.n_layers, cfg.n_heads, f, cfg.context_length)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def _attention(self, tape: Tape, h: Var, layer: int, mask: np.ndarray) -> Var:
        p = tape.params
        prefix = f"blocks.{layer}.attn"
        b, t, _ = h.shape

        def heads(x: Var) -> Var:
            return tape.transpose(tape.reshape(x, (b, t, self.n_heads, self.head_dim)), (0, 2, 1, 3))

        q = heads(h @ p[f"{prefix}.wq"])
        k = heads(h @ p[f"{prefix}.wk"])
        v = heads(h @ p[f"{prefix}.wv"])
        scores = (q @ tape.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.head_dim)) + mask
        out = tape.softmax(scores, axis=-1) @ v
        out = tape.reshape(tape.transpose(out, (0, 2, 1, 3)), (b, t, self.d_model))
        return out @ p[f"{prefix}.wo"]

    def graph(self, tape: Tape, ids: np.ndarray) -> Var:
        """Logits ``(B, T, V)`` for a ``(B, T)`` batch of token ids."""
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        _, t = ids.shape
        if t > self.context_length:
            raise ContextOverflowError(f"sequence of {t} tokens exceeds context length {self.context_length}")
        p = tape.params
        x = tape.embedding(p["tok_emb"], ids) + tape.embedding(p["pos_emb"], np.arange(t))
        mask = tape.constant(causal_mask(t))
        for layer in range(self.n_layers):
            prefix = f"blocks.{layer}"
            h = tape.layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
            x = x + self._attention(tape, h, layer, mask)
            h = tape.layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
            h = tape.relu(h @ p[f"{prefix}.mlp.w1"] + p[f"{prefix}.mlp.b1"])
            x = x + h @ p[f"{prefix}.mlp.w2"] + p[f"{prefix}.mlp.b2"]
        x = tape.layer_norm(x, p["ln_f.g"], p["ln_f.b"])
        return x @ p["head.w"] + p["head.b"]

    def logits(self, ids: np.ndarray) -> np.ndarray:
        tape = Tape(self.params, record=False)
        return self.graph(tape, ids).value

    def log_probs(self, ids: np.ndarray) -> np.ndarray:
        tape = Tape(self.params, record=False)
        return tape.log_softmax(self.graph(tape, ids), axis=-1).value

    def frozen(self) -> "PolicyModel":
        return PolicyModel(self.params.snapshot(), self.vocab_size, self.d_model, self.n_layers,
                           self.n_heads, self.d_ff, self.context_length)

    def clone(self) -> "PolicyModel":
        return PolicyModel(self.params.copy(), self.vocab_size, self.d_model, self.n_layers,
                           self.n_heads, self.d_ff, self.context_length)

    def metadata(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "context_length": self.context_length,
        }

    def save(self, path: Union[str, Path], **extra: object) -> Path:
        return save_checkpoint(path, self.params.values, CHECKPOINT_KIND, {**self.metadata(), **extra})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PolicyModel":
        params, meta = load_checkpoint(path, expected_kind=CHECKPOINT_KIND)
        return cls(params, meta["vocab_size"], meta["d_model"], meta["n_layers"], meta["n_heads"],
                   meta["d_ff"], meta["context_length"])
