"""Parameter containers, Adam and the cosine learning-rate schedule."""
from __future__ import annotations

import copy
import math
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from app.core.errors import NonFiniteGradientError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


class ParameterSet(Mapping):
    """Named float64 arrays plus per-parameter Adam state."""

    def __init__(self, values: Optional[Mapping[str, np.ndarray]] = None):
        self.values: dict[str, np.ndarray] = {}
        self.state: dict[str, AdamState] = {}
        for name, value in (values or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.values:
            raise ValueError(f"Duplicate parameter name '{name}'")
        array = np.array(value, dtype=np.float64)
        self.values[name] = array
        return array

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.values.values()))

    def copy(self) -> "ParameterSet":
        clone = ParameterSet(self.values)
        clone.state = copy.deepcopy(self.state)
        return clone

    def snapshot(self) -> "ParameterSet":
        """Read-only copy of the values without optimizer state."""
        clone = ParameterSet(self.values)
        for array in clone.values.values():
            array.setflags(write=False)
        return clone

    def load(self, other: Mapping[str, np.ndarray]) -> None:
        for name, value in other.items():
            if name not in self.values or self.values[name].shape != np.shape(value):
                raise ValueError(f"Parameter '{name}' does not match this set")
            self.values[name][...] = value


def adam_step(
    params: ParameterSet,
    grads: Mapping[str, np.ndarray],
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> ParameterSet:
    """Bias-corrected Adam update applied in place."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    # Check everything before touching any parameter
    for name, grad in grads.items():
        if not np.isfinite(grad).all():
            raise NonFiniteGradientError(name)
    beta1, beta2 = betas
    for name, grad in grads.items():
        param = params.values[name]
        state = params.state.get(name)
        if state is None:
            state = AdamState(np.zeros_like(param), np.zeros_like(param))
            params.state[name] = state
        state.step += 1
        state.m = beta1 * state.m + (1.0 - beta1) * grad
        state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
        m_hat = state.m / (1.0 - beta1 ** state.step)
        v_hat = state.v / (1.0 - beta2 ** state.step)
        param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float = 0.0) -> float:
    if lr_min < 0 or lr_max < lr_min:
        raise ValueError("need lr_max >= lr_min >= 0")
    if step < 0:
        raise ValueError("step must be non-negative")
    if total_steps <= 0:
        return lr_max
    if step >= total_steps:
        return lr_min
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))
