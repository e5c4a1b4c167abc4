"""
Retry helper for calls to the remote chain-of-thought backend.

Exponential backoff (base_delay_ms * factor**(attempt-1)) with optional
jitter; only exceptions listed in ``retry_on`` are retried.
"""
from __future__ import annotations

import logging
import random
import time
from typing import Callable, TypeVar

T = TypeVar("T")

logger = logging.getLogger(__name__)


def backoff_delay_ms(attempt: int, base_delay_ms: int, factor: float, jitter_ms: int = 0) -> int:
    return int(base_delay_ms * (factor ** (attempt - 1))) + jitter_ms


def retry_sync(
    fn: Callable[[], T],
    *,
    max_attempts: int = 3,
    base_delay_ms: int = 300,
    factor: float = 1.8,
    jitter: bool = True,
    retry_on: tuple[type[BaseException], ...] = (Exception,),
    sleep: Callable[[float], None] = time.sleep,
) -> T:
    attempt = 1
    while True:
        try:
            return fn()
        except retry_on as exc:
            if attempt >= max_attempts:
                raise
            delay = backoff_delay_ms(attempt, base_delay_ms, factor, random.randint(0, 100) if jitter else 0)
            logger.warning("Attempt %d/%d failed (%s); retrying in %d ms", attempt, max_attempts, exc, delay)
            sleep(delay / 1000.0)
            attempt += 1
