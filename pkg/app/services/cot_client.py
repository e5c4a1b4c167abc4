"""
HTTP chat-completion client for the remote chain-of-thought backend.

Request body: ``{"model", "messages": [system, user], "temperature"}``;
the reply text is read from ``choices[0].message.content``.
"""
from __future__ import annotations

import logging
import os
import time
from typing import Any, Callable, Optional

import httpx

from app.core.config import settings
from app.core.errors import CotBackendError, CotConfigurationError
from app.schemas.cot import CotBackendConfig
from app.services.cot_prompts import COT_SYSTEM_PROMPT
from app.services.retry import retry_sync

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})


class RetryableStatusError(Exception):
    def __init__(self, status_code: int):
        super().__init__(f"server answered {status_code}")
        self.status_code = status_code


class ChatCompletionClient:
    def __init__(
        self,
        cfg: CotBackendConfig,
        http: Optional[httpx.Client] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.cfg = cfg
        self.endpoint = cfg.endpoint or settings.COT_ENDPOINT
        if not self.endpoint:
            raise CotConfigurationError("Remote CoT backend needs an endpoint (cot.backend.endpoint or COT_ENDPOINT)")
        self._api_key = os.environ.get(cfg.api_key_env)
        if not self._api_key:
            raise CotConfigurationError(f"Environment variable {cfg.api_key_env} is not set")
        self._http = http or httpx.Client(timeout=cfg.timeout)
        self._sleep = sleep

    def build_payload(self, description: str) -> dict[str, Any]:
        return {
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": COT_SYSTEM_PROMPT},
                {"role": "user", "content": description},
            ],
            "temperature": self.cfg.temperature,
        }

    def _post(self, payload: dict[str, Any]) -> str:
        response = self._http.post(
            self.endpoint,
            json=payload,
            headers={"Authorization": f"Bearer {self._api_key}"},
            timeout=self.cfg.timeout,
        )
        if response.status_code in RETRYABLE_STATUS:
            raise RetryableStatusError(response.status_code)
        if response.status_code >= 400:
            raise CotBackendError(f"CoT backend rejected the request: {response.status_code} {response.text[:200]}")
        try:
            return str(response.json()["choices"][0]["message"]["content"])
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise CotBackendError(f"Malformed chat-completion response: {exc}") from exc

    def complete(self, description: str) -> str:
        payload = self.build_payload(description)
        try:
            return retry_sync(
                lambda: self._post(payload),
                max_attempts=self.cfg.max_retries,
                retry_on=(httpx.TransportError, RetryableStatusError),
                sleep=self._sleep,
            )
        except (httpx.TransportError, RetryableStatusError) as exc:
            raise CotBackendError(
                f"CoT backend unreachable after {self.cfg.max_retries} attempt(s): {exc}"
            ) from exc

    def close(self) -> None:
        self._http.close()
