"""
In-process chat-completion server used by tests and the ``serve-mock`` command.

By default it answers with the template backend's trace for the last user
message; ``reply`` may be a fixed body or a callable of (description, call number).
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

from fastapi import FastAPI

from app.schemas.chat import ChatCompletionRequest
from app.services.template_cot import template_cot

Reply = Union[str, Callable[[str, int], str]]


@dataclass
class MockChatState:
    reply: Optional[Reply] = None
    fail_times: int = 0
    require_key: Optional[str] = None
    seed: int = 0
    requests: List[ChatCompletionRequest] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, body: ChatCompletionRequest) -> int:
        with self._lock:
            self.requests.append(body)
            return len(self.requests)

    def reply_for(self, description: str, temperature: Optional[float] = None) -> str:
        if self.reply is None:
            return template_cot(description, self.seed)
        if callable(self.reply):
            return self.reply(description, len(self.requests))
        return self.reply


def create_mock_chat_app(
    reply: Optional[Reply] = None,
    fail_times: int = 0,
    require_key: Optional[str] = None,
    seed: int = 0,
) -> FastAPI:
    from app.routers.chat_router import router

    app = FastAPI(title="Motion CoT mock chat backend", version="1.0.0")
    app.state.chat = MockChatState(reply=reply, fail_times=fail_times, require_key=require_key, seed=seed)
    app.include_router(router)
    return app
