from typing import Annotated

import typer
import uvicorn

from app.core.config import settings
from app.core.logging import setup_logging
from app.services.mock_chat_server import create_mock_chat_app


def serve_mock(
    host: Annotated[str, typer.Option("--host")] = "127.0.0.1",
    port: Annotated[int, typer.Option("--port")] = 8765,
    seed: Annotated[int, typer.Option("--seed", help="Paraphrase seed of the canned answers")] = 0,
) -> None:
    """Serve template chain-of-thought answers over the chat-completion API."""
    setup_logging(settings.LOG_LEVEL)
    uvicorn.run(create_mock_chat_app(seed=seed), host=host, port=port, log_level=settings.LOG_LEVEL.lower())
