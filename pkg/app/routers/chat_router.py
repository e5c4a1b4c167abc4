from fastapi import APIRouter, Depends, Header, HTTPException, Request, status
from typing import Optional

from app.schemas.chat import ChatChoice, ChatCompletionRequest, ChatCompletionResponse, ChatMessage
from app.services.mock_chat_server import MockChatState

router = APIRouter(prefix="/v1", tags=["chat"])


def get_chat_state(request: Request) -> MockChatState:
    return request.app.state.chat


@router.post("/chat/completions", response_model=ChatCompletionResponse)
def create_chat_completion(
    body: ChatCompletionRequest,
    state: MockChatState = Depends(get_chat_state),
    authorization: Optional[str] = Header(default=None),
):
    if state.require_key is not None and authorization != f"Bearer {state.require_key}":
        raise HTTPException(status_code=status.HTTP_401_UNAUTHORIZED, detail="Invalid API key")
    call = state.record(body)
    if call <= state.fail_times:
        raise HTTPException(status_code=status.HTTP_503_SERVICE_UNAVAILABLE, detail="Backend warming up")
    user_turns = [m.content for m in body.messages if m.role == "user"]
    if not user_turns:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail="No user message")
    content = state.reply_for(user_turns[-1], body.temperature)
    return ChatCompletionResponse(
        id=f"mock-{call}",
        model=body.model,
        choices=[ChatChoice(message=ChatMessage(role="assistant", content=content))],
    )


@router.get("/health")
def health():
    return {"status": "ok"}
