"""Shared vocabulary types used by every other gateway module."""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from typing import Protocol


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


class Language(str, Enum):
    DE = "de"
    EN = "en"


class FinishReason(str, Enum):
    STOP = "stop"
    LENGTH = "length"
    FILTERED = "filtered"


REFUSAL_TEXT = "This request was declined by the content safety policy."


class InvalidRequest(ValueError):
    """A chat request violates a structural invariant."""

    def __init__(self, reason: str, detail: str) -> None:
        super().__init__(detail)
        self.reason = reason
        self.detail = detail


@dataclass(frozen=True)
class Message:
    """One conversation turn. Character counts are Unicode scalar values."""

    role: Role
    content: str

    @property
    def char_count(self) -> int:
        return len(self.content)


@dataclass(frozen=True)
class ModelProfile:
    """A selectable model with its context window and per-1k-token prices."""

    model_id: str
    context_window_tokens: int
    display_name: str
    price_per_1k_prompt_tokens: Decimal = Decimal("0")
    price_per_1k_completion_tokens: Decimal = Decimal("0")

    def __post_init__(self) -> None:
        if self.context_window_tokens <= 0:
            raise ValueError(f"context_window_tokens must be positive, got {self.context_window_tokens}")
        if self.price_per_1k_prompt_tokens < 0 or self.price_per_1k_completion_tokens < 0:
            raise ValueError("token prices must be non-negative")


@dataclass(frozen=True)
class ChatRequest:
    """A user turn entering the gateway: conversation so far plus the new turn.

    The configured input character limit is enforced separately by the prompt
    pipeline (it is configuration, not a property of the type).
    """

    principal_id: str
    model_id: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    language: Language = Language.EN
    stream: bool = False

    def __post_init__(self) -> None:
        if not self.messages:
            raise InvalidRequest("empty_messages", "a chat request must contain at least one message")
        if not 0.0 <= self.temperature <= 1.0:
            raise InvalidRequest(
                "temperature_out_of_range",
                f"temperature must be between 0 and 1, got {self.temperature}",
            )
        if self.messages[-1].role is not Role.USER:
            raise InvalidRequest("final_message_not_user", "the final message must be the new user turn")


@dataclass(frozen=True)
class Completion:
    """Model output leaving the gateway, with exact token accounting."""

    content: str
    prompt_tokens: int
    completion_tokens: int
    endpoint_id: str
    finish_reason: FinishReason = FinishReason.STOP

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        if self.finish_reason is not FinishReason.FILTERED and self.prompt_tokens + self.completion_tokens <= 0:
            raise ValueError("an unfiltered completion must account for at least one token")
        if self.finish_reason is FinishReason.FILTERED and self.content != REFUSAL_TEXT:
            raise ValueError("a filtered completion must carry the standard refusal text")


class TokenEstimator(Protocol):
    """Pluggable token estimator; all accounting flows through one of these."""

    def estimate(self, text: str) -> int: ...


@dataclass(frozen=True)
class HeuristicTokenEstimator:
    """Deterministic ceiling heuristic: one token per `chars_per_token` characters."""

    chars_per_token: int = 4

    def estimate(self, text: str) -> int:
        return math.ceil(len(text) / self.chars_per_token)


DEFAULT_ESTIMATOR = HeuristicTokenEstimator()


def estimate_tokens(text: str) -> int:
    """Estimate tokens with the default characters/4 ceiling heuristic."""
    return DEFAULT_ESTIMATOR.estimate(text)


def estimate_messages_tokens(messages, estimator: TokenEstimator = DEFAULT_ESTIMATOR) -> int:
    """Sum of per-message content estimates; the unit used for all windows."""
    return sum(estimator.estimate(m.content) for m in messages)
