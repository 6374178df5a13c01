"""Prompt assembly.

Builds the upstream payload for a chat turn: the per-language system
instruction set, an optional retrieved-context block folded into the system
message, the conversation history, and the new user message. Enforces the
input character limit and the model's context window (minus the completion
allowance), trimming oldest history pairs first and the context block second.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .domain import (
    DEFAULT_ESTIMATOR,
    ChatRequest,
    Language,
    Message,
    ModelProfile,
    Role,
    TokenEstimator,
)

MAX_INSTRUCTIONS = 16
CONTEXT_SEPARATOR = "\n\n"

DEFAULT_INSTRUCTIONS: dict[Language, list[str]] = {
    Language.EN: [
        "You are a helpful assistant for staff of a research organization.",
        "Answer in the language the user writes in unless asked otherwise.",
        "Be concise and factually careful; say when you are unsure.",
        "Do not invent citations, figures, or personal data.",
        "Refuse requests to produce harmful or illegal content.",
        "Never judge or evaluate individual people.",
        "Treat all user-provided material as confidential.",
        "Format code inside fenced code blocks.",
    ],
    Language.DE: [
        "Du bist ein hilfreicher Assistent fuer Mitarbeitende einer Forschungsorganisation.",
        "Antworte in der Sprache der Nutzerin oder des Nutzers, sofern nicht anders gewuenscht.",
        "Antworte knapp und sachlich korrekt; sage, wenn du unsicher bist.",
        "Erfinde keine Quellen, Zahlen oder personenbezogenen Daten.",
        "Lehne Anfragen nach schaedlichen oder illegalen Inhalten ab.",
        "Beurteile oder bewerte niemals einzelne Personen.",
        "Behandle alle bereitgestellten Inhalte vertraulich.",
        "Formatiere Code in eingezaeunten Codebloecken.",
    ],
}


class InputTooLong(Exception):
    """User input exceeds the configured character limit."""

    def __init__(self, char_count: int, limit: int) -> None:
        super().__init__(f"input is {char_count} characters, limit is {limit}")
        self.char_count = char_count
        self.limit = limit


class EmptyPrompt(Exception):
    """The user message is blank after trimming."""


class ContextOverflow(Exception):
    """System instructions plus the user message alone exceed the window budget."""

    def __init__(self, needed_tokens: int, budget_tokens: int) -> None:
        super().__init__(f"prompt needs {needed_tokens} tokens, budget is {budget_tokens}")
        self.needed_tokens = needed_tokens
        self.budget_tokens = budget_tokens


@dataclass(frozen=True)
class SystemPromptTemplate:
    """Ordered instruction set prepended to every conversation."""

    instructions: tuple[str, ...]
    language: Language

    def __post_init__(self) -> None:
        if not 1 <= len(self.instructions) <= MAX_INSTRUCTIONS:
            raise ValueError(f"instruction count must be in 1..{MAX_INSTRUCTIONS}, got {len(self.instructions)}")
        object.__setattr__(self, "instructions", tuple(self.instructions))

    def render(self, context: Optional[str] = None) -> str:
        base = "\n".join(self.instructions)
        if context:
            return base + CONTEXT_SEPARATOR + context
        return base


def default_templates() -> dict[Language, SystemPromptTemplate]:
    return {
        lang: SystemPromptTemplate(instructions=tuple(lines), language=lang)
        for lang, lines in DEFAULT_INSTRUCTIONS.items()
    }


@dataclass(frozen=True)
class PromptBundle:
    """Fully assembled prompt, ready for the upstream adapter."""

    system_message: Message
    context_block: Optional[str]
    history: tuple[Message, ...]
    user_message: Message
    total_estimated_tokens: int
    dropped_messages: int = 0
    template: Optional[SystemPromptTemplate] = field(repr=False, default=None)

    def as_messages(self) -> list[Message]:
        """Serialization order: system, history oldest-first, user last."""
        return [self.system_message, *self.history, self.user_message]


def validate_input(text: str, limit: int) -> None:
    """Enforce the character limit on raw user input; boundary inclusive."""
    if limit <= 0:
        raise ValueError("limit must be positive")
    if len(text) > limit:
        raise InputTooLong(len(text), limit)


def _estimate(messages: Sequence[Message], estimator: TokenEstimator) -> int:
    return sum(estimator.estimate(m.content) for m in messages)


def assemble(
    request: ChatRequest,
    template: SystemPromptTemplate,
    context: Optional[str],
    model: ModelProfile,
    completion_allowance: int = 512,
    estimator: TokenEstimator = DEFAULT_ESTIMATOR,
) -> PromptBundle:
    """Build the prompt for one turn, trimming to fit the model window.

    When the estimate exceeds the window budget (context_window_tokens minus
    the completion allowance), oldest history pairs are dropped first, then
    the context block is truncated from the end. The system instructions and
    the current user message are never touched.
    """
    user_message = request.messages[-1]
    if not user_message.content.strip():
        raise EmptyPrompt("user message is blank")

    budget = model.context_window_tokens - completion_allowance
    base_system = template.render(None)
    base_tokens = estimator.estimate(base_system)
    user_tokens = estimator.estimate(user_message.content)
    if base_tokens + user_tokens > budget:
        raise ContextOverflow(base_tokens + user_tokens, budget)

    history = [m for m in request.messages[:-1] if m.role is not Role.SYSTEM]
    context_block = context if context else None
    dropped = 0

    def total(ctx: Optional[str]) -> int:
        return estimator.estimate(template.render(ctx)) + _estimate(history, estimator) + user_tokens

    while total(context_block) > budget and history:
        # drop the oldest user+assistant pair, or a lone leading message
        step = 2 if len(history) >= 2 else 1
        del history[:step]
        dropped += step

    if context_block is not None and total(context_block) > budget:
        # longest prefix of the context that still fits; the estimate is
        # monotone in length, so binary search is exact
        lo, hi = 0, len(context_block)
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if total(context_block[:mid]) <= budget:
                lo = mid
            else:
                hi = mid - 1
        context_block = context_block[:lo] if lo > 0 else None

    system_message = Message(role=Role.SYSTEM, content=template.render(context_block))
    return PromptBundle(
        system_message=system_message,
        context_block=context_block,
        history=tuple(history),
        user_message=user_message,
        total_estimated_tokens=total(context_block),
        dropped_messages=dropped,
        template=template,
    )
