"""Client-held conversation documents.

The server keeps no conversation content; users download their conversation
as a small two-line document and upload it later to continue. Line one is the
canonical JSON body (sorted keys, compact separators, UTF-8, temperature
fixed to two decimals), line two is the SHA-256 hex digest of the body bytes.
The checksum is verified on the raw bytes before anything is parsed, so any
corruption of a user-managed file surfaces as bad_checksum, never as a
half-imported conversation.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Optional

from .domain import Language, Message, Role

FORMAT_VERSION = 1
CREATED_AT_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
_TEMPERATURE_PATTERN = re.compile(r"[01]\.\d{2}")
_BODY_KEYS = {"created_at", "format_version", "language", "messages", "model_id", "temperature"}


class ImportFailureReason(str, Enum):
    BAD_CHECKSUM = "bad_checksum"
    UNSUPPORTED_VERSION = "unsupported_version"
    MALFORMED = "malformed"
    INVARIANT_VIOLATION = "invariant_violation"


class ImportFailure(Exception):
    def __init__(self, reason: ImportFailureReason, detail: str) -> None:
        super().__init__(f"{reason.value}: {detail}")
        self.reason = reason
        self.detail = detail


@dataclass(frozen=True)
class ConversationState:
    """A validated conversation ready to continue: settings plus history."""

    model_id: str
    language: Language
    temperature: float
    created_at: str
    messages: tuple[Message, ...]

    def history_messages(self) -> list[Message]:
        return list(self.messages)


def utc_timestamp(now: Optional[float] = None) -> str:
    if now is None:
        return datetime.now(tz=timezone.utc).strftime(CREATED_AT_FORMAT)
    return datetime.fromtimestamp(now, tz=timezone.utc).strftime(CREATED_AT_FORMAT)


def _canonical_body(state: ConversationState) -> bytes:
    body = {
        "created_at": state.created_at,
        "format_version": FORMAT_VERSION,
        "language": state.language.value,
        "messages": [{"content": m.content, "role": m.role.value} for m in state.messages],
        "model_id": state.model_id,
        "temperature": f"{state.temperature:.2f}",
    }
    return json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def export_conversation(state: ConversationState) -> bytes:
    """Serialize a conversation; byte-deterministic for a given state."""
    body = _canonical_body(state)
    checksum = hashlib.sha256(body).hexdigest()
    return body + b"\n" + checksum.encode("ascii") + b"\n"


def _check_alternation(messages: list[dict]) -> None:
    for index, entry in enumerate(messages):
        expected = Role.USER.value if index % 2 == 0 else Role.ASSISTANT.value
        if entry["role"] != expected:
            raise ImportFailure(
                ImportFailureReason.INVARIANT_VIOLATION,
                f"messages[{index}].role must be {expected!r}",
            )


def import_conversation(raw: bytes, input_char_limit: int = 5000) -> ConversationState:
    """Parse and validate an uploaded document; all failures are total."""
    # integrity first, on the raw bytes: if the checksum cannot be located
    # and matched, nothing else is trustworthy
    if not raw.endswith(b"\n"):
        raise ImportFailure(ImportFailureReason.BAD_CHECKSUM, "document does not end with a checksum line")
    stripped = raw[:-1]
    if b"\n" not in stripped:
        raise ImportFailure(ImportFailureReason.BAD_CHECKSUM, "document does not end with a checksum line")
    body, checksum_line = stripped.rsplit(b"\n", 1)
    try:
        presented = checksum_line.decode("ascii")
    except UnicodeDecodeError:
        raise ImportFailure(ImportFailureReason.BAD_CHECKSUM, "checksum line is not readable") from None
    if hashlib.sha256(body).hexdigest() != presented:
        raise ImportFailure(ImportFailureReason.BAD_CHECKSUM, "checksum does not match document body")

    try:
        parsed = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ImportFailure(ImportFailureReason.MALFORMED, "body is not valid JSON") from None
    if not isinstance(parsed, dict):
        raise ImportFailure(ImportFailureReason.MALFORMED, "body must be a JSON object")
    if set(parsed) != _BODY_KEYS:
        raise ImportFailure(ImportFailureReason.MALFORMED, "body must carry exactly the documented fields")

    version = parsed["format_version"]
    if not isinstance(version, int) or isinstance(version, bool):
        raise ImportFailure(ImportFailureReason.MALFORMED, "format_version must be an integer")
    if version != FORMAT_VERSION:
        raise ImportFailure(ImportFailureReason.UNSUPPORTED_VERSION, f"format_version {version} is not supported")

    model_id = parsed["model_id"]
    if not isinstance(model_id, str) or not model_id:
        raise ImportFailure(ImportFailureReason.MALFORMED, "model_id must be a non-empty string")

    language_value = parsed["language"]
    if not isinstance(language_value, str):
        raise ImportFailure(ImportFailureReason.MALFORMED, "language must be a string")
    try:
        language = Language(language_value)
    except ValueError:
        raise ImportFailure(
            ImportFailureReason.INVARIANT_VIOLATION, f"language {language_value!r} is not supported"
        ) from None

    temperature_value = parsed["temperature"]
    if not isinstance(temperature_value, str):
        raise ImportFailure(ImportFailureReason.MALFORMED, "temperature must be a string")
    if not _TEMPERATURE_PATTERN.fullmatch(temperature_value):
        raise ImportFailure(
            ImportFailureReason.INVARIANT_VIOLATION, "temperature must be a two-decimal value in [0,1]"
        )
    temperature = float(temperature_value)
    if not 0.0 <= temperature <= 1.0:
        raise ImportFailure(ImportFailureReason.INVARIANT_VIOLATION, "temperature must be within [0,1]")

    created_at = parsed["created_at"]
    if not isinstance(created_at, str):
        raise ImportFailure(ImportFailureReason.MALFORMED, "created_at must be a string")
    try:
        datetime.strptime(created_at, CREATED_AT_FORMAT)
    except ValueError:
        raise ImportFailure(
            ImportFailureReason.INVARIANT_VIOLATION, "created_at must be an ISO-8601 UTC timestamp"
        ) from None

    raw_messages = parsed["messages"]
    if not isinstance(raw_messages, list):
        raise ImportFailure(ImportFailureReason.MALFORMED, "messages must be a list")
    for index, entry in enumerate(raw_messages):
        if not isinstance(entry, dict) or set(entry) != {"content", "role"}:
            raise ImportFailure(
                ImportFailureReason.MALFORMED, f"messages[{index}] must carry exactly role and content"
            )
        if not isinstance(entry["role"], str) or not isinstance(entry["content"], str):
            raise ImportFailure(ImportFailureReason.MALFORMED, f"messages[{index}] fields must be strings")
        if entry["role"] not in (Role.USER.value, Role.ASSISTANT.value):
            raise ImportFailure(
                ImportFailureReason.INVARIANT_VIOLATION,
                f"messages[{index}].role must be user or assistant",
            )
    _check_alternation(raw_messages)
    for index, entry in enumerate(raw_messages):
        if entry["role"] == Role.USER.value and len(entry["content"]) > input_char_limit:
            raise ImportFailure(
                ImportFailureReason.INVARIANT_VIOLATION,
                f"messages[{index}] exceeds the {input_char_limit}-character input limit",
            )

    return ConversationState(
        model_id=model_id,
        language=language,
        temperature=temperature,
        created_at=created_at,
        messages=tuple(Message(role=Role(entry["role"]), content=entry["content"]) for entry in raw_messages),
    )
