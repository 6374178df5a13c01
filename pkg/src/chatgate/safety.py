"""Content safety pipeline.

Deterministic rule screening of prompts and completions, an encrypted
append-only abuse log for refused interactions, and an output sanitizer that
neutralizes executable markup in completions without altering code semantics.
The abuse log is fail-closed: if it cannot be written, the request must not
proceed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from cryptography.fernet import Fernet, InvalidToken

from .domain import Completion
from .persistence import StorageUnavailable

logger = logging.getLogger("chatgate.safety")


class RuleKind(str, Enum):
    DENYLIST_TERM = "denylist_term"
    PATTERN = "pattern"
    SCRIPT_INJECTION = "script_injection"


class RuleSeverity(str, Enum):
    BLOCK = "block"
    FLAG = "flag"


class Direction(str, Enum):
    PROMPT = "prompt"
    COMPLETION = "completion"


class AppliesTo(str, Enum):
    PROMPT = "prompt"
    COMPLETION = "completion"
    BOTH = "both"


class Verdict(str, Enum):
    PASS = "pass"
    BLOCKED = "blocked"
    FLAGGED = "flagged"


class InvalidPattern(ValueError):
    """A rule's pattern failed to compile; raised at load time only."""


# markup that a careless client could execute when rendering a completion
SCRIPT_MARKUP = re.compile(
    r"(?i)("
    r"<\s*/?\s*(?:script|iframe|object|embed)\b"
    r"|javascript\s*:"
    r"|\bon(?:click|load|error|mouseover|focus|submit)\s*="
    r")"
)


@dataclass(frozen=True)
class FilterRule:
    """One screening rule; matching is deterministic and case-insensitive."""

    rule_id: str
    kind: RuleKind
    payload: str
    applies_to: AppliesTo = AppliesTo.BOTH
    severity: RuleSeverity = RuleSeverity.BLOCK

    def __post_init__(self) -> None:
        if not self.payload:
            raise ValueError(f"rule {self.rule_id}: payload must be non-empty")

    def compile(self) -> "CompiledRule":
        if self.kind is RuleKind.DENYLIST_TERM:
            matcher = re.compile(re.escape(self.payload), re.IGNORECASE)
        elif self.kind is RuleKind.PATTERN:
            try:
                matcher = re.compile(self.payload, re.IGNORECASE)
            except re.error as exc:
                raise InvalidPattern(f"rule {self.rule_id}: {exc}") from exc
        else:
            # payload is a human-readable label; detection is the shared
            # markup pattern so screening and sanitizing agree
            matcher = SCRIPT_MARKUP
        return CompiledRule(rule=self, matcher=matcher)


@dataclass(frozen=True)
class CompiledRule:
    rule: FilterRule
    matcher: re.Pattern

    def matches(self, text: str) -> bool:
        if self.rule.kind is RuleKind.SCRIPT_INJECTION:
            # fenced code is inert display data; only unfenced markup is a risk
            text = strip_fenced(text)
        return self.matcher.search(text) is not None


@dataclass(frozen=True)
class ScreenResult:
    verdict: Verdict
    rule_ids: tuple[str, ...] = ()

    @property
    def blocked(self) -> bool:
        return self.verdict is Verdict.BLOCKED


class RuleSet:
    """Compiled, validated rule collection; evaluation order is rule_id order."""

    def __init__(self, rules: Iterable[FilterRule]) -> None:
        seen: set[str] = set()
        compiled: list[CompiledRule] = []
        for rule in rules:
            if rule.rule_id in seen:
                raise ValueError(f"duplicate rule_id {rule.rule_id}")
            seen.add(rule.rule_id)
            compiled.append(rule.compile())
        self._compiled = sorted(compiled, key=lambda c: c.rule.rule_id)

    def applicable(self, direction: Direction) -> list[CompiledRule]:
        wanted = AppliesTo(direction.value)
        return [c for c in self._compiled if c.rule.applies_to in (wanted, AppliesTo.BOTH)]

    def __len__(self) -> int:
        return len(self._compiled)


def screen(text: str, direction: Direction, rules: RuleSet) -> ScreenResult:
    """Evaluate rules in rule_id order: first block match wins, flags collect."""
    flagged: list[str] = []
    for compiled in rules.applicable(direction):
        if not compiled.matches(text):
            continue
        if compiled.rule.severity is RuleSeverity.BLOCK:
            return ScreenResult(verdict=Verdict.BLOCKED, rule_ids=(compiled.rule.rule_id,))
        flagged.append(compiled.rule.rule_id)
    if flagged:
        return ScreenResult(verdict=Verdict.FLAGGED, rule_ids=tuple(flagged))
    return ScreenResult(verdict=Verdict.PASS)


@dataclass(frozen=True)
class AbuseLogEntry:
    """One refused interaction; the only place offending content is kept."""

    entry_id: str
    timestamp: float
    principal_id: str
    rule_id: str
    direction: Direction
    content: str

    @property
    def content_digest(self) -> str:
        return hashlib.sha256(self.content.encode("utf-8")).hexdigest()

    def to_payload(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "timestamp": self.timestamp,
            "principal_id": self.principal_id,
            "rule_id": self.rule_id,
            "direction": self.direction.value,
            "content_digest": self.content_digest,
            "content": self.content,
        }


class AbuseLog:
    """Append-only store of refused interactions, encrypted at rest.

    Each line of the file is one Fernet token over the JSON record. A write
    failure raises StorageUnavailable, which the gateway treats as a reason
    to refuse the request rather than let it through unlogged.
    """

    def __init__(self, path: Path, key: bytes) -> None:
        self.path = Path(path)
        self._fernet = Fernet(key)
        self._lock = threading.Lock()
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
        except OSError:
            pass  # surfaces as StorageUnavailable on the first write
        self._seen_ids: set[str] = set()
        for payload in self._read_payloads():
            self._seen_ids.add(payload["entry_id"])

    @staticmethod
    def generate_key() -> bytes:
        return Fernet.generate_key()

    def _read_payloads(self) -> list[dict]:
        try:
            lines = self.path.read_text(encoding="utf-8").splitlines()
        except FileNotFoundError:
            return []
        payloads = []
        unreadable = 0
        for line in lines:
            if not line.strip():
                continue
            try:
                raw = self._fernet.decrypt(line.encode("ascii"))
            except InvalidToken:
                # entries written under a rotated or ephemeral key stay in
                # the file but cannot block startup or new writes
                unreadable += 1
                continue
            payloads.append(json.loads(raw.decode("utf-8")))
        if unreadable:
            logger.warning(
                "abuse log at %s: skipped %d entries that do not decrypt with the configured key",
                self.path,
                unreadable,
            )
        return payloads

    def record_abuse(self, entry: AbuseLogEntry) -> None:
        """Persist one entry; duplicate entry_ids are dropped idempotently."""
        with self._lock:
            if entry.entry_id in self._seen_ids:
                return
            token = self._fernet.encrypt(
                json.dumps(entry.to_payload(), sort_keys=True, ensure_ascii=False).encode("utf-8")
            )
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(token.decode("ascii") + "\n")
                    fh.flush()
            except OSError as exc:
                raise StorageUnavailable(f"cannot append to abuse log at {self.path}") from exc
            self._seen_ids.add(entry.entry_id)

    def entries(self) -> list[dict]:
        """Decrypted entries, oldest first (test and admin use)."""
        with self._lock:
            return self._read_payloads()

    def __len__(self) -> int:
        with self._lock:
            return len(self._seen_ids)


_FENCE_LINE = re.compile(r"^\s*(`{3,})")


def strip_fenced(text: str) -> str:
    """Drop fenced code blocks (and their fence lines), keeping the rest."""
    kept: list[str] = []
    in_fence = False
    fence_marker = ""
    for line in text.split("\n"):
        fence_match = _FENCE_LINE.match(line)
        if in_fence:
            if fence_match and fence_match.group(1)[: len(fence_marker)] == fence_marker:
                in_fence = False
            continue
        if fence_match:
            in_fence = True
            fence_marker = fence_match.group(1)
            continue
        kept.append(line)
    return "\n".join(kept)


def _fence_for(lines: list[str]) -> str:
    longest = 0
    for line in lines:
        for run in re.findall(r"`+", line):
            longest = max(longest, len(run))
    return "`" * max(3, longest + 1)


def sanitize_text(text: str) -> str:
    """Wrap executable markup in code fences so clients render it as text.

    Content already inside a fence is left alone, which also makes the
    transform idempotent.
    """
    lines = text.split("\n")
    out: list[str] = []
    pending: list[str] = []
    in_fence = False
    fence_marker = ""

    def flush() -> None:
        if pending:
            fence = _fence_for(pending)
            out.append(fence + "text")
            out.extend(pending)
            out.append(fence)
            pending.clear()

    for line in lines:
        fence_match = _FENCE_LINE.match(line)
        if in_fence:
            out.append(line)
            if fence_match and fence_match.group(1)[: len(fence_marker)] == fence_marker:
                in_fence = False
            continue
        if fence_match:
            flush()
            in_fence = True
            fence_marker = fence_match.group(1)
            out.append(line)
            continue
        if SCRIPT_MARKUP.search(line):
            pending.append(line)
        else:
            flush()
            out.append(line)
    flush()
    return "\n".join(out)


def sanitize_output(completion: Completion) -> Completion:
    """Neutralize executable markup in a completion; idempotent."""
    cleaned = sanitize_text(completion.content)
    if cleaned == completion.content:
        return completion
    return replace(completion, content=cleaned)


def default_rules() -> list[FilterRule]:
    """Conservative stand-in rule set; real deployments configure their own."""
    return [
        FilterRule(
            rule_id="block-explosives-instructions",
            kind=RuleKind.PATTERN,
            payload=r"(build|make|assemble)\s+(a\s+)?(bomb|explosive)",
            applies_to=AppliesTo.PROMPT,
            severity=RuleSeverity.BLOCK,
        ),
        FilterRule(
            rule_id="block-malware-request",
            kind=RuleKind.DENYLIST_TERM,
            payload="write ransomware",
            applies_to=AppliesTo.PROMPT,
            severity=RuleSeverity.BLOCK,
        ),
        FilterRule(
            rule_id="block-script-injection",
            kind=RuleKind.SCRIPT_INJECTION,
            payload="executable markup",
            applies_to=AppliesTo.COMPLETION,
            severity=RuleSeverity.BLOCK,
        ),
        FilterRule(
            rule_id="flag-person-judgement",
            kind=RuleKind.PATTERN,
            payload=r"(rate|rank|judge|assess)\s+(this|my|the)\s+(person|employee|candidate|applicant)",
            applies_to=AppliesTo.PROMPT,
            severity=RuleSeverity.FLAG,
        ),
    ]
