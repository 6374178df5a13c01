"""The request pipeline composing every component.

Order is fixed: authenticate, validate input, safety-screen the prompt,
check budgets, optionally retrieve context, assemble the prompt, select an
endpoint, call upstream (with failover), sanitize, screen the completion,
meter, respond. A request rejected at any stage causes no side effects from
later stages, and every terminal outcome after authentication and input
validation produces exactly one usage record.
"""

from __future__ import annotations

import json
import logging
import uuid
from dataclasses import dataclass
from decimal import Decimal
from typing import Callable, Optional, Protocol

import httpx

from .auth import AuthFailure, ClaimsAuthenticator, Principal, TokenStore
from .balancer import CallOutcome, EndpointBalancer, ModelEndpoint
from .clock import Clock, SystemClock
from .config import GatewayConfig
from .domain import (
    DEFAULT_ESTIMATOR,
    ChatRequest,
    Completion,
    FinishReason,
    InvalidRequest,
    Language,
    Message,
    REFUSAL_TEXT,
    Role,
)
from .metering import (
    BudgetExceeded,
    MeteringStore,
    Outcome,
    UsageRecord,
    compute_cost,
)
from .persistence import StorageUnavailable
from .prompting import (
    ContextOverflow,
    EmptyPrompt,
    InputTooLong,
    assemble,
    validate_input,
)
from .rag import EmptyIndex, RagIndex, build_context
from .safety import AbuseLog, AbuseLogEntry, Direction, RuleSet, sanitize_text, screen
from .simulator import UpstreamSimulator

log = logging.getLogger(__name__)
request_log = logging.getLogger("chatgate.request")

DEFAULT_TEMPERATURE = 0.2


class GatewayError(Exception):
    """Terminal pipeline failure with its HTTP mapping."""

    def __init__(
        self,
        status: int,
        reason: str,
        detail: str = "",
        extra: Optional[dict] = None,
    ) -> None:
        super().__init__(f"{status} {reason}: {detail}")
        self.status = status
        self.reason = reason
        self.detail = detail
        self.extra = extra or {}

    def body(self) -> dict:
        error = {"reason": self.reason}
        if self.detail:
            error["detail"] = self.detail
        error.update(self.extra)
        return {"error": error}


@dataclass(frozen=True)
class ChatResult:
    content: str
    model_id: str
    finish_reason: str
    prompt_tokens: int
    completion_tokens: int
    cost: Decimal
    dropped_messages: int
    flagged: bool

    def to_body(self) -> dict:
        return {
            "content": self.content,
            "model_id": self.model_id,
            "finish_reason": self.finish_reason,
            "usage": {
                "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens,
                "cost": str(self.cost),
            },
            "dropped_messages": self.dropped_messages,
            "flagged": self.flagged,
        }


class UpstreamAdapter(Protocol):
    """How the gateway talks to a completion endpoint."""

    def complete(self, endpoint: ModelEndpoint, payload: dict) -> tuple[int, dict]: ...


class InProcessAdapter:
    """Calls a simulator object directly; the test and dev default."""

    def __init__(self, simulator: UpstreamSimulator) -> None:
        self.simulator = simulator

    def complete(self, endpoint: ModelEndpoint, payload: dict) -> tuple[int, dict]:
        return self.simulator.handle(endpoint.endpoint_id, payload)


class HttpUpstreamAdapter:
    """POSTs to each endpoint's configured base_url."""

    def __init__(self, timeout: float = 30.0) -> None:
        self._client = httpx.Client(timeout=timeout)

    def complete(self, endpoint: ModelEndpoint, payload: dict) -> tuple[int, dict]:
        if not endpoint.base_url:
            raise ValueError(f"endpoint {endpoint.endpoint_id} has no base_url configured")
        try:
            response = self._client.post(f"{endpoint.base_url.rstrip('/')}/completions", json=payload)
        except httpx.HTTPError as exc:
            log.warning("upstream %s unreachable: %s", endpoint.endpoint_id, exc)
            return 502, {"error": "upstream_error"}
        try:
            body = response.json()
        except ValueError:
            body = {"error": "upstream_error"}
        return response.status_code, body

    def close(self) -> None:
        self._client.close()


class Gateway:
    """All shared state and the chat pipeline over it."""

    def __init__(
        self,
        config: GatewayConfig,
        adapter: UpstreamAdapter,
        clock: Optional[Clock] = None,
        rag_index: Optional[RagIndex] = None,
    ) -> None:
        self.config = config
        self.adapter = adapter
        self.clock = clock if clock is not None else SystemClock()
        self.estimator = DEFAULT_ESTIMATOR
        self.balancer = EndpointBalancer(config.endpoints)
        self._endpoints = {ep.endpoint_id: ep for ep in config.endpoints}
        self.metering = MeteringStore(
            config.usage_log_path,
            budgets=config.budgets,
            utilization_source=lambda: self.balancer.utilization(self.clock.now()),
        )
        self.abuse_log = AbuseLog(config.abuse_log_path, config.abuse_log_key)
        self.rules = RuleSet(config.filter_rules)
        self.authenticator = ClaimsAuthenticator(config.identity_key, config.authorized_groups)
        self.token_store = TokenStore(config.token_store_path, config.projects)
        self.rag_index = rag_index

    # -- authentication --

    def authenticate_session(self, assertion: Optional[str]) -> Principal:
        if not assertion:
            raise GatewayError(401, "unauthenticated", "identity assertion required")
        try:
            principal = self.authenticator.authenticate_user(assertion, now=self.clock.now())
        except AuthFailure as failure:
            raise GatewayError(401, "unauthenticated", failure.reason.value) from None
        if not principal.authorized:
            raise GatewayError(403, "unauthorized", "no authorized group membership")
        return principal

    def authenticate_api(self, bearer_secret: Optional[str]) -> Principal:
        if not bearer_secret:
            raise GatewayError(401, "unauthenticated", "bearer token required")
        try:
            return self.token_store.verify_token(bearer_secret, now=self.clock.now())
        except AuthFailure as failure:
            raise GatewayError(401, "unauthenticated", failure.reason.value) from None

    # -- request parsing --

    def parse_chat_body(self, principal: Principal, body: dict) -> ChatRequest:
        if not isinstance(body, dict):
            raise GatewayError(400, "malformed_request", "body must be a JSON object")
        model_id = body.get("model_id")
        if not isinstance(model_id, str) or model_id not in self.config.models:
            raise GatewayError(400, "malformed_request", "unknown or missing model_id")
        raw_messages = body.get("messages")
        if not isinstance(raw_messages, list) or not raw_messages:
            raise GatewayError(400, "malformed_request", "messages must be a non-empty list")
        messages = []
        for index, entry in enumerate(raw_messages):
            if not isinstance(entry, dict):
                raise GatewayError(400, "malformed_request", f"messages[{index}] must be an object")
            role = entry.get("role")
            content = entry.get("content")
            if role not in (Role.USER.value, Role.ASSISTANT.value) or not isinstance(content, str):
                raise GatewayError(
                    400, "malformed_request", f"messages[{index}] needs role user|assistant and string content"
                )
            messages.append(Message(role=Role(role), content=content))
        temperature = body.get("temperature", DEFAULT_TEMPERATURE)
        if isinstance(temperature, bool) or not isinstance(temperature, (int, float)):
            raise GatewayError(400, "malformed_request", "temperature must be a number")
        language_value = body.get("language", Language.EN.value)
        try:
            language = Language(language_value)
        except ValueError:
            raise GatewayError(400, "malformed_request", f"language {language_value!r} is not supported") from None
        try:
            return ChatRequest(
                principal_id=principal.principal_id,
                model_id=model_id,
                messages=tuple(messages),
                temperature=float(temperature),
                language=language,
                stream=bool(body.get("stream", False)),
            )
        except InvalidRequest as invalid:
            raise GatewayError(400, "malformed_request", invalid.reason) from None

    # -- metering helper --

    def _meter(
        self,
        outcome: Outcome,
        principal_id: str,
        model_id: str,
        endpoint_id: Optional[str] = None,
        prompt_tokens: int = 0,
        completion_tokens: int = 0,
        cost: Decimal = Decimal(0),
    ) -> None:
        record = UsageRecord(
            record_id=uuid.uuid4().hex,
            timestamp=self.clock.now(),
            principal_id=principal_id,
            model_id=model_id,
            endpoint_id=endpoint_id,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            cost=cost,
            outcome=outcome,
        )
        try:
            self.metering.record(record)
        except StorageUnavailable as exc:
            # metering is best-effort: the response already holds its outcome
            log.warning("usage record dropped: %s", exc)

    def _record_abuse(self, principal: Principal, rule_id: str, direction: Direction, content: str) -> bool:
        entry = AbuseLogEntry(
            entry_id=uuid.uuid4().hex,
            timestamp=self.clock.now(),
            principal_id=principal.principal_id,
            rule_id=rule_id,
            direction=direction,
            content=content,
        )
        try:
            self.abuse_log.record_abuse(entry)
            return True
        except StorageUnavailable as exc:
            log.error("abuse log unavailable, refusing request: %s", exc)
            return False

    # -- the pipeline --

    def chat(
        self,
        principal: Principal,
        body: dict,
        allow_rag: bool = True,
    ) -> tuple[ChatResult, Callable[[bool], None]]:
        """Run the pipeline; returns the result and a finalizer.

        The finalizer writes the request's single success usage record (or an
        upstream_error record when a stream aborted before completion); the
        HTTP layer calls it exactly once per request. Rejections meter
        themselves before raising.
        """
        try:
            request = self.parse_chat_body(principal, body)
        except GatewayError:
            # malformed requests are metered when they can be attributed to
            # a declared model; otherwise there is nothing to account against
            model_id = body.get("model_id") if isinstance(body, dict) else None
            if isinstance(model_id, str) and model_id in self.config.models:
                self._meter(Outcome.REJECTED_INPUT, principal.principal_id, model_id)
            raise
        model = self.config.models[request.model_id]
        user_message = request.messages[-1]

        try:
            validate_input(user_message.content, self.config.input_char_limit)
        except InputTooLong as too_long:
            # rejected before any balancer or network activity, and without
            # a usage record: the cheap guard happens ahead of accounting
            raise GatewayError(
                400,
                "input_too_long",
                "input exceeds the character limit",
                extra={"limit": too_long.limit, "char_count": too_long.char_count},
            ) from None

        prompt_text = "\n".join(m.content for m in request.messages if m.role is Role.USER)
        prompt_screen = screen(prompt_text, Direction.PROMPT, self.rules)
        if prompt_screen.blocked:
            # fail-closed: even when the abuse log cannot be written, the
            # request is refused; _record_abuse only reports the failure
            self._record_abuse(principal, prompt_screen.rule_ids[0], Direction.PROMPT, prompt_text)
            self._meter(Outcome.BLOCKED, principal.principal_id, request.model_id)
            raise GatewayError(422, "blocked", REFUSAL_TEXT)
        flagged = prompt_screen.rule_ids != ()

        projection = compute_cost(
            sum(self.estimator.estimate(m.content) for m in request.messages), 0, model
        )
        try:
            self.metering.check_budget(request.model_id, projection, self.clock.now())
        except BudgetExceeded as exceeded:
            self._meter(Outcome.NO_CAPACITY, principal.principal_id, request.model_id)
            raise GatewayError(429, "budget_exceeded", str(exceeded)) from None

        context = None
        if allow_rag and body.get("use_rag") and self.rag_index is not None and self.config.rag.enabled:
            try:
                results = self.rag_index.retrieve(user_message.content, self.config.rag.top_k)
                context = build_context(results, self.config.rag.context_token_budget, self.estimator) or None
            except EmptyIndex:
                context = None

        try:
            bundle = assemble(
                request,
                self.config.templates[request.language],
                context,
                model,
                completion_allowance=self.config.completion_token_allowance,
                estimator=self.estimator,
            )
        except EmptyPrompt:
            self._meter(Outcome.REJECTED_INPUT, principal.principal_id, request.model_id)
            raise GatewayError(400, "empty_prompt", "user message is blank") from None
        except ContextOverflow as overflow:
            self._meter(Outcome.REJECTED_INPUT, principal.principal_id, request.model_id)
            raise GatewayError(
                400,
                "context_overflow",
                "prompt cannot fit the model context window",
                extra={"needed_tokens": overflow.needed_tokens, "budget_tokens": overflow.budget_tokens},
            ) from None

        payload = {
            "model": request.model_id,
            "messages": [{"role": m.role.value, "content": m.content} for m in bundle.as_messages()],
            "temperature": request.temperature,
            "max_tokens": self.config.completion_token_allowance,
        }
        reservation = bundle.total_estimated_tokens + self.config.completion_token_allowance

        attempts = 0
        max_attempts = len(self.balancer.endpoints_for_model(request.model_id))
        upstream_body: Optional[dict] = None
        endpoint_id: Optional[str] = None
        last_status: Optional[int] = None
        while attempts < max_attempts:
            endpoint_id = self.balancer.select_endpoint(request.model_id, reservation, self.clock.now())
            if endpoint_id is None:
                break
            status, response_body = self.adapter.complete(self._endpoints[endpoint_id], payload)
            last_status = status
            if status == 200:
                actual = int(response_body.get("prompt_tokens", 0)) + int(response_body.get("completion_tokens", 0))
                self.balancer.report_outcome(endpoint_id, CallOutcome.SUCCESS, actual, self.clock.now())
                upstream_body = response_body
                break
            if status == 429:
                self.balancer.report_outcome(endpoint_id, CallOutcome.RATE_LIMITED, 0, self.clock.now())
            else:
                self.balancer.report_outcome(endpoint_id, CallOutcome.ERROR, 0, self.clock.now())
            attempts += 1

        if upstream_body is None:
            if last_status is not None and last_status != 429 and attempts >= max_attempts:
                self._meter(Outcome.UPSTREAM_ERROR, principal.principal_id, request.model_id, endpoint_id)
                raise GatewayError(502, "upstream_error", "all endpoints failed")
            self._meter(Outcome.NO_CAPACITY, principal.principal_id, request.model_id)
            raise GatewayError(429, "no_capacity", "no endpoint has capacity for this request")

        content = sanitize_text(upstream_body.get("content", ""))
        prompt_tokens = int(upstream_body.get("prompt_tokens", 0))
        completion_tokens = int(upstream_body.get("completion_tokens", 0))

        completion_screen = screen(content, Direction.COMPLETION, self.rules)
        if completion_screen.blocked:
            self._record_abuse(
                principal, completion_screen.rule_ids[0], Direction.COMPLETION, upstream_body.get("content", "")
            )
            self._meter(
                Outcome.BLOCKED,
                principal.principal_id,
                request.model_id,
                endpoint_id,
                prompt_tokens,
                completion_tokens,
            )
            raise GatewayError(422, "blocked", REFUSAL_TEXT)
        flagged = flagged or completion_screen.rule_ids != ()

        cost = compute_cost(prompt_tokens, completion_tokens, model)
        completion = Completion(
            content=content,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            endpoint_id=endpoint_id or "",
            finish_reason=FinishReason(upstream_body.get("finish_reason", "stop")),
        )
        result = ChatResult(
            content=completion.content,
            model_id=request.model_id,
            finish_reason=completion.finish_reason.value,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            cost=cost,
            dropped_messages=bundle.dropped_messages,
            flagged=flagged,
        )

        finalized = {"done": False}

        def finalize(completed: bool) -> None:
            if finalized["done"]:
                return
            finalized["done"] = True
            if completed:
                self._meter(
                    Outcome.SUCCESS,
                    principal.principal_id,
                    request.model_id,
                    endpoint_id,
                    prompt_tokens,
                    completion_tokens,
                    cost,
                )
            else:
                self._meter(
                    Outcome.UPSTREAM_ERROR,
                    principal.principal_id,
                    request.model_id,
                    endpoint_id,
                    prompt_tokens,
                    completion_tokens,
                )
        return result, finalize

    # -- ancillary endpoints --

    def model_summaries(self) -> list[dict]:
        return [
            {
                "model_id": m.model_id,
                "display_name": m.display_name,
                "context_window_tokens": m.context_window_tokens,
            }
            for m in sorted(self.config.models.values(), key=lambda m: m.model_id)
        ]

    def metrics_snapshot(self) -> dict:
        return self.metering.metrics_snapshot(self.clock.now())

    def log_request(self, path: str, status: int, reason: str, model_id: str, duration_ms: float) -> None:
        """Structured request log line; never carries content or identity."""
        request_log.info(
            json.dumps(
                {
                    "event": "request",
                    "path": path,
                    "status": status,
                    "reason": reason,
                    "model_id": model_id,
                    "duration_ms": round(duration_ms, 3),
                },
                sort_keys=True,
            )
        )
