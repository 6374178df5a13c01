"""Deterministic stand-in for upstream completion endpoints.

Emulates a fleet of model endpoints with per-minute token and request
limits, configurable latency, seeded failure injection, and an optional
forced rate-limit switch for failover drills. Completions are an echo of
the prompt (prefixed with a seed-dependent digest), so responses are a pure
function of (seed, config, request sequence, clock schedule). The call log
is the ground truth that balancer behavior is verified against.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import yaml

from .clock import Clock, SystemClock
from .domain import DEFAULT_ESTIMATOR, TokenEstimator

WINDOW_SECONDS = 60.0
DEFAULT_COMPLETION_CHARS = 120


@dataclass(frozen=True)
class SimEndpointConfig:
    endpoint_id: str
    tpm_limit: int = 10_000
    rpm_limit: int = 60
    base_latency_ms: int = 0
    latency_jitter_ms: int = 0
    failure_rate: float = 0.0
    seed: int = 0
    # from this many seconds after startup, every call is answered 429
    # (failover drills)
    force_rate_limit_after_s: Optional[float] = None

    def __post_init__(self) -> None:
        if self.tpm_limit <= 0 or self.rpm_limit <= 0:
            raise ValueError(f"endpoint {self.endpoint_id}: limits must be positive")
        if not 0.0 <= self.failure_rate <= 1.0:
            raise ValueError(f"endpoint {self.endpoint_id}: failure_rate must be in [0,1]")
        if self.base_latency_ms < 0 or self.latency_jitter_ms < 0:
            raise ValueError(f"endpoint {self.endpoint_id}: latencies must be non-negative")


@dataclass(frozen=True)
class CallLogEntry:
    timestamp: float
    endpoint_id: str
    tokens: int
    outcome: str  # success | rate_limited | error


@dataclass
class _EndpointState:
    config: SimEndpointConfig
    rng: random.Random
    window_start: Optional[float] = None
    tokens_used: int = 0
    requests_used: int = 0
    calls: int = 0
    extra: dict = field(default_factory=dict)


class UpstreamSimulator:
    """In-process endpoint fleet; also servable over HTTP (see http_api)."""

    def __init__(
        self,
        configs: list[SimEndpointConfig],
        clock: Optional[Clock] = None,
        estimator: TokenEstimator = DEFAULT_ESTIMATOR,
    ) -> None:
        if not configs:
            raise ValueError("simulator needs at least one endpoint")
        self.clock = clock if clock is not None else SystemClock()
        self.estimator = estimator
        self._states: dict[str, _EndpointState] = {}
        for cfg in configs:
            if cfg.endpoint_id in self._states:
                raise ValueError(f"duplicate endpoint_id {cfg.endpoint_id}")
            self._states[cfg.endpoint_id] = _EndpointState(config=cfg, rng=random.Random(cfg.seed))
        self._log: list[CallLogEntry] = []
        self._lock = threading.Lock()
        self.started_at = self.clock.now()

    # -- window bookkeeping (tumbling, boundary-aligned) --

    def _roll(self, state: _EndpointState, now: float) -> None:
        if state.window_start is None:
            state.window_start = self.started_at
        elapsed = now - state.window_start
        if elapsed >= WINDOW_SECONDS:
            periods = int(elapsed // WINDOW_SECONDS)
            state.window_start += periods * WINDOW_SECONDS
            state.tokens_used = 0
            state.requests_used = 0

    def _window_remaining(self, state: _EndpointState, now: float) -> float:
        assert state.window_start is not None
        return max(0.0, state.window_start + WINDOW_SECONDS - now)

    # -- completion generation --

    def _echo_completion(self, seed: int, payload: dict, completion_chars: int) -> str:
        if completion_chars <= 0:
            return ""
        canonical = json.dumps(payload.get("messages", []), sort_keys=True, ensure_ascii=False)
        digest = hashlib.sha256(f"{seed}:{canonical}".encode("utf-8")).hexdigest()
        last_user = ""
        for message in reversed(payload.get("messages", [])):
            if message.get("role") == "user":
                last_user = message.get("content", "")
                break
        unit = f"echo:{digest} {last_user} "
        repeated = unit * (completion_chars // len(unit) + 1)
        return repeated[:completion_chars]

    # -- the endpoint behavior --

    def handle(self, endpoint_id: str, payload: dict) -> tuple[int, dict]:
        """One completion call; returns (status, body) and appends to the log."""
        with self._lock:
            state = self._states.get(endpoint_id)
            if state is None:
                return 404, {"error": "unknown_endpoint"}
            now = self.clock.now()
            self._roll(state, now)
            state.calls += 1
            # one draw per call, regardless of outcome, keeps the failure
            # schedule a function of the request sequence alone
            failure_draw = state.rng.random()

            cfg = state.config
            if cfg.force_rate_limit_after_s is not None and now - self.started_at >= cfg.force_rate_limit_after_s:
                self._log.append(CallLogEntry(now, endpoint_id, 0, "rate_limited"))
                return 429, {"error": "rate_limited", "retry_after_seconds": self._window_remaining(state, now)}

            if failure_draw < cfg.failure_rate:
                state.requests_used += 1
                self._log.append(CallLogEntry(now, endpoint_id, 0, "error"))
                return 500, {"error": "upstream_error"}

            prompt_tokens = sum(
                self.estimator.estimate(m.get("content", "")) for m in payload.get("messages", [])
            )
            max_tokens = payload.get("max_tokens")
            completion_chars = payload.get("completion_chars")
            if completion_chars is None:
                completion_chars = DEFAULT_COMPLETION_CHARS
                if max_tokens is not None:
                    completion_chars = min(completion_chars, max_tokens * 4)
            content = self._echo_completion(cfg.seed, payload, completion_chars)
            completion_tokens = self.estimator.estimate(content)
            total_tokens = prompt_tokens + completion_tokens

            if (
                state.requests_used + 1 > cfg.rpm_limit
                or state.tokens_used + total_tokens > cfg.tpm_limit
            ):
                self._log.append(CallLogEntry(now, endpoint_id, 0, "rate_limited"))
                return 429, {"error": "rate_limited", "retry_after_seconds": self._window_remaining(state, now)}

            state.tokens_used += total_tokens
            state.requests_used += 1
            latency_ms = float(cfg.base_latency_ms)
            if cfg.latency_jitter_ms > 0:
                latency_ms += state.rng.random() * cfg.latency_jitter_ms
            finish_reason = "stop"
            if max_tokens is not None and completion_tokens >= max_tokens:
                finish_reason = "length"
            self._log.append(CallLogEntry(now, endpoint_id, total_tokens, "success"))
            return 200, {
                "id": f"sim-{endpoint_id}-{state.calls}",
                "content": content,
                "prompt_tokens": prompt_tokens,
                "completion_tokens": completion_tokens,
                "finish_reason": finish_reason,
                "latency_ms": latency_ms,
            }

    # -- oracle access --

    def call_log(self) -> list[CallLogEntry]:
        with self._lock:
            return list(self._log)

    def reset_log(self) -> None:
        with self._lock:
            self._log.clear()

    @property
    def endpoint_ids(self) -> list[str]:
        return sorted(self._states)


def load_sim_config(path: Union[str, Path]) -> list[SimEndpointConfig]:
    """Endpoint fleet from a YAML (or JSON) file: top-level `endpoints` list."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict) or not isinstance(raw.get("endpoints"), list):
        raise ValueError(f"{path}: expected a mapping with an `endpoints` list")
    return [SimEndpointConfig(**entry) for entry in raw["endpoints"]]
