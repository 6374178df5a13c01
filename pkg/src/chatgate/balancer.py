"""Rate-limit-aware endpoint selection.

Each upstream endpoint has per-minute token and request limits. The balancer
reserves window capacity atomically with selection, reconciles reservations
against actual usage on completion, and cools an endpoint down until the next
window when the upstream reports a rate limit, redirecting traffic to the
remaining endpoints.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional


class EndpointHealth(str, Enum):
    HEALTHY = "healthy"
    COOLING_DOWN = "cooling_down"


class CallOutcome(str, Enum):
    SUCCESS = "success"
    RATE_LIMITED = "rate_limited"
    ERROR = "error"


class UnknownModelError(Exception):
    """No configured endpoint serves the requested model."""


class UnknownEndpointError(Exception):
    """The endpoint id is not in the configured inventory."""


@dataclass
class ModelEndpoint:
    """One upstream completion endpoint with capacity limits and health state."""

    endpoint_id: str
    model_id: str
    region: str = ""
    tpm_limit: int = 10_000
    rpm_limit: int = 60
    base_url: str = ""
    health: EndpointHealth = EndpointHealth.HEALTHY
    cooldown_until: Optional[float] = None

    def __post_init__(self) -> None:
        if self.tpm_limit <= 0 or self.rpm_limit <= 0:
            raise ValueError(f"endpoint {self.endpoint_id}: tpm_limit and rpm_limit must be positive")


@dataclass
class EndpointWindow:
    """Counters for the current tumbling window of one endpoint."""

    endpoint_id: str
    window_start: Optional[float] = None
    tokens_used: int = 0
    requests_used: int = 0
    error_count: int = 0
    # reservations awaiting reconciliation: (window_start, reserved_tokens)
    pending: deque = field(default_factory=deque)


class EndpointBalancer:
    """Shared, internally synchronized selector over the endpoint inventory.

    Selection policy: among healthy endpoints for the model with enough
    remaining window capacity, pick the one with the largest remaining token
    headroom, ties broken by lexicographic endpoint id. Selection and
    reservation happen atomically under one lock.
    """

    def __init__(self, endpoints: Iterable[ModelEndpoint], window_seconds: float = 60.0) -> None:
        self._endpoints: dict[str, ModelEndpoint] = {}
        self._windows: dict[str, EndpointWindow] = {}
        self._by_model: dict[str, list[str]] = {}
        for ep in endpoints:
            if ep.endpoint_id in self._endpoints:
                raise ValueError(f"duplicate endpoint_id {ep.endpoint_id}")
            self._endpoints[ep.endpoint_id] = ep
            self._windows[ep.endpoint_id] = EndpointWindow(endpoint_id=ep.endpoint_id)
            self._by_model.setdefault(ep.model_id, []).append(ep.endpoint_id)
        self.window_seconds = float(window_seconds)
        self._lock = threading.Lock()

    # -- window bookkeeping --

    def _roll_due(self, now: float) -> None:
        for ep in self._endpoints.values():
            window = self._windows[ep.endpoint_id]
            if window.window_start is None:
                window.window_start = now
            elif now - window.window_start >= self.window_seconds:
                window.window_start = now
                window.tokens_used = 0
                window.requests_used = 0
                window.pending.clear()
            if ep.cooldown_until is not None and ep.cooldown_until <= now:
                ep.cooldown_until = None
                ep.health = EndpointHealth.HEALTHY

    def window_roll(self, now: float) -> None:
        """Reset counters for every endpoint whose window is a full period old."""
        with self._lock:
            self._roll_due(now)

    # -- selection --

    def endpoints_for_model(self, model_id: str) -> list[ModelEndpoint]:
        ids = self._by_model.get(model_id)
        if not ids:
            raise UnknownModelError(f"no endpoint serves model {model_id!r}")
        return [self._endpoints[i] for i in ids]

    def select_endpoint(self, model_id: str, estimated_tokens: int, now: float) -> Optional[str]:
        """Pick and reserve an endpoint, or return None when no capacity remains."""
        if estimated_tokens <= 0:
            raise ValueError("estimated_tokens must be positive")
        with self._lock:
            candidates = self.endpoints_for_model(model_id)
            self._roll_due(now)
            best: Optional[str] = None
            best_headroom = -1
            for ep in sorted(candidates, key=lambda e: e.endpoint_id):
                if ep.health is EndpointHealth.COOLING_DOWN:
                    continue
                window = self._windows[ep.endpoint_id]
                headroom = ep.tpm_limit - window.tokens_used
                if headroom < estimated_tokens:
                    continue
                if ep.rpm_limit - window.requests_used < 1:
                    continue
                if headroom > best_headroom:
                    best = ep.endpoint_id
                    best_headroom = headroom
            if best is None:
                return None
            window = self._windows[best]
            window.tokens_used += estimated_tokens
            window.requests_used += 1
            window.pending.append((window.window_start, estimated_tokens))
            return best

    # -- outcome reporting --

    def report_outcome(self, endpoint_id: str, outcome: CallOutcome, actual_tokens: int, now: float) -> None:
        """Reconcile a reservation (success), cool down (rate limited), or count an error."""
        with self._lock:
            ep = self._endpoints.get(endpoint_id)
            if ep is None:
                raise UnknownEndpointError(f"unknown endpoint {endpoint_id!r}")
            self._roll_due(now)
            window = self._windows[endpoint_id]
            if outcome is CallOutcome.SUCCESS:
                if window.pending:
                    reserved_window, reserved = window.pending.popleft()
                    # a reservation from a rolled window has nothing left to adjust
                    if reserved_window == window.window_start:
                        window.tokens_used = max(0, window.tokens_used + actual_tokens - reserved)
            elif outcome is CallOutcome.RATE_LIMITED:
                window_start = window.window_start if window.window_start is not None else now
                if ep.health is not EndpointHealth.COOLING_DOWN:
                    ep.health = EndpointHealth.COOLING_DOWN
                    ep.cooldown_until = window_start + self.window_seconds
            else:
                window.error_count += 1

    # -- observability --

    def utilization(self, now: Optional[float] = None) -> dict[str, dict]:
        """Consistent per-endpoint view of window usage and health."""
        with self._lock:
            if now is not None:
                self._roll_due(now)
            snapshot = {}
            for ep in self._endpoints.values():
                window = self._windows[ep.endpoint_id]
                snapshot[ep.endpoint_id] = {
                    "model_id": ep.model_id,
                    "region": ep.region,
                    "tokens_used": window.tokens_used,
                    "tpm_limit": ep.tpm_limit,
                    "requests_used": window.requests_used,
                    "rpm_limit": ep.rpm_limit,
                    "error_count": window.error_count,
                    "health": ep.health.value,
                }
            return snapshot

    @property
    def endpoint_ids(self) -> list[str]:
        return sorted(self._endpoints)
