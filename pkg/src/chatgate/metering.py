"""Usage metering, cost accounting, and budget enforcement.

Every terminal request outcome produces one UsageRecord, appended to a
line-delimited log and folded into in-memory aggregates under one lock, so a
metrics snapshot is always a consistent cut and replaying the log from empty
reproduces the aggregates exactly. Costs are Decimal; budgets reset at UTC
midnight (day) or the first of the month (month).
"""

from __future__ import annotations

import threading
from collections import Counter, defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from .domain import ModelProfile
from .persistence import AppendOnlyLog

GLOBAL_SCOPE_KEY = "__global__"


class Outcome(str, Enum):
    SUCCESS = "success"
    BLOCKED = "blocked"
    NO_CAPACITY = "no_capacity"
    UPSTREAM_ERROR = "upstream_error"
    REJECTED_INPUT = "rejected_input"


class BudgetScope(str, Enum):
    GLOBAL = "global"
    PER_MODEL = "per_model"


class BudgetPeriod(str, Enum):
    DAY = "day"
    MONTH = "month"


class BudgetExceeded(Exception):
    def __init__(self, scope: BudgetScope, scope_key: Optional[str]) -> None:
        label = scope.value if scope_key is None else f"{scope.value}:{scope_key}"
        super().__init__(f"budget exceeded ({label})")
        self.scope = scope
        self.scope_key = scope_key


def compute_cost(prompt_tokens: int, completion_tokens: int, profile: ModelProfile) -> Decimal:
    return (
        Decimal(prompt_tokens) * profile.price_per_1k_prompt_tokens
        + Decimal(completion_tokens) * profile.price_per_1k_completion_tokens
    ) / Decimal(1000)


@dataclass(frozen=True)
class UsageRecord:
    """One accounting row per terminal request outcome; never any content."""

    record_id: str
    timestamp: float
    principal_id: str
    model_id: str
    endpoint_id: Optional[str]
    prompt_tokens: int
    completion_tokens: int
    cost: Decimal
    outcome: Outcome

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        if self.cost < 0:
            raise ValueError("cost must be non-negative")
        if self.outcome is not Outcome.SUCCESS and self.cost != 0:
            raise ValueError(f"outcome {self.outcome.value} must carry zero cost")

    def to_payload(self) -> dict:
        return {
            "record_id": self.record_id,
            "timestamp": self.timestamp,
            "principal_id": self.principal_id,
            "model_id": self.model_id,
            "endpoint_id": self.endpoint_id,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "cost": str(self.cost),
            "outcome": self.outcome.value,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "UsageRecord":
        return cls(
            record_id=payload["record_id"],
            timestamp=payload["timestamp"],
            principal_id=payload["principal_id"],
            model_id=payload["model_id"],
            endpoint_id=payload["endpoint_id"],
            prompt_tokens=payload["prompt_tokens"],
            completion_tokens=payload["completion_tokens"],
            cost=Decimal(payload["cost"]),
            outcome=Outcome(payload["outcome"]),
        )


@dataclass(frozen=True)
class Budget:
    scope: BudgetScope
    limit_cost: Decimal
    period: BudgetPeriod = BudgetPeriod.MONTH
    scope_key: Optional[str] = None

    def __post_init__(self) -> None:
        if self.limit_cost <= 0:
            raise ValueError("limit_cost must be positive")
        if self.scope is BudgetScope.PER_MODEL and not self.scope_key:
            raise ValueError("per_model budget needs a scope_key")
        if self.scope is BudgetScope.GLOBAL and self.scope_key is not None:
            raise ValueError("global budget must not carry a scope_key")


def _day_key(now: float) -> str:
    return datetime.fromtimestamp(now, tz=timezone.utc).strftime("%Y-%m-%d")


def _month_key(now: float) -> str:
    return datetime.fromtimestamp(now, tz=timezone.utc).strftime("%Y-%m")


class MeteringStore:
    """Append-only usage log plus the aggregates derived from it.

    Construction replays any existing log so the in-memory counters always
    equal what a cold replay would produce.
    """

    def __init__(
        self,
        log_path: Union[str, Path],
        budgets: Iterable[Budget] = (),
        utilization_source: Optional[Callable[[], dict]] = None,
    ) -> None:
        self._log = AppendOnlyLog(Path(log_path))
        self._budgets = list(budgets)
        self._utilization_source = utilization_source
        self._lock = threading.Lock()
        self._requests_by_outcome: Counter = Counter()
        self._prompt_tokens_by_model: Counter = Counter()
        self._completion_tokens_by_model: Counter = Counter()
        self._cost_by_model: defaultdict[str, Decimal] = defaultdict(lambda: Decimal(0))
        # spend[(period, period_key)][scope_key] where scope_key is a model_id
        # or GLOBAL_SCOPE_KEY
        self._spend: defaultdict[tuple, defaultdict[str, Decimal]] = defaultdict(
            lambda: defaultdict(lambda: Decimal(0))
        )
        for payload in self._log.replay():
            self._fold(UsageRecord.from_payload(payload))

    def _fold(self, rec: UsageRecord) -> None:
        self._requests_by_outcome[rec.outcome.value] += 1
        self._prompt_tokens_by_model[rec.model_id] += rec.prompt_tokens
        self._completion_tokens_by_model[rec.model_id] += rec.completion_tokens
        self._cost_by_model[rec.model_id] += rec.cost
        for period, key in ((BudgetPeriod.DAY, _day_key(rec.timestamp)), (BudgetPeriod.MONTH, _month_key(rec.timestamp))):
            bucket = self._spend[(period.value, key)]
            bucket[GLOBAL_SCOPE_KEY] += rec.cost
            bucket[rec.model_id] += rec.cost

    def record(self, rec: UsageRecord) -> None:
        """Append and fold one record; the log write and the counter update
        happen under one lock so replay equality always holds."""
        with self._lock:
            self._log.append(rec.to_payload())
            self._fold(rec)

    def _current_spend(self, budget: Budget, now: float) -> Decimal:
        key = _day_key(now) if budget.period is BudgetPeriod.DAY else _month_key(now)
        bucket = self._spend.get((budget.period.value, key))
        if bucket is None:
            return Decimal(0)
        scope_key = GLOBAL_SCOPE_KEY if budget.scope is BudgetScope.GLOBAL else budget.scope_key
        return bucket.get(scope_key, Decimal(0))

    def check_budget(self, model_id: Optional[str], projected_cost: Decimal, now: float) -> None:
        """Raise BudgetExceeded when any matching budget would go over its
        limit; global budgets are checked before per-model ones."""
        with self._lock:
            ordered = sorted(self._budgets, key=lambda b: b.scope is not BudgetScope.GLOBAL)
            for budget in ordered:
                if budget.scope is BudgetScope.PER_MODEL and budget.scope_key != model_id:
                    continue
                if self._current_spend(budget, now) + projected_cost > budget.limit_cost:
                    raise BudgetExceeded(budget.scope, budget.scope_key)

    def metrics_snapshot(self, now: Optional[float] = None) -> dict:
        """One consistent view of every counter, for /metrics and tests."""
        with self._lock:
            snapshot = {
                "requests_total": sum(self._requests_by_outcome.values()),
                "requests_by_outcome": dict(self._requests_by_outcome),
                "blocked_requests_total": self._requests_by_outcome.get(Outcome.BLOCKED.value, 0),
                "prompt_tokens_by_model": dict(self._prompt_tokens_by_model),
                "completion_tokens_by_model": dict(self._completion_tokens_by_model),
                "cost_by_model": {m: str(c) for m, c in self._cost_by_model.items()},
            }
        if self._utilization_source is not None:
            snapshot["endpoints"] = self._utilization_source()
        else:
            snapshot["endpoints"] = {}
        return snapshot

    @property
    def log_path(self) -> Path:
        return self._log.path


def render_metrics_text(snapshot: dict) -> str:
    """Plain-text key/value exposition of a metrics snapshot."""
    lines = [f"gateway_requests_total {snapshot['requests_total']}"]
    for outcome in sorted(snapshot["requests_by_outcome"]):
        lines.append(f'gateway_requests{{outcome="{outcome}"}} {snapshot["requests_by_outcome"][outcome]}')
    lines.append(f"gateway_blocked_requests_total {snapshot['blocked_requests_total']}")
    for model in sorted(snapshot["prompt_tokens_by_model"]):
        lines.append(f'gateway_prompt_tokens_total{{model="{model}"}} {snapshot["prompt_tokens_by_model"][model]}')
    for model in sorted(snapshot["completion_tokens_by_model"]):
        lines.append(
            f'gateway_completion_tokens_total{{model="{model}"}} {snapshot["completion_tokens_by_model"][model]}'
        )
    for model in sorted(snapshot["cost_by_model"]):
        lines.append(f'gateway_cost_total{{model="{model}"}} {snapshot["cost_by_model"][model]}')
    for endpoint_id in sorted(snapshot.get("endpoints", {})):
        info = snapshot["endpoints"][endpoint_id]
        labels = f'endpoint="{endpoint_id}",model="{info["model_id"]}"'
        lines.append(f'gateway_endpoint_tokens_used{{{labels}}} {info["tokens_used"]}')
        lines.append(f'gateway_endpoint_requests_used{{{labels}}} {info["requests_used"]}')
        health_value = 1 if info["health"] == "healthy" else 0
        lines.append(f'gateway_endpoint_health{{{labels}}} {health_value}')
    return "\n".join(lines) + "\n"
