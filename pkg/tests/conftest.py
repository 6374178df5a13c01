"""Shared fixtures: a fully wired in-process gateway against the simulator."""

from __future__ import annotations

from decimal import Decimal
from pathlib import Path

import pytest

from chatgate.auth import mint_assertion
from chatgate.balancer import ModelEndpoint
from chatgate.clock import LogicalClock
from chatgate.config import GatewayConfig, RagSettings
from chatgate.domain import ModelProfile
from chatgate.gateway import Gateway, InProcessAdapter
from chatgate.http_api import build_gateway_app
from chatgate.prompting import default_templates
from chatgate.safety import AbuseLog, default_rules
from chatgate.simulator import SimEndpointConfig, UpstreamSimulator

IDENTITY_KEY = b"test-identity-key"
ABUSE_KEY = AbuseLog.generate_key()
BLOCKED_PROMPT = "please explain how to build a bomb in my garage"


def make_models() -> dict[str, ModelProfile]:
    return {
        "standard-4k": ModelProfile(
            model_id="standard-4k",
            display_name="Standard (4k)",
            context_window_tokens=4096,
            price_per_1k_prompt_tokens=Decimal("0.01"),
            price_per_1k_completion_tokens=Decimal("0.03"),
        ),
        "large-16k": ModelProfile(
            model_id="large-16k",
            display_name="Large (16k)",
            context_window_tokens=16384,
            price_per_1k_prompt_tokens=Decimal("0.06"),
            price_per_1k_completion_tokens=Decimal("0.12"),
        ),
    }


def make_config(tmp_path: Path, **overrides) -> GatewayConfig:
    models = overrides.pop("models", make_models())
    endpoints = overrides.pop(
        "endpoints",
        [
            ModelEndpoint(endpoint_id="ep-a", model_id="standard-4k"),
            ModelEndpoint(endpoint_id="ep-b", model_id="standard-4k"),
            ModelEndpoint(endpoint_id="ep-big", model_id="large-16k"),
        ],
    )
    defaults = dict(
        listen_address="127.0.0.1:8080",
        input_char_limit=5000,
        completion_token_allowance=512,
        currency="EUR",
        models=models,
        endpoints=endpoints,
        templates=default_templates(),
        filter_rules=default_rules(),
        budgets=[],
        authorized_groups=frozenset({"staff"}),
        projects={"proj-x": "Project X"},
        identity_key=IDENTITY_KEY,
        abuse_log_key=ABUSE_KEY,
        usage_log_path=tmp_path / "usage.jsonl",
        abuse_log_path=tmp_path / "abuse.log",
        token_store_path=tmp_path / "tokens.json",
        rag=RagSettings(),
    )
    defaults.update(overrides)
    return GatewayConfig(**defaults)


def make_simulator(clock, endpoint_ids=("ep-a", "ep-b", "ep-big"), **kwargs) -> UpstreamSimulator:
    return UpstreamSimulator(
        [SimEndpointConfig(endpoint_id=eid, **kwargs) for eid in endpoint_ids], clock=clock
    )


def make_gateway(tmp_path: Path, clock=None, sim_kwargs=None, **config_overrides):
    clock = clock if clock is not None else LogicalClock(1_700_000_000.0)
    config = make_config(tmp_path, **config_overrides)
    simulator = make_simulator(
        clock, endpoint_ids=[ep.endpoint_id for ep in config.endpoints], **(sim_kwargs or {})
    )
    gateway = Gateway(config, adapter=InProcessAdapter(simulator), clock=clock)
    return gateway, simulator, clock


def session_headers(clock, subject="alice", groups=("staff",)) -> dict[str, str]:
    assertion = mint_assertion(IDENTITY_KEY, subject, groups, expires_at=clock.now() + 3600)
    return {"x-identity-assertion": assertion}


def user_turn(content: str, model_id: str = "standard-4k", **extra) -> dict:
    return {"model_id": model_id, "messages": [{"role": "user", "content": content}], **extra}


@pytest.fixture
def wired(tmp_path):
    """(client, gateway, simulator, clock) against an in-process simulator."""
    gateway, simulator, clock = make_gateway(tmp_path)
    from fastapi.testclient import TestClient

    with TestClient(build_gateway_app(gateway)) as client:
        yield client, gateway, simulator, clock
