"""Gateway configuration.

One YAML file declares models, endpoints, prompts, rules, budgets, auth
material, and storage paths. Selected scalars can be overridden through
environment variables; precedence is environment over file over built-in
default. Relative storage paths resolve against the config file's directory.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Mapping, Optional, Union

import yaml

from .balancer import ModelEndpoint
from .domain import Language, ModelProfile
from .metering import Budget, BudgetPeriod, BudgetScope
from .prompting import SystemPromptTemplate, default_templates
from .safety import AbuseLog, AppliesTo, FilterRule, RuleKind, RuleSeverity, default_rules

log = logging.getLogger(__name__)

ENV_PREFIX = "CHATGATE_"
DEFAULT_INPUT_CHAR_LIMIT = 5000
DEFAULT_COMPLETION_ALLOWANCE = 512
DEFAULT_LISTEN_ADDRESS = "127.0.0.1:8080"


@dataclass(frozen=True)
class RagSettings:
    enabled: bool = False
    index_path: Path = Path("var/rag_index.json")
    dimension: int = 256
    chunk_size: int = 1000
    overlap: int = 200
    top_k: int = 4
    context_token_budget: int = 800


@dataclass(frozen=True)
class GatewayConfig:
    listen_address: str
    input_char_limit: int
    completion_token_allowance: int
    currency: str
    models: dict[str, ModelProfile]
    endpoints: list[ModelEndpoint]
    templates: dict[Language, SystemPromptTemplate]
    filter_rules: list[FilterRule]
    budgets: list[Budget]
    authorized_groups: frozenset[str]
    projects: dict[str, str]
    identity_key: bytes
    abuse_log_key: bytes
    usage_log_path: Path
    abuse_log_path: Path
    token_store_path: Path
    rag: RagSettings = field(default_factory=RagSettings)

    def __post_init__(self) -> None:
        if self.input_char_limit <= 0:
            raise ValueError("input_char_limit must be positive")
        if self.completion_token_allowance <= 0:
            raise ValueError("completion_token_allowance must be positive")
        for endpoint in self.endpoints:
            if endpoint.model_id not in self.models:
                raise ValueError(
                    f"endpoint {endpoint.endpoint_id} references undeclared model {endpoint.model_id}"
                )


def _parse_models(raw: list) -> dict[str, ModelProfile]:
    models: dict[str, ModelProfile] = {}
    for entry in raw:
        profile = ModelProfile(
            model_id=entry["model_id"],
            display_name=entry.get("display_name", entry["model_id"]),
            context_window_tokens=int(entry["context_window_tokens"]),
            price_per_1k_prompt_tokens=Decimal(str(entry.get("price_per_1k_prompt_tokens", "0"))),
            price_per_1k_completion_tokens=Decimal(str(entry.get("price_per_1k_completion_tokens", "0"))),
        )
        if profile.model_id in models:
            raise ValueError(f"duplicate model_id {profile.model_id}")
        models[profile.model_id] = profile
    return models


def _parse_endpoints(raw: list) -> list[ModelEndpoint]:
    return [
        ModelEndpoint(
            endpoint_id=entry["endpoint_id"],
            model_id=entry["model_id"],
            region=entry.get("region", ""),
            tpm_limit=int(entry.get("tpm_limit", 10_000)),
            rpm_limit=int(entry.get("rpm_limit", 60)),
            base_url=entry.get("base_url", ""),
        )
        for entry in raw
    ]


def _parse_templates(raw: Mapping) -> dict[Language, SystemPromptTemplate]:
    templates = default_templates()
    for lang_value, instructions in raw.items():
        language = Language(lang_value)
        templates[language] = SystemPromptTemplate(instructions=tuple(instructions), language=language)
    return templates


def _parse_rules(raw: list) -> list[FilterRule]:
    return [
        FilterRule(
            rule_id=entry["rule_id"],
            kind=RuleKind(entry["kind"]),
            payload=entry["payload"],
            applies_to=AppliesTo(entry.get("applies_to", "both")),
            severity=RuleSeverity(entry.get("severity", "block")),
        )
        for entry in raw
    ]


def _parse_budgets(raw: list) -> list[Budget]:
    return [
        Budget(
            scope=BudgetScope(entry["scope"]),
            scope_key=entry.get("scope_key"),
            period=BudgetPeriod(entry.get("period", "month")),
            limit_cost=Decimal(str(entry["limit_cost"])),
        )
        for entry in raw
    ]


def _env_override(env: Mapping[str, str], name: str, current, cast):
    value = env.get(ENV_PREFIX + name)
    if value is None:
        return current
    return cast(value)


def load_config(
    path: Optional[Union[str, Path]] = None,
    env: Optional[Mapping[str, str]] = None,
) -> GatewayConfig:
    """Build the runtime configuration from file, environment, and defaults."""
    env = os.environ if env is None else env
    raw: dict = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: top level must be a mapping")
        raw = loaded
        base_dir = path.parent.resolve()

    def resolve(p: Union[str, Path]) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    listen_address = _env_override(env, "LISTEN_ADDRESS", raw.get("listen_address", DEFAULT_LISTEN_ADDRESS), str)
    input_char_limit = _env_override(
        env, "INPUT_CHAR_LIMIT", int(raw.get("input_char_limit", DEFAULT_INPUT_CHAR_LIMIT)), int
    )
    completion_allowance = _env_override(
        env,
        "COMPLETION_TOKEN_ALLOWANCE",
        int(raw.get("completion_token_allowance", DEFAULT_COMPLETION_ALLOWANCE)),
        int,
    )
    currency = _env_override(env, "CURRENCY", raw.get("currency", "EUR"), str)

    identity_key_text = _env_override(env, "IDENTITY_KEY", raw.get("identity_key", ""), str)
    if not identity_key_text:
        raise ValueError("identity_key is required (config `identity_key` or CHATGATE_IDENTITY_KEY)")
    abuse_key_text = _env_override(env, "ABUSE_LOG_KEY", raw.get("abuse_log_key", ""), str)
    if abuse_key_text:
        abuse_log_key = abuse_key_text.encode("ascii")
    else:
        abuse_log_key = AbuseLog.generate_key()
        log.warning("no abuse_log_key configured; generated an ephemeral key for this process")

    logs_section = raw.get("logs", {})
    usage_log_path = resolve(
        _env_override(env, "USAGE_LOG_PATH", logs_section.get("usage_log_path", "var/usage.jsonl"), str)
    )
    abuse_log_path = resolve(
        _env_override(env, "ABUSE_LOG_PATH", logs_section.get("abuse_log_path", "var/abuse.log"), str)
    )
    token_store_path = resolve(
        _env_override(env, "TOKEN_STORE_PATH", logs_section.get("token_store_path", "var/tokens.json"), str)
    )

    rag_section = raw.get("rag", {})
    rag = RagSettings(
        enabled=bool(rag_section.get("enabled", False)),
        index_path=resolve(
            _env_override(env, "RAG_INDEX_PATH", rag_section.get("index_path", "var/rag_index.json"), str)
        ),
        dimension=int(rag_section.get("dimension", 256)),
        chunk_size=int(rag_section.get("chunk_size", 1000)),
        overlap=int(rag_section.get("overlap", 200)),
        top_k=int(rag_section.get("top_k", 4)),
        context_token_budget=int(rag_section.get("context_token_budget", 800)),
    )

    models = _parse_models(raw.get("models", []))
    if not models:
        raise ValueError("at least one model must be declared")
    filter_rules = _parse_rules(raw["filter_rules"]) if "filter_rules" in raw else default_rules()

    return GatewayConfig(
        listen_address=listen_address,
        input_char_limit=input_char_limit,
        completion_token_allowance=completion_allowance,
        currency=currency,
        models=models,
        endpoints=_parse_endpoints(raw.get("endpoints", [])),
        templates=_parse_templates(raw.get("system_prompts", {})),
        filter_rules=filter_rules,
        budgets=_parse_budgets(raw.get("budgets", [])),
        authorized_groups=frozenset(raw.get("authorized_groups", [])),
        projects=dict(raw.get("projects", {})),
        identity_key=identity_key_text.encode("utf-8"),
        abuse_log_key=abuse_log_key,
        usage_log_path=usage_log_path,
        abuse_log_path=abuse_log_path,
        token_store_path=token_store_path,
        rag=rag,
    )
