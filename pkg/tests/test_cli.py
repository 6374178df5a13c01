"""Administrative CLI: token lifecycle and index management."""

import re

import pytest
from click.testing import CliRunner

from chatgate.cli import _split_address, gateway

CONFIG = """
identity_key: cli-test-key
models:
  - model_id: m1
    context_window_tokens: 4096
projects:
  proj-x: Project X
logs:
  token_store_path: tokens.json
rag:
  enabled: true
  index_path: rag_index.json
  dimension: 64
  chunk_size: 120
  overlap: 20
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "gateway.yaml"
    path.write_text(CONFIG, encoding="utf-8")
    return str(path)


def invoke(*args):
    return CliRunner().invoke(gateway, list(args))


def test_token_lifecycle(config_path):
    issued = invoke("token", "issue", "proj-x", "--config", config_path)
    assert issued.exit_code == 0, issued.output
    secret = re.search(r"secret:\s+(\S+)", issued.output).group(1)
    assert secret.startswith("gw_")
    assert "not recoverable" in issued.output
    token_id = re.search(r"token_id:\s+(\S+)", issued.output).group(1)

    listed = invoke("token", "list", "--config", config_path)
    assert token_id in listed.output
    assert "active" in listed.output
    assert secret not in listed.output  # the secret is shown exactly once

    revoked = invoke("token", "revoke", token_id, "--config", config_path)
    assert revoked.exit_code == 0
    assert "revoked" in invoke("token", "list", "--config", config_path).output

    again = invoke("token", "revoke", "gw_nonexistent", "--config", config_path)
    assert again.exit_code == 1


def test_token_issue_rejects_unknown_project(config_path):
    result = invoke("token", "issue", "proj-zzz", "--config", config_path)
    assert result.exit_code == 1
    assert "not registered" in result.output


def test_rag_ingest_search_reindex(config_path, tmp_path):
    doc = tmp_path / "doc.txt"
    doc.write_text("A tumbling window resets completely at its boundary. " * 12, encoding="utf-8")

    ingested = invoke("rag", "ingest", str(doc), "--config", config_path, "--uri", "docs/windows")
    assert ingested.exit_code == 0, ingested.output
    count = int(re.search(r"indexed (\d+) chunks", ingested.output).group(1))
    assert count > 1
    assert (tmp_path / "rag_index.json").exists()

    found = invoke("rag", "search", "window boundary reset", "--config", config_path, "-k", "2")
    assert found.exit_code == 0, found.output
    lines = found.output.strip().splitlines()
    assert len(lines) == 2
    assert all("docs/windows#" in line for line in lines)
    assert lines[0].startswith("1. ")

    reindexed = invoke("rag", "reindex", "--config", config_path)
    assert reindexed.exit_code == 0
    assert f"re-embedded {count} chunks" in reindexed.output


def test_rag_search_on_empty_index_fails_cleanly(config_path):
    result = invoke("rag", "search", "anything", "--config", config_path)
    assert result.exit_code == 1
    assert "empty" in result.output


def test_split_address():
    assert _split_address("127.0.0.1:8080") == ("127.0.0.1", 8080)
    assert _split_address("[::1]:9000") == ("[::1]", 9000)
    import click

    with pytest.raises(click.BadParameter):
        _split_address("no-port")
    with pytest.raises(click.BadParameter):
        _split_address(":8080")
