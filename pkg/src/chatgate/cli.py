"""Command line entry points: `gateway` (serve, token, rag) and `sim`."""

from __future__ import annotations

import sys
from pathlib import Path

import click
import uvicorn

from .auth import TokenStore, UnknownProject
from .clock import SystemClock
from .config import load_config
from .gateway import Gateway, HttpUpstreamAdapter
from .http_api import build_gateway_app, build_sim_app
from .rag import HashingEmbedder, RagIndex
from .simulator import UpstreamSimulator, load_sim_config


def _split_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise click.BadParameter(f"listen address must be host:port, got {address!r}")
    return host, int(port)


@click.group()
def gateway() -> None:
    """Chat gateway administration and serving."""


@gateway.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True), help="Gateway config file.")
def serve(config_path: str) -> None:
    """Run the gateway HTTP service."""
    config = load_config(config_path)
    rag_index = None
    if config.rag.enabled:
        rag_index = RagIndex.load(config.rag.index_path, embedder=HashingEmbedder(dimension=config.rag.dimension))
    gw = Gateway(config, adapter=HttpUpstreamAdapter(), clock=SystemClock(), rag_index=rag_index)
    app = build_gateway_app(gw)
    host, port = _split_address(config.listen_address)
    uvicorn.run(app, host=host, port=port, log_level="info")


@gateway.group()
def token() -> None:
    """Issue, revoke, and list project API tokens."""


@token.command("issue")
@click.argument("project_id")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--ttl-days", default=90, show_default=True, help="Token lifetime in days.")
def token_issue(project_id: str, config_path: str, ttl_days: int) -> None:
    config = load_config(config_path)
    store = TokenStore(config.token_store_path, config.projects)
    try:
        api_token, secret = store.issue_token(project_id, ttl_seconds=ttl_days * 24 * 3600)
    except UnknownProject:
        click.echo(f"error: project {project_id!r} is not registered in the configuration", err=True)
        sys.exit(1)
    click.echo(f"token_id: {api_token.token_id}")
    click.echo(f"secret:   {secret}")
    click.echo("store the secret now; it is not recoverable later")


@token.command("revoke")
@click.argument("token_id")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def token_revoke(token_id: str, config_path: str) -> None:
    config = load_config(config_path)
    store = TokenStore(config.token_store_path, config.projects)
    if store.revoke_token(token_id):
        click.echo(f"revoked {token_id}")
    else:
        click.echo(f"error: unknown token_id {token_id!r}", err=True)
        sys.exit(1)


@token.command("list")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def token_list(config_path: str) -> None:
    config = load_config(config_path)
    store = TokenStore(config.token_store_path, config.projects)
    for entry in store.list_tokens():
        state = "revoked" if entry.revoked else "active"
        click.echo(f"{entry.token_id}  project={entry.project_id}  expires_at={entry.expires_at:.0f}  {state}")


@gateway.group()
def rag() -> None:
    """Manage the retrieval index."""


def _open_index(config_path: str) -> tuple:
    config = load_config(config_path)
    embedder = HashingEmbedder(dimension=config.rag.dimension)
    index = RagIndex.load(config.rag.index_path, embedder=embedder)
    index.chunk_size = config.rag.chunk_size
    index.overlap = config.rag.overlap
    return config, index


@rag.command("ingest")
@click.argument("path", type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--uri", default=None, help="Source identifier; defaults to the file path.")
def rag_ingest(path: str, config_path: str, uri: str | None) -> None:
    config, index = _open_index(config_path)
    text = Path(path).read_text(encoding="utf-8")
    count = index.ingest(uri or path, text)
    index.save(config.rag.index_path)
    click.echo(f"indexed {count} chunks from {uri or path}")


@rag.command("search")
@click.argument("query")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("-k", "top_k", default=5, show_default=True, help="Number of results.")
def rag_search(query: str, config_path: str, top_k: int) -> None:
    _, index = _open_index(config_path)
    if len(index) == 0:
        click.echo("index is empty; ingest documents first", err=True)
        sys.exit(1)
    for rank, result in enumerate(index.retrieve(query, top_k), start=1):
        preview = result.chunk.text[:80].replace("\n", " ")
        click.echo(f"{rank}. {result.score:+.4f}  {result.chunk.chunk_id}  {preview}")


@rag.command("reindex")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def rag_reindex(config_path: str) -> None:
    config, index = _open_index(config_path)
    count = index.reindex()
    index.save(config.rag.index_path)
    click.echo(f"re-embedded {count} chunks")


@click.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True), help="Simulator fleet config.")
@click.option("--port", default=9000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def sim(config_path: str, port: int, host: str) -> None:
    """Run the upstream endpoint simulator."""
    configs = load_sim_config(config_path)
    simulator = UpstreamSimulator(configs, clock=SystemClock())
    app = build_sim_app(simulator)
    uvicorn.run(app, host=host, port=port, log_level="info")
