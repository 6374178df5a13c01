"""HTTP surfaces: the gateway service and the simulator server.

The gateway app exposes the interactive endpoint (signed-claims header), the
project API endpoint (bearer token), model discovery, metrics, and health.
Streaming responses use server-sent events: `content` events carrying text
chunks, one terminal `usage` event, then `done`.
"""

from __future__ import annotations

import asyncio
import json
import time
from contextlib import asynccontextmanager
from typing import Iterator, Optional

import anyio
from fastapi import FastAPI, Header, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse

from .gateway import Gateway, GatewayError
from .metering import render_metrics_text
from .simulator import UpstreamSimulator

SSE_CHUNK_CHARS = 64


def _sse_event(event: str, payload: dict) -> str:
    return f"event: {event}\ndata: {json.dumps(payload, ensure_ascii=False)}\n\n"


def build_gateway_app(gateway: Gateway) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        # chat handlers are synchronous and run in the worker pool; widen it
        # so concurrent load is bounded by upstream capacity, not the pool
        limiter = anyio.to_thread.current_default_thread_limiter()
        limiter.total_tokens = 100
        yield

    app = FastAPI(title="chatgate", lifespan=lifespan, docs_url=None, redoc_url=None, openapi_url=None)

    @app.exception_handler(GatewayError)
    async def gateway_error_handler(request: Request, exc: GatewayError) -> JSONResponse:
        gateway.log_request(request.url.path, exc.status, exc.reason, "", 0.0)
        return JSONResponse(status_code=exc.status, content=exc.body())

    @app.exception_handler(RequestValidationError)
    async def validation_error_handler(request: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content={"error": {"reason": "malformed_request", "detail": "body must be a JSON object"}},
        )

    def _run_chat(path: str, principal, body: dict, allow_rag: bool):
        started = time.perf_counter()
        model_id = body.get("model_id", "") if isinstance(body, dict) else ""
        try:
            result, finalize = gateway.chat(principal, body, allow_rag=allow_rag)
        except GatewayError as err:
            gateway.log_request(
                path, err.status, err.reason, model_id, (time.perf_counter() - started) * 1000
            )
            raise
        wants_stream = bool(body.get("stream", False))
        if not wants_stream:
            finalize(True)
            gateway.log_request(path, 200, "ok", result.model_id, (time.perf_counter() - started) * 1000)
            return JSONResponse(result.to_body())

        def event_stream() -> Iterator[str]:
            completed = False
            try:
                content = result.content
                for start in range(0, len(content), SSE_CHUNK_CHARS) or [0]:
                    yield _sse_event("content", {"text": content[start : start + SSE_CHUNK_CHARS]})
                body_json = result.to_body()
                yield _sse_event("usage", body_json["usage"] | {"finish_reason": result.finish_reason})
                yield _sse_event("done", {})
                completed = True
            finally:
                finalize(completed)
                gateway.log_request(
                    path,
                    200 if completed else 499,
                    "ok" if completed else "stream_aborted",
                    result.model_id,
                    (time.perf_counter() - started) * 1000,
                )

        return StreamingResponse(event_stream(), media_type="text/event-stream")

    @app.post("/v1/chat")
    def chat(body: dict, x_identity_assertion: Optional[str] = Header(default=None)):
        principal = gateway.authenticate_session(x_identity_assertion)
        return _run_chat("/v1/chat", principal, body, allow_rag=True)

    @app.post("/api/v1/chat")
    def api_chat(body: dict, authorization: Optional[str] = Header(default=None)):
        secret = None
        if authorization and authorization.startswith("Bearer "):
            secret = authorization[len("Bearer ") :]
        principal = gateway.authenticate_api(secret)
        return _run_chat("/api/v1/chat", principal, body, allow_rag=False)

    @app.get("/v1/models")
    def models():
        return {"models": gateway.model_summaries()}

    @app.get("/metrics")
    def metrics() -> PlainTextResponse:
        return PlainTextResponse(render_metrics_text(gateway.metrics_snapshot()))

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    return app


def build_sim_app(simulator: UpstreamSimulator) -> FastAPI:
    app = FastAPI(title="upstream-sim", docs_url=None, redoc_url=None, openapi_url=None)

    @app.post("/endpoints/{endpoint_id}/completions")
    async def completions(endpoint_id: str, payload: dict):
        status, body = simulator.handle(endpoint_id, payload)
        latency_ms = body.get("latency_ms", 0) if status == 200 else 0
        if latency_ms:
            await asyncio.sleep(latency_ms / 1000.0)
        return JSONResponse(status_code=status, content=body)

    @app.get("/calls")
    def calls():
        return {
            "calls": [
                {
                    "timestamp": entry.timestamp,
                    "endpoint_id": entry.endpoint_id,
                    "tokens": entry.tokens,
                    "outcome": entry.outcome,
                }
                for entry in simulator.call_log()
            ]
        }

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    return app
