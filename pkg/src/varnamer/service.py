"""HTTP prediction service.

Stateless API: accepted names travel inside each request, so concurrent
clients never share server-side state and identical requests produce
byte-identical response bodies. One immutable model is shared read-only
across handlers.

Endpoints: GET /health, GET /model, POST /predict, GET /metrics.
"""

from __future__ import annotations

import hashlib
import json
import time
from typing import Literal

from fastapi import FastAPI, Request, Response
from pydantic import BaseModel, Field

from .bpe import load_vocab
from .inference import (
    InferenceError,
    InferenceRequest,
    Predictor,
    SequenceOverflowError,
)
from .model import load_checkpoint, param_count

LATENCY_BUCKETS = (0.01, 0.05, 0.1, 0.5, 1.0, 5.0, float("inf"))


class SlotDecl(BaseModel):
    placeholder: str
    spans: list[tuple[int, int]]
    count: int | None = None  # oracle-mode mask count


class PredictBody(BaseModel):
    code: str
    slots: list[SlotDecl]
    accepted: dict[str, str] = Field(default_factory=dict)
    k: int = 5
    mode: Literal["heuristic", "oracle"] = "heuristic"


def _json_response(payload: dict, status_code: int = 200) -> Response:
    # Deterministic bytes: sorted keys, fixed separators.
    return Response(
        content=json.dumps(payload, sort_keys=True, separators=(",", ":")),
        status_code=status_code,
        media_type="application/json",
    )


def _error(status_code: int, message: str) -> Response:
    return _json_response({"error": message}, status_code=status_code)


def load_predictor(
    checkpoint_path, tokens_path, merges_path, max_allowed: int = 7
) -> tuple[Predictor, dict]:
    vocab = load_vocab(tokens_path, merges_path)
    model, _opt, header = load_checkpoint(checkpoint_path, expected_vocab_hash=vocab.token_hash())
    with open(checkpoint_path, "rb") as f:
        checkpoint_hash = hashlib.sha256(f.read()).hexdigest()
    info = {
        "config": header["config"],
        "param_count": param_count(model.config),
        "vocab_hash": header["vocab_hash"],
        "checkpoint_hash": checkpoint_hash,
        "max_allowed": max_allowed,
    }
    return Predictor(model, vocab, max_allowed=max_allowed), info


def create_app(
    predictor: Predictor | None = None,
    model_info: dict | None = None,
    max_body_bytes: int = 8 * 1024 * 1024,
) -> FastAPI:
    app = FastAPI(title="varnamer", docs_url=None, redoc_url=None)
    app.state.predictor = predictor
    app.state.model_info = model_info or {}
    app.state.request_counts = {"predict": 0, "errors": 0}
    app.state.latency_counts = [0] * len(LATENCY_BUCKETS)

    @app.get("/health")
    def health() -> Response:
        return _json_response(
            {"status": "ok", "model_loaded": app.state.predictor is not None}
        )

    @app.get("/model")
    def model() -> Response:
        if app.state.predictor is None:
            return _error(503, "model not loaded")
        return _json_response(app.state.model_info)

    @app.get("/metrics")
    def metrics() -> Response:
        return _json_response(
            {
                "requests": app.state.request_counts,
                "latency_seconds": {
                    "buckets": [b if b != float("inf") else "inf" for b in LATENCY_BUCKETS],
                    "counts": app.state.latency_counts,
                },
            }
        )

    @app.post("/predict")
    async def predict(body: PredictBody, request: Request) -> Response:
        length = request.headers.get("content-length")
        if length and int(length) > max_body_bytes:
            return _error(413, f"request body exceeds {max_body_bytes} bytes")
        # single read so a checkpoint hot-swap cannot split one request
        predictor = app.state.predictor
        if predictor is None:
            return _error(503, "model not loaded")
        app.state.request_counts["predict"] += 1
        started = time.perf_counter()
        try:
            oracle_counts = {
                s.placeholder: s.count for s in body.slots if s.count is not None
            }
            req = InferenceRequest(
                text=body.code,
                slots={s.placeholder: [tuple(sp) for sp in s.spans] for s in body.slots},
                accepted=dict(body.accepted),
                k=body.k,
                mode=body.mode,
                oracle_counts=oracle_counts,
            )
            if len(req.slots) != len(body.slots):
                raise InferenceError("duplicate placeholder in slot declarations")
            suggestions = predictor.refine_with_accepted(req)
        except SequenceOverflowError as exc:
            app.state.request_counts["errors"] += 1
            return _error(413, str(exc))
        except InferenceError as exc:
            app.state.request_counts["errors"] += 1
            return _error(400, str(exc))
        elapsed = time.perf_counter() - started
        for i, bound in enumerate(LATENCY_BUCKETS):
            if elapsed <= bound:
                app.state.latency_counts[i] += 1
                break
        payload = {
            "model": {
                "vocab_hash": app.state.model_info.get("vocab_hash", ""),
                "checkpoint_hash": app.state.model_info.get("checkpoint_hash", ""),
            },
            "mode": body.mode,
            "suggestions": {
                name: [c.as_dict() for c in ranked] for name, ranked in suggestions.items()
            },
        }
        return _json_response(payload)

    return app


def create_app_from_paths(
    checkpoint_path,
    tokens_path,
    merges_path,
    max_allowed: int = 7,
    max_body_bytes: int = 8 * 1024 * 1024,
) -> FastAPI:
    predictor, info = load_predictor(checkpoint_path, tokens_path, merges_path, max_allowed)
    return create_app(predictor, info, max_body_bytes)
