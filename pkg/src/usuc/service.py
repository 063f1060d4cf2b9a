"""HTTP front end for the router.

Endpoints
---------
POST /classify   {"utterance": "..."} -> routing decision JSON. Low-confidence
                 decisions come back with "accepted": false, meaning the call
                 goes to a human intent analyst.
GET  /health     {"status": "ok", "entries": <table entries>, "strategy": <name>}

Responses to /classify are byte-identical to the lines ``usuc classify``
prints for the same configuration.
"""

from __future__ import annotations

import json
import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from starlette.concurrency import run_in_threadpool

from usuc.runtime import Runtime, dumps_line
from usuc.text import normalize

logger = logging.getLogger(__name__)


def _bad_request(message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=400)


def create_app(runtime: Runtime) -> FastAPI:
    app = FastAPI(title="usuc", docs_url=None, redoc_url=None)
    entries = runtime.table.entry_count if runtime.table is not None else 0

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "entries": entries, "strategy": runtime.config.strategy}

    @app.post("/classify")
    async def classify_endpoint(request: Request) -> Response:
        try:
            body = json.loads(await request.body())
        except (ValueError, UnicodeDecodeError):
            return _bad_request("body is not valid JSON")
        if not isinstance(body, dict) or not isinstance(body.get("utterance"), str):
            return _bad_request('body must be an object with a string "utterance"')
        utterance = body["utterance"]
        if not normalize(utterance):
            return _bad_request("empty utterance")
        result = await run_in_threadpool(runtime.classify_line, utterance)
        if "error" in result:
            return JSONResponse(result, status_code=400)
        return Response(dumps_line(result), media_type="application/json")

    return app


def serve(runtime: Runtime) -> None:
    import uvicorn

    host, port = runtime.config.listen_address()
    logger.info("serving %d paraphrases on %s:%d", len(runtime.registry), host, port)
    uvicorn.run(create_app(runtime), host=host, port=port, log_level="info")
