"""HTTP service for query serving.

All endpoints are JSON; no endpoint mutates indices, so /v1/query is safe
under arbitrary concurrency. The service refuses to start when index files
are missing (the startup error lists the missing paths).
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import __version__
from .engine import Engine
from .errors import ConfigError, UnknownProfileError, WragError
from .model import EngineConfig


class QueryRequest(BaseModel):
    query: str
    top_k: int | None = None
    profile: str | None = None


def create_app(config: EngineConfig, index_dir: str, mock_providers: bool = False) -> FastAPI:
    engine = Engine.load(config, index_dir, mock_providers=mock_providers)
    app = FastAPI(title="wrag", version=__version__)
    app.state.engine = engine

    @app.get("/healthz")
    def healthz() -> dict:
        return {
            "status": "ok",
            "version": __version__,
            "sources": engine.registry.source_ids(),
            "mock_providers": mock_providers,
        }

    @app.post("/v1/query")
    def query(request: QueryRequest) -> dict:
        try:
            return engine.answer(request.query, request.top_k, request.profile)
        except (ConfigError, UnknownProfileError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except WragError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc

    @app.post("/v1/retrieve")
    def retrieve(request: QueryRequest) -> dict:
        try:
            return engine.retrieve_only(
                request.query, request.top_k, request.profile
            ).to_jsonable()
        except (ConfigError, UnknownProfileError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except WragError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc

    @app.get("/v1/sources")
    def sources(profile: str | None = None) -> dict:
        try:
            return engine.sources_summary(profile)
        except WragError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    return app
