"""FastAPI application exposing the toolkit's operations."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import CrossemoError, StoreIOError
from . import handlers
from .schemas import (
    AdaptRequest,
    AdaptResponse,
    FadRequest,
    FadResponse,
    HealthResponse,
    ProbeRequest,
    ProbeResponse,
    SynthRequest,
    SynthResponse,
    ValidateRequest,
    ValidateResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(
        title="crossemo",
        version=__version__,
        description=(
            "Cross-domain emotion representation toolkit: synthetic fixtures, "
            "layerwise probing, two-stage adaptation, and Frechet distance "
            "sweeps over cached audio embeddings."
        ),
    )

    @app.exception_handler(CrossemoError)
    async def _toolkit_error(request: Request, exc: CrossemoError):
        status = 404 if isinstance(exc, StoreIOError) else 400
        return JSONResponse(
            status_code=status,
            content={"detail": str(exc), "error": type(exc).__name__},
        )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/synth", response_model=SynthResponse)
    def synth(req: SynthRequest) -> SynthResponse:
        return handlers.handle_synth(req)

    @app.post("/validate", response_model=ValidateResponse)
    def validate(req: ValidateRequest) -> ValidateResponse:
        return handlers.handle_validate(req)

    @app.post("/probe", response_model=ProbeResponse)
    def probe(req: ProbeRequest) -> ProbeResponse:
        return handlers.handle_probe(req)

    @app.post("/adapt", response_model=AdaptResponse)
    def adapt(req: AdaptRequest) -> AdaptResponse:
        return handlers.handle_adapt(req)

    @app.post("/fad", response_model=FadResponse)
    def fad(req: FadRequest) -> FadResponse:
        return handlers.handle_fad(req)

    return app


app = create_app()
