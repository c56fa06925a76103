"""FastAPI service wrapping the engine: GET /health, POST /ask."""

from __future__ import annotations

import base64
import os
import tempfile
from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import SERVICE_TOKEN_VAR
from ..domain import KnowledgeFlags, QualityQuestion
from ..errors import DomainError, StageError, VqragError
from ..pipeline import Engine, RunConfig
from .models import AskRequest, HealthResponse


def _apply_overrides(base: RunConfig, req: AskRequest) -> RunConfig:
    if req.config is None:
        return base
    data = base.model_dump()
    over = req.config.model_dump(exclude_none=True)
    flag_bits = {k: over.pop(k) for k in ("meta", "loc", "globalq", "localq") if k in over}
    if flag_bits:
        data["flags"] = KnowledgeFlags(**{**base.flags.model_dump(), **flag_bits})
    data.update(over)
    return RunConfig(**data)


def create_app(engine: Engine, service_token: str | None = None) -> FastAPI:
    app = FastAPI(title="vqrag", version=__version__)
    token = service_token if service_token is not None else os.environ.get(SERVICE_TOKEN_VAR)

    def check_auth(request: Request) -> None:
        if not token:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "malformed request", "detail": exc.errors()})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/ask")
    def ask(body: AskRequest, _: None = Depends(check_auth)) -> JSONResponse:
        tmp_files: list[str] = []
        try:
            paths = []
            for ref in body.media:
                if ref.path is not None:
                    if not Path(ref.path).is_file():
                        raise HTTPException(status_code=400, detail=f"no such media file: {ref.path}")
                    paths.append(ref.path)
                else:
                    suffix = Path(ref.filename or "").suffix or (".png" if ref.kind == "image" else ".mp4")
                    fd, tmp = tempfile.mkstemp(suffix=suffix)
                    with os.fdopen(fd, "wb") as fh:
                        fh.write(base64.b64decode(ref.data_b64))
                    tmp_files.append(tmp)
                    paths.append(tmp)
            try:
                question = QualityQuestion.mcq(body.question, body.options, n_inputs=len(paths))
            except ValueError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from exc
            request_engine = Engine(
                engine.backends, _apply_overrides(engine.config, body), probe_tool=engine.probe_tool
            )
            record = request_engine.run(paths, question)
            return JSONResponse(content=record.model_dump(mode="json"))
        except StageError as exc:
            raise HTTPException(
                status_code=502, detail={"stage": exc.stage, "error": str(exc.cause)}
            ) from exc
        except DomainError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except VqragError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        finally:
            for tmp in tmp_files:
                try:
                    os.unlink(tmp)
                except OSError:
                    pass

    return app
