"""HTTP front end: serving endpoints plus the batch pipeline jobs."""

from __future__ import annotations

from typing import Optional, Union

from fastapi import FastAPI, HTTPException
from pydantic import ValidationError

from .engine import AssistanceService
from .jobs import JOB_MODELS, JobError, JobResult, run_job
from .protocol import ActionRequest, ActionResponse, ErrorResponse, handle_request


def create_app(service: Optional[AssistanceService] = None) -> FastAPI:
    service = service if service is not None else AssistanceService()
    app = FastAPI(title="assistopt")
    app.state.service = service

    @app.get("/health")
    def health() -> dict:
        state = service.state
        return {
            "loaded": state is not None,
            "policies": [] if state is None else sorted(state.specs),
            "decisions": len(service.log),
        }

    @app.post("/action", response_model=Union[ActionResponse, ErrorResponse])
    def action(req: ActionRequest):
        return handle_request(service, req)

    @app.post("/reload")
    def reload() -> dict:
        try:
            state = service.reload()
        except Exception as exc:
            raise HTTPException(status_code=409, detail=f"{type(exc).__name__}: {exc}")
        return {"reloaded": True, "policies": sorted(state.specs)}

    @app.post("/jobs/{name}", response_model=JobResult)
    def job(name: str, body: dict):
        model = JOB_MODELS.get(name)
        if model is None:
            raise HTTPException(status_code=404, detail=f"unknown job {name!r}")
        try:
            req = model.model_validate(body)
        except ValidationError as exc:
            raise HTTPException(status_code=422, detail=exc.errors(include_url=False, include_context=False))
        try:
            return run_job(name, req)
        except JobError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    return app
