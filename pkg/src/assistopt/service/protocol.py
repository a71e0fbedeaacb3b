"""Wire schemas shared by the NDJSON socket server and the HTTP API."""

from __future__ import annotations

import json
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, ValidationError

from ..causal.context import ContextVector, FeatureMismatch
from .engine import AssistanceService, Decision, NoActionAvailable, Query, SpecNotLoaded


class ActionRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    session_id: str
    concept_id: str
    question_id: str
    context: Optional[Dict[str, Optional[float]]] = None
    action_ids: List[str] = []

    def to_query(self) -> Query:
        ctx = None if self.context is None else ContextVector.from_dict(self.context)
        return Query(self.session_id, self.concept_id, self.question_id, ctx, tuple(self.action_ids))


class ActionResponse(BaseModel):
    action_id: str
    policy_id: str
    fallback: bool

    @classmethod
    def of(cls, d: Decision) -> "ActionResponse":
        return cls(action_id=d.action_id, policy_id=d.policy_id, fallback=d.fallback)


class ErrorResponse(BaseModel):
    error: str
    reason: str


def _dump(model: BaseModel) -> str:
    return json.dumps(model.model_dump(), sort_keys=True, separators=(",", ":"))


def handle_request(service: AssistanceService, req: ActionRequest) -> BaseModel:
    try:
        return ActionResponse.of(service.get_action(req.to_query()))
    except FeatureMismatch as exc:
        return ErrorResponse(error="invalid", reason=str(exc))
    except SpecNotLoaded as exc:
        return ErrorResponse(error="not_loaded", reason=str(exc))
    except NoActionAvailable as exc:
        return ErrorResponse(error="no_action", reason=str(exc))


def handle_line(service: AssistanceService, line: str) -> str:
    """One NDJSON request line in, one response line out (without newline)."""
    try:
        data = json.loads(line)
    except json.JSONDecodeError as exc:
        return _dump(ErrorResponse(error="parse", reason=str(exc)))
    if isinstance(data, dict) and data.get("op") == "reload":
        try:
            service.reload()
        except Exception as exc:  # the previous snapshot stays live
            return _dump(ErrorResponse(error="reload", reason=f"{type(exc).__name__}: {exc}"))
        return json.dumps({"reloaded": True}, separators=(",", ":"))
    try:
        req = ActionRequest.model_validate(data)
    except ValidationError as exc:
        reason = "; ".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors())
        return _dump(ErrorResponse(error="invalid", reason=reason))
    return _dump(handle_request(service, req))
