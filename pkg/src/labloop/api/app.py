"""HTTP surface: REST endpoints plus a line-delimited event stream.

Every GET answers from the record store; POSTs go through the engine or
campaign manager. Auth is a single bearer token shared by all clients.
"""

import hmac
import json
import os

from fastapi import Body, Depends, FastAPI, Header, HTTPException, Request
from fastapi.responses import JSONResponse, StreamingResponse

from ..executor import IllegalTransition, NotAwaitingHuman
from ..scheduling import InfeasibleError
from ..workflow import SchemaError, UnknownStep, WorkflowSyntaxError
from .campaigns import DuplicateCampaign
from .engine import UnknownWorkflow, WorkflowConflict, WorkflowInvalid
from .service import LabService
from .views import (
    TERMINAL_KINDS,
    UnknownCampaign,
    UnknownRun,
    campaign_view,
    record_to_event,
    run_view,
)

STREAM_POLL_S = 0.5


def create_app(service: LabService) -> FastAPI:
    app = FastAPI(docs_url=None, redoc_url=None, openapi_url=None)
    token = service.cfg.api_token

    def require_token(authorization: str | None = Header(default=None)) -> None:
        if not token:
            return
        expected = f"Bearer {token}"
        if authorization is None or not hmac.compare_digest(authorization, expected):
            raise HTTPException(status_code=401, detail="invalid or missing token")

    authed = Depends(require_token)

    def error(status: int, code: str, detail: str, **extra) -> JSONResponse:
        return JSONResponse(status_code=status,
                            content={"error": code, "detail": detail, **extra})

    @app.exception_handler(WorkflowSyntaxError)
    def _syntax(request, exc: WorkflowSyntaxError):
        return error(400, "syntax", str(exc), line=exc.line)

    @app.exception_handler(SchemaError)
    def _schema(request, exc):
        return error(400, "schema", str(exc))

    @app.exception_handler(WorkflowInvalid)
    def _invalid(request, exc: WorkflowInvalid):
        violations = [
            {"rule": v.rule, "step_id": v.step_id, "message": v.message}
            for v in exc.violations
        ]
        return JSONResponse(status_code=422,
                            content={"error": "invalid_workflow",
                                     "violations": violations})

    @app.exception_handler(WorkflowConflict)
    def _conflict(request, exc):
        return error(409, "workflow_conflict",
                     f"workflow {exc} already registered with a different document")

    @app.exception_handler(InfeasibleError)
    def _infeasible(request, exc):
        return error(422, "infeasible", str(exc))

    @app.exception_handler(UnknownWorkflow)
    def _no_workflow(request, exc):
        return error(404, "unknown_workflow", str(exc))

    @app.exception_handler(UnknownRun)
    def _no_run(request, exc):
        return error(404, "unknown_run", str(exc))

    @app.exception_handler(UnknownStep)
    def _no_step(request, exc):
        return error(404, "unknown_step", str(exc))

    @app.exception_handler(UnknownCampaign)
    def _no_campaign(request, exc):
        return error(404, "unknown_campaign", str(exc))

    @app.exception_handler(IllegalTransition)
    def _illegal(request, exc):
        return error(409, "illegal_transition", str(exc))

    @app.exception_handler(NotAwaitingHuman)
    def _not_awaiting(request, exc):
        return error(409, "not_awaiting_human", str(exc))

    @app.exception_handler(DuplicateCampaign)
    def _duplicate(request, exc):
        return error(409, "duplicate_campaign", str(exc))

    @app.get("/healthz")
    def healthz() -> dict:
        return {"ok": True, "adapters": service.gateway.connected_adapters()}

    @app.post("/workflows", status_code=201)
    async def submit_workflow(request: Request,
                              _: None = authed) -> dict:
        text = (await request.body()).decode("utf-8")
        w = service.engine.submit_workflow(text)
        return {"workflow_id": w.id}

    @app.get("/workflows")
    def list_workflows(_: None = authed) -> dict:
        return {"workflow_ids": service.engine.workflow_ids()}

    @app.post("/runs", status_code=201)
    def start_run(body: dict = Body(...), _: None = authed) -> dict:
        workflow_id = body.get("workflow_id")
        if not isinstance(workflow_id, str) or not workflow_id:
            raise HTTPException(status_code=400, detail="workflow_id required")
        return service.engine.start(workflow_id)

    @app.get("/runs/{run_id}")
    def get_run(run_id: str, _: None = authed) -> dict:
        return run_view(service.store, service.engine.workflow_for, run_id)

    @app.post("/runs/{run_id}/actions")
    def run_action(run_id: str, body: dict = Body(...),
                   _: None = authed) -> dict:
        action = body.get("action")
        if action not in ("pause", "resume", "abort"):
            raise HTTPException(status_code=400,
                                detail=f"unknown action {action!r}")
        return service.engine.action(run_id, action)

    @app.post("/runs/{run_id}/steps/{step_id}/complete")
    def complete_step(run_id: str, step_id: str, body: dict = Body(default={}),
                      _: None = authed) -> dict:
        operator = str(body.get("operator", ""))
        note = str(body.get("note", ""))
        return service.engine.complete(run_id, step_id, operator, note)

    @app.get("/runs/{run_id}/events")
    def stream_run_events(run_id: str, request: Request,
                          _: None = authed):
        from_seq = _from_seq(request)
        if service.store.chain_length(run_id) == 0:
            raise UnknownRun(run_id)
        return StreamingResponse(
            _event_lines(service, run_id, from_seq),
            media_type="application/x-ndjson",
        )

    @app.get("/records")
    def list_records(run_id: str | None = None, kind: str | None = None,
                     _: None = authed) -> dict:
        rows = service.store.query(run_id=run_id, kind=kind)
        return {
            "chains": service.store.chains(),
            "records": [r.to_dict() for r in rows],
        }

    @app.post("/campaigns", status_code=201)
    def start_campaign(body: dict = Body(...),
                       _: None = authed) -> dict:
        try:
            campaign_id = service.campaigns.start(body)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return {"campaign_id": campaign_id, "status": "Running"}

    @app.get("/campaigns/{campaign_id}")
    def get_campaign(campaign_id: str, _: None = authed) -> dict:
        return campaign_view(service.store, campaign_id)

    _mount_console(app, service)
    return app


def _from_seq(request: Request) -> int:
    raw = request.query_params.get("from", "0")
    try:
        value = int(raw)
    except ValueError:
        raise HTTPException(status_code=400,
                            detail="'from' must be an integer") from None
    if value < 0:
        raise HTTPException(status_code=400, detail="'from' must be >= 0")
    return value


def _event_lines(service: LabService, run_id: str, from_seq: int):
    """History from from_seq, then live tail until a terminal record.
    Idle waits emit bare newlines so abandoned streams get torn down."""
    already_done = any(
        r.kind in TERMINAL_KINDS and r.seq < from_seq
        for r in service.store.query(run_id=run_id)
    )
    if already_done:
        return
    seq = from_seq
    while True:
        record = service.store.wait_for(run_id, seq, timeout=STREAM_POLL_S)
        if record is None:
            yield "\n"
            continue
        yield json.dumps(record_to_event(record), separators=(",", ":")) + "\n"
        if record.kind in TERMINAL_KINDS:
            return
        seq += 1


def _mount_console(app: FastAPI, service: LabService) -> None:
    directory = service.cfg.console_dir
    if directory and os.path.isdir(directory):
        from fastapi.staticfiles import StaticFiles
        app.mount("/console", StaticFiles(directory=directory, html=True),
                  name="console")
