"""Run lifecycle engine.

Owns the mutable state of every active run, appends each applied event to
the record store, and pushes dispatchable steps to adapters through the
gateway as they become ready. All GET surfaces stay derived from records;
the engine only exists to make new events happen.
"""

import json
import re
import threading

from ..canonical import canonicalize
from ..executor import (
    EventKind,
    IllegalTransition,
    RunEvent,
    RunStatus,
    StepStatus,
    advance,
    apply_action,
    complete_manual_task,
    replay,
    start_run,
)
from ..gateway.server import GatewayError, GatewayServer
from ..records import RecordStore
from ..scheduling import BatchPolicy, Resource, TaskSpec, plan
from ..simlab.adapter import default_routes
from ..workflow import (
    Step,
    Workflow,
    parse_workflow,
    serialize_workflow,
    validate_workflow,
)
from .views import UnknownRun, run_events

REGISTRY_CHAIN = "registry"
RUN_ID_RE = re.compile(r"^run-(\d{4,})$")

Scalar = str | int | bool


class UnknownWorkflow(Exception):
    pass


class WorkflowConflict(Exception):
    """Same workflow id resubmitted with a different document."""


class WorkflowInvalid(Exception):
    def __init__(self, violations):
        self.violations = violations
        super().__init__("; ".join(v.message for v in violations))


class _RunHandle:
    __slots__ = ("state", "lock")

    def __init__(self, state):
        self.state = state
        self.lock = threading.RLock()


def _earliest_starts(w: Workflow) -> dict[str, int]:
    """Dependency-respecting earliest start per step, from declared
    durations: the advisory schedule treats these as ready_at floors."""
    done: dict[str, int] = {}

    def finish(step_id: str) -> int:
        if step_id not in done:
            step = w.step(step_id)
            done[step_id] = start_of(step) + step.duration_s
        return done[step_id]

    def start_of(step) -> int:
        return max((finish(d) for d in step.depends_on), default=0)

    return {s.id: start_of(s) for s in w.steps}


def _scalarize(payload: dict) -> dict[str, Scalar]:
    """Flatten an adapter reply into record-safe scalars. Nested values are
    kept as canonical JSON under a *_json key."""
    out: dict[str, Scalar] = {}
    for key, value in payload.items():
        if isinstance(value, bool) or (isinstance(value, (str, int))
                                       and not isinstance(value, float)):
            out[key] = value
        else:
            try:
                out[f"{key}_json"] = canonicalize(value).decode("utf-8")
            except (TypeError, ValueError):
                out[f"{key}_json"] = json.dumps(value, sort_keys=True)
    return out


class RunEngine:
    def __init__(self, store: RecordStore, gateway: GatewayServer | None, clock,
                 resources: list[Resource] | tuple[Resource, ...],
                 policy: BatchPolicy | None = None,
                 routes: dict[str, str] | None = None,
                 request_timeout_s: float = 30.0):
        self.store = store
        self.gateway = gateway
        self.clock = clock
        self.resources = list(resources)
        self.policy = policy or BatchPolicy()
        self.routes = dict(routes) if routes is not None else default_routes()
        self.request_timeout_s = request_timeout_s
        self._runs: dict[str, _RunHandle] = {}
        self._workflows: dict[str, tuple[Workflow, str]] = {}
        self._mint = threading.Lock()
        self._stopping = threading.Event()
        self._load_registry()
        self._next_run = 1 + max(
            (int(m.group(1)) for m in map(RUN_ID_RE.match, store.chains()) if m),
            default=0,
        )

    def _load_registry(self) -> None:
        for r in self.store.query(run_id=REGISTRY_CHAIN, kind="workflow_submitted"):
            w = parse_workflow(r.payload["document"])
            self._workflows[w.id] = (w, r.payload["document"])

    def stop(self) -> None:
        self._stopping.set()

    # ---- workflows ----

    def submit_workflow(self, text: str) -> Workflow:
        """Parse, validate, and register one workflow document. Identical
        resubmission is a no-op; a changed document under a known id is a
        conflict because recorded runs replay against the registry."""
        w = parse_workflow(text)
        violations = validate_workflow(w)
        if violations:
            raise WorkflowInvalid(violations)
        doc = serialize_workflow(w)
        with self._mint:
            known = self._workflows.get(w.id)
            if known is not None:
                if known[1] != doc:
                    raise WorkflowConflict(w.id)
                return known[0]
            self._workflows[w.id] = (w, doc)
        self.store.append(REGISTRY_CHAIN, "workflow_submitted",
                          {"workflow_id": w.id, "document": doc},
                          ts=self.clock.now())
        return w

    def workflow_for(self, workflow_id: str) -> Workflow:
        try:
            return self._workflows[workflow_id][0]
        except KeyError:
            raise UnknownWorkflow(workflow_id) from None

    def workflow_ids(self) -> list[str]:
        return sorted(self._workflows)

    # ---- runs ----

    def start(self, workflow_id: str) -> dict:
        """Mint a run, record an advisory schedule, apply RunStarted, and
        dispatch whatever became ready."""
        w = self.workflow_for(workflow_id)
        earliest = _earliest_starts(w)
        tasks = [
            TaskSpec(
                id=s.id,
                duration_s=s.duration_s,
                requires={r.klass: r.qty for r in s.requires},
                ready_at=earliest[s.id],
                batch_key=s.batch_key,
            )
            for s in w.steps
            if s.requires
        ]
        schedule = plan(tasks, self.resources, policy=self.policy)
        with self._mint:
            run_id = f"run-{self._next_run:04d}"
            self._next_run += 1
            handle = self._runs.get(run_id)
            if handle is None:
                handle = _RunHandle(state=None)
                self._runs[run_id] = handle
        with handle.lock:
            ts = self.clock.now()
            entries = [
                {
                    "task_ids": list(e.task_ids),
                    "resource_ids": list(e.resource_ids),
                    "start": e.start,
                    "end": e.end,
                    "batch_key": e.batch_key,
                }
                for e in schedule.entries
            ]
            self.store.append(
                run_id,
                "schedule_advice",
                {
                    "makespan_s": schedule.makespan_s,
                    "entries_json": json.dumps(entries, sort_keys=True,
                                               separators=(",", ":")),
                },
                ts=ts,
            )
            state, applied = start_run(w, run_id, ts)
            handle.state = state
            for ev in applied:
                self._record(ev)
            self._react(handle)
            return {"run_id": run_id, "status": handle.state.status.value}

    def action(self, run_id: str, action: str) -> dict:
        handle = self._handle(run_id)
        with handle.lock:
            state, applied = apply_action(handle.state, action, self.clock.now())
            handle.state = state
            for ev in applied:
                self._record(ev)
            self._react(handle)
            return {"run_id": run_id, "status": handle.state.status.value}

    def complete(self, run_id: str, step_id: str, operator: str, note: str) -> dict:
        handle = self._handle(run_id)
        with handle.lock:
            state, applied = complete_manual_task(
                handle.state, step_id, operator, note, self.clock.now()
            )
            handle.state = state
            for ev in applied:
                self._record(ev)
            self._react(handle)
            return {
                "run_id": run_id,
                "step_id": step_id,
                "status": handle.state.status.value,
            }

    def run_status(self, run_id: str) -> RunStatus:
        return self._handle(run_id).state.status

    # ---- internals ----

    def _handle(self, run_id: str) -> _RunHandle:
        # One handle object per run id, forever: state rebuilds happen into
        # the published handle under its own lock, so callers never race on
        # two locks for one run.
        with self._mint:
            handle = self._runs.get(run_id)
            if handle is None:
                handle = _RunHandle(state=None)
                self._runs[run_id] = handle
        if handle.state is None:
            with handle.lock:
                if handle.state is None:
                    events = run_events(self.store.query(run_id=run_id))
                    if not events or events[0].kind != EventKind.RUN_STARTED:
                        raise UnknownRun(run_id)
                    w = self.workflow_for(events[0].payload["workflow_id"])
                    handle.state = replay(w, run_id, events)
        return handle

    def _record(self, event: RunEvent) -> None:
        payload: dict[str, Scalar] = dict(event.payload)
        if event.step_id is not None:
            payload["step_id"] = event.step_id
        payload["event_id"] = event.event_id
        self.store.append(event.run_id, event.kind.value, payload, ts=event.ts)

    def _apply(self, handle: _RunHandle, event: RunEvent) -> None:
        state, applied = advance(handle.state, event)
        handle.state = state
        for ev in applied:
            self._record(ev)

    def _react(self, handle: _RunHandle) -> None:
        """Move every Ready step along, with the handle lock held. Manual
        steps wait for an operator; decisions auto-complete; the rest go to
        an adapter on a worker thread."""
        while handle.state.status == RunStatus.RUNNING:
            ready = [
                s for s in handle.state.workflow.steps
                if handle.state.step_states[s.id] == StepStatus.READY
            ]
            if not ready:
                return
            for step in ready:
                ts = self.clock.now()
                if step.kind == "manual":
                    self._apply(handle, RunEvent(
                        run_id=handle.state.run_id,
                        kind=EventKind.STEP_AWAITING_HUMAN,
                        ts=ts, step_id=step.id,
                    ))
                elif step.kind == "decision":
                    self._apply(handle, RunEvent(
                        run_id=handle.state.run_id,
                        kind=EventKind.STEP_SUCCEEDED,
                        ts=ts, step_id=step.id, payload={"auto": True},
                    ))
                else:
                    self._apply(handle, RunEvent(
                        run_id=handle.state.run_id,
                        kind=EventKind.STEP_DISPATCHED,
                        ts=ts, step_id=step.id,
                    ))
                    threading.Thread(
                        target=self._call_adapter,
                        args=(handle.state.run_id, step),
                        daemon=True,
                    ).start()

    def _request_for(self, step: Step) -> tuple[str, dict]:
        params = dict(step.params)
        adapter = params.pop("adapter", None)
        if step.kind == "instrument":
            op = "instrument.run"
            args: dict = {
                "step_id": step.id,
                "duration_s": step.duration_s,
                "params": params,
            }
        else:
            op = params.pop("op", None)
            if not isinstance(op, str) or not op:
                raise ValueError(f"step {step.id!r} needs a string 'op' param")
            args = params
        adapter_id = adapter if adapter is not None else self.routes.get(op)
        if not adapter_id:
            raise ValueError(f"no adapter route for op {op!r}")
        return str(adapter_id), {"op": op, "args": args}

    def _call_adapter(self, run_id: str, step: Step) -> None:
        try:
            if self.gateway is None:
                raise ValueError("no gateway configured")
            adapter_id, payload = self._request_for(step)
            reply = self.gateway.request(
                adapter_id, payload,
                timeout_s=self.request_timeout_s + float(step.duration_s),
            )
            event = RunEvent(
                run_id=run_id,
                kind=EventKind.STEP_SUCCEEDED,
                ts=self.clock.now(),
                step_id=step.id,
                payload=_scalarize(reply),
            )
        except (GatewayError, ValueError, KeyError) as exc:
            event = RunEvent(
                run_id=run_id,
                kind=EventKind.STEP_FAILED,
                ts=self.clock.now(),
                step_id=step.id,
                payload={"error": str(exc)},
            )
        if self._stopping.is_set():
            return
        self.submit_event(run_id, event)

    def submit_event(self, run_id: str, event: RunEvent) -> bool:
        """Apply an externally produced event; False when the run moved on
        (aborted, failed) and the event lost the race."""
        handle = self._handle(run_id)
        with handle.lock:
            try:
                self._apply(handle, event)
            except IllegalTransition:
                return False
            self._react(handle)
            return True
