"""Event-sourced run execution.

A run is a fold over RunEvents: reduce(state, event) applies one event and
returns derived follow-up events (ready promotions, run completion). The
engine appends every applied event to the record store, so replaying the
recorded sequence through reduce reconstructs the exact final state.

Status only changes when the corresponding run-level event is applied
(RunFailed, RunCompleted, ...), never as a side effect of a step event;
that keeps the recorded sequence replayable without special cases.
"""

from dataclasses import dataclass, field, replace
from enum import Enum

from .workflow import Step, UnknownStep, Workflow, validate_workflow


class RunStatus(str, Enum):
    CREATED = "Created"
    RUNNING = "Running"
    PAUSED = "Paused"
    COMPLETED = "Completed"
    FAILED = "Failed"
    ABORTED = "Aborted"


TERMINAL = (RunStatus.COMPLETED, RunStatus.FAILED, RunStatus.ABORTED)


class StepStatus(str, Enum):
    PENDING = "Pending"
    READY = "Ready"
    DISPATCHED = "Dispatched"
    AWAITING_HUMAN = "AwaitingHuman"
    SUCCEEDED = "Succeeded"
    FAILED = "Failed"
    SKIPPED = "Skipped"


class EventKind(str, Enum):
    RUN_STARTED = "RunStarted"
    STEP_READY = "StepReady"
    STEP_DISPATCHED = "StepDispatched"
    STEP_AWAITING_HUMAN = "StepAwaitingHuman"
    STEP_SUCCEEDED = "StepSucceeded"
    STEP_FAILED = "StepFailed"
    RUN_PAUSED = "RunPaused"
    RUN_RESUMED = "RunResumed"
    RUN_ABORTED = "RunAborted"
    RUN_COMPLETED = "RunCompleted"
    RUN_FAILED = "RunFailed"


class IllegalTransition(Exception):
    pass


class NotAwaitingHuman(Exception):
    pass


class ValidationError(Exception):
    def __init__(self, violations):
        self.violations = violations
        super().__init__("; ".join(v.message for v in violations))


@dataclass(frozen=True)
class RunEvent:
    run_id: str
    kind: EventKind
    ts: int
    step_id: str | None = None
    payload: dict[str, str | int | bool] = field(default_factory=dict)
    event_id: str = ""  # assigned at application time


@dataclass(frozen=True)
class RunState:
    run_id: str
    workflow: Workflow
    status: RunStatus
    step_states: dict[str, StepStatus]
    clock: int
    event_seq: int = 0

    @property
    def workflow_id(self) -> str:
        return self.workflow.id

    def step_status(self, step_id: str) -> StepStatus:
        try:
            return self.step_states[step_id]
        except KeyError:
            raise UnknownStep(step_id) from None


IN_FLIGHT = (StepStatus.DISPATCHED, StepStatus.AWAITING_HUMAN)
COMPLETABLE = (StepStatus.READY, StepStatus.DISPATCHED, StepStatus.AWAITING_HUMAN)
DONE = (StepStatus.SUCCEEDED, StepStatus.SKIPPED)


def initial_state(w: Workflow, run_id: str, ts: int = 0) -> RunState:
    return RunState(
        run_id=run_id,
        workflow=w,
        status=RunStatus.CREATED,
        step_states={s.id: StepStatus.PENDING for s in w.steps},
        clock=ts,
    )


def start_run(w: Workflow, run_id: str, ts: int = 0) -> tuple[RunState, list[RunEvent]]:
    """Validate, then apply RunStarted and its ready promotions. Returns the
    running state and every event applied, in application order."""
    violations = validate_workflow(w)
    if violations:
        raise ValidationError(violations)
    started = RunEvent(
        run_id=run_id,
        kind=EventKind.RUN_STARTED,
        ts=ts,
        payload={"workflow_id": w.id},
    )
    return advance(initial_state(w, run_id, ts), started)


def _succeeded_deps(state: RunState, step: Step) -> bool:
    return all(state.step_states[d] == StepStatus.SUCCEEDED for d in step.depends_on)


def _newly_ready(state: RunState) -> list[str]:
    return sorted(
        s.id
        for s in state.workflow.steps
        if state.step_states[s.id] == StepStatus.PENDING and _succeeded_deps(state, s)
    )


def _dependents_to_skip(state: RunState, failed_id: str) -> set[str]:
    skip: set[str] = set()
    changed = True
    while changed:
        changed = False
        for s in state.workflow.steps:
            if s.id in skip or state.step_states[s.id] not in (
                StepStatus.PENDING,
                StepStatus.READY,
            ):
                continue
            if failed_id in s.depends_on or s.depends_on & skip:
                skip.add(s.id)
                changed = True
    return skip


def _all_done(steps: dict[str, StepStatus]) -> bool:
    return all(st in DONE for st in steps.values())


def _require_step(state: RunState, event: RunEvent, allowed: tuple[StepStatus, ...]) -> str:
    step_id = event.step_id
    if step_id is None or step_id not in state.step_states:
        raise UnknownStep(str(step_id))
    current = state.step_states[step_id]
    if current not in allowed:
        raise IllegalTransition(
            f"step {step_id!r} is {current.value}, expected one of "
            f"{[a.value for a in allowed]}"
        )
    return step_id


def _follow(state: RunState, kind: EventKind, ts: int, step_id: str | None = None,
            payload: dict | None = None) -> RunEvent:
    return RunEvent(
        run_id=state.run_id, kind=kind, ts=ts, step_id=step_id, payload=payload or {}
    )


def reduce(state: RunState, event: RunEvent) -> tuple[RunState, list[RunEvent]]:
    """Apply one event; return the new state and derived follow-up events.

    Raises IllegalTransition for any event on a terminal run and for step
    transitions the table does not allow.
    """
    if event.run_id != state.run_id:
        raise IllegalTransition(f"event for run {event.run_id!r} applied to {state.run_id!r}")
    if state.status in TERMINAL:
        raise IllegalTransition(f"run is terminal ({state.status.value})")

    steps = dict(state.step_states)
    status = state.status
    follow_ups: list[RunEvent] = []
    kind = event.kind

    if kind == EventKind.RUN_STARTED:
        if status != RunStatus.CREATED:
            raise IllegalTransition("run already started")
        status = RunStatus.RUNNING
        next_state = replace(state, status=status, clock=event.ts,
                             event_seq=state.event_seq + 1)
        follow_ups = [
            _follow(state, EventKind.STEP_READY, event.ts, sid)
            for sid in _newly_ready(next_state)
        ]
        return next_state, follow_ups

    if kind == EventKind.STEP_READY:
        if status != RunStatus.RUNNING:
            raise IllegalTransition(f"cannot promote steps while {status.value}")
        sid = _require_step(state, event, (StepStatus.PENDING,))
        steps[sid] = StepStatus.READY

    elif kind == EventKind.STEP_DISPATCHED:
        if status != RunStatus.RUNNING:
            raise IllegalTransition(f"cannot dispatch while {status.value}")
        sid = _require_step(state, event, (StepStatus.READY,))
        if state.workflow.step(sid).kind not in ("instrument", "model_call"):
            raise IllegalTransition(f"step {sid!r} is not dispatchable")
        steps[sid] = StepStatus.DISPATCHED

    elif kind == EventKind.STEP_AWAITING_HUMAN:
        if status != RunStatus.RUNNING:
            raise IllegalTransition(f"cannot hand off steps while {status.value}")
        sid = _require_step(state, event, (StepStatus.READY,))
        if state.workflow.step(sid).kind != "manual":
            raise IllegalTransition(f"step {sid!r} is not manual")
        steps[sid] = StepStatus.AWAITING_HUMAN

    elif kind == EventKind.STEP_SUCCEEDED:
        sid = _require_step(state, event, COMPLETABLE)
        steps[sid] = StepStatus.SUCCEEDED
        probe = replace(state, step_states=steps)
        if status == RunStatus.RUNNING:
            follow_ups = [
                _follow(state, EventKind.STEP_READY, event.ts, rid)
                for rid in _newly_ready(probe)
            ]
        # A run whose last in-flight step succeeds completes even while
        # paused; there is nothing left for resume to do.
        if _all_done(steps):
            follow_ups.append(_follow(state, EventKind.RUN_COMPLETED, event.ts))

    elif kind == EventKind.STEP_FAILED:
        sid = _require_step(state, event, COMPLETABLE)
        steps[sid] = StepStatus.FAILED
        for dep_id in _dependents_to_skip(replace(state, step_states=steps), sid):
            steps[dep_id] = StepStatus.SKIPPED
        follow_ups = [
            _follow(
                state,
                EventKind.RUN_FAILED,
                event.ts,
                payload={"reason": "step_failed", "step_id": sid},
            )
        ]

    elif kind == EventKind.RUN_PAUSED:
        if status != RunStatus.RUNNING:
            raise IllegalTransition(f"cannot pause a {status.value} run")
        status = RunStatus.PAUSED

    elif kind == EventKind.RUN_RESUMED:
        if status != RunStatus.PAUSED:
            raise IllegalTransition(f"cannot resume a {status.value} run")
        status = RunStatus.RUNNING
        probe = replace(state, status=status)
        follow_ups = [
            _follow(state, EventKind.STEP_READY, event.ts, rid)
            for rid in _newly_ready(probe)
        ]

    elif kind == EventKind.RUN_ABORTED:
        status = RunStatus.ABORTED
        for sid, st in steps.items():
            if st in IN_FLIGHT:
                steps[sid] = StepStatus.FAILED
            elif st in (StepStatus.PENDING, StepStatus.READY):
                steps[sid] = StepStatus.SKIPPED

    elif kind == EventKind.RUN_COMPLETED:
        if not _all_done(steps):
            raise IllegalTransition("steps are still outstanding")
        status = RunStatus.COMPLETED

    elif kind == EventKind.RUN_FAILED:
        status = RunStatus.FAILED

    else:
        raise IllegalTransition(f"unknown event kind {event.kind!r}")

    next_state = replace(
        state,
        status=status,
        step_states=steps,
        clock=event.ts,
        event_seq=state.event_seq + 1,
    )
    return next_state, follow_ups


def advance(state: RunState, event: RunEvent) -> tuple[RunState, list[RunEvent]]:
    """Apply an event plus all derived follow-ups, assigning event ids in
    application order. Returns every applied event for recording."""
    queue = [event]
    applied: list[RunEvent] = []
    while queue:
        item = queue.pop(0)
        if not item.event_id:
            item = replace(item, event_id=f"{state.run_id}:{state.event_seq:05d}")
        state, follow_ups = reduce(state, item)
        applied.append(item)
        queue.extend(follow_ups)
    return state, applied


def apply_action(state: RunState, action: str, ts: int) -> tuple[RunState, list[RunEvent]]:
    """pause | resume | abort, as a recorded run-level event."""
    kinds = {
        "pause": EventKind.RUN_PAUSED,
        "resume": EventKind.RUN_RESUMED,
        "abort": EventKind.RUN_ABORTED,
    }
    if action not in kinds:
        raise ValueError(f"unknown action {action!r}")
    if state.status in TERMINAL:
        raise IllegalTransition(f"run is terminal ({state.status.value})")
    payload: dict[str, str | int | bool] = {"action": action}
    if action == "abort":
        aborted = sorted(
            sid for sid, st in state.step_states.items() if st in IN_FLIGHT
        )
        skipped = sorted(
            sid
            for sid, st in state.step_states.items()
            if st in (StepStatus.PENDING, StepStatus.READY)
        )
        payload["aborted_steps"] = ",".join(aborted)
        payload["skipped_steps"] = ",".join(skipped)
        payload["reason"] = "aborted"
    return advance(state, RunEvent(run_id=state.run_id, kind=kinds[action],
                                   ts=ts, payload=payload))


def complete_manual_task(state: RunState, step_id: str, operator: str, note: str,
                         ts: int) -> tuple[RunState, list[RunEvent]]:
    """Mark an AwaitingHuman step done on behalf of an operator."""
    current = state.step_status(step_id)
    if current != StepStatus.AWAITING_HUMAN:
        raise NotAwaitingHuman(f"step {step_id!r} is {current.value}")
    done = RunEvent(
        run_id=state.run_id,
        kind=EventKind.STEP_SUCCEEDED,
        ts=ts,
        step_id=step_id,
        payload={"operator": operator, "note": note},
    )
    return advance(state, done)


def replay(w: Workflow, run_id: str, events: list[RunEvent]) -> RunState:
    """Rebuild the final state by folding recorded events in order.
    Follow-ups are ignored: the recording already contains them."""
    state = initial_state(w, run_id, events[0].ts if events else 0)
    for event in events:
        state, _ = reduce(state, event)
    return state
