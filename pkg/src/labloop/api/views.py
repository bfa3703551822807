"""Read models rebuilt from the record store.

Every GET surface answers by folding recorded events, never by peeking at
in-memory engine state, so a restarted service shows exactly what a live
one does.
"""

from ..executor import EventKind, RunEvent, replay
from ..records import Record, RecordStore
from ..workflow import Workflow

EVENT_KINDS = frozenset(k.value for k in EventKind)

RUN_TERMINAL_KINDS = frozenset((
    EventKind.RUN_COMPLETED.value,
    EventKind.RUN_FAILED.value,
    EventKind.RUN_ABORTED.value,
))

CAMPAIGN_TERMINAL_KINDS = frozenset(("campaign_finished", "campaign_error"))

TERMINAL_KINDS = RUN_TERMINAL_KINDS | CAMPAIGN_TERMINAL_KINDS


class UnknownRun(Exception):
    pass


class UnknownCampaign(Exception):
    pass


def record_to_event(record: Record) -> dict:
    """API shape for one recorded event: step_id and event_id move out of
    the stored payload, the rest stays under 'payload'."""
    payload = dict(record.payload)
    step_id = payload.pop("step_id", None)
    event_id = payload.pop("event_id", None)
    return {
        "seq": record.seq,
        "run_id": record.run_id,
        "kind": record.kind,
        "ts": record.ts,
        "step_id": step_id,
        "event_id": event_id,
        "payload": payload,
    }


def run_events(records: list[Record]) -> list[RunEvent]:
    """Recorded run records back into executor events, skipping advisory
    records that are not state transitions."""
    events = []
    for r in records:
        if r.kind not in EVENT_KINDS:
            continue
        payload = dict(r.payload)
        step_id = payload.pop("step_id", None)
        event_id = payload.pop("event_id", "")
        events.append(RunEvent(
            run_id=r.run_id,
            kind=EventKind(r.kind),
            ts=r.ts,
            step_id=step_id,
            payload=payload,
            event_id=event_id,
        ))
    return events


def run_view(store: RecordStore, workflow_for, run_id: str) -> dict:
    """Current run status derived by replaying its chain.

    workflow_for(workflow_id) -> Workflow resolves the document the run
    was started from (the RunStarted payload names it).
    """
    rows = store.query(run_id=run_id)
    events = run_events(rows)
    if not events or events[0].kind != EventKind.RUN_STARTED:
        raise UnknownRun(run_id)
    workflow: Workflow = workflow_for(events[0].payload["workflow_id"])
    state = replay(workflow, run_id, events)
    steps = [
        {
            "id": s.id,
            "kind": s.kind,
            "status": state.step_states[s.id].value,
            "depends_on": sorted(s.depends_on),
        }
        for s in workflow.steps
    ]
    advice = next((r for r in rows if r.kind == "schedule_advice"), None)
    return {
        "run_id": run_id,
        "workflow_id": workflow.id,
        "status": state.status.value,
        "steps": steps,
        "started_ts": events[0].ts,
        "updated_ts": state.clock,
        "event_count": len(events),
        "record_count": len(rows),
        "makespan_s": advice.payload["makespan_s"] if advice else None,
        "head_hash": store.head_hash(run_id),
    }


def campaign_view(store: RecordStore, campaign_id: str) -> dict:
    """Campaign progress derived by folding its chain. Hits are recomputed
    from the scoring records rather than trusted from summaries."""
    rows = store.query(run_id=campaign_id)
    if not rows or rows[0].kind != "campaign_started":
        raise UnknownCampaign(campaign_id)
    config = dict(rows[0].payload)
    threshold = config["affinity_threshold"]

    status = "Running"
    iterations: list[dict] = []
    scored: list[tuple[int, str]] = []
    structure_id = None
    for r in rows[1:]:
        if r.kind in ("fold_computed", "fold_skipped"):
            structure_id = r.payload["structure_id"]
        elif r.kind == "affinity_scored":
            scored.append((r.payload["affinity"], r.payload["smiles"]))
        elif r.kind == "iteration_completed":
            iterations.append(dict(r.payload))
        elif r.kind == "campaign_finished":
            status = r.payload["status"]
        elif r.kind == "campaign_error":
            status = "Error"

    hits = sorted((a, s) for a, s in scored if a <= threshold)
    return {
        "campaign_id": campaign_id,
        "status": status,
        "config": config,
        "structure_id": structure_id,
        "iterations": iterations,
        "scored_count": len(scored),
        "hits": [{"smiles": s, "affinity": a} for a, s in hits],
        "best_affinity": min((a for a, _ in scored), default=None),
        "record_count": len(rows),
        "head_hash": store.head_hash(campaign_id),
    }
