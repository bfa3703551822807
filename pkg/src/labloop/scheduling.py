"""Task planning onto constrained resources.

List scheduling with greedy batching. Time is integer seconds and every
entry occupies a half-open interval [start, end), so abutting entries never
double-book. Planning is a pure function of its inputs: identical calls
produce identical schedules.

An entry's resource_ids may repeat an id; each occurrence claims one unit
of that resource's capacity for the entry's interval.
"""

from dataclasses import dataclass, field

UNBATCHED_CAP = 1_000_000  # effectively no per-batch size limit


class InfeasibleError(Exception):
    """No assignment can exist: unknown class or quantity beyond capacity."""


@dataclass(frozen=True)
class Resource:
    id: str
    klass: str
    capacity: int

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")


@dataclass(frozen=True)
class TaskSpec:
    id: str
    duration_s: int
    requires: dict[str, int] = field(default_factory=dict)  # class -> qty
    ready_at: int = 0
    batch_key: str | None = None

    def __post_init__(self):
        if self.duration_s < 1:
            raise ValueError("duration_s must be >= 1")


@dataclass(frozen=True)
class Batch:
    """A schedulable unit: one task, or several sharing a batch_key."""

    task_ids: tuple[str, ...]
    key: str | None
    ready_at: int
    duration_s: int
    requires: dict[str, int]

    @property
    def id(self) -> str:
        return min(self.task_ids)


@dataclass(frozen=True)
class ScheduleEntry:
    task_ids: tuple[str, ...]
    resource_ids: tuple[str, ...]
    start: int
    end: int
    batch_key: str | None = None


@dataclass(frozen=True)
class Schedule:
    entries: tuple[ScheduleEntry, ...]
    makespan_s: int


@dataclass(frozen=True)
class Violation:
    rule: str  # overlap | interval
    message: str
    resource_id: str | None = None


@dataclass(frozen=True)
class BatchPolicy:
    batch_window_s: int = 300
    setup_s: int = 60
    per_item_s: int = 10


def _merged_requires(tasks: list[TaskSpec]) -> dict[str, int]:
    # Batched tasks share apparatus, so take the per-class maximum rather
    # than the sum.
    merged: dict[str, int] = {}
    for t in tasks:
        for klass, qty in t.requires.items():
            merged[klass] = max(merged.get(klass, 0), qty)
    return merged


def _keyed_batch(members: list[TaskSpec], key: str, policy: BatchPolicy) -> Batch:
    return Batch(
        task_ids=tuple(t.id for t in members),
        key=key,
        ready_at=max(t.ready_at for t in members),
        duration_s=policy.setup_s + policy.per_item_s * len(members),
        requires=_merged_requires(members),
    )


def _singleton(task: TaskSpec) -> Batch:
    return Batch(
        task_ids=(task.id,),
        key=None,
        ready_at=task.ready_at,
        duration_s=task.duration_s,
        requires=dict(task.requires),
    )


def _greedy_group(members: list[TaskSpec], key: str, window_s: int, capacity: int,
                  policy: BatchPolicy) -> list[Batch]:
    members = sorted(members, key=lambda t: (t.ready_at, t.id))
    batches: list[Batch] = []
    current: list[TaskSpec] = []
    earliest = 0
    for t in members:
        if not current:
            current = [t]
            earliest = t.ready_at
        elif t.ready_at - earliest <= window_s and len(current) < capacity:
            current.append(t)
        else:
            batches.append(_keyed_batch(current, key, policy))
            current = [t]
            earliest = t.ready_at
    if current:
        batches.append(_keyed_batch(current, key, policy))
    return batches


def batch_tasks(tasks: list[TaskSpec], window_s: int, capacity: int,
                policy: BatchPolicy | None = None) -> list[Batch]:
    """Group keyed tasks whose ready_at lies within window_s of the first
    member, greedily in ready_at order, at most capacity per batch. Tasks
    without a batch_key come back as singletons with their own duration;
    keyed batches get duration setup_s + per_item_s * size."""
    if window_s < 0:
        raise ValueError("window_s must be >= 0")
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    policy = policy or BatchPolicy()

    groups: dict[str, list[TaskSpec]] = {}
    out: list[Batch] = []
    for t in tasks:
        if t.batch_key is None:
            out.append(_singleton(t))
        else:
            groups.setdefault(t.batch_key, []).append(t)
    for key in sorted(groups):
        out.extend(_greedy_group(groups[key], key, window_s, capacity, policy))
    out.sort(key=lambda b: (b.ready_at, -b.duration_s, b.id))
    return out


def _class_map(resources: list[Resource]) -> dict[str, list[Resource]]:
    by_class: dict[str, list[Resource]] = {}
    for r in sorted(resources, key=lambda r: r.id):
        by_class.setdefault(r.klass, []).append(r)
    return by_class


def _check_feasible(requires: dict[str, int], by_class: dict[str, list[Resource]]) -> None:
    for klass, qty in sorted(requires.items()):
        pool = by_class.get(klass)
        if not pool:
            raise InfeasibleError(f"no resources of class {klass!r}")
        total = sum(r.capacity for r in pool)
        if qty > total:
            raise InfeasibleError(
                f"class {klass!r} needs {qty} units but only {total} exist"
            )


def _units_in_use(resource_id: str, entries: list[ScheduleEntry], start: int, end: int) -> int:
    worst = 0
    boundaries = {start}
    for e in entries:
        if e.start < end and start < e.end:
            boundaries.add(max(e.start, start))
    for instant in boundaries:
        used = sum(
            e.resource_ids.count(resource_id)
            for e in entries
            if e.start <= instant < e.end
        )
        worst = max(worst, used)
    return worst


def _try_place(batch: Batch, start: int, by_class: dict[str, list[Resource]],
               entries: list[ScheduleEntry]) -> tuple[str, ...] | None:
    end = start + batch.duration_s
    claimed: list[str] = []
    for klass, qty in sorted(batch.requires.items()):
        remaining = qty
        for r in by_class[klass]:
            if remaining == 0:
                break
            free = r.capacity - _units_in_use(r.id, entries, start, end)
            take = min(free, remaining)
            claimed.extend([r.id] * take)
            remaining -= take
        if remaining > 0:
            return None
    return tuple(claimed)


def plan(tasks: list[TaskSpec], resources: list[Resource], now: int = 0,
         policy: BatchPolicy | None = None) -> Schedule:
    """Batch, then list-schedule: batches in (ready_at, longest-duration,
    smallest-id) order, each placed at its earliest feasible start.

    Raises InfeasibleError when a required class has no resources or a
    quantity exceeds the class's total capacity.
    """
    policy = policy or BatchPolicy()
    by_class = _class_map(resources)
    for t in tasks:
        if not t.requires:
            raise ValueError(f"task {t.id!r} has no resource requirements")
        _check_feasible(t.requires, by_class)

    # Per-key batch capacity: a batch runs on one unit set, so the largest
    # single resource of the scarcest required class bounds its size.
    groups: dict[str, list[TaskSpec]] = {}
    batches: list[Batch] = []
    for t in tasks:
        if t.batch_key is None:
            batches.append(_singleton(t))
        else:
            groups.setdefault(t.batch_key, []).append(t)
    for key in sorted(groups):
        members = groups[key]
        classes = _merged_requires(members)
        if classes:
            cap = min(max(r.capacity for r in by_class[k]) for k in classes)
        else:
            cap = UNBATCHED_CAP
        batches.extend(_greedy_group(members, key, policy.batch_window_s, cap, policy))

    batches.sort(key=lambda b: (b.ready_at, -b.duration_s, b.id))

    entries: list[ScheduleEntry] = []
    for batch in batches:
        start = max(batch.ready_at, now)
        while True:
            claimed = _try_place(batch, start, by_class, entries)
            if claimed is not None:
                entries.append(
                    ScheduleEntry(
                        task_ids=batch.task_ids,
                        resource_ids=claimed,
                        start=start,
                        end=start + batch.duration_s,
                        batch_key=batch.key,
                    )
                )
                break
            # Jump to the next time the usage profile can change.
            later = [e.end for e in entries if e.end > start]
            if not later:
                raise AssertionError("placement failed on an idle timeline")
            start = min(later)

    fixed = tuple(entries)
    span = max(e.end for e in fixed) - min(e.start for e in fixed) if fixed else 0
    return Schedule(entries=fixed, makespan_s=span)


def makespan(s: Schedule) -> int:
    if not s.entries:
        return 0
    return max(e.end for e in s.entries) - min(e.start for e in s.entries)


def validate_schedule(s: Schedule, resources: list[Resource]) -> list[Violation]:
    """Empty iff all intervals are positive and no instant uses more units
    of a resource than its capacity."""
    violations: list[Violation] = []
    for e in s.entries:
        if e.end <= e.start:
            violations.append(
                Violation("interval", f"entry for {e.task_ids} has end <= start")
            )
    caps = {r.id: r.capacity for r in resources}
    used_ids = sorted({rid for e in s.entries for rid in e.resource_ids})
    for rid in used_ids:
        cap = caps.get(rid)
        if cap is None:
            violations.append(
                Violation("overlap", f"unknown resource {rid!r}", resource_id=rid)
            )
            continue
        starts = sorted({e.start for e in s.entries if rid in e.resource_ids})
        for instant in starts:
            used = sum(
                e.resource_ids.count(rid)
                for e in s.entries
                if e.start <= instant < e.end
            )
            if used > cap:
                violations.append(
                    Violation(
                        "overlap",
                        f"resource {rid!r} holds {used} units at t={instant}, capacity {cap}",
                        resource_id=rid,
                    )
                )
                break
    return violations
