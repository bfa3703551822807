"""Declarative workflow documents: parse, validate, serialize, and walk.

A workflow is a DAG of typed steps (instrument, manual, model_call,
decision) with resource requirements, written as a YAML file with a fixed
schema (see docs/workflow-format.md). Unknown keys are hard errors and
scalar params are restricted to strings/integers/booleans so downstream
record hashing is bit-exact.
"""

import re
from dataclasses import dataclass, field

import yaml

SLUG_RE = re.compile(r"^[a-z0-9-]{1,64}$")

STEP_KINDS = ("instrument", "manual", "model_call", "decision")

_TOP_KEYS = {"id", "name", "labware", "steps"}
_STEP_KEYS = {"id", "kind", "depends_on", "duration_s", "requires", "batch_key", "params"}
_LABWARE_KEYS = {"id", "kind"}
_REQUIREMENT_KEYS = {"class", "qty"}


class WorkflowSyntaxError(Exception):
    """Malformed document text. Carries a 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaError(Exception):
    """Well-formed text, wrong shape: missing, mistyped, or unknown fields."""


class UnknownStep(Exception):
    """A step id that does not exist in the workflow."""


@dataclass(frozen=True)
class ResourceRequirement:
    klass: str
    qty: int


@dataclass(frozen=True)
class LabwareDecl:
    id: str
    kind: str


@dataclass(frozen=True)
class Step:
    id: str
    kind: str
    depends_on: frozenset[str] = frozenset()
    duration_s: int = 1
    requires: tuple[ResourceRequirement, ...] = ()
    batch_key: str | None = None
    params: dict[str, str | int | bool] = field(default_factory=dict)


@dataclass(frozen=True)
class Workflow:
    id: str
    name: str
    steps: tuple[Step, ...]
    labware: tuple[LabwareDecl, ...] = ()

    def step(self, step_id: str) -> Step:
        for s in self.steps:
            if s.id == step_id:
                return s
        raise UnknownStep(step_id)

    def step_ids(self) -> set[str]:
        return {s.id for s in self.steps}


@dataclass(frozen=True)
class Violation:
    rule: str  # cycle | requirement | dangling-dependency | duplicate-id | duration
    step_id: str
    message: str


def _require(mapping: dict, key: str, typ, where: str):
    if key not in mapping:
        raise SchemaError(f"{where}: missing required field {key!r}")
    value = mapping[key]
    if typ is int and isinstance(value, bool):
        raise SchemaError(f"{where}: field {key!r} must be an integer")
    if not isinstance(value, typ):
        raise SchemaError(f"{where}: field {key!r} has wrong type {type(value).__name__}")
    return value


def _reject_unknown(mapping: dict, allowed: set[str], where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise SchemaError(f"{where}: unknown keys {sorted(unknown)}")


def _parse_requirement(raw, where: str) -> ResourceRequirement:
    if not isinstance(raw, dict):
        raise SchemaError(f"{where}: requirement must be a mapping")
    _reject_unknown(raw, _REQUIREMENT_KEYS, where)
    klass = _require(raw, "class", str, where)
    qty = _require(raw, "qty", int, where)
    if qty < 1:
        raise SchemaError(f"{where}: qty must be >= 1")
    return ResourceRequirement(klass=klass, qty=qty)


def _parse_step(raw, index: int) -> Step:
    where = f"steps[{index}]"
    if not isinstance(raw, dict):
        raise SchemaError(f"{where}: step must be a mapping")
    _reject_unknown(raw, _STEP_KEYS, where)
    step_id = _require(raw, "id", str, where)
    kind = _require(raw, "kind", str, where)
    if kind not in STEP_KINDS:
        raise SchemaError(f"{where}: kind must be one of {STEP_KINDS}")
    duration = _require(raw, "duration_s", int, where)
    if duration < 1:
        raise SchemaError(f"{where}: duration_s must be >= 1")

    depends_raw = raw.get("depends_on", [])
    if not isinstance(depends_raw, list) or not all(isinstance(d, str) for d in depends_raw):
        raise SchemaError(f"{where}: depends_on must be a list of step ids")
    if len(set(depends_raw)) != len(depends_raw):
        raise SchemaError(f"{where}: depends_on has duplicates")

    requires_raw = raw.get("requires", [])
    if not isinstance(requires_raw, list):
        raise SchemaError(f"{where}: requires must be a list")
    requires = tuple(
        _parse_requirement(r, f"{where}.requires[{i}]") for i, r in enumerate(requires_raw)
    )

    batch_key = raw.get("batch_key")
    if batch_key is not None and not isinstance(batch_key, str):
        raise SchemaError(f"{where}: batch_key must be a string")

    params_raw = raw.get("params", {})
    if not isinstance(params_raw, dict):
        raise SchemaError(f"{where}: params must be a mapping")
    params: dict[str, str | int | bool] = {}
    for key, value in params_raw.items():
        if not isinstance(key, str):
            raise SchemaError(f"{where}: param key {key!r} is not a string")
        if isinstance(value, float) or not isinstance(value, (str, int, bool)):
            raise SchemaError(
                f"{where}: param {key!r} must be a string/integer/boolean"
            )
        params[key] = value

    return Step(
        id=step_id,
        kind=kind,
        depends_on=frozenset(depends_raw),
        duration_s=duration,
        requires=requires,
        batch_key=batch_key,
        params=params,
    )


def parse_workflow(text: str) -> Workflow:
    """Parse a workflow document. Raises WorkflowSyntaxError for malformed
    YAML (with line number) and SchemaError for shape violations."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        line = None
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            line = mark.line + 1
        raise WorkflowSyntaxError(str(getattr(exc, "problem", exc) or exc), line) from exc
    if not isinstance(raw, dict):
        raise SchemaError("document root must be a mapping")
    _reject_unknown(raw, _TOP_KEYS, "document")

    wf_id = _require(raw, "id", str, "document")
    if not SLUG_RE.match(wf_id):
        raise SchemaError("id must match [a-z0-9-]{1,64}")
    name = _require(raw, "name", str, "document")

    labware_raw = raw.get("labware", [])
    if not isinstance(labware_raw, list):
        raise SchemaError("labware must be a list")
    labware = []
    for i, item in enumerate(labware_raw):
        where = f"labware[{i}]"
        if not isinstance(item, dict):
            raise SchemaError(f"{where}: labware entry must be a mapping")
        _reject_unknown(item, _LABWARE_KEYS, where)
        labware.append(
            LabwareDecl(id=_require(item, "id", str, where), kind=_require(item, "kind", str, where))
        )

    steps_raw = raw.get("steps")
    if not isinstance(steps_raw, list) or not steps_raw:
        raise SchemaError("steps must be a nonempty list")
    steps = tuple(_parse_step(s, i) for i, s in enumerate(steps_raw))

    ids = [s.id for s in steps]
    dupes = {i for i in ids if ids.count(i) > 1}
    if dupes:
        raise SchemaError(f"duplicate step ids {sorted(dupes)}")

    return Workflow(id=wf_id, name=name, steps=steps, labware=tuple(labware))


def serialize_workflow(w: Workflow) -> str:
    """Inverse of parse_workflow up to structural equality."""
    doc = {
        "id": w.id,
        "name": w.name,
        "labware": [{"id": lw.id, "kind": lw.kind} for lw in w.labware],
        "steps": [
            {
                "id": s.id,
                "kind": s.kind,
                "depends_on": sorted(s.depends_on),
                "duration_s": s.duration_s,
                "requires": [{"class": r.klass, "qty": r.qty} for r in s.requires],
                **({"batch_key": s.batch_key} if s.batch_key is not None else {}),
                **({"params": dict(s.params)} if s.params else {}),
            }
            for s in w.steps
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False, allow_unicode=True)


def validate_workflow(w: Workflow) -> list[Violation]:
    """Empty list iff all workflow and step invariants hold."""
    violations: list[Violation] = []
    ids = [s.id for s in w.steps]
    seen: set[str] = set()
    for step_id in ids:
        if step_id in seen:
            violations.append(Violation("duplicate-id", step_id, "step id not unique"))
        seen.add(step_id)

    declared = set(ids)
    for s in w.steps:
        for dep in sorted(s.depends_on):
            if dep not in declared:
                violations.append(
                    Violation("dangling-dependency", s.id, f"depends on undeclared step {dep!r}")
                )
        if s.duration_s < 1:
            violations.append(Violation("duration", s.id, "duration_s must be >= 1"))
        personnel = [r for r in s.requires if r.klass == "personnel"]
        if s.kind == "manual" and not personnel:
            violations.append(
                Violation("requirement", s.id, "manual step needs a personnel requirement")
            )
        if s.kind in ("instrument", "model_call"):
            if not any(r.klass != "personnel" for r in s.requires):
                violations.append(
                    Violation(
                        "requirement", s.id, f"{s.kind} step needs a non-personnel requirement"
                    )
                )

    # Cycle detection over the subgraph of resolvable edges.
    edges = {s.id: [d for d in s.depends_on if d in declared] for s in w.steps}
    state: dict[str, int] = {}  # 0 visiting, 1 done

    def visit(node: str, stack: list[str]) -> list[str] | None:
        state[node] = 0
        stack.append(node)
        for dep in sorted(edges[node]):
            if state.get(dep) == 0:
                if dep in stack:
                    return stack[stack.index(dep):]
                continue  # inside an already-reported cycle region
            if dep not in state:
                cycle = visit(dep, stack)
                if cycle is not None:
                    return cycle
        stack.pop()
        state[node] = 1
        return None

    reported: set[frozenset[str]] = set()
    for step_id in ids:
        if step_id not in state:
            cycle = visit(step_id, [])
            if cycle:
                key = frozenset(cycle)
                if key not in reported:
                    reported.add(key)
                    violations.append(
                        Violation("cycle", cycle[0], "dependency cycle: " + " -> ".join(cycle))
                    )
    return violations


def ready_steps(w: Workflow, completed: set[str]) -> set[str]:
    """Steps not yet completed whose dependencies are all completed."""
    declared = w.step_ids()
    foreign = completed - declared
    if foreign:
        raise UnknownStep(f"unknown step ids in completed set: {sorted(foreign)}")
    return {
        s.id for s in w.steps if s.id not in completed and s.depends_on <= completed
    }
