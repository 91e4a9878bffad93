"""Tool schemas, invocations, execution traces and workflow dependency DAGs.

A workflow is the sequence of tool invocations an agent actually executed.
Converting it to a DAG (edges from the prerequisite rule library) lets two
traces that differ only in the order of independent calls compare equal.
"""

from __future__ import annotations

import enum
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Iterable, Iterator, Mapping, Protocol, Sequence

ARG_TYPES = ("string", "integer", "real", "boolean", "list-of-real", "timestamp")

REAL_ATOL = 1e-9
MAX_EQUIVALENCE_VERTICES = 64


class WorkflowError(Exception):
    """Base class for workflow model errors."""


class VertexMismatch(WorkflowError):
    """A trace and a DAG do not contain the same multiset of invocations."""


class UnknownTool(WorkflowError):
    def __init__(self, index: int, tool_name: str):
        super().__init__(f"step {index}: unknown tool {tool_name!r}")
        self.index = index
        self.tool_name = tool_name


class WorkflowTooLarge(WorkflowError):
    pass


class ArgumentError(WorkflowError):
    pass


class ToolKind(str, enum.Enum):
    READ = "read"
    WRITE = "write"


@dataclass(frozen=True)
class ArgSpec:
    name: str
    type: str
    required: bool = True
    default: Any = None
    choices: tuple[str, ...] | None = None
    description: str = ""

    def __post_init__(self) -> None:
        if self.type not in ARG_TYPES:
            raise ValueError(f"argument {self.name!r}: unknown type tag {self.type!r}")
        if self.choices is not None:
            object.__setattr__(self, "choices", tuple(self.choices))


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str
    args: tuple[ArgSpec, ...] = ()
    kind: ToolKind = ToolKind.READ
    tags: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "args", tuple(self.args))
        object.__setattr__(self, "kind", ToolKind(self.kind))
        object.__setattr__(self, "tags", frozenset(self.tags))
        names = [a.name for a in self.args]
        dupes = sorted(n for n, c in Counter(names).items() if c > 1)
        if dupes:
            raise ValueError(f"tool {self.name!r}: duplicate argument names {dupes}")

    def arg(self, name: str) -> ArgSpec | None:
        for spec in self.args:
            if spec.name == name:
                return spec
        return None

    @property
    def is_write(self) -> bool:
        return self.kind is ToolKind.WRITE

    def coerce(self, arguments: Mapping[str, Any]) -> dict[str, Any]:
        """Validate ``arguments`` and coerce values to the declared type tags.

        Only lossless conversions are applied ("3" -> 3 for integers, 2 -> 2.0
        for reals, ...). Raises ArgumentError listing every problem found.
        """
        problems = []
        out: dict[str, Any] = {}
        for key, value in arguments.items():
            spec = self.arg(key)
            if spec is None:
                problems.append(f"unexpected argument {key!r}")
                continue
            try:
                out[key] = coerce_value(value, spec)
            except (TypeError, ValueError) as exc:
                problems.append(f"argument {key!r}: {exc}")
        for spec in self.args:
            if spec.required and spec.name not in arguments:
                problems.append(f"missing required argument {spec.name!r}")
        if problems:
            raise ArgumentError(f"{self.name}: " + "; ".join(problems))
        return out

    def to_openai(self) -> dict[str, Any]:
        """Function-calling schema in the chat-completions ``tools`` format."""
        props = {}
        for spec in self.args:
            props[spec.name] = _json_schema_for(spec)
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": props,
                    "required": [s.name for s in self.args if s.required],
                },
            },
        }


def _json_schema_for(spec: ArgSpec) -> dict[str, Any]:
    base: dict[str, Any]
    if spec.type == "integer":
        base = {"type": "integer"}
    elif spec.type == "real":
        base = {"type": "number"}
    elif spec.type == "boolean":
        base = {"type": "boolean"}
    elif spec.type == "list-of-real":
        base = {"type": "array", "items": {"type": "number"}}
    elif spec.type == "timestamp":
        base = {"type": "string", "format": "date-time"}
    else:
        base = {"type": "string"}
    if spec.choices:
        base["enum"] = list(spec.choices)
    if spec.description:
        base["description"] = spec.description
    return base


def _as_real(value: Any) -> float:
    if isinstance(value, bool):
        raise TypeError(f"expected real, got boolean {value!r}")
    if isinstance(value, (int, float)):
        out = float(value)
    elif isinstance(value, str):
        out = float(value.strip())
    else:
        raise TypeError(f"expected real, got {type(value).__name__}")
    if not math.isfinite(out):
        raise ValueError(f"non-finite real {value!r}")
    return out


def coerce_value(value: Any, spec: ArgSpec) -> Any:
    kind = spec.type
    if kind == "string":
        if not isinstance(value, str):
            raise TypeError(f"expected string, got {type(value).__name__}")
        if spec.choices is not None:
            folded = value.strip().casefold()
            for choice in spec.choices:
                if choice.casefold() == folded:
                    return choice
            raise ValueError(f"{value!r} not in {list(spec.choices)}")
        return value
    if kind == "integer":
        if isinstance(value, bool):
            raise TypeError("expected integer, got boolean")
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, str):
            text = value.strip()
            try:
                return int(text)
            except ValueError:
                as_float = float(text)
                if as_float.is_integer():
                    return int(as_float)
        raise ValueError(f"cannot losslessly convert {value!r} to integer")
    if kind == "real":
        return _as_real(value)
    if kind == "boolean":
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.strip().lower() in ("true", "false"):
            return value.strip().lower() == "true"
        if isinstance(value, int) and value in (0, 1):
            return bool(value)
        raise TypeError(f"expected boolean, got {value!r}")
    if kind == "list-of-real":
        if isinstance(value, str):
            value = json.loads(value)
        if not isinstance(value, (list, tuple)):
            raise TypeError(f"expected list of reals, got {type(value).__name__}")
        return [_as_real(v) for v in value]
    if kind == "timestamp":
        if not isinstance(value, str):
            raise TypeError(f"expected ISO timestamp string, got {type(value).__name__}")
        return datetime.fromisoformat(value.strip()).isoformat(timespec="minutes")
    raise ValueError(f"unknown type tag {kind!r}")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True, eq=False)
class ToolInvocation:
    tool_name: str
    arguments: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "arguments", dict(self.arguments))

    def key(self) -> str:
        return canonical_json([self.tool_name, self.arguments])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ToolInvocation):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.arguments.items())
        return f"{self.tool_name}({args})"

    def to_record(self) -> dict[str, Any]:
        return {"tool": self.tool_name, "args": dict(self.arguments)}

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "ToolInvocation":
        if not isinstance(record, Mapping) or "tool" not in record:
            raise ValueError(f"invocation record needs a 'tool' field: {record!r}")
        args = record.get("args", {}) or {}
        if not isinstance(args, Mapping):
            raise ValueError(f"'args' must be an object: {record!r}")
        return cls(str(record["tool"]), args)


@dataclass(frozen=True)
class ExecutionTrace:
    steps: tuple[ToolInvocation, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self) -> Iterator[ToolInvocation]:
        return iter(self.steps)

    def __getitem__(self, i: int) -> ToolInvocation:
        return self.steps[i]

    def append(self, step: ToolInvocation) -> "ExecutionTrace":
        return ExecutionTrace(self.steps + (step,))

    def tool_names(self) -> list[str]:
        return [s.tool_name for s in self.steps]

    def to_records(self) -> list[dict[str, Any]]:
        return [s.to_record() for s in self.steps]

    @classmethod
    def from_records(cls, records: Iterable[Mapping[str, Any]]) -> "ExecutionTrace":
        return cls(tuple(ToolInvocation.from_record(r) for r in records))


@dataclass(frozen=True)
class WorkflowDag:
    vertices: tuple[ToolInvocation, ...] = ()
    edges: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", tuple(self.vertices))
        edges = frozenset((int(i), int(j)) for i, j in self.edges)
        n = len(self.vertices)
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) references a missing vertex")
        object.__setattr__(self, "edges", edges)

    def successors(self) -> list[set[int]]:
        out: list[set[int]] = [set() for _ in self.vertices]
        for i, j in self.edges:
            out[i].add(j)
        return out

    def predecessors(self) -> list[set[int]]:
        out: list[set[int]] = [set() for _ in self.vertices]
        for i, j in self.edges:
            out[j].add(i)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "vertices": [v.to_record() for v in self.vertices],
            "edges": [[i, j] for i, j in sorted(self.edges)],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "WorkflowDag":
        vertices = tuple(ToolInvocation.from_record(v) for v in data.get("vertices", []))
        edges = frozenset((int(e[0]), int(e[1])) for e in data.get("edges", []))
        return cls(vertices, edges)


# -- serialization -----------------------------------------------------------


def dumps_trace(trace: ExecutionTrace) -> str:
    """One JSON object per line: ``{"tool": ..., "args": {...}}``."""
    return "".join(canonical_json(r) + "\n" for r in trace.to_records())


def loads_trace(text: str) -> ExecutionTrace:
    records = [json.loads(line) for line in text.splitlines() if line.strip()]
    return ExecutionTrace.from_records(records)


def dumps_dag(dag: WorkflowDag) -> str:
    return canonical_json(dag.to_dict())


def loads_dag(text: str) -> WorkflowDag:
    return WorkflowDag.from_dict(json.loads(text))


# -- graph predicates --------------------------------------------------------


def validate_acyclic(dag: WorkflowDag) -> bool:
    """True iff the edge relation admits a topological order."""
    indeg = [0] * len(dag.vertices)
    succ = dag.successors()
    for _, j in dag.edges:
        indeg[j] += 1
    ready = [i for i, d in enumerate(indeg) if d == 0]
    seen = 0
    while ready:
        i = ready.pop()
        seen += 1
        for j in succ[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
    return seen == len(dag.vertices)


def is_linearization(trace: ExecutionTrace, dag: WorkflowDag) -> bool:
    """True iff executing ``trace`` in order respects every edge of ``dag``.

    With duplicate invocations the trace positions may be matched to DAG
    vertices in several ways; the trace is accepted if any matching works.
    """
    if Counter(s.key() for s in trace) != Counter(v.key() for v in dag.vertices):
        raise VertexMismatch("trace and DAG contain different invocations")

    preds = dag.predecessors()
    by_key: dict[str, list[int]] = defaultdict(list)
    for idx, v in enumerate(dag.vertices):
        by_key[v.key()].append(idx)
    keys = [s.key() for s in trace]
    done = [False] * len(dag.vertices)

    def place(pos: int) -> bool:
        if pos == len(keys):
            return True
        tried = set()
        for v in by_key[keys[pos]]:
            if done[v] or not all(done[p] for p in preds[v]):
                continue
            # interchangeable vertices (same preds and succs) need only one try
            sig = (frozenset(preds[v]), frozenset(j for i, j in dag.edges if i == v))
            if sig in tried:
                continue
            tried.add(sig)
            done[v] = True
            if place(pos + 1):
                return True
            done[v] = False
        return False

    return place(0)


class RequirementSource(Protocol):
    def required(self, tool_name: str) -> frozenset[str]: ...


def trace_to_dag(
    trace: ExecutionTrace, registry: Any, rules: RequirementSource
) -> WorkflowDag:
    """Build the dependency DAG of ``trace``.

    Step j gets an edge from step i < j when tool_i is one of tool_j's
    prerequisites and step i is the latest earlier execution of that tool.
    ``registry`` only needs to support ``name in registry``.
    """
    last_seen: dict[str, int] = {}
    edges = set()
    for j, step in enumerate(trace):
        if step.tool_name not in registry:
            raise UnknownTool(j, step.tool_name)
        for prereq in rules.required(step.tool_name):
            i = last_seen.get(prereq)
            if i is not None:
                edges.add((i, j))
        last_seen[step.tool_name] = j
    return WorkflowDag(trace.steps, frozenset(edges))


# -- argument normalization & equivalence ------------------------------------


def normalize_arguments(
    arguments: Mapping[str, Any], schema: ToolSchema | None = None
) -> dict[str, Any]:
    """Canonical form used for comparison: strings trimmed, enumerated
    options case-folded, schema defaults filled in for absent optionals."""
    out: dict[str, Any] = {}
    for key, value in arguments.items():
        spec = schema.arg(key) if schema is not None else None
        if isinstance(value, str):
            value = value.strip()
            if spec is not None and spec.choices is not None:
                value = value.casefold()
        out[key] = value
    if schema is not None:
        for spec in schema.args:
            if spec.name not in out and not spec.required and spec.default is not None:
                default = spec.default
                if isinstance(default, str) and spec.choices is not None:
                    default = default.strip().casefold()
                out[spec.name] = default
    return out


def _values_compatible(a: Any, b: Any) -> bool:
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return abs(float(a) - float(b)) <= REAL_ATOL
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(_values_compatible(x, y) for x, y in zip(a, b))
    if isinstance(a, Mapping) and isinstance(b, Mapping):
        return a.keys() == b.keys() and all(_values_compatible(a[k], b[k]) for k in a)
    return a == b


def arguments_compatible(
    a: Mapping[str, Any], b: Mapping[str, Any], schema: ToolSchema | None = None
) -> bool:
    na = normalize_arguments(a, schema)
    nb = normalize_arguments(b, schema)
    if na.keys() != nb.keys():
        return False
    return all(_values_compatible(na[k], nb[k]) for k in na)


def invocations_compatible(
    a: ToolInvocation, b: ToolInvocation, schemas: Mapping[str, ToolSchema] | None = None
) -> bool:
    if a.tool_name != b.tool_name:
        return False
    schema = schemas.get(a.tool_name) if schemas is not None else None
    return arguments_compatible(a.arguments, b.arguments, schema)


def dag_equivalent(
    a: WorkflowDag, b: WorkflowDag, schemas: Mapping[str, ToolSchema] | None = None
) -> bool:
    """Labeled-graph isomorphism between two workflow DAGs.

    Vertex labels are (tool name, normalized arguments); reals match within
    ``REAL_ATOL``. Exact backtracking search, guarded at 64 vertices.
    """
    n = len(a.vertices)
    if n != len(b.vertices) or len(a.edges) != len(b.edges):
        return False
    if n > MAX_EQUIVALENCE_VERTICES:
        raise WorkflowTooLarge(f"{n} vertices exceeds the {MAX_EQUIVALENCE_VERTICES}-vertex limit")
    if Counter(v.tool_name for v in a.vertices) != Counter(v.tool_name for v in b.vertices):
        return False

    a_succ, a_pred = a.successors(), a.predecessors()
    b_succ, b_pred = b.successors(), b.predecessors()
    candidates: list[list[int]] = []
    for i, va in enumerate(a.vertices):
        cands = [
            j
            for j, vb in enumerate(b.vertices)
            if len(a_succ[i]) == len(b_succ[j])
            and len(a_pred[i]) == len(b_pred[j])
            and invocations_compatible(va, vb, schemas)
        ]
        if not cands:
            return False
        candidates.append(cands)

    order = sorted(range(n), key=lambda i: (len(candidates[i]), i))
    mapping: dict[int, int] = {}
    used = [False] * n

    def consistent(i: int, j: int) -> bool:
        for u, w in mapping.items():
            if ((u, i) in a.edges) != ((w, j) in b.edges):
                return False
            if ((i, u) in a.edges) != ((j, w) in b.edges):
                return False
        return True

    def extend(depth: int) -> bool:
        if depth == n:
            return True
        i = order[depth]
        for j in candidates[i]:
            if used[j] or not consistent(i, j):
                continue
            mapping[i] = j
            used[j] = True
            if extend(depth + 1):
                return True
            del mapping[i]
            used[j] = False
        return False

    return extend(0)


def all_linearizations(dag: WorkflowDag) -> Iterator[tuple[int, ...]]:
    """Every topological order of ``dag`` as a tuple of vertex indices."""
    preds = dag.predecessors()
    n = len(dag.vertices)
    order: list[int] = []
    placed = [False] * n

    def walk() -> Iterator[tuple[int, ...]]:
        if len(order) == n:
            yield tuple(order)
            return
        for v in range(n):
            if not placed[v] and all(placed[p] for p in preds[v]):
                placed[v] = True
                order.append(v)
                yield from walk()
                order.pop()
                placed[v] = False

    return walk()


def trace_of(dag: WorkflowDag, order: Sequence[int]) -> ExecutionTrace:
    return ExecutionTrace(tuple(dag.vertices[i] for i in order))
