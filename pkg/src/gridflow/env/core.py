"""Environment state, tool registry and execution semantics.

State is an immutable registry of named, versioned payloads. Write tools
return a new state; Read tools and failed calls return the input state
object itself.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Mapping

from gridflow.workflow import ArgumentError, ToolInvocation, ToolKind, ToolSchema, canonical_json


class GridEnvError(Exception):
    pass


class ClassificationError(GridEnvError):
    def __init__(self, tool_name: str, declared: ToolKind, observed: ToolKind):
        super().__init__(f"tool {tool_name!r} declared {declared.value} but behaves as {observed.value}")
        self.tool_name = tool_name


def _freeze(payload: Any) -> Any:
    # canonical round trip: value snapshot, no aliasing to caller data
    return json.loads(canonical_json(payload))


@dataclass(frozen=True)
class EnvironmentState:
    objects: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    version_counter: int = 0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", MappingProxyType(dict(self.objects)))

    def get(self, name: str) -> Any | None:
        entry = self.objects.get(name)
        return None if entry is None else _freeze(entry["data"])

    def version_of(self, name: str) -> int | None:
        entry = self.objects.get(name)
        return None if entry is None else entry["version"]

    def write(self, name: str, data: Any) -> "EnvironmentState":
        version = self.version_counter + 1
        objects = dict(self.objects)
        objects[name] = MappingProxyType({"version": version, "data": _freeze(data)})
        return EnvironmentState(objects, version, self.rng_seed)

    def snapshot(self) -> bytes:
        body = {
            "objects": {k: {"version": v["version"], "data": v["data"]} for k, v in self.objects.items()},
            "version_counter": self.version_counter,
            "rng_seed": self.rng_seed,
        }
        return canonical_json(body).encode("utf-8")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EnvironmentState):
            return NotImplemented
        return self.snapshot() == other.snapshot()

    def __hash__(self) -> int:
        return hash(self.snapshot())


def reset(seed: int = 0) -> EnvironmentState:
    return EnvironmentState({}, 0, seed)


@dataclass(frozen=True)
class Observation:
    text: str
    structured: Any = None
    is_error: bool = False

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("observation text must be non-empty")

    def digest(self) -> str:
        return payload_digest(self.structured)


def payload_digest(payload: Any) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GridFixture:
    feeders: Mapping[str, Mapping[str, Any]]
    seed: int = 0

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "GridFixture":
        if not isinstance(data.get("feeders"), Mapping) or not data["feeders"]:
            raise ValueError("fixture needs a non-empty 'feeders' object")
        return cls(dict(data["feeders"]), int(data.get("seed", 0)))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "GridFixture":
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(json.load(fh))

    def to_mapping(self) -> dict[str, Any]:
        return {"feeders": _freeze(self.feeders), "seed": self.seed}

    def digest(self) -> str:
        return payload_digest(self.to_mapping())


@dataclass(frozen=True)
class ToolContext:
    fixture: GridFixture
    strict: bool = False
    output_dir: Path | None = None

    def sandboxed_path(self, filename: str) -> Path | None:
        """Resolve ``filename`` inside the output sandbox; None when exports
        are in-memory only. Raises ValueError for paths escaping it."""
        if self.output_dir is None:
            if Path(filename).is_absolute() or ".." in Path(filename).parts:
                raise ValueError(f"path {filename!r} escapes the export sandbox")
            return None
        root = Path(self.output_dir).resolve()
        target = (root / filename).resolve()
        if root != target and root not in target.parents:
            raise ValueError(f"path {filename!r} escapes the export sandbox")
        return target


ToolImpl = Callable[[EnvironmentState, Mapping[str, Any], ToolContext], "tuple[EnvironmentState, Observation]"]


class ToolFailure(Exception):
    """Raised inside a tool implementation to produce an error observation."""


@dataclass(frozen=True)
class ToolRegistry:
    schemas: Mapping[str, ToolSchema]
    implementations: Mapping[str, ToolImpl]

    def __post_init__(self) -> None:
        object.__setattr__(self, "schemas", MappingProxyType(dict(self.schemas)))
        object.__setattr__(self, "implementations", MappingProxyType(dict(self.implementations)))
        if set(self.schemas) != set(self.implementations):
            raise ValueError("every schema needs exactly one implementation")
        for name, schema in self.schemas.items():
            if schema.name != name:
                raise ValueError(f"schema keyed {name!r} is named {schema.name!r}")

    def __contains__(self, name: object) -> bool:
        return name in self.schemas

    def __len__(self) -> int:
        return len(self.schemas)

    def names(self) -> list[str]:
        return sorted(self.schemas)

    def write_tools(self) -> frozenset[str]:
        return frozenset(n for n, s in self.schemas.items() if s.is_write)


def execute_tool(state: EnvironmentState, invocation: ToolInvocation, registry: ToolRegistry,
                 ctx: ToolContext) -> tuple[EnvironmentState, Observation]:
    schema = registry.schemas.get(invocation.tool_name)
    if schema is None:
        return state, Observation(f"Error: unknown tool {invocation.tool_name!r}.", None, True)
    try:
        args = schema.coerce(invocation.arguments)
    except ArgumentError as exc:
        return state, Observation(f"Error: {exc}", None, True)
    for spec in schema.args:
        if spec.name not in args and spec.default is not None:
            args[spec.name] = spec.default
    try:
        new_state, obs = registry.implementations[schema.name](state, args, ctx)
    except ToolFailure as exc:
        return state, Observation(f"Error: {schema.name}: {exc}", None, True)
    if obs.is_error:
        return state, obs
    if not schema.is_write and new_state is not state:
        raise GridEnvError(f"Read tool {schema.name!r} returned a modified state")
    return new_state, obs


class GridEnvironment:
    """One episode's environment: registry + fixture + current state."""

    def __init__(self, registry: ToolRegistry, fixture: GridFixture, strict: bool = False,
                 output_dir: str | os.PathLike | None = None):
        self.registry = registry
        self.ctx = ToolContext(fixture, strict, Path(output_dir) if output_dir else None)
        self.state = reset(fixture.seed)

    @property
    def fixture(self) -> GridFixture:
        return self.ctx.fixture

    def reset(self, seed: int | None = None) -> EnvironmentState:
        self.state = reset(self.fixture.seed if seed is None else seed)
        return self.state

    def execute(self, invocation: ToolInvocation) -> Observation:
        self.state, obs = execute_tool(self.state, invocation, self.registry, self.ctx)
        return obs

    def snapshot(self) -> bytes:
        return self.state.snapshot()

    def fork(self) -> "GridEnvironment":
        twin = GridEnvironment(self.registry, self.fixture, self.ctx.strict, self.ctx.output_dir)
        twin.state = self.state
        return twin


def classify_tools(registry: ToolRegistry, probe_suite: Mapping[str, Mapping[str, Any]],
                   probe_states: list[EnvironmentState], ctx: ToolContext) -> dict[str, ToolKind]:
    """Observe each tool on the probe states: Write iff any snapshot changes.

    Raises ClassificationError when the observation contradicts the schema.
    """
    kinds: dict[str, ToolKind] = {}
    for name in registry.names():
        args = probe_suite.get(name, {})
        mutated = False
        schema = registry.schemas[name]
        call_args = schema.coerce(args)
        for spec in schema.args:
            if spec.name not in call_args and spec.default is not None:
                call_args[spec.name] = spec.default
        for state in probe_states:
            before = state.snapshot()
            try:
                # bypass execute_tool's Read guard: we want the raw behavior
                after, _ = registry.implementations[name](state, call_args, ctx)
            except ToolFailure:
                after = state
            if after.snapshot() != before or state.snapshot() != before:
                mutated = True
                break
        observed = ToolKind.WRITE if mutated else ToolKind.READ
        declared = registry.schemas[name].kind
        if observed is not declared:
            raise ClassificationError(name, declared, observed)
        kinds[name] = observed
    return kinds
