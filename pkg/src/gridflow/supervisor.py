"""Just-in-time prerequisite supervision.

Before a proposed tool call executes, the supervisor checks the call's
prerequisite Write tools against the set of tools already executed this
episode. A violating call is blocked once per tool name with an advisory;
a repeat is let through.
"""

from __future__ import annotations

import json
import logging
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from gridflow.workflow import ToolInvocation, ToolSchema

logger = logging.getLogger(__name__)

ADVISORY_TEMPLATE = """\
DECISION REQUIRED: {violation_msg}

Carefully consider the user's query. You must now make ONE of these choices:
1. If the prerequisite IS needed for this query: Call the suggested tool(s) first
2. If the prerequisite is NOT needed: Retry your original call to {tool_name} now

Make a tool call. Do not respond with text."""


class RuleError(ValueError):
    def __init__(self, problems: Sequence[str]):
        super().__init__("\n".join(problems))
        self.problems = list(problems)


@dataclass(frozen=True)
class PrerequisiteRule:
    tool_name: str
    required: frozenset[str]
    advisory: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "required", frozenset(self.required))
        if not self.advisory.strip():
            raise RuleError([f"rule for {self.tool_name!r}: empty advisory"])

    def to_record(self) -> dict[str, Any]:
        return {"tool": self.tool_name, "requires": sorted(self.required), "advisory": self.advisory}


@dataclass(frozen=True)
class RuleLibrary:
    rules: Mapping[str, PrerequisiteRule] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "rules", dict(self.rules))

    @property
    def dom(self) -> frozenset[str]:
        return frozenset(self.rules)

    def __contains__(self, tool_name: str) -> bool:
        return tool_name in self.rules

    def __len__(self) -> int:
        return len(self.rules)

    def required(self, tool_name: str) -> frozenset[str]:
        rule = self.rules.get(tool_name)
        return rule.required if rule is not None else frozenset()

    def to_json(self) -> str:
        return json.dumps([self.rules[k].to_record() for k in sorted(self.rules)], indent=2)


def _schemas_of(registry) -> Mapping[str, ToolSchema]:
    return getattr(registry, "schemas", registry)


def parse_rules(data: Any, registry, source: str = "<rules>") -> RuleLibrary:
    """Validate decoded rule records against the registry's schemas."""
    schemas = _schemas_of(registry)
    if not isinstance(data, list):
        raise RuleError([f"{source}: expected a JSON array of rules"])
    problems: list[str] = []
    rules: dict[str, PrerequisiteRule] = {}
    for pos, item in enumerate(data):
        where = f"{source}[{pos}]"
        if not isinstance(item, Mapping) or not isinstance(item.get("tool"), str):
            problems.append(f"{where}: rule needs a string 'tool'")
            continue
        name = item["tool"]
        requires = item.get("requires", [])
        advisory = item.get("advisory", "")
        if not isinstance(requires, list) or not all(isinstance(r, str) for r in requires):
            problems.append(f"{where}: 'requires' must be a list of tool names")
            continue
        if name not in schemas:
            problems.append(f"{where}: unknown tool {name!r}")
        if name in rules:
            problems.append(f"{where}: duplicate rule for {name!r}")
        for req in requires:
            if req not in schemas:
                problems.append(f"{where}: unknown prerequisite {req!r}")
            elif not schemas[req].is_write:
                problems.append(f"{where}: prerequisite {req!r} is a Read tool")
        if not isinstance(advisory, str) or not advisory.strip():
            problems.append(f"{where}: empty advisory")
            continue
        if name not in rules:
            rules[name] = PrerequisiteRule(name, frozenset(requires), advisory)
    if problems:
        raise RuleError(problems)
    return RuleLibrary(rules)


def load_rules(source: str | os.PathLike, registry) -> RuleLibrary:
    with open(source, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text) if text.strip() else []
    except json.JSONDecodeError as exc:
        raise RuleError([f"{source}:{exc.lineno}: {exc.msg}"]) from None
    return parse_rules(data, registry, str(source))


@dataclass(frozen=True)
class SupervisorState:
    executed: frozenset[str] = frozenset()
    advised: frozenset[str] = frozenset()
    history: tuple[str, ...] = ()  # executed names in order; used by strict mode


@dataclass(frozen=True)
class Decision:
    action: str  # "block" | "execute"
    advisory: str = ""
    missing: tuple[str, ...] = ()

    @property
    def blocked(self) -> bool:
        return self.action == "block"

    @classmethod
    def execute(cls) -> "Decision":
        return cls("execute")

    @classmethod
    def block(cls, advisory: str, missing: Iterable[str]) -> "Decision":
        return cls("block", advisory, tuple(sorted(missing)))


def _last_index(history: Sequence[str], name: str) -> int:
    for i in range(len(history) - 1, -1, -1):
        if history[i] == name:
            return i
    return -1


def missing_prerequisites(library: RuleLibrary, state: SupervisorState, tool_name: str,
                          strict: bool = False) -> frozenset[str]:
    """Required tools not satisfied by the execution history.

    In strict mode a prerequisite only counts if none of its own
    prerequisites ran again after it (its output would be stale).
    """
    required = library.required(tool_name)
    missing = required - state.executed
    if strict:
        for req in required & state.executed:
            at = _last_index(state.history, req)
            if any(_last_index(state.history, up) > at for up in library.required(req)):
                missing |= {req}
    return frozenset(missing)


def check_violation(library: RuleLibrary, state: SupervisorState, action: ToolInvocation,
                    strict: bool = False) -> bool:
    if action.tool_name not in library:
        return False
    return bool(missing_prerequisites(library, state, action.tool_name, strict))


def render_advisory(tool_name: str, missing: Iterable[str], rule: PrerequisiteRule) -> str:
    names = sorted(missing)
    if not names:
        raise ValueError("advisory needs at least one missing prerequisite")
    listed = ", ".join(names)
    msg = rule.advisory.replace("{tool}", tool_name)
    if "{missing}" in msg:
        msg = msg.replace("{missing}", listed)
    else:
        msg = f"{msg} Missing prerequisite(s): {listed}."
    return ADVISORY_TEMPLATE.replace("{violation_msg}", msg).replace("{tool_name}", tool_name)


def decide(library: RuleLibrary, state: SupervisorState, action: ToolInvocation,
           strict: bool = False) -> tuple[Decision, SupervisorState]:
    name = action.tool_name
    if name not in library:
        return Decision.execute(), state
    missing = missing_prerequisites(library, state, name, strict)
    if not missing:
        return Decision.execute(), state
    if name in state.advised:
        logger.warning("one-shot advisory for %s already used; executing despite missing %s",
                       name, sorted(missing))
        return Decision.execute(), state
    advisory = render_advisory(name, missing, library.rules[name])
    new_state = SupervisorState(state.executed, state.advised | {name}, state.history)
    return Decision.block(advisory, missing), new_state


def record_execution(state: SupervisorState, tool_name: str) -> SupervisorState:
    return SupervisorState(state.executed | {tool_name}, state.advised, state.history + (tool_name,))


def mine_rules(workflows: Iterable[Sequence[ToolInvocation]], registry,
               min_support: float = 1.0, min_count: int = 2) -> list[dict[str, Any]]:
    """Draft prerequisite rules from repeated predecessor patterns.

    A Write tool becomes a proposed prerequisite of tool t when it precedes
    t in at least ``min_support`` of t's occurrences (and t occurs at least
    ``min_count`` times). Output is for human review; never auto-loaded.
    """
    schemas = _schemas_of(registry)
    occurrences: Counter[str] = Counter()
    preceded: dict[str, Counter[str]] = defaultdict(Counter)
    for steps in workflows:
        seen_writes: set[str] = set()
        for step in steps:
            name = step.tool_name
            if name in schemas:
                occurrences[name] += 1
                preceded[name].update(seen_writes - {name})
                if schemas[name].is_write:
                    seen_writes.add(name)
    drafts = []
    for name in sorted(occurrences):
        count = occurrences[name]
        if count < min_count:
            continue
        reqs = sorted(w for w, c in preceded[name].items() if c / count >= min_support)
        if reqs:
            drafts.append({
                "tool": name,
                "requires": reqs,
                "advisory": f"DRAFT (mined from {count} exemplar calls): {name} needs {{missing}} to run first.",
            })
    return drafts
