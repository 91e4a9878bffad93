"""Closed-loop episode runner.

Each iteration samples an action from the policy. A final text answer ends
the episode; a tool call goes through the supervisor, which either blocks
it (the advisory becomes the observation, state untouched) or lets the
environment execute it.
"""

from __future__ import annotations

import json
import logging
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence, Union

from gridflow.env import GridEnvironment
from gridflow.gateway import (
    ChatMessage,
    ChatRequest,
    ChatResponse,
    GatewayError,
    TokenUsage,
    ToolCallPayload,
    mock_tokens,
)
from gridflow.retrieval import ExemplarRecord
from gridflow.supervisor import RuleLibrary, SupervisorState, decide, record_execution
from gridflow.workflow import (
    ExecutionTrace,
    ToolInvocation,
    ToolSchema,
    canonical_json,
    coerce_value,
)

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 30
OBSERVATION_LIMIT = 4000
TRUNCATION_MARKER = "\n[... observation truncated at {limit} characters ...]"
ADVISORY_PREFIX = "DECISION REQUIRED:"


@dataclass(frozen=True)
class ToolCall:
    invocation: ToolInvocation
    call_id: str = "call_0"

    @property
    def tool_name(self) -> str:
        return self.invocation.tool_name


@dataclass(frozen=True)
class FinalResponse:
    text: str


@dataclass(frozen=True)
class MalformedAction:
    """A tool-call payload whose arguments could not be decoded."""

    tool_name: str
    raw_arguments: str
    message: str
    call_id: str = "call_0"


AgentAction = Union[ToolCall, FinalResponse, MalformedAction]


def action_record(action: AgentAction) -> dict[str, Any]:
    if isinstance(action, ToolCall):
        return {"type": "tool_call", "tool": action.tool_name, "args": dict(action.invocation.arguments)}
    if isinstance(action, FinalResponse):
        return {"type": "final", "text": action.text}
    return {"type": "malformed_tool_call", "tool": action.tool_name, "raw_arguments": action.raw_arguments}


@dataclass(frozen=True)
class HistoryEntry:
    action: AgentAction
    observation: str


@dataclass(frozen=True)
class InteractionHistory:
    entries: tuple[HistoryEntry, ...] = ()

    def append(self, action: AgentAction, observation: str) -> "InteractionHistory":
        return InteractionHistory(self.entries + (HistoryEntry(action, observation),))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i: int) -> HistoryEntry:
        return self.entries[i]


@dataclass(frozen=True)
class PolicyContext:
    query: str
    exemplars: tuple[ExemplarRecord, ...]
    history: InteractionHistory
    schemas: tuple[ToolSchema, ...]


class Policy(Protocol):
    def __call__(self, ctx: PolicyContext) -> ChatResponse: ...


@dataclass
class EpisodeResult:
    trace: ExecutionTrace
    final_response: str
    steps_taken: int
    blocked_count: int
    token_usage: TokenUsage
    terminated_by: str  # "FinalResponse" | "BudgetExhausted"
    history: InteractionHistory = field(default_factory=InteractionHistory)
    transcript: list[dict[str, Any]] = field(default_factory=list)
    query: str = ""
    exemplar_ids: list[str] = field(default_factory=list)

    def transcript_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "exemplar_ids": list(self.exemplar_ids),
            "steps": self.transcript,
            "final_response": self.final_response,
            "terminated_by": self.terminated_by,
        }


class EpisodeError(Exception):
    """Policy transport failed for good; ``partial`` holds the run so far."""

    def __init__(self, message: str, partial: EpisodeResult):
        super().__init__(message)
        self.partial = partial


def write_transcript(result: EpisodeResult, path: str | os.PathLike) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.transcript_dict(), fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


# -- parsing & prompting -----------------------------------------------------


def parse_action(raw: ChatResponse, schemas: Mapping[str, ToolSchema]) -> AgentAction:
    """Map a chat response to an action, coercing argument values to the
    schema's types where that is lossless. Unknown tools pass through."""
    if raw.tool_call is None:
        return FinalResponse(raw.text or "")
    call: ToolCallPayload = raw.tool_call
    args = call.arguments
    if isinstance(args, str):
        try:
            args = json.loads(args) if args.strip() else {}
        except json.JSONDecodeError as exc:
            return MalformedAction(call.name, call.arguments, f"arguments are not valid JSON: {exc.msg}", call.id)
    if not isinstance(args, Mapping):
        return MalformedAction(call.name, json.dumps(args), "arguments must be a JSON object", call.id)
    schema = schemas.get(call.name)
    coerced = dict(args)
    if schema is not None:
        for key, value in args.items():
            spec = schema.arg(key)
            if spec is None:
                continue
            try:
                coerced[key] = coerce_value(value, spec)
            except (TypeError, ValueError):
                pass  # left as-is; the environment reports the type error
    return ToolCall(ToolInvocation(call.name, coerced), call.id)


def _signature(schema: ToolSchema) -> str:
    parts = []
    for spec in schema.args:
        text = f"{spec.name}: {spec.type}"
        if spec.choices:
            text += " one of " + "|".join(spec.choices)
        if not spec.required:
            text += " (optional" + (f", default {spec.default!r}" if spec.default is not None else "") + ")"
        parts.append(text)
    return f"{schema.name}({', '.join(parts)}) [{schema.kind.value}]"


def render_system_prompt(query: str, exemplars: Sequence[ExemplarRecord], schemas: Sequence[ToolSchema]) -> str:
    lines = [
        "You are a distribution-grid analysis agent. Solve the user's query by calling the tools below,",
        "one call at a time. When the analysis is complete, reply in plain text with the answer.",
        "",
        "## Tools",
    ]
    for schema in schemas:
        lines.append(f"- {_signature(schema)}: {schema.description}")
    if exemplars:
        lines += ["", "## Solved examples (most similar first)"]
        for i, rec in enumerate(exemplars, 1):
            lines.append(f"### Example {i}")
            lines.append(f"Query: {rec.query_text}")
            lines.append("Workflow:")
            for j, step in enumerate(rec.workflow, 1):
                lines.append(f"{j}. {step.tool_name} {canonical_json(dict(step.arguments))}")
    lines += ["", "## User query", query]
    return "\n".join(lines)


def truncate_observation(text: str, limit: int = OBSERVATION_LIMIT) -> str:
    if len(text) <= limit:
        return text
    return text[:limit] + TRUNCATION_MARKER.format(limit=limit)


# -- policies ----------------------------------------------------------------


def _history_messages(history: InteractionHistory) -> list[ChatMessage]:
    msgs = []
    for k, entry in enumerate(history):
        action = entry.action
        call_id = f"call_{k}"
        if isinstance(action, ToolCall):
            payload = ToolCallPayload(action.tool_name, dict(action.invocation.arguments), call_id)
        elif isinstance(action, MalformedAction):
            payload = ToolCallPayload(action.tool_name, action.raw_arguments, call_id)
        else:
            msgs.append(ChatMessage("assistant", action.text))
            continue
        msgs.append(ChatMessage("assistant", "", tool_call=payload))
        msgs.append(ChatMessage("tool", entry.observation, tool_call_id=call_id))
    return msgs


def build_chat_request(ctx: PolicyContext, temperature: float | None = None,
                       seed: int | None = None) -> ChatRequest:
    messages = [
        ChatMessage("system", render_system_prompt(ctx.query, ctx.exemplars, ctx.schemas)),
        ChatMessage("user", ctx.query),
        *_history_messages(ctx.history),
    ]
    return ChatRequest(tuple(messages), tuple(s.to_openai() for s in ctx.schemas), temperature, seed)


class ChatPolicy:
    """Policy backed by a chat backend (remote model or scripted mock)."""

    def __init__(self, backend, temperature: float | None = None, seed: int | None = None):
        self.backend = backend
        self.temperature = temperature
        self.seed = seed

    def __call__(self, ctx: PolicyContext) -> ChatResponse:
        return self.backend.chat_complete(build_chat_request(ctx, self.temperature, self.seed))


def _step_response(step: Mapping[str, Any] | None) -> tuple[str | None, ToolCallPayload | None]:
    if step is None:
        return "script exhausted", None
    if "final" in step:
        return str(step["final"]), None
    return None, ToolCallPayload(str(step["tool"]), step.get("args", {}))


class ScriptedPolicy:
    """Deterministic policy replaying a script.

    ``steps`` are emitted in order. When an observation is a supervisor
    advisory for tool T, the corrective branch ``on_advisory[T]`` (if any,
    used once) is emitted followed by a retry of the blocked call; without
    a branch the blocked call is retried directly. The next action is a
    pure function of the history, so the policy holds no episode state.
    """

    def __init__(self, steps: Sequence[Mapping[str, Any]],
                 on_advisory: Mapping[str, Sequence[Mapping[str, Any]]] | None = None):
        self.steps = [dict(s) for s in steps]
        self.on_advisory = {k: [dict(s) for s in v] for k, v in (on_advisory or {}).items()}
        for step in self.steps + [s for v in self.on_advisory.values() for s in v]:
            if "final" not in step and "tool" not in step:
                raise ValueError(f"script step needs 'tool' or 'final': {step!r}")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ScriptedPolicy":
        return cls(data.get("steps", []), data.get("on_advisory"))

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ScriptedPolicy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(json.load(fh))

    @classmethod
    def replay(cls, trace: ExecutionTrace, final: str = "Done.") -> "ScriptedPolicy":
        return cls([s.to_record() for s in trace] + [{"final": final}])

    def next_step(self, history: InteractionHistory) -> Mapping[str, Any] | None:
        queue = deque(self.steps)
        used: set[str] = set()
        for entry in history:
            item = queue.popleft() if queue else None
            action = entry.action
            if item is not None and isinstance(action, ToolCall) and entry.observation.startswith(ADVISORY_PREFIX):
                branch = []
                if action.tool_name in self.on_advisory and action.tool_name not in used:
                    used.add(action.tool_name)
                    branch = self.on_advisory[action.tool_name]
                queue.extendleft(reversed(branch + [item]))
        return queue[0] if queue else None

    def __call__(self, ctx: PolicyContext) -> ChatResponse:
        text, call = _step_response(self.next_step(ctx.history))
        prompt = "\n".join([render_system_prompt(ctx.query, ctx.exemplars, ctx.schemas)]
                           + [canonical_json(action_record(e.action)) + "\n" + e.observation for e in ctx.history])
        completion = text if call is None else canonical_json({"name": call.name, "arguments": call.arguments})
        return ChatResponse(text=text, tool_call=call,
                            usage=TokenUsage(mock_tokens(prompt), mock_tokens(completion)))


# -- the loop ----------------------------------------------------------------


def run_episode(query: str, exemplars: Sequence[ExemplarRecord], schemas: Sequence[ToolSchema],
                policy: Policy, env: GridEnvironment, rules: RuleLibrary | None = None,
                budget: int = DEFAULT_BUDGET, strict_supervisor: bool = False,
                observation_limit: int = OBSERVATION_LIMIT,
                initial_usage: TokenUsage = TokenUsage()) -> EpisodeResult:
    """Run one episode. ``rules=None`` disables supervision."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    schemas = tuple(schemas)
    by_name = {s.name: s for s in schemas}
    exemplars = tuple(exemplars)
    result = EpisodeResult(ExecutionTrace(), "", 0, 0, initial_usage, "BudgetExhausted",
                           query=query, exemplar_ids=[r.id for r in exemplars])
    sup_state = SupervisorState()

    while result.steps_taken < budget:
        ctx = PolicyContext(query, exemplars, result.history, schemas)
        try:
            raw = policy(ctx)
        except GatewayError as exc:
            raise EpisodeError(f"policy failed at step {result.steps_taken + 1}: {exc}", result) from exc
        result.steps_taken += 1
        result.token_usage = result.token_usage + raw.usage
        tokens = {"prompt": raw.usage.prompt_tokens, "completion": raw.usage.completion_tokens}
        action = parse_action(raw, by_name)

        if isinstance(action, FinalResponse):
            result.final_response = action.text
            result.terminated_by = "FinalResponse"
            result.transcript.append({"action": action_record(action), "decision": "final",
                                      "observation": "", "tokens": tokens})
            return result

        if isinstance(action, MalformedAction):
            observation, decision = f"Error: tool call to {action.tool_name!r} rejected: {action.message}", "invalid"
        else:
            verdict = None
            if rules is not None:
                verdict, sup_state = decide(rules, sup_state, action.invocation, strict_supervisor)
            if verdict is not None and verdict.blocked:
                observation, decision = verdict.advisory, "block"
                result.blocked_count += 1
            else:
                obs = env.execute(action.invocation)
                observation, decision = obs.text, ("error" if obs.is_error else "execute")
                if not obs.is_error:
                    result.trace = result.trace.append(action.invocation)
                    sup_state = record_execution(sup_state, action.tool_name)
                logger.debug("step %d %s -> %s", result.steps_taken, action.tool_name, observation)

        shown = truncate_observation(observation, observation_limit)
        result.history = result.history.append(action, shown)
        result.transcript.append({"action": action_record(action), "decision": decision,
                                  "observation": shown, "tokens": tokens})

    result.terminated_by = "BudgetExhausted"
    return result
