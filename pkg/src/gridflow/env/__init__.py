from .core import (
    ClassificationError,
    EnvironmentState,
    GridEnvError,
    GridEnvironment,
    GridFixture,
    Observation,
    ToolContext,
    ToolFailure,
    ToolRegistry,
    classify_tools,
    execute_tool,
    payload_digest,
    reset,
)
from .tools import (
    DISTRACTOR_NAMES,
    FUNCTIONAL_NAMES,
    keyed_reals,
    probe_states,
    probe_suite,
    reference_toolset,
)

__all__ = [
    "ClassificationError",
    "DISTRACTOR_NAMES",
    "EnvironmentState",
    "FUNCTIONAL_NAMES",
    "GridEnvError",
    "GridEnvironment",
    "GridFixture",
    "Observation",
    "ToolContext",
    "ToolFailure",
    "ToolRegistry",
    "classify_tools",
    "execute_tool",
    "keyed_reals",
    "payload_digest",
    "probe_states",
    "probe_suite",
    "reference_toolset",
    "reset",
]
