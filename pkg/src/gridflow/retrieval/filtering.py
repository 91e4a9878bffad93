from __future__ import annotations

import json
import re
from typing import Sequence

FILTER_TEMPLATE = """\
Select the best out of these candidate workflows to keep as in-context exemplars.

USER QUERY: {query}

CANDIDATES (JSON): {candidates}

Each candidate has:
- "query"
- "workflow" (tool name + arguments)

Keep a candidate if its workflow helps solve the user query.
Exclude only if clearly unrelated.

Return ONLY a JSON list of indices to keep (no duplicates).
Example: [0, 2, 5]"""

_BRACKETED = re.compile(r"\[([^\[\]]*)\]")
_INT = re.compile(r"^[+-]?\d+$")


class ParseFailure(ValueError):
    pass


def serialize_candidates(candidates: Sequence) -> str:
    items = [{"query": c.query_text, "workflow": c.workflow.to_records()} for c in candidates]
    return json.dumps(items, ensure_ascii=False)


def render_filter_prompt(query: str, candidates: Sequence) -> str:
    if not candidates:
        raise ValueError("filter prompt needs at least one candidate")
    # str.format would choke on braces inside the JSON payload
    return FILTER_TEMPLATE.replace("{query}", query, 1).replace(
        "{candidates}", serialize_candidates(candidates), 1
    )


def parse_filter_output(text: str, candidate_count: int) -> set[int]:
    """First bracketed integer list in ``text``, deduplicated and clipped to
    ``range(candidate_count)``."""
    if candidate_count < 1:
        raise ValueError("candidate_count must be positive")
    for match in _BRACKETED.finditer(text):
        body = match.group(1).strip()
        parts = [p.strip() for p in body.split(",")] if body else []
        if not all(_INT.match(p) for p in parts):
            continue
        keep = {int(p) for p in parts if 0 <= int(p) < candidate_count}
        if not keep:
            raise ParseFailure(f"no valid candidate index in {match.group(0)!r}")
        return keep
    raise ParseFailure("no bracketed integer list in filter output")
