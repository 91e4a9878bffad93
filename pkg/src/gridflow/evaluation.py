"""Benchmark metrics: pass@k, DAG-based precision, tokens per pass@1, and
the multi-trial runner that produces them."""

from __future__ import annotations

import json
import logging
import math
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from typing import Any, Callable, Mapping, Sequence

from gridflow.agent import EpisodeError, EpisodeResult, Policy, run_episode
from gridflow.env import GridEnvironment, GridFixture, ToolRegistry
from gridflow.gateway import TokenUsage
from gridflow.retrieval import EmbeddingCache, ExemplarRecord, RetrievalMode, select_exemplars
from gridflow.supervisor import RuleLibrary, SupervisorState, check_violation, record_execution
from gridflow.workflow import (
    ExecutionTrace,
    ToolSchema,
    WorkflowDag,
    dag_equivalent,
    invocations_compatible,
    trace_to_dag,
)

logger = logging.getLogger(__name__)

DIFFICULTIES = ("easy", "medium", "hard")


class FixtureMismatch(ValueError):
    pass


class SuiteError(ValueError):
    def __init__(self, problems: Sequence[str]):
        super().__init__("\n".join(problems))
        self.problems = list(problems)


# -- closed-form metrics -----------------------------------------------------


def pass_at_k_exact(n: int, s: int, k: int) -> Fraction:
    if not 0 <= s <= n:
        raise ValueError(f"need 0 <= s <= n, got s={s}, n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    return 1 - Fraction(math.comb(n - s, k), math.comb(n, k))


def pass_at_k(n: int, s: int, k: int) -> float:
    """Probability that at least one of k runs drawn from n (s successful) succeeds."""
    return float(pass_at_k_exact(n, s, k))


def tokens_per_pass1(total_tokens: int, n: int, pass1: float) -> float | None:
    """Average tokens per successful run; None (undefined) when pass@1 is 0."""
    if n < 1:
        raise ValueError("n must be positive")
    if pass1 <= 0:
        return None
    return total_tokens / (n * pass1)


# -- ground truth & success --------------------------------------------------


@dataclass(frozen=True)
class BenchQuery:
    query_id: str
    query: str
    expert_workflow: ExecutionTrace
    difficulty: str = "easy"
    analysis_class: str = ""


@dataclass(frozen=True)
class GroundTruth:
    query_id: str
    expert_trace: ExecutionTrace
    expected_result_digest: tuple[str, ...]
    fixture_digest: str


@dataclass(frozen=True)
class SuccessPolicy:
    mode: str = "result"  # result | coverage
    extra_writes: str = "digest"  # coverage mode: digest | allow | forbid

    def __post_init__(self) -> None:
        if self.mode not in ("result", "coverage"):
            raise ValueError(f"unknown success mode {self.mode!r}")
        if self.extra_writes not in ("digest", "allow", "forbid"):
            raise ValueError(f"unknown extra-write policy {self.extra_writes!r}")


def _is_result_tool(schema: ToolSchema | None) -> bool:
    return schema is not None and (not schema.is_write or "export" in schema.tags)


def output_digests(trace: ExecutionTrace, registry: ToolRegistry, fixture: GridFixture) -> list[str]:
    """Replay ``trace`` on a fresh environment; digests of every result payload
    (Read tools and exports) in execution order."""
    env = GridEnvironment(registry, fixture)
    digests = []
    for step in trace:
        obs = env.execute(step)
        if not obs.is_error and obs.structured is not None and _is_result_tool(registry.schemas.get(step.tool_name)):
            digests.append(obs.digest())
    return digests


def build_ground_truth(item: BenchQuery, registry: ToolRegistry, fixture: GridFixture,
                       rules: RuleLibrary) -> GroundTruth:
    state = SupervisorState()
    for i, step in enumerate(item.expert_workflow):
        if check_violation(rules, state, step):
            raise SuiteError([f"{item.query_id}: expert step {i} ({step.tool_name}) violates a prerequisite rule"])
        state = record_execution(state, step.tool_name)
    digests = tuple(sorted(output_digests(item.expert_workflow, registry, fixture)))
    if not digests:
        raise SuiteError([f"{item.query_id}: expert workflow produces no result payload"])
    return GroundTruth(item.query_id, item.expert_workflow, digests, fixture.digest())


def _results_match(run_trace: ExecutionTrace, truth: GroundTruth, registry, fixture) -> bool:
    have = Counter(output_digests(run_trace, registry, fixture))
    need = Counter(truth.expected_result_digest)
    return all(have[d] >= c for d, c in need.items())


def _coverage_embedding(run: ExecutionTrace, expert: ExecutionTrace, expert_dag: WorkflowDag,
                        schemas: Mapping[str, ToolSchema]) -> list[int] | None:
    """Injective map expert step -> run position preserving labels and expert edge order."""
    preds = expert_dag.predecessors()
    n = len(expert)
    mapping: list[int] = [-1] * n
    used: set[int] = set()

    def place(i: int) -> bool:
        if i == n:
            return True
        for pos, step in enumerate(run):
            if pos in used or not invocations_compatible(expert[i], step, schemas):
                continue
            if any(mapping[p] >= pos for p in preds[i]):
                continue
            mapping[i] = pos
            used.add(pos)
            if place(i + 1):
                return True
            used.discard(pos)
        mapping[i] = -1
        return False

    return mapping if place(0) else None


def success_check(run: EpisodeResult | ExecutionTrace, truth: GroundTruth, fixture: GridFixture,
                  registry: ToolRegistry, rules: RuleLibrary,
                  policy: SuccessPolicy = SuccessPolicy()) -> bool:
    if truth.fixture_digest != fixture.digest():
        raise FixtureMismatch(f"{truth.query_id}: ground truth was built on another fixture")
    trace = run.trace if isinstance(run, EpisodeResult) else run
    if policy.mode == "result":
        return _results_match(trace, truth, registry, fixture)

    expert_dag = trace_to_dag(truth.expert_trace, registry, rules)
    embedding = _coverage_embedding(trace, truth.expert_trace, expert_dag, registry.schemas)
    if embedding is None:
        return False
    covered = set(embedding)
    extra_writes = [s for pos, s in enumerate(trace)
                    if pos not in covered and registry.schemas.get(s.tool_name) is not None
                    and registry.schemas[s.tool_name].is_write]
    if not extra_writes or policy.extra_writes == "allow":
        return True
    if policy.extra_writes == "forbid":
        return False
    return _results_match(trace, truth, registry, fixture)


def precision_check(run_dag: WorkflowDag, expert_dag: WorkflowDag,
                    schemas: Mapping[str, ToolSchema] | None = None) -> bool:
    return dag_equivalent(run_dag, expert_dag, schemas)


# -- suite i/o ---------------------------------------------------------------


def parse_suite(data: Any, source: str = "<suite>") -> list[BenchQuery]:
    if not isinstance(data, list):
        raise SuiteError([f"{source}: expected a JSON array of queries"])
    problems, items, seen = [], [], set()
    for pos, entry in enumerate(data):
        where = f"{source}[{pos}]"
        if not isinstance(entry, Mapping):
            problems.append(f"{where}: entry must be an object")
            continue
        missing = [k for k in ("query_id", "query", "expert_workflow", "difficulty") if k not in entry]
        if missing:
            problems.append(f"{where}: missing {', '.join(missing)}")
            continue
        if entry["difficulty"] not in DIFFICULTIES:
            problems.append(f"{where}: difficulty must be one of {DIFFICULTIES}")
        if not isinstance(entry["expert_workflow"], list) or not entry["expert_workflow"]:
            problems.append(f"{where}: expert_workflow must be a non-empty list")
            continue
        if entry["query_id"] in seen:
            problems.append(f"{where}: duplicate query_id {entry['query_id']!r}")
        seen.add(entry["query_id"])
        try:
            trace = ExecutionTrace.from_records(entry["expert_workflow"])
        except ValueError as exc:
            problems.append(f"{where}: {exc}")
            continue
        items.append(BenchQuery(str(entry["query_id"]), str(entry["query"]), trace,
                                entry["difficulty"], str(entry.get("analysis_class", ""))))
    if problems:
        raise SuiteError(problems)
    return items


def load_suite(path: str | os.PathLike) -> list[BenchQuery]:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SuiteError([f"{path}:{exc.lineno}: {exc.msg}"]) from None
    return parse_suite(data, str(path))


def suite_to_json(items: Sequence[BenchQuery]) -> str:
    return json.dumps([
        {"query_id": q.query_id, "query": q.query, "difficulty": q.difficulty,
         "analysis_class": q.analysis_class, "expert_workflow": q.expert_workflow.to_records()}
        for q in items
    ], indent=2, ensure_ascii=False)


# -- benchmark runner --------------------------------------------------------


@dataclass
class RunRecord:
    query_id: str
    trial_id: int
    result: EpisodeResult | None
    success: bool
    precise: bool
    trace_dag: WorkflowDag | None
    tokens: int
    error: str | None = None


@dataclass
class BenchConfig:
    trials: int = 3
    budget: int = 30
    supervisor: bool = True
    retrieval: RetrievalMode = field(default_factory=RetrievalMode)
    success: SuccessPolicy = field(default_factory=SuccessPolicy)
    strict_supervisor: bool = False
    jobs: int = 1


@dataclass
class MetricsReport:
    per_query: list[dict[str, Any]]
    aggregate: dict[str, Any]
    settings: dict[str, Any]
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self, include_metadata: bool = True) -> dict[str, Any]:
        out = {"aggregate": self.aggregate, "per_query": self.per_query, "settings": self.settings}
        if include_metadata:
            out["metadata"] = self.metadata
        return out

    def to_json(self, include_metadata: bool = True) -> str:
        return json.dumps(self.to_dict(include_metadata), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        def fmt(v):
            if v is None:
                return "-"
            return f"{100 * v:.1f}%" if isinstance(v, float) and v <= 1.0 else f"{v:,.0f}"

        header = ("query", "tier", "n", "s", "P@1", "P@3", "Pr", "Tk/P@1")
        rows = [header]
        for q in self.per_query:
            tk = q["tokens_per_pass1"]
            rows.append((q["query_id"], q["difficulty"], str(q["n"]), str(q["s"]), fmt(q["pass@1"]),
                         fmt(q.get("pass@3")), fmt(q["precision"]), "undef" if tk is None else f"{tk:,.0f}"))
        agg = self.aggregate
        tk = agg["tokens_per_pass1"]
        rows.append(("ALL", "", str(agg["runs"]), str(agg["successes"]), fmt(agg["pass@1"]),
                     fmt(agg.get("pass@3")), fmt(agg["precision"]), "undef" if tk is None else f"{tk:,.0f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = []
        for idx, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(widths[i]) if i < 2 else cell.rjust(widths[i])
                                   for i, cell in enumerate(row)).rstrip())
            if idx == 0 or idx == len(rows) - 2:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


PolicyFactory = Callable[[BenchQuery, int], Policy]


def oracle_policy_factory(item: BenchQuery, trial: int) -> Policy:
    from gridflow.agent import ScriptedPolicy

    return ScriptedPolicy.replay(item.expert_workflow)


def scripted_policy_factory(scripts: Mapping[str, Mapping[str, Any]]) -> PolicyFactory:
    from gridflow.agent import ScriptedPolicy

    def make(item: BenchQuery, trial: int) -> Policy:
        if item.query_id not in scripts:
            raise KeyError(f"no script for query {item.query_id!r}")
        return ScriptedPolicy.from_mapping(scripts[item.query_id])

    return make


def _one_run(item: BenchQuery, trial: int, truth: GroundTruth, expert_dag: WorkflowDag,
             archive: Sequence[ExemplarRecord], rules: RuleLibrary, fixture: GridFixture,
             registry: ToolRegistry, make_policy: PolicyFactory, embedder, filter_policy,
             cache: EmbeddingCache | None, cfg: BenchConfig) -> RunRecord:
    schemas = [registry.schemas[n] for n in registry.names()]
    try:
        selection = select_exemplars(item.query, archive, embedder, filter_policy, cache, cfg.retrieval) \
            if archive else None
        exemplars = selection.records if selection else []
        usage = selection.usage if selection else TokenUsage()
        env = GridEnvironment(registry, fixture)
        result = run_episode(item.query, exemplars, schemas, make_policy(item, trial), env,
                             rules if cfg.supervisor else None, cfg.budget, cfg.strict_supervisor,
                             initial_usage=usage)
    except EpisodeError as exc:
        logger.warning("%s trial %d failed: %s", item.query_id, trial, exc)
        return RunRecord(item.query_id, trial, exc.partial, False, False, None,
                         exc.partial.token_usage.total, str(exc))
    except Exception as exc:  # any episode failure counts as an unsuccessful trial
        logger.warning("%s trial %d failed: %s", item.query_id, trial, exc)
        return RunRecord(item.query_id, trial, None, False, False, None, 0, f"{type(exc).__name__}: {exc}")
    dag = trace_to_dag(result.trace, registry, rules)
    success = success_check(result, truth, fixture, registry, rules, cfg.success)
    precise = precision_check(dag, expert_dag, registry.schemas)
    return RunRecord(item.query_id, trial, result, success, precise, dag, result.token_usage.total)


def run_benchmark(suite: Sequence[BenchQuery], archive: Sequence[ExemplarRecord], rules: RuleLibrary,
                  fixture: GridFixture, make_policy: PolicyFactory, *, registry: ToolRegistry,
                  embedder=None, filter_policy=None, cache: EmbeddingCache | None = None,
                  config: BenchConfig = BenchConfig()) -> tuple[MetricsReport, list[RunRecord]]:
    n = config.trials
    if n < 1:
        raise ValueError("trials must be at least 1")
    if archive and (embedder is None or filter_policy is None) and config.retrieval.kind != "none":
        raise ValueError("retrieval needs an embedder and a filter policy")
    truths = {q.query_id: build_ground_truth(q, registry, fixture, rules) for q in suite}
    expert_dags = {q.query_id: trace_to_dag(q.expert_workflow, registry, rules) for q in suite}
    if cache is None and embedder is not None:
        cache = EmbeddingCache(embedder.identity)

    jobs = [(q, t) for q in suite for t in range(1, n + 1)]

    def work(job):
        q, t = job
        return _one_run(q, t, truths[q.query_id], expert_dags[q.query_id], archive, rules, fixture,
                        registry, make_policy, embedder, filter_policy, cache, config)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            records = list(pool.map(work, jobs))
    else:
        records = [work(j) for j in jobs]
    return aggregate(suite, records, n, config), records


def aggregate(suite: Sequence[BenchQuery], records: Sequence[RunRecord], n: int,
              config: BenchConfig) -> MetricsReport:
    by_query: dict[str, list[RunRecord]] = {q.query_id: [] for q in suite}
    for rec in records:
        by_query[rec.query_id].append(rec)
    per_query = []
    for q in suite:
        runs = by_query[q.query_id]
        s = sum(r.success for r in runs)
        tokens = sum(r.tokens for r in runs)
        p1 = pass_at_k(n, s, 1)
        row = {
            "query_id": q.query_id,
            "difficulty": q.difficulty,
            "n": n,
            "s": s,
            "pass@1": p1,
            "pass@3": pass_at_k(n, s, 3) if n >= 3 else None,
            "precision": sum(r.precise for r in runs) / n,
            "tokens_total": tokens,
            "tokens_per_pass1": tokens_per_pass1(tokens, n, p1),
            "failures": sorted({r.error for r in runs if r.error}),
        }
        per_query.append(row)
    total_runs = len(records)
    p1_all = sum(r["pass@1"] for r in per_query) / len(per_query) if per_query else 0.0
    aggregate_row = {
        "queries": len(per_query),
        "runs": total_runs,
        "successes": sum(r.success for r in records),
        "pass@1": p1_all,
        "pass@3": (sum(r["pass@3"] for r in per_query) / len(per_query)) if n >= 3 and per_query else None,
        "precision": sum(r.precise for r in records) / total_runs if total_runs else 0.0,
        "tokens_total": sum(r.tokens for r in records),
        "tokens_per_pass1": tokens_per_pass1(sum(r.tokens for r in records), total_runs, p1_all)
        if total_runs else None,
        "errors": sum(1 for r in records if r.error),
    }
    settings = {
        "trials": n,
        "budget": config.budget,
        "supervisor": config.supervisor,
        "strict_supervisor": config.strict_supervisor,
        "retrieval": str(config.retrieval),
        "success_mode": config.success.mode,
        "extra_write_policy": config.success.extra_writes,
        "precision_averaging": "over all runs",
    }
    metadata = {"generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    return MetricsReport(per_query, aggregate_row, settings, metadata)
