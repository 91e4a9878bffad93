"""Offline acceptance suite. Each test prints one PASS/FAIL line; the lines
are repeated in the terminal summary under "acceptance criteria"."""

from __future__ import annotations

import itertools
import json
import time

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import ACCEPTANCE_LINES
from dagtools import MapRules
from gridflow.agent import ScriptedPolicy, run_episode
from gridflow.cli import main
from gridflow.env import GridEnvironment, probe_suite
from gridflow.evaluation import (
    BenchConfig,
    load_suite,
    oracle_policy_factory,
    pass_at_k,
    pass_at_k_exact,
    precision_check,
    run_benchmark,
    scripted_policy_factory,
)
from gridflow.fixtures import PLANTED_QUERY, data_path
from gridflow.gateway import MockEmbedder
from gridflow.retrieval import KeepAllFilter, RetrievalMode, adaptive_cutoff, select_exemplars
from gridflow.workflow import ExecutionTrace, ToolInvocation, WorkflowDag, all_linearizations, trace_to_dag
from oracles import brute_force_cutoff, random_descending, two_piece_profile

# pinned tolerances
C1_PROFILES, C1_N_RANGE, C1_SECONDS = 1000, (4, 200), 5.0
C2_PROFILES = 200
C3_N_MAX, C3_MC_SAMPLES, C3_MC_TRIPLES, C3_MC_TOL = 20, 10**6, 20, 0.01
C4_MAX_NODES = 6
C5_SCENARIOS = 12
C7_RELEVANT, C7_MAX_CANDIDATES, C7_TOPK, C7_TOPK_MIN_MISSES = 10, 15, 3, 7
C8_QUERIES, C8_TRIALS, C8_SECONDS = 30, 3, 60.0


def verdict(criterion: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_c1_cutoff_matches_brute_force():
    rng = np.random.default_rng(1)
    profiles = [random_descending(rng, int(rng.integers(C1_N_RANGE[0], C1_N_RANGE[1] + 1)))
                for _ in range(C1_PROFILES)]
    adaptive_cutoff(profiles[0])  # exclude one-time kernel compilation from the timing
    start = time.perf_counter()
    ours = [adaptive_cutoff(y) for y in profiles]
    elapsed = time.perf_counter() - start
    expected = [brute_force_cutoff(y) for y in profiles]
    agree = sum(a == b for a, b in zip(ours, expected))
    verdict("C1 cutoff-oracle equivalence", agree == C1_PROFILES and elapsed < C1_SECONDS,
            f"{agree}/{C1_PROFILES} exact agreements, {elapsed:.2f}s (limit {C1_SECONDS}s)")


def test_c2_two_piece_recovery():
    rng = np.random.default_rng(2)
    hits = 0
    for _ in range(C2_PROFILES):
        n = int(rng.integers(4, 201))
        m_star = int(rng.integers(2, n - 1))
        hits += adaptive_cutoff(two_piece_profile(rng, n, m_star)) == m_star
    verdict("C2 two-piece recovery", hits == C2_PROFILES, f"{hits}/{C2_PROFILES} breakpoints recovered")


def test_c3_pass_at_k():
    from fractions import Fraction

    closed = all(
        pass_at_k_exact(n, s, 1) == Fraction(s, n) and pass_at_k_exact(n, s, n) == (1 if s >= 1 else 0)
        for n in range(1, C3_N_MAX + 1) for s in range(n + 1)
    )
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(C3_MC_TRIPLES):
        n = int(rng.integers(1, C3_N_MAX + 1))
        s, k = int(rng.integers(0, n + 1)), int(rng.integers(1, n + 1))
        # successes among k draws without replacement from n trials with s successes
        draws = rng.hypergeometric(s, n - s, k, size=C3_MC_SAMPLES) if s < n else np.full(C3_MC_SAMPLES, k)
        worst = max(worst, abs(float(np.mean(draws > 0)) - pass_at_k(n, s, k)))
    verdict("C3 pass@k closed forms", closed and worst <= C3_MC_TOL,
            f"closed forms exact for n<={C3_N_MAX}: {closed}; worst Monte-Carlo gap {worst:.4f} "
            f"(tol {C3_MC_TOL}, {C3_MC_SAMPLES} samples x {C3_MC_TRIPLES} triples)")


def test_c4_dag_evaluator(registry, rules):
    load = ToolInvocation("load_network", {"feeder": "glover"})
    a = ToolInvocation("attach_load_profile", {"source": "ami"})
    b = ToolInvocation("attach_solar_profile", {"source": "irradiance"})
    hc = ToolInvocation("run_hosting_capacity", {"norm": "l2"})
    diamond = MapRules({"attach_load_profile": {"load_network"}, "attach_solar_profile": {"load_network"},
                        "run_hosting_capacity": {"attach_load_profile", "attach_solar_profile"}})
    names = {"load_network", "attach_load_profile", "attach_solar_profile", "run_hosting_capacity"}
    expert = trace_to_dag(ExecutionTrace((load, a, b, hc)), names, diamond)
    both = all(precision_check(trace_to_dag(ExecutionTrace(t), names, diamond), expert, registry.schemas)
               for t in [(load, a, b, hc), (load, b, a, hc)])

    rng = np.random.default_rng(4)
    checked = mismatches = 0
    for n in range(1, C4_MAX_NODES + 1):
        for _ in range(6):
            edges = {(i, j) for j in range(n) for i in range(j) if rng.random() < 0.4}
            vertices = tuple(ToolInvocation(f"t{i}", {}) for i in range(n))
            dag = WorkflowDag(vertices, frozenset(edges))
            table = MapRules({f"t{j}": {f"t{i}" for i, jj in edges if jj == j} for j in range(n)})
            tools = {v.tool_name for v in vertices}
            valid = set(all_linearizations(dag))
            for perm in itertools.permutations(range(n)):
                run_trace = ExecutionTrace(tuple(vertices[i] for i in perm))
                run_dag = trace_to_dag(run_trace, tools, table)
                checked += 1
                mismatches += precision_check(run_dag, dag) != (perm in valid)
    verdict("C4 DAG evaluator", both and mismatches == 0,
            f"diamond orders equivalent: {both}; {checked} permutations on <= {C4_MAX_NODES}-node DAGs, "
            f"{mismatches} disagreements with the linearization oracle")


class _SnapshotProbe:
    """Wraps a policy and records the environment snapshot before each call."""

    def __init__(self, policy, env):
        self.policy, self.env, self.snaps = policy, env, []

    def __call__(self, ctx):
        self.snaps.append(self.env.snapshot())
        return self.policy(ctx)


def test_c5_supervisor_efficacy(registry, rules, grid_fixture, schemas):
    suite = load_suite(data_path("silent_suite.json"))
    scripts = json.loads(data_path("silent_scripts.json").read_text())
    factory = scripted_policy_factory(scripts)
    on, _ = run_benchmark(suite, [], rules, grid_fixture, factory, registry=registry,
                          config=BenchConfig(trials=3, supervisor=True))
    off, _ = run_benchmark(suite, [], rules, grid_fixture, factory, registry=registry,
                           config=BenchConfig(trials=3, supervisor=False))

    identical = 0
    for item in suite:
        env = GridEnvironment(registry, grid_fixture)
        probe = _SnapshotProbe(ScriptedPolicy.from_mapping(scripts[item.query_id]), env)
        result = run_episode(item.query, [], schemas, probe, env, rules)
        blocked = [i for i, step in enumerate(result.transcript) if step["decision"] == "block"]
        if blocked and all(probe.snaps[i] == probe.snaps[i + 1] for i in blocked):
            identical += 1
    ok = (len(suite) == C5_SCENARIOS and on.aggregate["pass@1"] == 1.0 and off.aggregate["pass@1"] == 0.0
          and identical == C5_SCENARIOS)
    verdict("C5 supervisor efficacy", ok,
            f"pass@1 {off.aggregate['pass@1']:.0%} without supervisor, {on.aggregate['pass@1']:.0%} with; "
            f"blocked calls left state byte-identical in {identical}/{C5_SCENARIOS} scenarios")


def test_c6_one_shot(registry, rules, grid_fixture, schemas):
    probes = probe_suite(grid_fixture)
    failures = []
    for tool in sorted(rules.dom):
        call = {"tool": tool, "args": probes.get(tool, {})}
        for episode in range(2):  # the advisory ledger resets per episode
            env = GridEnvironment(registry, grid_fixture)
            result = run_episode("q", [], schemas, ScriptedPolicy([call, {"final": "ok"}]), env, rules)
            decisions = [s["decision"] for s in result.transcript]
            if decisions != ["block", "execute", "final"]:
                failures.append(f"{tool}#{episode}: {decisions}")
    verdict("C6 one-shot advisory", not failures,
            f"{len(rules.dom)} tools x 2 episodes blocked exactly once then executed"
            + (f"; failures {failures}" if failures else ""))


def test_c7_planted_retrieval(archive, planted_overrides):
    embedder = MockEmbedder(overrides=planted_overrides)
    planted = {r.id for r in archive[:C7_RELEVANT]}
    adaptive = select_exemplars(PLANTED_QUERY, archive, embedder, KeepAllFilter())
    topk = select_exemplars(PLANTED_QUERY, archive, embedder, KeepAllFilter(), mode=RetrievalMode("topk", C7_TOPK))
    got = {r.id for r in adaptive.candidates}
    misses = len(planted - {r.id for r in topk.candidates})
    ok = planted <= got and len(got) <= C7_MAX_CANDIDATES and misses >= C7_TOPK_MIN_MISSES
    verdict("C7 planted-archive retrieval", ok,
            f"adaptive kept {len(got & planted)}/{C7_RELEVANT} planted among {len(got)} candidates "
            f"(limit {C7_MAX_CANDIDATES}); top-{C7_TOPK} missed {misses} (need >= {C7_TOPK_MIN_MISSES})")


def test_c8_oracle_self_consistency(registry, rules, grid_fixture, suite, archive):
    start = time.perf_counter()
    report, _ = run_benchmark(suite, archive, rules, grid_fixture, oracle_policy_factory, registry=registry,
                              embedder=MockEmbedder(), filter_policy=KeepAllFilter(),
                              config=BenchConfig(trials=C8_TRIALS))
    elapsed = time.perf_counter() - start
    agg = report.aggregate
    ok = (len(suite) == C8_QUERIES and agg["pass@1"] == 1.0 and agg["pass@3"] == 1.0
          and agg["precision"] == 1.0 and agg["tokens_per_pass1"] is not None and elapsed < C8_SECONDS)
    verdict("C8 oracle self-consistency", ok,
            f"pass@1={agg['pass@1']} pass@3={agg['pass@3']} precision={agg['precision']} "
            f"tokens/pass@1={agg['tokens_per_pass1']:.0f} over {agg['runs']} runs in {elapsed:.1f}s "
            f"(limit {C8_SECONDS}s)")


def test_c9_determinism(tmp_path):
    runner = CliRunner()
    outputs = []
    for i in range(2):
        report = tmp_path / f"run{i}" / "report.json"
        res = runner.invoke(main, ["bench", "--trials", "3", "--report", str(report), "--jobs", "4"])
        assert res.exit_code == 0, res.output
        data = json.loads(report.read_text())
        data.pop("metadata")
        outputs.append((json.dumps(data, sort_keys=True), report.with_suffix(".txt").read_bytes()))
    verdict("C9 determinism", outputs[0] == outputs[1],
            "two full benchmark runs produced byte-identical reports (metadata excluded)")


@pytest.mark.skip(reason="C10 optional online smoke: needs a live chat-completions endpoint")
def test_c10_online_smoke():
    pass
