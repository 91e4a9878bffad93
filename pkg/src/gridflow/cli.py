"""Command-line entry point: ``gridflow run | bench | validate | rules``."""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import sys
from pathlib import Path

import click

from gridflow.agent import ChatPolicy, EpisodeError, ScriptedPolicy, run_episode, write_transcript
from gridflow.config import ConfigError, EngineConfig, load_config
from gridflow.env import (
    ClassificationError,
    GridEnvironment,
    GridFixture,
    ToolContext,
    classify_tools,
    probe_states,
    probe_suite,
    reference_toolset,
)
from gridflow.evaluation import (
    BenchConfig,
    SuiteError,
    SuccessPolicy,
    load_suite,
    oracle_policy_factory,
    run_benchmark,
    scripted_policy_factory,
)
from gridflow.gateway import GatewayError, build_chat_backend, build_embedder
from gridflow.retrieval import (
    ArchiveError,
    EmbeddingCache,
    KeepAllFilter,
    RetrievalMode,
    load_archive,
    select_exemplars,
)
from gridflow.supervisor import RuleError, load_rules, mine_rules

EXIT_OK, EXIT_ERROR, EXIT_BUDGET = 0, 1, 2


def _fail(msg: str) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(EXIT_ERROR)


def config_option(func):
    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                  help="YAML engine config (defaults to the shipped data set).")
    @click.option("--archive", type=click.Path(dir_okay=False), default=None, help="Override the archive file.")
    @click.option("--rules", "rules_path", type=click.Path(dir_okay=False), default=None,
                  help="Override the rule file.")
    @click.option("--fixture", type=click.Path(dir_okay=False), default=None, help="Override the grid fixture.")
    @functools.wraps(func)
    def wrapper(config_path, archive, rules_path, fixture, **kw):
        try:
            cfg = load_config(config_path).with_overrides(
                archive=Path(archive) if archive else None,
                rules=Path(rules_path) if rules_path else None,
                fixture=Path(fixture) if fixture else None,
            ).check()
        except ConfigError as exc:
            _fail(str(exc))
        return func(cfg, **kw)

    return wrapper


def _apply_flags(cfg: EngineConfig, budget, retrieval, no_supervisor, output_dir) -> EngineConfig:
    try:
        mode = RetrievalMode.parse(retrieval) if retrieval else None
    except ValueError as exc:
        _fail(str(exc))
    cfg = cfg.with_overrides(budget=budget, retrieval=mode, output_dir=Path(output_dir) if output_dir else None,
                             supervisor=False if no_supervisor else None)
    try:
        return cfg.check()
    except ConfigError as exc:
        _fail(str(exc))


def _load_inputs(cfg: EngineConfig):
    registry = reference_toolset()
    try:
        rules = load_rules(cfg.rules, registry)
        archive = load_archive(cfg.archive)
        fixture = GridFixture.load(cfg.fixture)
    except (RuleError, ArchiveError, ValueError, OSError) as exc:
        _fail(str(exc))
    return registry, rules, archive, fixture


def _filter_policy(cfg: EngineConfig):
    # Offline default: a mock gateway keeps every candidate. A dedicated
    # filter gateway, or a remote main gateway, is asked for real.
    if cfg.filter_gateway is not None:
        return build_chat_backend(cfg.filter_gateway)
    if cfg.gateway.backend == "mock":
        return KeepAllFilter()
    return build_chat_backend(cfg.gateway)


def _cache(cfg: EngineConfig, embedder) -> EmbeddingCache:
    if cfg.embedding_cache and Path(cfg.embedding_cache).is_file():
        return EmbeddingCache.load(cfg.embedding_cache, embedder.identity)
    return EmbeddingCache(embedder.identity)


def _save_cache(cfg: EngineConfig, cache: EmbeddingCache) -> None:
    if cfg.embedding_cache:
        cache.save(cfg.embedding_cache)


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def main(verbose: int) -> None:
    """Workflow-guided grid analysis agent."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@config_option
@click.argument("query")
@click.option("--policy", default="chat", show_default=True, help="chat | scripted:<file>")
@click.option("--budget", type=int, default=None)
@click.option("--retrieval", default=None, help="adaptive | topk:<k> | none")
@click.option("--no-supervisor", is_flag=True)
@click.option("--output-dir", type=click.Path(file_okay=False), default=None)
@click.option("--transcript", type=click.Path(dir_okay=False), default=None,
              help="Transcript path (default: <output-dir>/run-<query digest>.json).")
def run(cfg: EngineConfig, query, policy, budget, retrieval, no_supervisor, output_dir, transcript):
    """Answer one QUERY; exit 0 on a final response, 2 on budget exhaustion."""
    cfg = _apply_flags(cfg, budget, retrieval, no_supervisor, output_dir)
    registry, rules, archive, fixture = _load_inputs(cfg)
    try:
        if policy == "chat":
            agent_policy = ChatPolicy(build_chat_backend(cfg.gateway), cfg.gateway.temperature, cfg.gateway.seed)
        elif policy.startswith("scripted:"):
            agent_policy = ScriptedPolicy.from_file(policy.split(":", 1)[1])
        else:
            _fail(f"unknown policy {policy!r} (chat | scripted:<file>)")
        embedder = build_embedder(cfg.gateway)
        cache = _cache(cfg, embedder)
        selection = select_exemplars(query, archive, embedder, _filter_policy(cfg), cache, cfg.retrieval)
        _save_cache(cfg, cache)
        env = GridEnvironment(registry, fixture, strict=cfg.strict_env, output_dir=cfg.output_dir / "files")
        schemas = [registry.schemas[n] for n in registry.names()]
        result = run_episode(query, selection.records, schemas, agent_policy, env,
                             rules if cfg.supervisor else None, cfg.budget, cfg.strict_supervisor,
                             initial_usage=selection.usage)
    except EpisodeError as exc:
        _write(exc.partial, cfg, query, transcript)
        _fail(str(exc))
    except (GatewayError, ArchiveError, OSError, ValueError, KeyError) as exc:
        _fail(f"{type(exc).__name__}: {exc}")
    path = _write(result, cfg, query, transcript)
    click.echo(result.final_response if result.terminated_by == "FinalResponse"
               else f"[budget of {cfg.budget} steps exhausted]")
    click.echo(f"transcript: {path}", err=True)
    sys.exit(EXIT_OK if result.terminated_by == "FinalResponse" else EXIT_BUDGET)


def _write(result, cfg: EngineConfig, query: str, transcript) -> Path:
    path = Path(transcript) if transcript else \
        cfg.output_dir / f"run-{hashlib.sha256(query.encode()).hexdigest()[:12]}.json"
    write_transcript(result, path)
    return path


@main.command()
@config_option
@click.option("--suite", "suite_path", type=click.Path(dir_okay=False), default=None,
              help="Benchmark suite JSON (default: shipped 30-query suite).")
@click.option("--trials", type=int, default=3, show_default=True)
@click.option("--report", type=click.Path(dir_okay=False), default="report.json", show_default=True)
@click.option("--policy", default="oracle", show_default=True, help="oracle | chat | scripted:<scripts.json>")
@click.option("--budget", type=int, default=None)
@click.option("--retrieval", default=None, help="adaptive | topk:<k> | none")
@click.option("--no-supervisor", is_flag=True)
@click.option("--success", "success_mode", type=click.Choice(["result", "coverage"]), default="result",
              show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
def bench(cfg: EngineConfig, suite_path, trials, report, policy, budget, retrieval, no_supervisor,
          success_mode, jobs):
    """Run every suite query TRIALS times and write JSON and text reports."""
    from gridflow.fixtures import data_path

    cfg = _apply_flags(cfg, budget, retrieval, no_supervisor, None)
    if trials < 1:
        _fail("--trials must be at least 1")
    try:
        suite = load_suite(suite_path or data_path("suite.json"))
    except SuiteError as exc:
        _fail("suite schema violations:\n  " + "\n  ".join(exc.problems))
    except OSError as exc:
        _fail(str(exc))
    registry, rules, archive, fixture = _load_inputs(cfg)

    if policy == "oracle":
        factory = oracle_policy_factory
    elif policy == "chat":
        backend = build_chat_backend(cfg.gateway)
        factory = lambda q, t: ChatPolicy(backend, cfg.gateway.temperature, cfg.gateway.seed)  # noqa: E731
    elif policy.startswith("scripted:"):
        try:
            with open(policy.split(":", 1)[1], encoding="utf-8") as fh:
                factory = scripted_policy_factory(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            _fail(f"cannot read scripts: {exc}")
    else:
        _fail(f"unknown policy {policy!r}")

    embedder = build_embedder(cfg.gateway)
    cache = _cache(cfg, embedder)
    bench_cfg = BenchConfig(trials=trials, budget=cfg.budget, supervisor=cfg.supervisor,
                            retrieval=cfg.retrieval, success=SuccessPolicy(success_mode),
                            strict_supervisor=cfg.strict_supervisor, jobs=jobs)
    try:
        result, records = run_benchmark(suite, archive, rules, fixture, factory, registry=registry,
                                        embedder=embedder, filter_policy=_filter_policy(cfg), cache=cache,
                                        config=bench_cfg)
    except SuiteError as exc:
        _fail("suite schema violations:\n  " + "\n  ".join(exc.problems))
    _save_cache(cfg, cache)
    report = Path(report)
    report.parent.mkdir(parents=True, exist_ok=True)
    report.write_text(result.to_json(), encoding="utf-8")
    text = result.to_text()
    report.with_suffix(".txt").write_text(text, encoding="utf-8")
    click.echo(text, nl=False)
    errors = [r for r in records if r.error]
    for r in errors:
        click.echo(f"trial {r.query_id}#{r.trial_id} did not complete: {r.error}", err=True)
    sys.exit(EXIT_ERROR if errors else EXIT_OK)


@main.command()
@config_option
def validate(cfg: EngineConfig):
    """Check rules, archive and tool classification; exit 0 iff all pass."""
    registry = reference_toolset()
    failures = 0
    try:
        load_rules(cfg.rules, registry)
        click.echo(f"ok    rules    {cfg.rules}")
    except RuleError as exc:
        failures += 1
        for p in exc.problems:
            click.echo(f"FAIL  rules    {p}")
    try:
        n = len(load_archive(cfg.archive))
        click.echo(f"ok    archive  {cfg.archive} ({n} records)")
    except (ArchiveError, OSError) as exc:
        failures += 1
        click.echo(f"FAIL  archive  {exc}")
    try:
        fixture = GridFixture.load(cfg.fixture)
        ctx = ToolContext(fixture)
        kinds = classify_tools(registry, probe_suite(fixture), probe_states(registry, ctx), ctx)
        click.echo(f"ok    tools    {len(kinds)} tools classified as declared")
    except ClassificationError as exc:
        failures += 1
        click.echo(f"FAIL  tools    {exc}")
    except (ValueError, OSError) as exc:
        failures += 1
        click.echo(f"FAIL  fixture  {cfg.fixture}: {exc}")
    sys.exit(EXIT_ERROR if failures else EXIT_OK)


@main.group()
def rules() -> None:
    """Prerequisite rule utilities."""


@rules.command("validate")
@click.argument("path", type=click.Path(dir_okay=False))
def rules_validate(path):
    """Check a rule file against the tool registry."""
    try:
        library = load_rules(path, reference_toolset())
    except RuleError as exc:
        for p in exc.problems:
            click.echo(p)
        sys.exit(EXIT_ERROR)
    except OSError as exc:
        _fail(str(exc))
    click.echo(f"{len(library.dom)} rules ok")


@rules.command("mine")
@config_option
@click.option("--min-support", type=float, default=1.0, show_default=True)
@click.option("--min-count", type=int, default=2, show_default=True)
def rules_mine(cfg: EngineConfig, min_support, min_count):
    """Print draft rules mined from the archive (for review, never auto-loaded)."""
    try:
        archive = load_archive(cfg.archive)
    except (ArchiveError, OSError) as exc:
        _fail(str(exc))
    drafts = mine_rules([r.workflow for r in archive], reference_toolset(), min_support, min_count)
    click.echo(json.dumps(drafts, indent=2))


if __name__ == "__main__":
    main()
