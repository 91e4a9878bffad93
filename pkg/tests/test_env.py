from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from gridflow.env import (
    DISTRACTOR_NAMES,
    FUNCTIONAL_NAMES,
    ClassificationError,
    GridEnvError,
    GridEnvironment,
    GridFixture,
    Observation,
    ToolContext,
    ToolRegistry,
    classify_tools,
    execute_tool,
    probe_states,
    probe_suite,
    reset,
)
from gridflow.workflow import ToolInvocation, ToolKind, ToolSchema


def call(name, **args):
    return ToolInvocation(name, args)


PREP = [call("load_network", feeder="glover"), call("set_timestamp", timestamp="2025-03-19T15:00"),
        call("attach_load_profile"), call("attach_solar_profile")]


def run_all(env, steps):
    return [env.execute(s) for s in steps]


class TestRoster:
    def test_counts(self, registry):
        assert len(registry) == 82
        assert len(FUNCTIONAL_NAMES) == 21 and len(DISTRACTOR_NAMES) == 61
        assert len(registry.write_tools()) == 9

    def test_classification_matches_declared(self, registry, grid_fixture):
        ctx = ToolContext(grid_fixture)
        kinds = classify_tools(registry, probe_suite(grid_fixture), probe_states(registry, ctx), ctx)
        assert {n for n, k in kinds.items() if k is ToolKind.WRITE} == registry.write_tools()

    def test_mislabeled_tool_detected(self, registry, grid_fixture):
        schemas = dict(registry.schemas)
        schemas["set_timestamp"] = ToolSchema("set_timestamp", "x", schemas["set_timestamp"].args, ToolKind.READ)
        bad = ToolRegistry(schemas, registry.implementations)
        ctx = ToolContext(grid_fixture)
        with pytest.raises(ClassificationError):
            classify_tools(bad, probe_suite(grid_fixture), probe_states(registry, ctx), ctx)


class TestExecution:
    def test_read_leaves_state(self, registry, grid_fixture):
        env = GridEnvironment(registry, grid_fixture)
        run_all(env, PREP)
        before = env.snapshot()
        obs = env.execute(call("get_network_summary"))
        assert obs.structured["buses"] == 96 and env.snapshot() == before

    def test_write_bumps_version(self, registry, grid_fixture):
        env = GridEnvironment(registry, grid_fixture)
        env.execute(call("load_network", feeder="Glover"))
        assert env.state.version_of("network") == 1
        env.execute(call("load_network", feeder="stowe"))
        assert env.state.version_of("network") == 2 and env.state.get("network")["feeder"] == "stowe"

    @pytest.mark.parametrize("step", [
        call("nonexistent"), call("load_network"), call("load_network", feeder="atlantis"),
        call("run_hosting_capacity", norm="l7"),
    ])
    def test_errors_keep_state(self, registry, grid_fixture, step):
        env = GridEnvironment(registry, grid_fixture)
        env.execute(PREP[0])
        before = env.snapshot()
        obs = env.execute(step)
        assert obs.is_error and obs.text.startswith("Error")
        assert env.snapshot() == before

    def test_silent_failure(self, registry, grid_fixture):
        good = GridEnvironment(registry, grid_fixture)
        run_all(good, PREP[:3] + [call("run_power_flow")])
        stale = GridEnvironment(registry, grid_fixture)
        run_all(stale, PREP[:2] + [call("run_power_flow")])
        a, b = good.execute(call("get_voltages")), stale.execute(call("get_voltages"))
        assert not b.is_error and a.digest() != b.digest()

    def test_strict_mode_raises_tool_error(self, registry, grid_fixture):
        env = GridEnvironment(registry, grid_fixture, strict=True)
        run_all(env, PREP[:2])
        assert env.execute(call("run_power_flow")).is_error

    def test_missing_result(self, registry, grid_fixture):
        obs = GridEnvironment(registry, grid_fixture).execute(call("get_hosting_capacity"))
        assert not obs.is_error and obs.structured is None and "No hosting-capacity result" in obs.text

    def test_export_sandbox(self, registry, grid_fixture, tmp_path):
        env = GridEnvironment(registry, grid_fixture, output_dir=tmp_path)
        env.execute(PREP[0])
        obs = env.execute(call("export_nodes_to_file", filename="n.txt", voltage=240))
        assert (tmp_path / "n.txt").read_text().count("\n") == len(obs.structured["nodes"])
        assert env.execute(call("export_nodes_to_file", filename="../x.txt", voltage=240)).is_error

    def test_read_guard(self, grid_fixture):
        def sneaky(state, args, ctx):
            return state.write("x", 1), Observation("ok")

        reg = ToolRegistry({"s": ToolSchema("s", "")}, {"s": sneaky})
        with pytest.raises(GridEnvError):
            execute_tool(reset(), call("s"), reg, ToolContext(grid_fixture))

    def test_fork_independent(self, registry, grid_fixture):
        env = GridEnvironment(registry, grid_fixture)
        env.execute(PREP[0])
        other = env.fork()
        other.execute(PREP[1])
        assert env.snapshot() != other.snapshot()

    @given(st.lists(st.sampled_from(PREP + [call("run_power_flow"), call("get_voltages"),
                                            call("run_hosting_capacity", norm="l1")]), max_size=8))
    def test_determinism(self, registry, grid_fixture, steps):
        a, b = GridEnvironment(registry, grid_fixture), GridEnvironment(registry, grid_fixture)
        oa, ob = run_all(a, steps), run_all(b, steps)
        assert a.snapshot() == b.snapshot()
        assert [o.digest() for o in oa] == [o.digest() for o in ob]


def test_fixture_round_trip(grid_fixture, tmp_path):
    assert GridFixture.from_mapping(grid_fixture.to_mapping()).digest() == grid_fixture.digest()
    with pytest.raises(ValueError):
        GridFixture.from_mapping({"feeders": {}})
