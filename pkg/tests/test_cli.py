from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from gridflow.cli import main
from gridflow.fixtures import data_path


@pytest.fixture
def runner():
    return CliRunner()


def write_script(tmp_path, steps, on_advisory=None):
    p = tmp_path / "script.json"
    p.write_text(json.dumps({"steps": steps, "on_advisory": on_advisory or {}}))
    return p


PF = [{"tool": "load_network", "args": {"feeder": "glover"}},
      {"tool": "set_timestamp", "args": {"timestamp": "2025-01-15T08:00"}},
      {"tool": "attach_load_profile", "args": {}}, {"tool": "run_power_flow", "args": {}},
      {"tool": "get_voltages", "args": {}}]


class TestRun:
    def test_scripted_exit_0(self, runner, tmp_path):
        script = write_script(tmp_path, PF + [{"final": "Voltages reported."}])
        res = runner.invoke(main, ["run", "--policy", f"scripted:{script}", "--output-dir", str(tmp_path / "o"),
                                   "Run power flow on Glover"])
        assert res.exit_code == 0, res.output
        assert "Voltages reported." in res.output
        transcripts = list((tmp_path / "o").glob("run-*.json"))
        assert len(transcripts) == 1
        assert json.loads(transcripts[0].read_text())["terminated_by"] == "FinalResponse"

    def test_budget_exit_2(self, runner, tmp_path):
        script = write_script(tmp_path, PF + [{"final": "x"}])
        res = runner.invoke(main, ["run", "--policy", f"scripted:{script}", "--budget", "1",
                                   "--transcript", str(tmp_path / "t.json"), "q"])
        assert res.exit_code == 2
        assert (tmp_path / "t.json").exists()

    def test_missing_archive_exit_1(self, runner, tmp_path):
        res = runner.invoke(main, ["run", "--archive", str(tmp_path / "nope.jsonl"), "q"])
        assert res.exit_code == 1
        assert "nope.jsonl" in res.output

    def test_mock_chat_default(self, runner, tmp_path):
        res = runner.invoke(main, ["run", "--output-dir", str(tmp_path), "hello"])
        assert res.exit_code == 0 and "no script entry" in res.output

    def test_transcripts_reproducible(self, runner, tmp_path):
        script = write_script(tmp_path, PF + [{"final": "x"}])
        outs = []
        for i in range(2):
            path = tmp_path / f"t{i}.json"
            runner.invoke(main, ["run", "--policy", f"scripted:{script}", "--transcript", str(path), "q"])
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]


class TestValidate:
    def test_shipped_ok(self, runner):
        res = runner.invoke(main, ["validate"])
        assert res.exit_code == 0, res.output

    def test_read_tool_rule(self, runner, tmp_path):
        bad = tmp_path / "rules.json"
        bad.write_text(json.dumps([{"tool": "get_voltages", "requires": ["plot_voltage_map"], "advisory": "x"}]))
        res = runner.invoke(main, ["validate", "--rules", str(bad)])
        assert res.exit_code == 1 and "Read tool" in res.output

    def test_empty_workflow(self, runner, tmp_path):
        bad = tmp_path / "a.jsonl"
        bad.write_text('{"id": "a", "query": "q", "workflow": [{"tool": "list_feeders"}]}\n'
                       '{"id": "b", "query": "q", "workflow": []}\n')
        res = runner.invoke(main, ["validate", "--archive", str(bad)])
        assert res.exit_code == 1 and f"{bad}:2" in res.output

    def test_rules_validate(self, runner):
        assert runner.invoke(main, ["rules", "validate", str(data_path("rules.json"))]).exit_code == 0

    def test_rules_mine(self, runner):
        res = runner.invoke(main, ["rules", "mine"])
        assert res.exit_code == 0 and json.loads(res.output)


class TestBench:
    def _suite(self, tmp_path, n=3):
        rows = json.loads(data_path("suite.json").read_text())[:n]
        p = tmp_path / "suite.json"
        p.write_text(json.dumps(rows))
        return p

    def test_oracle(self, runner, tmp_path):
        res = runner.invoke(main, ["bench", "--suite", str(self._suite(tmp_path)), "--trials", "3",
                                   "--report", str(tmp_path / "r.json")])
        assert res.exit_code == 0, res.output
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["aggregate"]["pass@1"] == 1.0
        assert (tmp_path / "r.txt").read_text().startswith("query")

    def test_no_supervisor_flawed(self, runner, tmp_path):
        res = runner.invoke(main, ["bench", "--suite", str(data_path("silent_suite.json")), "--trials", "1",
                                   "--policy", f"scripted:{data_path('silent_scripts.json')}",
                                   "--no-supervisor", "--report", str(tmp_path / "r.json")])
        assert res.exit_code == 0
        assert json.loads((tmp_path / "r.json").read_text())["aggregate"]["pass@1"] < 1.0

    def test_schema_violation(self, runner, tmp_path):
        bad = tmp_path / "s.json"
        bad.write_text(json.dumps([{"query_id": "x", "query": "q", "difficulty": "easy"}]))
        res = runner.invoke(main, ["bench", "--suite", str(bad)])
        assert res.exit_code == 1 and "s.json[0]: missing expert_workflow" in res.output

    def test_incomplete_trials_exit_1(self, runner, tmp_path):
        scripts = tmp_path / "scripts.json"
        scripts.write_text("{}")
        res = runner.invoke(main, ["bench", "--suite", str(self._suite(tmp_path, 1)), "--trials", "1",
                                   "--policy", f"scripted:{scripts}", "--report", str(tmp_path / "r.json")])
        assert res.exit_code == 1

    def test_bad_trials(self, runner, tmp_path):
        assert runner.invoke(main, ["bench", "--trials", "0"]).exit_code == 1

    def test_config_option(self, runner, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("budget: 0\n")
        res = runner.invoke(main, ["validate", "--config", str(cfg)])
        assert res.exit_code == 1 and "budget" in res.output
