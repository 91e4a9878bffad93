"""Deterministic builders for the shipped data files.

``python3 -m gridflow.fixtures <dir>`` regenerates everything under
``gridflow/data``; tests assert the shipped files match these builders.
"""

from __future__ import annotations

import json
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Any

from gridflow.supervisor import RuleLibrary, SupervisorState, check_violation, parse_rules, record_execution
from gridflow.workflow import ExecutionTrace

FIXTURE_SEED = 20250319
EMBED_DIM = 64

FEEDERS = {
    "rochester": {"buses": 180, "lines": 179, "transformers": 62, "capacitors": 3, "regulators": 2,
                  "loads": 140, "pv_systems": 22},
    "south_hero": {"buses": 240, "lines": 239, "transformers": 88, "capacitors": 4, "regulators": 3,
                   "loads": 205, "pv_systems": 41},
    "glover": {"buses": 96, "lines": 95, "transformers": 31, "capacitors": 1, "regulators": 1,
               "loads": 74, "pv_systems": 9},
    "stowe": {"buses": 310, "lines": 309, "transformers": 117, "capacitors": 6, "regulators": 4,
              "loads": 268, "pv_systems": 57},
    "jericho": {"buses": 150, "lines": 149, "transformers": 49, "capacitors": 2, "regulators": 2,
                "loads": 121, "pv_systems": 15},
}

_BASE = ["load_network", "set_timestamp", "attach_load_profile"]
RULES = [
    ("attach_load_profile", ["load_network", "set_timestamp"], "Load data is keyed by feeder and study time."),
    ("attach_solar_profile", ["load_network", "set_timestamp"], "Irradiance data is keyed by feeder and study time."),
    ("run_power_flow", _BASE, "Power flow needs a network, a study time and load data."),
    ("run_hosting_capacity", _BASE + ["attach_solar_profile"],
     "Hosting capacity needs a network, a study time, load data and PV irradiance data."),
    ("run_infeasibility", _BASE, "Infeasibility analysis needs a network, a study time and load data."),
    ("get_component_counts", ["load_network"], "Component counts come from the loaded network."),
    ("get_network_summary", ["load_network"], "The summary describes the loaded network."),
    ("export_nodes_to_file", ["load_network"], "Node export reads the loaded network."),
    ("get_input_voltages", ["load_network", "set_timestamp"], "Measured voltages are keyed by feeder and time."),
    ("plot_input_voltage_map", ["load_network", "set_timestamp"], "Measured voltages are keyed by feeder and time."),
    ("get_voltages", ["run_power_flow"], "Bus voltages come from a power-flow solution."),
    ("plot_voltage_map", ["run_power_flow"], "The voltage map shows a power-flow solution."),
    ("export_voltages_to_file", ["run_power_flow"], "Voltage export writes a power-flow solution."),
    ("get_hosting_capacity", ["run_hosting_capacity"], "This reports a hosting-capacity solution."),
    ("plot_curtailment_map", ["run_hosting_capacity"], "Curtailment comes from a hosting-capacity solution."),
    ("top_k_infeasible_buses", ["run_infeasibility"], "Infeasible currents come from the infeasibility analysis."),
    ("plot_infeasible_currents_map", ["run_infeasibility"],
     "Infeasible currents come from the infeasibility analysis."),
    ("plot_infeasibility_voltage_map", ["run_infeasibility"],
     "These voltages come from the infeasibility analysis."),
]


def build_fixture() -> dict[str, Any]:
    return {"feeders": FEEDERS, "seed": FIXTURE_SEED}


def build_rules() -> list[dict[str, Any]]:
    return [
        {"tool": tool, "requires": req,
         "advisory": f"{why} Run {{missing}} before calling {{tool}}, or explain to the user why it is not needed."}
        for tool, req, why in RULES
    ]


# -- workflow shorthand ------------------------------------------------------


def _s(tool: str, **args) -> dict[str, Any]:
    return {"tool": tool, "args": args}


def _prep(feeder: str, ts: str | None = None, load: str | None = None, solar: str | None = None):
    steps = [_s("load_network", feeder=feeder)]
    if ts is not None:
        steps.append(_s("set_timestamp", timestamp=ts))
    if load is not None:
        steps.append(_s("attach_load_profile", source=load))
    if solar is not None:
        steps.append(_s("attach_solar_profile", source=solar))
    return steps


def _pf(feeder, ts, load="ami", **opts):
    return _prep(feeder, ts, load) + [_s("run_power_flow", **opts)]


def _hc(feeder, ts, norm, load="ami", solar="irradiance", **opts):
    return _prep(feeder, ts, load, solar) + [_s("run_hosting_capacity", norm=norm, **opts)]


def _inf(feeder, ts, norm, load="ami", **opts):
    return _prep(feeder, ts, load) + [_s("run_infeasibility", norm=norm, **opts)]


def _pretty(feeder: str) -> str:
    return feeder.replace("_", " ").title()


# query_id, difficulty, class, text, workflow
def _suite_rows() -> list[tuple[str, str, str, str, list[dict[str, Any]]]]:
    return [
        ("e01", "easy", "inspection", "How many transformers does the Glover feeder have?",
         _prep("glover") + [_s("get_component_counts", component="transformers")]),
        ("e02", "easy", "inspection", "Give me a component summary of the Stowe feeder.",
         _prep("stowe") + [_s("get_network_summary")]),
        ("e03", "easy", "inspection", "Which feeders are available in the dataset?",
         [_s("list_feeders")]),
        ("e04", "easy", "inspection", "Export all 240 V nodes on Jericho to jericho_240.txt.",
         _prep("jericho") + [_s("export_nodes_to_file", filename="jericho_240.txt", voltage=240.0)]),
        ("e05", "easy", "inspection", "Show the measured bus voltages on Rochester at 2025-03-19 15:00.",
         _prep("rochester", "2025-03-19T15:00") + [_s("get_input_voltages")]),
        ("e06", "easy", "inspection", "Plot the input voltage map for South Hero on 2025-06-21 at noon.",
         _prep("south_hero", "2025-06-21T12:00") + [_s("plot_input_voltage_map")]),
        ("e07", "easy", "power_flow", "Run a power flow on Glover at 2025-01-15 08:00 and report the bus voltages.",
         _pf("glover", "2025-01-15T08:00") + [_s("get_voltages")]),
        ("e08", "easy", "inspection", "How many PV systems are connected on South Hero?",
         _prep("south_hero") + [_s("get_component_counts", component="pv_systems")]),
        ("e09", "easy", "inspection", "Export the 7.2 kV nodes of Rochester to rochester_mv.txt.",
         _prep("rochester") + [_s("export_nodes_to_file", filename="rochester_mv.txt", voltage=7200.0)]),
        ("e10", "easy", "inspection", "How many capacitors are installed on Jericho?",
         _prep("jericho") + [_s("get_component_counts", component="capacitors")]),
        ("m01", "medium", "power_flow",
         "Plot the power-flow voltage map of Stowe at 2025-07-04 17:00 using nominal load data.",
         _pf("stowe", "2025-07-04T17:00", "nominal") + [_s("plot_voltage_map")]),
        ("m02", "medium", "power_flow",
         "Run power flow on Jericho at 2025-02-10 18:30 and export the voltages to jericho_v.txt.",
         _pf("jericho", "2025-02-10T18:30") + [_s("export_voltages_to_file", filename="jericho_v.txt")]),
        ("m03", "medium", "hosting_capacity",
         "What is the hosting capacity of Glover at 2025-05-01 13:00 with fair (L2) curtailment?",
         _hc("glover", "2025-05-01T13:00", "l2") + [_s("get_hosting_capacity")]),
        ("m04", "medium", "hosting_capacity",
         "Plot PV curtailment for Rochester at noon on 2025-06-21 with sparse (L1) curtailment.",
         _hc("rochester", "2025-06-21T12:00", "l1") + [_s("plot_curtailment_map")]),
        ("m05", "medium", "infeasibility",
         "Find the 5 buses with the largest infeasible currents on South Hero at 2025-12-15 18:00 using an L1 norm.",
         _inf("south_hero", "2025-12-15T18:00", "l1") + [_s("top_k_infeasible_buses", k=5)]),
        ("m06", "medium", "infeasibility",
         "Plot the infeasible current map for Stowe at 2025-01-30 07:00 with an L2 norm.",
         _inf("stowe", "2025-01-30T07:00", "l2") + [_s("plot_infeasible_currents_map")]),
        ("m07", "medium", "power_flow",
         "Run power flow on Rochester at 2025-08-12 16:00; list the voltages and plot them on the map.",
         _pf("rochester", "2025-08-12T16:00") + [_s("get_voltages"), _s("plot_voltage_map")]),
        ("m08", "medium", "hosting_capacity",
         "Compute min-max (Linf) hosting capacity for South Hero at 2025-04-18 11:00.",
         _hc("south_hero", "2025-04-18T11:00", "linf") + [_s("get_hosting_capacity")]),
        ("m09", "medium", "infeasibility",
         "Show bus voltages after an L1 infeasibility analysis of Jericho at 2025-11-02 19:00.",
         _inf("jericho", "2025-11-02T19:00", "l1") + [_s("plot_infeasibility_voltage_map")]),
        ("m10", "medium", "power_flow",
         "Run a tight power flow (tolerance 1e-8) on Glover at 2025-09-09 09:00 and report the voltages.",
         _pf("glover", "2025-09-09T09:00", tolerance=1e-8) + [_s("get_voltages")]),
        ("h01", "hard", "hosting_capacity",
         "For Stowe at 2025-06-30 14:00, compute L1 hosting capacity with voltage limits 0.97 to 1.03 p.u. "
         "and an 80% transformer limit; report it and plot the curtailment.",
         _hc("stowe", "2025-06-30T14:00", "l1", vmin=0.97, vmax=1.03, xfmr_limit=80.0)
         + [_s("get_hosting_capacity"), _s("plot_curtailment_map")]),
        ("h02", "hard", "infeasibility",
         "Run an L2 infeasibility study on Rochester at 2025-01-21 18:00 with buses 12 and 45 held to "
         "0.97-1.03 p.u., solved with Clarabel; list the top 10 buses and plot the voltages.",
         _inf("rochester", "2025-01-21T18:00", "l2", bus_ids=[12.0, 45.0], bus_vmin=0.97, bus_vmax=1.03,
              solver="clarabel") + [_s("top_k_infeasible_buses", k=10), _s("plot_infeasibility_voltage_map")]),
        ("h03", "hard", "hosting_capacity",
         "On Jericho at 2025-05-20 12:30, report power-flow voltages and then the L2 hosting capacity.",
         _pf("jericho", "2025-05-20T12:30") + [_s("get_voltages"), _s("attach_solar_profile", source="irradiance"),
                                               _s("run_hosting_capacity", norm="l2"),
                                               _s("get_hosting_capacity")]),
        ("h04", "hard", "power_flow",
         "Compare measured and simulated voltages on Glover at 2025-03-03 07:45: plot the input voltages, "
         "then run power flow and export the result to glover_pf.txt.",
         _prep("glover", "2025-03-03T07:45") + [_s("get_input_voltages"), _s("plot_input_voltage_map"),
                                                _s("attach_load_profile", source="ami"), _s("run_power_flow"),
                                                _s("export_voltages_to_file", filename="glover_pf.txt")]),
        ("h05", "hard", "infeasibility",
         "Summarize South Hero, then run an L1 infeasibility study at 2025-02-14 17:30 with a 90% transformer "
         "limit; list the top 3 buses and plot the currents.",
         _prep("south_hero") + [_s("get_network_summary"), _s("set_timestamp", timestamp="2025-02-14T17:30"),
                                _s("attach_load_profile", source="ami"),
                                _s("run_infeasibility", norm="l1", xfmr_limit=90.0),
                                _s("top_k_infeasible_buses", k=3), _s("plot_infeasible_currents_map")]),
        ("h06", "hard", "hosting_capacity",
         "For Rochester at 2025-07-15 13:00, compute Linf hosting capacity and an L1 infeasibility study, "
         "reporting both.",
         _hc("rochester", "2025-07-15T13:00", "linf") + [_s("get_hosting_capacity"),
                                                         _s("run_infeasibility", norm="l1"),
                                                         _s("top_k_infeasible_buses", k=5)]),
        ("h07", "hard", "power_flow",
         "Export the 480 V nodes of Stowe to stowe_480.txt, then plot the power-flow voltages at 2025-10-01 18:00.",
         _prep("stowe") + [_s("export_nodes_to_file", filename="stowe_480.txt", voltage=480.0),
                           _s("set_timestamp", timestamp="2025-10-01T18:00"),
                           _s("attach_load_profile", source="ami"), _s("run_power_flow"),
                           _s("plot_voltage_map")]),
        ("h08", "hard", "hosting_capacity",
         "Using nominal load and clear-sky PV for Jericho at 2025-08-01 12:00, plot L2 curtailment and report "
         "the hosting capacity.",
         _hc("jericho", "2025-08-01T12:00", "l2", load="nominal", solar="clear_sky")
         + [_s("plot_curtailment_map"), _s("get_hosting_capacity")]),
        ("h09", "hard", "infeasibility",
         "Run an L2 infeasibility study on Glover at 2025-12-01 17:00 with voltage limits 0.92-1.08 p.u. and at "
         "most 500 iterations; list the top 8 buses and plot currents and voltages.",
         _inf("glover", "2025-12-01T17:00", "l2", vmin=0.92, vmax=1.08, max_iter=500)
         + [_s("top_k_infeasible_buses", k=8), _s("plot_infeasible_currents_map"),
            _s("plot_infeasibility_voltage_map")]),
        ("h10", "hard", "infeasibility",
         "For South Hero at 2025-09-22 15:00, plot power-flow voltages, report L1 hosting capacity and list the "
         "top 5 L2-infeasible buses.",
         _pf("south_hero", "2025-09-22T15:00") + [_s("plot_voltage_map"),
                                                  _s("attach_solar_profile", source="irradiance"),
                                                  _s("run_hosting_capacity", norm="l1"), _s("get_hosting_capacity"),
                                                  _s("run_infeasibility", norm="l2"),
                                                  _s("top_k_infeasible_buses", k=5)]),
    ]


def build_suite() -> list[dict[str, Any]]:
    return [{"query_id": qid, "query": text, "difficulty": tier, "analysis_class": cls, "expert_workflow": wf}
            for qid, tier, cls, text, wf in _suite_rows()]


# -- silent-failure corpus ---------------------------------------------------

# (query_id, index of the expert step the flawed script skips)
SILENT_CASES = [
    ("e01", 0), ("e05", 1), ("e07", 2), ("m01", 1), ("m02", 3), ("m03", 3),
    ("m04", 2), ("m05", 2), ("m09", 3), ("h01", 4), ("h03", 5), ("h07", 4),
]


def _first_blocked(steps: list[dict[str, Any]], rules: RuleLibrary) -> int:
    state = SupervisorState()
    trace = ExecutionTrace.from_records(steps)
    for i, inv in enumerate(trace):
        if check_violation(rules, state, inv):
            return i
        state = record_execution(state, inv.tool_name)
    raise ValueError("flawed script never violates a rule")


def build_silent_corpus(registry) -> tuple[list[dict[str, Any]], dict[str, Any]]:
    """Suite entries plus scripts that skip one prerequisite and carry the
    corrective branch for the advisory it triggers."""
    rules = parse_rules(build_rules(), registry)
    suite = {row["query_id"]: row for row in build_suite()}
    entries, scripts = [], {}
    for qid, skip in SILENT_CASES:
        expert = suite[qid]["expert_workflow"]
        flawed = expert[:skip] + expert[skip + 1:]
        blocked = flawed[_first_blocked(flawed, rules)]["tool"]
        sid = f"sf-{qid}"
        entries.append({**suite[qid], "query_id": sid})
        scripts[sid] = {
            "skipped": expert[skip]["tool"],
            "steps": flawed + [{"final": "Done."}],
            "on_advisory": {blocked: [expert[skip]]},
        }
    return entries, scripts


# -- planted archive ---------------------------------------------------------

PLANTED_QUERY = "Plot the curtailed PV power for Stowe at 2025-06-30 14:00 under a sparse curtailment objective."
PLANTED_RELEVANT = 10
PLANTED_TOTAL = 50

_FEEDER_CYCLE = list(FEEDERS)
_TIMES = ["2025-03-19T15:00", "2025-06-21T12:00", "2025-09-01T10:30", "2025-12-10T18:00", "2025-04-04T08:15"]


def _planted_records() -> list[dict[str, Any]]:
    records = []
    norms = ["l1", "l2", "linf"]
    for i in range(PLANTED_RELEVANT):
        feeder, ts, norm = _FEEDER_CYCLE[i % 5], _TIMES[(i * 2) % 5], norms[i % 3]
        reader = "plot_curtailment_map" if i % 2 == 0 else "get_hosting_capacity"
        records.append({
            "id": f"hc-{i + 1:02d}",
            "query": f"Hosting capacity ({norm}) for {_pretty(feeder)} at {ts.replace('T', ' ')}, "
                     f"{'plot curtailment' if i % 2 == 0 else 'report the result'}.",
            "workflow": _hc(feeder, ts, norm) + [_s(reader)],
        })
    makers = [
        ("inspect", lambda f, t, j: (f"How many {['buses', 'lines', 'loads'][j % 3]} are on {_pretty(f)}? (#{j})",
                                     _prep(f) + [_s("get_component_counts", component=['buses', 'lines', 'loads'][j % 3])])),
        ("pf", lambda f, t, j: (f"Power-flow voltages for {_pretty(f)} at {t.replace('T', ' ')} (#{j}).",
                                _pf(f, t) + [_s("get_voltages")])),
        ("inf", lambda f, t, j: (f"Top infeasible buses on {_pretty(f)} at {t.replace('T', ' ')} (#{j}).",
                                 _inf(f, t, "l1") + [_s("top_k_infeasible_buses", k=5)])),
        ("input", lambda f, t, j: (f"Measured input voltages on {_pretty(f)} at {t.replace('T', ' ')} (#{j}).",
                                   _prep(f, t) + [_s("plot_input_voltage_map")])),
    ]
    for j in range(PLANTED_TOTAL - PLANTED_RELEVANT):
        kind, make = makers[j % 4]
        text, wf = make(_FEEDER_CYCLE[j % 5], _TIMES[j % 5], j + 1)
        records.append({"id": f"{kind}-{j + 1:02d}", "query": text, "workflow": wf})
    return records


def build_archive() -> list[dict[str, Any]]:
    return _planted_records()


def build_planted_overrides() -> dict[str, list[float]]:
    """Unit vectors with exact cosines to the planted query: relevant records
    0.90-0.98, distractors 0.00-0.30, each on its own orthogonal axis."""
    records = _planted_records()
    if len(records) + 1 > EMBED_DIM:
        raise ValueError("not enough orthogonal axes")

    def vec(cos: float, axis: int) -> list[float]:
        v = [0.0] * EMBED_DIM
        v[0] = cos
        v[axis] = math.sqrt(1.0 - cos * cos)
        return v

    out = {PLANTED_QUERY: vec(1.0, 1)}
    for i, rec in enumerate(records):
        if i < PLANTED_RELEVANT:
            cos = 0.98 - 0.08 * i / (PLANTED_RELEVANT - 1)
        else:
            j = i - PLANTED_RELEVANT
            cos = 0.30 * (1 - j / (PLANTED_TOTAL - PLANTED_RELEVANT - 1))
        out[rec["query"]] = vec(round(cos, 6), i + 1)
    return out


# -- writing -----------------------------------------------------------------

DATA_FILES = ("grid_fixture.json", "rules.json", "suite.json", "silent_suite.json", "silent_scripts.json",
              "archive.jsonl", "planted_overrides.json")


def render_all() -> dict[str, str]:
    from gridflow.env import reference_toolset

    def js(obj):
        return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"

    silent_suite, silent_scripts = build_silent_corpus(reference_toolset())
    return {
        "grid_fixture.json": js(build_fixture()),
        "rules.json": js(build_rules()),
        "suite.json": js(build_suite()),
        "silent_suite.json": js(silent_suite),
        "silent_scripts.json": js(silent_scripts),
        "archive.jsonl": "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in build_archive()),
        "planted_overrides.json": js(build_planted_overrides()),
    }


def data_path(name: str) -> Path:
    """Path of a shipped data file."""
    return Path(str(resources.files("gridflow") / "data" / name))


def write_all(target: str | Path) -> list[Path]:
    target = Path(target)
    target.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in render_all().items():
        path = target / name
        path.write_text(text, encoding="utf-8")
        written.append(path)
    return written


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else str(Path(__file__).parent / "data")
    for p in write_all(out):
        print(p)
