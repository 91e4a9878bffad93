"""Reference tool roster: 21 functional distribution-grid tools plus 61 inert
distractors.

Analysis results are not power-flow solutions. They are keyed-hash
expansions of (feeder, timestamp, analysis kind, options, input data
identity) into bounded reals, so they are reproducible and any change in
inputs (a skipped profile, a stale timestamp) changes the numbers.
"""

from __future__ import annotations

import hashlib
from typing import Any, Mapping

from gridflow.workflow import ArgSpec, ToolKind, ToolSchema, canonical_json

from .core import (
    EnvironmentState,
    GridFixture,
    Observation,
    ToolContext,
    ToolFailure,
    ToolRegistry,
    reset,
)

R, W = ToolKind.READ, ToolKind.WRITE

NOMINAL_VOLTAGES = (120.0, 240.0, 480.0, 7200.0)
COMPONENTS = ("buses", "lines", "transformers", "capacitors", "regulators", "loads", "pv_systems")
FALLBACK_TIMESTAMP = "2025-01-01T00:00"


def keyed_reals(seed: int, key: Any, n: int, lo: float, hi: float, decimals: int = 6) -> list[float]:
    """``n`` reals in [lo, hi] from a blake2b stream keyed by ``seed``."""
    hkey = int(seed).to_bytes(8, "little", signed=True)
    msg = canonical_json(key).encode("utf-8")
    out: list[float] = []
    block = 0
    while len(out) < n:
        digest = hashlib.blake2b(msg, key=hkey, digest_size=64,
                                 salt=block.to_bytes(16, "little")).digest()
        for off in range(0, 64, 8):
            if len(out) == n:
                break
            u = int.from_bytes(digest[off:off + 8], "little") / 2**64
            out.append(round(lo + (hi - lo) * u, decimals))
        block += 1
    return out


def _layout_digest(network: Mapping[str, Any]) -> str:
    return hashlib.sha256(canonical_json([network["feeder"], network["bus_ids"]]).encode()).hexdigest()[:16]


def _need(state: EnvironmentState, ctx: ToolContext, name: str, fallback: Any) -> tuple[Any, bool]:
    """Fetch object ``name``; in silent mode substitute ``fallback`` when absent."""
    data = state.get(name)
    if data is not None:
        return data, True
    if ctx.strict:
        raise ToolFailure(f"required object {name!r} is missing (strict mode)")
    return fallback, False


_NO_NETWORK = {"feeder": "(none)", "bus_ids": [], **{c: 0 for c in COMPONENTS}}


def _network(state, ctx):
    return _need(state, ctx, "network", _NO_NETWORK)[0]


def _timestamp(state, ctx) -> str:
    return _need(state, ctx, "timestamp", {"value": FALLBACK_TIMESTAMP})[0]["value"]


def _per_bus(seed: int, key: Any, bus_ids: list[int], lo: float, hi: float) -> dict[str, float]:
    vals = keyed_reals(seed, key, len(bus_ids), lo, hi)
    return {str(b): v for b, v in zip(bus_ids, vals)}


def _missing(what: str) -> Observation:
    return Observation(f"No {what} available; nothing to report.", None)


# -- Write tools -------------------------------------------------------------


def load_network(state, args, ctx):
    wanted = args["feeder"].strip().casefold()
    for name, spec in ctx.fixture.feeders.items():
        if name.casefold() == wanted:
            break
    else:
        raise ToolFailure(f"unknown feeder {args['feeder']!r}; see list_feeders")
    counts = {c: int(spec.get(c, 0)) for c in COMPONENTS}
    network = {"feeder": name, "bus_ids": list(range(1, counts["buses"] + 1)), **counts}
    new = state.write("network", network)
    return new, Observation(
        f"Loaded feeder {name}: {counts['buses']} buses, {counts['lines']} lines, "
        f"{counts['transformers']} transformers (version {new.version_counter}).",
        {"feeder": name, **counts},
    )


def set_timestamp(state, args, ctx):
    new = state.write("timestamp", {"value": args["timestamp"]})
    return new, Observation(f"Study timestamp set to {args['timestamp']}.", {"timestamp": args["timestamp"]})


def _attach(state, args, ctx, obj: str, what: str, lo: float, hi: float):
    network = _network(state, ctx)
    ts = _timestamp(state, ctx)
    key = [what, network["feeder"], ts, args["source"]]
    total = keyed_reals(state.rng_seed, key, 1, lo, hi)[0]
    profile = {"feeder": network["feeder"], "timestamp": ts, "source": args["source"], "total_kw": total}
    new = state.write(obj, profile)
    return new, Observation(
        f"Attached {args['source']} {what} for {network['feeder']} at {ts}: total {total:.1f} kW.",
        profile,
    )


def attach_load_profile(state, args, ctx):
    return _attach(state, args, ctx, "load_profile", "load profile", 500.0, 5000.0)


def attach_solar_profile(state, args, ctx):
    return _attach(state, args, ctx, "solar_profile", "solar profile", 0.0, 2000.0)


def _profile_id(state, ctx, name: str):
    prof, present = _need(state, ctx, name, None)
    return [prof["feeder"], prof["timestamp"], prof["source"]] if present else "default"


def run_power_flow(state, args, ctx):
    network = _network(state, ctx)
    ts = _timestamp(state, ctx)
    load = _profile_id(state, ctx, "load_profile")
    key = ["powerflow", network["feeder"], ts, load, args["tolerance"], args["max_iter"]]
    voltages = _per_bus(state.rng_seed, key, network["bus_ids"], 0.90, 1.10)
    result = {"feeder": network["feeder"], "timestamp": ts, "voltages": voltages}
    new = state.write("powerflow_result", result)
    worst = min(voltages.values(), default=None)
    return new, Observation(
        f"Power flow converged for {network['feeder']} at {ts}"
        + (f"; minimum voltage {worst:.4f} p.u." if worst is not None else "; no buses."),
        {"feeder": network["feeder"], "timestamp": ts, "buses": len(voltages)},
    )


def run_hosting_capacity(state, args, ctx):
    network = _network(state, ctx)
    ts = _timestamp(state, ctx)
    load = _profile_id(state, ctx, "load_profile")
    solar = _profile_id(state, ctx, "solar_profile")
    opts = [args["norm"], args["vmin"], args["vmax"], args["xfmr_limit"]]
    key = ["hosting", network["feeder"], ts, load, solar, opts]
    curtail = _per_bus(state.rng_seed, key + ["curtailment"], network["bus_ids"], 0.0, 50.0)
    voltages = _per_bus(state.rng_seed, key + ["voltage"], network["bus_ids"], args["vmin"], args["vmax"])
    hosting = round(sum(keyed_reals(state.rng_seed, key + ["hosting"], 1, 100.0, 5000.0)), 3)
    result = {"feeder": network["feeder"], "timestamp": ts, "norm": args["norm"],
              "hosting_kw": hosting, "curtailment_kw": curtail, "voltages": voltages}
    new = state.write("hosting_result", result)
    return new, Observation(
        f"Dynamic hosting capacity ({args['norm']}) solved for {network['feeder']} at {ts}: "
        f"{hosting:.1f} kW.",
        {"feeder": network["feeder"], "timestamp": ts, "norm": args["norm"], "hosting_kw": hosting},
    )


def run_infeasibility(state, args, ctx):
    network = _network(state, ctx)
    ts = _timestamp(state, ctx)
    load = _profile_id(state, ctx, "load_profile")
    opts = [args["norm"], args["vmin"], args["vmax"], args["xfmr_limit"], args.get("bus_ids"),
            args.get("bus_vmin"), args.get("bus_vmax"), args["solver"], args["tolerance"], args["max_iter"]]
    key = ["infeasibility", network["feeder"], ts, load, opts]
    currents = _per_bus(state.rng_seed, key + ["current"], network["bus_ids"], 0.0, 30.0)
    voltages = _per_bus(state.rng_seed, key + ["voltage"], network["bus_ids"], args["vmin"], args["vmax"])
    result = {"feeder": network["feeder"], "timestamp": ts, "norm": args["norm"],
              "currents_a": currents, "voltages": voltages}
    new = state.write("infeasibility_result", result)
    total = round(sum(currents.values()), 6)
    return new, Observation(
        f"Current-infeasibility ({args['norm']}, {args['solver']}) solved for {network['feeder']} at {ts}; "
        f"total infeasible current {total:.3f} A.",
        {"feeder": network["feeder"], "timestamp": ts, "norm": args["norm"], "total_current_a": total},
    )


def _record_export(state, ctx, filename: str, lines: list[str], payload: dict):
    try:
        path = ctx.sandboxed_path(filename)
    except ValueError as exc:
        raise ToolFailure(str(exc)) from None
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    exports = state.get("exports") or []
    exports.append({"file": filename, "lines": len(lines)})
    return state.write("exports", exports), payload


def _nominal_voltages(seed: int, network: Mapping[str, Any]) -> dict[str, float]:
    picks = keyed_reals(seed, ["nominal", network["feeder"]], len(network["bus_ids"]), 0.0, 1.0)
    return {str(b): NOMINAL_VOLTAGES[min(int(u * len(NOMINAL_VOLTAGES)), len(NOMINAL_VOLTAGES) - 1)]
            for b, u in zip(network["bus_ids"], picks)}


def export_nodes_to_file(state, args, ctx):
    network = _network(state, ctx)
    nominal = _nominal_voltages(state.rng_seed, network)
    nodes = [f"bus_{b}" for b, v in nominal.items() if abs(v - args["voltage"]) <= 1e-9]
    new, payload = _record_export(state, ctx, args["filename"], nodes,
                                  {"file": args["filename"], "nodes": nodes})
    return new, Observation(f"Exported {len(nodes)} nodes at {args['voltage']:g} V to {args['filename']}.", payload)


def export_voltages_to_file(state, args, ctx):
    result, present = _need(state, ctx, "powerflow_result", {"voltages": {}})
    rows = [f"bus_{b},{v:.6f}" for b, v in result["voltages"].items()]
    new, payload = _record_export(state, ctx, args["filename"], rows,
                                  {"file": args["filename"], "voltages": result["voltages"]})
    return new, Observation(f"Exported {len(rows)} bus voltages to {args['filename']}.", payload)


# -- Read tools --------------------------------------------------------------


def list_feeders(state, args, ctx):
    names = sorted(ctx.fixture.feeders)
    return state, Observation("Available feeders: " + ", ".join(names) + ".", {"feeders": names})


def get_component_counts(state, args, ctx):
    network, present = _need(state, ctx, "network", None)
    if not present:
        return state, _missing("network model")
    comp = args["component"]
    return state, Observation(f"{network['feeder']} has {network[comp]} {comp}.",
                              {"feeder": network["feeder"], "component": comp, "count": network[comp]})


def get_network_summary(state, args, ctx):
    network, present = _need(state, ctx, "network", None)
    if not present:
        return state, _missing("network model")
    counts = {c: network[c] for c in COMPONENTS}
    text = ", ".join(f"{v} {k}" for k, v in counts.items())
    return state, Observation(f"{network['feeder']}: {text}.", {"feeder": network["feeder"], **counts})


def _input_voltages(state, ctx):
    network, present = _need(state, ctx, "network", None)
    if not present:
        return None
    ts = _timestamp(state, ctx)
    values = _per_bus(state.rng_seed, ["measured", network["feeder"], ts], network["bus_ids"], 0.92, 1.08)
    return network, ts, values


def _table(values: Mapping[str, float], limit: int = 8) -> str:
    items = list(values.items())
    shown = ", ".join(f"{b}: {v:.4f}" for b, v in items[:limit])
    more = f" ... (+{len(items) - limit} more)" if len(items) > limit else ""
    return shown + more


def get_input_voltages(state, args, ctx):
    got = _input_voltages(state, ctx)
    if got is None:
        return state, _missing("network model")
    network, ts, values = got
    return state, Observation(f"Measured voltages for {network['feeder']} at {ts}: {_table(values)}",
                              {"feeder": network["feeder"], "timestamp": ts, "voltages": values})


def _plot(kind: str, network_feeder: str, ts: str, values: Mapping[str, float], layout: str) -> dict:
    return {"plot": kind, "feeder": network_feeder, "timestamp": ts, "values": dict(values),
            "layout_digest": layout}


def plot_input_voltage_map(state, args, ctx):
    got = _input_voltages(state, ctx)
    if got is None:
        return state, _missing("network model")
    network, ts, values = got
    record = _plot("input_voltage_map", network["feeder"], ts, values, _layout_digest(network))
    return state, Observation(f"Rendered input voltage map for {network['feeder']} ({len(values)} buses).", record)


def _result_reader(obj: str, field: str, plot_kind: str | None, label: str):
    def read(state, args, ctx):
        result, present = _need(state, ctx, obj, None)
        if not present:
            return state, _missing(label)
        values = result[field]
        if plot_kind is None:
            return state, Observation(
                f"{label.capitalize()} for {result['feeder']} at {result['timestamp']}: {_table(values)}",
                {"feeder": result["feeder"], "timestamp": result["timestamp"], field: values},
            )
        layout = hashlib.sha256(canonical_json([result["feeder"], sorted(values, key=int)]).encode()).hexdigest()[:16]
        record = _plot(plot_kind, result["feeder"], result["timestamp"], values, layout)
        return state, Observation(
            f"Rendered {plot_kind.replace('_', ' ')} for {result['feeder']} at {result['timestamp']} "
            f"({len(values)} buses).",
            record,
        )

    return read


get_voltages = _result_reader("powerflow_result", "voltages", None, "power-flow voltages")
plot_voltage_map = _result_reader("powerflow_result", "voltages", "voltage_map", "power-flow result")
plot_curtailment_map = _result_reader("hosting_result", "curtailment_kw", "curtailment_map", "hosting-capacity result")
plot_infeasible_currents_map = _result_reader("infeasibility_result", "currents_a", "infeasible_current_map",
                                              "infeasibility result")
plot_infeasibility_voltage_map = _result_reader("infeasibility_result", "voltages", "infeasibility_voltage_map",
                                                "infeasibility result")


def get_hosting_capacity(state, args, ctx):
    result, present = _need(state, ctx, "hosting_result", None)
    if not present:
        return state, _missing("hosting-capacity result")
    curtailed = round(sum(result["curtailment_kw"].values()), 6)
    return state, Observation(
        f"Hosting capacity ({result['norm']}) for {result['feeder']} at {result['timestamp']}: "
        f"{result['hosting_kw']:.1f} kW, total curtailment {curtailed:.2f} kW.",
        {"feeder": result["feeder"], "timestamp": result["timestamp"], "norm": result["norm"],
         "hosting_kw": result["hosting_kw"], "curtailed_kw": curtailed},
    )


def top_k_infeasible_buses(state, args, ctx):
    result, present = _need(state, ctx, "infeasibility_result", None)
    if not present:
        return state, _missing("infeasibility result")
    k = args["k"]
    if k < 1:
        raise ToolFailure("k must be at least 1")
    ranked = sorted(result["currents_a"].items(), key=lambda kv: (-kv[1], int(kv[0])))[:k]
    rows = [{"bus": int(b), "current_a": v} for b, v in ranked]
    text = "; ".join(f"bus {r['bus']}: {r['current_a']:.3f} A" for r in rows)
    return state, Observation(f"Top {k} infeasible buses for {result['feeder']}: {text}",
                              {"feeder": result["feeder"], "timestamp": result["timestamp"], "top": rows})


# -- roster ------------------------------------------------------------------


def _a(name, type_, required=True, default=None, choices=None, description=""):
    return ArgSpec(name, type_, required, default, choices, description)


FUNCTIONAL = [
    (ToolSchema("load_network", "Load the network model of a named feeder into the study.",
                (_a("feeder", "string", description="feeder name, see list_feeders"),), W), load_network),
    (ToolSchema("set_timestamp", "Set the study date and time (ISO 8601).",
                (_a("timestamp", "timestamp"),), W), set_timestamp),
    (ToolSchema("attach_load_profile", "Attach AMI or nominal load data for the loaded feeder at the study time.",
                (_a("source", "string", False, "ami", ("ami", "nominal")),), W), attach_load_profile),
    (ToolSchema("attach_solar_profile", "Attach PV irradiance data for the loaded feeder at the study time.",
                (_a("source", "string", False, "irradiance", ("irradiance", "clear_sky")),), W),
     attach_solar_profile),
    (ToolSchema("run_power_flow", "Run unbalanced three-phase power flow and store bus voltages.",
                (_a("tolerance", "real", False, 1e-6), _a("max_iter", "integer", False, 100)), W), run_power_flow),
    (ToolSchema("run_hosting_capacity", "Solve dynamic hosting capacity with PV curtailment.",
                (_a("norm", "string", choices=("l1", "l2", "linf"),
                    description="curtailment objective: l1 sparse, l2 fair, linf min-max"),
                 _a("vmin", "real", False, 0.95), _a("vmax", "real", False, 1.05),
                 _a("xfmr_limit", "real", False, 100.0, description="transformer loading limit, percent")), W),
     run_hosting_capacity),
    (ToolSchema("run_infeasibility", "Run three-phase current-infeasibility analysis.",
                (_a("norm", "string", choices=("l1", "l2")),
                 _a("vmin", "real", False, 0.90), _a("vmax", "real", False, 1.10),
                 _a("xfmr_limit", "real", False, 100.0),
                 _a("bus_ids", "list-of-real", False, description="buses with custom voltage bounds"),
                 _a("bus_vmin", "real", False), _a("bus_vmax", "real", False),
                 _a("solver", "string", False, "ipopt", ("ipopt", "clarabel")),
                 _a("tolerance", "real", False, 1e-6), _a("max_iter", "integer", False, 1000)), W),
     run_infeasibility),
    (ToolSchema("export_nodes_to_file", "Write the nodes with a given nominal voltage to a text file.",
                (_a("filename", "string"), _a("voltage", "real", description="nominal volts")), W,
                frozenset({"export"})), export_nodes_to_file),
    (ToolSchema("export_voltages_to_file", "Write the power-flow bus voltages to a text file.",
                (_a("filename", "string"),), W, frozenset({"export"})), export_voltages_to_file),
    (ToolSchema("list_feeders", "List the feeders available in the dataset."), list_feeders),
    (ToolSchema("get_component_counts", "Count components of one type in the loaded feeder.",
                (_a("component", "string", choices=COMPONENTS),)), get_component_counts),
    (ToolSchema("get_network_summary", "Summarize component counts of the loaded feeder."), get_network_summary),
    (ToolSchema("get_input_voltages", "Report measured bus voltages from input data, no analysis."),
     get_input_voltages),
    (ToolSchema("plot_input_voltage_map", "Plot measured bus voltages from input data on the feeder map."),
     plot_input_voltage_map),
    (ToolSchema("get_voltages", "Report bus voltages from the latest power flow."), get_voltages),
    (ToolSchema("plot_voltage_map", "Plot power-flow bus voltages on the feeder map."), plot_voltage_map),
    (ToolSchema("get_hosting_capacity", "Report the hosting-capacity result."), get_hosting_capacity),
    (ToolSchema("plot_curtailment_map", "Plot curtailed PV power per bus on the feeder map."),
     plot_curtailment_map),
    (ToolSchema("top_k_infeasible_buses", "List the k buses with the largest infeasible currents.",
                (_a("k", "integer", False, 5),)), top_k_infeasible_buses),
    (ToolSchema("plot_infeasible_currents_map", "Plot infeasible currents per bus on the feeder map."),
     plot_infeasible_currents_map),
    (ToolSchema("plot_infeasibility_voltage_map", "Plot bus voltages after infeasibility analysis on the map."),
     plot_infeasibility_voltage_map),
]

DISTRACTOR_NAMES = (
    "get_weather_forecast", "estimate_fault_current", "compute_short_circuit_mva", "list_protection_devices",
    "get_relay_settings", "simulate_motor_start", "compute_harmonic_distortion", "get_outage_history",
    "forecast_load_growth", "estimate_annual_line_losses", "get_customer_count", "lookup_tariff_rates",
    "compute_reliability_indices", "get_saidi_saifi", "schedule_maintenance_crew", "get_vegetation_risk",
    "compute_arc_flash_energy", "get_substation_inventory", "list_meter_firmware", "query_scada_alarms",
    "get_der_interconnection_queue", "estimate_ev_adoption", "compute_carbon_intensity", "get_wholesale_price",
    "plot_load_duration_curve", "plot_weather_overlay", "get_transformer_age", "estimate_transformer_aging",
    "compute_conductor_ampacity", "get_pole_inspection_records", "list_switching_orders",
    "compute_voltage_flicker", "get_storm_damage_reports", "estimate_restoration_time", "get_gis_parcel_data",
    "compute_phase_imbalance_index", "get_capacitor_switching_log", "get_regulator_tap_history",
    "estimate_peak_demand", "compute_demand_response_potential", "get_battery_inventory", "simulate_islanding",
    "compute_protection_coordination", "get_work_order_status", "list_field_crews", "get_billing_summary",
    "compute_power_factor_penalty", "get_ami_read_quality", "detect_energy_theft", "get_weather_station_list",
    "compute_solar_clipping", "estimate_wind_output", "get_market_bids", "compute_ancillary_revenue",
    "get_asset_health_scores", "plot_outage_heatmap", "plot_crew_locations", "get_regulatory_filings",
    "compute_rate_case_revenue", "get_customer_complaints", "summarize_planning_study",
)


def _distractor(name: str):
    def run(state, args, ctx):
        return state, Observation(f"{name}: no data for the configured study area.", None)

    words = name.replace("_", " ")
    schema = ToolSchema(name, f"Utility operations helper: {words}.",
                        (_a("feeder", "string", False, description="optional feeder filter"),))
    return schema, run


def reference_toolset() -> ToolRegistry:
    entries = FUNCTIONAL + [_distractor(n) for n in DISTRACTOR_NAMES]
    return ToolRegistry({s.name: s for s, _ in entries}, {s.name: f for s, f in entries})


FUNCTIONAL_NAMES = tuple(s.name for s, _ in FUNCTIONAL)

PROBE_ARGS: dict[str, dict[str, Any]] = {
    "load_network": {"feeder": "__first__"},
    "set_timestamp": {"timestamp": "2025-03-19T15:00"},
    "run_hosting_capacity": {"norm": "l2"},
    "run_infeasibility": {"norm": "l1"},
    "export_nodes_to_file": {"filename": "probe_nodes.txt", "voltage": 120.0},
    "export_voltages_to_file": {"filename": "probe_voltages.txt"},
    "get_component_counts": {"component": "buses"},
}


def probe_suite(fixture: GridFixture) -> dict[str, dict[str, Any]]:
    first = sorted(fixture.feeders)[0]
    suite = {k: dict(v) for k, v in PROBE_ARGS.items()}
    suite["load_network"]["feeder"] = first
    return suite


def probe_states(registry: ToolRegistry, ctx: ToolContext) -> list[EnvironmentState]:
    """Empty state plus a state holding every object the functional tools write."""
    from .core import execute_tool
    from gridflow.workflow import ToolInvocation

    suite = probe_suite(ctx.fixture)
    empty = reset(ctx.fixture.seed)
    full = empty
    for name in ("load_network", "set_timestamp", "attach_load_profile", "attach_solar_profile",
                 "run_power_flow", "run_hosting_capacity", "run_infeasibility"):
        full, obs = execute_tool(full, ToolInvocation(name, suite.get(name, {})), registry, ctx)
        if obs.is_error:
            raise RuntimeError(f"probe setup failed at {name}: {obs.text}")
    return [empty, full]
