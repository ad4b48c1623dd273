"""Scenario JSON parsing, validation, and canonical re-serialization.

The file format is strict: unknown keys anywhere are rejected so typos fail
loudly instead of silently falling back to defaults.  Private flows may be
given per edge (``p``) or drawn once from a seeded uniform range
(``p_random``); the canonical serialized form always carries the resolved
per-edge values.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .demand import DemandSet, TravelDemand
from .energy import BatteryModel, EnergyCurve
from .network import NetworkError, PwaConfig, PwaConfigError, Road, RoadNetwork
from .planner import PipelineSettings, Scenario
from .qp_solver import SolverSettings

_TOP_KEYS = {
    "name", "comments", "nodes", "edges", "p_random", "demands", "weights",
    "pwa", "energy_curve", "battery", "solver", "pipeline",
}
_NODE_KEYS = {"id", "charging", "x", "y"}
_EDGE_KEYS = {"from", "to", "t0", "gamma", "length", "p"}
_DEMAND_KEYS = {"o", "d", "alpha"}
_WEIGHT_KEYS = {"w_r"}
_PWA_KEYS = {"f1", "f2", "l1", "l2"}
_BATTERY_KEYS = {"capacity_kwh", "reserve"}
_SOLVER_KEYS = {
    "max_iterations", "eps_primal", "eps_dual", "rho", "alpha_relax",
    "adaptive_rho", "polish", "seed",
}
_PIPELINE_KEYS = {"max_rounds"}
_P_RANDOM_KEYS = {"min", "max", "seed"}


class ScenarioError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def seed_scenario_path() -> Path:
    """Path of the bundled demo scenario (8 nodes, 22 edges, 10 demands)."""
    return Path(resources.files("fleetplan").joinpath("data/fig2_table1.json"))


def _check_keys(section: str, obj: dict, allowed: set[str], errors: list[str]):
    unknown = set(obj) - allowed
    if unknown:
        errors.append(f"{section}: unknown keys {sorted(unknown)}")


def load_scenario(path: str | Path, seed_override: int | None = None) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError([f"cannot read scenario file: {exc}"]) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(
            [f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"]
        ) from exc
    return parse_scenario(doc, seed_override=seed_override, name_default=path.stem)


def parse_scenario(doc, seed_override: int | None = None, name_default: str = "") -> Scenario:
    errors: list[str] = []
    if not isinstance(doc, dict):
        raise ScenarioError(["scenario document must be a JSON object"])
    _check_keys("scenario", doc, _TOP_KEYS, errors)

    for required in ("nodes", "edges", "demands", "weights"):
        if required not in doc:
            errors.append(f"scenario: missing required section {required!r}")
        elif required == "weights" and not isinstance(doc[required], dict):
            errors.append("weights: must be an object")
        elif required != "weights" and not isinstance(doc[required], list):
            errors.append(f"{required}: must be a list")
    for section in ("pwa", "battery", "solver", "pipeline", "p_random"):
        if section in doc and not isinstance(doc[section], dict):
            errors.append(f"{section}: must be an object")
    if errors:
        raise ScenarioError(errors)

    node_ids: list[int] = []
    stations: set[int] = set()
    coords: dict[int, tuple[float, float]] = {}
    for i, node in enumerate(doc["nodes"]):
        if not isinstance(node, dict):
            errors.append(f"nodes[{i}]: must be an object")
            continue
        _check_keys(f"nodes[{i}]", node, _NODE_KEYS, errors)
        if "id" not in node:
            errors.append(f"nodes[{i}]: missing id")
            continue
        nid = node["id"]
        node_ids.append(nid)
        if node.get("charging", False):
            stations.add(nid)
        if ("x" in node) != ("y" in node):
            errors.append(f"nodes[{i}]: coordinates need both x and y")
        elif "x" in node:
            coords[nid] = (float(node["x"]), float(node["y"]))
    if len(set(node_ids)) != len(node_ids):
        errors.append("nodes: duplicate node ids")

    p_random = doc.get("p_random")
    if p_random is not None:
        _check_keys("p_random", p_random, _P_RANDOM_KEYS, errors)
        for k in ("min", "max", "seed"):
            if k not in p_random:
                errors.append(f"p_random: missing {k!r}")

    edge_specs = []
    missing_p: list[int] = []
    for i, edge in enumerate(doc["edges"]):
        if not isinstance(edge, dict):
            errors.append(f"edges[{i}]: must be an object")
            continue
        _check_keys(f"edges[{i}]", edge, _EDGE_KEYS, errors)
        absent = {"from", "to", "t0", "gamma", "length"} - set(edge)
        if absent:
            errors.append(f"edges[{i}]: missing keys {sorted(absent)}")
            continue
        edge_specs.append(edge)
        if "p" not in edge:
            missing_p.append(len(edge_specs) - 1)
    if missing_p and p_random is None:
        errors.append(
            f"{len(missing_p)} edges lack a private flow 'p' and no p_random section is given"
        )
    if errors:
        raise ScenarioError(errors)

    p_values = [float(e.get("p", 0.0)) for e in edge_specs]
    if missing_p and p_random is not None:
        seed = int(p_random["seed"]) if seed_override is None else seed_override
        lo, hi = float(p_random["min"]), float(p_random["max"])
        if not 0 <= lo <= hi:
            errors.append(f"p_random: need 0 <= min <= max, got [{lo}, {hi}]")
            raise ScenarioError(errors)
        rng = np.random.default_rng(seed)
        draws = rng.uniform(lo, hi, size=len(missing_p))
        for slot, value in zip(missing_p, draws):
            p_values[slot] = float(value)

    try:
        roads = tuple(
            Road(
                from_node=e["from"],
                to_node=e["to"],
                free_flow_time=float(e["t0"]),
                capacity=float(e["gamma"]),
                length=float(e["length"]),
                private_flow=p_values[i],
            )
            for i, e in enumerate(edge_specs)
        )
        network = RoadNetwork(
            nodes=frozenset(node_ids), roads=roads, charging_stations=frozenset(stations)
        )
    except NetworkError as exc:
        raise ScenarioError([str(exc)]) from exc

    demand_list = []
    for i, dem in enumerate(doc["demands"]):
        if not isinstance(dem, dict):
            errors.append(f"demands[{i}]: must be an object")
            continue
        _check_keys(f"demands[{i}]", dem, _DEMAND_KEYS, errors)
        absent = _DEMAND_KEYS - set(dem)
        if absent:
            errors.append(f"demands[{i}]: missing keys {sorted(absent)}")
            continue
        demand_list.append(TravelDemand(dem["o"], dem["d"], float(dem["alpha"])))
    demands = DemandSet(tuple(demand_list))

    weights = doc["weights"]
    _check_keys("weights", weights, _WEIGHT_KEYS, errors)
    if "w_r" not in weights:
        errors.append("weights: missing w_r")
    if errors:
        raise ScenarioError(errors)

    pwa_doc = doc.get("pwa", {})
    _check_keys("pwa", pwa_doc, _PWA_KEYS, errors)
    battery_doc = doc.get("battery", {})
    _check_keys("battery", battery_doc, _BATTERY_KEYS, errors)
    solver_doc = doc.get("solver", {})
    _check_keys("solver", solver_doc, _SOLVER_KEYS, errors)
    pipeline_doc = doc.get("pipeline", {})
    _check_keys("pipeline", pipeline_doc, _PIPELINE_KEYS, errors)
    if errors:
        raise ScenarioError(errors)

    try:
        defaults = PwaConfig()
        pwa_config = PwaConfig(
            break1_frac=float(pwa_doc.get("f1", defaults.break1_frac)),
            break2_frac=float(pwa_doc.get("f2", defaults.break2_frac)),
            slope_mid_norm=float(pwa_doc.get("l1", defaults.slope_mid_norm)),
            slope_high_norm=float(pwa_doc.get("l2", defaults.slope_high_norm)),
        )
        curve_doc = doc.get("energy_curve")
        if curve_doc is None:
            curve = EnergyCurve()
        else:
            curve = EnergyCurve(
                speeds=tuple(float(pair[0]) for pair in curve_doc),
                rates=tuple(float(pair[1]) for pair in curve_doc),
            )
        battery = BatteryModel(
            capacity_kwh=float(battery_doc.get("capacity_kwh", 50.0)),
            reserve_fraction=float(battery_doc.get("reserve", 0.10)),
        )
        base = SolverSettings()
        solver = SolverSettings(
            max_iterations=int(solver_doc.get("max_iterations", base.max_iterations)),
            eps_primal=float(solver_doc.get("eps_primal", base.eps_primal)),
            eps_dual=float(solver_doc.get("eps_dual", base.eps_dual)),
            rho=float(solver_doc.get("rho", base.rho)),
            alpha_relax=float(solver_doc.get("alpha_relax", base.alpha_relax)),
            adaptive_rho=bool(solver_doc.get("adaptive_rho", base.adaptive_rho)),
            polish=bool(solver_doc.get("polish", base.polish)),
            seed=int(solver_doc.get("seed", base.seed)),
        )
        pipeline = PipelineSettings(max_rounds=int(pipeline_doc.get("max_rounds", 3)))
        scenario = Scenario(
            network=network,
            demands=demands,
            w_r=float(weights["w_r"]),
            pwa_config=pwa_config,
            curve=curve,
            battery=battery,
            solver=solver,
            pipeline=pipeline,
            coordinates=coords if len(coords) == len(set(node_ids)) else None,
            name=str(doc.get("name", name_default)),
        )
    except (PwaConfigError, ValueError) as exc:
        raise ScenarioError([str(exc)]) from exc
    return scenario


def scenario_to_dict(scenario: Scenario) -> dict:
    """Canonical, fully resolved form; parsing it reproduces the scenario."""
    nodes = []
    for nid in sorted(scenario.network.nodes):
        node: dict = {"id": nid}
        if nid in scenario.network.charging_stations:
            node["charging"] = True
        if scenario.coordinates and nid in scenario.coordinates:
            node["x"], node["y"] = scenario.coordinates[nid]
        nodes.append(node)
    edges = [
        {
            "from": r.from_node,
            "to": r.to_node,
            "t0": r.free_flow_time,
            "gamma": r.capacity,
            "length": r.length,
            "p": r.private_flow,
        }
        for r in scenario.network.roads
    ]
    demands = [
        {"o": d.origin, "d": d.destination, "alpha": d.rate}
        for d in scenario.demands.demands
    ]
    doc = {
        "name": scenario.name,
        "nodes": nodes,
        "edges": edges,
        "demands": demands,
        "weights": {"w_r": scenario.w_r},
        "pwa": {
            "f1": scenario.pwa_config.break1_frac,
            "f2": scenario.pwa_config.break2_frac,
            "l1": scenario.pwa_config.slope_mid_norm,
            "l2": scenario.pwa_config.slope_high_norm,
        },
        "energy_curve": [list(pair) for pair in zip(scenario.curve.speeds, scenario.curve.rates)],
        "battery": {
            "capacity_kwh": scenario.battery.capacity_kwh,
            "reserve": scenario.battery.reserve_fraction,
        },
        "solver": {
            "max_iterations": scenario.solver.max_iterations,
            "eps_primal": scenario.solver.eps_primal,
            "eps_dual": scenario.solver.eps_dual,
            "rho": scenario.solver.rho,
            "alpha_relax": scenario.solver.alpha_relax,
            "adaptive_rho": scenario.solver.adaptive_rho,
            "polish": scenario.solver.polish,
            "seed": scenario.solver.seed,
        },
        "pipeline": {"max_rounds": scenario.pipeline.max_rounds},
    }
    return doc
