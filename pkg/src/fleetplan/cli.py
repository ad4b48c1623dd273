"""Command-line surface: plan, validate, render.

``plan`` writes a report bundle into the output directory:

    report.json     full machine-readable plan report
    flows.csv       one row per edge per phase (u, r, p, x, ratio)
    loops.json      recovered vehicle loops
    schedules.json  charging schedule set
    network.svg     road map of the final phase (matplotlib)
    network.dot     same view as Graphviz source
    congestion.svg  per-road congestion bars across phases

Exit codes: 0 success, 1 invalid input, 2 solver failure, 3 energy
infeasibility (the bundle is still written when the pipeline completed).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .demand import validate_demands
from .energy import TripInfeasibleError
from .planner import (
    PhaseOutcome,
    PipelineSettings,
    PlanningError,
    PlanReport,
    Scenario,
    baseline_congestion_unaware,
    congestion_summary,
    plan,
)
from .qp_model import BuildError
from .render import RenderError, render_congestion_chart, render_network, write_dot
from .scenario_io import ScenarioError, load_scenario, scenario_to_dict

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_SOLVER = 2
EXIT_ENERGY = 3


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _phase_doc(outcome: PhaseOutcome, scenario: Scenario) -> dict:
    network = scenario.network
    summary = congestion_summary(outcome.solution, network)
    edges = []
    for e, road in enumerate(network.roads):
        edges.append(
            {
                "from": road.from_node,
                "to": road.to_node,
                "gamma": road.capacity,
                "u": float(outcome.solution.u_total[e]),
                "r": float(outcome.solution.r_total[e]),
                "p": float(outcome.solution.private[e]),
                "x": float(outcome.solution.x_total[e]),
                "ratio": float(summary.ratios[e]),
            }
        )
    return {
        "edges": edges,
        "exact_cost": outcome.exact_cost,
        "approx_cost": outcome.approx_cost,
        "qp_cost": outcome.qp_cost,
        "max_ratio": summary.max_ratio,
        "mean_ratio": summary.mean_ratio,
        "solver": {
            "status": outcome.solver.status,
            "iterations": outcome.solver.iterations,
            "primal_residual": outcome.solver.primal_residual,
            "dual_residual": outcome.solver.dual_residual,
            "polished": outcome.solver.polished,
        },
    }


def _loops_doc(loops) -> list[dict]:
    out = []
    for loop in loops:
        out.append(
            {
                "flow": loop.loop_flow,
                "trips": [
                    {
                        "kind": t.kind,
                        "origin": t.origin,
                        "destination": t.destination,
                        "flow": t.flow,
                        **({"demand": t.demand_index} if t.demand_index is not None else {}),
                    }
                    for t in loop.trips
                ],
            }
        )
    return out


def report_to_dict(report: PlanReport) -> dict:
    doc: dict = {"scenario": scenario_to_dict(report.scenario), "phases": {}}
    if report.baseline is not None:
        doc["phases"]["baseline"] = _phase_doc(report.baseline, report.scenario)
    doc["phases"]["p1"] = _phase_doc(report.phase1, report.scenario)
    if report.phase2 is not None:
        doc["phases"]["p2"] = _phase_doc(report.phase2, report.scenario)
    doc["loops"] = _loops_doc(report.loops)
    doc["final_loops"] = _loops_doc(report.final_loops)
    if report.schedules is not None:
        doc["schedules"] = [
            {"origin": s.origin, "destination": s.destination, "flow": s.flow}
            for s in report.schedules.schedules
        ]
    doc["energy"] = {
        "feasible": report.energy_feasible,
        "rounds_used": report.rounds_used,
        "verdicts": [
            {
                "feasible": v.feasible,
                "loop_flow": v.loop_flow,
                "min_soc": v.min_soc,
                "detail": v.detail,
                "trips": list(v.trips),
            }
            for v in report.verdicts
        ],
    }
    return doc


def _flows_csv(doc: dict) -> str:
    lines = ["phase,from,to,u,r,p,x,ratio"]
    for phase in ("baseline", "p1", "p2"):
        if phase not in doc["phases"]:
            continue
        for e in doc["phases"][phase]["edges"]:
            lines.append(
                f'{phase},{e["from"]},{e["to"]},{e["u"]:.10g},{e["r"]:.10g},'
                f'{e["p"]:.10g},{e["x"]:.10g},{e["ratio"]:.10g}'
            )
    return "\n".join(lines) + "\n"


def write_bundle(doc: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(out_dir / "report.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _atomic_write(out_dir / "flows.csv", _flows_csv(doc))
    if "loops" in doc:
        _atomic_write(out_dir / "loops.json", json.dumps(doc["loops"], indent=2) + "\n")
    if "schedules" in doc:
        _atomic_write(out_dir / "schedules.json", json.dumps(doc["schedules"], indent=2) + "\n")
    final_phase = "p2" if "p2" in doc["phases"] else ("p1" if "p1" in doc["phases"] else "baseline")
    render_network(doc, final_phase, out_dir / "network.svg")
    write_dot(doc, final_phase, out_dir / "network.dot")
    render_congestion_chart(doc, out_dir / "congestion.svg")


def cmd_plan(args) -> int:
    try:
        scenario = load_scenario(args.scenario, seed_override=args.seed)
        if args.rounds is not None:
            scenario = dataclasses.replace(
                scenario, pipeline=PipelineSettings(max_rounds=args.rounds)
            )
    except ScenarioError as exc:
        for line in exc.errors:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out_dir = Path(args.out_dir)
    try:
        if args.baseline_only:
            outcome = baseline_congestion_unaware(scenario)
            doc = {
                "scenario": scenario_to_dict(scenario),
                "phases": {"baseline": _phase_doc(outcome, scenario)},
            }
            try:
                write_bundle(doc, out_dir)
            except OSError as exc:
                print(f"error: cannot write bundle: {exc}", file=sys.stderr)
                return EXIT_INVALID
            print(f"baseline written to {out_dir}")
            return EXIT_OK
        report = plan(
            scenario,
            include_baseline=not args.no_baseline,
            with_charging=not args.no_charging,
        )
    except (BuildError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except PlanningError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except TripInfeasibleError as exc:
        print(f"energy infeasibility: {exc}", file=sys.stderr)
        return EXIT_ENERGY
    doc = report_to_dict(report)
    if args.no_charging:
        doc.pop("schedules", None)
        doc.pop("loops", None)
        doc.pop("final_loops", None)
        doc.pop("energy", None)
    try:
        write_bundle(doc, out_dir)
    except OSError as exc:
        print(f"error: cannot write bundle: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if report.energy_feasible is False:
        print(
            f"plan written to {out_dir}, but energy constraints remain infeasible "
            f"after {report.rounds_used} round(s)",
            file=sys.stderr,
        )
        return EXIT_ENERGY
    print(f"plan written to {out_dir}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        for line in exc.errors:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_INVALID
    problems = validate_demands(scenario.demands, scenario.network)
    if problems:
        for line in problems:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_INVALID
    print(
        f"scenario OK: {len(scenario.network.nodes)} nodes, "
        f"{scenario.network.n_edges} edges, {len(scenario.demands)} demands, "
        f"{len(scenario.network.charging_stations)} charging station(s)"
    )
    return EXIT_OK


def cmd_render(args) -> int:
    try:
        doc = json.loads(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read report: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        render_network(doc, args.phase, args.out)
    except (RenderError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"rendered {args.phase} to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fleetplan",
        description="Congestion-aware routing, rebalancing, and charging planner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="run the full pipeline and write a report bundle")
    p_plan.add_argument("scenario", help="scenario JSON file")
    p_plan.add_argument("out_dir", help="output directory for the bundle")
    p_plan.add_argument("--baseline-only", action="store_true",
                        help="solve only the congestion-unaware baseline")
    p_plan.add_argument("--no-charging", action="store_true",
                        help="stop after the congestion-aware routing phase")
    p_plan.add_argument("--no-baseline", action="store_true",
                        help="skip the congestion-blind comparison solve")
    p_plan.add_argument("--rounds", type=int, default=None,
                        help="override the scheduling/re-routing round budget")
    p_plan.add_argument("--seed", type=int, default=None,
                        help="override the private-flow random seed")
    p_plan.set_defaults(func=cmd_plan)

    p_val = sub.add_parser("validate", help="check a scenario file without solving")
    p_val.add_argument("scenario", help="scenario JSON file")
    p_val.set_defaults(func=cmd_validate)

    p_render = sub.add_parser("render", help="render a network figure from a report")
    p_render.add_argument("report", help="report.json produced by plan")
    p_render.add_argument("out", help="output SVG path")
    p_render.add_argument("--phase", choices=("baseline", "p1", "p2"), default="p2")
    p_render.set_defaults(func=cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    wanted = os.environ.get("FLEETPLAN_LOG", "WARNING").upper()
    level = getattr(logging, wanted, None)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING)
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
