"""Congestion-aware routing, rebalancing, and charging planner for electric
robotaxi fleets."""

from .demand import DemandSet, TravelDemand, net_rebalancing_flow, validate_demands
from .energy import BatteryModel, EnergyCurve, edge_energy, soc_after_charging, trip_energy_max
from .loops import Trip, TripGraph, VehicleLoop, build_trip_graph, recover_loops
from .network import (
    PiecewiseTravelTime,
    PwaConfig,
    Road,
    RoadNetwork,
    bpr_travel_time,
    compute_slacks,
    congestion_ratio,
    fit_piecewise,
    pwa_travel_time,
)
from .planner import (
    PipelineSettings,
    PlanReport,
    Scenario,
    baseline_congestion_unaware,
    congestion_summary,
    plan,
    verify_energy_feasibility,
)
from .qp_model import (
    FlowSolution,
    QuadraticProgram,
    VariableLayout,
    approx_objective,
    build_rerouting_problem,
    build_routing_problem,
    exact_objective,
    extract_solution,
    qp_objective,
)
from .qp_solver import SolverResult, SolverSettings, kkt_residuals, solve_qp
from .scenario_io import load_scenario, parse_scenario, scenario_to_dict, seed_scenario_path
from .scheduler import ChargingSchedule, ScheduleSet, merge_schedules, schedule_charging

__version__ = "0.1.0"
