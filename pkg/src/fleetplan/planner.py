"""End-to-end planning pipeline.

Order of operations: solve the congestion-aware routing QP, recover vehicle
loops from it, derive charging schedules, re-solve with charging-visit
constraints, then re-recover loops from the new flows and verify battery
feasibility.  If verification fails and rounds remain, scheduling and
re-routing repeat from the latest flows.  A congestion-blind baseline (all
delay slopes zeroed) runs on the same machinery for comparison.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .demand import DemandSet, validate_demands
from .energy import (
    BatteryModel,
    EnergyCurve,
    EnergyModelError,
    FULL_CHARGE,
    soc_after_charging,
    trip_energy_max,
)
from .loops import VehicleLoop, build_trip_graph, recover_loops
from .network import PwaConfig, RoadNetwork, fit_piecewise
from .qp_model import (
    BuildError,
    FlowSolution,
    approx_objective,
    build_rerouting_problem,
    build_routing_problem,
    exact_objective,
    extract_solution,
    qp_objective,
)
from .qp_solver import SolverResult, SolverSettings, solve_qp
from .scheduler import ScheduleSet, rotate_loop, schedule_charging, schedule_key

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineSettings:
    max_rounds: int = 3

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")


@dataclass
class Scenario:
    """Everything one planning run needs, immutable by convention."""

    network: RoadNetwork
    demands: DemandSet
    w_r: float
    pwa_config: PwaConfig = PwaConfig()
    curve: EnergyCurve = EnergyCurve()
    battery: BatteryModel = BatteryModel()
    solver: SolverSettings = field(default_factory=SolverSettings)
    pipeline: PipelineSettings = PipelineSettings()
    coordinates: dict[int, tuple[float, float]] | None = None
    name: str = ""

    def __post_init__(self):
        if self.w_r <= 0:
            raise ValueError(f"rebalancing weight must be > 0, got {self.w_r}")


class PlanningError(RuntimeError):
    def __init__(self, phase: str, message: str):
        super().__init__(f"[{phase}] {message}")
        self.phase = phase


@dataclass
class PhaseOutcome:
    """One solved program: flows plus all three cost readings."""

    solution: FlowSolution
    solver: SolverResult
    exact_cost: float
    approx_cost: float
    qp_cost: float


@dataclass
class CongestionSummary:
    ratios: np.ndarray
    max_ratio: float
    mean_ratio: float


@dataclass
class LoopVerdict:
    feasible: bool
    loop_flow: float
    trips: tuple[str, ...]
    min_soc: float
    detail: str


@dataclass
class PlanReport:
    scenario: Scenario
    baseline: PhaseOutcome | None
    phase1: PhaseOutcome
    phase2: PhaseOutcome | None
    loops: list[VehicleLoop]
    final_loops: list[VehicleLoop]
    schedules: ScheduleSet | None
    verdicts: list[LoopVerdict]
    rounds_used: int
    energy_feasible: bool | None

    def congestion(self, phase: str) -> CongestionSummary:
        outcome = {"baseline": self.baseline, "p1": self.phase1, "p2": self.phase2}[phase]
        if outcome is None:
            raise KeyError(f"phase {phase!r} was not computed")
        return congestion_summary(outcome.solution, self.scenario.network)


def congestion_summary(solution: FlowSolution, network: RoadNetwork) -> CongestionSummary:
    capacities = np.array([r.capacity for r in network.roads])
    ratios = solution.x_total / capacities
    return CongestionSummary(
        ratios=ratios, max_ratio=float(ratios.max()), mean_ratio=float(ratios.mean())
    )


def _solve_phase(network, pwa, program, layout, settings: SolverSettings, phase: str,
                 w_r: float, flow_tol: float = 1e-6) -> PhaseOutcome:
    result = solve_qp(program, settings)
    if not result.solved:
        raise PlanningError(phase, f"solver finished with status {result.status!r}")
    if result.status != "solved":
        log.warning("%s: solver status %s after %d iterations", phase, result.status, result.iterations)
    try:
        solution = extract_solution(layout, result.x, network, tol=flow_tol)
    except ValueError as exc:
        raise PlanningError(phase, str(exc)) from exc
    return PhaseOutcome(
        solution=solution,
        solver=result,
        exact_cost=exact_objective(network, solution, w_r),
        approx_cost=approx_objective(network, pwa, solution, w_r),
        qp_cost=qp_objective(program, result.x),
    )


def _flow_tol(demands: DemandSet) -> float:
    max_rate = max((d.rate for d in demands.demands), default=1.0)
    return 1e-6 * max(1.0, max_rate)


def baseline_congestion_unaware(scenario: Scenario) -> PhaseOutcome:
    """Route on free-flow times only; congestion is then evaluated post hoc.

    The baseline is a degenerate LP, so active-set polishing rarely lands;
    run the first-order iteration tighter instead to keep zeros clean.
    """
    pwa = tuple(fit_piecewise(r, scenario.pwa_config) for r in scenario.network.roads)
    program, layout = build_routing_problem(
        scenario.network, scenario.demands, scenario.w_r, pwa, zero_slopes=True
    )
    settings = dataclasses.replace(
        scenario.solver,
        eps_primal=max(min(scenario.solver.eps_primal, 1e-8), scenario.solver.eps_primal / 100),
        eps_dual=max(min(scenario.solver.eps_dual, 1e-8), scenario.solver.eps_dual / 100),
    )
    return _solve_phase(
        scenario.network, pwa, program, layout, settings, "baseline", scenario.w_r,
        flow_tol=_flow_tol(scenario.demands),
    )


def verify_energy_feasibility(
    solution: FlowSolution,
    loops: list[VehicleLoop],
    schedules: ScheduleSet,
    network: RoadNetwork,
    curve: EnergyCurve,
    battery: BatteryModel,
) -> list[LoopVerdict]:
    """Replay each loop's battery walk against the scheduled charging points.

    A loop is feasible when its simulated state of charge stays at or above
    the reserve at every trip boundary with charges applied exactly where the
    schedule set places them.  Loops that never hit a scheduled charge can
    only pass with zero total energy: repeated cycles would otherwise drain
    the battery no matter the starting charge.
    """
    keys = schedules.keys()
    stations = network.charging_stations
    reserve = battery.reserve_fraction
    verdicts = []
    for loop in loops:
        trips = rotate_loop(loop)
        energies = [
            trip_energy_max(t, network, curve, solution.x_total) / battery.capacity_kwh
            for t in trips
        ]
        names = tuple(t.describe() for t in trips)
        scheduled = [schedule_key(t) in keys for t in trips]
        if not any(scheduled):
            total = sum(energies)
            if total <= 1e-12:
                verdicts.append(LoopVerdict(True, loop.loop_flow, names, FULL_CHARGE,
                                            "loop consumes no energy"))
                continue
            e_bat = FULL_CHARGE
            fail = trips[0]
            passes = int(np.ceil(FULL_CHARGE / total)) + 1
            for _ in range(passes):
                stop = False
                for t, energy in zip(trips, energies):
                    e_bat -= energy
                    if e_bat < reserve:
                        fail = t
                        stop = True
                        break
                if stop:
                    break
            verdicts.append(
                LoopVerdict(False, loop.loop_flow, names, e_bat,
                            f"no scheduled charge in loop; {fail.describe()} drains below reserve")
            )
            continue

        first = scheduled.index(True)
        order = trips[first:] + trips[:first]
        en_order = energies[first:] + energies[:first]
        e_bat = FULL_CHARGE
        min_soc = FULL_CHARGE
        feasible = True
        detail = "all trip boundaries at or above reserve"
        for t, energy in zip(order, en_order):
            if schedule_key(t) in keys:
                try:
                    e_bat = soc_after_charging(t.kind, t.origin, t.destination, energy, stations)
                except EnergyModelError as exc:
                    feasible = False
                    detail = str(exc)
                    min_soc = min(min_soc, e_bat - energy)
                    break
            else:
                e_bat -= energy
            min_soc = min(min_soc, e_bat)
            if e_bat < reserve - 1e-12:
                feasible = False
                detail = f"battery at {e_bat:.1%} after {t.describe()}, below the reserve"
                break
        verdicts.append(LoopVerdict(feasible, loop.loop_flow, names, min_soc, detail))
    return verdicts


def plan(scenario: Scenario, include_baseline: bool = True, with_charging: bool = True) -> PlanReport:
    """Run the full pipeline and report everything a reviewer needs."""
    errors = validate_demands(scenario.demands, scenario.network)
    if errors:
        raise BuildError(errors)
    network, demands = scenario.network, scenario.demands
    pwa = tuple(fit_piecewise(r, scenario.pwa_config) for r in network.roads)

    baseline = baseline_congestion_unaware(scenario) if include_baseline else None

    program1, layout1 = build_routing_problem(network, demands, scenario.w_r, pwa)
    phase1 = _solve_phase(network, pwa, program1, layout1, scenario.solver, "phase1",
                          scenario.w_r, flow_tol=_flow_tol(demands))

    loops: list[VehicleLoop] = []
    final_loops: list[VehicleLoop] = []
    schedules: ScheduleSet | None = None
    verdicts: list[LoopVerdict] = []
    phase2: PhaseOutcome | None = None
    rounds_used = 0
    feasible: bool | None = None

    if with_charging:
        graph = build_trip_graph(network, demands, phase1.solution)
        loops = recover_loops(graph)
        current = schedule_charging(loops, network, scenario.curve, scenario.battery,
                                    phase1.solution.x_total)
        for round_index in range(1, scenario.pipeline.max_rounds + 1):
            rounds_used = round_index
            program2, layout2 = build_rerouting_problem(
                network, demands, scenario.w_r, pwa, current
            )
            phase2 = _solve_phase(
                network, pwa, program2, layout2, scenario.solver,
                f"phase2(round {round_index})", scenario.w_r, flow_tol=_flow_tol(demands),
            )
            final_loops = recover_loops(build_trip_graph(network, demands, phase2.solution))
            verdicts = verify_energy_feasibility(
                phase2.solution, final_loops, current, network, scenario.curve, scenario.battery
            )
            feasible = all(v.feasible for v in verdicts)
            schedules = current
            if feasible:
                break
            log.info("round %d: %d of %d loops infeasible",
                     round_index, sum(not v.feasible for v in verdicts), len(verdicts))
            if round_index < scenario.pipeline.max_rounds:
                current = schedule_charging(
                    final_loops, network, scenario.curve, scenario.battery,
                    phase2.solution.x_total,
                )

    return PlanReport(
        scenario=scenario,
        baseline=baseline,
        phase1=phase1,
        phase2=phase2,
        loops=loops,
        final_loops=final_loops,
        schedules=schedules,
        verdicts=verdicts,
        rounds_used=rounds_used,
        energy_feasible=feasible,
    )
