"""Assembly of the routing/rebalancing quadratic program and its objectives.

Variables are per-commodity edge flows (one commodity per customer demand,
one per surviving rebalancing origin-destination pair, one per scheduled
charging loop) plus two excess-flow slacks per edge.  The quadratic cost
lives on the slacks only, so the program is convex by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .demand import DemandSet, net_rebalancing_flow
from .network import PiecewiseTravelTime, RoadNetwork, bpr_travel_time, pwa_travel_time

CUSTOMER = "customer"
REBALANCE = "rebalance"
CHARGE_LOOP = "charge_loop"


class BuildError(ValueError):
    """Structural infeasibility or inconsistency detected while assembling."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class Commodity:
    """One routed flow: a customer demand, an empty-vehicle relocation pair,
    or a charging loop anchored at a single node."""

    kind: str
    origin: int
    destination: int
    demand_index: int | None = None

    @property
    def key(self) -> tuple[int, int]:
        return (self.origin, self.destination)


@dataclass(frozen=True)
class VariableLayout:
    """Canonical variable ordering: commodity flows by edge, then both slack blocks."""

    commodities: tuple[Commodity, ...]
    n_edges: int

    @property
    def n_flow_vars(self) -> int:
        return len(self.commodities) * self.n_edges

    @property
    def n_vars(self) -> int:
        return self.n_flow_vars + 2 * self.n_edges

    def flow_var(self, commodity_idx: int, edge_idx: int) -> int:
        return commodity_idx * self.n_edges + edge_idx

    def slack1_var(self, edge_idx: int) -> int:
        return self.n_flow_vars + edge_idx

    def slack2_var(self, edge_idx: int) -> int:
        return self.n_flow_vars + self.n_edges + edge_idx

    def customer_rows(self) -> list[int]:
        return [i for i, c in enumerate(self.commodities) if c.kind == CUSTOMER]

    def rebalance_rows(self) -> list[int]:
        return [i for i, c in enumerate(self.commodities) if c.kind != CUSTOMER]

    def find(self, kind: str, origin: int, destination: int) -> int | None:
        for i, c in enumerate(self.commodities):
            if c.kind == kind and c.origin == origin and c.destination == destination:
                return i
        return None


@dataclass
class QuadraticProgram:
    """Convex QP in split form: equalities, two-sided inequalities, variable bounds.

    Costs are 0.5 x'Px + q'x with P diagonal and non-negative.
    """

    P: sp.csc_matrix
    q: np.ndarray
    A_eq: sp.csc_matrix
    b_eq: np.ndarray
    A_ineq: sp.csc_matrix
    l_ineq: np.ndarray
    u_ineq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    @property
    def n_vars(self) -> int:
        return self.q.shape[0]


@dataclass
class FlowSolution:
    """Per-commodity edge flows with slacks and the derived edge totals."""

    layout: VariableLayout
    flows: np.ndarray  # (n_commodities, n_edges)
    excess1: np.ndarray
    excess2: np.ndarray
    private: np.ndarray
    u_total: np.ndarray = field(init=False)
    r_total: np.ndarray = field(init=False)
    x_total: np.ndarray = field(init=False)

    def __post_init__(self):
        cust = self.layout.customer_rows()
        reb = self.layout.rebalance_rows()
        self.u_total = self.flows[cust].sum(axis=0) if cust else np.zeros(self.layout.n_edges)
        self.r_total = self.flows[reb].sum(axis=0) if reb else np.zeros(self.layout.n_edges)
        self.x_total = self.u_total + self.r_total + self.private

    def commodity_flow(self, commodity_idx: int) -> np.ndarray:
        return self.flows[commodity_idx]


def rebalance_pairs(demands: DemandSet, prune: bool = True) -> list[tuple[int, int]]:
    """Ordered (source, sink) relocation pairs; pruning drops pairs the
    net-balance equalities force to zero anyway."""
    sources = sorted(demands.destinations)
    sinks = sorted(demands.origins)
    if prune:
        sources = [a for a in sources if net_rebalancing_flow(demands, a) > 0]
        sinks = [b for b in sinks if net_rebalancing_flow(demands, b) < 0]
    return [(a, b) for a in sources for b in sinks]


def _commodity_list(demands: DemandSet, pairs, schedules) -> tuple[Commodity, ...]:
    commodities = [
        Commodity(CUSTOMER, d.origin, d.destination, demand_index=m)
        for m, d in enumerate(demands.demands)
    ]
    commodities += [Commodity(REBALANCE, a, b) for a, b in pairs]
    if schedules is not None:
        for s in schedules.schedules:
            if s.origin == s.destination:
                commodities.append(Commodity(CHARGE_LOOP, s.origin, s.destination))
    return tuple(commodities)


def _structural_errors(network: RoadNetwork, layout: VariableLayout, schedules) -> list[str]:
    errors = []
    reach_cache: dict[int, set[int]] = {}

    def reach(node: int) -> set[int]:
        if node not in reach_cache:
            reach_cache[node] = network.reachable_from(node)
        return reach_cache[node]

    for c in layout.commodities:
        tag = f"{c.kind} commodity {c.origin} -> {c.destination}"
        if c.origin not in network.nodes or c.destination not in network.nodes:
            errors.append(f"{tag}: endpoint is not a network node")
            continue
        if not network.out_edges.get(c.origin, ()):
            errors.append(f"{tag}: origin has no outgoing road")
            continue
        if c.kind == CHARGE_LOOP:
            # Needs a cycle through the anchor that can touch a charging station.
            ok = False
            for k in network.out_edges[c.origin]:
                succ = network.roads[k].to_node
                reachable = reach(succ)
                if c.origin in reachable and any(
                    s in reachable and c.origin in reach(s) for s in network.charging_stations
                ):
                    ok = True
                    break
            if not ok:
                errors.append(f"{tag}: no charging-station cycle through node {c.origin}")
        else:
            if not network.in_edges.get(c.destination, ()):
                errors.append(f"{tag}: destination has no incoming road")
            elif c.destination not in reach(c.origin):
                errors.append(f"{tag}: destination unreachable from origin")
    if schedules is not None:
        for s in schedules.schedules:
            if s.origin != s.destination:
                if layout.find(REBALANCE, s.origin, s.destination) is None:
                    errors.append(
                        f"schedule ({s.origin}, {s.destination}) matches no rebalance commodity"
                    )
                elif s.origin not in network.charging_stations and not any(
                    c in reach(s.origin) and s.destination in reach(c)
                    for c in network.charging_stations
                ):
                    errors.append(
                        f"schedule ({s.origin}, {s.destination}): no charging station on any route"
                    )
    return errors


class _RowBuffer:
    """Accumulates sparse rows expressed as {variable: coefficient} maps."""

    def __init__(self):
        self.data: list[float] = []
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.n_rows = 0

    def add(self, coeffs: dict[int, float]):
        for var, val in coeffs.items():
            self.rows.append(self.n_rows)
            self.cols.append(var)
            self.data.append(val)
        self.n_rows += 1

    def matrix(self, n_vars: int) -> sp.csc_matrix:
        return sp.csc_matrix(
            (self.data, (self.rows, self.cols)), shape=(self.n_rows, n_vars)
        )


def _build(
    network: RoadNetwork,
    demands: DemandSet,
    w_r: float,
    pwa: tuple[PiecewiseTravelTime, ...],
    schedules=None,
    prune: bool = True,
    zero_slopes: bool = False,
) -> tuple[QuadraticProgram, VariableLayout]:
    if w_r <= 0:
        raise BuildError([f"rebalancing weight must be > 0, got {w_r}"])
    if len(pwa) != network.n_edges:
        raise BuildError(["piecewise fit list does not match the edge count"])

    pairs = rebalance_pairs(demands, prune=prune)
    layout = VariableLayout(_commodity_list(demands, pairs, schedules), network.n_edges)
    errors = _structural_errors(network, layout, schedules)
    if errors:
        raise BuildError(errors)

    n = layout.n_vars
    E = network.n_edges
    q = np.zeros(n)
    p_diag = np.zeros(n)

    for ci, c in enumerate(layout.commodities):
        for e, road in enumerate(network.roads):
            if c.kind == CUSTOMER:
                q[layout.flow_var(ci, e)] = road.free_flow_time
            else:
                q[layout.flow_var(ci, e)] = w_r
    if not zero_slopes:
        for e, road in enumerate(network.roads):
            a = pwa[e].slope_mid
            b = pwa[e].slope_high
            t0 = road.free_flow_time
            q[layout.slack1_var(e)] = a * t0 * (pwa[e].x_break1 - road.private_flow)
            q[layout.slack2_var(e)] = b * t0 * (pwa[e].x_break2 - road.private_flow) + a * t0 * (
                pwa[e].x_break2 - pwa[e].x_break1
            )
            p_diag[layout.slack1_var(e)] = 2.0 * a * t0
            p_diag[layout.slack2_var(e)] = 2.0 * b * t0

    eq = _RowBuffer()
    b_eq: list[float] = []

    def conservation_rows(ci: int, skip: set[int]):
        for j in sorted(network.nodes):
            if j in skip:
                continue
            row: dict[int, float] = {}
            for k in network.in_edges.get(j, ()):
                row[layout.flow_var(ci, k)] = row.get(layout.flow_var(ci, k), 0.0) + 1.0
            for k in network.out_edges.get(j, ()):
                row[layout.flow_var(ci, k)] = row.get(layout.flow_var(ci, k), 0.0) - 1.0
            if row:
                eq.add(row)
                b_eq.append(0.0)

    def boundary_row(ci: int, node: int, incoming: bool, rhs: float):
        edges = network.in_edges.get(node, ()) if incoming else network.out_edges.get(node, ())
        row = {layout.flow_var(ci, k): 1.0 for k in edges}
        eq.add(row)
        b_eq.append(rhs)

    # Customer commodities: conservation plus pinned departure/arrival rates.
    # Arrivals back at the origin and departures from the destination are
    # forbidden outright; otherwise, under heavy congestion, the optimum can
    # "serve" a demand with local circulations at its endpoints instead of
    # actually delivering flow (the relocation block below rules this out
    # for its commodities the same way).
    for ci, c in enumerate(layout.commodities):
        if c.kind != CUSTOMER:
            continue
        rate = demands.demands[c.demand_index].rate
        conservation_rows(ci, {c.origin, c.destination})
        boundary_row(ci, c.origin, incoming=False, rhs=rate)
        boundary_row(ci, c.destination, incoming=True, rhs=rate)
        if network.in_edges.get(c.origin, ()):
            boundary_row(ci, c.origin, incoming=True, rhs=0.0)
        if network.out_edges.get(c.destination, ()):
            boundary_row(ci, c.destination, incoming=False, rhs=0.0)

    # Rebalance commodities: conservation away from their endpoints, and the
    # four per-node aggregate balance rows across all pairs.
    reb = [(ci, c) for ci, c in enumerate(layout.commodities) if c.kind == REBALANCE]
    for ci, c in reb:
        conservation_rows(ci, {c.origin, c.destination})

    structural = []
    for b in sorted(demands.origins):
        net = net_rebalancing_flow(demands, b)
        arrive = max(0.0, -net)
        row = {}
        for ci, c in reb:
            if c.destination == b:
                for k in network.in_edges.get(b, ()):
                    var = layout.flow_var(ci, k)
                    row[var] = row.get(var, 0.0) + 1.0
        if row:
            eq.add(row)
            b_eq.append(arrive)
        elif arrive > 0:
            structural.append(f"node {b} needs {arrive} rebalancing inflow but no pair serves it")
        depart_zero = {}
        for ci, c in reb:
            if c.destination == b:
                for k in network.out_edges.get(b, ()):
                    var = layout.flow_var(ci, k)
                    depart_zero[var] = depart_zero.get(var, 0.0) + 1.0
        if depart_zero:
            eq.add(depart_zero)
            b_eq.append(0.0)
    for a in sorted(demands.destinations):
        net = net_rebalancing_flow(demands, a)
        depart = max(0.0, net)
        row = {}
        for ci, c in reb:
            if c.origin == a:
                for k in network.out_edges.get(a, ()):
                    var = layout.flow_var(ci, k)
                    row[var] = row.get(var, 0.0) + 1.0
        if row:
            eq.add(row)
            b_eq.append(depart)
        elif depart > 0:
            structural.append(f"node {a} needs {depart} rebalancing outflow but no pair serves it")
        arrive_zero = {}
        for ci, c in reb:
            if c.origin == a:
                for k in network.in_edges.get(a, ()):
                    var = layout.flow_var(ci, k)
                    arrive_zero[var] = arrive_zero.get(var, 0.0) + 1.0
        if arrive_zero:
            eq.add(arrive_zero)
            b_eq.append(0.0)
    if structural:
        raise BuildError(structural)

    ineq = _RowBuffer()
    l_ineq: list[float] = []
    u_ineq: list[float] = []

    # Charging loops: forced circulation through the anchor node, required to
    # pass a charging station; mid-trip station visits for scheduled pairs.
    if schedules is not None:
        for s in schedules.schedules:
            if s.origin == s.destination:
                ci = layout.find(CHARGE_LOOP, s.origin, s.destination)
                boundary_row(ci, s.origin, incoming=False, rhs=s.flow)
                boundary_row(ci, s.origin, incoming=True, rhs=s.flow)
                conservation_rows(ci, {s.origin})
                station_row = {}
                for c_node in sorted(network.charging_stations):
                    for k in network.in_edges.get(c_node, ()):
                        var = layout.flow_var(ci, k)
                        station_row[var] = station_row.get(var, 0.0) + 1.0
                ineq.add(station_row)
                l_ineq.append(s.flow)
                u_ineq.append(np.inf)
            elif s.origin not in network.charging_stations:
                # Vehicles departing a station charge before leaving (the
                # origin-charge branch of the SoC table), so only trips from
                # non-station origins must detour into a station en route.
                ci = layout.find(REBALANCE, s.origin, s.destination)
                station_row = {}
                for c_node in sorted(network.charging_stations):
                    for k in network.in_edges.get(c_node, ()):
                        var = layout.flow_var(ci, k)
                        station_row[var] = station_row.get(var, 0.0) + 1.0
                ineq.add(station_row)
                l_ineq.append(s.flow)
                u_ineq.append(np.inf)

    # Excess-flow inequalities per edge, with the total flow expanded into
    # commodity flows plus the constant private part.
    for e, road in enumerate(network.roads):
        row1 = {layout.flow_var(ci, e): -1.0 for ci in range(len(layout.commodities))}
        row1[layout.slack1_var(e)] = 1.0
        row1[layout.slack2_var(e)] = 1.0
        ineq.add(row1)
        l_ineq.append(road.private_flow - pwa[e].x_break1)
        u_ineq.append(np.inf)

        row2 = {layout.flow_var(ci, e): -1.0 for ci in range(len(layout.commodities))}
        row2[layout.slack2_var(e)] = 1.0
        ineq.add(row2)
        l_ineq.append(road.private_flow - pwa[e].x_break2)
        u_ineq.append(np.inf)

    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    for e in range(E):
        ub[layout.slack1_var(e)] = pwa[e].excess1_cap

    program = QuadraticProgram(
        P=sp.diags(p_diag, format="csc"),
        q=q,
        A_eq=eq.matrix(n),
        b_eq=np.asarray(b_eq),
        A_ineq=ineq.matrix(n),
        l_ineq=np.asarray(l_ineq),
        u_ineq=np.asarray(u_ineq),
        lb=lb,
        ub=ub,
    )
    return program, layout


def build_routing_problem(
    network: RoadNetwork,
    demands: DemandSet,
    w_r: float,
    pwa: tuple[PiecewiseTravelTime, ...],
    prune: bool = True,
    zero_slopes: bool = False,
) -> tuple[QuadraticProgram, VariableLayout]:
    """Assemble the congestion-aware routing and rebalancing QP.

    ``zero_slopes`` drops all congestion cost (the free-flow baseline) while
    keeping the same variables and constraints.
    """
    return _build(network, demands, w_r, pwa, schedules=None, prune=prune, zero_slopes=zero_slopes)


def build_rerouting_problem(
    network: RoadNetwork,
    demands: DemandSet,
    w_r: float,
    pwa: tuple[PiecewiseTravelTime, ...],
    schedules,
    prune: bool = True,
) -> tuple[QuadraticProgram, VariableLayout]:
    """Routing QP plus charging-visit constraints for every scheduled flow."""
    return _build(network, demands, w_r, pwa, schedules=schedules, prune=prune)


def extract_solution(
    layout: VariableLayout,
    vector: np.ndarray,
    network: RoadNetwork,
    tol: float = 1e-6,
) -> FlowSolution:
    """Split a raw solver vector into per-commodity flows and slacks.

    Small negative entries (solver noise) are clamped to zero; anything below
    ``-10 * tol`` means the solve was not trustworthy and raises.
    """
    vector = np.asarray(vector, dtype=float)
    if vector.shape[0] != layout.n_vars:
        raise ValueError(f"vector length {vector.shape[0]} does not match layout ({layout.n_vars})")
    worst = vector.min(initial=0.0)
    if worst < -10.0 * tol:
        raise ValueError(f"solver returned flow {worst}, below the -10*tol quality gate")
    clamped = np.maximum(vector, 0.0)
    flows = clamped[: layout.n_flow_vars].reshape(len(layout.commodities), layout.n_edges)
    private = np.array([r.private_flow for r in network.roads])
    return FlowSolution(
        layout=layout,
        flows=flows,
        excess1=clamped[layout.n_flow_vars : layout.n_flow_vars + layout.n_edges],
        excess2=clamped[layout.n_flow_vars + layout.n_edges :],
        private=private,
    )


def exact_objective(network: RoadNetwork, solution: FlowSolution, w_r: float) -> float:
    """True (non-convex) cost: BPR delay on customer flow plus weighted rebalancing."""
    total = 0.0
    for e, road in enumerate(network.roads):
        total += bpr_travel_time(road, solution.x_total[e]) * solution.u_total[e]
        total += w_r * solution.r_total[e]
    return total


def approx_objective(
    network: RoadNetwork,
    pwa: tuple[PiecewiseTravelTime, ...],
    solution: FlowSolution,
    w_r: float,
) -> float:
    """Surrogate cost: piecewise-affine delay on customer flow plus rebalancing."""
    total = 0.0
    for e, road in enumerate(network.roads):
        total += pwa_travel_time(pwa[e], road.free_flow_time, solution.x_total[e]) * solution.u_total[e]
        total += w_r * solution.r_total[e]
    return total


def qp_objective(program: QuadraticProgram, vector: np.ndarray) -> float:
    """Quadratic-form cost the solver actually minimizes."""
    vector = np.asarray(vector, dtype=float)
    return 0.5 * float(vector @ (program.P @ vector)) + float(program.q @ vector)
