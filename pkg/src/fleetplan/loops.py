"""Trip-level flow graph and greedy recovery of repeating vehicle loops.

Solved edge flows say nothing about which trip a vehicle performs next.  To
reason about battery state we lift the solution to a multigraph whose edges
are whole trips (one per customer demand, one per relocation pair with
positive flow), then peel cycles off it: walk from any node with remaining
flow toward the highest-flow successor until a node repeats, extract that
cycle at the bottleneck flow, and repeat until all trip flow is assigned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .demand import DemandSet
from .network import RoadNetwork
from .qp_model import CUSTOMER, FlowSolution

FLOW_QUANTUM = 1e-9
TRIP_FLOOR = 1e-6  # relative to the largest demand rate


class TripGraphError(ValueError):
    """Trip flows do not balance beyond what solver tolerance explains."""


class LoopRecoveryError(RuntimeError):
    """The greedy walk failed to terminate; indicates corrupt trip flows."""


@dataclass(frozen=True)
class Trip:
    """A repeated journey at a constant rate, with its own routing subgraph."""

    kind: str  # "customer" or "rebalance"
    origin: int
    destination: int
    flow: float
    subflow: dict[tuple[int, int], float] = field(compare=False)
    demand_index: int | None = None

    def describe(self) -> str:
        tag = f"demand {self.demand_index} " if self.demand_index is not None else ""
        return f"{self.kind} trip {tag}{self.origin} -> {self.destination}"


@dataclass
class TripGraph:
    nodes: frozenset[int]
    trips: tuple[Trip, ...]

    def node_imbalance(self, node: int) -> float:
        inflow = sum(t.flow for t in self.trips if t.destination == node)
        outflow = sum(t.flow for t in self.trips if t.origin == node)
        return inflow - outflow


@dataclass
class VehicleLoop:
    """Closed trip sequence a cohort of vehicles cycles through forever."""

    trips: tuple[Trip, ...]
    loop_flow: float

    def has_rebalance(self) -> bool:
        return any(t.kind != CUSTOMER for t in self.trips)


def _commodity_subflow(
    network: RoadNetwork, flows: np.ndarray
) -> dict[tuple[int, int], float]:
    return {
        road.key: float(flows[e])
        for e, road in enumerate(network.roads)
        if flows[e] > FLOW_QUANTUM
    }


def build_trip_graph(
    network: RoadNetwork,
    demands: DemandSet,
    solution: FlowSolution,
    balance_tol: float | None = None,
) -> TripGraph:
    """Lift a flow solution to trip level.

    Customer trips carry their exact demand rates; relocation trips carry the
    solved departure rate of their commodity.  Tiny solver imbalances are
    repaired by the minimum-norm correction of the relocation rates; anything
    larger raises.
    """
    max_rate = max((d.rate for d in demands.demands), default=1.0)
    if balance_tol is None:
        balance_tol = 1e-6 * max(1.0, max_rate)
    trip_floor = TRIP_FLOOR * max(1.0, max_rate)

    trips: list[Trip] = []
    rebalance_rows: list[int] = []
    for ci, commodity in enumerate(solution.layout.commodities):
        flows = solution.flows[ci]
        if commodity.kind == CUSTOMER:
            trips.append(
                Trip(
                    kind=CUSTOMER,
                    origin=commodity.origin,
                    destination=commodity.destination,
                    flow=demands.demands[commodity.demand_index].rate,
                    subflow=_commodity_subflow(network, flows),
                    demand_index=commodity.demand_index,
                )
            )
        else:
            departures = float(
                sum(flows[k] for k in network.out_edges.get(commodity.origin, ()))
            )
            if departures > trip_floor:
                rebalance_rows.append(len(trips))
                trips.append(
                    Trip(
                        kind="rebalance",
                        origin=commodity.origin,
                        destination=commodity.destination,
                        flow=departures,
                        subflow=_commodity_subflow(network, flows),
                    )
                )

    nodes = frozenset(n for t in trips for n in (t.origin, t.destination))
    node_list = sorted(nodes)
    imbalance = {}
    for node in node_list:
        value = sum(t.flow for t in trips if t.destination == node) - sum(
            t.flow for t in trips if t.origin == node
        )
        imbalance[node] = value
    worst = max((abs(v) for v in imbalance.values()), default=0.0)
    if worst > balance_tol:
        offender = max(imbalance, key=lambda n: abs(imbalance[n]))
        raise TripGraphError(
            f"trip flows imbalance {imbalance[offender]:.3e} at node {offender} "
            f"exceeds tolerance {balance_tol:.3e}"
        )

    if worst > 0 and rebalance_rows:
        # Minimum-norm correction of relocation rates restores exact balance;
        # customer rates are data and stay untouched.
        B = np.zeros((len(node_list), len(rebalance_rows)))
        target = np.zeros(len(node_list))
        for row, node in enumerate(node_list):
            target[row] = -imbalance[node]
            for col, ti in enumerate(rebalance_rows):
                if trips[ti].destination == node:
                    B[row, col] += 1.0
                if trips[ti].origin == node:
                    B[row, col] -= 1.0
        delta, *_ = np.linalg.lstsq(B, target, rcond=None)
        for col, ti in enumerate(rebalance_rows):
            t = trips[ti]
            trips[ti] = Trip(
                kind=t.kind,
                origin=t.origin,
                destination=t.destination,
                flow=max(0.0, t.flow + float(delta[col])),
                subflow=t.subflow,
                demand_index=t.demand_index,
            )

    return TripGraph(nodes=nodes, trips=tuple(trips))


def _candidate_key(trips, residual):
    def key(ti: int):
        t = trips[ti]
        return (
            -residual[ti],
            t.destination,
            0 if t.kind == CUSTOMER else 1,
            t.demand_index if t.demand_index is not None else -1,
            ti,
        )

    return key


def recover_loops(graph: TripGraph) -> list[VehicleLoop]:
    """Partition every trip's flow across closed loops.

    Deterministic rules: walks start at the lowest node id with remaining
    outflow, successors are chosen by largest remaining flow (ties: lowest
    destination id, customers first), and cycles are closed as soon as any
    successor node was already visited on the current walk.
    """
    trips = graph.trips
    residual = np.array([t.flow for t in trips], dtype=float)
    residual[residual < FLOW_QUANTUM] = 0.0
    out_trips: dict[int, list[int]] = {}
    for ti, t in enumerate(trips):
        out_trips.setdefault(t.origin, []).append(ti)

    loops: list[VehicleLoop] = []
    guard = 4 * len(trips) + 16
    extractions = 0
    while True:
        start = None
        for node in sorted(out_trips):
            if any(residual[ti] > 0 for ti in out_trips[node]):
                start = node
                break
        if start is None:
            break
        extractions += 1
        if extractions > guard:
            raise LoopRecoveryError(
                f"loop recovery exceeded {guard} extractions; "
                f"remaining flow {residual.sum():.3e} on {int((residual > 0).sum())} trips"
            )

        visited: dict[int, int] = {}
        walk_trips: list[int] = []
        v = start
        while True:
            visited[v] = len(walk_trips)
            candidates = [ti for ti in out_trips.get(v, ()) if residual[ti] > 0]
            if not candidates:
                # Quantization stranded a whisker of inbound flow; drop it.
                if walk_trips and residual[walk_trips[-1]] <= 1e-6:
                    residual[walk_trips[-1]] = 0.0
                    break
                raise LoopRecoveryError(f"walk dead-ended at node {v} with real flow remaining")
            key = _candidate_key(trips, residual)
            closing = [ti for ti in candidates if trips[ti].destination in visited]
            if closing:
                chosen = min(closing, key=key)
                walk_trips.append(chosen)
                cycle_start = visited[trips[chosen].destination]
                cycle = walk_trips[cycle_start:]
                flow = float(min(residual[ti] for ti in cycle))
                for ti in cycle:
                    residual[ti] -= flow
                residual[residual < FLOW_QUANTUM] = 0.0
                loops.append(VehicleLoop(tuple(trips[ti] for ti in cycle), flow))
                break
            chosen = min(candidates, key=key)
            walk_trips.append(chosen)
            v = trips[chosen].destination
    return loops
