"""Battery energy model: per-road consumption, worst-case trip energy, and
the post-charging state-of-charge table.

Per-road energy is length times a speed-to-consumption curve evaluated at the
congested average speed, so it is a function of the total road flow.  A trip
may be split across several routes; vehicles are provisioned for the most
expensive one, computed as a longest path over the trip's flow subgraph.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .loops import Trip
from .network import Road, RoadNetwork, bpr_travel_time
from .qp_model import CUSTOMER

log = logging.getLogger(__name__)

SUBFLOW_QUANTUM = 1e-9

FULL_CHARGE = 1.0
DETOUR_ALLOWANCE = 0.10  # SoC headroom assumed for reaching a station mid-trip


class EnergyModelError(ValueError):
    pass


class TripInfeasibleError(EnergyModelError):
    """A single trip cannot be completed even straight after a full charge."""


@dataclass(frozen=True)
class EnergyCurve:
    """Piecewise-linear consumption (kWh/km) against average speed (km/h).

    Queries outside the sampled range clamp to the nearest sample and emit a
    log warning; the curve never extrapolates silently.
    """

    speeds: tuple[float, ...] = (10.0, 30.0, 50.0, 80.0)
    rates: tuple[float, ...] = (0.22, 0.15, 0.16, 0.24)

    def __post_init__(self):
        if len(self.speeds) != len(self.rates) or len(self.speeds) < 1:
            raise EnergyModelError("curve needs matching, non-empty speed and rate lists")
        if any(s2 <= s1 for s1, s2 in zip(self.speeds, self.speeds[1:])):
            raise EnergyModelError("curve speeds must be strictly increasing")
        if any(r <= 0 for r in self.rates):
            raise EnergyModelError("curve consumption rates must be positive")
        if any(s <= 0 for s in self.speeds):
            raise EnergyModelError("curve speeds must be positive")

    def consumption(self, speed: float) -> float:
        """kWh/km at the given average speed, clamped to the sampled range."""
        if speed < self.speeds[0] or speed > self.speeds[-1]:
            log.warning(
                "speed %.2f km/h outside curve range [%.1f, %.1f]; clamping",
                speed,
                self.speeds[0],
                self.speeds[-1],
            )
        return float(np.interp(speed, self.speeds, self.rates))


@dataclass(frozen=True)
class BatteryModel:
    capacity_kwh: float = 50.0
    reserve_fraction: float = 0.10

    def __post_init__(self):
        if self.capacity_kwh <= 0:
            raise EnergyModelError("battery capacity must be positive")
        if not 0 < self.reserve_fraction < 1:
            raise EnergyModelError("reserve fraction must lie in (0, 1)")


def edge_energy(road: Road, flow: float, curve: EnergyCurve) -> float:
    """kWh needed to traverse ``road`` when it carries total flow ``flow``."""
    speed = road.length / bpr_travel_time(road, flow)
    return road.length * curve.consumption(speed)


def compute_edge_energies(
    network: RoadNetwork, x_total: np.ndarray, curve: EnergyCurve
) -> dict[tuple[int, int], float]:
    return {
        road.key: edge_energy(road, float(x_total[e]), curve)
        for e, road in enumerate(network.roads)
    }


def _cancel_cycles(edges: dict) -> dict:
    """Subtract minimal cycle flow until the subgraph is acyclic."""
    edges = dict(edges)
    while True:
        adjacency: dict = {}
        for (i, j), f in edges.items():
            adjacency.setdefault(i, []).append(j)
        cycle = _find_cycle(adjacency)
        if cycle is None:
            return edges
        flow = min(edges[(i, j)] for i, j in cycle)
        level = logging.WARNING if flow > 1e-6 else logging.DEBUG
        log.log(level, "canceling cycle %s with flow %.3e in trip subflow", cycle, flow)
        for pair in cycle:
            edges[pair] -= flow
            if edges[pair] <= SUBFLOW_QUANTUM:
                del edges[pair]


def _find_cycle(adjacency: dict) -> list[tuple] | None:
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in adjacency}
    for start in sorted(adjacency, key=str):
        if color[start] != WHITE:
            continue
        stack = [(start, iter(sorted(adjacency.get(start, ()), key=str)))]
        path = [start]
        color[start] = GRAY
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if nxt not in color:
                    color[nxt] = WHITE
                if color.get(nxt, WHITE) == GRAY:
                    idx = path.index(nxt)
                    cyc_nodes = path[idx:] + [nxt]
                    return list(zip(cyc_nodes, cyc_nodes[1:]))
                if color.get(nxt, WHITE) == WHITE:
                    color[nxt] = GRAY
                    stack.append((nxt, iter(sorted(adjacency.get(nxt, ()), key=str))))
                    path.append(nxt)
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
                path.pop()
    return None


def trip_energy_max(
    trip: Trip,
    network: RoadNetwork,
    curve: EnergyCurve,
    x_total: np.ndarray | Mapping[tuple[int, int], float],
) -> float:
    """Worst-case kWh over the routes a trip's flow actually uses.

    Each road is priced at the network's total flow, then the trip subgraph is
    traversed in topological order keeping the costliest way to reach every
    node.  Loop trips (origin == destination) are handled by splitting the
    anchor node into a departure and an arrival copy.
    """
    if isinstance(x_total, np.ndarray):
        energies = compute_edge_energies(network, x_total, curve)
    else:
        energies = {road.key: edge_energy(road, float(x_total.get(road.key, 0.0)), curve)
                    for road in network.roads}

    # Departures from the origin and arrivals at the destination get their own
    # node copies, which turns a loop trip's main cycle into a path.
    src, dst = "origin@out", "destination@in"
    edges: dict[tuple, float] = {}
    for (i, j), f in trip.subflow.items():
        if f <= SUBFLOW_QUANTUM:
            continue
        tail = src if i == trip.origin else i
        head = dst if j == trip.destination else j
        edges[(tail, head)] = edges.get((tail, head), 0.0) + f

    if not edges:
        raise EnergyModelError(f"{trip.describe()}: empty routing subflow")
    edges = _cancel_cycles(edges)

    nodes = sorted({n for pair in edges for n in pair}, key=str)
    indeg = {n: 0 for n in nodes}
    outs: dict = {n: [] for n in nodes}
    for (i, j) in edges:
        indeg[j] += 1
        outs[i].append(j)
    order = []
    ready = sorted([n for n in nodes if indeg[n] == 0], key=str)
    while ready:
        node = ready.pop(0)
        order.append(node)
        for nxt in sorted(outs[node], key=str):
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
        ready.sort(key=str)
    if len(order) != len(nodes):
        raise EnergyModelError(f"{trip.describe()}: cycle canceling left a cyclic subflow")

    best = {n: -np.inf for n in nodes}
    if src not in best:
        raise EnergyModelError(f"{trip.describe()}: origin emits no flow")
    best[src] = 0.0
    for node in order:
        if best[node] == -np.inf:
            continue
        for nxt in outs[node]:
            i = trip.origin if node == src else node
            j = trip.destination if nxt == dst else nxt
            cost = energies[(i, j)]
            if best[node] + cost > best[nxt]:
                best[nxt] = best[node] + cost
    if dst not in best or best[dst] == -np.inf:
        raise EnergyModelError(f"{trip.describe()}: destination unreachable in subflow")
    return float(best[dst])


def soc_value(kind: str, origin: int, destination: int, energy_fraction: float,
              stations: frozenset[int] | set[int]) -> float:
    """Raw post-charging state of charge for one trip (may be negative)."""
    if kind != CUSTOMER:
        if destination in stations:
            return FULL_CHARGE
        if origin in stations:
            return FULL_CHARGE - energy_fraction
        return FULL_CHARGE - DETOUR_ALLOWANCE
    if destination in stations:
        return FULL_CHARGE - energy_fraction
    return FULL_CHARGE - DETOUR_ALLOWANCE - energy_fraction


def soc_after_charging(
    kind: str,
    origin: int,
    destination: int,
    energy_fraction: float,
    stations: frozenset[int] | set[int],
) -> float:
    """State of charge after the scheduled charge and the trip itself.

    Relocation trips charge en route (at the destination, the origin, or a
    detoured station); customer trips charge right before pickup or at the
    dropoff when it hosts a station.
    """
    if energy_fraction < 0:
        raise EnergyModelError(f"energy fraction must be non-negative, got {energy_fraction}")
    if energy_fraction >= 1:
        raise TripInfeasibleError(
            f"{kind} trip {origin} -> {destination} needs {energy_fraction:.2f}x "
            "the battery capacity in one trip"
        )
    value = soc_value(kind, origin, destination, energy_fraction, stations)
    if value < 0:
        raise TripInfeasibleError(
            f"{kind} trip {origin} -> {destination} needs {energy_fraction:.0%} "
            "of the battery; infeasible even from a full charge"
        )
    return value
