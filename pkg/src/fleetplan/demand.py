"""Travel demands and the per-node net rebalancing balance they induce."""

from __future__ import annotations

from dataclasses import dataclass

from .network import RoadNetwork


@dataclass(frozen=True)
class TravelDemand:
    """A constant-rate customer stream from origin to destination (vehicles/hour)."""

    origin: int
    destination: int
    rate: float


@dataclass(frozen=True)
class DemandSet:
    demands: tuple[TravelDemand, ...]

    @property
    def origins(self) -> frozenset[int]:
        return frozenset(d.origin for d in self.demands)

    @property
    def destinations(self) -> frozenset[int]:
        return frozenset(d.destination for d in self.demands)

    @property
    def total_rate(self) -> float:
        return sum(d.rate for d in self.demands)

    def __len__(self) -> int:
        return len(self.demands)


def net_rebalancing_flow(demands: DemandSet, node: int) -> float:
    """Signed rebalancing rate a node requires.

    Positive means empty vehicles pile up at ``node`` (a popular destination)
    and must depart; negative means the node is drained by departures and
    rebalancing must arrive.  Zero for nodes no demand touches.
    """
    net = 0.0
    for d in demands.demands:
        if node == d.destination:
            net += d.rate
        if node == d.origin:
            net -= d.rate
    return net


def validate_demands(demands: DemandSet, network: RoadNetwork) -> list[str]:
    """Collect every demand violation; an empty list means the set is valid."""
    errors = []
    if not demands.demands:
        errors.append("demand set is empty")
    for m, d in enumerate(demands.demands):
        tag = f"demand {m} ({d.origin} -> {d.destination})"
        if d.rate <= 0:
            errors.append(f"{tag}: rate must be > 0, got {d.rate}")
        if d.origin == d.destination:
            errors.append(f"{tag}: origin equals destination")
        if d.origin not in network.nodes:
            errors.append(f"{tag}: origin {d.origin} is not a network node")
        if d.destination not in network.nodes:
            errors.append(f"{tag}: destination {d.destination} is not a network node")
    touched = {n for d in demands.demands for n in (d.origin, d.destination)}
    total = sum(net_rebalancing_flow(demands, n) for n in touched)
    if abs(total) > 1e-9 * max(1.0, demands.total_rate):
        errors.append(f"net rebalancing flows do not sum to zero (sum = {total})")
    return errors
