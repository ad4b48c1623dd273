"""Charging schedules derived from recovered vehicle loops.

Every loop charges at least once per cycle.  The first charge goes on a
relocation trip when the loop has one (charging detours on empty legs keep
customers out of the extra traffic); otherwise the vehicles charge right
before their first pickup, encoded as an origin-anchored (o, o) entry.
Subsequent trips charge only when the running battery estimate would dip
under the reserve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .energy import BatteryModel, EnergyCurve, TripInfeasibleError, soc_after_charging, trip_energy_max
from .loops import Trip, VehicleLoop
from .network import RoadNetwork
from .qp_model import CUSTOMER


SCHEDULE_FLOOR = 1e-6


@dataclass(frozen=True)
class ChargingSchedule:
    """Flow that must visit a station: en route for origin != destination,
    as a pre-pickup loop anchored at the node when origin == destination."""

    origin: int
    destination: int
    flow: float

    def __post_init__(self):
        if self.flow <= 0:
            raise ValueError(f"charging schedule ({self.origin}, {self.destination}) needs flow > 0")

    @property
    def key(self) -> tuple[int, int]:
        return (self.origin, self.destination)


@dataclass(frozen=True)
class ScheduleSet:
    schedules: tuple[ChargingSchedule, ...]

    def keys(self) -> set[tuple[int, int]]:
        return {s.key for s in self.schedules}

    def __len__(self) -> int:
        return len(self.schedules)

    @classmethod
    def empty(cls) -> "ScheduleSet":
        return cls(schedules=())


def merge_schedules(raw: Iterable[ChargingSchedule]) -> ScheduleSet:
    """Combine entries sharing an (origin, destination) key by summing flow."""
    merged: dict[tuple[int, int], float] = {}
    for s in raw:
        merged[s.key] = merged.get(s.key, 0.0) + s.flow
    return ScheduleSet(
        schedules=tuple(
            ChargingSchedule(o, d, flow) for (o, d), flow in sorted(merged.items())
        )
    )


def schedule_key(trip: Trip) -> tuple[int, int]:
    """The schedule entry a charge on this trip would create."""
    if trip.kind == CUSTOMER:
        return (trip.origin, trip.origin)
    return (trip.origin, trip.destination)


def rotate_loop(loop: VehicleLoop) -> tuple[Trip, ...]:
    """Start the cyclic trip order at the first relocation trip if any."""
    trips = loop.trips
    for i, t in enumerate(trips):
        if t.kind != CUSTOMER:
            return trips[i:] + trips[:i]
    return trips


def _entry(trip: Trip, flow: float) -> ChargingSchedule:
    o, d = schedule_key(trip)
    return ChargingSchedule(o, d, flow)


def schedule_charging(
    loops: list[VehicleLoop],
    network: RoadNetwork,
    curve: EnergyCurve,
    battery: BatteryModel,
    x_total: np.ndarray,
) -> ScheduleSet:
    """Walk each loop with the battery estimator and emit charging entries.

    Raises :class:`TripInfeasibleError` when some trip cannot be completed
    even charging as late as possible.
    """
    raw: list[ChargingSchedule] = []
    stations = network.charging_stations
    for loop in loops:
        if loop.loop_flow <= SCHEDULE_FLOOR:
            continue  # no meaningful vehicle cohort behind this sliver of flow
        trips = rotate_loop(loop)
        first = trips[0]
        energy = trip_energy_max(first, network, curve, x_total) / battery.capacity_kwh
        e_bat = soc_after_charging(first.kind, first.origin, first.destination, energy, stations)
        raw.append(_entry(first, loop.loop_flow))
        if e_bat < battery.reserve_fraction:
            raise TripInfeasibleError(
                f"{first.describe()} leaves {e_bat:.0%} battery, under the "
                f"{battery.reserve_fraction:.0%} reserve, even charging on the trip"
            )
        for trip in trips[1:]:
            energy = trip_energy_max(trip, network, curve, x_total) / battery.capacity_kwh
            if e_bat - energy < battery.reserve_fraction:
                e_bat = soc_after_charging(trip.kind, trip.origin, trip.destination, energy, stations)
                raw.append(_entry(trip, loop.loop_flow))
                if e_bat < battery.reserve_fraction:
                    raise TripInfeasibleError(
                        f"{trip.describe()} leaves {e_bat:.0%} battery, under the "
                        f"{battery.reserve_fraction:.0%} reserve, even with a fresh charge"
                    )
            else:
                e_bat -= energy
    return merge_schedules(raw)
