"""Road network model: BPR delay, its 3-segment affine surrogate, and slack geometry."""

from __future__ import annotations

from dataclasses import dataclass, field

BPR_COEFF = 0.15
BPR_POWER = 4


class NetworkError(ValueError):
    """Raised for structurally invalid networks or roads."""


class PwaConfigError(ValueError):
    """Raised when a piecewise-affine fit configuration is not convex."""


@dataclass(frozen=True)
class Road:
    """One directed street with BPR parameters and a fixed background flow.

    free_flow_time is in hours, capacity in vehicles/hour, length in km and
    private_flow (non-fleet traffic, held constant) in vehicles/hour.
    """

    from_node: int
    to_node: int
    free_flow_time: float
    capacity: float
    length: float
    private_flow: float = 0.0

    def __post_init__(self):
        if self.from_node == self.to_node:
            raise NetworkError(f"road ({self.from_node}, {self.to_node}) is a self-loop")
        if self.free_flow_time <= 0:
            raise NetworkError(f"road ({self.from_node}, {self.to_node}): free_flow_time must be > 0")
        if self.capacity <= 0:
            raise NetworkError(f"road ({self.from_node}, {self.to_node}): capacity must be > 0")
        if self.length <= 0:
            raise NetworkError(f"road ({self.from_node}, {self.to_node}): length must be > 0")
        if self.private_flow < 0:
            raise NetworkError(f"road ({self.from_node}, {self.to_node}): private_flow must be >= 0")

    @property
    def key(self) -> tuple[int, int]:
        return (self.from_node, self.to_node)

    @property
    def free_flow_speed(self) -> float:
        """km/h when the road is empty."""
        return self.length / self.free_flow_time


@dataclass(frozen=True)
class RoadNetwork:
    """Directed road graph with a non-empty set of charging-station nodes.

    Immutable after construction; adjacency indexes are precomputed so the
    object can be shared freely across workers.
    """

    nodes: frozenset[int]
    roads: tuple[Road, ...]
    charging_stations: frozenset[int]

    edge_index: dict[tuple[int, int], int] = field(init=False, repr=False, compare=False)
    out_edges: dict[int, tuple[int, ...]] = field(init=False, repr=False, compare=False)
    in_edges: dict[int, tuple[int, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.charging_stations:
            raise NetworkError("network needs at least one charging station")
        if not self.charging_stations <= self.nodes:
            missing = sorted(self.charging_stations - self.nodes)
            raise NetworkError(f"charging stations {missing} are not network nodes")
        index: dict[tuple[int, int], int] = {}
        outs: dict[int, list[int]] = {n: [] for n in self.nodes}
        ins: dict[int, list[int]] = {n: [] for n in self.nodes}
        for k, road in enumerate(self.roads):
            if road.from_node not in self.nodes or road.to_node not in self.nodes:
                raise NetworkError(f"road ({road.from_node}, {road.to_node}) has an endpoint outside the node set")
            if road.key in index:
                raise NetworkError(f"duplicate road ({road.from_node}, {road.to_node})")
            index[road.key] = k
            outs[road.from_node].append(k)
            ins[road.to_node].append(k)
        object.__setattr__(self, "edge_index", index)
        object.__setattr__(self, "out_edges", {n: tuple(ks) for n, ks in outs.items()})
        object.__setattr__(self, "in_edges", {n: tuple(ks) for n, ks in ins.items()})

    @property
    def n_edges(self) -> int:
        return len(self.roads)

    def road(self, from_node: int, to_node: int) -> Road:
        return self.roads[self.edge_index[(from_node, to_node)]]

    def reachable_from(self, start: int) -> set[int]:
        """Nodes reachable from ``start`` by directed roads (including start)."""
        seen = {start}
        stack = [start]
        while stack:
            node = stack.pop()
            for k in self.out_edges.get(node, ()):
                nxt = self.roads[k].to_node
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen


def bpr_travel_time(road: Road, flow: float) -> float:
    """BPR volume-delay time in hours at total flow ``flow`` on ``road``."""
    if flow < 0:
        raise ValueError(f"flow must be non-negative, got {flow}")
    return road.free_flow_time * (1.0 + BPR_COEFF * (flow / road.capacity) ** BPR_POWER)


def congestion_ratio(road: Road, flow: float) -> float:
    """Total flow divided by road capacity."""
    if flow < 0:
        raise ValueError(f"flow must be non-negative, got {flow}")
    return flow / road.capacity


# Default fit: break the flat segment at capacity, the mid segment at 1.5x
# capacity, and take each subsequent segment as the chord of the BPR curve
# (mid chord over [c, 1.5c], high chord over [1.5c, 2c]).  Keeps the surrogate
# within ~13% of BPR everywhere on [0, 2c] while staying convex.
DEFAULT_BREAK1_FRAC = 1.0
DEFAULT_BREAK2_FRAC = 1.5
DEFAULT_SLOPE_MID_NORM = 1.51875
DEFAULT_SLOPE_HIGH_NORM = 3.28125


@dataclass(frozen=True)
class PwaConfig:
    """Dimensionless shape of the 3-segment delay surrogate.

    Break fractions are multiples of road capacity; normalized slopes are the
    segment slopes of t(x)/t0 against x/capacity.
    """

    break1_frac: float = DEFAULT_BREAK1_FRAC
    break2_frac: float = DEFAULT_BREAK2_FRAC
    slope_mid_norm: float = DEFAULT_SLOPE_MID_NORM
    slope_high_norm: float = DEFAULT_SLOPE_HIGH_NORM

    def __post_init__(self):
        if not 0 < self.break1_frac < self.break2_frac:
            raise PwaConfigError(
                f"break fractions must satisfy 0 < f1 < f2, got ({self.break1_frac}, {self.break2_frac})"
            )
        if not 0 < self.slope_mid_norm < self.slope_high_norm:
            raise PwaConfigError(
                f"slopes must satisfy 0 < l1 < l2, got ({self.slope_mid_norm}, {self.slope_high_norm})"
            )


@dataclass(frozen=True)
class PiecewiseTravelTime:
    """Convex 3-segment surrogate of one road's delay curve.

    Flat at the free-flow time up to x_break1, then two affine pieces with
    increasing slopes (hours per vehicle/hour).
    """

    x_break1: float
    x_break2: float
    slope_mid: float
    slope_high: float

    def __post_init__(self):
        if not 0 < self.x_break1 < self.x_break2:
            raise PwaConfigError(f"breakpoints must satisfy 0 < x1 < x2, got ({self.x_break1}, {self.x_break2})")
        if not 0 < self.slope_mid < self.slope_high:
            raise PwaConfigError(f"slopes must satisfy 0 < a < b, got ({self.slope_mid}, {self.slope_high})")

    @property
    def excess1_cap(self) -> float:
        """Largest mid-segment excess flow; the mid segment saturates here."""
        return self.x_break2 - self.x_break1


def fit_piecewise(road: Road, config: PwaConfig = PwaConfig()) -> PiecewiseTravelTime:
    """Scale the dimensionless config onto one road's capacity."""
    return PiecewiseTravelTime(
        x_break1=config.break1_frac * road.capacity,
        x_break2=config.break2_frac * road.capacity,
        slope_mid=config.slope_mid_norm / road.capacity,
        slope_high=config.slope_high_norm / road.capacity,
    )


def compute_slacks(pwa: PiecewiseTravelTime, flow: float) -> tuple[float, float]:
    """Excess flows over the two breakpoints.

    The first slack is capped at the mid-segment width, so the pair is the
    cheapest (slope-weighted) point satisfying the excess-flow inequalities.
    """
    excess2 = max(0.0, flow - pwa.x_break2)
    excess1 = max(0.0, flow - pwa.x_break1 - excess2)
    return excess1, excess2


def pwa_travel_time(pwa: PiecewiseTravelTime, free_flow_time: float, flow: float) -> float:
    """Evaluate the surrogate delay at total flow ``flow``.

    Written in branch form; it agrees with the slack composition
    t0 * (1 + a*e1 + b*e2) for the slacks of :func:`compute_slacks`.
    """
    if flow < 0:
        raise ValueError(f"flow must be non-negative, got {flow}")
    if flow < pwa.x_break1:
        return free_flow_time
    if flow < pwa.x_break2:
        return free_flow_time * (1.0 + pwa.slope_mid * (flow - pwa.x_break1))
    return free_flow_time * (
        1.0
        + pwa.slope_mid * (pwa.x_break2 - pwa.x_break1)
        + pwa.slope_high * (flow - pwa.x_break2)
    )
