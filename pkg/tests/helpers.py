"""Small network/demand builders shared across test modules."""

from __future__ import annotations

from fleetplan.demand import DemandSet, TravelDemand
from fleetplan.network import Road, RoadNetwork

TABLE1 = [
    (1, 6, 6.0),
    (7, 2, 5.0),
    (5, 3, 2.0),
    (2, 7, 4.0),
    (6, 5, 5.0),
    (7, 3, 3.0),
    (8, 6, 6.0),
    (4, 2, 2.0),
    (1, 2, 2.0),
    (2, 4, 4.0),
]


def make_network(edges, stations, nodes=None) -> RoadNetwork:
    """edges: (from, to, t0, gamma, length, p) tuples."""
    roads = tuple(Road(*e) for e in edges)
    if nodes is None:
        nodes = {n for r in roads for n in (r.from_node, r.to_node)}
    return RoadNetwork(
        nodes=frozenset(nodes), roads=roads, charging_stations=frozenset(stations)
    )


def make_demands(triples) -> DemandSet:
    return DemandSet(tuple(TravelDemand(o, d, a) for o, d, a in triples))


def two_node_network(p=0.0, gamma=100.0) -> RoadNetwork:
    """1 <-> 2 with symmetric roads; station at node 1."""
    return make_network(
        [(1, 2, 0.1, gamma, 3.0, p), (2, 1, 0.1, gamma, 3.0, p)],
        stations={1},
    )


def random_balanced_trips(rng, n_nodes=6, n_cycles=5):
    """Superpose random node cycles so every node balances exactly."""
    from fleetplan.loops import Trip

    flows: dict[tuple[int, int], float] = {}
    for _ in range(n_cycles):
        k = int(rng.integers(2, n_nodes + 1))
        cycle = list(rng.permutation(n_nodes)[:k] + 1)
        rate = float(rng.uniform(0.5, 10.0))
        for a, b in zip(cycle, cycle[1:] + cycle[:1]):
            flows[(a, b)] = flows.get((a, b), 0.0) + rate
    return [
        Trip(kind="rebalance", origin=a, destination=b, flow=f, subflow={(a, b): f})
        for (a, b), f in sorted(flows.items())
    ]


def random_simple_path(network: RoadNetwork, origin: int, destination: int, rng):
    """First simple path found by a depth-first search in shuffled order."""

    def dfs(node, path):
        if node == destination:
            return path
        succs = [network.roads[k].to_node for k in network.out_edges.get(node, ())]
        rng.shuffle(succs)
        for s in succs:
            if s not in path:
                found = dfs(s, path + [s])
                if found:
                    return found
        return None

    return dfs(origin, [origin])


def sample_feasible_vector(network, demands, layout, pwa, rng):
    """A random vector satisfying every constraint of the routing program.

    Demands are split over one or two random simple paths, the rebalancing
    totals are allocated over source/sink pairs by a randomized greedy fill,
    and slacks are set to their minimal feasible values.
    """
    import numpy as np

    from fleetplan.demand import net_rebalancing_flow
    from fleetplan.network import compute_slacks
    from fleetplan.qp_model import CUSTOMER, REBALANCE

    v = np.zeros(layout.n_vars)

    def add_path_flow(ci, path, rate):
        for i, j in zip(path, path[1:]):
            v[layout.flow_var(ci, network.edge_index[(i, j)])] += rate

    sources = {
        a: net_rebalancing_flow(demands, a)
        for a in demands.destinations
        if net_rebalancing_flow(demands, a) > 0
    }
    sinks = {
        b: -net_rebalancing_flow(demands, b)
        for b in demands.origins
        if net_rebalancing_flow(demands, b) < 0
    }
    pairs = [
        (ci, c) for ci, c in enumerate(layout.commodities) if c.kind == REBALANCE
    ]
    order = list(range(len(pairs)))
    rng.shuffle(order)
    remaining_src = dict(sources)
    remaining_snk = dict(sinks)
    alloc = {}
    for idx in order:
        ci, c = pairs[idx]
        if c.origin not in remaining_src or c.destination not in remaining_snk:
            continue
        f = min(remaining_src[c.origin], remaining_snk[c.destination])
        if f <= 0:
            continue
        alloc[ci] = f
        remaining_src[c.origin] -= f
        remaining_snk[c.destination] -= f
    assert all(abs(r) < 1e-9 for r in remaining_src.values())
    assert all(abs(r) < 1e-9 for r in remaining_snk.values())

    for ci, c in enumerate(layout.commodities):
        if c.kind == CUSTOMER:
            rate = demands.demands[c.demand_index].rate
            split = rate * rng.uniform(0.2, 0.8)
            first = random_simple_path(network, c.origin, c.destination, rng)
            second = random_simple_path(network, c.origin, c.destination, rng)
            add_path_flow(ci, first, split)
            add_path_flow(ci, second, rate - split)
        elif ci in alloc:
            path = random_simple_path(network, c.origin, c.destination, rng)
            add_path_flow(ci, path, alloc[ci])

    for e, r in enumerate(network.roads):
        x = sum(v[layout.flow_var(ci, e)] for ci in range(len(layout.commodities)))
        x += r.private_flow
        e1, e2 = compute_slacks(pwa[e], x)
        v[layout.slack1_var(e)] = e1
        v[layout.slack2_var(e)] = e2
    return v
