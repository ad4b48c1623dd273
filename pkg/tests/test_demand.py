"""Demand bookkeeping and the per-node rebalancing balance."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import TABLE1, make_demands, make_network, two_node_network

from fleetplan.demand import DemandSet, TravelDemand, net_rebalancing_flow, validate_demands


class TestNetRebalancingFlow:
    def test_single_demand_signs(self):
        demands = make_demands([(1, 2, 5.0)])
        assert net_rebalancing_flow(demands, 1) == -5.0
        assert net_rebalancing_flow(demands, 2) == 5.0

    def test_demo_demand_table_node_1(self):
        # Node 1 originates rates 6 and 2 and is nobody's destination.
        demands = make_demands(TABLE1)
        assert net_rebalancing_flow(demands, 1) == -8.0

    def test_demo_demand_table_node_6(self):
        # Node 6 receives 6 + 6 and originates 5.
        demands = make_demands(TABLE1)
        assert net_rebalancing_flow(demands, 6) == 7.0

    def test_untouched_node_is_zero(self):
        demands = make_demands([(1, 2, 5.0)])
        assert net_rebalancing_flow(demands, 99) == 0.0

    @given(
        st.lists(
            st.tuples(
                st.integers(1, 6),
                st.integers(1, 6),
                st.floats(min_value=0.1, max_value=50.0),
            ),
            min_size=1,
            max_size=12,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_zero_sum(self, triples):
        demands = make_demands([(o, d, a) for o, d, a in triples])
        total = sum(net_rebalancing_flow(demands, j) for j in range(1, 7))
        assert total == pytest.approx(0.0, abs=1e-9)

    def test_linearity_in_rates(self):
        demands = make_demands(TABLE1)
        scaled = make_demands([(o, d, 3.0 * a) for o, d, a in TABLE1])
        for j in range(1, 9):
            assert net_rebalancing_flow(scaled, j) == pytest.approx(
                3.0 * net_rebalancing_flow(demands, j)
            )


class TestValidateDemands:
    def test_valid_set_passes(self):
        net = two_node_network()
        assert validate_demands(make_demands([(1, 2, 3.0)]), net) == []

    def test_seed_fixture_passes(self, seed_scenario):
        assert validate_demands(seed_scenario.demands, seed_scenario.network) == []

    def test_zero_rate_flagged(self):
        net = two_node_network()
        errors = validate_demands(DemandSet((TravelDemand(1, 2, 0.0),)), net)
        assert any("rate" in e for e in errors)

    def test_self_demand_flagged(self):
        net = two_node_network()
        errors = validate_demands(DemandSet((TravelDemand(1, 1, 2.0),)), net)
        assert any("origin equals destination" in e for e in errors)

    def test_unknown_node_flagged(self):
        net = two_node_network()
        errors = validate_demands(make_demands([(1, 99, 2.0)]), net)
        assert any("99" in e for e in errors)

    def test_all_violations_reported(self):
        net = two_node_network()
        errors = validate_demands(
            DemandSet((TravelDemand(1, 1, 2.0), TravelDemand(98, 99, -1.0))), net
        )
        assert len(errors) >= 3

    def test_origin_and_destination_roles_may_overlap(self):
        net = make_network(
            [(1, 2, 0.1, 10.0, 1.0, 0.0), (2, 3, 0.1, 10.0, 1.0, 0.0),
             (3, 1, 0.1, 10.0, 1.0, 0.0)],
            stations={1},
        )
        demands = make_demands([(1, 2, 3.0), (2, 3, 1.0)])
        assert validate_demands(demands, net) == []
        assert net_rebalancing_flow(demands, 2) == 2.0
