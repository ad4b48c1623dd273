"""Acceptance suite.

Each test covers one exit criterion at its stated tolerance and prints a
single pass/fail line (run with ``pytest tests/test_acceptance.py -v -s``).
The demo scenario is the bundled 8-node/22-edge network with its ten fixed
demands; private flows come from the fixture's seeded draw.
"""

import time

import numpy as np
import pytest
from helpers import (
    make_demands,
    make_network,
    random_balanced_trips,
    sample_feasible_vector,
)

from fleetplan.cli import main
from fleetplan.energy import EnergyCurve, soc_after_charging, trip_energy_max
from fleetplan.loops import TripGraph, build_trip_graph, recover_loops
from fleetplan.network import PiecewiseTravelTime, compute_slacks, fit_piecewise
from fleetplan.planner import congestion_summary, plan
from fleetplan.qp_model import (
    approx_objective,
    build_rerouting_problem,
    build_routing_problem,
    extract_solution,
    qp_objective,
)
from fleetplan.qp_solver import kkt_residuals, solve_qp
from fleetplan.scenario_io import seed_scenario_path


def check(number: int, description: str, condition: bool, detail: str = ""):
    status = "PASS" if condition else "FAIL"
    suffix = f"  ({detail})" if detail else ""
    print(f"[{status}] criterion {number}: {description}{suffix}")
    assert condition, f"criterion {number} failed: {description} {suffix}"


class TestSeedScenarioOutcomes:
    def test_criterion_1_baseline_vs_aware(self, seed_scenario, seed_report):
        start = time.monotonic()
        fresh = plan(seed_scenario, with_charging=False)
        elapsed = time.monotonic() - start
        base = congestion_summary(fresh.baseline.solution, seed_scenario.network)
        aware = congestion_summary(fresh.phase1.solution, seed_scenario.network)
        check(
            1,
            "congestion-blind max ratio strictly exceeds congestion-aware",
            base.max_ratio > aware.max_ratio,
            f"baseline {base.max_ratio:.3f} vs aware {aware.max_ratio:.3f}",
        )
        check(
            1,
            "true cost of baseline flows at least the aware flows' cost",
            fresh.baseline.exact_cost >= fresh.phase1.exact_cost,
            f"{fresh.baseline.exact_cost:.4f} >= {fresh.phase1.exact_cost:.4f}",
        )
        check(1, "baseline plus aware solve under 60 s", elapsed < 60.0, f"{elapsed:.1f} s")

    def test_criterion_2_baseline_dead_edge(self, seed_report):
        amod = seed_report.baseline.solution.u_total + seed_report.baseline.solution.r_total
        dead = int((amod <= 1e-6).sum())
        check(2, "baseline leaves at least one road with no fleet flow", dead >= 1,
              f"{dead} of {amod.size} roads unused")

    def test_criterion_3_charging_increases_flow(self, seed_scenario, seed_report):
        p1 = seed_report.phase1.solution.x_total
        p2 = seed_report.phase2.solution.x_total
        ratio_up = (p2 - p1) / np.array([r.capacity for r in seed_scenario.network.roads])
        check(
            3,
            "charging trips add total flow and push up at least one ratio",
            p2.sum() >= p1.sum() - 1e-9 and bool((ratio_up > 1e-9).any()),
            f"sum {p1.sum():.2f} -> {p2.sum():.2f}, {int((ratio_up > 1e-9).sum())} roads up",
        )

    def test_criterion_4_energy_feasible(self, seed_scenario, seed_report):
        check(
            4,
            "every loop verifies energy-feasible within the round budget",
            seed_report.energy_feasible is True
            and seed_report.rounds_used <= seed_scenario.pipeline.max_rounds,
            f"{len(seed_report.verdicts)} loops feasible after "
            f"{seed_report.rounds_used} round(s)",
        )


class TestPropertyBased:
    def test_criterion_5_quadratic_form_upper_bounds_surrogate(self, seed_scenario):
        networks = [
            (seed_scenario.network, seed_scenario.demands, seed_scenario.w_r),
            (
                make_network(
                    [
                        (1, 2, 0.10, 20.0, 3.0, 5.0),
                        (2, 1, 0.10, 20.0, 3.0, 5.0),
                        (2, 3, 0.05, 8.0, 1.5, 2.0),
                        (3, 2, 0.05, 8.0, 1.5, 2.0),
                        (1, 3, 0.20, 30.0, 6.0, 1.0),
                        (3, 1, 0.20, 30.0, 6.0, 1.0),
                    ],
                    stations={2},
                ),
                make_demands([(1, 3, 30.0), (3, 2, 12.0), (2, 1, 5.0)]),
                0.07,
            ),
            (
                make_network(
                    [
                        (1, 2, 0.05, 4.0, 1.0, 9.0),
                        (2, 1, 0.05, 4.0, 1.0, 9.0),
                    ],
                    stations={1},
                ),
                make_demands([(1, 2, 11.0)]),
                0.02,
            ),
        ]
        rng = np.random.default_rng(2024)
        worst = 0.0
        for network, demands, w_r in networks:
            pwa = tuple(fit_piecewise(r) for r in network.roads)
            program, layout = build_routing_problem(network, demands, w_r, pwa)
            for _ in range(100):
                v = sample_feasible_vector(network, demands, layout, pwa, rng)
                solution = extract_solution(layout, v, network)
                approx = approx_objective(network, pwa, solution, w_r)
                qp = qp_objective(program, v)
                worst = max(worst, (approx - qp) / max(abs(approx), 1e-12))
                if qp < approx - 1e-9 * abs(approx):
                    check(5, "quadratic form upper-bounds the surrogate cost", False,
                          f"qp {qp} < approx {approx}")
        check(5, "quadratic form upper-bounds the surrogate cost on 300 samples",
              True, f"worst margin {worst:.2e}")

    def test_criterion_6_conservation(self, seed_scenario, seed_report):
        net, dem = seed_scenario.network, seed_scenario.demands
        tol = 1e-6 * max(1.0, max(d.rate for d in dem.demands))
        pwa = tuple(fit_piecewise(r, seed_scenario.pwa_config) for r in net.roads)
        prog1, _ = build_routing_problem(net, dem, seed_scenario.w_r, pwa)
        r1 = np.abs(prog1.A_eq @ seed_report.phase1.solver.x - prog1.b_eq).max()
        k1, _, _ = kkt_residuals(prog1, seed_report.phase1.solver.x, seed_report.phase1.solver.y)
        prog2, _ = build_rerouting_problem(net, dem, seed_scenario.w_r, pwa, seed_report.schedules)
        r2 = np.abs(prog2.A_eq @ seed_report.phase2.solver.x - prog2.b_eq).max()
        k2, _, _ = kkt_residuals(prog2, seed_report.phase2.solver.x, seed_report.phase2.solver.y)
        check(
            6,
            "conservation and charging constraints hold within scaled 1e-6",
            max(r1, r2, k1, k2) <= tol,
            f"worst residual {max(r1, r2, k1, k2):.2e} vs tol {tol:.1e}",
        )

    def test_criterion_7_loop_partition(self, seed_scenario, seed_report):
        def partition_gap(graph, loops):
            totals = {id(t): 0.0 for t in graph.trips}
            for loop in loops:
                for t in loop.trips:
                    totals[id(t)] += loop.loop_flow
            return max(abs(totals[id(t)] - t.flow) for t in graph.trips)

        graph = build_trip_graph(seed_scenario.network, seed_scenario.demands,
                                 seed_report.phase1.solution)
        worst = partition_gap(graph, recover_loops(graph))
        rng = np.random.default_rng(31)
        for _ in range(50):
            trips = random_balanced_trips(rng, n_nodes=7, n_cycles=6)
            nodes = frozenset(n for t in trips for n in (t.origin, t.destination))
            g = TripGraph(nodes=nodes, trips=tuple(trips))
            worst = max(worst, partition_gap(g, recover_loops(g)))
        check(7, "loop flows partition every trip flow within 1e-9", worst <= 1e-9,
              f"worst gap {worst:.2e}")

    def test_criterion_8_worst_route_energy_oracle(self):
        from test_energy import random_dag_case

        rng = np.random.default_rng(77)
        failures = 0
        for _ in range(200):
            trip_obj, net, expected = random_dag_case(rng)
            got = trip_energy_max(trip_obj, net, EnergyCurve(), np.zeros(net.n_edges))
            if got != expected:
                failures += 1
        check(8, "worst-route energy equals exhaustive enumeration on 200 DAGs",
              failures == 0, f"{failures} mismatches")

    def test_criterion_9_soc_branch_table(self):
        stations = frozenset({10})
        cases = [
            ("rebalance", 1, 10, 0.20, 1.00),
            ("rebalance", 10, 2, 0.20, 0.80),
            ("rebalance", 1, 2, 0.20, 0.90),
            ("customer", 1, 10, 0.20, 0.80),
            ("customer", 1, 2, 0.15, 0.75),
        ]
        ok = all(
            soc_after_charging(kind, o, d, e, stations) == pytest.approx(expected)
            for kind, o, d, e, expected in cases
        )
        check(9, "post-charging state of charge matches all five branches", ok)

    def test_criterion_10_solver_matches_brute_force(self):
        from test_qp_solver import brute_force_qp, dense_qp

        rng = np.random.default_rng(123)
        worst = 0.0
        for trial in range(50):
            n = int(rng.integers(2, 9))
            m = int(rng.integers(1, 7))
            L = rng.normal(size=(n, n))
            P = L @ L.T + np.eye(n)
            q = rng.normal(size=n)
            A = rng.normal(size=(m, n))
            x0 = rng.normal(size=n)
            z0 = A @ x0
            l = z0 - rng.uniform(0.1, 2.0, size=m)
            u = z0 + rng.uniform(0.1, 2.0, size=m)
            res = solve_qp(dense_qp(P, q, A=A, l=l, u=u))
            assert res.status == "solved", f"trial {trial}"
            oracle_val, _ = brute_force_qp(P, q, A, l, u)
            rel = abs(res.objective - oracle_val) / max(1e-9, abs(oracle_val))
            worst = max(worst, rel)
        check(10, "solver matches the active-set oracle on 50 random QPs",
              worst <= 1e-5, f"worst relative gap {worst:.2e}")

    def test_criterion_11_slack_minimality(self):
        from scipy.optimize import linprog

        rng = np.random.default_rng(55)
        worst = 0.0
        for _ in range(1000):
            x1 = rng.uniform(0.5, 60.0)
            x2 = x1 + rng.uniform(0.1, 60.0)
            a = rng.uniform(0.005, 2.0)
            b = a + rng.uniform(0.005, 2.0)
            pwa = PiecewiseTravelTime(x1, x2, a, b)
            x = rng.uniform(0.0, 3.0 * x2)
            res = linprog(
                c=[a, b],
                A_ub=[[-1.0, -1.0], [0.0, -1.0]],
                b_ub=[-(x - x1), -(x - x2)],
                bounds=[(0.0, x2 - x1), (0.0, None)],
                method="highs",
            )
            assert res.status == 0
            e1, e2 = compute_slacks(pwa, x)
            worst = max(worst, abs(e1 - res.x[0]), abs(e2 - res.x[1]))
        check(11, "excess-flow slacks match the LP oracle on 1000 draws",
              worst <= 1e-7, f"worst gap {worst:.2e}")

    def test_criterion_12_deterministic_report(self, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        code_a = main(["plan", str(seed_scenario_path()), str(out_a)])
        code_b = main(["plan", str(seed_scenario_path()), str(out_b)])
        same = (out_a / "report.json").read_bytes() == (out_b / "report.json").read_bytes()
        check(12, "two full runs produce byte-identical report.json",
              code_a == 0 and code_b == 0 and same)
