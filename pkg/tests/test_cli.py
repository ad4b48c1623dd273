"""Command surface and report bundle writing."""

import json

import pytest

from fleetplan.cli import main
from fleetplan.scenario_io import (
    ScenarioError,
    load_scenario,
    parse_scenario,
    scenario_to_dict,
    seed_scenario_path,
)

SMALL = {
    "name": "triangle",
    "nodes": [
        {"id": 1, "x": 0.0, "y": 0.0},
        {"id": 2, "x": 1.0, "y": 0.0, "charging": True},
        {"id": 3, "x": 0.5, "y": 1.0},
    ],
    "edges": [
        {"from": 1, "to": 2, "t0": 0.06, "gamma": 20.0, "length": 1.5, "p": 3.0},
        {"from": 2, "to": 1, "t0": 0.06, "gamma": 20.0, "length": 1.5, "p": 3.0},
        {"from": 2, "to": 3, "t0": 0.05, "gamma": 15.0, "length": 1.4, "p": 2.0},
        {"from": 3, "to": 2, "t0": 0.05, "gamma": 15.0, "length": 1.4, "p": 2.0},
        {"from": 1, "to": 3, "t0": 0.09, "gamma": 10.0, "length": 2.4, "p": 2.0},
        {"from": 3, "to": 1, "t0": 0.09, "gamma": 10.0, "length": 2.4, "p": 2.0},
    ],
    "demands": [
        {"o": 1, "d": 3, "alpha": 8.0},
        {"o": 3, "d": 1, "alpha": 5.0},
        {"o": 2, "d": 1, "alpha": 3.0},
    ],
    "weights": {"w_r": 0.05},
    "solver": {"eps_primal": 1e-8, "eps_dual": 1e-8},
}


@pytest.fixture()
def small_path(tmp_path):
    path = tmp_path / "triangle.json"
    path.write_text(json.dumps(SMALL))
    return path


class TestValidate:
    def test_seed_fixture_ok(self, capsys):
        assert main(["validate", str(seed_scenario_path())]) == 0
        assert "scenario OK" in capsys.readouterr().out

    def test_unknown_demand_node(self, tmp_path, capsys):
        doc = json.loads(json.dumps(SMALL))
        doc["demands"].append({"o": 1, "d": 99, "alpha": 1.0})
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        assert main(["validate", str(path)]) == 1
        err = capsys.readouterr().err
        assert "99" in err and "demand" in err

    def test_missing_charging_station(self, tmp_path, capsys):
        doc = json.loads(json.dumps(SMALL))
        for node in doc["nodes"]:
            node.pop("charging", None)
        path = tmp_path / "nostation.json"
        path.write_text(json.dumps(doc))
        assert main(["validate", str(path)]) == 1
        assert "charging station" in capsys.readouterr().err

    def test_malformed_json_reports_position(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text('{"nodes": [,]}')
        assert main(["validate", str(path)]) == 1
        err = capsys.readouterr().err
        assert "line 1" in err and "column" in err

    def test_unknown_keys_rejected(self, tmp_path, capsys):
        doc = json.loads(json.dumps(SMALL))
        doc["extra_section"] = {}
        path = tmp_path / "extra.json"
        path.write_text(json.dumps(doc))
        assert main(["validate", str(path)]) == 1
        assert "unknown keys" in capsys.readouterr().err


BUNDLE_FILES = (
    "report.json",
    "flows.csv",
    "loops.json",
    "schedules.json",
    "network.svg",
    "network.dot",
    "congestion.svg",
)


class TestPlanCommand:
    def test_full_bundle(self, small_path, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["plan", str(small_path), str(out)]) == 0
        for name in BUNDLE_FILES:
            assert (out / name).exists(), name
        doc = json.loads((out / "report.json").read_text())
        assert set(doc["phases"]) == {"baseline", "p1", "p2"}
        assert doc["energy"]["feasible"] is True

    def test_flows_csv_covers_every_edge_each_phase(self, small_path, tmp_path):
        out = tmp_path / "out"
        main(["plan", str(small_path), str(out)])
        lines = (out / "flows.csv").read_text().strip().splitlines()
        assert lines[0] == "phase,from,to,u,r,p,x,ratio"
        body = [line.split(",") for line in lines[1:]]
        for phase in ("baseline", "p1", "p2"):
            rows = [row for row in body if row[0] == phase]
            assert len(rows) == len(SMALL["edges"])
            assert len({(row[1], row[2]) for row in rows}) == len(SMALL["edges"])

    def test_no_charging_flag(self, small_path, tmp_path):
        out = tmp_path / "out"
        assert main(["plan", str(small_path), str(out), "--no-charging"]) == 0
        assert not (out / "schedules.json").exists()
        doc = json.loads((out / "report.json").read_text())
        assert set(doc["phases"]) == {"baseline", "p1"}

    def test_no_baseline_flag(self, small_path, tmp_path):
        out = tmp_path / "out"
        assert main(["plan", str(small_path), str(out), "--no-baseline"]) == 0
        doc = json.loads((out / "report.json").read_text())
        assert set(doc["phases"]) == {"p1", "p2"}

    def test_baseline_only_flag(self, small_path, tmp_path):
        out = tmp_path / "out"
        assert main(["plan", str(small_path), str(out), "--baseline-only"]) == 0
        doc = json.loads((out / "report.json").read_text())
        assert set(doc["phases"]) == {"baseline"}
        assert not (out / "schedules.json").exists()

    def test_invalid_scenario_exits_1(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("not json at all {")
        assert main(["plan", str(path), str(tmp_path / "out")]) == 1

    def test_rounds_override(self, small_path, tmp_path):
        out = tmp_path / "out"
        assert main(["plan", str(small_path), str(out), "--rounds", "1"]) in (0, 3)
        doc = json.loads((out / "report.json").read_text())
        assert doc["energy"]["rounds_used"] == 1

    def test_bad_rounds_value_exits_1(self, small_path, tmp_path, capsys):
        assert main(["plan", str(small_path), str(tmp_path / "out"), "--rounds", "0"]) == 1
        assert "max_rounds" in capsys.readouterr().err

    def test_seed_flag_changes_private_flows(self, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        main(["plan", str(seed_scenario_path()), str(out_a), "--baseline-only"])
        main(["plan", str(seed_scenario_path()), str(out_b), "--baseline-only", "--seed", "99"])
        doc_a = json.loads((out_a / "report.json").read_text())
        doc_b = json.loads((out_b / "report.json").read_text())
        p_a = [e["p"] for e in doc_a["scenario"]["edges"]]
        p_b = [e["p"] for e in doc_b["scenario"]["edges"]]
        assert p_a != p_b

    def test_solver_failure_exits_2(self, tmp_path, capsys):
        doc = json.loads(json.dumps(SMALL))
        doc["solver"] = {"max_iterations": 2, "polish": False, "adaptive_rho": False}
        path = tmp_path / "hopeless.json"
        path.write_text(json.dumps(doc))
        assert main(["plan", str(path), str(tmp_path / "out")]) == 2
        assert "solver failure" in capsys.readouterr().err


class TestRenderCommand:
    def test_render_each_phase(self, small_path, tmp_path):
        out = tmp_path / "out"
        main(["plan", str(small_path), str(out)])
        for phase in ("baseline", "p1", "p2"):
            target = tmp_path / f"{phase}.svg"
            assert main(["render", str(out / "report.json"), str(target), "--phase", phase]) == 0
            assert target.stat().st_size > 1000

    def test_render_is_deterministic(self, small_path, tmp_path):
        out = tmp_path / "out"
        main(["plan", str(small_path), str(out)])
        a = tmp_path / "a.svg"
        b = tmp_path / "b.svg"
        main(["render", str(out / "report.json"), str(a), "--phase", "p1"])
        main(["render", str(out / "report.json"), str(b), "--phase", "p1"])
        assert a.read_bytes() == b.read_bytes()

    def test_missing_phase_exits_1(self, small_path, tmp_path, capsys):
        out = tmp_path / "out"
        main(["plan", str(small_path), str(out), "--baseline-only"])
        code = main(["render", str(out / "report.json"), str(tmp_path / "x.svg"), "--phase", "p2"])
        assert code == 1

    def test_dot_output_mentions_every_edge(self, small_path, tmp_path):
        out = tmp_path / "out"
        main(["plan", str(small_path), str(out)])
        dot = (out / "network.dot").read_text()
        for edge in SMALL["edges"]:
            assert f'{edge["from"]} -> {edge["to"]}' in dot

    def test_zero_flow_edge_renders_at_scale_bottom(self, tmp_path):
        from fleetplan.render import render_network, write_dot
        import matplotlib

        doc = {
            "scenario": {
                "name": "mini",
                "nodes": [{"id": 1, "x": 0.0, "y": 0.0}, {"id": 2, "x": 1.0, "y": 0.0}],
            },
            "phases": {
                "p1": {
                    "edges": [
                        {"from": 1, "to": 2, "gamma": 5.0, "u": 0, "r": 0, "p": 0, "x": 0, "ratio": 0.0},
                        {"from": 2, "to": 1, "gamma": 5.0, "u": 1, "r": 0, "p": 0, "x": 1, "ratio": 0.2},
                    ]
                }
            },
        }
        render_network(doc, "p1", tmp_path / "mini.svg")
        assert (tmp_path / "mini.svg").stat().st_size > 500
        write_dot(doc, "p1", tmp_path / "mini.dot")
        dot = (tmp_path / "mini.dot").read_text()
        bottom = matplotlib.colors.to_hex(matplotlib.colormaps["turbo"](0.0))
        assert f'1 -> 2 [color="{bottom}"' in dot


class TestSeedBundle:
    def test_dot_covers_all_22_edges(self, seed_bundle, seed_scenario):
        dot = (seed_bundle / "network.dot").read_text()
        count = sum(1 for line in dot.splitlines() if "->" in line)
        assert count == seed_scenario.network.n_edges == 22

    def test_phase1_render_from_seed_report(self, seed_bundle, tmp_path):
        target = tmp_path / "p1.svg"
        assert main(["render", str(seed_bundle / "report.json"), str(target), "--phase", "p1"]) == 0
        assert target.stat().st_size > 1000

    def test_csv_has_66_rows(self, seed_bundle):
        lines = (seed_bundle / "flows.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 3 * 22


class TestScenarioRoundTrip:
    def test_parse_serialize_parse_is_identity(self, small_path):
        first = load_scenario(small_path)
        doc = scenario_to_dict(first)
        second = parse_scenario(doc)
        assert first == second

    def test_seed_round_trip(self):
        first = load_scenario(seed_scenario_path())
        second = parse_scenario(scenario_to_dict(first))
        assert first == second

    def test_seed_override_changes_private_flows(self, tmp_path):
        base = load_scenario(seed_scenario_path())
        other = load_scenario(seed_scenario_path(), seed_override=99)
        assert base.network.roads != other.network.roads

    def test_p_required_without_p_random(self, tmp_path):
        doc = json.loads(json.dumps(SMALL))
        del doc["edges"][0]["p"]
        path = tmp_path / "nop.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ScenarioError, match="p_random"):
            load_scenario(path)
