import json
from pathlib import Path

import pytest

from coopbench.cli import main
from coopbench.lane_graph import serialize_lane_graph
from coopbench.scenario import serialize_scenario_dir
from coopbench.suites import occlusion_suite


@pytest.fixture(scope="module")
def cli_root(tmp_path_factory, map_library):
    lib, _ = map_library
    root = tmp_path_factory.mktemp("cli_scenarios")
    (root / "maps").mkdir()
    graph = lib.get("straight_2lane_a")
    serialize_lane_graph(graph, root / "maps" / f"{graph.map_id}.lanes")
    for scen in occlusion_suite(graph)[:2]:
        serialize_scenario_dir(scen, root / scen.id)
    return root


def test_stats_command(cli_root, capsys):
    assert main(["stats", "--scenarios", str(cli_root)]) == 0
    out = capsys.readouterr().out
    assert "interaction" in out
    assert "RL(m)" in out


def test_run_and_report_commands(cli_root, tmp_path, capsys):
    out_dir = tmp_path / "res"
    rc = main(["--out", str(out_dir), "run",
               "--scenarios", str(cli_root), "--policies", "coop_perception"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "executed 2 episodes" in out
    rc = main(["report", "--results", str(out_dir / "results.jsonl"),
               "--scatter", str(tmp_path / "scatter.csv")])
    assert rc == 0
    assert (tmp_path / "scatter.csv").exists()


def test_sweep_command(cli_root, tmp_path, capsys):
    rc = main(["--out", str(tmp_path / "sw"), "sweep",
               "--scenarios", str(cli_root), "--policies", "coop_perception",
               "--latency", "0,6"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "perturbation deltas" in out
    summary = json.loads((tmp_path / "sw" / "summary.json").read_text())
    assert "lat6_pos0_rot0" in summary["sweep"]


def test_gen_export_command(tmp_path, capsys):
    rc = main(["--seed", "4", "--out", str(tmp_path / "gen"), "gen", "export",
               "--categories", "pedestrian_crosswalk", "--count", "5"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "instantiated 5 scenarios" in out
    index = (tmp_path / "gen" / "batch.index").read_text().splitlines()
    assert len(index) >= 1
    # exported scenarios re-parse cleanly through the suite loader
    rc = main(["--out", str(tmp_path / "genrun"), "run",
               "--scenarios", str(tmp_path / "gen"), "--policies", "single"])
    assert rc == 0


def test_convert_command(crossing_map, tmp_path, capsys):
    import sys
    sys.path.insert(0, str(Path(__file__).parent))
    from test_real2sim import synthetic_log
    from coopbench.real2sim import serialize_log
    from coopbench.lane_graph import serialize_lane_graph as ser_map
    maps_dir = tmp_path / "maps"
    maps_dir.mkdir()
    ser_map(crossing_map, maps_dir / f"{crossing_map.map_id}.lanes")
    log = synthetic_log(crossing_map)
    serialize_log(log, tmp_path / "drive.log")
    rc = main(["--out", str(tmp_path / "conv"), "convert",
               "--log", str(tmp_path / "drive.log"),
               "--maps", str(maps_dir), "--id", "r2s_cli"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "conversion report" in out
    assert (tmp_path / "conv" / "manifest").exists()
    assert (tmp_path / "conv" / "conversion.report").exists()


def test_gen_propose_prints_schemas(capsys):
    rc = main(["--seed", "1", "gen", "propose",
               "--categories", "unprotected_left_turn", "--count", "2"])
    assert rc == 0
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.strip()]
    schemas = [json.loads(ln) for ln in lines]
    assert len(schemas) == 2
    assert all(s["category"] == "unprotected_left_turn" for s in schemas)
