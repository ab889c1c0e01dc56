from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest

from treereach.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, RunReport, main

SHORT_EX1 = """
builtin = "example1-linear"
[overrides]
horizon = 0.1
[overrides.oracle]
lower = [-1.0, -1.0]
upper = [1.0, 1.0]
counts = [81, 81]
"""


@pytest.fixture
def short_config(tmp_path):
    path = tmp_path / "short.toml"
    path.write_text(SHORT_EX1)
    return path


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# schema: treereach/1")
    return list(csv.DictReader(lines[1:]))


def test_reach_writes_artifacts(short_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["reach", str(short_config), "--out", str(out), "--keep-levels"]) == EXIT_OK
    for name in ("nodes.csv", "hull_vertices.csv", "hull_facets.csv", "report.json",
                 "metrics.csv", "timings.json"):
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    assert report["schema_version"] == "treereach/1"
    assert report["tree"]["levels"] == 5
    assert report["tolerances"]["tree"]["tol_hull_rel"] == 1e-9
    assert report["config"]["horizon"] == 0.1
    nodes = read_csv(out / "nodes.csv")
    assert {int(r["level"]) for r in nodes} == set(range(6))
    metrics = read_csv(out / "metrics.csv")
    assert [int(r["nodes"]) for r in metrics] == report["tree"]["node_counts"]
    assert json.loads(capsys.readouterr().out)["final_level_count"] == report["tree"]["final_level_count"]


def test_report_round_trips(short_config, tmp_path):
    out = tmp_path / "out"
    main(["reach", str(short_config), "--out", str(out)])
    text = (out / "report.json").read_text()
    assert RunReport.from_dict(json.loads(text)).to_json() == text


def test_report_is_deterministic_across_thread_counts(short_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["compare", str(short_config), "--out", str(a), "--threads", "1"])
    main(["compare", str(short_config), "--out", str(b), "--threads", "3"])
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()


def test_zero_horizon_reach_is_seed_polygon(short_config, tmp_path):
    cfg = tmp_path / "zero.toml"
    cfg.write_text('builtin = "example1-linear"\n[overrides]\nhorizon = 0.0\n')
    out = tmp_path / "out"
    assert main(["reach", str(cfg), "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["tree"]["node_counts"] == [20]
    expected = 0.5 * 20 * 0.01 * math.sin(2 * math.pi / 20)
    assert report["tree"]["final_hull_measure"] == pytest.approx(expected)


def test_zero_horizon_oracle_is_terminal_disc(tmp_path):
    cfg = tmp_path / "zero.toml"
    cfg.write_text('builtin = "example1-linear"\n[overrides]\nhorizon = 0.0\n'
                   '[overrides.oracle]\nlower = [-0.5, -0.5]\nupper = [0.5, 0.5]\ncounts = [401, 401]\n')
    out = tmp_path / "out"
    assert main(["oracle", str(cfg), "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["oracle"]["sublevel_measure"] == pytest.approx(math.pi * 0.01, rel=1e-3)
    assert (out / "field.csv").exists() and (out / "contour.csv").exists()


def test_zero_field_compare_matches_terminal_measure(tmp_path):
    cfg = tmp_path / "still.toml"
    cfg.write_text("""
builtin = "example1-linear"
[overrides]
horizon = 0.2
n0 = 200
[overrides.model]
kind = "linear"
A = [[0.0, 0.0], [0.0, 0.0]]
B = [[0.0, 0.0], [0.0, 0.0]]
[overrides.oracle]
lower = [-0.5, -0.5]
upper = [0.5, 0.5]
counts = [201, 201]
""")
    out = tmp_path / "out"
    assert main(["compare", str(cfg), "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    disc = math.pi * 0.01
    assert report["tree"]["final_hull_measure"] == pytest.approx(disc, rel=1e-3)
    assert report["oracle"]["sublevel_measure"] == pytest.approx(disc, rel=0.01)
    rows = read_csv(out / "overlay.csv")
    assert {r["source"] for r in rows} == {"tree-hull", "oracle-contour"}


def test_tree_full_with_eps(short_config, tmp_path):
    cfg = tmp_path / "full.toml"
    cfg.write_text('builtin = "example1-linear"\n[overrides]\nhorizon = 0.04\n')
    out = tmp_path / "out"
    assert main(["reach", str(cfg), "--algorithm", "tree-full", "--eps", "0.5",
                 "--seed-count", "10", "--input-count", "6", "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["tree"]["node_counts"] == [11, 60, 360]
    assert report["tolerances"]["eps"] == 0.5
    assert report["tolerances"]["seed_mode"] == "filled"
    values = [float(r["value"]) for r in read_csv(out / "nodes.csv")]
    assert min(values) >= -0.5


def test_out_dir_from_environment(short_config, tmp_path, monkeypatch):
    monkeypatch.setenv("REACH_OUT_DIR", str(tmp_path / "env"))
    assert main(["reach", str(short_config)]) == EXIT_OK
    assert (tmp_path / "env" / "report.json").exists()


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('builtin = "example1-linear"\n[overrides]\nhorizn = 1\n')
    assert main(["reach", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    broken = tmp_path / "broken.toml"
    broken.write_text("horizon = [\n")
    assert main(["reach", str(broken), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["reach", str(tmp_path / "missing.toml")]) == EXIT_CONFIG
    cfl = tmp_path / "cfl.toml"
    cfl.write_text('builtin = "example1-linear"\n[overrides.oracle]\ncfl = 2.0\n'
                   'lower = [-1.0, -1.0]\nupper = [1.0, 1.0]\ncounts = [11, 11]\n')
    assert main(["oracle", str(cfl), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_numeric_failures_exit_3(tmp_path):
    blow = tmp_path / "blow.toml"
    blow.write_text("""
builtin = "example1-linear"
[overrides]
horizon = 1.0
[overrides.stepper]
dt = 0.5
[overrides.model]
kind = "linear"
A = [[1e200, 0.0], [0.0, 1e200]]
B = [[1.0, 0.0], [0.0, 1.0]]
""")
    assert main(["reach", str(blow), "--out", str(tmp_path)]) == EXIT_NUMERIC
    cap = tmp_path / "cap.toml"
    cap.write_text('builtin = "example1-linear"\n[overrides]\nhorizon = 0.2\n[overrides.tree]\ncap = 100\n')
    assert main(["reach", str(cap), "--algorithm", "tree-full", "--out", str(tmp_path)]) == EXIT_NUMERIC
