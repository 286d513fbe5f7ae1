import csv
import json
import logging
import subprocess
import sys

import pytest

from tolab.cli import load_tree, main, parse_override, sweep_points
from tolab.energy import ConfigError
from tolab.io import read_field


def _cfg(tmp_path, tree, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(tree))
    return str(p)


ONE_PHASE = {"n": 2, "a": 0.5, "grid": {"cells": 16}, "datum": {"family": "one_phase_exact"}}


def test_solve_writes_artifacts(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", "--config", _cfg(tmp_path, ONE_PHASE), "--out", str(out)]) == 0
    rep = json.loads((out / "solve_report.json").read_text())
    assert rep["report"]["converged"] and rep["problem"]["a"] == 0.5
    f = read_field(out / "solution.field")
    assert f.grid.spec.cells_per_axis == (16, 16)
    assert (out / "thin_trace.csv").read_text().startswith("x1,u\n")


def test_override_recorded_in_provenance(tmp_path):
    out = tmp_path / "o"
    code = main(["solve", "--config", _cfg(tmp_path, ONE_PHASE), "--override", "grid.cells=24",
                 "--override", "solver.method=fista", "--out", str(out)])
    assert code == 0
    rep = json.loads((out / "solve_report.json").read_text())
    assert rep["config"]["grid"]["cells"] == 24 and rep["problem"]["grid"]["cells"] == [24, 24]
    assert rep["report"]["solver"] == "fista"
    base = rep["config_hash"]
    main(["solve", "--config", _cfg(tmp_path, ONE_PHASE), "--out", str(tmp_path / "p")])
    assert json.loads((tmp_path / "p" / "solve_report.json").read_text())["config_hash"] != base


def test_identical_configs_identical_hashes(tmp_path):
    for d in ("a", "b"):
        assert main(["solve", "--config", _cfg(tmp_path, ONE_PHASE), "--out", str(tmp_path / d)]) == 0
    ra, rb = (json.loads((tmp_path / d / "solve_report.json").read_text()) for d in ("a", "b"))
    assert ra["config_hash"] == rb["config_hash"]
    assert (tmp_path / "a" / "solution.field").read_bytes() == (tmp_path / "b" / "solution.field").read_bytes()


@pytest.mark.parametrize(
    "tree,key",
    [
        ({"grid": {"cells": 2}}, "grid.cells"),
        ({"gird": {}}, "gird"),
        ({"a": 3.0}, "a"),
        ({"datum": {"family": "odd_x1"}}, "datum.params.M"),
        ({"solver": {"method": "newton"}}, "solver.method"),
    ],
)
def test_malformed_config_names_key(tmp_path, capsys, tree, key):
    out = tmp_path / "o"
    assert main(["solve", "--config", _cfg(tmp_path, tree), "--out", str(out)]) == 2
    err = json.loads((out / "error.json").read_text())
    assert err["exit_code"] == 2 and err["key"] == key
    assert json.loads(capsys.readouterr().out)["key"] == key


def test_config_file_problems(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["solve", "--override", "grid.colour=red", "--out", str(tmp_path)]) == 2
    assert main(["solve", "--override", "novalue", "--out", str(tmp_path)]) == 2


def test_override_parsing():
    assert parse_override("grid.cells=[8, 16]") == ("grid.cells", [8, 16])
    assert parse_override("datum.family=odd_x1") == ("datum.family", "odd_x1")
    assert parse_override("datum.params.anything=1.5") == ("datum.params.anything", 1.5)
    with pytest.raises(ConfigError):
        parse_override("bogus=1")
    assert load_tree(None, ["a=0.25", "grid.cells=8"]) == {"a": 0.25, "grid": {"cells": 8}}


def _stored_field(tmp_path, a):
    out = tmp_path / f"f{a}"
    tree = {**ONE_PHASE, "a": a, "grid": {"cells": 64}}
    assert main(["solve", "--config", _cfg(tmp_path, tree, f"s{a}.json"), "--out", str(out)]) == 0
    return str(out / "solution.field")


def test_diagnose_weiss_on_one_phase_field(tmp_path):
    path = _stored_field(tmp_path, 0.5)
    out = tmp_path / "d"
    assert main(["diagnose", "--field", path, "--override", "lam_plus=1", "--out", str(out)]) == 0
    s = json.loads((out / "weiss_summary.json").read_text())
    assert max(abs(v) for v in s["values"]) < 1e-3
    assert (out / "weiss_series.csv").exists()


def test_diagnose_acf_inapplicable(tmp_path, capsys):
    path = _stored_field(tmp_path, 0.5)
    out = tmp_path / "d"
    assert main(["diagnose", "--field", path, "--override", "diagnose.functional=acf", "--out", str(out)]) == 3
    err = json.loads((out / "error.json").read_text())
    assert "acf requires a=0" in err["message"]


def test_diagnose_growth_fit_and_mismatch(tmp_path):
    path = _stored_field(tmp_path, 0.0)
    out = tmp_path / "d"
    assert main(["diagnose", "--field", path, "--override", "diagnose.functional=growth", "--out", str(out)]) == 0
    s = json.loads((out / "growth_summary.json").read_text())
    assert s["fit"]["slope"] == pytest.approx(1.0, abs=1e-3)
    assert main(["diagnose", "--field", path, "--override", "a=0.5", "--out", str(out)]) == 2
    assert main(["diagnose", "--field", str(tmp_path / "nope.field"), "--out", str(out)]) == 2


def test_experiment_exit_codes(tmp_path):
    assert main(["experiment", "--scenario", "E1", "--out", str(tmp_path / "e1")]) == 0
    doc = json.loads((tmp_path / "e1" / "E1_report.json").read_text())
    assert doc["passed"] and doc["config_hash"]
    assert main(["experiment", "--scenario", "E5", "--override", "a=-0.5", "--out", str(tmp_path / "e5")]) == 4
    assert main(["experiment", "--override", "scenario.id=E8", "--out", str(tmp_path / "e8")]) == 2


def test_experiment_threshold_failure_exit_1(tmp_path):
    code = main(["experiment", "--scenario", "E1", "--override", "scenario.ladder=[8]",
                 "--override", "solver.kkt_tol=1e-30", "--out", str(tmp_path)])
    assert code == 1


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("TOL_OUT", str(tmp_path / "env"))
    assert main(["experiment", "--scenario", "E1", "--override", "scenario.ladder=[16]"]) == 0
    assert (tmp_path / "env" / "E1_report.json").exists()


def test_sweep_points_dedup(caplog):
    with caplog.at_level(logging.WARNING):
        pts = sweep_points({"a": [0.0, 0.5, 0.0], "cells": [16]})
    assert pts == [{"a": 0.0, "cells": 16}, {"a": 0.5, "cells": 16}]
    assert "duplicate" in caplog.text
    with pytest.raises(ConfigError):
        sweep_points({"a": []})
    with pytest.raises(ConfigError):
        sweep_points({"scenario": "E1"})


def test_sweep_writes_table(tmp_path):
    tree = {"sweep": {"scenario": "E1", "a": [-0.5, 0.0, 0.5, 0.0], "cells": [16]}}
    out = tmp_path / "s"
    assert main(["sweep", "--config", _cfg(tmp_path, tree), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "sweep.csv", newline="")))
    assert [r["a"] for r in rows] == ["-0.5", "0.0", "0.5"]
    assert all(r["status"] == "pass" for r in rows)
    assert all((out / f"point_{i:03d}" / "E1_report.json").exists() for i in range(3))
    assert b"\r" not in (out / "sweep.csv").read_bytes()


def test_sweep_partial_failure_and_empty_grid(tmp_path):
    tree = {"sweep": {"scenario": "E5", "a": [-0.5, 0.5], "cells": [16]}}
    out = tmp_path / "s"
    assert main(["sweep", "--config", _cfg(tmp_path, tree), "--out", str(out)]) == 1
    rows = list(csv.DictReader(open(out / "sweep.csv", newline="")))
    assert rows[0]["status"] == "inapplicable"
    assert main(["sweep", "--config", _cfg(tmp_path, {"sweep": {"scenario": "E1", "a": []}}, "e.json"),
                 "--out", str(out)]) == 2
    assert main(["sweep", "--out", str(out)]) == 2
    tree = {"sweep": {"scenario": "E1", "M": [1.0]}}
    assert main(["sweep", "--config", _cfg(tmp_path, tree, "m.json"), "--out", str(out)]) == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "tolab", "experiment", "--scenario", "E5", "--override", "a=-0.5",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 4
    assert json.loads(res.stdout)["kind"] == "inapplicable"
