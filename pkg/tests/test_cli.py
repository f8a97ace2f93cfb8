import json

import pytest
import yaml

from oracles import G0_D3
from rilab.cli import main


def _run(tmp_path, name, *args, config=None):
    out = tmp_path / name
    argv = [name, "--out-dir", str(out), *args]
    if config is not None:
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(config))
        argv += ["--config", str(path)]
    return main(argv), out


SMALL = {"A": {"kind": "box", "lower": [-0.5] * 3, "upper": [0.5] * 3}, "N": 3, "M": 1.0, "R": 2.0, "u": 1.0, "budgets": {"replicas": 20, "min_hits": 1, "trials": 5,
                                                           "mc_samples": 2000, "ensembles": 2000}}


def test_green_prints_value(tmp_path, capsys):
    status, out = _run(tmp_path, "green")
    assert status == 0
    assert f"{G0_D3:.12f}" in capsys.readouterr().out
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "green" and man["exit_status"] == 0
    assert set(man["outputs"]) == {"green.csv"}
    assert man["config"]["u"] == 3.0


def test_green_paranoid(tmp_path):
    assert _run(tmp_path, "green", "--paranoid")[0] == 0


def test_gauge_verify_passes(tmp_path):
    status, out = _run(tmp_path, "gauge-verify", "--trials", "5", "--support", "2")
    assert status == 0
    assert (out / "gauge_verify.csv").exists()


def test_bad_config_exits_2(tmp_path, capsys):
    status, _ = _run(tmp_path, "green", config={"u": 3.0, "u_bar": 2.0})
    assert status == 2
    assert "u_bar" in capsys.readouterr().err
    assert _run(tmp_path, "green", config={"budgets": {"replicas": -1}})[0] == 2
    assert _run(tmp_path, "green", config={"unknown_key": 1})[0] == 2
    assert _run(tmp_path, "green", config={"M": 3.0, "R": 1.0})[0] == 2


def test_missing_config_file_exits_2(tmp_path):
    assert main(["green", "--out-dir", str(tmp_path), "--config", str(tmp_path / "nope.yaml")]) == 2


def test_capacity_and_equilibrium(tmp_path):
    assert _run(tmp_path, "capacity", config=SMALL)[0] == 0
    assert _run(tmp_path, "equilibrium", config=SMALL)[0] == 0


def test_rerun_is_bit_exact(tmp_path):
    s1, o1 = _run(tmp_path, "disconnect", "--seed", "4", config=SMALL)
    m1 = json.loads((o1 / "manifest.json").read_text())
    (tmp_path / "again").mkdir()
    s2, o2 = _run(tmp_path / "again", "disconnect", "--seed", "4", config=SMALL)
    m2 = json.loads((o2 / "manifest.json").read_text())
    assert s1 == s2 == 0
    assert m1["outputs"] == m2["outputs"]
    assert m1["seed"] == 4


def test_seed_changes_output(tmp_path):
    _, o1 = _run(tmp_path, "sample", "--seed", "1", config=SMALL)
    m1 = json.loads((o1 / "manifest.json").read_text())
    (tmp_path / "b").mkdir()
    _, o2 = _run(tmp_path / "b", "sample", "--seed", "2", config=SMALL)
    m2 = json.loads((o2 / "manifest.json").read_text())
    assert m1["outputs"] != m2["outputs"]


def test_distance_and_bound(tmp_path):
    assert _run(tmp_path, "distance", "--trials", "5")[0] == 0
    assert _run(tmp_path, "bound-verify", config=SMALL)[0] == 0


def test_excursion_scales(tmp_path):
    status, out = _run(tmp_path, "excursions", config={"N": 10000, "gamma": 0.1})
    assert status == 0
    assert "948600" in (out / "scales.csv").read_text()


def test_toy_excursions(tmp_path):
    cfg = {**SMALL, "toy_scale": {"L0": 1, "K": 5}, "u": 1.0}
    status, out = _run(tmp_path, "excursions", "--toy-scale", config=cfg)
    assert status == 0
    assert (out / "excursions.csv").exists()


def test_sampling_commands(tmp_path):
    for name in ("occupation", "condition"):
        assert _run(tmp_path, name, config=SMALL)[0] == 0
    assert _run(tmp_path, "laplace-verify", "--u", "0.5", config=SMALL)[0] == 0


def test_profile_distance_command(tmp_path):
    cfg = {**SMALL, "R": 1.0, "u_bar": 2.0, "coarse_cells": 3}
    status, out = _run(tmp_path, "profile-distance", config=cfg)
    assert status == 0
    data = json.loads((out / "profile_distance.json").read_text())
    assert data["u_bar"] == 2.0 and not data["u_bar_fitted"]


def test_appendix_small(tmp_path):
    cfg = {"appendix": {"L": 3, "Ks": [4, 8], "Ls": [2, 4, 8], "rs": [0.1]},
           "budgets": {"wos_samples": 2000}}
    status, out = _run(tmp_path, "appendix-a", config=cfg)
    assert status == 0
    assert "delta" in (out / "appendix_a.csv").read_text()


def test_report_aggregates(tmp_path, capsys):
    _run(tmp_path, "green")
    status, out = main(["report", "--out-dir", str(tmp_path)]), tmp_path
    assert status == 0
    entries = json.loads((tmp_path / "report.json").read_text())
    assert [e["command"] for e in entries] == ["green"]


@pytest.mark.parametrize("argv", [["--version"], ["nonsense"]])
def test_parser_exits(argv):
    with pytest.raises(SystemExit):
        main(argv)
