import csv
import json
import subprocess
import sys

import pytest

from ness_lattice.cli import (
    EXIT_ANALYSIS,
    EXIT_CONFIG,
    EXIT_OK,
    ExperimentConfig,
    main,
    resolve_output_dir,
)

QUARTIC = [0, 0, 0.5, 0, 0.25]
HARMONIC = [0, 0, 0.5]


def chain_model(n=3, onsite=QUARTIC, pair=QUARTIC, T=(2.0, 1.0)):
    return {
        "topology": {"kind": "chain", "n": n},
        "onsite": onsite,
        "pair": pair,
        "reservoirs": {"T_left": T[0], "T_right": T[1], "lambda": 1.0, "gamma": 1.0},
    }


def diamond_model():
    return {
        "topology": {"kind": "graph", "edges": [[1, 2], [2, 3], [3, 4], [4, 1]]},
        "onsite": HARMONIC,
        "pair": HARMONIC,
        "baths": [{"vertex": 1, "T": 1.0, "lambda": 1.0}, {"vertex": 3, "T": 1.0, "lambda": 1.0}],
    }


@pytest.fixture
def write(tmp_path):
    def _write(doc, name="cfg.json"):
        path = tmp_path / name
        path.write_text(doc if isinstance(doc, str) else json.dumps(doc, indent=1))
        return str(path)

    return _write


def _run(*argv):
    return main([str(a) for a in argv])


def _rows(path):
    lines = [ln for ln in open(path) if not ln.startswith("#")]
    return list(csv.reader(lines))


# ---------------------------------------------------------------------------
# check


def test_check_quartic_passes(write, tmp_path, capsys):
    cfg = write({"model": chain_model()})
    assert _run("check", cfg, "--out", tmp_path / "o") == EXIT_OK
    out = capsys.readouterr().out
    assert "H1: ok" in out and "H2: ok" in out
    rep = json.loads((tmp_path / "o" / "check.json").read_text())
    assert rep["pass"] is True
    assert rep["results"]["controllability"]["skipped"]


def test_check_diamond_warns_and_strict_fails(write, tmp_path, capsys):
    cfg = write({"model": diamond_model()})
    assert _run("check", cfg, "--out", tmp_path / "a") == EXIT_OK
    assert "rank deficient: rank 6/8" in capsys.readouterr().err
    assert _run("check", cfg, "--out", tmp_path / "b", "--strict") == EXIT_ANALYSIS


@pytest.mark.filterwarnings("ignore:pair potential is not confining")
def test_check_linear_pair_fails(write, tmp_path):
    cfg = write({"model": chain_model(onsite=HARMONIC, pair=[0, 0, 0.5, 0.1])})
    assert _run("check", cfg, "--out", tmp_path / "o") == EXIT_ANALYSIS


# ---------------------------------------------------------------------------
# configuration errors


def test_schema_error_has_location(write, tmp_path, capsys):
    doc = {"model": chain_model()}
    doc["model"]["topology"]["n"] = 0
    cfg = write(doc)
    assert _run("check", cfg, "--out", tmp_path / "o") == EXIT_CONFIG
    err = capsys.readouterr().err
    payload = json.loads(err.splitlines()[0])
    assert payload["error"] == "config_error" and payload["exit_code"] == EXIT_CONFIG
    assert any("model.topology.n" in line and "cfg.json:" in line for line in err.splitlines()[1:])


def test_unknown_key_rejected(write, tmp_path, capsys):
    cfg = write({"model": chain_model(), "bogus": 1})
    assert _run("check", cfg, "--out", tmp_path / "o") == EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err


def test_malformed_json(write, tmp_path, capsys):
    cfg = write('{"model": {"topology": }')
    assert _run("check", cfg, "--out", tmp_path / "o") == EXIT_CONFIG
    assert "malformed JSON" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert _run("check", tmp_path / "nope.json", "--out", tmp_path / "o") == EXIT_CONFIG


def test_unknown_observable(write, tmp_path):
    cfg = write({"model": chain_model(), "run": {"horizon": 1, "observers": ["bogus"]}})
    assert _run("simulate", cfg, "--out", tmp_path / "o") == EXIT_CONFIG


def test_oracle_rejects_quartic(write, tmp_path):
    assert _run("oracle", write({"model": chain_model()}), "--out", tmp_path / "o") == EXIT_CONFIG


# ---------------------------------------------------------------------------
# simulate and verify


def _sim_doc(**run):
    base = {"horizon": 5, "seed": 7, "stride": 5, "observers": ["G", "Phi_1", "sigma_1"]}
    base.update(run)
    return {"model": chain_model(), "integrator": {"dt": 0.01}, "run": base}


def test_simulate_horizon_zero_is_header_only(write, tmp_path):
    cfg = write(_sim_doc())
    assert _run("simulate", cfg, "--out", tmp_path / "o", "--horizon", 0) == EXIT_OK
    rows = _rows(tmp_path / "o" / "trajectory.csv")
    assert rows == [["t", "G", "Phi_1", "sigma_1"]]


def test_simulate_observers_flag(write, tmp_path):
    cfg = write(_sim_doc())
    assert _run("simulate", cfg, "--out", tmp_path / "o", "--observers", "Phi_1,q_2") == EXIT_OK
    rows = _rows(tmp_path / "o" / "trajectory.csv")
    assert rows[0] == ["t", "Phi_1", "q_2"]
    assert len(rows) == 1 + 101
    first = open(tmp_path / "o" / "trajectory.csv").readline()
    assert first.startswith("# config_digest=") and "seed=7" in first


def test_simulate_rerun_is_byte_identical_and_verifies(write, tmp_path, capsys):
    cfg = write(_sim_doc())
    for d in ("a", "b"):
        assert _run("simulate", cfg, "--out", tmp_path / d) == EXIT_OK
    for name in ("trajectory.csv", "trajectory.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert _run("verify", tmp_path / "a") == EXIT_OK
    assert "identical" in capsys.readouterr().out
    (tmp_path / "a" / "trajectory.csv").write_text("tampered\n")
    assert _run("verify", tmp_path / "a") == EXIT_ANALYSIS


def test_seed_override_changes_output(write, tmp_path):
    cfg = write(_sim_doc())
    _run("simulate", cfg, "--out", tmp_path / "a")
    _run("simulate", cfg, "--out", tmp_path / "b", "--seed", 8)
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() != (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_simulate_ensemble_files(write, tmp_path):
    cfg = write(_sim_doc(n_traj=2))
    assert _run("simulate", cfg, "--out", tmp_path / "o") == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "o").iterdir())
    assert "trajectory_0000.csv" in names and "trajectory_0001.json" in names


def test_manifest_contents(write, tmp_path):
    cfg = write(_sim_doc())
    _run("simulate", cfg, "--out", tmp_path / "o")
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seed"] == 7
    assert set(man["files"]) == {"trajectory.csv", "trajectory.json"}
    assert man["config"]["integrator"]["scheme"] == "splitting"
    assert man["config_digest"] == ExperimentConfig.from_document(man["config"]).digest


def test_output_directory_precedence(tmp_path, monkeypatch):
    monkeypatch.delenv("NESS_OUTPUT_DIR", raising=False)
    assert str(resolve_output_dir(None, {})) == "ness_output"
    monkeypatch.setenv("NESS_OUTPUT_DIR", str(tmp_path / "env"))
    assert resolve_output_dir(None, {}) == tmp_path / "env"
    assert str(resolve_output_dir(None, {"output": {"directory": "cfgdir"}})) == "cfgdir"
    assert str(resolve_output_dir("flag", {"output": {"directory": "cfgdir"}})) == "flag"


def test_env_output_directory_used(write, tmp_path, monkeypatch):
    monkeypatch.setenv("NESS_OUTPUT_DIR", str(tmp_path / "env"))
    assert _run("simulate", write(_sim_doc(horizon=0))) == EXIT_OK
    assert (tmp_path / "env" / "manifest.json").exists()


def test_output_formats(write, tmp_path):
    doc = _sim_doc()
    doc["output"] = {"formats": ["json"]}
    _run("simulate", write(doc), "--out", tmp_path / "o")
    assert not (tmp_path / "o" / "trajectory.csv").exists()
    data = json.loads((tmp_path / "o" / "trajectory.json").read_text())
    assert len(data["samples"]["Phi_1"]) == 101


# ---------------------------------------------------------------------------
# analyses with small parameters


def test_oracle_flux_table(write, tmp_path, capsys):
    doc = {"model": chain_model(onsite=HARMONIC, pair=HARMONIC)}
    assert _run("oracle", write(doc), "--out", tmp_path / "o") == EXIT_OK
    table = json.loads(capsys.readouterr().out.split("wrote")[0])
    vals = list(table.values())
    assert len(vals) == 4
    assert all(v == pytest.approx(vals[0], rel=1e-6) for v in vals) and vals[0] > 0


def test_oracle_diamond_not_unique(write, tmp_path):
    assert _run("oracle", write({"model": diamond_model()}), "--out", tmp_path / "o") == EXIT_ANALYSIS


def test_ldp_equilibrium_is_zero(write, tmp_path):
    doc = {
        "model": chain_model(T=(1.0, 1.0)),
        "integrator": {"dt": 0.02},
        "run": {"seed": 3, "stride": 5},
        "analysis": {"ldp": {"alphas": [0, 0.5, 1], "t_list": [2, 4], "n_traj": 40, "burn_in": 5, "n_boot": 20,
                             "w_grid": [0.0]}},
    }
    assert _run("ldp", write(doc), "--out", tmp_path / "o") == EXIT_OK
    rep = json.loads((tmp_path / "o" / "ldp.json").read_text())
    assert rep["pass"] is True
    assert rep["results"]["cumulant"]["e"] == [0.0, 0.0, 0.0]
    assert _rows(tmp_path / "o" / "ldp_cumulant.csv")[0][:2] == ["alpha", "e"]


def test_ldp_domain_error(write, tmp_path):
    doc = {"model": chain_model(), "analysis": {"ldp": {"alphas": [0, 3.0], "t_list": [1], "n_traj": 4}}}
    assert _run("ldp", write(doc), "--out", tmp_path / "o") == EXIT_CONFIG


def test_steady_targets(write, tmp_path):
    doc = {
        "model": chain_model(n=2, onsite=HARMONIC, pair=HARMONIC, T=(1.0, 1.0)),
        "integrator": {"dt": 0.02},
        "run": {"horizon": 400, "seed": 1, "stride": 5, "burn_in": 10, "observers": ["p_1"]},
        "analysis": {"steady": {"products": [["p_1", "p_1"]], "targets": {"p_1*p_1": 1.0}, "n_se": 4}},
    }
    assert _run("steady", write(doc), "--out", tmp_path / "o") == EXIT_OK
    rep = json.loads((tmp_path / "o" / "steady.json").read_text())
    assert "p_1*p_1" in json.dumps(rep["results"])


def test_gle_compare_table(write, tmp_path):
    doc = {
        "model": chain_model(),
        "run": {"seed": 2},
        "analysis": {"gle_compare": {"onsite": QUARTIC, "lambda": 1, "gamma": 1, "T": 1, "horizon": 2000,
                                     "n_se": 4}},
    }
    code = _run("gle-compare", write(doc), "--out", tmp_path / "o")
    rep = json.loads((tmp_path / "o" / "gle_compare.json").read_text())
    moments = rep["results"]["moments"]
    assert set(moments) == {"q_1", "p_1", "q_1*q_1", "p_1*p_1", "q_1*p_1"}
    assert code == (EXIT_OK if rep["pass"] else EXIT_ANALYSIS)
    assert moments["p_1*p_1"]["exact"] == 1.0


def test_gle_compare_needs_block(write, tmp_path):
    assert _run("gle-compare", write({"model": chain_model()}), "--out", tmp_path / "o") == EXIT_CONFIG


def test_scaling_small(write, tmp_path):
    doc = {"model": chain_model(), "analysis": {"scaling": {"energies": [10, 100, 1000], "n_directions": 2}}}
    assert _run("scaling", write(doc), "--out", tmp_path / "o") == EXIT_OK
    rep = json.loads((tmp_path / "o" / "scaling.json").read_text())
    assert rep["results"]["temperatures_zeroed"] is True


def test_module_entry_point(write, tmp_path):
    cfg = write({"model": chain_model()})
    proc = subprocess.run([sys.executable, "-m", "ness_lattice", "check", cfg, "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
