"""Config parsing, artifact emission and the command-line surface."""
import json
import math

import numpy as np
import pytest

import ivdrem
from ivdrem.cli import TRACE_COLUMNS, main
from ivdrem.presets import parse_config
from ivdrem.sim import ConfigError


# ----------------------------------------------------------- parse_config

def test_parse_config_empty_file_gives_full_preset(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("")
    scen, cfg = parse_config(path)
    np.testing.assert_allclose(scen.params.theta, [1.3, 0.28, 0.32, 0.4, 1.4])
    assert scen.gains.alpha == 1.0
    np.testing.assert_array_equal(scen.gains.K, 2.0 * np.eye(2))
    assert scen.gains.l == 50.0
    assert scen.gains.p == 2.0
    assert scen.gains.T == 20.0
    assert scen.gains.delta_mu == 0.8
    np.testing.assert_array_equal(scen.gains.Gamma, 0.01 * np.eye(5))
    assert scen.gains.gamma_proposed == 1e10
    assert scen.gains.gamma_baseline == 1.0
    assert scen.weight.eval(0.0) == (15.0, 1.0)  # mu(t) = t + 15
    np.testing.assert_allclose(scen.initial.q, [0.0, 0.3 * math.pi])
    np.testing.assert_allclose(scen.reference.amplitude,
                               [0.4 * math.pi, 0.3 * math.pi])
    np.testing.assert_allclose(scen.disturbance.amplitude, [7.5, 1.5])
    assert cfg.law == "proposed" and cfg.h == 1e-3


def test_parse_config_rejects_bad_delta_mu(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"scenario": {"gains": {"delta_mu": 1.5}}}))
    with pytest.raises(ConfigError, match=r"delta_mu must lie in \(0,1\)"):
        parse_config(path)


def test_parse_config_rejects_incommensurate_window(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"sim": {"h": 3e-3}}))
    with pytest.raises(ConfigError, match="integer multiple"):
        parse_config(path)


def test_parse_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"scenario": {"thata": [1, 2, 3, 4, 5]}}))
    with pytest.raises(ConfigError, match="thata"):
        parse_config(path)
    path.write_text(json.dumps({"simulation": {}}))
    with pytest.raises(ConfigError, match="simulation"):
        parse_config(path)


def test_parse_config_rejects_unknown_preset(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"preset": "paper9dof"}))
    with pytest.raises(ConfigError, match="paper9dof"):
        parse_config(path)


def test_parse_config_reports_json_line(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{\n  \"sim\": {,}\n}")
    with pytest.raises(ConfigError, match=":2"):
        parse_config(path)


def test_parse_config_disturbance_off(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"scenario": {"disturbance": "off"}}))
    scen, _ = parse_config(path)
    assert scen.disturbance.is_zero


# ------------------------------------------------------------------- run

@pytest.fixture(scope="module")
def run_artifacts(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rc = main(["run", "--preset", "paper2dof", "--law", "proposed",
               "--t-end", "2", "--out", str(out)])
    assert rc == 0
    return out


def test_run_writes_artifacts(run_artifacts):
    for name in ("trace.csv", "metrics.json", "conditions.json"):
        assert (run_artifacts / name).exists()


def test_trace_header_golden(run_artifacts):
    header = (run_artifacts / "trace.csv").read_text().splitlines()[0]
    assert header == ",".join(TRACE_COLUMNS)
    assert header.startswith("t,q1,q2,qd1,qd2,e1,e2,e_norm,r1,r2,theta_hat1")


def test_trace_values_round_trip(run_artifacts):
    lines = (run_artifacts / "trace.csv").read_text().splitlines()
    first = lines[1].split(",")
    assert len(first) == len(TRACE_COLUMNS)
    assert float(first[0]) == 0.0
    parsed = [float(v) for v in first]
    assert all(np.isfinite(parsed))


def test_metrics_json_loads(run_artifacts):
    doc = json.loads((run_artifacts / "metrics.json").read_text())
    assert doc["law"] == "proposed"
    assert "final_window_mean_theta_err" in doc
    doc = json.loads((run_artifacts / "conditions.json").read_text())
    assert "delta_l2_quarter_increments" in doc


def test_rerun_byte_identical(run_artifacts, tmp_path):
    out2 = tmp_path / "again"
    rc = main(["run", "--preset", "paper2dof", "--law", "proposed",
               "--t-end", "2", "--out", str(out2)])
    assert rc == 0
    for name in ("trace.csv", "metrics.json", "conditions.json"):
        assert (run_artifacts / name).read_bytes() == (out2 / name).read_bytes()


def test_run_config_error_exit_code(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"scenario": {"gains": {"delta_mu": 2.0}}}))
    rc = main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_run_divergence_exit_code(tmp_path):
    cfg = tmp_path / "div.json"
    cfg.write_text(json.dumps({"scenario": {"gains": {"l": 1e5}},
                               "sim": {"t_end": 1.0}}))
    rc = main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert rc == 3


def test_run_disturbance_off_flag(tmp_path):
    out = tmp_path / "nodist"
    rc = main(["run", "--preset", "paper2dof", "--law", "proposed",
               "--t-end", "1", "--disturbance", "off", "--out", str(out)])
    assert rc == 0
    doc = json.loads((out / "metrics.json").read_text())
    assert doc["sup_tau_d"] == 0.0


# --------------------------------------------------------------- compare

def test_compare_identical_dirs(run_artifacts, capsys):
    rc = main(["compare", str(run_artifacts), str(run_artifacts)])
    assert rc == 0
    lines = capsys.readouterr().out
    assert "tie" in lines
    assert "winner" in lines


def test_compare_flags_winner(run_artifacts, tmp_path, capsys):
    out2 = tmp_path / "oracle"
    rc = main(["run", "--preset", "paper2dof", "--law", "none", "--t-end", "2",
               "--config", str(_oracle_cfg(tmp_path)), "--out", str(out2)])
    assert rc == 0
    rc = main(["compare", str(run_artifacts), str(out2)])
    assert rc == 0
    assert "B" in capsys.readouterr().out


def _oracle_cfg(tmp_path):
    path = tmp_path / "oracle.json"
    path.write_text(json.dumps(
        {"scenario": {"theta_hat0": [1.3, 0.28, 0.32, 0.4, 1.4]}}))
    return path


def test_compare_missing_dir(tmp_path):
    rc = main(["compare", str(tmp_path / "nope"), str(tmp_path / "nada")])
    assert rc == 2


# --------------------------------------------------------------- presets

def test_presets_command(capsys):
    rc = main(["presets"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "paper2dof" in out
    assert "n_theta=5" in out
