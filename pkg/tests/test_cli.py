import json

import pytest

from hpa_dyn.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from hpa_dyn.config import FIXTURES_DIR


def _fixture(name):
    return str(FIXTURES_DIR / name)


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _config(tmp_path, doc):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


SHORT_RUN = {
    "kernels": [{"type": "dirac", "tau": 5.0}, {"type": "dirac", "tau": 3.0}],
    "t_end": 100.0,
    "dt": 0.05,
}


def test_equilibria_for_the_reference_parameters(capsys):
    code, out, _ = _run(capsys, "equilibria", "--config", _fixture("equilibria_gupta.json"))
    assert code == EXIT_OK
    doc = json.loads(out)
    assert [e["gr_level"] for e in doc["equilibria"]] == ["Low", "Medium", "High"]
    assert doc["equilibria"][-1]["state"]["crh"] == pytest.approx(0.66013, abs=1e-3)


def test_equilibria_single_root(capsys):
    code, out, _ = _run(capsys, "equilibria", "--config", _fixture("equilibria_single.json"))
    assert code == EXIT_OK
    assert [e["gr_level"] for e in json.loads(out)["equilibria"]] == ["Low"]


def test_malformed_config_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{oops", encoding="utf-8")
    code, out, err = _run(capsys, "equilibria", "--config", str(path))
    assert code == EXIT_CONFIG
    assert out == ""
    assert "malformed" in err


def test_unknown_key_exits_2(tmp_path, capsys):
    code, _, err = _run(capsys, "equilibria", "--config", _config(tmp_path, {"nope": 1}))
    assert code == EXIT_CONFIG
    assert "nope" in err


def test_bad_flag_value_is_an_argparse_error():
    with pytest.raises(SystemExit) as exc:
        main(["stability", "--kernel", "box"])
    assert exc.value.code == 2


def test_stability_dirac(capsys):
    code, out, _ = _run(capsys, "stability", "--config", _fixture("stability_dirac.json"))
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["verdict"] == "HopfCritical"
    assert len(doc["critical"]) == 3
    assert doc["critical"][0]["value"] == pytest.approx(7.4718, abs=1e-3)
    assert doc["critical"][1]["value"] == pytest.approx(32.8043, abs=0.01)
    # fixture holds tau1 = 25
    assert doc["critical_above_tau1"]["value"] == pytest.approx(32.8043, abs=0.01)
    assert doc["q"] == 1.0


def test_stability_dirac_fractional_order(capsys):
    code, out, _ = _run(capsys, "stability", "--config", _fixture("stability_fractional.json"))
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["q"] == 0.8
    assert doc["critical"]
    assert doc["critical_above_tau1"]["value"] >= 25.0
    code, out, _ = _run(capsys, "stability", "--config", _fixture("stability_fractional.json"), "--q", "1.0")
    assert json.loads(out)["critical"][0]["value"] == pytest.approx(7.4718, abs=1e-3)


def test_stability_gamma(capsys):
    code, out, _ = _run(capsys, "stability", "--config", _fixture("stability_gamma.json"))
    assert code == EXIT_OK
    doc = json.loads(out)
    # a = 0.02 lies below the switch rate
    assert doc["verdict"] == "Unstable"
    assert 0.07 < doc["critical"][0]["value"] < 0.08
    code, out, _ = _run(capsys, "stability", "--config", _fixture("stability_gamma.json"), "--a", "0.2")
    assert json.loads(out)["verdict"] == "Stable"


def test_stability_without_delay_at_medium(capsys):
    code, out, _ = _run(capsys, "stability", "--config", _fixture("stability_none_medium.json"))
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["verdict"] == "Unstable"
    assert "inequalities" in doc


def test_flags_override_the_file(capsys):
    code, out, _ = _run(capsys, "stability", "--config", _fixture("stability_dirac.json"), "--kernel", "none")
    assert code == EXIT_OK
    assert json.loads(out)["kernel"] == "none"


def test_mixed_needs_a20(capsys):
    code, _, _ = _run(capsys, "stability", "--kernel", "mixed")
    assert code == EXIT_CONFIG
    code, out, _ = _run(capsys, "stability", "--config", _fixture("stability_mixed.json"))
    assert code == EXIT_OK
    assert json.loads(out)["kernel"] == "mixed"


def test_missing_equilibrium_level_is_a_config_error(capsys):
    code, _, err = _run(capsys, "stability", "--config", _fixture("equilibria_single.json"), "--equilibrium", "high")
    assert code == EXIT_CONFIG
    assert "high" in err


def test_simulate_writes_csv_and_summary(tmp_path, capsys):
    csv_path = tmp_path / "traj.csv"
    cfg = _config(tmp_path, SHORT_RUN)
    code, out, _ = _run(capsys, "simulate", "--config", cfg, "--output", str(csv_path))
    assert code == EXIT_OK
    summary = json.loads(out)
    assert summary["solver"] == "dde"
    assert summary["samples"] == 2001
    assert summary["class"] in {"Converging", "Oscillating", "Undetermined"}
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "t,crh,acth,gr,cort"
    assert len(lines) == 2002


def test_simulate_is_deterministic(tmp_path, capsys):
    cfg = _config(tmp_path, {**SHORT_RUN, "q": 0.9})
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    assert _run(capsys, "simulate", "--config", cfg, "--output", str(first))[0] == EXIT_OK
    assert _run(capsys, "simulate", "--config", cfg, "--output", str(second))[0] == EXIT_OK
    assert first.read_bytes() == second.read_bytes()


def test_simulate_delay_flags(tmp_path, capsys):
    code, out, _ = _run(capsys, "simulate", "--tau1", "5", "--tau2", "3", "--t-end", "100", "--dt", "0.05")
    assert code == EXIT_OK
    assert json.loads(out)["solver"] == "dde"
    code, _, _ = _run(capsys, "simulate", "--tau1", "5")
    assert code == EXIT_CONFIG
    code, out, _ = _run(capsys, "simulate", "--a", "0.5", "--t-end", "100", "--dt", "0.05")
    assert code == EXIT_OK
    assert json.loads(out)["solver"] == "chain"


def test_simulate_without_kernels_is_a_config_error(capsys):
    assert _run(capsys, "simulate")[0] == EXIT_CONFIG


def test_numerical_failure_exits_3(tmp_path, capsys):
    cfg = _config(tmp_path, {**SHORT_RUN, "dt": 1.0})
    code, _, err = _run(capsys, "simulate", "--config", cfg)
    assert code == EXIT_NUMERICAL
    assert "StepTooLarge" in err


def test_empty_sweep_writes_header_only(tmp_path, capsys):
    cfg = _config(tmp_path, {"sweep": {"tau1": 25.0, "tau_total": [], "q": [1.0]}})
    out_path = tmp_path / "sweep.csv"
    code, _, _ = _run(capsys, "sweep", "--config", cfg, "--output", str(out_path))
    assert code == EXIT_OK
    assert out_path.read_text() == "tau1,tau2,tau_total,q,solver,class,amplitude,period,offset,departed\n"


def test_small_sweep_to_stdout(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("HPA_DYN_THREADS", "1")
    doc = {"sweep": {"tau1": 5.0, "tau_total": [7.0, 8.0], "q": [1.0]}, "t_end": 100.0, "dt": 0.05}
    code, out, _ = _run(capsys, "sweep", "--config", _config(tmp_path, doc))
    assert code == EXIT_OK
    lines = out.splitlines()
    assert len(lines) == 3
    assert lines[1].startswith("5,2,7,1,dde,")


def test_bad_environment_settings_exit_2(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("HPA_DYN_THREADS", "many")
    assert _run(capsys, "equilibria")[0] == EXIT_OK
    doc = {"sweep": {"tau1": 5.0, "tau_total": [7.0], "q": [1.0]}, "t_end": 100.0, "dt": 0.05}
    code, _, err = _run(capsys, "sweep", "--config", _config(tmp_path, doc))
    assert code == EXIT_CONFIG
    assert "HPA_DYN_THREADS" in err
    monkeypatch.delenv("HPA_DYN_THREADS")
    monkeypatch.setenv("HPA_DYN_LOG_LEVEL", "chatty")
    code, _, err = _run(capsys, "equilibria")
    assert code == EXIT_CONFIG
    assert "HPA_DYN_LOG_LEVEL" in err


def test_simulate_summary_reports_departure(tmp_path, capsys):
    code, out, _ = _run(capsys, "simulate", "--config", _config(tmp_path, SHORT_RUN))
    assert code == EXIT_OK
    summary = json.loads(out)
    assert summary["departed"] is False
    assert summary["offset"] < 1e-2
