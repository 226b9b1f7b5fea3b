import json
import subprocess
import sys

import numpy as np
import pytest

from pwainv.cli import RunManifest, config_hash, main

from conftest import MODELS, SCENARIOS


def model_doc(locations, P=None, beta=None):
    doc = {"schema": "pwa-model/1", "name": "t", "n_x": len(locations[0]["A"]), "n_u": 1, "n_y": 1,
           "locations": locations}
    if P is not None:
        doc["arrangement"] = {"P": P, "beta": beta}
    return doc


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def test_analyze_printhead(capsys):
    assert main(["analyze", str(MODELS / "printhead_control.json")]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "μ̂=1, switching: stable-mode, NMP: yes"
    assert "A5.5 location-independent outputs" in out


def test_analyze_json_and_lti_note(capsys):
    assert main(["analyze", "--json", str(MODELS / "appendix_lti.json")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["mu_hat"] == 1 and rep["note"] == "mu_hat from Markov parameters"
    assert rep["nmp"] is True


@pytest.mark.parametrize("name,first", [
    ("mu0_feedthrough.json", "μ̂=0"),
    ("mu1_stable_switching.json", "μ̂=1, switching: stable-mode"),
    ("mu1_unstable_switching.json", "μ̂=1, switching: unstable-mode"),
])
def test_analyze_fixtures(capsys, name, first):
    assert main(["analyze", "--strict", str(MODELS / name)]) == 0
    assert capsys.readouterr().out.startswith(first)


def test_strict_exit_on_failed_check(tmp_path, capsys):
    locs = [{"A": [[0.5, 0.1], [0.0, 0.3]], "B": [[1.0], [1.0]], "C": [[1.0, 0.0]], "signatures": ["0"]},
            {"A": [[0.5, 0.1], [0.0, 0.3]], "B": [[1.0], [1.0]], "C": [[2.0, 0.0]], "signatures": ["1"]}]
    path = write_json(tmp_path / "m.json", model_doc(locs, [[0.0, 1.0]], [0.0]))
    assert main(["analyze", path]) == 0
    assert "fail" in capsys.readouterr().out
    assert main(["analyze", "--strict", path]) == 1


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["analyze", str(bad)]) == 2
    assert main(["analyze", str(tmp_path / "missing.json")]) == 2
    assert main(["analyze", write_json(tmp_path / "x.json", {"schema": "pwa-model/1"})]) == 2
    assert "error:" in capsys.readouterr().err


def test_module_error_exit_code(tmp_path):
    locs = [{"A": [[0.5, 0.0], [0.0, 0.5]], "B": [[0.0], [1.0]], "C": [[1.0, 0.0]]}]
    assert main(["analyze", write_json(tmp_path / "m.json", model_doc(locs))]) == 3


def _nrmse_line(out):
    line = next(x for x in out.splitlines() if x.startswith("round-trip NRMSE"))
    return float(line.split()[2])


@pytest.mark.parametrize("name,flags", [
    ("mu0_feedthrough.json", []),
    ("mu1_stable_switching.json", ["--stable", "--pad", "60"]),
    ("mu1_unstable_switching.json", ["--stable", "--pad", "60"]),
])
def test_invert_round_trip(tmp_path, capsys, name, flags):
    code = main(["invert", str(MODELS / name), str(MODELS / "bump_reference.csv"),
                 "--out", str(tmp_path), *flags])
    assert code == 0
    out = capsys.readouterr().out
    assert _nrmse_line(out) < 1e-8
    assert ("inverse states: max |x|" in out) == bool(flags)
    u_lines = (tmp_path / "u.csv").read_text().splitlines()
    assert u_lines[0] == "k [sample],u [input units]"
    pad = 60 if flags else 0
    assert len(u_lines) - 1 == 200 + 2 * pad
    assert (tmp_path / "states.csv").read_text().startswith("k [sample],x0 [state units]")


def test_invert_bad_reference(tmp_path):
    (tmp_path / "r.csv").write_text("y\nabc\n")
    assert main(["invert", str(MODELS / "mu0_feedthrough.json"), str(tmp_path / "r.csv")]) == 2


def test_ilc_writes_logs_and_reruns_identically(tmp_path, capsys):
    args = ["ilc", str(SCENARIOS / "appendix_lti.json"), "--trials", "4", "--out", str(tmp_path)]
    assert main(args) == 0
    out = capsys.readouterr().out
    assert "NRMSE" in out and "Peak Error Magnitude" in out
    run = tmp_path / "appendix-lti" / "saab"
    names = ["manifest.json", "trials.csv", "trials.jsonl", "final_trial.csv"]
    first = {n: (run / n).read_bytes() for n in names}
    man = json.loads(first["manifest.json"])
    assert man["n_trials"] == 4 and man["seed"] == 0 and man["scheme"] == "saab"
    assert len(first["trials.jsonl"].splitlines()) == 4
    assert main(args) == 0
    assert {n: (run / n).read_bytes() for n in names} == first
    assert main(args[:-2] + ["--seed", "1", "--out", str(tmp_path)]) == 0
    assert json.loads((run / "manifest.json").read_text())["config_hash"] != man["config_hash"]


def test_ilc_diverged_campaign_exits_zero(tmp_path, capsys):
    code = main(["ilc", str(SCENARIOS / "appendix_lti.json"), "--scheme", "wang",
                 "--trials", "6", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "converged: False" in out


def test_ilc_config_errors(tmp_path):
    assert main(["ilc", str(SCENARIOS / "msd.json"), "--scheme", "ptype", "--out", str(tmp_path)]) == 2
    assert main(["ilc", str(SCENARIOS / "appendix_lti.json"), "--trials", "0",
                 "--out", str(tmp_path)]) == 2
    bad = tmp_path / "s.json"
    bad.write_text('{"schema": "scenario/1", "scenario": "msd", "extra": 1}')
    assert main(["ilc", str(bad), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        main(["ilc", str(SCENARIOS / "msd.json"), "--scheme", "unknown"])


def test_ilc_env_output_and_jobs(tmp_path, monkeypatch, capsys):
    second = tmp_path / "second.json"
    doc = json.loads((SCENARIOS / "appendix_lti.json").read_text())
    doc["name"] = "second"
    second.write_text(json.dumps(doc))
    monkeypatch.setenv("PWAINV_OUT", str(tmp_path / "env"))
    assert main(["ilc", str(SCENARIOS / "appendix_lti.json"), str(second), "--trials", "2",
                 "--jobs", "2"]) == 0
    assert (tmp_path / "env" / "appendix-lti" / "saab" / "trials.csv").exists()
    assert (tmp_path / "env" / "second" / "saab" / "trials.csv").exists()


def test_manifest_and_hash(tmp_path):
    m = RunManifest("s", "ililc", 0, 3, "out", "0.1.0", config_hash({"b": 1, "a": [1, 2]}))
    assert config_hash({"a": [1, 2], "b": 1}) == m.config_hash
    text = m.write(tmp_path / "m.json").read_text()
    assert list(json.loads(text)) == sorted(json.loads(text))


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pwainv", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("pwainv ")
