import json
import os

import pytest

from kirchhofflab.cli import ConfigError, RunConfig, main


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_config_rejects_p_out_of_range(tmp_path):
    path = write_config(tmp_path, {"p": 5.0})
    rc = main(["ground-state", path, "--out", str(tmp_path / "out")])
    assert rc == 2


def test_config_rejects_unknown_field(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"not_a_field": 1}, "ground-state")


def test_config_rejects_bad_eps(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"eps_list": [0.7]}, "perturb")
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"newton_tol": -1.0}, "perturb")


def test_config_parse_error_has_location(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{\n  \"a\": 1.0,\n}\n")
    rc = main(["ground-state", str(path), "--out", str(tmp_path / "out")])
    assert rc == 2


def test_ground_state_run_classical_limit(tmp_path):
    cfg = write_config(tmp_path, {"a": 1.0, "b": 0.0, "p": 3.0})
    out = tmp_path / "out"
    assert main(["ground-state", cfg, "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["values"]["c"] == pytest.approx(1.0, abs=1e-12)
    assert doc["all_passed"]
    assert (out / "profile.txt").exists()
    header = (out / "profile.txt").read_text().splitlines()[0]
    assert "a=" in header and "c=" in header and "Q0=" in header


def test_ground_state_run_nonlocal(tmp_path):
    cfg = write_config(tmp_path, {"a": 1.0, "b": 1.0, "p": 3.0})
    out = tmp_path / "out"
    assert main(["ground-state", cfg, "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["values"]["c"] > 1.0
    names = {c["name"] for c in doc["checks"]}
    assert "scaling_self_consistency" in names
    assert doc["all_passed"]


def test_report_is_reproducible(tmp_path):
    cfg = write_config(tmp_path, {"a": 1.0, "b": 0.5, "p": 2.0})
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert main(["ground-state", cfg, "--out", str(out1)]) == 0
    assert main(["ground-state", cfg, "--out", str(out2)]) == 0
    assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
    assert (out1 / "profile.txt").read_bytes() == (out2 / "profile.txt").read_bytes()


def test_out_dir_env_override(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, {"a": 1.0, "b": 0.0, "p": 3.0})
    target = tmp_path / "env_out"
    monkeypatch.setenv("KIRCHHOFFLAB_OUT", str(target))
    assert main(["ground-state", cfg]) == 0
    assert (target / "report.json").exists()


def test_spectrum_run(tmp_path):
    cfg = write_config(tmp_path, {"a": 1.0, "b": 1.0, "p": 3.0})
    out = tmp_path / "out"
    assert main(["spectrum", cfg, "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["values"]["kernel_sectors"] == [1]
    assert doc["values"]["kernel_multiplicity"] == 3
    spec = json.loads((out / "spectrum.json").read_text())
    assert len(spec["sectors"]) == 6  # k = 0..5
    assert spec["passed"]


def test_spectrum_classical_limit_pairing_zero(tmp_path):
    cfg = write_config(tmp_path, {"a": 1.0, "b": 0.0, "p": 3.0})
    out = tmp_path / "out"
    assert main(["spectrum", cfg, "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert abs(doc["values"]["gradient_pairing"]) < 1e-12


def test_expansion_run(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "a": 1.0, "b": 0.025, "p": 3.0,
            "potential": {"kind": "power_well", "coeffs": [0.05, 0.05, 0.05], "m": 2.0},
            "eps_list": [0.2, 0.1, 0.05],
            "y": [0.05, 0.0, 0.0],
        },
    )
    out = tmp_path / "out"
    assert main(["expansion", cfg, "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["values"]["remainder_exponent"] == pytest.approx(5.0, abs=1e-6)
    lines = (out / "expansion.csv").read_text().splitlines()
    assert lines[0] == "eps,profile_energy,remainder"
    assert len(lines) == 4


def test_perturb_run_with_infeasible_eps(tmp_path):
    """A failing eps is recorded as data; the run exits 0 with a partial
    trace."""
    cfg = write_config(
        tmp_path,
        {
            "a": 1.0, "b": 0.025, "p": 3.0,
            "potential": {"kind": "power_well", "coeffs": [2.5, 2.5, 2.5], "m": 2.0},
            "box": {"L": 12.0, "n": 25},
            "eps_list": [0.4, 0.1],
            "cross_validate": False,
            "newton_tol": 1e-8,
        },
    )
    out = tmp_path / "out"
    assert main(["perturb", cfg, "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    trace = (out / "trace.csv").read_text().splitlines()
    assert len(trace) == 3
    assert doc["values"]["failed"] >= 1


def test_report_consolidation(tmp_path):
    cfg = write_config(tmp_path, {"a": 1.0, "b": 0.0, "p": 3.0})
    out = tmp_path / "runs" / "gs"
    assert main(["ground-state", cfg, "--out", str(out)]) == 0
    summary_out = tmp_path / "summary"
    assert main(["report", str(tmp_path / "runs"), "--out", str(summary_out)]) == 0
    doc = json.loads((summary_out / "report.json").read_text())
    assert doc["values"]["reports_found"] == 1
    assert all("source" in c for c in doc["checks"])


def test_perturb_worker_pool_matches_serial(tmp_path):
    doc = {
        "a": 1.0, "b": 0.025, "p": 3.0,
        "potential": {"kind": "power_well", "coeffs": [0.05, 0.05, 0.05], "m": 2.0},
        "box": {"L": 12.0, "n": 49},
        "eps_list": [0.2, 0.1],
        "cross_validate": False,
        "newton_tol": 1e-7,
    }
    out_serial = tmp_path / "serial"
    assert main(["perturb", write_config(tmp_path, doc, "s.json"),
                 "--out", str(out_serial)]) == 0
    doc["workers"] = 2
    out_pool = tmp_path / "pool"
    assert main(["perturb", write_config(tmp_path, doc, "p.json"),
                 "--out", str(out_pool)]) == 0
    serial = json.loads((out_serial / "report.json").read_text())
    pooled = json.loads((out_pool / "report.json").read_text())
    assert serial["values"]["correction_ratios"] == pooled["values"]["correction_ratios"]
    assert (out_serial / "trace.csv").read_text() == (out_pool / "trace.csv").read_text()


def test_pohozaev_cli_with_auto_center(tmp_path):
    doc = {
        "a": 1.0, "b": 0.025, "p": 3.0,
        "potential": {"kind": "power_well", "coeffs": [0.05, 0.1, 0.15],
                      "m": 2.0, "tilt": [0.02, 0.012, 0.008]},
        "box": {"L": 12.0, "n": 49},
        "eps_list": [0.1],
        "y": "auto",
        "newton_tol": 1e-8,
    }
    out = tmp_path / "out"
    assert main(["pohozaev", write_config(tmp_path, doc), "--out", str(out)]) == 0
    doc2 = json.loads((out / "report.json").read_text())
    assert len(doc2["values"]["reports"]) == 3
    assert (out / "pohozaev.json").exists()
