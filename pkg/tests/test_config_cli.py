import csv
import io
import json
import math

import numpy as np
import pytest

from geomsim.cli import main
from geomsim.config import (
    SEED_ENV,
    ConfigError,
    ScenarioConfig,
    data_path,
    load_device_file,
    resolve_seed,
)
from geomsim.runner import csv_text, evaluate_checks, parse_range, run_scenario

DEVICE = data_path("device_five_qubit.json")


def scenario(tmp_path, **kw):
    d = {"device": str(DEVICE), "experiment": "noise-variance", "output_dir": str(tmp_path / "out"),
         "params": {"samples": 2000, "gamma_per_us": [0.4, 4.0]}}
    d.update(kw)
    return d


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------- strict parsing

def test_scenario_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="scenario: unknown keys"):
        ScenarioConfig.from_dict(scenario(tmp_path, colour="blue"), env={})
    with pytest.raises(ConfigError, match="scenario.gate"):
        ScenarioConfig.from_dict(scenario(tmp_path, gate={"omega": 2}), env={})
    with pytest.raises(ConfigError, match="scenario.measurement"):
        ScenarioConfig.from_dict(scenario(tmp_path, measurement={"shot": 10}), env={})
    with pytest.raises(ConfigError, match="scenario.integrator"):
        ScenarioConfig.from_dict(scenario(tmp_path, integrator={"method": "rk45"}), env={})


def test_scenario_rejects_bad_values(tmp_path):
    with pytest.raises(ConfigError, match="experiment"):
        ScenarioConfig.from_dict(scenario(tmp_path, experiment="xeb"), env={})
    with pytest.raises(ConfigError, match="does not exist"):
        ScenarioConfig.from_dict(scenario(tmp_path, device=str(tmp_path / "nope.json")), env={})
    with pytest.raises(ConfigError, match="64"):
        ScenarioConfig.from_dict(scenario(tmp_path, seed=2**64), env={})
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"experiment": "rb"}, env={})


def test_device_file_round_trip_and_strictness(tmp_path):
    doc = json.loads(DEVICE.read_text())
    df = load_device_file(DEVICE)
    assert len(df.device.qubits) == 5 and set(df.points) >= {"single", "cz", "ccz", "cccz"}
    doc["device"]["qubits"][0]["t2_us"] = 3.0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises((ConfigError, KeyError)):
        load_device_file(bad)


def test_seed_resolution_and_environment_override():
    assert resolve_seed(5, env={}) == 5
    assert resolve_seed(5, env={SEED_ENV: "77"}) == 77
    assert resolve_seed(5, env={SEED_ENV: ""}) == 5
    with pytest.raises(ConfigError):
        resolve_seed("abc", env={})
    with pytest.raises(ConfigError):
        resolve_seed(-1, env={})


def test_parse_range():
    assert parse_range("0:1:0.5") == [0.0, 0.5, 1.0]
    assert parse_range("3:3:1") == [3.0]
    assert parse_range("1,2,4") == [1.0, 2.0, 4.0]
    assert parse_range(2) == [2.0]
    for bad in ("1:0:1", "0:1:0", "0:1"):
        with pytest.raises(ConfigError):
            parse_range(bad)


# ---------------------------------------------------------------- output format

def test_csv_is_rfc4180_with_full_precision():
    text = csv_text(("name", "value"), [("a,b", 1 / 3), ("c", 2.0)])
    assert text.endswith("\r\n")
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["name", "value"] and rows[1][0] == "a,b"
    assert float(rows[1][1]) == 1 / 3
    assert len(rows[1][1].lstrip("0.").rstrip("0")) >= 16


def test_check_bands_are_inclusive_and_nan_fails():
    acc = {"gate": {"cz": {"process_fidelity": [0.91, 0.96], "max_leakage": [None, 0.02]}}}
    c = evaluate_checks("gate", "cz", {"process_fidelity": 0.96, "max_leakage": 0.03}, acc)
    assert c["process_fidelity"]["passed"] and not c["max_leakage"]["passed"]
    c = evaluate_checks("gate", "cz", {"process_fidelity": math.nan}, acc)
    assert not c["process_fidelity"]["passed"]


# ---------------------------------------------------------------- runs

def test_run_writes_outputs_and_a_manifest(tmp_path):
    cfg = ScenarioConfig.from_dict(scenario(tmp_path), env={})
    man = run_scenario(cfg, jobs=1)
    out = tmp_path / "out"
    listed = json.loads((out / "manifest.json").read_text())
    assert listed["outputs"] == ["noise_variance.csv"] == man.outputs
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "noise_variance.csv"]
    assert listed["device_sha256"] == load_device_file(DEVICE).sha256
    assert listed["config"]["seed"] == cfg.seed
    rows = read_csv(out / "noise_variance.csv")
    assert rows[0][0] == "gamma_per_us" and len(rows) == 3


def test_identical_config_gives_identical_bytes(tmp_path):
    texts = []
    for sub in ("a", "b"):
        cfg = ScenarioConfig.from_dict(scenario(tmp_path, output_dir=str(tmp_path / sub), seed=42), env={})
        run_scenario(cfg, jobs=1)
        texts.append((tmp_path / sub / "noise_variance.csv").read_bytes())
    assert texts[0] == texts[1]
    cfg = ScenarioConfig.from_dict(scenario(tmp_path, output_dir=str(tmp_path / "c"), seed=42), env={SEED_ENV: "43"})
    run_scenario(cfg, jobs=1)
    assert (tmp_path / "c" / "noise_variance.csv").read_bytes() != texts[0]


def test_job_count_does_not_change_results(tmp_path):
    out = {}
    for jobs in (1, 3):
        d = {"device": str(DEVICE), "experiment": "rb", "output_dir": str(tmp_path / f"j{jobs}"),
             "params": {"lengths": [1, 2], "sequences": 3, "noiseless": True}}
        run_scenario(ScenarioConfig.from_dict(d, env={}), jobs=jobs)
        out[jobs] = (tmp_path / f"j{jobs}" / "rb_reference.csv").read_bytes()
    assert out[1] == out[3]


def test_cli_malformed_device_exits_without_outputs(tmp_path, capsys):
    bad = tmp_path / "broken.json"
    bad.write_text('{"device": {"qubits": [], "surprise": 1}}')
    dest = tmp_path / "never"
    code, out, err = run_cli(capsys, "noise-variance", "--device", str(bad), "--out", str(dest))
    assert code == 2 and "configuration error" in err
    assert out == "" and not dest.exists()
    bad.write_text("{not json")
    code, _, _ = run_cli(capsys, "noise-variance", "--device", str(bad), "--out", str(dest))
    assert code == 2 and not dest.exists()


def test_cli_check_lines(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    args = ["noise-variance", "--out", str(tmp_path / "nv"), "--samples", "20000", "--gamma", "4", "--check"]
    code, out, _ = run_cli(capsys, *args)
    lines = [ln for ln in out.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert code == 0 and lines == [ln for ln in lines if ln.startswith("PASS monte_carlo_ratio")] and lines
    strict = tmp_path / "strict.json"
    strict.write_text(json.dumps({"noise-variance": {"monte_carlo_ratio": [2.0, 3.0]}}))
    code, out, _ = run_cli(capsys, *args[:-1], "--out", str(tmp_path / "nv2"), "--check", "--acceptance", str(strict))
    assert code == 1 and "FAIL monte_carlo_ratio" in out


def test_cli_seed_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "99")
    code, _, _ = run_cli(capsys, "noise-variance", "--out", str(tmp_path / "e"), "--samples", "100", "--seed", "1")
    assert code == 0
    man = json.loads((tmp_path / "e" / "manifest.json").read_text())
    assert man["config"]["seed"] == 99


def test_cli_scenario_file(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    path = tmp_path / "s.json"
    path.write_text(json.dumps(scenario(tmp_path, seed=3)))
    code, out, _ = run_cli(capsys, "scenario", str(path))
    assert code == 0 and "monte_carlo_ratio" in json.loads(out)["results"]
    path.write_text(json.dumps(scenario(tmp_path, params=[1])))
    code, _, err = run_cli(capsys, "scenario", str(path))
    assert code == 2 and "scenario.params" in err


def test_cli_ramsey_surface(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "ramsey", "--omega-sq", "0:4:2", "--theta", "0:6.283:0.5", "--out", str(tmp_path / "r"))
    assert code == 0
    rows = read_csv(tmp_path / "r" / "ramsey_surface.csv")
    assert rows[0] == ["omega_sq_mhz2", "theta_rad", "p1"]
    assert len(rows) - 1 == 3 * 13
    # no drive: the analysis angle alone sets the excited population
    for w2, th, p1 in rows[1:14]:
        assert float(p1) == pytest.approx(0.5 * (1 + math.cos(float(th))), abs=1e-9)


def test_cli_gate_single_qubit(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "gate", "--n", "1", "--no-tomography", "--out", str(tmp_path / "g"))
    assert code == 0
    res = json.loads(out)["results"]
    assert abs(res["conditional_phase_rad"]) == pytest.approx(math.pi, abs=1e-3)
    table = json.loads((tmp_path / "g" / "phase_table.json").read_text())
    assert set(table) == {"calibrated", "uncompensated"}


# ---------------------------------------------------------------- sweeps

def test_single_value_sweep_equals_a_plain_run(tmp_path):
    base = {"device": str(DEVICE), "operating_point": "single"}
    gate = run_scenario(ScenarioConfig.from_dict(
        {**base, "experiment": "gate", "output_dir": str(tmp_path / "g"), "params": {"tomography": False}}, env={}), jobs=1)
    sweep = run_scenario(ScenarioConfig.from_dict(
        {**base, "experiment": "sweep", "output_dir": str(tmp_path / "s"),
         "params": {"parameter": "point.drive_delta_mhz", "values": "4:4:1"}}, env={}), jobs=1)
    rows = read_csv(tmp_path / "s" / "sweep.csv")
    assert len(rows) == 2 and sweep.results["points"] == 1
    _, fid, phase, leak, w2, err = rows[1]
    assert err == ""
    assert float(fid) == pytest.approx(gate.results["unitary_fidelity"], abs=1e-12)
    assert float(phase) == pytest.approx(gate.results["conditional_phase_rad"], abs=1e-12)
    assert float(leak) == pytest.approx(gate.results["max_leakage"], abs=1e-12)
    assert float(w2) == pytest.approx(gate.results["drive_omega_sq_mhz2"], abs=1e-12)


def test_detuning_sweep_scales_drive_with_delta_squared_and_records_failures(tmp_path):
    cfg = ScenarioConfig.from_dict({
        "device": str(DEVICE), "experiment": "sweep", "operating_point": "single",
        "output_dir": str(tmp_path / "d"), "params": {"parameter": "point.drive_delta_mhz", "values": [2, 4, 8]}},
        env={})
    man = run_scenario(cfg, jobs=1)
    rows = read_csv(tmp_path / "d" / "sweep.csv")[1:]
    w2 = {float(r[0]): float(r[4]) for r in rows}
    assert w2[4.0] / w2[2.0] == pytest.approx(4.0, rel=0.05)
    # at 8 MHz the calibrated drive is too strong for the 125 ns ramp; the point fails and the sweep continues
    assert math.isnan(w2[8.0]) and "NonAdiabaticBreakdown" in rows[2][5]
    assert man.results["failed"] == 1 and man.results["points"] == 3


def test_sweep_path_errors(tmp_path):
    for path in ("device.qubits.Q9.g01_mhz", "chip.x", "device.qubits.*.label"):
        cfg = ScenarioConfig.from_dict({
            "device": str(DEVICE), "experiment": "sweep", "operating_point": "single",
            "output_dir": str(tmp_path / "x"), "params": {"parameter": path, "values": "1"}}, env={})
        with pytest.raises(ConfigError):
            run_scenario(cfg, jobs=1)
    assert not (tmp_path / "x").exists()


def test_relative_g01_sweep_changes_the_coupling(tmp_path):
    cfg = ScenarioConfig.from_dict({
        "device": str(DEVICE), "experiment": "sweep", "operating_point": "single",
        "output_dir": str(tmp_path / "r"),
        "params": {"parameter": "device.qubits.*.g01_mhz", "values": [0.9, 1.1], "relative": True}}, env={})
    run_scenario(cfg, jobs=1)
    rows = read_csv(tmp_path / "r" / "sweep.csv")[1:]
    w2 = np.array([float(r[4]) for r in rows])
    assert np.all(np.isfinite(w2)) and abs(w2[0] - w2[1]) > 1e-3
