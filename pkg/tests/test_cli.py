import json
from pathlib import Path

import pytest

from certsynth.cli import main
from certsynth.model import problem_to_json, save_problem
from certsynth.benchmarks import get_benchmark, illustrative


@pytest.fixture(scope="module")
def harmonic_artifacts(tmp_path_factory):
    out = tmp_path_factory.mktemp("harmonic")
    problem_file = out / "harmonic.json"
    save_problem(get_benchmark("1"), problem_file)
    code = main(["synth", str(problem_file), "--out", str(out), "--seed", "0"])
    assert code == 0
    cert = out / "harmonic_certificate.json"
    assert cert.exists()
    return problem_file, cert, out


def test_synth_writes_certificate_and_report(harmonic_artifacts):
    problem_file, cert, out = harmonic_artifacts
    payload = json.loads(cert.read_text())
    assert payload["verified"] is True
    assert len(payload["monomials"]) == len(payload["coefficients"]) == 3
    report = json.loads((out / "harmonic_report.json").read_text())
    assert report["status"] == "certificate_found"


def test_verify_ok_exit_zero(harmonic_artifacts):
    problem_file, cert, out = harmonic_artifacts
    assert main(["verify", str(problem_file), str(cert)]) == 0


def test_verify_zero_certificate_fails(harmonic_artifacts, tmp_path):
    problem_file, cert, out = harmonic_artifacts
    payload = json.loads(cert.read_text())
    payload["coefficients"] = [0.0] * len(payload["coefficients"])
    bad = tmp_path / "zero.json"
    bad.write_text(json.dumps(payload))
    assert main(["verify", str(problem_file), str(bad)]) != 0


def test_verify_perturbed_certificate_fails(harmonic_artifacts, tmp_path):
    # flipping one coefficient's sign breaks at least one clause
    problem_file, cert, out = harmonic_artifacts
    payload = json.loads(cert.read_text())
    payload["coefficients"][0] = -payload["coefficients"][0]
    bad = tmp_path / "flipped.json"
    bad.write_text(json.dumps(payload))
    assert main(["verify", str(problem_file), str(bad)]) != 0


def test_simulate_single_trace(harmonic_artifacts, tmp_path, capsys):
    problem_file, cert, out = harmonic_artifacts
    code = main(["simulate", str(problem_file), str(cert), "--x0", "0.5,0.3",
                 "--t-max", "30", "--out", str(tmp_path)])
    assert code == 0
    csv = tmp_path / "harmonic_trace.csv"
    assert csv.exists()
    header = csv.read_text().splitlines()[0]
    assert header == "t,mode,x_1,x_2,V"


def test_simulate_x0_outside_safe_set(harmonic_artifacts, tmp_path):
    problem_file, cert, out = harmonic_artifacts
    code = main(["simulate", str(problem_file), str(cert), "--x0", "5,5",
                 "--t-max", "1", "--out", str(tmp_path)])
    assert code != 0


def test_simulate_small_ensemble(harmonic_artifacts, tmp_path, capsys):
    problem_file, cert, out = harmonic_artifacts
    code = main(["simulate", str(problem_file), str(cert), "--ensemble", "10",
                 "--t-max", "30", "--out", str(tmp_path)])
    captured = capsys.readouterr()
    assert code == 0
    assert "success fraction 1.00" in captured.out


def test_bench_list(capsys):
    assert main(["bench", "list"]) == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l.strip()]
    assert len(lines) >= 15


def test_bench_run_single(capsys):
    assert main(["bench", "1", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "harmonic" in out and ",ok" in out


def test_demonstrate_query(capsys):
    code = main(["demonstrate", "1", "--x", "0.4,-0.2"])
    assert code == 0
    record = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert record["u"] in [m.name for m in get_benchmark("1").plant.modes]


def test_infeasible_exit_code(tmp_path):
    prob = illustrative()
    data = problem_to_json(prob)
    data["params"]["Delta"] = 1e-6
    f = tmp_path / "impossible.json"
    f.write_text(json.dumps(data))
    assert main(["synth", str(f), "--out", str(tmp_path)]) == 2


def test_input_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["synth", str(bad), "--out", str(tmp_path)]) == 4
    with pytest.raises(SystemExit) as err:
        main(["synth", "/nonexistent/problem.json", "--out", str(tmp_path)])
    assert err.value.code == 4
