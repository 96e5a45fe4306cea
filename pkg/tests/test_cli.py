import json
import os
import subprocess
import sys

import numpy as np
import pytest

from avgraph.cli import run_command
from avgraph.config import fixture_text
from avgraph.report import ReportTable, csv_body


def cli(*argv, threads=None, cwd=None):
    env = dict(os.environ)
    if threads is not None:
        env["AVGRAPH_THREADS"] = str(threads)
    return subprocess.run([sys.executable, "-m", "avgraph.cli", *argv], capture_output=True,
                          text=True, env=env, cwd=cwd)


def test_info_prints_branching():
    r = cli("info", "--model", "m2.cfg")
    assert r.returncode == 0
    assert "p1=0.333333" in r.stderr
    assert "p1," in r.stdout and r.stdout.startswith("# version: avgraph-")


def test_spectral_alpha():
    r = cli("spectral", "--model", "m2", "--delta", "0.1")
    assert r.returncode == 0 and "alpha=-3.000000" in r.stderr


def test_broken_model_exit_code(tmp_path):
    bad = tmp_path / "broken.cfg"
    lines = fixture_text("m2").splitlines()
    k = lines.index("[rates.q_1_2]")
    bad.write_text("\n".join(lines[:k] + lines[k + 4:]))
    r = cli("validate", "--model", str(bad))
    assert r.returncode == 2
    assert "q_1_2" in r.stderr and "ParseError" in r.stderr
    assert cli("validate", "--model", "m3").returncode == 0


def test_validation_error_exit_code(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text(fixture_text("m2").replace("m = 1", "m = 2"))
    r = cli("validate", "--model", str(bad))
    assert r.returncode == 2 and "BadClassSplit" in r.stderr


def test_step_contract_exit_code():
    assert run_command(["simulate", "--model", "m2", "--eps", "1e-2", "--dt", "0.01",
                        "--paths", "3"]) == 2


def test_json_and_csv_agree(tmp_path):
    args = ["limit", "--model", "m2", "--paths", "200", "--T", "0.2", "--dt", "1e-4",
            "--kappa", "1", "--seed", "3"]
    assert run_command(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert run_command(args + ["--format", "json", "--out", str(tmp_path / "a.json")]) == 0
    rows = [ln.split(",") for ln in csv_body((tmp_path / "a.csv").read_text()).splitlines()]
    doc = json.loads((tmp_path / "a.json").read_text())
    assert rows[0] == doc["columns"]
    body = np.array([[float(x) for x in r] for r in rows[1:]])
    np.testing.assert_array_equal(body, np.array(doc["rows"], dtype=float))
    assert "--seed=3" in doc["provenance"]["flags"]
    assert "model_hash" in doc["provenance"]


@pytest.mark.parametrize("argv", [
    ["simulate", "--model", "m2", "--paths", "300", "--eps", "1e-2", "--kappa", "1",
     "--T", "0.2"],
    ["simulate", "--model", "m3", "--paths", "1", "--eps", "1e-2", "--T", "0.1"],
    ["limit", "--model", "m3", "--paths", "300", "--kappa", "1", "--dt", "1e-4", "--T", "0.2"],
])
def test_reproducible_across_threads(argv, tmp_path):
    outs = []
    for k, threads in enumerate((1, 2, 1)):
        out = tmp_path / f"{k}.csv"
        r = cli(*argv, "--seed", "11", "--out", str(out), threads=threads)
        assert r.returncode == 0, r.stderr
        outs.append(csv_body(out.read_text()))
    assert outs[0] == outs[1] == outs[2]
    assert outs[0].count("\n") > 1


def test_check_mode_reports_failure(tmp_path):
    # a single coarse eps cannot reach the noise floor
    code = run_command(["sweep", "--model", "m2", "--kappa", "1", "--eps", "0.1",
                        "--paths", "400", "--T", "0.2", "--dt", "1e-4", "--check",
                        "--out", str(tmp_path / "s.csv")])
    assert code == 1


def test_cycles_and_exitprob_run(tmp_path):
    assert run_command(["cycles", "--model", "m2", "--kappa", "1", "--eps", "1e-3",
                        "--delta", "0.05", "--T", "0.2", "--paths", "200",
                        "--out", str(tmp_path / "c.csv")]) == 0
    assert run_command(["exitprob", "--model", "m2", "--eps", "1e-3", "--delta", "0.05",
                        "--paths", "200", "--out", str(tmp_path / "e.csv")]) == 0
    body = csv_body((tmp_path / "e.csv").read_text()).splitlines()
    assert body[0].startswith("start,p_minus") and body[-1].startswith("target,0.5,")


def test_defect_command(tmp_path):
    assert run_command(["defect", "--model", "m2", "--eps", "1e-2", "--paths", "200",
                        "--T", "0.1", "--z0", "-0.1", "--out", str(tmp_path / "d.csv")]) == 0
    body = csv_body((tmp_path / "d.csv").read_text()).splitlines()
    assert len(body) == 4


def test_report_table_shape():
    t = ReportTable(["a", "b"], provenance={"seed": 1})
    t.add(1, 0.5)
    with pytest.raises(ValueError):
        t.add(1)
    assert t.to_csv().splitlines()[-1] == "1,0.5"
    assert json.loads(t.to_json())["provenance"]["seed"] == 1
