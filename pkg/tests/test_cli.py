import json
import os
import subprocess
import sys

import pytest

from mbadmm.cli import main
from mbadmm.fixtures import FIXTURE_NAMES
from mbadmm.trace import TRACE_COLUMNS


@pytest.fixture(scope="module")
def fx(tmp_path_factory):
    d = tmp_path_factory.mktemp("fixtures")
    assert main(["fixtures", "--out", str(d), "--force"]) == 0
    return d


def run(fx, tmp_path, *args):
    return main(["run", "--out", str(tmp_path), *args])


def test_fixtures_written(fx):
    names = sorted(os.listdir(fx))
    assert names == sorted(FIXTURE_NAMES) and len(names) >= 5


def test_fixtures_refuse_non_empty_dir(fx, capsys):
    assert main(["fixtures", "--out", str(fx)]) == 1
    assert "--force" in capsys.readouterr().err


def test_fixtures_list_writes_nothing(tmp_path, capsys):
    out = tmp_path / "never"
    assert main(["fixtures", "--out", str(out), "--list"]) == 0
    assert capsys.readouterr().out.split() == list(FIXTURE_NAMES)
    assert not out.exists()


def test_gbs_converges_on_divergence_fixture(fx, tmp_path):
    assert run(fx, tmp_path, "--engine", "gbs", "--input", str(fx / "fixture_diverge3.json"), "--alpha", "0.5") == 0
    header = (tmp_path / "trace.csv").read_text().splitlines()[0]
    assert header == ",".join(TRACE_COLUMNS)
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["status"] == "Converged" and rep["primal_residual"] <= 1e-6


def test_gauss_seidel_diverges_on_fixture(fx, tmp_path):
    assert run(fx, tmp_path, "--engine", "gauss-seidel", "--input", str(fx / "fixture_diverge3.json")) == 3
    assert json.loads((tmp_path / "report.json").read_text())["status"] == "Diverged"


def test_budget_exhausted_exit_code(fx, tmp_path):
    assert run(fx, tmp_path, "--engine", "jacobi", "--input", str(fx / "convex_n3_s0.json"), "--max-iter", "3") == 2


def test_offload_simulated(fx, tmp_path):
    assert run(fx, tmp_path, "--engine", "offload", "--input", str(fx / "offload_b5a5.json"), "--simulate") == 0
    lines = (tmp_path / "messages.jsonl").read_text().splitlines()
    assert json.loads(lines[0]).keys() == {"round", "from", "to", "kind", "dim"}
    alloc = json.loads((tmp_path / "allocation.json").read_text())
    assert len(alloc["x"]) == 5 and len(alloc["y"]) == 5


def test_scopf_run(fx, tmp_path):
    assert run(fx, tmp_path, "--engine", "scopf", "--input", str(fx / "scopf_3bus.json")) == 0
    sols = json.loads((tmp_path / "solutions.json").read_text())
    assert len(sols) == 2 and abs(sum(sols[1]["Pg_MW"]) - 450.0) <= 1e-4


@pytest.mark.parametrize("engine", ["two-block", "jacobi", "variable-splitting", "prox-jacobi"])
def test_block_engines_on_convex_fixture(fx, tmp_path, engine):
    name = "convex_n2_s0.json"
    assert run(fx, tmp_path, "--engine", engine, "--input", str(fx / name)) == 0


def test_prox_flag_forms(fx, tmp_path):
    path = str(fx / "convex_n4_s0.json")
    assert run(fx, tmp_path, "--engine", "prox-jacobi", "--input", path, "--prox", "auto", "--gamma", "0.5") == 0
    assert run(fx, tmp_path, "--engine", "prox-jacobi", "--input", path, "--prox", "nope") == 1
    assert run(fx, tmp_path, "--engine", "gbs", "--input", path, "--prox", "1.0") == 1


def test_usage_and_io_errors(fx, tmp_path, capsys):
    assert run(fx, tmp_path, "--engine", "jacobi", "--input", str(tmp_path / "missing.json")) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{\n oops\n}")
    assert run(fx, tmp_path, "--engine", "jacobi", "--input", str(bad)) == 1
    assert "line 2" in capsys.readouterr().err
    assert run(fx, tmp_path, "--engine", "jacobi", "--input", str(fx / "convex_n2_s0.json"), "--rho", "-1") == 1
    assert run(fx, tmp_path, "--engine", "gbs", "--input", str(fx / "convex_n2_s0.json"), "--simulate") == 1
    with pytest.raises(SystemExit) as info:
        main(["run", "--engine", "newton", "--input", "x"])
    assert info.value.code == 1


def test_runs_are_reproducible(fx, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        main(["run", "--engine", "prox-jacobi", "--input", str(fx / "convex_n6_s0.json"), "--out", str(out), "--simulate"])
    for name in ("trace.csv", "report.json", "messages.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_module_entry_point(fx, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mbadmm", "run", "--engine", "gbs", "--input",
                           str(fx / "fixture_diverge3.json"), "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "Converged" in proc.stdout
