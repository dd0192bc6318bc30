import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from pmuwadc.case_model import shipped_case_path
from pmuwadc.cli import main

CASE = str(shipped_case_path("ten_machine"))


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """simulate -> pmu -> estimate, run once for the module."""
    d = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--case", CASE, "--out", str(d / "traj.csv"), "--duration", "120",
                 "--seed", "1"]) == 0
    assert main(["pmu", "--in", str(d / "traj.csv"), "--rate", "20", "--noise-angle", "1e-3",
                 "--noise-speed", "1e-6", "--out", str(d / "pmu.csv")]) == 0
    assert main(["estimate", "--pmu", str(d / "pmu.csv"), "--case", CASE,
                 "--out", str(d / "model.json")]) == 0
    return d


class TestChain:
    def test_files(self, chain):
        lines = (chain / "pmu.csv").read_text().splitlines()
        assert len(lines) == 1 + 2401
        model = json.loads((chain / "model.json").read_text())
        assert model["kind"] == "estimated_model"

    def test_modal(self, chain, capsys):
        code, out, _ = run(capsys, "modal", "--model", chain / "model.json", "--out", chain / "modal.json",
                           "--csv", chain / "modal.csv")
        assert code == 0
        rep = json.loads((chain / "modal.json").read_text())
        assert rep["weak_modes"][0] == 1
        assert (chain / "modal.csv").read_text().startswith("index,")

    def test_design_and_evaluate(self, chain, capsys):
        for name, acts in (("p1.json", "5"), ("p2.json", "5,4"), ("p3.json", "top3")):
            code, _, _ = run(capsys, "design", "--model", chain / "model.json", "--mode", 1, "--shift", 2,
                             "--actuators", acts, "--out", chain / name)
            assert code == 0
        code, out, _ = run(capsys, "evaluate", "--plan", chain / "p1.json", chain / "p2.json", chain / "p3.json",
                           "--model", chain / "model.json", "--truth", CASE, "--out", chain / "eval.json",
                           "--table", chain / "table.csv")
        assert code == 0
        evals = json.loads((chain / "eval.json").read_text())
        assert len(evals) == 3 and "truth" in evals[0]
        table = (chain / "table.csv").read_text().splitlines()
        assert table[0] == "generators,closed_loop_damping_ratio_pct"
        assert table[2].startswith("G5 G4,")
        zeta = json.loads(out)["zeta_closed"]
        assert all(b >= a for a, b in zip(zeta, zeta[1:]))


class TestDesign:
    def test_zero_shift_zero_gain(self, tmp_path, capsys):
        code, _, _ = run(capsys, "design", "--model", CASE, "--shift", 0, "--out", tmp_path / "p.json")
        assert code == 0
        plan = json.loads((tmp_path / "p.json").read_text())
        assert not np.any(plan["K"]["data"])

    def test_destabilising_shift(self, tmp_path, capsys):
        code, _, err = run(capsys, "design", "--model", CASE, "--shift", -5, "--out", tmp_path / "p.json")
        assert code == 2
        assert json.loads(err)["exit_code"] == 2

    @pytest.mark.parametrize("acts", ["0", "11", "top0", "x,y"])
    def test_bad_actuators(self, tmp_path, capsys, acts):
        code, _, _ = run(capsys, "design", "--model", CASE, "--shift", 1, "--actuators", acts,
                         "--out", tmp_path / "p.json")
        assert code == 2

    def test_bad_mode(self, tmp_path, capsys):
        code, _, _ = run(capsys, "design", "--model", CASE, "--mode", 10, "--shift", 1,
                         "--out", tmp_path / "p.json")
        assert code == 2


class TestErrors:
    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(capsys, "modal", "--model", tmp_path / "nope.json", "--out", tmp_path / "m.json")
        assert code == 2
        assert json.loads(err)["error"] == "ConfigurationError"

    def test_constant_window(self, tmp_path, capsys):
        rows = ["t," + ",".join([f"delta_{i}" for i in range(1, 11)] + [f"omega_{i}" for i in range(1, 11)])]
        rows += [f"{k * 0.05:.2f}," + ",".join(["0.1"] * 20) for k in range(200)]
        (tmp_path / "pmu.csv").write_text("\n".join(rows) + "\n")
        code, _, err = run(capsys, "estimate", "--pmu", tmp_path / "pmu.csv", "--case", CASE,
                           "--out", tmp_path / "m.json")
        assert code == 3
        assert not (tmp_path / "m.json").exists()

    def test_machine_count_mismatch(self, chain, capsys, tmp_path):
        code, _, _ = run(capsys, "estimate", "--pmu", chain / "pmu.csv",
                         "--case", shipped_case_path("two_machine"), "--out", tmp_path / "m.json")
        assert code == 2

    def test_pipeline_all_seeds_fail(self, tmp_path, capsys):
        cfg = {"case": "two_machine.json", "sim": {"duration": 200.0, "sigma": 1e5, "seeds": [0, 1]}}
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        code, _, err = run(capsys, "pipeline", "--config", tmp_path / "c.json", "--output-dir", tmp_path / "o")
        assert code == 3
        assert (tmp_path / "o" / "report.json").exists()

    def test_pipeline_bad_config(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"case": "ten_machine.json", "bogus": 1}))
        code, _, _ = run(capsys, "pipeline", "--config", tmp_path / "c.json")
        assert code == 2


class TestPipelineCommand:
    def test_exact_covariance(self, tmp_path, capsys):
        cfg = {"case": "ten_machine.json", "estimation": {"exact_covariance": True},
               "control": {"actuator_counts": [1, 2, 3, 10]}, "output_dir": "out"}
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        code, out, _ = run(capsys, "pipeline", "--config", tmp_path / "c.json")
        assert code == 0
        summary = json.loads(out)["summary"]
        assert summary["median_max_f_err_pct"] < 1e-6
        assert (tmp_path / "out" / "damping_table.csv").exists()


@pytest.mark.skipif(shutil.which("pmuwadc") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["pmuwadc", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("pmuwadc")


def test_module_entry():
    res = subprocess.run([sys.executable, "-m", "pmuwadc.cli", "modal", "--model", "/nonexistent.json",
                          "--out", "/tmp/x.json"], capture_output=True, text=True)
    assert res.returncode == 2
