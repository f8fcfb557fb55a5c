import csv
import json

import numpy as np
import pytest

from mfcontrol.binary_control import load_feedback_table
from mfcontrol.cli import main, parse_config
from mfcontrol.model import ConfigError


def run_cli(*argv):
    return main(list(argv))


def tiny_args(out, method="uncontrolled", extra=()):
    return ["simulate", "--preset", "sznajd", "--method", method,
            "--set", "T=0.05", "--set", "n_samples=1500",
            "--set", "snapshots=3", "--out", str(out), *extra]


class TestParseConfig:
    def test_rejects_unknown_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"sigma": 0.1, "wat": 3}))
        with pytest.raises(ConfigError, match="wat"):
            parse_config(path)

    def test_rejects_non_numeric(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"gamma": "lots"}))
        with pytest.raises(ConfigError, match="gamma"):
            parse_config(path)

    def test_accepts_valid(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"gamma": 0.05, "seed": 3, "plot": False}))
        out = parse_config(path)
        assert out == {"gamma": 0.05, "seed": 3, "plot": False}


class TestPrecedence:
    def test_flag_overrides_file_overrides_preset(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"gamma": 0.1}))
        out = tmp_path / "run"
        code = run_cli(*tiny_args(out, extra=["--config", str(cfg),
                                              "--gamma", "0.25", "--no-plot"]))
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["resolved_config"]["gamma"] == 0.25

    def test_preset_default_gamma(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli(*tiny_args(out, extra=["--no-plot"])) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["resolved_config"]["gamma"] == 0.5

    def test_invalid_dt_exit_code(self, tmp_path):
        code = run_cli("simulate", "--preset", "sznajd", "--set", "dt=0.3",
                       "--out", str(tmp_path))
        assert code == 2


class TestSimulateOutputs:
    def test_uncontrolled_files_and_schema(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli(*tiny_args(out)) == 0
        for name in ("density.csv", "control.csv", "cost.json",
                      "manifest.json", "density.png", "control.png",
                      "final_state.png"):
            assert (out / name).exists(), name
        with open(out / "density.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "x_center", "mu"]
        assert len(rows) == 1 + 3 * 80
        with open(out / "control.csv") as fh:
            header = fh.readline().strip()
        assert header == "t,x_center,f"
        cost = json.loads((out / "cost.json").read_text())
        assert set(cost) == {"J", "state_term", "control_term"}
        assert cost["J"] == pytest.approx(cost["state_term"] + cost["control_term"])

    def test_no_plot_skips_figures(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli(*tiny_args(out, extra=["--no-plot"])) == 0
        assert not (out / "density.png").exists()
        assert (out / "density.csv").exists()

    def test_particle_method_outputs(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli(*tiny_args(out, method="ic", extra=["--no-plot"])) == 0
        assert (out / "applied_controls.csv").exists()
        assert not (out / "control.csv").exists()
        with open(out / "applied_controls.csv") as fh:
            header = fh.readline().strip()
        assert header == "t,u_mean,u_rms,u_absmax"

    def test_fh_requires_table(self, tmp_path):
        code = run_cli(*tiny_args(tmp_path / "x", method="fh",
                                  extra=["--no-plot"]))
        assert code == 2

    def test_optional_ensemble_dump(self, tmp_path):
        out = tmp_path / "run"
        code = run_cli(*tiny_args(out, method="ic",
                                  extra=["--no-plot", "--set",
                                         "dump_particles=true"]))
        assert code == 0
        with open(out / "ensemble.csv") as fh:
            header = fh.readline().strip()
            first = fh.readline().split(",")
        assert header == "t,particle_index,x"
        assert first[0] == "0" and first[1] == "0"

    def test_optional_costate_dump(self, tmp_path):
        out = tmp_path / "run"
        code = run_cli("sweep", "--preset", "sznajd", "--set", "T=0.05",
                       "--set", "snapshots=3", "--set", "max_iter=60",
                       "--set", "dump_costate=true", "--out", str(out),
                       "--no-plot")
        assert code == 0
        with open(out / "psi.csv") as fh:
            assert fh.readline().strip() == "t,x_center,psi"

    def test_manifest_reproducibility_hash(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_cli(*tiny_args(out_a, extra=["--no-plot"])) == 0
        assert run_cli(*tiny_args(out_b, extra=["--no-plot"])) == 0
        ma = json.loads((out_a / "manifest.json").read_text())
        mb = json.loads((out_b / "manifest.json").read_text())
        assert ma["content_hash"] == mb["content_hash"]
        assert (out_a / "density.csv").read_text() == \
            (out_b / "density.csv").read_text()


class TestHJBCommand:
    def test_writes_table_with_expected_header(self, tmp_path):
        out = tmp_path / "run"
        code = run_cli("hjb", "--preset", "sznajd", "--set", "T=0.05",
                       "--set", "n_u=5", "--out", str(out))
        assert code == 0
        table = load_feedback_table(out / "feedback_table.mfch")
        assert table.grid.n_nodes == 81
        assert table.n_slices() == 20
        assert table.dt == pytest.approx(2.5e-3)

    def test_rerun_is_byte_identical(self, tmp_path):
        args = ["hjb", "--preset", "sznajd", "--set", "T=0.05",
                "--set", "n_u=5"]
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_cli(*args, "--out", str(out_a)) == 0
        assert run_cli(*args, "--out", str(out_b)) == 0
        assert (out_a / "feedback_table.mfch").read_bytes() == \
            (out_b / "feedback_table.mfch").read_bytes()

    def test_corrupted_table_rejected_on_read(self, tmp_path):
        bad = tmp_path / "bad.mfch"
        bad.write_bytes(b"XXXX" + bytes(100))
        code = run_cli("simulate", "--preset", "sznajd", "--method", "fh",
                       "--set", "T=0.05", "--set", "n_samples=1000",
                       "--table", str(bad), "--out", str(tmp_path / "o"),
                       "--no-plot")
        assert code != 0


class TestSweepCommand:
    def test_diagnostics_lines(self, tmp_path):
        out = tmp_path / "run"
        code = run_cli("sweep", "--preset", "sznajd", "--set", "T=0.05",
                       "--set", "snapshots=3", "--set", "max_iter=60",
                       "--out", str(out), "--no-plot")
        assert code == 0
        lines = (out / "sweep_diagnostics.jsonl").read_text().splitlines()
        rec = json.loads(lines[0])
        assert set(rec) == {"iter", "J", "state_term", "control_term",
                            "increment_norm"}
        assert len(lines) >= 2

    def test_unconverged_exit_code(self, tmp_path):
        out = tmp_path / "run"
        code = run_cli("sweep", "--preset", "sznajd", "--set", "T=0.05",
                       "--set", "snapshots=3", "--set", "max_iter=1",
                       "--set", "tol=1e-14", "--out", str(out), "--no-plot")
        assert code == 3


class TestOutputPrecision:
    def test_seventeen_digits_round_trip(self):
        # %.17g is the shortest fixed format that reproduces any double
        rng = np.random.default_rng(0)
        for x in rng.uniform(-10, 10, 200):
            assert float(f"{x:.17g}") == x

    def test_density_csv_values_are_exact(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli(*tiny_args(out, extra=["--no-plot"])) == 0
        with open(out / "density.csv") as fh:
            fh.readline()
            row = fh.readline().strip().split(",")
        # initial slice of the sznajd bivariate data: leftmost cell is empty
        assert float(row[2]) == 0.0


class TestAdjointModeFlag:
    def test_sweep_runs_with_mc_nonlocals(self, tmp_path):
        out = tmp_path / "run"
        code = run_cli("sweep", "--preset", "sznajd", "--set", "T=0.05",
                       "--set", "snapshots=3", "--set", "max_iter=5",
                       "--set", "m_samples=2000", "--set", "tol=0.5",
                       "--adjoint-mode", "mc", "--out", str(out), "--no-plot")
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["resolved_config"]["adjoint_mode"] == "mc"


class TestCompareCommand:
    def test_summary_and_figures(self, tmp_path):
        out = tmp_path / "run"
        code = run_cli("compare", "--preset", "sznajd", "--set", "T=0.05",
                       "--set", "n_samples=1500", "--set", "snapshots=3",
                       "--set", "n_u=5", "--set", "max_iter=60",
                       "--out", str(out))
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["J"]) == {"uncontrolled", "ic", "fh", "oc"}
        assert "ordering_ok" in summary
        assert (out / "compare_final.png").exists()
        assert (out / "compare_costs.png").exists()
        assert (out / "feedback_table.mfch").exists()
