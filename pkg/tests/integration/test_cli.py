"""
Command line tests: every subcommand runs in-process through main(argv).
"""

import json

import pandas as pd
import pytest

from main import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main


def run(*argv: str) -> int:
    return main(["--quiet", *argv])


@pytest.fixture
def unstable_scenario(tmp_path, scenario_dir):
    text = (scenario_dir / "single_pair.yaml").read_text()
    path = tmp_path / "unstable.yaml"
    path.write_text(text.replace("eta_d: 0.01", "eta_d: 3.0").replace("eta_g: 0.01", "eta_g: 3.0"))
    return path


@pytest.mark.integration
class TestSimulateCommand:
    def test_writes_trajectory(self, scenario_dir, tmp_output):
        out = tmp_output / "traj.csv"
        code = run("simulate", "--scenario", str(scenario_dir / "single_pair.yaml"),
                   "--steps", "200", "--mode", "eliminated", "--record-every", "50", "--out", str(out))
        assert code == EXIT_OK
        assert pd.read_csv(out)['t'].tolist() == [0, 50, 100, 150, 200]

    def test_divergence_exit_code(self, unstable_scenario, tmp_output):
        code = run("simulate", "--scenario", str(unstable_scenario), "--steps", "3000",
                   "--record-every", "500", "--out", str(tmp_output / "bad.csv"))
        assert code == EXIT_NUMERICAL

    def test_local_mode(self, scenario_dir, tmp_output):
        out = tmp_output / "local.csv"
        code = run("simulate", "--scenario", str(scenario_dir / "two_region_far.yaml"),
                   "--steps", "100", "--mode", "local", "--record-every", "10", "--out", str(out))
        assert code == EXIT_OK
        assert {'x_1_1', 'x_2_1'} <= set(pd.read_csv(out).columns)


@pytest.mark.integration
class TestReportCommands:
    def test_spectrum_to_stdout(self, scenario_dir, capsys):
        code = run("spectrum", "--scenario", str(scenario_dir / "single_pair.yaml"))
        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report['regions'][0]['phase'] == "C_DOMINANT"

    def test_spectrum_from_bundled_name(self, capsys):
        assert run("spectrum", "--scenario", "single_pair") == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report['regions'][0]['phase'] == "C_DOMINANT"

    def test_spectrum_to_file(self, scenario_dir, tmp_output):
        out = tmp_output / "spectrum.json"
        assert run("spectrum", "--scenario", str(scenario_dir / "two_point_region.yaml"),
                   "--out", str(out)) == EXIT_OK
        region = json.loads(out.read_text())['regions'][0]
        assert region['coefficients']['n_gen'] == 2
        assert "b" in region['spectrum']['labels']

    def test_phase_diagram_is_reproducible(self, scenario_dir, tmp_output):
        outputs = []
        for name in ("first", "second"):
            prefix = tmp_output / name
            code = run("phase-diagram", "--scenario", str(scenario_dir / "single_pair.yaml"),
                       "--sigma", "0.01:10:9", "--lambda", "0.01:10:7", "--out-prefix", str(prefix))
            assert code == EXIT_OK
            outputs.append((prefix.with_suffix(".csv").read_bytes(), prefix.with_suffix(".svg").read_bytes()))
        assert outputs[0] == outputs[1]
        assert len(pd.read_csv(tmp_output / "first.csv")) == 63

    def test_validate_rate(self, scenario_dir, tmp_output):
        out = tmp_output / "rate.json"
        code = run("--seed", "3", "validate-rate", "--scenario", str(scenario_dir / "single_pair.yaml"),
                   "--offset", "1e-3", "--steps", "6000", "--out", str(out))
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert report['r_fit'] == pytest.approx(0.9942233, abs=5e-3)

    def test_check_sufficiency(self, tmp_output):
        out = tmp_output / "suff.json"
        assert run("check-sufficiency", "--draws", "100", "--out", str(out)) == EXIT_OK
        assert json.loads(out.read_text())['counterexamples'] == []

    def test_check_kernel(self, tmp_output):
        out = tmp_output / "kernel.json"
        assert run("check-kernel", "--width", "1.0", "--dimension", "2", "--points", "5",
                   "--out", str(out)) == EXIT_OK
        assert json.loads(out.read_text())['failures'] == []

    def test_verify_theorem(self, scenario_dir, tmp_output):
        out = tmp_output / "oracle.json"
        code = run("verify-theorem", "--scenario", str(scenario_dir / "single_pair.yaml"),
                   "--features", "200", "--out", str(out))
        assert code == EXIT_OK
        assert json.loads(out.read_text())['max_rel_err'] < 2e-2

    def test_theorem_grid(self, tmp_output):
        out = tmp_output / "grid.json"
        code = run("theorem-grid", "--n-gens", "1", "2", "--dims", "1", "--features", "100",
                   "--out", str(out))
        assert code == EXIT_OK
        assert len(json.loads(out.read_text())) == 2

    @pytest.mark.slow
    def test_stability_bisect(self, scenario_dir, tmp_output):
        out = tmp_output / "bisect.json"
        code = run("stability-bisect", "--scenario", str(scenario_dir / "single_pair.yaml"),
                   "--steps", "5000", "--out", str(out))
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert report['rel_gap'] < 0.05


@pytest.mark.integration
class TestUsageErrors:
    def test_missing_scenario_file(self, tmp_output):
        assert run("spectrum", "--scenario", str(tmp_output / "nope.yaml")) == EXIT_USAGE

    def test_invalid_scenario(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("kernel: {width: -1.0}\nreal: {points: [[0.0]], weights: [1.0]}\n"
                        "generated: {points: [[0.1]], weights: [0.8]}\n"
                        "hyper: {eta_d: 0.01, eta_g: 0.01, lambda: 1.0}\n")
        assert run("spectrum", "--scenario", str(path)) == EXIT_USAGE

    def test_unknown_command(self):
        assert run("fly") == EXIT_USAGE

    def test_bad_range(self, scenario_dir):
        assert run("phase-diagram", "--scenario", str(scenario_dir / "single_pair.yaml"),
                   "--sigma", "1:2", "--out-prefix", "x") == EXIT_USAGE

    def test_multi_region_rate_validation(self, scenario_dir):
        assert run("validate-rate", "--scenario", str(scenario_dir / "two_region_far.yaml"),
                   "--steps", "10") == EXIT_USAGE
