import json
import os

import numpy as np
import pytest
from typer.testing import CliRunner

from app.main import app
from app.models.waveforms import WaveformSet
from app.utils.csv_utils import read_csv_with_header

runner = CliRunner()

DIVERGING_SCENARIO = """
name = "rc_unstable"
topology = "custom"
t_end = 1.0

[[netlist.elements]]
id = "V1"
kind = "voltage_source"
n1 = "in"
n2 = "0"
value = 1.0

[[netlist.elements]]
id = "R1"
kind = "resistor"
n1 = "in"
n2 = "out"
value = 1e3

[[netlist.elements]]
id = "C1"
kind = "capacitor"
n1 = "out"
n2 = "0"
value = 1e-6

[[probes]]
name = "U_C"
unit = "V"
binding = "state:v_C1"

[solver]
method = "forward-euler"
h = 3e-3
"""


def write_waveform(path, **probes):
    t = np.linspace(0.0, 1e-3, 11)
    WaveformSet(
        t=t,
        probes={name: np.full(len(t), value) for name, value in probes.items()},
        units={name: "A" for name in probes},
        metadata={"scenario": "handmade", "diverged": False},
    ).write_csv(str(path))
    return str(path)


@pytest.fixture(scope="module")
def rc_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "rc"
    result = runner.invoke(app, ["simulate", "rc_charge", "--t-end", "1e-3", "--out", str(out)])
    assert result.exit_code == 0, result.output
    return str(out)


class TestSimulate:
    def test_outputs(self, rc_run):
        waveforms = WaveformSet.read_csv(os.path.join(rc_run, "waveforms.csv"))
        assert len(waveforms) == 1001
        assert waveforms.probe_names == ["U_C", "I_R"]
        assert waveforms.units["U_C"] == "V"
        assert waveforms.metadata["scenario"] == "rc_charge"
        assert waveforms.metadata["method"] == "imex"
        assert not waveforms.diverged
        assert not os.path.exists(os.path.join(rc_run, "DIVERGED"))

    def test_manifest(self, rc_run):
        with open(os.path.join(rc_run, "manifest.json")) as handle:
            manifest = json.load(handle)
        assert manifest["command"] == "simulate"
        assert manifest["result"]["samples"] == 1001
        assert manifest["result"]["diverged"] is False
        assert manifest["outputs"] == ["waveforms.csv"]
        assert len(manifest["input_hash"]) == 64

    def test_repeated_run_writes_identical_waveforms(self, rc_run, tmp_path):
        out = tmp_path / "again"
        result = runner.invoke(app, ["simulate", "rc_charge", "--t-end", "1e-3", "--out", str(out)])
        assert result.exit_code == 0, result.output
        with open(os.path.join(rc_run, "waveforms.csv"), "rb") as first, open(out / "waveforms.csv", "rb") as second:
            assert first.read() == second.read()

    def test_energy_audit_in_manifest(self, tmp_path):
        out = tmp_path / "audited"
        result = runner.invoke(
            app, ["simulate", "rc_charge", "--t-end", "1e-4", "--method", "trapezoidal-oracle", "--energy-audit", "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        with open(out / "manifest.json") as handle:
            manifest = json.load(handle)
        assert manifest["result"]["energy_residual_fraction"] < 1e-9

    def test_divergence_exit_code(self, tmp_path):
        scenario = tmp_path / "rc_unstable.toml"
        scenario.write_text(DIVERGING_SCENARIO)
        out = tmp_path / "unstable"
        result = runner.invoke(app, ["simulate", str(scenario), "--out", str(out)])
        assert result.exit_code == 3
        assert os.path.exists(out / "DIVERGED")
        assert WaveformSet.read_csv(str(out / "waveforms.csv")).diverged

    def test_unknown_scenario(self, tmp_path):
        result = runner.invoke(app, ["simulate", "no_such_scenario", "--out", str(tmp_path)])
        assert result.exit_code == 2

    def test_bad_backend(self, tmp_path):
        result = runner.invoke(app, ["simulate", "rc_charge", "--backend", "quad", "--out", str(tmp_path)])
        assert result.exit_code == 2

    def test_version(self):
        result = runner.invoke(app, ["--version"])
        assert result.exit_code == 0
        assert "wptsim" in result.output


class TestCompare:
    def test_self_comparison_passes(self, rc_run, tmp_path):
        result = runner.invoke(
            app,
            ["compare", rc_run, rc_run, "--window", "2e-4", "1e-3", "--tolerance", "2%", "--out", str(tmp_path)],
        )
        assert result.exit_code == 0, result.output
        frame, header = read_csv_with_header(str(tmp_path / "metrics.csv"))
        assert list(frame["probe"]) == ["U_C", "I_R"]
        assert np.all(frame["rel_err_rms"] == 0.0)
        assert header["scenario_a"] == "rc_charge"

    def test_probe_mismatch(self, tmp_path):
        a = write_waveform(tmp_path / "a.csv", I=1.0)
        b = write_waveform(tmp_path / "b.csv", J=1.0)
        out = tmp_path / "cmp"
        result = runner.invoke(app, ["compare", a, b, "--window", "0", "1e-3", "--out", str(out)])
        assert result.exit_code == 2
        assert not os.path.exists(out / "metrics.csv")

    def test_tolerance_exceeded(self, tmp_path):
        a = write_waveform(tmp_path / "a.csv", I=2.0)
        b = write_waveform(tmp_path / "b.csv", I=1.0)
        out = tmp_path / "cmp"
        result = runner.invoke(app, ["compare", a, b, "--window", "0", "1e-3", "--tolerance", "2%", "--out", str(out)])
        assert result.exit_code == 4
        assert os.path.exists(out / "metrics.csv")

    def test_window_outside_data(self, tmp_path):
        a = write_waveform(tmp_path / "a.csv", I=1.0)
        result = runner.invoke(app, ["compare", a, a, "--window", "0", "1", "--out", str(tmp_path / "cmp")])
        assert result.exit_code == 2

    def test_missing_run(self, tmp_path):
        result = runner.invoke(app, ["compare", str(tmp_path / "nothing"), str(tmp_path), "--window", "0", "1"])
        assert result.exit_code == 2


class TestAnalysisCommands:
    def test_stability(self, tmp_path):
        result = runner.invoke(app, ["stability", "--z0=-1+0i", "--grid=-3:3:-3:3:31", "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        frame, header = read_csv_with_header(str(tmp_path / "stability_grid.csv"))
        assert len(frame) == 31 * 31
        assert header["method"] == "imex"
        assert complex(header["z0"]) == -1.0

    def test_convergence(self, tmp_path):
        result = runner.invoke(app, ["convergence", "--problem", "cubic", "--method", "imex", "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        assert "fitted order p=" in result.output
        frame, header = read_csv_with_header(str(tmp_path / "convergence.csv"))
        assert len(frame) == 4
        assert float(header["order"]) == pytest.approx(2.0, abs=0.1)

    def test_convergence_unknown_problem(self, tmp_path):
        result = runner.invoke(app, ["convergence", "--problem", "stiff", "--out", str(tmp_path)])
        assert result.exit_code == 2

    def test_spectral(self, tmp_path):
        result = runner.invoke(app, ["spectral", "--method", "latency", "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        frame, _ = read_csv_with_header(str(tmp_path / "spectral_radius.csv"))
        assert len(frame) == 20
        assert np.all(frame["rho"] > 1.0)

    def test_table(self, tmp_path):
        result = runner.invoke(app, ["table", "--points", "11", "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        frame, _ = read_csv_with_header(str(tmp_path / "inductance_table.csv"))
        assert list(frame.columns) == ["x", "Lp", "Ls1", "Ls2", "M1", "M2"]
        assert len(frame) == 11

    def test_export_matrices(self, tmp_path):
        result = runner.invoke(app, ["export-matrices", "rc_charge", "--k", "0", "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        frame, header = read_csv_with_header(str(tmp_path / "state_space_k0.csv"))
        assert header["k"] == "0"
        assert list(frame["row"])[0] == "d/dt v_C1"
        assert frame.loc[0, "v_C1"] == pytest.approx(-1e3)
