"""Sweep orchestration, output files and the command line."""

import csv

import numpy as np
import pytest

from msaupscale.cli import main
from msaupscale.config import config_to_ini, default_config, load_config, with_overrides
from msaupscale.sweep import emit_outputs, interior_minimum, run_sweep, slope

SCHEMA_HEAD = ["run_id", "model", "geometry", "porosity", "ell_nm", "n_inf_mol_per_l", "K_11", "K_12", "K_21", "K_22", "Krel_11", "Krel_22"]
SCHEMA_TAIL = ["avg_n1", "avg_n2", "sym_residual", "min_eig", "newton_iters", "outer_iters"]


@pytest.fixture(scope="module")
def small_sweep(tmp_path_factory):
    cfg = with_overrides(default_config("concentration", (0.01, 0.1)), refine=0, out=str(tmp_path_factory.mktemp("sweep")))
    result = run_sweep(cfg, sequential=True)
    return cfg, result, emit_outputs(result, cfg)


def test_schema(small_sweep):
    _, result, out = small_sweep
    assert result.ok
    header = (out / "sweep.csv").read_text().splitlines()[0].split(",")
    assert header[: len(SCHEMA_HEAD)] == SCHEMA_HEAD
    assert header[-len(SCHEMA_TAIL) :] == SCHEMA_TAIL
    middle = header[len(SCHEMA_HEAD) : -len(SCHEMA_TAIL)]
    assert middle[0] == "J1_11" and middle[4] == "J2_11" and middle[8] == "L1_11" and middle[16] == "D11_11"
    assert len(middle) == 8 + 8 + 16


def test_rows_tagged_and_ordered(small_sweep):
    _, result, _ = small_sweep
    assert [r["model"] for r in result.records] == ["msa", "ideal", "msa", "ideal"]
    assert [r["n_inf_mol_per_l"] for r in result.records] == pytest.approx([0.01, 0.01, 0.1, 0.1])
    for r in result.records:
        assert r["sym_residual"] < 1e-6 and r["min_eig"] > 0


def test_seventeen_digit_floats(small_sweep):
    _, result, out = small_sweep
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    for key in ("K_11", "D12_21", "avg_n1"):
        assert float(rows[0][key]) == result.records[0][key]


def test_manifest_rerun_is_byte_identical(small_sweep, tmp_path):
    _, _, out = small_sweep
    manifest = out / "manifest.txt"
    assert "# species numbering: 1=Na, 2=Cl" in manifest.read_text()
    rerun = tmp_path / "rerun"
    assert main(["sweep", "--config", str(manifest), "--sequential", "--out", str(rerun)]) == 0
    assert (rerun / "sweep.csv").read_bytes() == (out / "sweep.csv").read_bytes()


def test_plot_data_rescaled_to_base_concentration(small_sweep):
    _, _, out = small_sweep
    rows = list(csv.DictReader((out / "diffusion_vs_concentration.csv").open()))
    for r in rows:
        ratio = float(r["n_inf_mol_per_l"]) / 0.1
        assert float(r["D11_11_base_nc_dimensionless"]) == pytest.approx(float(r["D11_11_dimensionless"]) * ratio**2, rel=1e-15)
    stream = list(csv.DictReader((out / "streaming_vs_concentration.csv").open()))
    assert "L1_11_base_nc_dimensionless" in stream[0]
    avg = list(csv.DictReader((out / "average_concentration_vs_concentration.csv").open()))
    assert float(avg[0]["avg_n1_over_reservoir_dimensionless"]) > 1  # counterion excess
    assert (out / "diffusion_vs_concentration.svg").read_text().startswith("<svg")


def test_empty_grid_exits_with_config_error(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(config_to_ini(default_config()).replace("parameter = none", "parameter = concentration"))
    assert main(["check", "--config", str(path)]) == 2
    assert "empty" in capsys.readouterr().err


def test_unknown_key_exits_with_line(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(config_to_ini(default_config()) + "\n[output]\nformat = png\n")
    assert main(["check", "--config", str(path)]) == 2
    assert "unknown" in capsys.readouterr().err


def test_check_reports_groups(capsys):
    assert main(["check"]) == 0
    out = capsys.readouterr().out
    assert "gamma_inf[msa]  Na=0.768568" in out
    assert "bound1             ok" in out
    assert "gamma_c_per_m" in out and "1/m" in out


def test_sweep_without_parameter_rejected(capsys):
    assert main(["sweep", "--refine", "0"]) == 2


def test_failed_point_gives_nonzero_exit(tmp_path):
    """Unequal ion diameters pass the equilibrium closure but are rejected by the cell problems."""
    text = config_to_ini(with_overrides(default_config(), model="msa", refine=0, out=str(tmp_path / "o")))
    text = text.replace("parameter = none", "parameter = concentration").replace("values = ", "values = 0.1")
    text = text.replace("diameter = 3.3e-10", "diameter = 3.6e-10", 1)
    path = tmp_path / "unequal.ini"
    path.write_text(text)
    assert main(["sweep", "--config", str(path), "--sequential"]) == 1
    failures = list(csv.DictReader((tmp_path / "o" / "failures.csv").open()))
    assert failures[0]["run_id"] == "concentration-000-msa"
    assert "equal ion diameters" in failures[0]["error"]


def test_equilibrium_and_upscale_commands(tmp_path):
    out = tmp_path / "single"
    assert main(["equilibrium", "--model", "ideal", "--refine", "0", "--out", str(out)]) == 0
    assert (out / "equilibrium_ideal.csv").exists()
    assert "weak_residual" in (out / "equilibrium_ideal.txt").read_text()
    assert main(["upscale", "--model", "ideal", "--refine", "0", "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "upscale.csv").open()))
    assert rows[0]["model"] == "ideal"
    assert (out / "tensor_ideal.txt").exists()


def test_mms_command(tmp_path, capsys):
    assert main(["mms", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.count("PASS") == 3


def test_shipped_configs_match_studies():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    assert load_config(root / "porosity.ini").sweep.values == (0.19, 0.36, 0.51, 0.64, 0.75)
    conc = load_config(root / "concentration.ini").sweep.values
    assert conc[0] == pytest.approx(1e-3) and conc[-1] == pytest.approx(1.0)


def test_analysis_helpers():
    x = np.array([1.0, 10.0, 100.0])
    assert slope(x, 3 * x**2) == pytest.approx(2.0)
    y = (np.log(x) - np.log(10.0)) ** 2
    assert interior_minimum(x, y) == pytest.approx(10.0)
    assert interior_minimum(x, x) is None
