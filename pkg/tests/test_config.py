"""INI configuration parsing, validation and manifest round trip."""

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msaupscale.config import config_to_ini, default_config, load_config, parse_config, with_overrides
from msaupscale.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = """\
[species.Na]
valence = 1
diffusivity = 13.33e-10
diameter = 3.3e-10
concentration_mol_per_l = 0.1

[species.Cl]
valence = -1
diffusivity = 20.32e-10
diameter = 3.3e-10
concentration_mol_per_l = 0.1
"""


def test_minimal_config_takes_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.species_order == ["Na", "Cl"]
    assert cfg.geometry.porosity == 0.62
    assert cfg.sweep.models == ("msa", "ideal")
    assert cfg.electrolyte().reservoir.tolist() == [1.0, 1.0]


@pytest.mark.parametrize("name", ["base", "concentration", "pore_size", "porosity"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / f"{name}.ini")
    assert cfg.points()


def test_unknown_key_reports_line():
    text = MINIMAL + "\n[geometry]\nporosity = 0.5\ncolour = blue\n"
    with pytest.raises(ConfigError, match=r":15: unknown key 'colour'"):
        parse_config(text)


def test_unknown_species_key_reports_line():
    text = MINIMAL.replace("diameter = 3.3e-10\nconcentration_mol_per_l = 0.1\n\n[species.Cl]", "diameter = 3.3e-10\nconcentration_mol_per_l = 0.1\nmass = 23\n\n[species.Cl]")
    with pytest.raises(ConfigError, match=r":6: unknown key 'mass'"):
        parse_config(text)


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config(MINIMAL + "\n[plotting]\nstyle = x\n")


def test_unparseable_value_reports_line():
    with pytest.raises(ConfigError, match=r":3: cannot parse"):
        parse_config(MINIMAL.replace("diffusivity = 13.33e-10", "diffusivity = fast"))


def test_empty_grid_rejected():
    with pytest.raises(ConfigError, match="empty"):
        parse_config(MINIMAL + "\n[sweep]\nparameter = concentration\nvalues =\n")


def test_non_neutral_reservoir_rejected():
    with pytest.raises(ConfigError, match="net charge"):
        parse_config(MINIMAL.replace("concentration_mol_per_l = 0.1\n\n[species.Cl]", "concentration_mol_per_l = 0.2\n\n[species.Cl]"))


def test_bound1_rejected_for_msa_only():
    tiny = MINIMAL.replace("3.3e-10", "0.5e-10")
    with pytest.raises(ConfigError, match="uniqueness bound"):
        parse_config(tiny)
    cfg = parse_config(tiny + "\n[sweep]\nmodel = ideal\n")
    assert cfg.sweep.models == ("ideal",)


def test_grid_syntax():
    cfg = parse_config(MINIMAL + "\n[sweep]\nparameter = concentration\nvalues = log(0.001, 1, 4)\n")
    assert np.allclose(cfg.sweep.values, [0.001, 0.01, 0.1, 1.0])
    cfg = parse_config(MINIMAL + "\n[sweep]\nparameter = porosity\nvalues = linear(0.62, 0.82, 3)\n")
    assert np.allclose(cfg.sweep.values, [0.62, 0.72, 0.82])


def test_concentration_points_move_characteristic_concentration():
    cfg = default_config("concentration", (0.01, 1.0))
    (_, low), (_, high) = cfg.points()
    assert [s.concentration_mol_per_l for s in low.species] == [0.01, 0.01]
    assert high.electrolyte().reservoir.tolist() == [1.0, 1.0]
    assert high.scaling().characteristic_concentration / low.scaling().characteristic_concentration == pytest.approx(100.0)
    assert high.scaling().xi_c / low.scaling().xi_c == pytest.approx(100.0)


def test_pore_size_points_recompute_groups():
    cfg = default_config("pore_size", (5.0, 50.0))
    (_, small), (_, large) = cfg.points()
    assert large.scaling().beta / small.scaling().beta == pytest.approx(100.0)
    assert large.scaling().n_sigma / small.scaling().n_sigma == pytest.approx(10.0)
    assert np.allclose(large.scaling().peclet / small.scaling().peclet, 100.0)


def test_overrides():
    cfg = with_overrides(default_config(), model="msa", refine=0, out="elsewhere")
    assert cfg.sweep.models == ("msa",)
    assert cfg.discretization.refine == 0
    assert cfg.output.directory == "elsewhere"


def test_manifest_round_trip():
    cfg = load_config(CONFIGS / "pore_size.ini")
    assert parse_config(config_to_ini(cfg)) == cfg


@settings(max_examples=25, deadline=None)
@given(
    st.floats(min_value=1e-3, max_value=1.0),
    st.floats(min_value=3.0, max_value=200.0),
    st.floats(min_value=0.62, max_value=0.9),
    st.integers(min_value=0, max_value=3),
)
def test_round_trip_property(conc, ell, porosity, refine):
    text = MINIMAL.replace("= 0.1", f"= {conc!r}") + f"\n[geometry]\npore_size_nm = {ell!r}\nporosity = {porosity!r}\n[discretization]\nrefine = {refine}\n"
    cfg = parse_config(text)
    assert parse_config(config_to_ini(cfg)) == cfg
