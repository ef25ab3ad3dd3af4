"""Coupled cell problems and the effective Onsager tensor."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msaupscale.equilibrium import SurfaceCharge, solve_equilibrium
from msaupscale.errors import ModelValidityError
from msaupscale.mesh import ellipse_cell, mesh_for, rect_cell
from msaupscale.msa import ElectrolyteSystem, ScalingGroup, Species, nacl, reservoir_closure
from msaupscale.upscale import (
    assemble_effective_tensor,
    energy_identity,
    neutral_permeability,
    onsager_check,
    perforated_diffusion,
    solve_cell_problems,
    tensor_rows,
)


@pytest.fixture(scope="module")
def mesh():
    return mesh_for(ellipse_cell(0.62), 0)


@pytest.fixture(scope="module")
def scaling():
    return ScalingGroup(nacl(1.0))


def _cells(mesh, scaling, model, charge=None):
    eq = solve_equilibrium(mesh, scaling, reservoir_closure(scaling, model), charge)
    cells = solve_cell_problems(eq)
    return cells, assemble_effective_tensor(cells)


@pytest.fixture(scope="module")
def charged(mesh, scaling):
    return {m: _cells(mesh, scaling, m) for m in ("msa", "ideal")}


@pytest.fixture(scope="module")
def uncharged(mesh, scaling):
    return {m: _cells(mesh, scaling, m, SurfaceCharge(scale=0.0)) for m in ("msa", "ideal")}


@pytest.mark.parametrize("model", ["msa", "ideal"])
def test_onsager_symmetric_positive(charged, model):
    cells, tensor = charged[model]
    check = onsager_check(tensor)
    assert check.symmetry_residual < 1e-6
    assert check.min_eigenvalue > 0
    assert max(check.reciprocity.values()) < 1e-6
    assert cells.residual < 1e-9
    assert cells.divergence < 1e-9


@pytest.mark.parametrize("model", ["msa", "ideal"])
def test_energy_identity_random_directions(charged, model):
    cells, tensor = charged[model]
    rng = np.random.default_rng(7)
    for _ in range(20):
        lam = rng.standard_normal((3, 2))
        quad, direct = energy_identity(cells, tensor, lam)
        assert quad == pytest.approx(direct, rel=1e-8)
        assert quad > 0


@pytest.mark.parametrize("model", ["msa", "ideal"])
def test_zero_charge_reduces_to_neutral_stokes(uncharged, mesh, model):
    cells, tensor = uncharged[model]
    stokes = neutral_permeability(mesh)
    assert np.allclose(tensor.permeability, stokes, rtol=1e-8, atol=1e-8 * np.abs(stokes).max())
    cols = [cells.column(0, k) for k in range(2)]
    assert np.max(np.abs(cells.potentials[:, :, cols])) < 1e-9


@pytest.mark.parametrize("model", ["msa", "ideal"])
def test_zero_charge_blocks_from_constant_coefficients(uncharged, mesh, scaling, model):
    """At zero charge L_j = n_j K, J_i = z_i n_i K and D_jl = n_j z_l n_l K + n_j K_jl z_l / Pe_j D_perf."""
    cells, tensor = uncharged[model]
    eq = cells.equilibrium
    n = eq.concentration[0, 0]
    kmat = eq.transport.tensor[0, 0]
    z, pe = scaling.system.valence, scaling.peclet
    stokes, dperf = neutral_permeability(mesh), perforated_diffusion(mesh)
    scale = np.abs(tensor.matrix).max()
    for j in range(2):
        assert np.allclose(tensor.streaming[j], n[j] * stokes, atol=1e-8 * scale)
        assert np.allclose(tensor.convective[j], z[j] * n[j] * stokes, atol=1e-8 * scale)
        for l in range(2):
            expected = n[j] * z[l] * n[l] * stokes + n[j] * kmat[j, l] * z[l] / pe[j] * dperf
            assert np.allclose(tensor.diffusion[j, l], expected, atol=1e-8 * scale)


def test_square_cell_is_isotropic(scaling):
    _, tensor = _cells(mesh_for(rect_cell(0.64), 0), scaling, "msa")
    k = tensor.permeability
    assert k[0, 0] == pytest.approx(k[1, 1], rel=5e-3)
    assert abs(k[0, 1]) < 1e-3 * k[0, 0]


def test_charge_lowers_permeability(charged, mesh):
    stokes = neutral_permeability(mesh)
    for _, tensor in charged.values():
        rel = np.diag(tensor.permeability) / np.diag(stokes)
        assert np.all(rel < 1) and np.all(rel > 0)


def test_unequal_diameters_rejected(mesh):
    system = ElectrolyteSystem((Species("K", 1, 19.6e-10, 2.8e-10, 1.0), Species("Cl", -1, 20.3e-10, 3.6e-10, 1.0)))
    sc = ScalingGroup(system)
    eq = solve_equilibrium(mesh, sc, reservoir_closure(sc, "msa"))
    with pytest.raises(ModelValidityError, match="equal ion diameters"):
        solve_cell_problems(eq)


def test_tensor_rows_layout(charged):
    _, tensor = charged["msa"]
    rows = tensor_rows(tensor, order=["Na", "Cl"])
    na = tensor.names.index("Na")
    assert rows["J1_12"] == tensor.convective[na][0, 1]
    assert rows["D12_21"] == tensor.diffusion[na, 1 - na][1, 0]
    assert np.isnan(rows["Krel_11"])


@settings(max_examples=10, deadline=None)
@given(st.lists(st.floats(min_value=-3, max_value=3), min_size=6, max_size=6))
def test_quadratic_form_matches_dissipation(charged, values):
    cells, tensor = charged["msa"]
    lam = np.array(values).reshape(3, 2)
    quad, direct = energy_identity(cells, tensor, lam)
    assert quad == pytest.approx(direct, rel=1e-8, abs=1e-12 * np.abs(tensor.matrix).max())
    assert quad >= -1e-12 * np.abs(tensor.matrix).max()
