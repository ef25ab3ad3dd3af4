"""Finite-element layer: quadrature, periodic spaces, assembly, solves, manufactured solutions."""

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ellipe

from msaupscale import fem
from msaupscale.errors import SingularSystemError
from msaupscale.mesh import ellipse_cell, mesh_for, unit_square_mesh
from msaupscale.mms import run_all


@pytest.fixture(scope="module")
def cell():
    return mesh_for(ellipse_cell(0.62), 0)


@pytest.fixture(scope="module")
def mms_orders():
    return {(s.name, k): v for s in run_all() for k, v in s.orders().items()}


def test_quadrature_exact_for_quartics():
    mesh = unit_square_mesh(3)
    geo = fem.ElementGeometry(mesh)
    x, y = geo.points[..., 0], geo.points[..., 1]
    assert geo.integrate(x**4) == pytest.approx(0.2, rel=1e-13)
    assert geo.integrate(x**2 * y**2) == pytest.approx(1 / 9, rel=1e-13)


def test_p2_basis_partition_of_unity():
    bary = fem.QUAD_BARY
    assert np.allclose(fem.basis_values(2, bary).sum(axis=1), 1.0, atol=1e-15)
    assert np.allclose(fem.basis_values(1, bary).sum(axis=1), 1.0, atol=1e-15)


def test_periodic_space_identifies_opposite_sides(cell):
    space = fem.FunctionSpace(cell, 2)
    coords = space.coords
    assert np.all(coords < 1.0)  # right/top copies are eliminated
    u = space.interpolate(lambda p: np.sin(2 * np.pi * p[:, 0]) + np.cos(2 * np.pi * p[:, 1]))
    vals = space.values_at_quad(u)
    exact = np.sin(2 * np.pi * space.geometry.points[..., 0]) + np.cos(2 * np.pi * space.geometry.points[..., 1])
    assert np.max(np.abs(vals - exact)) < 5e-3


def test_quadratics_reproduced_exactly():
    mesh = unit_square_mesh(4)
    space = fem.FunctionSpace(mesh, 2)
    # x(1-x) is continuous across the periodic seam (zero on both sides).
    u = space.interpolate(lambda p: p[:, 0] * (1 - p[:, 0]))
    err = fem.l2_norm(space, u, lambda p: p[:, 0] * (1 - p[:, 0]))
    assert err < 1e-14


def test_stiffness_symmetric_with_constant_kernel(cell):
    space = fem.FunctionSpace(cell, 2)
    a = fem.stiffness(space)
    assert abs(a - a.T).max() < 1e-13
    assert np.max(np.abs(a @ np.ones(space.ndof))) < 1e-11


def test_mass_integrates_fluid_area(cell):
    space = fem.FunctionSpace(cell, 2)
    m = fem.mass(space)
    one = np.ones(space.ndof)
    assert one @ m @ one == pytest.approx(cell.fluid_area, rel=1e-12)


def test_boundary_load_measures_ellipse_perimeter(cell):
    space = fem.FunctionSpace(cell, 1)
    (inc,) = cell.geometry.inclusions
    a, b = inc.semi_axes
    exact = 4 * a * ellipe(1 - (b / a) ** 2)
    assert fem.boundary_load(space, 1.0).sum() == pytest.approx(exact, rel=2e-3)


def test_assembly_is_bitwise_deterministic(cell):
    space = fem.FunctionSpace(cell, 2)
    coeff = 1 + space.geometry.points[..., 0] ** 2
    a1, a2 = fem.stiffness(space, coeff), fem.stiffness(space, coeff)
    assert (a1 != a2).nnz == 0


def test_stokes_residual_small(cell):
    spaces = fem.StokesSpaces.build(cell)
    force = np.zeros(spaces.velocity.geometry.dx.shape + (2,))
    force[..., 0] = 1.0
    system = fem.assemble_stokes(spaces, force)
    x = fem.solve(system)
    assert fem.backward_error(system.matrix, x, system.rhs).max() < 1e-10
    assert abs(system.matrix - system.matrix.T).max() < 1e-13


def test_singular_system_detected():
    mesh = unit_square_mesh(4)
    space = fem.FunctionSpace(mesh, 1)
    a = fem.stiffness(space)  # pure periodic Laplacian: constants in the kernel
    with pytest.raises(SingularSystemError):
        fem.Factorization(a).solve(np.ones(space.ndof))


def test_mean_constraint_fixes_constant(cell):
    space = fem.FunctionSpace(cell, 2)
    flux = np.zeros(space.geometry.dx.shape + (2,))
    flux[..., 0] = 1.0
    system = fem.assemble_scalar(space, flux=flux, zero_mean=True)
    u = fem.solve(system)[system.blocks["u"]]
    assert abs(space.mean_vector() @ u) < 1e-13


def test_coordinate_dump(tmp_path):
    m = sp.csr_matrix(np.array([[2.0, 0.0], [1.0, 3.0]]))
    path = tmp_path / "m.coo"
    fem.write_coo(m, path)
    assert path.read_text().splitlines() == ["2 2 3", "0 0 2", "1 0 1", "1 1 3"]


def test_scalar_order(mms_orders):
    assert abs(mms_orders[("scalar P2", "u")] - 3.0) <= 0.2


def test_stokes_orders(mms_orders):
    assert abs(mms_orders[("Stokes Taylor-Hood", "velocity")] - 3.0) <= 0.3
    assert abs(mms_orders[("Stokes Taylor-Hood", "pressure")] - 2.0) <= 0.3


@settings(max_examples=15, deadline=None)
@given(st.floats(min_value=0.1, max_value=10.0), st.floats(min_value=-3.0, max_value=3.0))
def test_scalar_solution_scales_linearly(scale, shift):
    """Solution map of the reaction-diffusion problem is linear in the source."""
    space = fem.FunctionSpace(unit_square_mesh(6), 2)
    pts = space.geometry.points
    src = np.cos(2 * np.pi * pts[..., 0])
    base = fem.assemble_scalar(space, reaction=1.0, source=src)
    scaled = fem.assemble_scalar(space, reaction=1.0, source=scale * src + shift)
    u0 = fem.solve(base)
    u1 = fem.solve(scaled)
    assert np.allclose(u1, scale * u0 + shift, atol=1e-10 * (1 + abs(shift) + scale))
