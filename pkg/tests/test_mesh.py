"""Unit-cell geometry and periodic triangulation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msaupscale.errors import MeshError
from msaupscale.mesh import (
    BOTTOM,
    LEFT,
    RIGHT,
    SOLID,
    TOP,
    Ellipse,
    MeshSizing,
    Rectangle,
    UnitCellGeometry,
    build_cell,
    ellipse_cell,
    mesh_for,
    read_mesh,
    rect_cell,
    unit_square_mesh,
    validate_mesh,
    write_mesh,
)


@pytest.fixture(scope="module")
def ellipse_mesh():
    return mesh_for(ellipse_cell(0.62), 0)


def test_ellipse_cell_area_and_aspect():
    geo = ellipse_cell(0.62, 2.0)
    (inc,) = geo.inclusions
    assert geo.porosity == pytest.approx(0.62, abs=1e-14)
    assert inc.semi_axes[0] / inc.semi_axes[1] == pytest.approx(2.0)


def test_rect_cell_area():
    assert rect_cell(0.36).porosity == pytest.approx(0.36, abs=1e-14)


def test_inclusion_must_fit_inside_cell():
    with pytest.raises(MeshError):
        UnitCellGeometry((Ellipse((0.5, 0.5), (0.6, 0.2)),))
    with pytest.raises(MeshError):
        ellipse_cell(0.19, 2.0)


def test_default_mesh_is_valid(ellipse_mesh):
    rep = validate_mesh(ellipse_mesh)
    assert rep.ok, rep.violations
    assert rep.fluid_area == pytest.approx(0.62, rel=5e-3)
    assert rep.min_angle_deg > 20


def test_boundary_markers_cover_every_side(ellipse_mesh):
    markers = set(ellipse_mesh.boundary_edges[:, 2].tolist())
    assert markers == {SOLID, LEFT, RIGHT, BOTTOM, TOP}


def test_periodic_partners_are_translates(ellipse_mesh):
    v = ellipse_mesh.vertices
    slave, master = ellipse_mesh.periodic_pairs.T
    shift = v[slave] - v[master]
    assert np.all(np.isclose(shift, [1, 0], atol=1e-14).all(axis=1) | np.isclose(shift, [0, 1], atol=1e-14).all(axis=1))


def test_triangles_counter_clockwise(ellipse_mesh):
    assert np.all(ellipse_mesh.areas > 0)


def test_refinement_increases_resolution():
    geo = ellipse_cell(0.62)
    coarse, fine = mesh_for(geo, 0), mesh_for(geo, 1)
    assert fine.num_vertices > 1.8 * coarse.num_vertices
    assert fine.edge_length_range()[1] < coarse.edge_length_range()[1]


def test_meshing_is_deterministic():
    geo = ellipse_cell(0.62)
    a, b = mesh_for(geo, 0), mesh_for(geo, 0)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.triangles, b.triangles)


def test_mesh_file_round_trip(tmp_path, ellipse_mesh):
    path = tmp_path / "cell.mesh"
    write_mesh(ellipse_mesh, path)
    back = read_mesh(path, ellipse_mesh.geometry)
    assert np.array_equal(back.vertices, ellipse_mesh.vertices)
    assert np.array_equal(back.triangles, ellipse_mesh.triangles)
    assert np.array_equal(back.periodic_pairs, ellipse_mesh.periodic_pairs)


def test_corrupt_mesh_file_rejected(tmp_path):
    path = tmp_path / "bad.mesh"
    path.write_text("nodes 3\n")
    with pytest.raises(MeshError):
        read_mesh(path)


def test_multiple_inclusions():
    geo = UnitCellGeometry((Rectangle((0.25, 0.3), (0.2, 0.2)), Ellipse((0.7, 0.7), (0.15, 0.1), 0.3)))
    mesh = build_cell(geo, MeshSizing())
    rep = validate_mesh(mesh)
    assert rep.ok, rep.violations


def test_unit_square_mesh_has_full_area():
    mesh = unit_square_mesh(6)
    assert mesh.fluid_area == pytest.approx(1.0, abs=1e-14)
    assert len(mesh.solid_edges) == 0


@settings(max_examples=8, deadline=None)
@given(st.floats(min_value=0.5, max_value=0.9), st.floats(min_value=1.0, max_value=2.0), st.floats(min_value=0.0, max_value=90.0))
def test_rotated_ellipses_mesh_validly(porosity, aspect, rotation):
    geo = ellipse_cell(porosity, aspect, rotation)
    rep = validate_mesh(build_cell(geo))
    assert rep.ok, rep.violations
