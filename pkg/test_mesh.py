import numpy as np
import pytest

from cases import ManufacturedCase, PulseCase
from errors import ClassificationError, GeometryError
from mesh import FacetKind, Rectangle, Region, build_structured_mesh, classify_boundary, mesh_from_triangles, write_mesh


def test_unit_square_counts(unit_square):
    assert (unit_square.n_vertices, unit_square.n_facets, unit_square.n_elements) == (4, 5, 2)
    assert len(unit_square.boundary_facets) == 4
    assert unit_square.h == pytest.approx(1.0)


@pytest.mark.parametrize("n", [2, 4, 6])
def test_two_region_topology(n):
    mesh = ManufacturedCase.from_ratios(1.0, 1.0, 1.0).build_mesh(n)
    assert mesh.n_vertices - mesh.n_facets + mesh.n_elements == 1
    assert len(mesh.interface_facets) == n
    assert np.allclose(mesh.facet_midpoints[mesh.interface_facets][:, 1], 0.0)
    assert mesh.areas.sum() == pytest.approx(1.5)
    assert len(mesh.solid_elements) == n * n
    assert len(mesh.fluid_elements) == 2 * n * n


def test_elements_are_counterclockwise(fsi_mesh):
    assert np.all(fsi_mesh.areas > 0)


def test_interior_facets_have_opposite_signs(fsi_mesh):
    fe = fsi_mesh.facet_elements
    for f in np.flatnonzero(fe[:, 1] >= 0):
        signs = []
        for e in fe[f]:
            local = int(np.flatnonzero(fsi_mesh.element_facets[e] == f)[0])
            signs.append(fsi_mesh.element_signs[e, local])
        assert signs[0] == -signs[1]


def test_facet_kinds(fsi_mesh):
    kinds = fsi_mesh.facet_kinds
    assert np.count_nonzero(kinds == FacetKind.INTERFACE) == 2
    assert np.count_nonzero(kinds == FacetKind.BOUNDARY) == len(fsi_mesh.boundary_facets)


def test_outward_normals_point_away(unit_square):
    facets = unit_square.boundary_facets
    normals = unit_square.outward_normals(facets)
    away = unit_square.facet_midpoints[facets] - 0.5
    assert np.all(np.einsum("fi,fi->f", normals, away) > 0)


def test_pulse_tags():
    mesh = PulseCase().build_mesh(10)
    counts = {tag: len(ids) for tag, ids in mesh.boundary_tags.items()}
    assert counts == {"inlet": 5, "outlet": 5, "fluid_bottom": 60, "solid_inout": 2, "solid_top": 60}
    assert mesh.n_elements == 2 * 60 * 6


def test_classification_rejects_untagged(unit_square):
    with pytest.raises(ClassificationError) as info:
        classify_boundary(unit_square, {"bottom": lambda x, y: y < 1e-9})
    assert len(info.value.facets) == 3


def test_classification_rejects_double_tags(unit_square):
    spec = {"all": lambda x, y: np.ones_like(x, dtype=bool), "left": lambda x, y: x < 1e-9}
    with pytest.raises(ClassificationError):
        classify_boundary(unit_square, spec)


def test_off_lattice_rectangle():
    with pytest.raises(GeometryError):
        build_structured_mesh([Rectangle(0.0, 0.5, 0.0, 1.0)], 3)


def test_non_adjacent_rectangles():
    with pytest.raises(GeometryError):
        build_structured_mesh([Rectangle(0.0, 1.0, 0.0, 1.0), Rectangle(2.0, 3.0, 0.0, 1.0, Region.SOLID)], 2)


def test_degenerate_triangle():
    with pytest.raises(GeometryError):
        mesh_from_triangles(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), np.array([[0, 1, 2]]))


def test_clockwise_input_is_reoriented():
    mesh = mesh_from_triangles(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), np.array([[0, 1, 2]]))
    assert mesh.areas[0] == pytest.approx(0.5)


def test_write_mesh(tmp_path, fsi_mesh):
    path = tmp_path / "mesh.txt"
    write_mesh(fsi_mesh, path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"vertices {fsi_mesh.n_vertices}"
    assert f"elements {fsi_mesh.n_elements}" in lines
    assert f"facets {fsi_mesh.n_facets}" in lines
    labels = {line.split()[-1] for line in lines[lines.index(f"facets {fsi_mesh.n_facets}") + 1:]}
    assert {"interface", "fluid_exterior", "solid_exterior"} <= labels
