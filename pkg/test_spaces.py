import numpy as np
import pytest

from conftest import free_spaces, rng
from errors import ConfigError
from spaces import (ESSENTIAL, NATURAL, FacetConstraint, build_spaces, interpolate_bdm, interpolate_compound,
                    project_facet_tangential, project_pressure)
from verify import max_commuting_defect


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_dimensions(unit_square, k):
    spaces = build_spaces(unit_square, k)
    assert spaces.n_local_v == (k + 1) * (k + 2)
    assert spaces.dim_v == 5 * (k + 1) + 2 * (k * k - 1)
    assert spaces.dim_hat == 5 * k
    assert spaces.dim_q == 2 * k * (k + 1) // 2
    assert spaces.dim_u == spaces.dim_v + spaces.dim_hat
    assert spaces.n_skeleton == (2 * k + 1) * 5


def test_k2_reference_dimensions(unit_square):
    spaces = build_spaces(unit_square, 2)
    assert (spaces.dim_v, spaces.dim_hat, spaces.dim_q) == (21, 10, 6)


def test_unsupported_degree(unit_square):
    with pytest.raises(ConfigError):
        build_spaces(unit_square, 5)


def test_missing_boundary_condition(fsi_mesh):
    with pytest.raises(ConfigError) as info:
        build_spaces(fsi_mesh, 1, {"fluid_exterior": FacetConstraint()})
    assert "solid_exterior" in str(info.value)


def test_default_constraints_fix_exterior_normals(fsi_mesh):
    spaces = build_spaces(fsi_mesh, 2)
    boundary = fsi_mesh.boundary_facets
    assert spaces.normal_fixed_facets[boundary].all()
    assert not spaces.normal_fixed_facets[fsi_mesh.interface_facets].any()
    assert spaces.u_fixed.sum() == len(boundary) * (2 + 1) + len(boundary) * 2


def test_mixed_constraints(fsi_mesh):
    bcs = {"fluid_exterior": FacetConstraint(ESSENTIAL, NATURAL), "solid_exterior": FacetConstraint(NATURAL, ESSENTIAL)}
    spaces = build_spaces(fsi_mesh, 1, bcs)
    fluid = fsi_mesh.boundary_tags["fluid_exterior"]
    solid = fsi_mesh.boundary_tags["solid_exterior"]
    assert spaces.normal_fixed_facets[fluid].all() and not spaces.tangential_fixed_facets[fluid].any()
    assert spaces.tangential_fixed_facets[solid].all() and not spaces.normal_fixed_facets[solid].any()


@pytest.mark.parametrize("k", [1, 2, 3])
def test_interpolation_reproduces_polynomials(fsi_mesh, k):
    spaces = free_spaces(fsi_mesh, k)

    def field(x, y):
        return np.stack([1.0 + x ** k - 2.0 * y, 0.5 * x * y ** (k - 1) + y])

    u = interpolate_bdm(spaces, field)
    elements = np.arange(fsi_mesh.n_elements)
    points = fsi_mesh.centroids
    values = spaces.evaluate_velocity(u, elements, points)
    np.testing.assert_allclose(values.T, field(points[:, 0], points[:, 1]), atol=1e-11)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_normal_continuity(fsi_mesh, k):
    spaces = free_spaces(fsi_mesh, k)
    u = rng(k).standard_normal(spaces.dim_u)
    fe = fsi_mesh.facet_elements
    inner = np.flatnonzero(fe[:, 1] >= 0)
    mid = fsi_mesh.facet_midpoints[inner]
    n = fsi_mesh.facet_normals[inner]
    left = np.einsum("fi,fi->f", spaces.evaluate_velocity(u, fe[inner, 0], mid), n)
    right = np.einsum("fi,fi->f", spaces.evaluate_velocity(u, fe[inner, 1], mid), n)
    np.testing.assert_allclose(left, right, atol=1e-10 * np.abs(u).max())


@pytest.mark.parametrize("k", [1, 2, 3])
def test_commuting_projection(fsi_mesh, k):
    spaces = free_spaces(fsi_mesh, k)
    gen = rng(10 + k)
    for _ in range(5):
        a = gen.standard_normal(6)
        if k == 1:
            a[4] = 0.0  # facet quadrature is exact up to degree 2 fields for k = 1

        def field(x, y):
            return np.stack([a[0] * x ** 2 + a[1] * x * y + a[2] * y, a[3] * y ** 2 + a[4] * x ** 2 * y + a[5] * x])

        def divergence(x, y):
            return 2 * a[0] * x + a[1] * y + 2 * a[3] * y + a[4] * x ** 2

        defect = max_commuting_defect(spaces, field, divergence)
        assert defect < 1e-10 * np.abs(a).max()


def test_divergence_free_field_has_divergence_free_interpolant(fsi_mesh):
    spaces = free_spaces(fsi_mesh, 3)
    # curl of x^2 y^3 + x^3
    u = interpolate_bdm(spaces, lambda x, y: np.stack([3 * x ** 2 * y ** 2, -2 * x * y ** 3 - 3 * x ** 2]))
    scale = np.abs(u).max()
    assert np.abs(spaces.divergence_at_quadrature(u)).max() < 1e-10 * scale


@pytest.mark.parametrize("k", [1, 2])
def test_pressure_projection_is_exact_on_polynomials(fsi_mesh, k):
    spaces = build_spaces(fsi_mesh, k)
    p = project_pressure(spaces, lambda x, y: 2.0 + (k - 1) * (x - 3 * y))
    values = spaces.evaluate_pressure(p, np.arange(fsi_mesh.n_elements), fsi_mesh.centroids)
    x, y = fsi_mesh.centroids.T
    np.testing.assert_allclose(values, 2.0 + (k - 1) * (x - 3 * y), atol=1e-12)


def test_cell_average_is_first_pressure_coefficient(fsi_mesh):
    spaces = build_spaces(fsi_mesh, 3)
    p = project_pressure(spaces, lambda x, y: np.sin(x) + y ** 2)
    vol = spaces.volume
    values = np.einsum("eql,el->eq", vol.pressure, p[spaces.p_dofs])
    means = np.einsum("eq,eq->e", vol.weights, values) / fsi_mesh.areas
    np.testing.assert_allclose(p[spaces.p_dofs[:, 0]], means, atol=1e-12)


def test_tangential_projection_of_constant(fsi_mesh):
    spaces = build_spaces(fsi_mesh, 2)
    hat = project_facet_tangential(spaces, lambda x, y: np.stack([np.ones_like(x), 2.0 * np.ones_like(y)]))
    t = fsi_mesh.facet_tangents
    coeffs = hat.reshape(-1, 2)
    np.testing.assert_allclose(coeffs[:, 0], t[:, 0] + 2.0 * t[:, 1], atol=1e-13)
    np.testing.assert_allclose(coeffs[:, 1], 0.0, atol=1e-13)


def test_compound_interpolant_layout(fsi_mesh, manufactured):
    spaces = build_spaces(fsi_mesh, 2)
    u = interpolate_compound(spaces, manufactured.profile)
    assert u.shape == (spaces.dim_u,)
    assert spaces.solid_mask.sum() + spaces.fluid_mask.sum() > spaces.dim_u
