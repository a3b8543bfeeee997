import numpy as np
import pytest
from pydantic import ValidationError

from conftest import free_spaces, rng
from forms import (MaterialParams, auxiliary_cg_matrix, facet_traction_load, load_functionals, local_div_coupling,
                   local_div_div, local_hdg_diffusion, local_masses, merged_coefficients, pressure_jump_matrix,
                   transfer_matrix, volume_load)
from mesh import Region
from spaces import build_spaces, interpolate_compound


def _rigid(x, y):
    return np.stack([1.0 - 0.5 * y, -0.25 + 0.5 * x])


@pytest.mark.parametrize("k", [1, 2, 3])
def test_local_diffusion_symmetric_semidefinite(fsi_mesh, k):
    spaces = free_spaces(fsi_mesh, k)
    local = local_hdg_diffusion(spaces).total
    np.testing.assert_allclose(local, np.swapaxes(local, 1, 2), atol=1e-12 * np.abs(local).max())
    eig = np.linalg.eigvalsh(local)
    assert eig.min() > -1e-10 * eig.max()


@pytest.mark.parametrize("k", [1, 2, 3])
def test_rigid_motions_have_zero_energy(fsi_mesh, k):
    spaces = free_spaces(fsi_mesh, k)
    parts = local_hdg_diffusion(spaces)
    u = interpolate_compound(spaces, _rigid)[spaces.u_dofs]
    for matrix in (parts.total, parts.volume, parts.penalty):
        assert np.abs(np.einsum("el,elm,em->e", u, matrix, u)).max() < 1e-11


def test_penalty_sees_tangential_mismatch(fsi_mesh):
    spaces = free_spaces(fsi_mesh, 1)
    parts = local_hdg_diffusion(spaces)
    u = interpolate_compound(spaces, _rigid)
    u[spaces.dim_v:] += 1.0
    ue = u[spaces.u_dofs]
    assert np.einsum("el,elm,em->", ue, parts.penalty, ue) > 0


def test_coupling_against_constant_pressure(fsi_mesh, manufactured):
    spaces = free_spaces(fsi_mesh, 2)
    b = local_div_coupling(spaces)
    u = interpolate_compound(spaces, lambda x, y: np.stack([x, 0.0 * y]))
    ue = u[spaces.v_dofs]
    # -(1, div u) = -|K| for div u = 1
    np.testing.assert_allclose(np.einsum("el,el->e", ue, b[:, :, 0]), -fsi_mesh.areas, atol=1e-12)
    dd = local_div_div(spaces)
    np.testing.assert_allclose(np.einsum("el,elm,em->e", ue, dd, ue), fsi_mesh.areas, atol=1e-12)


def test_mass_integrates_constant_field(fsi_mesh):
    spaces = free_spaces(fsi_mesh, 2)
    masses = local_masses(spaces, rho=np.full(fsi_mesh.n_elements, 3.0))
    u = interpolate_compound(spaces, lambda x, y: np.stack([np.ones_like(x), 2.0 * np.ones_like(y)]))
    ue = u[spaces.v_dofs]
    np.testing.assert_allclose(np.einsum("el,elm,em->e", ue, masses.velocity, ue), 5.0 * fsi_mesh.areas)
    np.testing.assert_allclose(masses.rho, 3.0 * masses.velocity)


def test_merged_coefficients(fsi_mesh):
    params = MaterialParams(rho_f=1.0, mu_f=2.0, rho_s=3.0, mu_s=4.0, lam_s=5.0, beta_s=6.0)
    coef = merged_coefficients(fsi_mesh, params, 0.1)
    solid = fsi_mesh.regions == Region.SOLID
    assert np.allclose(coef.mu[solid], 0.4) and np.allclose(coef.mu[~solid], 2.0)
    assert np.allclose(coef.gamma[solid], 1.0 / (0.1 * 5.0)) and np.allclose(coef.gamma[~solid], 0.0)
    assert np.allclose(coef.rho[solid], 3.0) and np.allclose(coef.beta[~solid], 0.0)


def test_zero_lame_parameter_gives_zero_gamma(fsi_mesh):
    coef = merged_coefficients(fsi_mesh, MaterialParams(lam_s=0.0), 0.1)
    assert not coef.gamma.any()


def test_material_validation():
    with pytest.raises(ValidationError):
        MaterialParams(rho_f=-1.0)
    with pytest.raises(ValidationError):
        MaterialParams(viscosity=1.0)


def test_pressure_jump_two_triangles(unit_square):
    jump = pressure_jump_matrix(unit_square, np.ones(2), np.zeros(2), 1.0).toarray()
    w = 2.0 * np.sqrt(2.0)
    np.testing.assert_allclose(jump, [[w, -w], [-w, w]])


def test_pressure_jump_boundary_and_density(unit_square):
    rho = np.array([1.0, 4.0])
    boundary = unit_square.boundary_facets[:1]
    jump = pressure_jump_matrix(unit_square, rho, np.array([0.0, 2.0]), 0.5, boundary).toarray()
    w = 0.5 * (1.0 + 4.0) / 4.0 * np.sqrt(2.0)
    owner = unit_square.facet_elements[boundary[0], 0]
    expected = np.array([[w, -w], [-w, w]])
    expected[1, 1] += 2.0 * 0.5
    expected[owner, owner] += 1.0 / rho[owner]
    np.testing.assert_allclose(jump, expected)


def test_pressure_jump_inactive_elements(unit_square):
    jump = pressure_jump_matrix(unit_square, np.ones(2), np.ones(2), 1.0, active=np.array([True, False]))
    np.testing.assert_allclose(jump.toarray(), [[0.5, 0.0], [0.0, 0.0]])


@pytest.mark.parametrize("k", [1, 2])
def test_auxiliary_matrix_spd(fsi_mesh, manufactured, k):
    spaces = build_spaces(fsi_mesh, k, manufactured.boundary_conditions)
    coef = merged_coefficients(fsi_mesh, manufactured.params, 0.05)
    aux = auxiliary_cg_matrix(spaces, 0.05, coef.mu).toarray()
    np.testing.assert_allclose(aux, aux.T, atol=1e-12)
    assert np.linalg.eigvalsh(aux).min() > 0
    assert np.allclose(np.diag(aux)[spaces.cg_fixed], 1.0)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_transfer_matches_interpolation_of_linear_fields(fsi_mesh, k):
    spaces = free_spaces(fsi_mesh, k)

    def field(x, y):
        return np.stack([1.0 + 2.0 * x - y, 0.5 * x + 3.0 * y])

    vertex_values = field(fsi_mesh.vertices[:, 0], fsi_mesh.vertices[:, 1]).T.ravel()
    transferred = transfer_matrix(spaces) @ vertex_values
    expected = interpolate_compound(spaces, field)[spaces.skeleton_dofs]
    np.testing.assert_allclose(transferred, expected, atol=1e-12)


def test_transfer_respects_constraints(fsi_mesh, manufactured):
    spaces = build_spaces(fsi_mesh, 1, manufactured.boundary_conditions)
    transfer = transfer_matrix(spaces).toarray()
    fixed = spaces.u_fixed[spaces.skeleton_dofs]
    assert not transfer[fixed].any()
    assert not transfer[:, spaces.cg_fixed].any()


@pytest.mark.parametrize("k", [1, 2])
def test_boundary_traction_work(unit_square, k):
    spaces = free_spaces(unit_square, k)
    facets = unit_square.boundary_facets
    load = facet_traction_load(spaces, facets, lambda x, y: np.stack([np.ones_like(x), np.zeros_like(y)]))
    v = interpolate_compound(spaces, lambda x, y: np.stack([np.ones_like(x), np.zeros_like(y)]))
    assert load @ v == pytest.approx(4.0, rel=1e-12)


def test_volume_load_work(fsi_mesh):
    spaces = free_spaces(fsi_mesh, 2)

    def forcing(x, y, region):
        if region == Region.SOLID:
            return None
        return np.stack([np.zeros_like(x), np.ones_like(y)])

    load = volume_load(spaces, forcing)
    v = interpolate_compound(spaces, lambda x, y: np.stack([np.zeros_like(x), np.ones_like(y)]))
    assert load @ v == pytest.approx(1.0, rel=1e-12)


def test_manufactured_loads_skip_constrained_entries(fsi_mesh, manufactured):
    spaces = build_spaces(fsi_mesh, 1, manufactured.boundary_conditions)
    loads = load_functionals(spaces, manufactured, 0.2)
    assert np.abs(loads).max() > 0
    assert not loads[spaces.u_fixed].any()


def test_random_symmetric_quadratic_forms(fsi_mesh):
    spaces = free_spaces(fsi_mesh, 2)
    local = local_hdg_diffusion(spaces).total
    x = rng(3).standard_normal((fsi_mesh.n_elements, spaces.n_local_u))
    assert np.einsum("el,elm,em->", x, local, x) > 0
