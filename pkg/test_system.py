import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from conftest import rng
from errors import AssemblyError
from forms import MaterialParams
from krylov import sparse_factorize
from spaces import build_spaces
from system import FLUID_ONLY, STANDARD, assemble_system, build_operators, export_coo, static_condense

TAU = 0.05


@pytest.fixture
def blocks_k1(fsi_mesh, manufactured):
    spaces = build_spaces(fsi_mesh, 1, manufactured.boundary_conditions)
    return assemble_system(spaces, manufactured.params, TAU)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_assembled_system_symmetric(fsi_mesh, manufactured, k):
    spaces = build_spaces(fsi_mesh, k, manufactured.boundary_conditions)
    blocks = assemble_system(spaces, manufactured.params, TAU)
    matrix = blocks.matrix
    assert abs(matrix - matrix.T).max() < 1e-10 * abs(matrix).max()
    assert blocks.n_u == spaces.dim_u and blocks.n_p == spaces.dim_q


def test_velocity_block_positive_definite(blocks_k1):
    sparse_factorize(blocks_k1.A)


def test_constrained_rows_are_identity(blocks_k1):
    fixed = np.flatnonzero(blocks_k1.spaces.u_fixed)
    A = blocks_k1.A.tocsr()
    for i in fixed[:10]:
        row = A.getrow(i)
        assert row.count_nonzero() == 1 and row[0, i] == 1.0
    assert not blocks_k1.B.tocsr()[fixed].count_nonzero()


def test_invalid_inputs(fsi_mesh, manufactured):
    spaces = build_spaces(fsi_mesh, 1, manufactured.boundary_conditions)
    with pytest.raises(AssemblyError):
        assemble_system(spaces, manufactured.params, 0.0)
    with pytest.raises(AssemblyError):
        assemble_system(spaces, manufactured.params, TAU, pressure_form="mixed")


def test_zero_lame_parameter_switches_form(fsi_mesh):
    spaces = build_spaces(fsi_mesh, 1)
    blocks = assemble_system(spaces, MaterialParams(lam_s=0.0), TAU)
    assert blocks.pressure_form == FLUID_ONLY
    solid = blocks.spaces.mesh.solid_elements
    assert not blocks.active_pressure[solid].any()
    np.testing.assert_allclose(blocks.M.diagonal()[spaces.p_dofs[solid].ravel()], 1.0)


def test_operators_are_reusable(fsi_mesh, manufactured):
    spaces = build_spaces(fsi_mesh, 2, manufactured.boundary_conditions)
    ops = build_operators(spaces, manufactured.params.alpha)
    a = assemble_system(spaces, manufactured.params, TAU, operators=ops)
    b = assemble_system(spaces, manufactured.params, TAU)
    assert abs(a.matrix - b.matrix).max() < 1e-14 * abs(b.matrix).max()


def test_solid_stiffness_ignores_fluid(blocks_k1):
    spaces = blocks_k1.spaces
    x = rng(0).standard_normal(spaces.dim_u)
    x[spaces.solid_mask] = 0.0
    assert abs(blocks_k1.solid_stiffness @ x).max() < 1e-12


def test_condensation_is_identity_for_k1(blocks_k1):
    cond = static_condense(blocks_k1)
    assert cond.identity
    rhs = rng(1).standard_normal(blocks_k1.n_u + blocks_k1.n_p)
    np.testing.assert_array_equal(cond.reduce_rhs(rhs), rhs)


@pytest.mark.parametrize("k", [2, 3])
def test_condensed_solve_matches_full_solve(manufactured, k):
    mesh = manufactured.build_mesh(4)
    spaces = build_spaces(mesh, k, manufactured.boundary_conditions)
    blocks = assemble_system(spaces, manufactured.params, TAU)
    cond = static_condense(blocks)
    assert not cond.identity
    assert cond.n_u == spaces.n_skeleton and cond.n_p == mesh.n_elements

    rhs = rng(k).standard_normal(blocks.n_u + blocks.n_p)
    rhs[: spaces.dim_u][spaces.u_fixed] = 0.0
    full = spsolve(sp.csc_matrix(blocks.matrix), rhs)
    reduced = spsolve(sp.csc_matrix(cond.matrix), cond.reduce_rhs(rhs))
    recovered = cond.recover(reduced, rhs)
    np.testing.assert_allclose(recovered, full, atol=1e-9 * np.abs(full).max())


def test_condensed_matrix_symmetric(manufactured):
    spaces = build_spaces(manufactured.build_mesh(2), 2, manufactured.boundary_conditions)
    cond = static_condense(assemble_system(spaces, manufactured.params, TAU))
    matrix = cond.matrix
    assert abs(matrix - matrix.T).max() < 1e-10 * abs(matrix).max()


def test_standard_and_fluid_only_forms_agree(two_triangles):
    params = MaterialParams(rho_f=1.0, mu_f=1.0, rho_s=2.0, mu_s=3.0, lam_s=4.0)
    spaces = build_spaces(two_triangles, 1)
    standard = assemble_system(spaces, params, TAU, pressure_form=STANDARD)
    fluid_only = assemble_system(spaces, params, TAU, pressure_form=FLUID_ONLY)
    rhs = np.zeros(standard.n_u + standard.n_p)
    free = np.flatnonzero(~spaces.u_fixed)
    rhs[free] = rng(5).standard_normal(len(free))

    x_std = spsolve(sp.csc_matrix(standard.matrix), rhs)
    x_fo = spsolve(sp.csc_matrix(fluid_only.matrix), rhs)
    n_u = spaces.dim_u
    np.testing.assert_allclose(x_std[:n_u], x_fo[:n_u], atol=1e-10 * np.abs(x_std).max())

    fluid, solid = two_triangles.fluid_elements, two_triangles.solid_elements
    p_std, p_fo = x_std[n_u:], x_fo[n_u:]
    np.testing.assert_allclose(p_std[spaces.p_dofs[fluid, 0]], p_fo[spaces.p_dofs[fluid, 0]], atol=1e-10)
    div = spaces.divergence_at_quadrature(x_std[:n_u], solid).mean(axis=1)
    np.testing.assert_allclose(p_std[spaces.p_dofs[solid, 0]], -TAU * params.lam_s * div, atol=1e-10)


def test_export_coo(tmp_path, blocks_k1):
    path = tmp_path / "A.coo"
    export_coo(blocks_k1.A, path)
    data = np.loadtxt(path)
    rebuilt = sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=blocks_k1.A.shape)
    assert abs(rebuilt - blocks_k1.A).max() == 0.0
