import numpy as np
import pytest

from cases import ManufacturedCase, PulseCase, UnforcedCase
from config import Scheme, SolverConfig
from conftest import rng
from errors import ConfigError
from mesh import Region
from stepper import (StepState, bdf3_rhs, bdf3_step, build_simulation, cn_rhs, cn_step, effective_step, energy,
                     exact_state, init_state, max_fluid_divergence, run_transient, step_count)

DIRECT = SolverConfig(method="direct")


@pytest.mark.parametrize("scheme,expected", [(Scheme.CN, 0.05), (Scheme.BDF3, 6.0 / 110.0)])
def test_effective_step(scheme, expected):
    assert effective_step(scheme, 0.1) == pytest.approx(expected)


def test_step_count():
    assert step_count(0.3, 0.1) == 3
    assert step_count(1.2e-2, 1e-4) == 120
    assert step_count(0.3, 0.25) == 1


def test_build_simulation_rejects_bad_step(manufactured):
    with pytest.raises(ConfigError) as err:
        build_simulation(manufactured, 2, 1, Scheme.CN, 0.0)
    assert "dt" in err.value.errors[0]


@pytest.mark.parametrize("scheme", [Scheme.CN, Scheme.BDF3])
@pytest.mark.parametrize("k", [1, 2])
def test_translation_is_preserved(translation, scheme, k):
    sim = build_simulation(translation, 2, k, scheme, 0.1, DIRECT)
    result = run_transient(sim, 0.5)
    exact = exact_state(translation, sim.spaces, result.final.t)
    np.testing.assert_allclose(result.final.u, exact.u, atol=1e-10)
    np.testing.assert_allclose(result.final.eta, exact.eta, atol=1e-10)
    np.testing.assert_allclose(result.final.pressure, 0.0, atol=1e-9)


def _random_state(spaces, seed):
    gen = rng(seed)
    u = gen.standard_normal(spaces.dim_u)
    u[spaces.u_fixed] = 0.0
    eta = np.where(spaces.solid_mask & ~spaces.u_fixed, gen.standard_normal(spaces.dim_u), 0.0)
    return StepState(t=0.0, u=u, eta=eta)


@pytest.mark.parametrize("k", [1, 2])
def test_crank_nicolson_energy_identity(k):
    case = UnforcedCase(ManufacturedCase.from_ratios(10.0, 0.1, 100.0))
    dt = 0.05
    sim = build_simulation(case, 2, k, Scheme.CN, dt, DIRECT)
    state = _random_state(sim.spaces, k)
    energies = [energy(sim.blocks, state.u, state.eta)]
    for _ in range(4):
        state, out = cn_step(state, sim)
        energies.append(energy(sim.blocks, state.u, state.eta))
        assert abs(out.energy_residual) <= 1e-9 * energies[0] / dt
    assert all(b <= a * (1 + 1e-12) for a, b in zip(energies, energies[1:]))


def test_bdf3_requires_three_levels(manufactured):
    sim = build_simulation(manufactured, 2, 1, Scheme.BDF3, 0.1, DIRECT)
    with pytest.raises(ConfigError):
        bdf3_step(exact_state(manufactured, sim.spaces, 0.0), sim)


def test_bdf3_without_closed_form_needs_bootstrap(translation):
    sim = build_simulation(UnforcedCase(translation), 2, 1, Scheme.BDF3, 0.1, DIRECT)
    with pytest.raises(ConfigError):
        run_transient(sim, 0.3)


def test_bdf3_bootstrap_from_rest_stays_at_rest(translation):
    sim = build_simulation(UnforcedCase(translation), 2, 1, Scheme.BDF3, 0.1, DIRECT)
    result = run_transient(sim, 0.4, bootstrap_cn=True)
    assert result.final.step == 4
    assert np.abs(result.final.u).max() <= 1e-14
    assert np.abs(result.final.eta).max() <= 1e-14


@pytest.mark.parametrize("scheme", [Scheme.CN, Scheme.BDF3])
def test_fluid_velocity_stays_divergence_free(manufactured, scheme):
    sim = build_simulation(manufactured, 2, 2, scheme, 0.1, SolverConfig(tol=1e-10))
    result = run_transient(sim, 0.3, keep_states=True)
    diagnostics = result.diagnostics
    assert list(diagnostics["step"]) == [0, 1, 2, 3]
    assert len(result.states) == len(diagnostics)
    scale = max(np.abs(s.u).max() for s in result.states)
    assert diagnostics["max_fluid_divergence"].max() <= 1e-8 * scale
    assert all(i > 0 for i in result.iterations)
    assert result.average_iterations > 0


def test_crank_nicolson_tracks_manufactured_solution(manufactured):
    errors = []
    for n in (2, 4):
        sim = build_simulation(manufactured, n, 1, Scheme.CN, 0.1 / n, DIRECT)
        result = run_transient(sim, 0.2)
        exact = exact_state(manufactured, sim.spaces, 0.2)
        diff = result.final.u - exact.u
        errors.append(np.sqrt(diff @ (sim.blocks.mass_rho @ diff)))
    assert errors[1] < errors[0]


def _unforced_simulation(scheme, k=1):
    case = UnforcedCase(ManufacturedCase.from_ratios(10.0, 0.1, 100.0))
    return build_simulation(case, 2, k, scheme, 0.05, DIRECT)


def _solid_operators(sim):
    ops, params = sim.blocks.operators, sim.case.params
    mass = ops.mass_matrix(sim.blocks.coefficients.rho)
    stiffness = 2.0 * params.mu_s * ops.diffusion_matrix(Region.SOLID) \
        + params.lam_s * ops.div_div_matrix(Region.SOLID)
    return mass, stiffness


def test_rest_gives_zero_right_hand_side():
    cn = _unforced_simulation(Scheme.CN)
    zero = np.zeros(cn.spaces.dim_u)
    rest = StepState(t=0.1, u=zero, eta=zero, history=((zero, zero), (zero, zero)))
    np.testing.assert_array_equal(cn_rhs(rest, cn), 0.0)
    rhs, eta_star = bdf3_rhs(rest, _unforced_simulation(Scheme.BDF3))
    np.testing.assert_array_equal(rhs, 0.0)
    np.testing.assert_array_equal(eta_star, 0.0)


@pytest.mark.parametrize("k", [1, 2])
def test_crank_nicolson_rhs_matches_operator_action(k):
    sim = _unforced_simulation(Scheme.CN, k)
    state = _random_state(sim.spaces, 10 + k)
    mass, stiffness = _solid_operators(sim)
    expected = mass @ state.u / (0.5 * sim.dt) - stiffness @ state.eta
    expected[sim.spaces.u_fixed] = 0.0
    rhs = cn_rhs(state, sim)
    np.testing.assert_allclose(rhs[: sim.spaces.dim_u], expected, atol=1e-12 * np.abs(expected).max())
    np.testing.assert_array_equal(rhs[sim.spaces.dim_u:], 0.0)


def test_bdf3_rhs_matches_operator_action():
    sim = _unforced_simulation(Scheme.BDF3, 2)
    (u1, e1), (u2, e2), (u3, e3) = [(s.u, s.eta) for s in (_random_state(sim.spaces, seed) for seed in (1, 2, 3))]
    state = StepState(t=0.2, u=u1, eta=e1, history=((u2, e2), (u3, e3)))
    mass, stiffness = _solid_operators(sim)
    eta_star = (6.0 / 11.0) * (3.0 * e1 - 1.5 * e2 + e3 / 3.0)
    expected = mass @ (3.0 * u1 - 1.5 * u2 + u3 / 3.0) / sim.dt - stiffness @ eta_star
    expected[sim.spaces.u_fixed] = 0.0
    rhs, combined = bdf3_rhs(state, sim)
    np.testing.assert_allclose(combined, eta_star, atol=1e-14 * np.abs(eta_star).max())
    np.testing.assert_allclose(rhs[: sim.spaces.dim_u], expected, atol=1e-12 * np.abs(expected).max())


def test_pulse_peak_enters_as_inlet_pressure():
    case = PulseCase()
    dt = 1e-4
    sim = build_simulation(case, 10, 1, Scheme.CN, dt, DIRECT)
    mesh, spaces = sim.spaces.mesh, sim.spaces
    zero = np.zeros(spaces.dim_u)
    rhs = cn_rhs(StepState(t=0.015 - 0.5 * dt, u=zero, eta=zero), sim)
    assert case.inlet_pressure(0.015) == pytest.approx(case.p_max)

    inlet = mesh.boundary_tags["inlet"]
    orientation = np.sum(mesh.outward_normals(inlet) * mesh.facet_normals[inlet], axis=1)
    expected = np.zeros(spaces.dim_u)
    expected[inlet * (spaces.k + 1)] = -case.p_max * mesh.facet_lengths[inlet] * orientation
    np.testing.assert_allclose(rhs[: spaces.dim_u], expected, atol=1e-9 * case.p_max)
    np.testing.assert_array_equal(rhs[spaces.dim_u:], 0.0)
    outward = rhs[inlet * (spaces.k + 1)] * orientation
    assert outward.sum() == pytest.approx(-case.p_max * 0.5)


def test_bdf3_is_exact_for_constant_velocity(translation):
    sim = build_simulation(translation, 2, 2, Scheme.BDF3, 0.1, SolverConfig(tol=1e-10))
    result = run_transient(sim, 0.6, keep_states=True)
    assert result.final.step == 6
    for state in result.states:
        exact = exact_state(translation, sim.spaces, state.t)
        np.testing.assert_allclose(state.u, exact.u, atol=1e-7)
        np.testing.assert_allclose(state.eta, exact.eta, atol=1e-7)


def test_start_up_levels_are_divergence_free(manufactured):
    sim = build_simulation(manufactured, 4, 1, Scheme.BDF3, 0.1, DIRECT)
    state = init_state(sim)
    levels = state.levels(3)
    assert len(levels) == 3
    for u, _ in levels[:2]:
        assert np.abs(u).max() > 0
    for u, _ in levels:
        assert max_fluid_divergence(sim.spaces, u) <= 1e-9 * max(np.abs(u).max(), 1.0)


def test_projection_keeps_divergence_free_fields(translation):
    sim = build_simulation(translation, 2, 2, Scheme.CN, 0.1, DIRECT)
    u = exact_state(translation, sim.spaces, 0.3).u
    np.testing.assert_allclose(sim.project(u), u, atol=1e-12)


def test_crank_nicolson_divergence_does_not_drift(manufactured):
    sim = build_simulation(manufactured, 2, 2, Scheme.CN, 0.05, SolverConfig(tol=1e-6))
    result = run_transient(sim, 0.3, keep_states=True)
    assert len(result.states) == 7
    scale = max(np.abs(s.u).max() for s in result.states)
    for state in result.states:
        assert max_fluid_divergence(sim.spaces, state.u) <= 1e-9 * scale
