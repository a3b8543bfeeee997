"""
Time integration in eliminated form: the displacement never enters the
linear system, only its history does.

Crank-Nicolson solves for the midpoint velocity with tau = dt/2, then
    u^j = 2 u^{j-1/2} - u^{j-1},   eta^j = eta^{j-1} + dt u^{j-1/2}|_s.
BDF3 solves for u^j with tau = 6 dt / 11, then
    eta^j = tau u^j|_s + eta*,     eta* = (6/11)(3 eta^{j-1} - 3/2 eta^{j-2} + 1/3 eta^{j-3}).
Start-up data and every solved velocity go through a mass-orthogonal
projection onto fields that are divergence free on the fluid, so solver
residuals do not pile up in the recovered levels.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from cases import Case
from config import Scheme, SolverConfig
from errors import ConfigError, FactorizationError, FsiHdgError, StepError
from forms import apply_identity_constraints, load_functionals
from krylov import SaddlePointSolver
from spaces import SpaceSet, build_spaces, interpolate_compound
from system import (STANDARD, Operators, SystemBlocks, assemble_coupling, assemble_pressure, assemble_system,
                    build_operators, static_condense)

logger = logging.getLogger(__name__)

BDF3_LEAD = 11.0 / 6.0
DIAGNOSTIC_COLUMNS = ["step", "t", "energy", "max_fluid_divergence", "minres_iters", "residual",
                      "energy_residual"]
# Pressure mass shift keeping the projection saddle system regular on enclosed fluids
PROJECTION_REGULARIZATION = 1e-12


def effective_step(scheme: Scheme, dt: float) -> float:
    """tau multiplying the solid stiffness in the eliminated system."""
    if Scheme(scheme) == Scheme.CN:
        return 0.5 * dt
    return dt / BDF3_LEAD


@dataclass(frozen=True, eq=False)
class DivergenceProjector:
    """
    Mass-orthogonal projection of the broken velocity onto fields with zero
    divergence on every fluid element. Skeleton DOFs pass through.
    """
    n_v: int
    mass: sp.csr_matrix
    lu: Optional[object]

    def __call__(self, u: np.ndarray) -> np.ndarray:
        out = np.array(u, dtype=float)
        if self.lu is None:
            return out
        rhs = np.zeros(self.lu.shape[0])
        rhs[: self.n_v] = self.mass @ out[: self.n_v]
        out[: self.n_v] = self.lu.solve(rhs)[: self.n_v]
        return out


def build_divergence_projector(blocks: SystemBlocks) -> DivergenceProjector:
    """
    Factor [[M, B_f], [B_f^T, -eps M_p]] with M the constrained unit-density
    mass on V and B_f the coupling to the fluid pressures.
    """
    spaces = blocks.spaces
    n_v = spaces.dim_v
    mass = apply_identity_constraints(blocks.operators.mass_matrix(np.ones(spaces.mesh.n_elements))[:n_v, :n_v],
                                      spaces.v_fixed)
    fluid = spaces.mesh.fluid_elements
    if len(fluid) == 0:
        return DivergenceProjector(n_v=n_v, mass=mass, lu=None)
    cols = spaces.p_dofs[fluid].ravel()
    coupling = assemble_coupling(spaces, blocks.operators.coupling)
    coupling = sp.diags((~spaces.v_fixed).astype(float)) @ coupling[:n_v][:, cols]
    p_mass = assemble_pressure(spaces, blocks.operators.pressure_mass)[cols][:, cols]
    kkt = sp.bmat([[mass, coupling], [coupling.T, -PROJECTION_REGULARIZATION * p_mass]], format="csc")
    try:
        lu = splu(kkt)
    except RuntimeError as e:
        raise FactorizationError(f"divergence projection failed: {e}") from e
    logger.debug(f"Divergence projector: {n_v} velocity and {len(cols)} fluid pressure unknowns")
    return DivergenceProjector(n_v=n_v, mass=mass, lu=lu)


@dataclass(frozen=True, eq=False)
class StepState:
    """Compound velocity and solid displacement at t, plus older levels newest first."""
    t: float
    u: np.ndarray
    eta: np.ndarray
    step: int = 0
    history: Tuple[Tuple[np.ndarray, np.ndarray], ...] = ()
    pressure: Optional[np.ndarray] = None

    def levels(self, depth: int):
        """[(u, eta)] for the current level and depth - 1 older ones."""
        return [(self.u, self.eta)] + list(self.history[: depth - 1])


@dataclass
class Simulation:
    """Assembled system and solver for one case, mesh and scheme."""
    case: Case
    spaces: SpaceSet
    blocks: SystemBlocks
    solver: SaddlePointSolver
    scheme: Scheme
    dt: float
    projector: Optional[DivergenceProjector] = None

    def project(self, u: np.ndarray) -> np.ndarray:
        return self.projector(u) if self.projector is not None else u

    @property
    def tau(self) -> float:
        return self.blocks.tau


@dataclass
class StepOutput:
    solved_velocity: np.ndarray  # midpoint for CN, new level for BDF3
    pressure: np.ndarray
    iterations: int
    residual: float
    energy_residual: float = 0.0


def build_simulation(case: Case, n: int, k: int, scheme: Scheme, dt: float,
                     solver_config: Optional[SolverConfig] = None, pressure_form: str = STANDARD,
                     operators: Optional[Operators] = None, spaces: Optional[SpaceSet] = None) -> Simulation:
    if dt <= 0:
        raise ConfigError([f"dt: time step must be positive, got {dt}"])
    if spaces is None:
        mesh = case.build_mesh(n)
        spaces = build_spaces(mesh, k, case.boundary_conditions)
    natural = spaces.mesh.facets_tagged(*case.natural_normal_tags())
    blocks = assemble_system(spaces, case.params, effective_step(scheme, dt), natural_facets=natural,
                             pressure_form=pressure_form, operators=operators)
    solver = SaddlePointSolver(static_condense(blocks), solver_config)
    return Simulation(case=case, spaces=spaces, blocks=blocks, solver=solver, scheme=Scheme(scheme), dt=dt,
                      projector=build_divergence_projector(blocks))


# --- state helpers -----------------------------------------------------------

def exact_state(case: Case, spaces: SpaceSet, t: float, step: int = 0) -> StepState:
    """Interpolated exact velocity and displacement at time t."""
    u = interpolate_compound(spaces, lambda x, y: case.velocity(x, y, t))
    eta = interpolate_compound(spaces, lambda x, y: case.displacement(x, y, t))
    u[spaces.u_fixed] = 0.0
    eta = np.where(spaces.solid_mask & ~spaces.u_fixed, eta, 0.0)
    return StepState(t=t, u=u, eta=eta, step=step)


def energy(blocks: SystemBlocks, u: np.ndarray, eta: np.ndarray) -> float:
    """(rho u, u) + 2 mu_s A_s(eta, eta) + lam_s |div eta|^2 + beta |eta|^2."""
    return float(u @ (blocks.mass_rho @ u) + eta @ (blocks.solid_stiffness @ eta))


def max_fluid_divergence(spaces: SpaceSet, u: np.ndarray) -> float:
    fluid = spaces.mesh.fluid_elements
    if len(fluid) == 0:
        return 0.0
    return float(np.abs(spaces.divergence_at_quadrature(u, fluid)).max())


def init_state(sim: Simulation, bootstrap_cn: bool = False,
               cn_advance: Optional[Callable[[StepState], StepState]] = None) -> StepState:
    """
    Initial state at t = 0; BDF3 additionally needs levels at dt and 2 dt.

    Exact data are interpolated and projected to divergence free fluid
    velocities when the case has them; otherwise the flow starts at rest and
    BDF3 may only start after two CN steps.
    """
    case, spaces = sim.case, sim.spaces

    def start(m):
        level = exact_state(case, spaces, m * sim.dt, step=m)
        return replace(level, u=sim.project(level.u))

    if case.has_exact:
        state = start(0)
    else:
        zero = np.zeros(spaces.dim_u)
        state = StepState(t=0.0, u=zero, eta=zero.copy())
    if sim.scheme == Scheme.CN:
        return state

    if case.has_exact:
        levels = [state] + [start(m) for m in (1, 2)]
    elif bootstrap_cn and cn_advance is not None:
        logger.warning("No closed-form solution, starting BDF3 with two Crank-Nicolson steps")
        levels = [state]
        for _ in range(2):
            levels.append(cn_advance(levels[-1]))
    else:
        raise ConfigError(["bootstrap_cn: BDF3 needs exact start-up data or the CN bootstrap"])
    newest = levels[-1]
    return replace(newest, history=tuple((s.u, s.eta) for s in reversed(levels[:-1])))


def cn_rhs(state: StepState, sim: Simulation) -> np.ndarray:
    """[F | 0] with F = (1/tau) M_rho u^{j-1} + loads(t_{j-1/2}) - K_s eta^{j-1}."""
    blocks, spaces = sim.blocks, sim.spaces
    loads = load_functionals(spaces, sim.case, state.t + 0.5 * sim.dt)
    f = blocks.mass_rho @ state.u / sim.tau + loads - blocks.solid_stiffness @ state.eta
    f[spaces.u_fixed] = 0.0
    return np.concatenate([f, np.zeros(spaces.dim_q)])


def bdf3_rhs(state: StepState, sim: Simulation) -> Tuple[np.ndarray, np.ndarray]:
    """Right-hand side at t_j and the displacement history combination eta*."""
    blocks, spaces = sim.blocks, sim.spaces
    (u1, e1), (u2, e2), (u3, e3) = state.levels(3)
    eta_star = (3.0 * e1 - 1.5 * e2 + e3 / 3.0) / BDF3_LEAD
    u_hist = 3.0 * u1 - 1.5 * u2 + u3 / 3.0
    loads = load_functionals(spaces, sim.case, state.t + sim.dt)
    f = loads + blocks.mass_rho @ u_hist / sim.dt - blocks.solid_stiffness @ eta_star
    f[spaces.u_fixed] = 0.0
    return np.concatenate([f, np.zeros(spaces.dim_q)]), eta_star


def _solve(sim: Simulation, rhs: np.ndarray, step: int):
    try:
        return sim.solver.solve(rhs)
    except FsiHdgError as e:
        raise StepError(step, e) from e


def cn_step(state: StepState, sim: Simulation) -> Tuple[StepState, StepOutput]:
    """One Crank-Nicolson step through the midpoint system."""
    spaces, blocks = sim.spaces, sim.blocks
    result = _solve(sim, cn_rhs(state, sim), state.step + 1)
    mid = sim.project(result.x[: spaces.dim_u])
    p = result.x[spaces.dim_u:]
    u_new = 2.0 * mid - state.u
    eta_new = state.eta + sim.dt * np.where(spaces.solid_mask, mid, 0.0)

    external = load_functionals(spaces, sim.case, state.t + 0.5 * sim.dt)
    e_old, e_new = energy(blocks, state.u, state.eta), energy(blocks, u_new, eta_new)
    balance = 0.5 * (e_new - e_old) / sim.dt + 2.0 * blocks.params.mu_f * (mid @ (blocks.fluid_diffusion @ mid)) \
        - external @ mid
    new_state = StepState(t=state.t + sim.dt, u=u_new, eta=eta_new, step=state.step + 1, pressure=p)
    return new_state, StepOutput(mid, p, result.iterations, result.residual, float(balance))


def bdf3_step(state: StepState, sim: Simulation) -> Tuple[StepState, StepOutput]:
    """One BDF3 step; needs two older levels in state.history."""
    if len(state.history) < 2:
        raise ConfigError(["bdf3: state carries fewer than three levels"])
    spaces = sim.spaces
    rhs, eta_star = bdf3_rhs(state, sim)
    result = _solve(sim, rhs, state.step + 1)
    u_new = sim.project(result.x[: spaces.dim_u])
    p = result.x[spaces.dim_u:]
    eta_new = sim.tau * np.where(spaces.solid_mask, u_new, 0.0) + eta_star
    history = ((state.u, state.eta),) + state.history[:1]
    new_state = StepState(t=state.t + sim.dt, u=u_new, eta=eta_new, step=state.step + 1, history=history,
                          pressure=p)
    return new_state, StepOutput(u_new, p, result.iterations, result.residual)


@dataclass
class TransientResult:
    final: StepState
    diagnostics: pd.DataFrame
    states: List[StepState] = field(default_factory=list)
    start_step: int = 0

    @property
    def iterations(self) -> List[int]:
        """Solver iterations of the time steps, start-up levels excluded."""
        stepped = self.diagnostics["step"] > self.start_step
        return self.diagnostics.loc[stepped, "minres_iters"].astype(int).tolist()

    @property
    def average_iterations(self) -> float:
        its = self.iterations
        return float(np.mean(its)) if its else 0.0


def step_count(final_time: float, dt: float) -> int:
    n = int(round(final_time / dt))
    if abs(n * dt - final_time) > 1e-9 * max(final_time, 1.0):
        logger.warning(f"T={final_time} is not a multiple of dt={dt}; running {n} steps to t={n * dt}")
    return n


def run_transient(sim: Simulation, final_time: float, bootstrap_cn: bool = False, keep_states: bool = False,
                  cn_sim: Optional[Simulation] = None) -> TransientResult:
    """
    March from t = 0 to final_time recording energy, fluid divergence and
    solver effort at every step.
    """
    n_steps = step_count(final_time, sim.dt)
    spaces, blocks = sim.spaces, sim.blocks

    helpers = [cn_sim] if cn_sim is not None else []

    def cn_advance(s):
        if not helpers:
            helpers.append(build_simulation(sim.case, 0, spaces.k, Scheme.CN, sim.dt, sim.solver.config,
                                            operators=blocks.operators, spaces=spaces))
        return cn_step(s, helpers[0])[0]

    state = init_state(sim, bootstrap_cn, cn_advance)
    start = [StepState(t=state.t - m * sim.dt, u=u, eta=eta, step=state.step - m)
             for m, (u, eta) in reversed(list(enumerate(state.history, start=1)))] + [state]
    rows = [[s.step, s.t, energy(blocks, s.u, s.eta), max_fluid_divergence(spaces, s.u), 0, 0.0, 0.0]
            for s in start]
    states = list(start) if keep_states else []
    advance = cn_step if sim.scheme == Scheme.CN else bdf3_step

    while state.step < n_steps:
        state, out = advance(state, sim)
        rows.append([state.step, state.t, energy(blocks, state.u, state.eta),
                     max_fluid_divergence(spaces, state.u), out.iterations, out.residual, out.energy_residual])
        if keep_states:
            states.append(state)
        if state.step % 10 == 0 or state.step == n_steps:
            logger.info(f"step {state.step}/{n_steps} t={state.t:.4e} iterations={out.iterations}")

    diagnostics = pd.DataFrame(rows, columns=DIAGNOSTIC_COLUMNS)
    return TransientResult(final=state, diagnostics=diagnostics, states=states, start_step=start[-1].step)
