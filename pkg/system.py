"""
Global saddle-point system and its static condensation.

    [ A   B ] [u]   [F]
    [ B' -M ] [p] = [G]

A = (1/tau) M_rho + 2 mu A_hdg + tau beta M_solid, with tau the effective
step of the time scheme and mu the merged viscosity. Fixed velocity DOFs
are removed by identity rows and columns.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from errors import AssemblyError, CondensationError
from forms import (Coefficients, MaterialParams, apply_identity_constraints, local_div_coupling, local_div_div,
                   local_hdg_diffusion, local_masses, merged_coefficients)
from mesh import Region
from spaces import SpaceSet

logger = logging.getLogger(__name__)

STANDARD = "standard"
FLUID_ONLY = "fluid_only"
PRESSURE_FORMS = (STANDARD, FLUID_ONLY)

# Largest accepted condition number of a local interior block
MAX_LOCAL_CONDITION = 1e14


def _embed_velocity(spaces: SpaceSet, local: np.ndarray) -> np.ndarray:
    """Pad (nt, nb, nb) blocks to the compound local size."""
    if local.shape[1] == spaces.n_local_u:
        return local
    nb, nu = spaces.n_local_v, spaces.n_local_u
    out = np.zeros((local.shape[0], nu, nu))
    out[:, :nb, :nb] = local
    return out


def assemble_velocity(spaces: SpaceSet, local: np.ndarray, weights: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Sum weighted element blocks into the compound velocity matrix."""
    local = _embed_velocity(spaces, local)
    if weights is not None:
        local = weights[:, None, None] * local
    dofs = spaces.u_dofs
    n = dofs.shape[1]
    rows = np.repeat(dofs, n, axis=1).ravel()
    cols = np.tile(dofs, (1, n)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(spaces.dim_u, spaces.dim_u))


def assemble_coupling(spaces: SpaceSet, local: np.ndarray) -> sp.csr_matrix:
    nb, npl = local.shape[1], local.shape[2]
    rows = np.repeat(spaces.v_dofs, npl, axis=1).ravel()
    cols = np.tile(spaces.p_dofs, (1, nb)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(spaces.dim_u, spaces.dim_q))


def assemble_pressure(spaces: SpaceSet, local: np.ndarray) -> sp.csr_matrix:
    dofs = spaces.p_dofs
    n = dofs.shape[1]
    rows = np.repeat(dofs, n, axis=1).ravel()
    cols = np.tile(dofs, (1, n)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(spaces.dim_q, spaces.dim_q))


@dataclass(frozen=True, eq=False)
class Operators:
    """Coefficient-free element blocks and their region-wise global sums."""
    spaces: SpaceSet
    diffusion: np.ndarray   # (nt, nu, nu)
    mass: np.ndarray        # (nt, nb, nb)
    div_div: np.ndarray     # (nt, nb, nb)
    coupling: np.ndarray    # (nt, nb, npl)
    pressure_mass: np.ndarray  # (nt, npl, npl)

    def region_weights(self, region: Region) -> np.ndarray:
        return (self.spaces.mesh.regions == region).astype(float)

    def diffusion_matrix(self, region: Region) -> sp.csr_matrix:
        return assemble_velocity(self.spaces, self.diffusion, self.region_weights(region))

    def mass_matrix(self, weights: np.ndarray) -> sp.csr_matrix:
        return assemble_velocity(self.spaces, self.mass, weights)

    def div_div_matrix(self, region: Region) -> sp.csr_matrix:
        return assemble_velocity(self.spaces, self.div_div, self.region_weights(region))


def build_operators(spaces: SpaceSet, alpha: float) -> Operators:
    masses = local_masses(spaces)
    ops = Operators(
        spaces=spaces,
        diffusion=local_hdg_diffusion(spaces, alpha).total,
        mass=masses.velocity,
        div_div=local_div_div(spaces),
        coupling=local_div_coupling(spaces),
        pressure_mass=masses.pressure,
    )
    logger.debug(f"Element operators ready for {spaces.mesh.n_elements} elements, k={spaces.k}")
    return ops


@dataclass(frozen=True, eq=False)
class SystemBlocks:
    """Constrained global blocks plus the unconstrained element data they came from."""
    spaces: SpaceSet
    params: MaterialParams
    coefficients: Coefficients
    pressure_form: str
    operators: Operators
    A: sp.csr_matrix
    B: sp.csr_matrix
    M: sp.csr_matrix
    local_a: np.ndarray     # (nt, nu, nu)
    local_b: np.ndarray     # (nt, nu, npl)
    local_m: np.ndarray     # (nt, npl, npl)
    mass_rho: sp.csr_matrix           # unconstrained (rho u, v)
    solid_stiffness: sp.csr_matrix    # 2 mu_s A_s + lam_s (div, div)_s + beta (., .)_s
    fluid_diffusion: sp.csr_matrix    # A_f
    natural_facets: np.ndarray        # boundary facets with traction-driven normal component

    @property
    def tau(self) -> float:
        return self.coefficients.tau

    @property
    def n_u(self) -> int:
        return self.A.shape[0]

    @property
    def n_p(self) -> int:
        return self.M.shape[0]

    @property
    def matrix(self) -> sp.csr_matrix:
        return sp.bmat([[self.A, self.B], [self.B.T, -self.M]], format="csr")

    @property
    def active_pressure(self) -> np.ndarray:
        """Elements carrying a genuine pressure unknown."""
        if self.pressure_form == FLUID_ONLY:
            return self.spaces.mesh.regions == Region.FLUID
        return np.ones(self.spaces.mesh.n_elements, dtype=bool)


def assemble_system(spaces: SpaceSet, params: MaterialParams, tau: float,
                    natural_facets: Sequence[int] = (), pressure_form: str = STANDARD,
                    operators: Optional[Operators] = None) -> SystemBlocks:
    """
    Assemble the saddle-point blocks for effective step tau.

    STANDARD keeps a pressure on every element, with gamma = 1/(tau lam_s) on
    the solid. FLUID_ONLY moves the Lame term into A and pins the solid
    pressure to zero through a unit diagonal; it is selected automatically
    when lam_s = 0.
    """
    if tau <= 0:
        raise AssemblyError(f"effective step must be positive, got {tau}")
    if pressure_form not in PRESSURE_FORMS:
        raise AssemblyError(f"unknown pressure form '{pressure_form}'")
    if pressure_form == STANDARD and params.lam_s == 0:
        logger.info("lam_s = 0: switching to the fluid-only pressure form")
        pressure_form = FLUID_ONLY
    if spaces.u_fixed.all():
        raise AssemblyError("every velocity DOF is constrained")

    mesh = spaces.mesh
    ops = operators or build_operators(spaces, params.alpha)
    coef = merged_coefficients(mesh, params, tau)
    solid = mesh.regions == Region.SOLID
    nb, nu, npl = spaces.n_local_v, spaces.n_local_u, spaces.n_local_p

    mass_weight = coef.rho / tau + tau * coef.beta
    local_a = 2.0 * coef.mu[:, None, None] * ops.diffusion
    local_a[:, :nb, :nb] += mass_weight[:, None, None] * ops.mass
    local_b = np.zeros((mesh.n_elements, nu, npl))
    local_b[:, :nb, :] = ops.coupling
    if pressure_form == FLUID_ONLY:
        local_a[solid, :nb, :nb] += tau * params.lam_s * ops.div_div[solid]
        local_b[solid] = 0.0
        local_m = np.zeros((mesh.n_elements, npl, npl))
        local_m[solid] = np.eye(npl)
    else:
        local_m = coef.gamma[:, None, None] * ops.pressure_mass

    a_full = assemble_velocity(spaces, local_a)
    diag = a_full.diagonal()
    free = ~spaces.u_fixed
    if np.any(diag[free] <= 0):
        raise AssemblyError(f"non-positive diagonal at {np.flatnonzero(free & (diag <= 0))[:10].tolist()}")

    A = apply_identity_constraints(a_full, spaces.u_fixed)
    keep = sp.diags(free.astype(float))
    B = sp.csr_matrix(keep @ assemble_coupling(spaces, local_b[:, :nb, :]))
    M = assemble_pressure(spaces, local_m)

    solid_w = solid.astype(float)
    stiffness = (assemble_velocity(spaces, ops.diffusion, 2.0 * params.mu_s * solid_w)
                 + assemble_velocity(spaces, ops.div_div, params.lam_s * solid_w)
                 + assemble_velocity(spaces, ops.mass, coef.beta))

    blocks = SystemBlocks(
        spaces=spaces, params=params, coefficients=coef, pressure_form=pressure_form, operators=ops,
        A=A, B=B, M=M, local_a=local_a, local_b=local_b, local_m=local_m,
        mass_rho=assemble_velocity(spaces, ops.mass, coef.rho),
        solid_stiffness=sp.csr_matrix(stiffness),
        fluid_diffusion=ops.diffusion_matrix(Region.FLUID),
        natural_facets=np.asarray(natural_facets, dtype=int),
    )
    logger.info(f"Assembled system: N_u={blocks.n_u}, N_p={blocks.n_p}, tau={tau:.3e}, form={pressure_form}")
    return blocks


@dataclass(frozen=True, eq=False)
class Condensation:
    """
    Reduced skeleton system and the element data needed to undo it.

    Reduced unknowns: facet normal DOFs, tangential facet DOFs, then one
    cell-average pressure per element.
    """
    blocks: SystemBlocks
    A: sp.csr_matrix
    B: sp.csr_matrix
    M: sp.csr_matrix
    identity: bool
    inv_kll: Optional[np.ndarray] = None   # (nt, nl, nl)
    k_lg: Optional[np.ndarray] = None      # (nt, nl, ng)
    g_full: Optional[np.ndarray] = None    # (nt, ng) indices into the full [u | p] vector
    l_full: Optional[np.ndarray] = None    # (nt, nl)
    g_reduced: Optional[np.ndarray] = None  # (nt, ng) indices into the reduced vector

    @property
    def n_u(self) -> int:
        return self.A.shape[0]

    @property
    def n_p(self) -> int:
        return self.M.shape[0]

    @property
    def matrix(self) -> sp.csr_matrix:
        return sp.bmat([[self.A, self.B], [self.B.T, -self.M]], format="csr")

    @property
    def velocity_fixed(self) -> np.ndarray:
        spaces = self.blocks.spaces
        return spaces.u_fixed[spaces.skeleton_dofs]

    def reduce_rhs(self, rhs: np.ndarray) -> np.ndarray:
        """Full right-hand side [F | G] to the reduced one."""
        if self.identity:
            return rhs.copy()
        out = np.zeros(self.n_u + self.n_p)
        spaces = self.blocks.spaces
        out[: self.n_u] = rhs[spaces.skeleton_dofs]
        out[self.n_u:] = rhs[spaces.dim_u + spaces.p_dofs[:, 0]]
        f_l = rhs[self.l_full]
        correction = np.einsum("elg,elm,em->eg", self.k_lg, self.inv_kll, f_l)
        np.add.at(out, self.g_reduced.ravel(), -correction.ravel())
        out[: self.n_u][self.velocity_fixed] = 0.0
        return out

    def recover(self, reduced: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        """Full solution [u | p] from the reduced solution and the full right-hand side."""
        if self.identity:
            return reduced.copy()
        spaces = self.blocks.spaces
        out = np.zeros(spaces.dim_u + spaces.dim_q)
        out[spaces.skeleton_dofs] = reduced[: self.n_u]
        out[spaces.dim_u + spaces.p_dofs[:, 0]] = reduced[self.n_u:]
        x_g = reduced[self.g_reduced]
        f_l = rhs[self.l_full] - np.einsum("elg,eg->el", self.k_lg, x_g)
        out[self.l_full] = np.einsum("elm,em->el", self.inv_kll, f_l)
        return out


def _local_index_sets(spaces: SpaceSet):
    k, nb, nu, npl = spaces.k, spaces.n_local_v, spaces.n_local_u, spaces.n_local_p
    nfd = 3 * (k + 1)
    g = np.concatenate([np.arange(nfd), np.arange(nb, nu), [nu]])
    l_ = np.concatenate([np.arange(nfd, nb), nu + np.arange(1, npl)])
    return g, l_


def static_condense(blocks: SystemBlocks) -> Condensation:
    """
    Eliminate interior velocity and higher-order pressure DOFs element by element.

    For k = 1 there is nothing to eliminate and the map is the identity.
    """
    spaces = blocks.spaces
    if spaces.k == 1:
        return Condensation(blocks=blocks, A=blocks.A, B=blocks.B, M=blocks.M, identity=True)

    mesh = spaces.mesh
    nt, nu, npl = mesh.n_elements, spaces.n_local_u, spaces.n_local_p
    k_e = np.zeros((nt, nu + npl, nu + npl))
    k_e[:, :nu, :nu] = blocks.local_a
    k_e[:, :nu, nu:] = blocks.local_b
    k_e[:, nu:, :nu] = np.swapaxes(blocks.local_b, 1, 2)
    k_e[:, nu:, nu:] = -blocks.local_m

    g, l_ = _local_index_sets(spaces)
    k_ll = k_e[:, l_][:, :, l_]
    k_lg = k_e[:, l_][:, :, g]
    k_gg = k_e[:, g][:, :, g]
    cond = np.linalg.cond(k_ll)
    if not np.all(np.isfinite(cond)) or cond.max() > MAX_LOCAL_CONDITION:
        bad = int(np.argmax(np.where(np.isfinite(cond), cond, np.inf)))
        raise CondensationError(f"interior block of element {bad} is singular (cond={cond[bad]:.3e})")
    try:
        inv_kll = np.linalg.inv(k_ll)
    except np.linalg.LinAlgError as e:
        raise CondensationError(f"interior block factorization failed: {e}") from e

    schur = k_gg - np.einsum("elg,elm,emh->egh", k_lg, inv_kll, k_lg)
    schur = 0.5 * (schur + np.swapaxes(schur, 1, 2))

    full_u = np.hstack([spaces.u_dofs, spaces.dim_u + spaces.p_dofs])
    g_full, l_full = full_u[:, g], full_u[:, l_]
    nfd = 3 * (spaces.k + 1)
    ns = spaces.n_skeleton
    n_normal = (spaces.k + 1) * mesh.n_facets
    g_reduced = np.hstack([
        spaces.v_dofs[:, :nfd],
        n_normal + spaces.hat_dofs,
        ns + np.arange(nt)[:, None],
    ])

    ng = len(g)
    rows = np.repeat(g_reduced, ng, axis=1).ravel()
    cols = np.tile(g_reduced, (1, ng)).ravel()
    reduced = sp.csr_matrix((schur.ravel(), (rows, cols)), shape=(ns + nt, ns + nt))

    fixed = spaces.u_fixed[spaces.skeleton_dofs]
    A = apply_identity_constraints(reduced[:ns, :ns], fixed)
    B = sp.csr_matrix(sp.diags((~fixed).astype(float)) @ reduced[:ns, ns:])
    M = sp.csr_matrix(-reduced[ns:, ns:])
    logger.info(f"Condensed system: {blocks.n_u + blocks.n_p} -> {ns + nt} unknowns")
    return Condensation(blocks=blocks, A=A, B=B, M=M, identity=False, inv_kll=inv_kll, k_lg=k_lg,
                        g_full=g_full, l_full=l_full, g_reduced=g_reduced)


def export_coo(matrix: sp.spmatrix, path: Path) -> None:
    """Write 'row col value' lines, 17 significant digits."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w", encoding="utf-8") as f:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{r} {c} {v:.17g}\n")
