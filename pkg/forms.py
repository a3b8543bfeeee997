"""
Element and facet contributions of every form in the scheme.

Local matrices act on the compound element vector [BDM basis | tangential
facet basis], with the facet block ordered local facet first, then degree.
All routines are vectorised over elements; the global assembly lives in
system.py.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, Field

from mesh import Mesh, Region
from quadrature import facet_degree, segment_rule, shifted_legendre
from spaces import SpaceSet

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 8.0


class MaterialParams(BaseModel):
    """Material coefficients of both regions plus the HDG stabilisation."""
    rho_f: float = Field(1.0, gt=0, description="Fluid density.")
    mu_f: float = Field(1.0, gt=0, description="Fluid dynamic viscosity.")
    rho_s: float = Field(1.0, gt=0, description="Solid density.")
    mu_s: float = Field(1.0, gt=0, description="Solid shear modulus.")
    lam_s: float = Field(1.0, ge=0, description="Solid Lame parameter.")
    beta_s: float = Field(0.0, ge=0, description="Linear spring coefficient on the solid.")
    alpha: float = Field(DEFAULT_ALPHA, gt=0, description="Penalty factor of the tangential jump term.")

    model_config = {"extra": "forbid", "frozen": True}


@dataclass(frozen=True, eq=False)
class Coefficients:
    """Piecewise constant coefficients per element for one effective step tau."""
    rho: np.ndarray    # density
    mu: np.ndarray     # mu_f on fluid, tau * mu_s on solid
    gamma: np.ndarray  # 0 on fluid, 1 / (tau * lam_s) on solid
    beta: np.ndarray   # spring coefficient, 0 on fluid
    tau: float


def merged_coefficients(mesh: Mesh, params: MaterialParams, tau: float) -> Coefficients:
    solid = mesh.regions == Region.SOLID
    rho = np.where(solid, params.rho_s, params.rho_f)
    mu = np.where(solid, tau * params.mu_s, params.mu_f)
    gamma = np.zeros(mesh.n_elements)
    if params.lam_s > 0:
        gamma[solid] = 1.0 / (tau * params.lam_s)
    beta = np.where(solid, params.beta_s, 0.0)
    return Coefficients(rho=rho, mu=mu, gamma=gamma, beta=beta, tau=tau)


@dataclass(frozen=True, eq=False)
class LocalMatrices:
    """Parts of the local HDG diffusion matrix, each (nt, nu, nu)."""
    volume: np.ndarray
    consistency: np.ndarray
    penalty: np.ndarray

    @property
    def total(self) -> np.ndarray:
        a = self.volume + self.consistency + np.swapaxes(self.consistency, 1, 2) + self.penalty
        return 0.5 * (a + np.swapaxes(a, 1, 2))


def _sym(grad: np.ndarray) -> np.ndarray:
    """Symmetric part over the (component, derivative) axes of a basis gradient."""
    axes = list(range(grad.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return 0.5 * (grad + np.transpose(grad, axes))


def facet_jump_basis(spaces: SpaceSet) -> np.ndarray:
    """
    Tangential component of v - v_hat for every local compound basis
    function at facet quadrature points, shape (nt, 3, nq, nu).
    """
    fd = spaces.facet
    k, nb = spaces.k, spaces.n_local_v
    nt, nq = fd.phi.shape[0], fd.phi.shape[2]
    jump = np.zeros((nt, 3, nq, spaces.n_local_u))
    jump[..., :nb] = np.einsum("efqil,efi->efql", fd.phi, fd.tangent)
    for f in range(3):
        for i in range(k):
            jump[:, f, :, nb + f * k + i] = -fd.legendre[:, i]
    return jump


def local_hdg_diffusion(spaces: SpaceSet, alpha: float = DEFAULT_ALPHA) -> LocalMatrices:
    """
    Element contributions of the projected-jump HDG operator.

    Volume D(u):D(v), the two consistency terms with the tangential
    traction t.D(u)n, and the penalty (alpha k^2 / h) on the facet-wise
    L2 projection of tang(v - v_hat) onto degree k - 1.
    """
    k, nb, nu = spaces.k, spaces.n_local_v, spaces.n_local_u
    vol, fd = spaces.volume, spaces.facet
    nt = spaces.mesh.n_elements

    dv = _sym(vol.grad)
    volume = np.zeros((nt, nu, nu))
    volume[:, :nb, :nb] = np.einsum("eq,eqijl,eqijm->elm", vol.weights, dv, dv)

    df = _sym(fd.grad)
    traction = np.zeros(fd.phi.shape[:3] + (nu,))
    traction[..., :nb] = np.einsum("efi,efqijl,efj->efql", fd.tangent, df, fd.normal)
    jump = facet_jump_basis(spaces)
    consistency = -np.einsum("efq,efqa,efqb->eab", fd.weights, jump, traction)

    moments = np.einsum("efq,qi,efqa->efia", fd.weights, fd.legendre[:, :k], jump)
    factor = (2 * np.arange(k) + 1)[None, None, :] / fd.length[..., None]
    penalty = (alpha * k ** 2 / spaces.mesh.h) * np.einsum("efi,efia,efib->eab", factor, moments, moments)
    return LocalMatrices(volume=volume, consistency=consistency, penalty=penalty)


def local_div_coupling(spaces: SpaceSet) -> np.ndarray:
    """-(q, div v) per element, shape (nt, nb, npl)."""
    vol = spaces.volume
    return -np.einsum("eq,eql,eqm->elm", vol.weights, vol.div, vol.pressure)


def local_div_div(spaces: SpaceSet) -> np.ndarray:
    """(div u, div v) per element, shape (nt, nb, nb)."""
    vol = spaces.volume
    return np.einsum("eq,eql,eqm->elm", vol.weights, vol.div, vol.div)


@dataclass(frozen=True, eq=False)
class LocalMasses:
    """Weighted element masses: velocity (nt, nb, nb) and pressure (nt, npl, npl)."""
    velocity: np.ndarray
    pressure: np.ndarray
    rho: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray


def local_masses(spaces: SpaceSet, rho: Optional[np.ndarray] = None, gamma: Optional[np.ndarray] = None,
                 beta: Optional[np.ndarray] = None) -> LocalMasses:
    """Unit masses plus their rho, gamma and beta weighted copies."""
    vol = spaces.volume
    nt = spaces.mesh.n_elements
    mv = np.einsum("eq,eqil,eqim->elm", vol.weights, vol.phi, vol.phi)
    mp = np.einsum("eq,eql,eqm->elm", vol.weights, vol.pressure, vol.pressure)
    rho = np.ones(nt) if rho is None else np.asarray(rho, dtype=float)
    gamma = np.zeros(nt) if gamma is None else np.asarray(gamma, dtype=float)
    beta = np.zeros(nt) if beta is None else np.asarray(beta, dtype=float)
    return LocalMasses(
        velocity=mv,
        pressure=mp,
        rho=rho[:, None, None] * mv,
        gamma=gamma[:, None, None] * mp,
        beta=beta[:, None, None] * mv,
    )


def pressure_jump_matrix(mesh: Mesh, rho: np.ndarray, gamma: np.ndarray, tau: float,
                         boundary_facets: Sequence[int] = (),
                         active: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """
    Jump form on piecewise constant pressures.

    (gamma p, q) + tau sum_F |F| ({rho^-1} / h) [p][q] with
    {rho^-1} = (rho+ + rho-) / (rho+ rho-), plus |F| / (rho h) p q on the
    listed boundary facets. Elements outside `active` get no contribution.
    """
    nt = mesh.n_elements
    active = np.ones(nt, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    diag = np.where(active, gamma * mesh.areas, 0.0)

    fe = mesh.facet_elements
    inner = np.flatnonzero(fe[:, 1] >= 0)
    e0, e1 = fe[inner, 0], fe[inner, 1]
    keep = active[e0] & active[e1]
    inner, e0, e1 = inner[keep], e0[keep], e1[keep]
    r0, r1 = rho[e0], rho[e1]
    w = tau * (r0 + r1) / (r0 * r1) / mesh.h * mesh.facet_lengths[inner]

    boundary = np.asarray(boundary_facets, dtype=int)
    owner = fe[boundary, 0]
    wb = np.where(active[owner], mesh.facet_lengths[boundary] / (rho[owner] * mesh.h), 0.0)
    np.add.at(diag, owner, wb)

    rows = np.concatenate([np.arange(nt), e0, e1, e0, e1])
    cols = np.concatenate([np.arange(nt), e0, e1, e1, e0])
    vals = np.concatenate([diag, w, w, -w, -w])
    return sp.csr_matrix((vals, (rows, cols)), shape=(nt, nt))


def _p1_gradients(mesh: Mesh) -> np.ndarray:
    p = mesh.vertices[mesh.elements]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
    inv = np.linalg.inv(jac)
    return np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)   # (nt, 3, 2)


def auxiliary_cg_matrix(spaces: SpaceSet, tau: float, mu: np.ndarray) -> sp.csr_matrix:
    """
    (1/tau)(u, v) + 2 (mu D(u), D(v)) on continuous linear vector fields.

    DOF 2 * vertex + component. Constrained rows and columns are replaced
    by the identity.
    """
    mesh = spaces.mesh
    area = mesh.areas
    g = _p1_gradients(mesh)
    nt = mesh.n_elements

    mass = (area[:, None, None] / 12.0) * (np.ones((3, 3)) + np.eye(3))
    gg = np.einsum("eai,ebi->eab", g, g)
    eye2 = np.eye(2)
    # D(l_a e_c) : D(l_b e_d) = (delta_cd g_a.g_b + g_a[d] g_b[c]) / 2
    dd = 0.5 * (gg[:, :, None, :, None] * eye2[None, None, :, None, :]
                + np.einsum("ead,ebc->eacbd", g, g))
    local = (1.0 / tau) * mass[:, :, None, :, None] * eye2[None, None, :, None, :] \
        + 2.0 * (mu * area)[:, None, None, None, None] * dd
    local = local.reshape(nt, 6, 6)

    dofs = (2 * mesh.elements[:, :, None] + np.arange(2)).reshape(nt, 6)
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    matrix = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(spaces.dim_cg, spaces.dim_cg))
    return apply_identity_constraints(matrix, spaces.cg_fixed)


def apply_identity_constraints(matrix: sp.spmatrix, fixed: np.ndarray) -> sp.csr_matrix:
    """Zero rows and columns of fixed DOFs and put 1 on their diagonal."""
    keep = sp.diags((~fixed).astype(float))
    out = keep @ matrix @ keep + sp.diags(fixed.astype(float))
    return sp.csr_matrix(out)


def transfer_matrix(spaces: SpaceSet) -> sp.csr_matrix:
    """
    Moment-matching map from the CG space to skeleton velocity DOFs.

    Output rows are [facet normal moments | tangential facet coefficients],
    the skeleton part of the compound numbering. Rows of constrained
    skeleton DOFs and columns of constrained CG DOFs are zero.
    """
    mesh, k = spaces.mesh, spaces.k
    rule = segment_rule(facet_degree(k))
    s = rule.points[:, 0]
    leg = shifted_legendre(s, k)
    hat = np.column_stack([1.0 - s, s])                        # P1 traces of facet ends
    moments = np.einsum("q,qa,qi->ai", rule.weights, hat, leg)  # (2, k + 1)

    nf = mesh.n_facets
    normal, tangent = mesh.facet_normals, mesh.facet_tangents
    rows, cols, vals = [], [], []
    for a in range(2):
        vert = mesh.facets[:, a]
        for c in range(2):
            col = 2 * vert + c
            for i in range(k + 1):
                rows.append(np.arange(nf) * (k + 1) + i)
                cols.append(col)
                vals.append(moments[a, i] * normal[:, c])
            for i in range(k):
                rows.append((k + 1) * nf + np.arange(nf) * k + i)
                cols.append(col)
                vals.append((2 * i + 1) * moments[a, i] * tangent[:, c])
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    skeleton_fixed = spaces.u_fixed[spaces.skeleton_dofs]
    keep = ~skeleton_fixed[rows] & ~spaces.cg_fixed[cols]
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(spaces.n_skeleton, spaces.dim_cg))


def facet_traction_load(spaces: SpaceSet, facets: np.ndarray, traction) -> np.ndarray:
    """
    Compound load <g, (v.n)n + tang(v_hat)> over the given facets.

    traction(x, y) returns g with shape (2, len(facets), nq) at facet
    quadrature points.
    """
    mesh, k = spaces.mesh, spaces.k
    out = np.zeros(spaces.dim_u)
    facets = np.asarray(facets, dtype=int)
    if len(facets) == 0:
        return out
    rule = segment_rule(facet_degree(k))
    s = rule.points[:, 0]
    leg = shifted_legendre(s, k)
    a = mesh.vertices[mesh.facets[facets, 0]]
    b = mesh.vertices[mesh.facets[facets, 1]]
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    g = np.asarray(traction(pts[..., 0], pts[..., 1]))
    n, t = mesh.facet_normals[facets], mesh.facet_tangents[facets]
    gn = g[0] * n[:, 0, None] + g[1] * n[:, 1, None]
    gt = g[0] * t[:, 0, None] + g[1] * t[:, 1, None]
    length = mesh.facet_lengths[facets][:, None]

    normal_load = length * np.einsum("q,fq,qi->fi", rule.weights, gn, leg) * (2 * np.arange(k + 1) + 1)
    tangential_load = length * np.einsum("q,fq,qi->fi", rule.weights, gt, leg[:, :k])
    np.add.at(out, (facets[:, None] * (k + 1) + np.arange(k + 1)).ravel(), normal_load.ravel())
    np.add.at(out, (spaces.dim_v + facets[:, None] * k + np.arange(k)).ravel(), tangential_load.ravel())
    return out


def volume_load(spaces: SpaceSet, forcing) -> np.ndarray:
    """(f, v) with forcing(x, y, region) -> (2, m, nq) on elements of that region."""
    vol = spaces.volume
    out = np.zeros(spaces.dim_u)
    for region in (Region.FLUID, Region.SOLID):
        elems = np.flatnonzero(spaces.mesh.regions == region)
        if len(elems) == 0:
            continue
        pts = vol.points[elems]
        f = forcing(pts[..., 0], pts[..., 1], region)
        if f is None:
            continue
        f = np.asarray(f)
        local = np.einsum("eq,ieq,eqil->el", vol.weights[elems], f, vol.phi[elems])
        np.add.at(out, spaces.v_dofs[elems].ravel(), local.ravel())
    return out


def load_functionals(spaces: SpaceSet, case, t: float) -> np.ndarray:
    """
    Right-hand side at time t: volume forcing, interface traction mismatch
    and boundary tractions of every tag whose normal condition is natural.
    """
    mesh = spaces.mesh
    out = volume_load(spaces, lambda x, y, region: case.forcing(x, y, t, region))

    interface = mesh.interface_facets
    if len(interface) and case.has_interface_traction:
        fluid_side = np.where(mesh.regions[mesh.facet_elements[interface, 0]] == Region.FLUID,
                              mesh.facet_elements[interface, 0], mesh.facet_elements[interface, 1])
        local = np.argmax(mesh.element_facets[fluid_side] == interface[:, None], axis=1)
        n_fluid = mesh.facet_normals[interface] * mesh.element_signs[fluid_side, local][:, None]
        out += facet_traction_load(
            spaces, interface,
            lambda x, y: case.interface_traction(x, y, t, n_fluid[:, None, :]),
        )

    for tag, facets in mesh.boundary_tags.items():
        normals = mesh.outward_normals(facets)
        g = case.boundary_traction(tag, t)
        if g is None:
            continue
        out += facet_traction_load(spaces, facets, lambda x, y, g=g, n=normals: g(x, y, n[:, None, :]))
    out[spaces.u_fixed] = 0.0
    return out
