"""
Discrete spaces on a triangular mesh.

- V: degree-k H(div)-conforming (BDM) velocity. Facet DOFs are normal
  moments against shifted Legendre polynomials in the global facet
  parameter, so neighbouring elements share them verbatim.
- V-hat: degree-(k-1) tangential facet space, L_i(s) t_F for i < k.
- Q: discontinuous degree-(k-1) pressure. Local basis is {1} plus
  zero-mean monomials, so the first coefficient is the cell average.
- CG: continuous linear vector auxiliary space, two DOFs per vertex.

Element bases are built in scaled physical coordinates by inverting the
DOF-to-monomial matrix of every element.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from errors import AssemblyError, ConfigError
from mesh import Mesh
from quadrature import facet_degree, segment_rule, shifted_legendre, triangle_rule, volume_degree

logger = logging.getLogger(__name__)

SUPPORTED_DEGREES = (1, 2, 3, 4)

ESSENTIAL = "essential0"
NATURAL = "natural"

# Reject local DOF matrices beyond this condition number
MAX_CONDITION = 1e12

VectorField = Callable[[np.ndarray, np.ndarray], np.ndarray]
ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]


class FacetConstraint(NamedTuple):
    """Boundary condition of one tag: normal and tangential component."""
    normal: str = ESSENTIAL
    tangential: str = ESSENTIAL
    traction: str = "none"


def monomial_exponents(degree: int) -> np.ndarray:
    """Exponents (a, b) of x^a y^b ordered by total degree, shape (n, 2)."""
    if degree < 0:
        return np.zeros((0, 2), dtype=int)
    return np.array([(a, d - a) for d in range(degree + 1) for a in range(d, -1, -1)], dtype=int)


def eval_monomials(xi: np.ndarray, eta: np.ndarray, degree: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values and first derivatives of all monomials up to degree."""
    exps = monomial_exponents(degree)
    a, b = exps[:, 0], exps[:, 1]
    x = np.asarray(xi)[..., None]
    y = np.asarray(eta)[..., None]
    xa, yb = x ** a, y ** b
    dx = a * x ** np.maximum(a - 1, 0) * yb
    dy = b * y ** np.maximum(b - 1, 0) * xa
    return xa * yb, dx, dy


@dataclass(frozen=True, eq=False)
class VolumeData:
    """Basis evaluations at volume quadrature points of every element."""
    points: np.ndarray    # (nt, nq, 2)
    weights: np.ndarray   # (nt, nq), physical
    phi: np.ndarray       # (nt, nq, 2, nb)
    grad: np.ndarray      # (nt, nq, 2, 2, nb), [component, derivative]
    div: np.ndarray       # (nt, nq, nb)
    pressure: np.ndarray  # (nt, nq, npl)


@dataclass(frozen=True, eq=False)
class FacetData:
    """Basis evaluations at facet quadrature points, per element and local facet."""
    points: np.ndarray    # (nt, 3, nq, 2), ordered along the global facet parameter
    weights: np.ndarray   # (nt, 3, nq), physical
    s: np.ndarray         # (nq,)
    legendre: np.ndarray  # (nq, k + 1)
    normal: np.ndarray    # (nt, 3, 2), outward for the element
    tangent: np.ndarray   # (nt, 3, 2), global facet tangent
    length: np.ndarray    # (nt, 3)
    phi: np.ndarray       # (nt, 3, nq, 2, nb)
    grad: np.ndarray      # (nt, 3, nq, 2, 2, nb)


@dataclass(frozen=True, eq=False)
class SpaceSet:
    """Spaces, DOF maps and constraint masks for one mesh and degree."""
    mesh: Mesh
    k: int
    # element geometry
    v0: np.ndarray          # (nt, 2)
    jac: np.ndarray         # (nt, 2, 2), columns are the edges v1 - v0, v2 - v0
    inv_jac: np.ndarray     # (nt, 2, 2)
    centroid: np.ndarray    # (nt, 2)
    scale: np.ndarray       # (nt,), element diameter
    coeffs: np.ndarray      # (nt, nb, nb), monomial coefficients of the nodal basis
    p_means: np.ndarray     # (nt, npl), means subtracted from pressure monomials
    # dof maps
    v_dofs: np.ndarray      # (nt, nb) into V
    hat_dofs: np.ndarray    # (nt, 3k) into V-hat
    p_dofs: np.ndarray      # (nt, npl) into Q
    # constraints
    v_fixed: np.ndarray     # (dim_v,) bool
    hat_fixed: np.ndarray   # (dim_hat,) bool
    cg_fixed: np.ndarray    # (dim_cg,) bool
    normal_fixed_facets: np.ndarray      # (nf,) bool
    tangential_fixed_facets: np.ndarray  # (nf,) bool

    # --- sizes -------------------------------------------------------------
    @property
    def n_facet_dofs(self) -> int:
        return self.k + 1

    @property
    def n_local_v(self) -> int:
        return (self.k + 1) * (self.k + 2)

    @property
    def n_interior(self) -> int:
        return self.n_local_v - 3 * (self.k + 1)

    @property
    def n_local_hat(self) -> int:
        return 3 * self.k

    @property
    def n_local_u(self) -> int:
        return self.n_local_v + self.n_local_hat

    @property
    def n_local_p(self) -> int:
        return self.k * (self.k + 1) // 2

    @property
    def dim_v(self) -> int:
        return (self.k + 1) * self.mesh.n_facets + self.n_interior * self.mesh.n_elements

    @property
    def dim_hat(self) -> int:
        return self.k * self.mesh.n_facets

    @property
    def dim_u(self) -> int:
        return self.dim_v + self.dim_hat

    @property
    def dim_q(self) -> int:
        return self.n_local_p * self.mesh.n_elements

    @property
    def dim_cg(self) -> int:
        return 2 * self.mesh.n_vertices

    @property
    def n_skeleton(self) -> int:
        """Facet-normal plus tangential facet DOFs."""
        return (2 * self.k + 1) * self.mesh.n_facets

    # --- compound maps -----------------------------------------------------
    @cached_property
    def u_dofs(self) -> np.ndarray:
        """Element map into the compound (V, V-hat) numbering."""
        return np.hstack([self.v_dofs, self.dim_v + self.hat_dofs])

    @cached_property
    def u_fixed(self) -> np.ndarray:
        return np.concatenate([self.v_fixed, self.hat_fixed])

    @cached_property
    def skeleton_dofs(self) -> np.ndarray:
        """Compound indices of facet-normal and tangential facet DOFs."""
        n_normal = (self.k + 1) * self.mesh.n_facets
        return np.concatenate([np.arange(n_normal), self.dim_v + np.arange(self.dim_hat)])

    @cached_property
    def solid_mask(self) -> np.ndarray:
        """Compound DOFs touched by solid elements (V^s and V-hat on solid facets)."""
        mask = np.zeros(self.dim_u, dtype=bool)
        mask[self.u_dofs[self.mesh.solid_elements].ravel()] = True
        return mask

    @cached_property
    def fluid_mask(self) -> np.ndarray:
        mask = np.zeros(self.dim_u, dtype=bool)
        mask[self.u_dofs[self.mesh.fluid_elements].ravel()] = True
        return mask

    # --- basis evaluation --------------------------------------------------
    def velocity_basis(self, points: np.ndarray, elements: Optional[np.ndarray] = None):
        """
        Evaluate the element velocity bases at physical points.

        points has shape (m, np, 2) for the m selected elements; returns
        values (m, np, 2, nb), gradients (m, np, 2, 2, nb) and divergence.
        """
        idx = slice(None) if elements is None else elements
        c = self.coeffs[idx]
        scale = self.scale[idx][:, None, None]
        xi = (points - self.centroid[idx][:, None, :]) / scale
        mono, dxi, deta = eval_monomials(xi[..., 0], xi[..., 1], self.k)
        nm = mono.shape[-1]
        cx, cy = c[:, :nm, :], c[:, nm:, :]
        phi = np.stack([np.einsum("epj,ejl->epl", mono, cx),
                        np.einsum("epj,ejl->epl", mono, cy)], axis=2)
        dxi, deta = dxi / scale, deta / scale
        grad = np.stack([
            np.stack([np.einsum("epj,ejl->epl", dxi, cx), np.einsum("epj,ejl->epl", deta, cx)], axis=2),
            np.stack([np.einsum("epj,ejl->epl", dxi, cy), np.einsum("epj,ejl->epl", deta, cy)], axis=2),
        ], axis=2)
        div = grad[:, :, 0, 0, :] + grad[:, :, 1, 1, :]
        return phi, grad, div

    def pressure_basis(self, points: np.ndarray, elements: Optional[np.ndarray] = None) -> np.ndarray:
        idx = slice(None) if elements is None else elements
        xi = (points - self.centroid[idx][:, None, :]) / self.scale[idx][:, None, None]
        mono, _, _ = eval_monomials(xi[..., 0], xi[..., 1], self.k - 1)
        return mono - self.p_means[idx][:, None, :]

    def volume_points(self, degree: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Physical quadrature points (nt, nq, 2) and weights (nt, nq)."""
        rule = triangle_rule(volume_degree(self.k) if degree is None else degree)
        pts = self.v0[:, None, :] + np.einsum("eij,qj->eqi", self.jac, rule.points)
        det = np.abs(np.linalg.det(self.jac))
        return pts, rule.weights[None, :] * det[:, None]

    @cached_property
    def volume(self) -> VolumeData:
        pts, wts = self.volume_points()
        phi, grad, div = self.velocity_basis(pts)
        return VolumeData(points=pts, weights=wts, phi=phi, grad=grad, div=div,
                          pressure=self.pressure_basis(pts))

    @cached_property
    def facet(self) -> FacetData:
        mesh = self.mesh
        rule = segment_rule(facet_degree(self.k))
        s = rule.points[:, 0]
        pts = _facet_points(mesh, s)[mesh.element_facets]           # (nt, 3, nq, 2)
        length = mesh.facet_lengths[mesh.element_facets]
        normal = mesh.facet_normals[mesh.element_facets] * mesh.element_signs[..., None]
        tangent = mesh.facet_tangents[mesh.element_facets]
        nt, nq = mesh.n_elements, len(s)
        phi, grad, _ = self.velocity_basis(pts.reshape(nt, 3 * nq, 2))
        return FacetData(
            points=pts,
            weights=rule.weights[None, None, :] * length[..., None],
            s=s,
            legendre=shifted_legendre(s, self.k),
            normal=normal,
            tangent=tangent,
            length=length,
            phi=phi.reshape(nt, 3, nq, 2, -1),
            grad=grad.reshape(nt, 3, nq, 2, 2, -1),
        )

    # --- evaluation of discrete functions ----------------------------------
    def evaluate_velocity(self, u: np.ndarray, elements: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Velocity of coefficient vector u (V or compound) at one point per element."""
        phi, _, _ = self.velocity_basis(points[:, None, :], elements)
        local = u[self.v_dofs[elements]]
        return np.einsum("eil,el->ei", phi[:, 0], local)

    def evaluate_pressure(self, p: np.ndarray, elements: np.ndarray, points: np.ndarray) -> np.ndarray:
        basis = self.pressure_basis(points[:, None, :], elements)
        return np.einsum("el,el->e", basis[:, 0], p[self.p_dofs[elements]])

    def divergence_at_quadrature(self, u: np.ndarray, elements: Optional[np.ndarray] = None) -> np.ndarray:
        idx = slice(None) if elements is None else elements
        return np.einsum("epl,el->ep", self.volume.div[idx], u[self.v_dofs[idx]])


def _facet_points(mesh: Mesh, s: np.ndarray) -> np.ndarray:
    """Points x_a + s (x_b - x_a) on every global facet, shape (nf, nq, 2)."""
    a = mesh.vertices[mesh.facets[:, 0]]
    b = mesh.vertices[mesh.facets[:, 1]]
    return a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]


def _interior_tests(k: int, xi: np.ndarray, bary: np.ndarray, grad_bary: np.ndarray,
                    scale: np.ndarray) -> np.ndarray:
    """
    Test fields for the interior moments: gradients of P_{k-1} monomials
    without the constant, then curls of bubble times P_{k-2} monomials.
    Returns (nt, nq, 2, k^2 - 1).
    """
    nt, nq = xi.shape[:2]
    if k == 1:
        return np.zeros((nt, nq, 2, 0))
    _, dxi, deta = eval_monomials(xi[..., 0], xi[..., 1], k - 1)
    grads = np.stack([dxi[..., 1:], deta[..., 1:]], axis=2)

    q, qxi, qeta = eval_monomials(xi[..., 0], xi[..., 1], k - 2)
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    bubble = (l0 * l1 * l2)[..., None]
    gb = (l1 * l2)[..., None] * grad_bary[:, None, 0, :] \
        + (l0 * l2)[..., None] * grad_bary[:, None, 1, :] \
        + (l0 * l1)[..., None] * grad_bary[:, None, 2, :]          # (nt, nq, 2)
    sc = scale[:, None, None]
    dbq_x = q * gb[..., 0:1] + bubble * qxi / sc
    dbq_y = q * gb[..., 1:2] + bubble * qeta / sc
    curls = np.stack([sc * dbq_y, -sc * dbq_x], axis=2)
    return np.concatenate([grads, curls], axis=-1)


def _barycentric(points: np.ndarray, v0: np.ndarray, inv_jac: np.ndarray) -> np.ndarray:
    lam = np.einsum("eij,eqj->eqi", inv_jac, points - v0[:, None, :])
    return np.concatenate([1.0 - lam.sum(axis=-1, keepdims=True), lam], axis=-1)


def _constraints(mesh: Mesh, k: int, bcs: Optional[Mapping[str, object]]):
    nf = mesh.n_facets
    normal_fixed = np.zeros(nf, dtype=bool)
    tangential_fixed = np.zeros(nf, dtype=bool)
    cg_fixed = np.zeros(2 * mesh.n_vertices, dtype=bool)
    missing = []
    for tag, facets in mesh.boundary_tags.items():
        bc = FacetConstraint() if bcs is None else bcs.get(tag)
        if bc is None:
            missing.append(tag)
            continue
        n = np.abs(mesh.facet_normals[facets])
        ends = mesh.facets[facets]
        if bc.normal == ESSENTIAL:
            normal_fixed[facets] = True
            comp = np.argmax(n, axis=1)
            cg_fixed[2 * ends[:, 0] + comp] = True
            cg_fixed[2 * ends[:, 1] + comp] = True
        if bc.tangential == ESSENTIAL:
            tangential_fixed[facets] = True
            comp = np.argmin(n, axis=1)
            cg_fixed[2 * ends[:, 0] + comp] = True
            cg_fixed[2 * ends[:, 1] + comp] = True
    if missing:
        raise ConfigError([f"no boundary condition for tag '{t}'" for t in sorted(missing)])

    n_int = (k + 1) * (k + 2) - 3 * (k + 1)
    v_fixed = np.concatenate([np.repeat(normal_fixed, k + 1), np.zeros(n_int * mesh.n_elements, dtype=bool)])
    hat_fixed = np.repeat(tangential_fixed, k)
    return v_fixed, hat_fixed, cg_fixed, normal_fixed, tangential_fixed


def build_spaces(mesh: Mesh, k: int, bcs: Optional[Mapping[str, object]] = None) -> SpaceSet:
    """
    Build V, V-hat, Q and CG on the mesh.

    bcs maps boundary tags to objects with `normal` and `tangential`
    attributes ("essential0" or "natural"); None constrains every exterior
    facet in both components.
    """
    if k not in SUPPORTED_DEGREES:
        raise ConfigError([f"polynomial degree k={k} not supported, expected one of {SUPPORTED_DEGREES}"])

    nt, nf = mesh.n_elements, mesh.n_facets
    P = mesh.vertices[mesh.elements]
    v0 = P[:, 0]
    jac = np.stack([P[:, 1] - v0, P[:, 2] - v0], axis=-1)
    det = np.linalg.det(jac)
    if np.any(det <= 0):
        raise AssemblyError(f"degenerate or clockwise elements: {np.flatnonzero(det <= 0).tolist()}")
    inv_jac = np.linalg.inv(jac)
    centroid = P.mean(axis=1)
    edges = P[:, [1, 2, 0]] - P
    scale = np.hypot(edges[..., 0], edges[..., 1]).max(axis=1)
    grad_bary = np.concatenate([-inv_jac.sum(axis=1, keepdims=True), inv_jac], axis=1)   # (nt, 3, 2)

    # facet moment rows
    frule = segment_rule(facet_degree(k))
    s = frule.points[:, 0]
    fpts = _facet_points(mesh, s)[mesh.element_facets]          # (nt, 3, nq, 2)
    fxi = (fpts - centroid[:, None, None, :]) / scale[:, None, None, None]
    fmono, _, _ = eval_monomials(fxi[..., 0], fxi[..., 1], k)
    gnormal = mesh.facet_normals[mesh.element_facets][:, :, None, None, :]
    mn = np.concatenate([fmono * gnormal[..., 0], fmono * gnormal[..., 1]], axis=-1)
    leg = shifted_legendre(s, k)
    facet_rows = np.einsum("q,qi,efqj->efij", frule.weights, leg, mn).reshape(nt, 3 * (k + 1), -1)

    # interior moment rows
    vrule = triangle_rule(volume_degree(k))
    vpts = v0[:, None, :] + np.einsum("eij,qj->eqi", jac, vrule.points)
    vxi = (vpts - centroid[:, None, :]) / scale[:, None, None]
    vmono, _, _ = eval_monomials(vxi[..., 0], vxi[..., 1], k)
    tests = _interior_tests(k, vxi, _barycentric(vpts, v0, inv_jac), grad_bary, scale)
    wn = 2.0 * vrule.weights
    interior_rows = np.concatenate([
        np.einsum("q,eqj,eqr->erj", wn, vmono, tests[:, :, 0, :]),
        np.einsum("q,eqj,eqr->erj", wn, vmono, tests[:, :, 1, :]),
    ], axis=-1)

    dof_matrix = np.concatenate([facet_rows, interior_rows], axis=1)
    cond = np.linalg.cond(dof_matrix)
    if not np.all(np.isfinite(cond)) or cond.max() > MAX_CONDITION:
        worst = int(np.nanargmax(np.where(np.isfinite(cond), cond, np.inf)))
        raise AssemblyError(f"local DOF matrix not invertible on element {worst} (cond={cond[worst]:.3e})")
    coeffs = np.linalg.inv(dof_matrix)

    # pressure: cell average first, then zero-mean monomials
    pmono, _, _ = eval_monomials(vxi[..., 0], vxi[..., 1], k - 1)
    p_means = np.einsum("q,eqj->ej", wn, pmono)
    p_means[:, 0] = 0.0

    n_int = (k + 1) * (k + 2) - 3 * (k + 1)
    local_facet = mesh.element_facets[:, :, None] * (k + 1) + np.arange(k + 1)
    interior = (k + 1) * nf + np.arange(nt)[:, None] * n_int + np.arange(n_int)
    v_dofs = np.hstack([local_facet.reshape(nt, -1), interior])
    hat_dofs = (mesh.element_facets[:, :, None] * k + np.arange(k)).reshape(nt, -1)
    npl = k * (k + 1) // 2
    p_dofs = np.hstack([np.arange(nt)[:, None], nt + np.arange(nt)[:, None] * (npl - 1) + np.arange(npl - 1)])

    v_fixed, hat_fixed, cg_fixed, normal_fixed, tangential_fixed = _constraints(mesh, k, bcs)

    spaces = SpaceSet(
        mesh=mesh, k=k, v0=v0, jac=jac, inv_jac=inv_jac, centroid=centroid, scale=scale,
        coeffs=coeffs, p_means=p_means, v_dofs=v_dofs, hat_dofs=hat_dofs, p_dofs=p_dofs,
        v_fixed=v_fixed, hat_fixed=hat_fixed, cg_fixed=cg_fixed,
        normal_fixed_facets=normal_fixed, tangential_fixed_facets=tangential_fixed,
    )
    logger.info(f"Built spaces k={k}: dim V={spaces.dim_v}, dim V-hat={spaces.dim_hat}, "
                f"dim Q={spaces.dim_q}, constrained={int(spaces.u_fixed.sum())}")
    return spaces


# --- interpolation and projection --------------------------------------------

def _field_on_facets(spaces: SpaceSet, field: VectorField):
    mesh = spaces.mesh
    rule = segment_rule(facet_degree(spaces.k))
    s = rule.points[:, 0]
    pts = _facet_points(mesh, s)
    values = np.asarray(field(pts[..., 0], pts[..., 1]))       # (2, nf, nq)
    return rule.weights, shifted_legendre(s, spaces.k), values


def interpolate_bdm(spaces: SpaceSet, field: VectorField) -> np.ndarray:
    """BDM interpolant: normal facet moments and interior moments of the field."""
    mesh, k = spaces.mesh, spaces.k
    w, leg, values = _field_on_facets(spaces, field)
    un = values[0] * mesh.facet_normals[:, 0, None] + values[1] * mesh.facet_normals[:, 1, None]
    facet_coeffs = np.einsum("q,qi,fq->fi", w, leg, un).ravel()

    if spaces.n_interior == 0:
        return facet_coeffs
    rule = triangle_rule(volume_degree(k))
    pts, _ = spaces.volume_points()
    xi = (pts - spaces.centroid[:, None, :]) / spaces.scale[:, None, None]
    grad_bary = np.concatenate([-spaces.inv_jac.sum(axis=1, keepdims=True), spaces.inv_jac], axis=1)
    tests = _interior_tests(k, xi, _barycentric(pts, spaces.v0, spaces.inv_jac), grad_bary, spaces.scale)
    u = np.asarray(field(pts[..., 0], pts[..., 1]))            # (2, nt, nq)
    dots = u[0][..., None] * tests[:, :, 0, :] + u[1][..., None] * tests[:, :, 1, :]
    interior_coeffs = np.einsum("q,eqr->er", 2.0 * rule.weights, dots).ravel()
    return np.concatenate([facet_coeffs, interior_coeffs])


def project_facet_tangential(spaces: SpaceSet, trace: VectorField) -> np.ndarray:
    """Per-facet L2 projection of the tangential component onto degree k-1."""
    mesh, k = spaces.mesh, spaces.k
    w, leg, values = _field_on_facets(spaces, trace)
    ut = values[0] * mesh.facet_tangents[:, 0, None] + values[1] * mesh.facet_tangents[:, 1, None]
    moments = np.einsum("q,qi,fq->fi", w, leg[:, :k], ut)
    return (moments * (2 * np.arange(k) + 1)).ravel()


def interpolate_compound(spaces: SpaceSet, field: VectorField) -> np.ndarray:
    """(BDM interpolant, tangential facet projection) as one compound vector."""
    return np.concatenate([interpolate_bdm(spaces, field), project_facet_tangential(spaces, field)])


def project_pressure(spaces: SpaceSet, field: ScalarField) -> np.ndarray:
    """Elementwise L2 projection onto the discontinuous pressure space."""
    vol = spaces.volume
    values = np.asarray(field(vol.points[..., 0], vol.points[..., 1]))
    mass = np.einsum("eq,eqi,eqj->eij", vol.weights, vol.pressure, vol.pressure)
    rhs = np.einsum("eq,eqi,eq->ei", vol.weights, vol.pressure, values)
    local = np.linalg.solve(mass, rhs[..., None])[..., 0]
    out = np.zeros(spaces.dim_q)
    out[spaces.p_dofs] = local
    return out


def constrain(spaces: SpaceSet, u: np.ndarray) -> np.ndarray:
    """Zero the constrained entries of a compound vector."""
    out = u.copy()
    out[spaces.u_fixed] = 0.0
    return out
