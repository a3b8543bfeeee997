"""
Preconditioned MinRes for the condensed saddle-point system.

The preconditioner is block diagonal: iA on the skeleton velocity and
iS = (M_{mu,gamma})^-1 + (N_{rho,gamma})^-1 on the piecewise constant
pressure. iA is either an exact factorization of A or the auxiliary space
operator R + P Aux^-1 P^T with a symmetric Gauss-Seidel smoother R.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp
from pyamg.aggregation.aggregate import standard_aggregation
from pyamg.aggregation.smooth import jacobi_prolongation_smoother
from pyamg.aggregation.tentative import fit_candidates
from pyamg.relaxation.relaxation import gauss_seidel
from pyamg.strength import symmetric_strength_of_connection
from scipy.sparse.linalg import LinearOperator, aslinearoperator, splu

from config import SolverConfig
from errors import AssemblyError, FactorizationError, SolverError
from forms import auxiliary_cg_matrix, pressure_jump_matrix, transfer_matrix
from system import FLUID_ONLY, Condensation

logger = logging.getLogger(__name__)

# Relative tolerance for the symmetry check of the system operator
SYMMETRY_TOL = 1e-10
# Slack allowed in the monotonicity check of the residual history
MONOTONE_SLACK = 1e-12


def sample_vectors(n: int, count: int) -> np.ndarray:
    """Deterministic, well spread test vectors, shape (count, n)."""
    i = np.arange(1, n + 1)
    golden = 0.5 * (1.0 + np.sqrt(5.0))
    return np.array([np.sin(golden * i * (j + 1) + j) for j in range(count)])


def symmetry_defect(op: LinearOperator, count: int = 10) -> float:
    """max |x.Ay - y.Ax| / (|x| |Ay|) over sample pairs."""
    samples = sample_vectors(op.shape[0], 2 * count)
    worst = 0.0
    for x, y in zip(samples[:count], samples[count:]):
        ax, ay = op.matvec(x), op.matvec(y)
        scale = max(np.linalg.norm(x) * np.linalg.norm(ay), np.finfo(float).tiny)
        worst = max(worst, abs(x @ ay - y @ ax) / scale)
    return worst


@dataclass
class MinresResult:
    x: np.ndarray
    iterations: int
    residual: float
    history: List[float] = field(default_factory=list)

    @property
    def relative_residual(self) -> float:
        return self.history[-1] / self.history[0] if self.history and self.history[0] > 0 else 0.0


def minres(op, rhs: np.ndarray, prec=None, tol: float = 1e-8, maxit: int = 2000,
           nullspace: Optional[np.ndarray] = None, check_symmetry: bool = True,
           callback: Optional[Callable[[int, float], None]] = None) -> MinresResult:
    """
    Preconditioned minimum residual method, zero initial guess.

    Stops once the preconditioned residual norm drops below tol times its
    initial value. nullspace, if given, is a unit vector projected out of the
    right-hand side and the solution.
    """
    A = aslinearoperator(op)
    M = aslinearoperator(prec) if prec is not None else None
    n = A.shape[0]
    b = np.asarray(rhs, dtype=float).copy()
    if nullspace is not None:
        b -= nullspace * (nullspace @ b)
    if check_symmetry:
        defect = symmetry_defect(A)
        if defect > SYMMETRY_TOL:
            raise SolverError(f"operator is not symmetric (defect {defect:.3e})", residual=np.inf)

    def psolve(v):
        return M.matvec(v) if M is not None else v.copy()

    x = np.zeros(n)
    r1 = b.copy()
    y = psolve(r1)
    beta1 = r1 @ y
    if beta1 < 0:
        raise SolverError("preconditioner is not positive definite", residual=np.inf)
    beta1 = np.sqrt(beta1)
    if beta1 == 0:
        return MinresResult(x=x, iterations=0, residual=0.0, history=[0.0])

    eps = np.finfo(float).eps
    oldb, beta, dbar, epsln, phibar = 0.0, beta1, 0.0, 0.0, beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1.copy()
    history = [beta1]

    for itn in range(1, maxit + 1):
        v = y / beta
        y = A.matvec(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = v @ y
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = psolve(r2)
        oldb = beta
        beta = r2 @ y
        if beta < 0:
            raise SolverError("preconditioner is not positive definite", residual=phibar, history=history)
        beta = np.sqrt(beta)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), eps)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w

        history.append(abs(phibar))
        if history[-1] > history[-2] * (1.0 + MONOTONE_SLACK):
            raise SolverError(f"residual increased at iteration {itn}", residual=history[-1], history=history)
        if callback is not None:
            callback(itn, history[-1])
        if history[-1] <= tol * beta1 or beta == 0:
            if nullspace is not None:
                x -= nullspace * (nullspace @ x)
            logger.debug(f"MinRes converged in {itn} iterations, relative residual {history[-1] / beta1:.3e}")
            return MinresResult(x=x, iterations=itn, residual=history[-1], history=history)

    raise SolverError(f"MinRes did not converge in {maxit} iterations "
                      f"(relative residual {history[-1] / beta1:.3e})", residual=history[-1], history=history)


def sparse_factorize(matrix: sp.spmatrix, spd: bool = True) -> LinearOperator:
    """
    Sparse LU with symmetric ordering and no pivoting.

    For symmetric input this is an LDL^T in disguise, so the diagonal of U
    holds the pivots; a non-positive one on claimed SPD input is an error.
    """
    csc = sp.csc_matrix(matrix, dtype=float)
    try:
        lu = splu(csc, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError as e:
        raise FactorizationError(f"sparse factorization failed: {e}") from e
    if spd:
        pivots = lu.U.diagonal()
        if np.any(pivots <= 0):
            raise FactorizationError(f"non-positive pivot ({pivots.min():.3e}) in a matrix claimed SPD")
    return LinearOperator(csc.shape, matvec=lu.solve, dtype=float)


def symmetric_gauss_seidel(matrix: sp.spmatrix) -> LinearOperator:
    """One forward then one backward point Gauss-Seidel sweep from zero."""
    A = sp.csr_matrix(matrix, dtype=float)
    if np.any(A.diagonal() == 0):
        raise AssemblyError("zero diagonal entry, Gauss-Seidel smoother undefined")

    def apply(b):
        b = np.asarray(b, dtype=float).ravel()
        x = np.zeros_like(b)
        gauss_seidel(A, x, b, iterations=1, sweep="forward")
        gauss_seidel(A, x, b, iterations=1, sweep="backward")
        return x

    return LinearOperator(A.shape, matvec=apply, dtype=float)


def amg_vcycle(matrix: sp.spmatrix, levels: int = 10, coarse_size: int = 50) -> LinearOperator:
    """
    Smoothed aggregation V-cycle: forward Gauss-Seidel before, backward after,
    Galerkin coarse operators and a direct solve on the coarsest level.
    """
    A = sp.csr_matrix(matrix, dtype=float)
    if levels <= 1:
        return symmetric_gauss_seidel(A)

    hierarchy = []
    candidates = np.ones((A.shape[0], 1))
    while len(hierarchy) + 1 < levels and A.shape[0] > coarse_size:
        strength = symmetric_strength_of_connection(A)
        aggregation = standard_aggregation(strength)
        agg_op = aggregation[0] if isinstance(aggregation, tuple) else aggregation
        if agg_op.shape[1] == 0 or agg_op.shape[1] >= A.shape[0]:
            logger.warning(f"Aggregation stalled at size {A.shape[0]}, solving this level directly")
            break
        tentative, candidates = fit_candidates(agg_op, candidates)
        P = sp.csr_matrix(jacobi_prolongation_smoother(A, tentative, strength, candidates))
        R = sp.csr_matrix(P.T)
        hierarchy.append((A, P, R))
        A = sp.csr_matrix(R @ A @ P)

    if not hierarchy:
        logger.warning("AMG produced no coarse level, falling back to direct factorization")
        return sparse_factorize(matrix)
    coarse = sparse_factorize(A)
    logger.debug(f"AMG hierarchy: {[lvl[0].shape[0] for lvl in hierarchy] + [A.shape[0]]}")

    def cycle(level, b):
        if level == len(hierarchy):
            return coarse.matvec(b)
        Al, P, R = hierarchy[level]
        x = np.zeros_like(b)
        gauss_seidel(Al, x, b, iterations=1, sweep="forward")
        x += P @ cycle(level + 1, R @ (b - Al @ x))
        gauss_seidel(Al, x, b, iterations=1, sweep="backward")
        return x

    return LinearOperator(matrix.shape, matvec=lambda b: cycle(0, np.asarray(b, dtype=float).ravel()), dtype=float)


class BlockPreconditioner(LinearOperator):
    """diag(iA, iS) acting on [velocity | pressure]."""

    def __init__(self, velocity: LinearOperator, pressure: LinearOperator):
        self.velocity = velocity
        self.pressure = pressure
        self.n_u = velocity.shape[0]
        n = self.n_u + pressure.shape[0]
        super().__init__(dtype=float, shape=(n, n))

    def _matvec(self, x):
        x = np.asarray(x, dtype=float).ravel()
        return np.concatenate([self.velocity.matvec(x[: self.n_u]), self.pressure.matvec(x[self.n_u:])])

    def velocity_prec_apply(self, x: np.ndarray) -> np.ndarray:
        return self.velocity.matvec(x)

    def schur_apply(self, x: np.ndarray) -> np.ndarray:
        return self.pressure.matvec(x)


def _inverse(matrix: sp.spmatrix, config: SolverConfig) -> LinearOperator:
    if config.backend == "amg":
        return amg_vcycle(matrix, config.amg_levels, config.amg_coarse_size)
    return sparse_factorize(matrix)


def schur_block(condensation: Condensation, config: SolverConfig) -> LinearOperator:
    """
    iS on the cell-average pressure: diagonal ((1/mu + gamma)|K|)^-1 plus the
    inverse jump form. The constant mode is deflated when the jump form is
    singular.
    """
    blocks = condensation.blocks
    mesh = blocks.spaces.mesh
    coef = blocks.coefficients
    active = blocks.active_pressure
    natural = blocks.natural_facets
    gamma = coef.gamma if blocks.pressure_form != FLUID_ONLY else np.zeros_like(coef.gamma)

    diag = np.ones(mesh.n_elements)
    diag[active] = 1.0 / ((1.0 / coef.mu[active] + gamma[active]) * mesh.areas[active])

    idx = np.flatnonzero(active)
    jump = pressure_jump_matrix(mesh, coef.rho, gamma, coef.tau, natural, active)[idx][:, idx]
    owners = mesh.facet_elements[natural, 0] if len(natural) else np.zeros(0, dtype=int)
    singular = not np.any(gamma[active] > 0) and not np.any(active[owners])
    if singular:
        logger.debug("Jump form is singular on constants, deflating")
        pinned = sp.lil_matrix(jump)
        pinned[0, :] = 0.0
        pinned[:, 0] = 0.0
        pinned[0, 0] = 1.0
        inner = _inverse(sp.csr_matrix(pinned), config)

        def jump_inverse(b):
            b = b - b.mean()
            b[0] = 0.0
            x = inner.matvec(b)
            x[0] = 0.0
            return x - x.mean()
    else:
        inner = _inverse(jump, config)
        jump_inverse = inner.matvec

    def apply(x):
        x = np.asarray(x, dtype=float).ravel()
        out = diag * x
        out[idx] += jump_inverse(x[idx].copy())
        return out

    return LinearOperator((mesh.n_elements, mesh.n_elements), matvec=apply, dtype=float)


def velocity_block(condensation: Condensation, config: SolverConfig) -> LinearOperator:
    """iA: exact factorization of A, or R + P Aux^-1 P^T."""
    A = condensation.A
    if config.velocity_block == "exact":
        return sparse_factorize(A)
    blocks = condensation.blocks
    spaces = blocks.spaces
    smoother = symmetric_gauss_seidel(A)
    transfer = transfer_matrix(spaces)
    aux = auxiliary_cg_matrix(spaces, blocks.tau, blocks.coefficients.mu)
    aux_inverse = _inverse(aux, config)
    transfer_t = sp.csr_matrix(transfer.T)

    def apply(x):
        x = np.asarray(x, dtype=float).ravel()
        return smoother.matvec(x) + transfer @ aux_inverse.matvec(transfer_t @ x)

    return LinearOperator(A.shape, matvec=apply, dtype=float)


def build_preconditioner(condensation: Condensation, config: SolverConfig) -> BlockPreconditioner:
    return BlockPreconditioner(velocity_block(condensation, config), schur_block(condensation, config))


def pressure_nullspace(condensation: Condensation) -> Optional[np.ndarray]:
    """
    Unit constant-pressure vector on the active elements when the reduced
    system is singular, else None. Decided from the uncondensed data: no
    gamma on the active pressure and every normal fixed on the boundary of
    the active region. Natural facets leave their normal free.
    """
    blocks = condensation.blocks
    spaces = blocks.spaces
    mesh = spaces.mesh
    active = blocks.active_pressure
    if blocks.pressure_form != FLUID_ONLY and np.any(blocks.coefficients.gamma[active] > 0):
        return None
    fe = mesh.facet_elements
    inside = active[fe[:, 0]]
    outside = np.where(fe[:, 1] >= 0, active[np.maximum(fe[:, 1], 0)], False)
    rim = inside != outside
    if not np.all(spaces.normal_fixed_facets[rim]):
        return None
    idx = np.flatnonzero(active)
    z = np.zeros(condensation.n_u + condensation.n_p)
    z[condensation.n_u + idx] = 1.0 / np.sqrt(len(idx))
    return z


@dataclass
class SolveResult:
    x: np.ndarray          # full [u | p]
    iterations: int
    residual: float
    history: List[float] = field(default_factory=list)


class SaddlePointSolver:
    """Solve the full system through its condensation, by MinRes or directly."""

    def __init__(self, condensation: Condensation, config: Optional[SolverConfig] = None):
        self.condensation = condensation
        self.config = config or SolverConfig()
        self.matrix = condensation.matrix
        defect = symmetry_defect(aslinearoperator(self.matrix))
        if defect > SYMMETRY_TOL:
            raise SolverError(f"system matrix is not symmetric (defect {defect:.3e})", residual=np.inf)
        self.nullspace = pressure_nullspace(condensation)
        self._lu = None
        self.preconditioner = None
        if self.config.method == "direct":
            self._lu = self._direct_factor()
        else:
            self.preconditioner = build_preconditioner(condensation, self.config)
        logger.info(f"Solver ready: method={self.config.method}, velocity block={self.config.velocity_block}, "
                    f"backend={self.config.backend}, size={self.matrix.shape[0]}")

    def _direct_factor(self):
        matrix = sp.lil_matrix(self.matrix)
        if self.nullspace is not None:
            pin = self.condensation.n_u
            matrix[pin, :] = 0.0
            matrix[:, pin] = 0.0
            matrix[pin, pin] = 1.0
        try:
            return splu(sp.csc_matrix(matrix))
        except RuntimeError as e:
            raise FactorizationError(f"direct solve failed: {e}") from e

    def solve_reduced(self, rhs: np.ndarray) -> SolveResult:
        if self._lu is not None:
            b = rhs.copy()
            if self.nullspace is not None:
                b -= self.nullspace * (self.nullspace @ b)
                b[self.condensation.n_u] = 0.0
            x = self._lu.solve(b)
            if self.nullspace is not None:
                x -= self.nullspace * (self.nullspace @ x)
            residual = float(np.linalg.norm(self.matrix @ x - b))
            return SolveResult(x=x, iterations=0, residual=residual, history=[residual])
        result = minres(self.matrix, rhs, self.preconditioner, tol=self.config.tol, maxit=self.config.maxit,
                        nullspace=self.nullspace, check_symmetry=False)
        return SolveResult(x=result.x, iterations=result.iterations, residual=result.residual,
                           history=result.history)

    def solve(self, rhs: np.ndarray) -> SolveResult:
        """rhs and the returned x are full [u | p] vectors."""
        reduced = self.condensation.reduce_rhs(rhs)
        result = self.solve_reduced(reduced)
        result.x = self.condensation.recover(result.x, rhs)
        return result
