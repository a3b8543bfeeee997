"""
Error measures, discrete norms and the two experiment drivers.

run_convergence_study sweeps a mesh sequence over a grid of solid
parameters and writes error and iteration tables; run_pulse_benchmark
runs the pressure pulse and samples three curves along horizontal lines.
run_invariant_checks is a quick self-test on tiny meshes.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from cases import Case, ManufacturedCase, PulseCase, TranslationCase, UnforcedCase, blood_vessel_params
from config import CaseConfig, CaseKind, Scheme, SolverConfig
from errors import FsiHdgError
from forms import MaterialParams, facet_jump_basis, local_hdg_diffusion
from krylov import minres
from mesh import Mesh, Rectangle, Region, build_structured_mesh, write_mesh
from spaces import FacetConstraint, SpaceSet, build_spaces, interpolate_bdm, interpolate_compound, project_pressure
from stepper import StepState, TransientResult, build_simulation, cn_step, energy, run_transient
from system import SystemBlocks, assemble_system, export_coo, static_condense

logger = logging.getLogger(__name__)

# 17 significant digits
FLOAT_FORMAT = "%.16e"

CONVERGENCE_COLUMNS = ["k", "inv_h", "rho_s", "delta1", "delta2", "error", "eoc", "avg_iters"]
ITERATION_COLUMNS = ["k", "inv_h", "rho_s", "delta1", "delta2", "avg_iters"]

# Sampling lines of the pulse benchmark
BOTTOM_LINE = 0.0
INTERFACE_LINE = 0.5
FLOW_FACTOR = 2.0 / 3.0
LOCATE_TOL = 1e-10


# --- error measures ----------------------------------------------------------

def l2_velocity_error(spaces: SpaceSet, u: np.ndarray, exact: Callable) -> float:
    """||u_h - u||_Omega with quadrature of degree 2k + 2."""
    vol = spaces.volume
    uh = np.einsum("eqil,el->eqi", vol.phi, u[spaces.v_dofs])
    ue = np.moveaxis(np.asarray(exact(vol.points[..., 0], vol.points[..., 1])), 0, -1)
    return float(np.sqrt(np.einsum("eq,eqi->", vol.weights, (uh - ue) ** 2)))


def l2_pressure_error(spaces: SpaceSet, p: np.ndarray, exact: Callable, elements: Optional[np.ndarray] = None) -> float:
    """Pressure error up to the mean, over the given elements."""
    idx = np.arange(spaces.mesh.n_elements) if elements is None else np.asarray(elements)
    vol = spaces.volume
    ph = np.einsum("eql,el->eq", vol.pressure[idx], p[spaces.p_dofs[idx]])
    diff = ph - np.asarray(exact(vol.points[idx, :, 0], vol.points[idx, :, 1]))
    w = vol.weights[idx]
    diff -= np.sum(w * diff) / np.sum(w)
    return float(np.sqrt(np.sum(w * diff ** 2)))


@dataclass(frozen=True, eq=False)
class NormParts:
    """Element matrices of the broken HDG norms."""
    hdg: np.ndarray       # (nt, nu, nu) volume D:D plus projected jump penalty
    boundary: np.ndarray  # (nt, nu, nu) h |D v|^2 on the element boundary


def norm_parts(spaces: SpaceSet, alpha: float) -> NormParts:
    local = local_hdg_diffusion(spaces, alpha)
    fd = spaces.facet
    nb, nu = spaces.n_local_v, spaces.n_local_u
    d = 0.5 * (fd.grad + np.swapaxes(fd.grad, 3, 4))
    boundary = np.zeros((spaces.mesh.n_elements, nu, nu))
    boundary[:, :nb, :nb] = spaces.mesh.h * np.einsum("efq,efqijl,efqijm->elm", fd.weights, d, d)
    return NormParts(hdg=local.volume + local.penalty, boundary=boundary)


def _element_quadratic(local: np.ndarray, spaces: SpaceSet, u: np.ndarray, elements: np.ndarray) -> float:
    if len(elements) == 0:
        return 0.0
    ue = u[spaces.u_dofs[elements]]
    return float(np.einsum("el,elm,em->", ue, local[elements], ue))


@dataclass
class DiscreteNorms:
    energy: float
    fluid: float        # ||u||_{f,h}
    fluid_star: float   # ||u||_{f,*,h}
    solid: float        # ||eta||_{s,h}
    triple: float
    kinetic: float      # (rho u, u)
    shear: float        # 2 mu_s ||eta||_{s,h}^2
    dilatation: float   # lam_s ||div eta||_s^2

    def as_dict(self) -> Dict[str, float]:
        return dict(self.__dict__)


def energy_and_norms(blocks: SystemBlocks, u: np.ndarray, eta: np.ndarray,
                     parts: Optional[NormParts] = None) -> DiscreteNorms:
    """Discrete energy and the broken norms of a velocity/displacement pair."""
    spaces, params = blocks.spaces, blocks.params
    parts = parts or norm_parts(spaces, params.alpha)
    fluid, solid = spaces.mesh.fluid_elements, spaces.mesh.solid_elements

    fluid_sq = _element_quadratic(parts.hdg, spaces, u, fluid)
    star_sq = fluid_sq + _element_quadratic(parts.boundary, spaces, u, fluid)
    solid_sq = _element_quadratic(parts.hdg, spaces, eta, solid)
    kinetic = float(u @ (blocks.mass_rho @ u))
    div_div = _element_quadratic(_pad(spaces, blocks.operators.div_div), spaces, eta, solid)
    shear = 2.0 * params.mu_s * solid_sq
    dilatation = params.lam_s * div_div
    return DiscreteNorms(
        energy=energy(blocks, u, eta),
        fluid=_root(fluid_sq),
        fluid_star=_root(star_sq),
        solid=_root(solid_sq),
        triple=_root(kinetic + shear + dilatation),
        kinetic=kinetic,
        shear=shear,
        dilatation=dilatation,
    )


def _root(square: float) -> float:
    """Square root of a quadratic form that roundoff may push below zero."""
    return float(np.sqrt(max(square, 0.0)))


def _pad(spaces: SpaceSet, local: np.ndarray) -> np.ndarray:
    nb, nu = spaces.n_local_v, spaces.n_local_u
    out = np.zeros((local.shape[0], nu, nu))
    out[:, :nb, :nb] = local
    return out


def interpolation_star_error(spaces: SpaceSet, field: Callable, gradient: Callable,
                             elements: Optional[np.ndarray] = None, alpha: float = 8.0) -> float:
    """
    ||(u - I u, tang u - I-hat u)||_{*,h} over the given elements.

    gradient(x, y) returns [i, j] = du_i/dx_j. The projected tangential jump
    of the error equals minus that of the interpolant, because the facet
    projection of tang u is the hybrid part of the interpolant.
    """
    idx = np.arange(spaces.mesh.n_elements) if elements is None else np.asarray(elements)
    if len(idx) == 0:
        return 0.0
    k = spaces.k
    coeffs = interpolate_compound(spaces, field)
    local = coeffs[spaces.u_dofs[idx]]
    nb = spaces.n_local_v

    vol = spaces.volume
    exact_v = np.moveaxis(np.asarray(gradient(vol.points[idx, :, 0], vol.points[idx, :, 1])), (0, 1), (-2, -1))
    err_v = exact_v - np.einsum("eqijl,el->eqij", vol.grad[idx], local[:, :nb])
    err_v = 0.5 * (err_v + np.swapaxes(err_v, -1, -2))
    volume = np.einsum("eq,eqij->", vol.weights[idx], err_v ** 2)

    fd = spaces.facet
    exact_f = np.moveaxis(np.asarray(gradient(fd.points[idx, ..., 0], fd.points[idx, ..., 1])), (0, 1), (-2, -1))
    err_f = exact_f - np.einsum("efqijl,el->efqij", fd.grad[idx], local[:, :nb])
    err_f = 0.5 * (err_f + np.swapaxes(err_f, -1, -2))
    boundary = spaces.mesh.h * np.einsum("efq,efqij->", fd.weights[idx], err_f ** 2)

    jump = np.einsum("efqa,ea->efq", facet_jump_basis(spaces)[idx], local)
    moments = np.einsum("efq,qi,efq->efi", fd.weights[idx], fd.legendre[:, :k], jump)
    factor = (2 * np.arange(k) + 1)[None, None, :] / fd.length[idx][..., None]
    penalty = (alpha * k ** 2 / spaces.mesh.h) * np.sum(factor * moments ** 2)
    return float(np.sqrt(volume + boundary + penalty))


def max_commuting_defect(spaces: SpaceSet, field: Callable, divergence: Callable) -> float:
    """max |div(I u) - P div u| at volume quadrature points."""
    div_interp = spaces.divergence_at_quadrature(interpolate_bdm(spaces, field))
    proj = project_pressure(spaces, divergence)
    vol = spaces.volume
    div_proj = np.einsum("eql,el->eq", vol.pressure, proj[spaces.p_dofs])
    return float(np.abs(div_interp - div_proj).max())


def eoc(errors: Sequence[float], inv_h: Sequence[float]) -> List[float]:
    """Observed orders between consecutive meshes; NaN for the first."""
    out = [np.nan]
    for (e0, n0), (e1, n1) in zip(zip(errors, inv_h), zip(errors[1:], inv_h[1:])):
        out.append(float(np.log(e0 / e1) / np.log(n1 / n0)) if e0 > 0 and e1 > 0 else np.nan)
    return out


# --- case factory ------------------------------------------------------------

def boundary_constraints(config: CaseConfig) -> Dict[str, FacetConstraint]:
    return {tag: FacetConstraint(bc.normal, bc.tangential, bc.traction) for tag, bc in config.boundary.items()}


def make_case(config: CaseConfig, ratios: Optional[Tuple[float, float, float]] = None) -> Case:
    """Case object for a configuration; ratios picks one point of the parameter grid."""
    bcs = boundary_constraints(config)
    material = config.material.model_copy(update={"alpha": config.alpha}) if config.material else None
    if config.case == CaseKind.MANUFACTURED:
        if material is not None and ratios is None:
            return ManufacturedCase(material, boundary_conditions=bcs)
        rho_s, delta1, delta2 = ratios or config.grid.combinations()[0]
        return ManufacturedCase.from_ratios(rho_s, delta1, delta2, alpha=config.alpha, boundary_conditions=bcs)
    if config.case == CaseKind.PULSE:
        material = material or blood_vessel_params().model_copy(update={"alpha": config.alpha})
        return PulseCase(material, p_max=config.pulse.p_max, t_max=config.pulse.t_max, boundary_conditions=bcs)
    return TranslationCase(material or MaterialParams(alpha=config.alpha), boundary_conditions=bcs)


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {path}")
    return path


# --- single run --------------------------------------------------------------

@dataclass
class RunSummary:
    result: TransientResult
    error: Optional[float] = None
    norms: Optional[DiscreteNorms] = None


def run_single(config: CaseConfig, out_dir: Path, dump: bool = False) -> RunSummary:
    """
    One transient run with per-step diagnostics and, when known, the final error.

    dump additionally writes the mesh (mesh.txt) and the condensed system
    matrix (system.coo) before time stepping starts.
    """
    case = make_case(config)
    sim = build_simulation(case, config.n, config.k, config.scheme, config.time_step(), config.solver)
    if dump:
        write_mesh(sim.spaces.mesh, out_dir / "mesh.txt")
        export_coo(sim.solver.matrix, out_dir / "system.coo")
        logger.info(f"Wrote mesh and system matrix to {out_dir}")
    result = run_transient(sim, config.final_time, config.bootstrap_cn)
    final = result.final
    write_csv(result.diagnostics, out_dir / "diagnostics.csv")
    norms = energy_and_norms(sim.blocks, final.u, final.eta)
    error = None
    if case.has_exact:
        error = l2_velocity_error(sim.spaces, final.u, lambda x, y: case.velocity(x, y, final.t))
        logger.info(f"L2 velocity error at t={final.t:.4g}: {error:.6e}")
    pd.DataFrame([norms.as_dict()]).to_csv(out_dir / "norms.csv", index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Average MinRes iterations: {result.average_iterations:.1f}")
    return RunSummary(result=result, error=error, norms=norms)


# --- convergence study -------------------------------------------------------

def _label(rho_s, delta1, delta2) -> str:
    return f"rho_s={rho_s:g}|delta1={delta1:g}|delta2={delta2:g}"


def convergence_runs(config: CaseConfig, ratios: Tuple[float, float, float]) -> Tuple[List[dict], Dict[int, pd.DataFrame]]:
    """Every mesh of the sequence for one parameter triple."""
    rho_s, delta1, delta2 = ratios
    case = make_case(config, ratios)
    rows, diagnostics = [], {}
    for n in sorted(config.meshes):
        sim = build_simulation(case, n, config.k, config.scheme, config.time_step(n), config.solver)
        try:
            result = run_transient(sim, config.final_time, config.bootstrap_cn)
        except FsiHdgError as e:
            logger.error(f"{_label(*ratios)} n={n}: {e}")
            raise
        t = result.final.t
        error = l2_velocity_error(sim.spaces, result.final.u, lambda x, y: case.velocity(x, y, t))
        rows.append({"k": config.k, "inv_h": n, "rho_s": rho_s, "delta1": delta1, "delta2": delta2,
                     "error": error, "avg_iters": result.average_iterations,
                     "max_fluid_divergence": float(result.diagnostics["max_fluid_divergence"].max())})
        diagnostics[n] = result.diagnostics
        logger.info(f"{_label(*ratios)} n={n}: error={error:.4e} iterations={result.average_iterations:.1f}")
    for row, rate in zip(rows, eoc([r["error"] for r in rows], [r["inv_h"] for r in rows])):
        row["eoc"] = rate
    return rows, diagnostics


@dataclass
class ErrorReport:
    """Long-form error table plus the per-run diagnostics."""
    table: pd.DataFrame
    diagnostics: Dict[Tuple[float, float, float, int], pd.DataFrame] = field(default_factory=dict)

    def wide(self) -> pd.DataFrame:
        """Rows (k, inv_h), one error column per parameter triple, final EOC row."""
        table = self.table.copy()
        table["params"] = [_label(r, d1, d2) for r, d1, d2 in zip(table.rho_s, table.delta1, table.delta2)]
        wide = table.pivot_table(index=["k", "inv_h"], columns="params", values="error", sort=False)
        rates = table.sort_values("inv_h").groupby("params", sort=False)["eoc"].last()
        wide = wide.reset_index()
        eoc_row = {"k": int(table.k.iloc[0]), "inv_h": "EOC", **rates.to_dict()}
        wide["inv_h"] = wide["inv_h"].astype(object)
        return pd.concat([wide, pd.DataFrame([eoc_row])], ignore_index=True)

    def iterations(self) -> pd.DataFrame:
        return self.table[ITERATION_COLUMNS]


def run_convergence_study(config: CaseConfig, out_dir: Optional[Path] = None) -> ErrorReport:
    """Mesh sequence over the parameter grid; writes convergence, table and iteration CSVs."""
    combos = config.grid.combinations()
    logger.info(f"Convergence study: k={config.k}, scheme={Scheme(config.scheme).value}, meshes={config.meshes}, "
                f"{len(combos)} parameter sets, jobs={config.jobs}")
    results = {}
    if config.jobs > 1 and len(combos) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            futures = {ratios: pool.submit(convergence_runs, config, ratios) for ratios in combos}
            for ratios in tqdm(combos, desc="parameter sets"):
                results[ratios] = futures[ratios].result()
    else:
        for ratios in tqdm(combos, desc="parameter sets"):
            results[ratios] = convergence_runs(config, ratios)

    rows, diagnostics = [], {}
    for ratios in combos:
        run_rows, run_diag = results[ratios]
        rows.extend(run_rows)
        for n, frame in run_diag.items():
            diagnostics[ratios + (n,)] = frame
    report = ErrorReport(table=pd.DataFrame(rows)[CONVERGENCE_COLUMNS + ["max_fluid_divergence"]],
                         diagnostics=diagnostics)

    if out_dir is not None:
        write_csv(report.table[CONVERGENCE_COLUMNS], out_dir / "convergence.csv")
        write_csv(report.wide(), out_dir / "convergence_table.csv")
        write_csv(report.iterations(), out_dir / "iterations.csv")
        diag_dir = out_dir / "diagnostics"
        diag_dir.mkdir(exist_ok=True)
        for (r, d1, d2, n), frame in diagnostics.items():
            frame.to_csv(diag_dir / f"k{config.k}_n{n}_rho{r:g}_d1{d1:g}_d2{d2:g}.csv", index=False,
                         float_format=FLOAT_FORMAT)
    return report


# --- pulse benchmark ---------------------------------------------------------

def locate(spaces: SpaceSet, points: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """
    Element of the candidate set containing each point; ties go to the
    smaller element index.
    """
    elements = np.sort(np.asarray(elements))
    rel = points[:, None, :] - spaces.v0[elements][None, :, :]
    lam = np.einsum("eij,pej->pei", spaces.inv_jac[elements], rel)
    bary = np.concatenate([1.0 - lam.sum(axis=-1, keepdims=True), lam], axis=-1)
    inside = np.all(bary >= -LOCATE_TOL, axis=-1)
    missing = ~inside.any(axis=1)
    if missing.any():
        raise FsiHdgError(f"sample points outside the candidate elements: {points[missing][:5].tolist()}")
    return elements[np.argmax(inside, axis=1)]


def sample_line(spaces: SpaceSet, y: float, count: int, elements: np.ndarray, x_range=(0.0, 6.0)):
    x = np.linspace(x_range[0], x_range[1], count)
    points = np.column_stack([x, np.full(count, y)])
    return x, points, locate(spaces, points, elements)


@dataclass
class PulseResult:
    flow: pd.DataFrame
    pressure: pd.DataFrame
    displacement: pd.DataFrame
    transient: TransientResult


def pulse_curves(spaces: SpaceSet, u: np.ndarray, p: Optional[np.ndarray], eta: np.ndarray,
                 samples: int = 200) -> Tuple[pd.DataFrame, pd.DataFrame, pd.DataFrame]:
    """Flow rate and pressure along the channel bottom, vertical displacement on the interface."""
    mesh = spaces.mesh
    x0, x1 = mesh.vertices[:, 0].min(), mesh.vertices[:, 0].max()
    x, pts, cells = sample_line(spaces, BOTTOM_LINE, samples, mesh.fluid_elements, (x0, x1))
    flow = FLOW_FACTOR * spaces.evaluate_velocity(u, cells, pts)[:, 0]
    pressure = spaces.evaluate_pressure(p, cells, pts) if p is not None else np.zeros(samples)
    _, pts_s, cells_s = sample_line(spaces, INTERFACE_LINE, samples, mesh.solid_elements, (x0, x1))
    disp = spaces.evaluate_velocity(eta, cells_s, pts_s)[:, 1]
    return (pd.DataFrame({"x": x, "value": flow}), pd.DataFrame({"x": x, "value": pressure}),
            pd.DataFrame({"x": x, "value": disp}))


def relative_l2_difference(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return float(np.linalg.norm(a - b) / scale) if scale > 0 else 0.0


def run_pulse_benchmark(config: CaseConfig, out_dir: Optional[Path] = None) -> PulseResult:
    """Pressure pulse run to final_time with line samples of the final state."""
    case = make_case(config)
    dt = config.time_step()
    logger.info(f"Pulse benchmark: k={config.k}, n={config.n}, dt={dt:g}, T={config.final_time:g}, "
                f"p_max={config.pulse.p_max:g}")
    sim = build_simulation(case, config.n, config.k, config.scheme, dt, config.solver)
    result = run_transient(sim, config.final_time, config.bootstrap_cn)
    final = result.final
    flow, pressure, disp = pulse_curves(sim.spaces, final.u, final.pressure, final.eta, config.pulse.samples)
    logger.info(f"Pulse finished at t={final.t:.4g}: average iterations {result.average_iterations:.1f}, "
                f"max flow {flow.value.abs().max():.4e}, max displacement {disp.value.abs().max():.4e}")
    if out_dir is not None:
        write_csv(flow, out_dir / "pulse_flow.csv")
        write_csv(pressure, out_dir / "pulse_pressure.csv")
        write_csv(disp, out_dir / "pulse_disp.csv")
        write_csv(result.diagnostics, out_dir / "diagnostics.csv")
    return PulseResult(flow=flow, pressure=pressure, displacement=disp, transient=result)


# --- invariant self-test -----------------------------------------------------

@dataclass
class CheckResult:
    group: str
    name: str
    passed: bool
    message: str = ""


def _expect(condition: bool, message: str) -> None:
    if not condition:
        raise AssertionError(message)


def _unit_square(n: int = 1) -> Mesh:
    return build_structured_mesh([Rectangle(0.0, 1.0, 0.0, 1.0, Region.FLUID)], n)


def _check_mesh_counts():
    mesh = _unit_square(1)
    _expect((mesh.n_vertices, mesh.n_facets, mesh.n_elements) == (4, 5, 2),
            f"unit square: got {(mesh.n_vertices, mesh.n_facets, mesh.n_elements)}")


def _check_mesh_euler():
    mesh = ManufacturedCase.from_ratios(1.0, 1.0, 1.0).build_mesh(2)
    _expect(mesh.n_vertices - mesh.n_facets + mesh.n_elements == 1, "V - E + T != 1")
    _expect(len(mesh.interface_facets) == 2, f"{len(mesh.interface_facets)} interface facets, expected 2")


def _check_space_dims():
    spaces = build_spaces(_unit_square(1), 2)
    _expect((spaces.dim_v, spaces.dim_hat, spaces.dim_q) == (21, 10, 6),
            f"k=2 dims {(spaces.dim_v, spaces.dim_hat, spaces.dim_q)}")


def _check_commuting():
    spaces = build_spaces(_unit_square(2), 2)
    defect = max_commuting_defect(spaces, lambda x, y: np.stack([x ** 2 * y, x * y - y ** 3]),
                                  lambda x, y: 2 * x * y + x - 3 * y ** 2)
    _expect(defect < 1e-10, f"commuting defect {defect:.3e}")


def _check_rigid_energy():
    spaces = build_spaces(_unit_square(1), 1)
    local = local_hdg_diffusion(spaces).total
    rigid = interpolate_compound(spaces, lambda x, y: np.stack([-y + 1.0, x + 0.5]))
    ue = rigid[spaces.u_dofs]
    value = float(np.abs(np.einsum("el,elm,em->e", ue, local, ue)).max())
    _expect(value < 1e-10, f"rigid motion energy {value:.3e}")
    _expect(np.allclose(local, np.swapaxes(local, 1, 2)), "local diffusion matrix not symmetric")


def _check_system():
    case = ManufacturedCase.from_ratios(1.0, 1.0, 1.0)
    mesh = case.build_mesh(2)
    for k in (1, 2):
        spaces = build_spaces(mesh, k, case.boundary_conditions)
        blocks = assemble_system(spaces, case.params, 0.05)
        matrix = blocks.matrix
        _expect(abs(matrix - matrix.T).max() < 1e-10, f"k={k}: system not symmetric")
        cond = static_condense(blocks)
        _expect(cond.identity == (k == 1), f"k={k}: unexpected condensation mode")


def _check_minres():
    a = np.diag([4.0, 1.0, -1.0, -4.0])
    b = np.ones(4)
    result = minres(a, b, tol=1e-12, maxit=20)
    _expect(np.allclose(a @ result.x, b, atol=1e-10), "minres residual too large")
    _expect(result.iterations <= 4, f"minres used {result.iterations} iterations")


def _check_translation():
    case = TranslationCase(MaterialParams())
    sim = build_simulation(case, 2, 1, Scheme.CN, 0.1, SolverConfig(method="direct"))
    result = run_transient(sim, 0.2)
    error = l2_velocity_error(sim.spaces, result.final.u, lambda x, y: case.velocity(x, y, result.final.t))
    _expect(error < 1e-8, f"translation drift {error:.3e}")


def _check_unforced_energy():
    base = ManufacturedCase.from_ratios(1.0, 1.0, 1.0)
    case = UnforcedCase(base)
    sim = build_simulation(case, 2, 1, Scheme.CN, 0.05, SolverConfig(method="direct"))
    spaces = sim.spaces
    u0 = interpolate_compound(spaces, lambda x, y: base.profile(x, y))
    u0[spaces.u_fixed] = 0.0
    state = StepState(t=0.0, u=u0, eta=np.zeros(spaces.dim_u))
    e_prev = energy(sim.blocks, state.u, state.eta)
    for _ in range(3):
        state, out = cn_step(state, sim)
        e_new = energy(sim.blocks, state.u, state.eta)
        _expect(e_new <= e_prev * (1 + 1e-12), "energy increased without forcing")
        _expect(abs(out.energy_residual) <= 1e-8 * max(e_prev, 1.0), f"energy residual {out.energy_residual:.3e}")
        e_prev = e_new


INVARIANT_CHECKS = {
    "mesh": [_check_mesh_counts, _check_mesh_euler],
    "spaces": [_check_space_dims, _check_commuting],
    "forms": [_check_rigid_energy],
    "system": [_check_system],
    "stepper": [_check_translation, _check_unforced_energy],
    "krylov": [_check_minres],
}


def run_invariant_checks(groups: Optional[Sequence[str]] = None) -> List[CheckResult]:
    results = []
    for group, checks in INVARIANT_CHECKS.items():
        if groups and group not in groups:
            continue
        for check in checks:
            name = check.__name__.removeprefix("_check_")
            try:
                check()
                results.append(CheckResult(group, name, True))
            except (AssertionError, FsiHdgError) as e:
                logger.warning(f"check {group}/{name} failed: {e}")
                results.append(CheckResult(group, name, False, str(e)))
    return results
