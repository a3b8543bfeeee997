"""
Case configuration: pydantic models, named presets, TOML parsing and
environment overrides.
"""
import copy
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

from errors import ConfigError
from forms import MaterialParams

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

OUTPUT_ENV = "FSIHDG_OUT"
LOG_LEVEL_ENV = "FSIHDG_LOG_LEVEL"


class Experiment(str, Enum):
    """Which driver a configuration feeds."""
    CONVERGE = "converge"  # mesh sequence over a parameter grid
    PULSE2D = "pulse2d"  # pressure pulse benchmark with line samples
    SINGLE = "single"  # one transient run with diagnostics


class CaseKind(str, Enum):
    MANUFACTURED = "manufactured"
    PULSE = "pulse"
    TRANSLATION = "translation"


class Scheme(str, Enum):
    """Time discretisation."""
    CN = "cn"  # Crank-Nicolson, second order
    BDF3 = "bdf3"  # third order backward differences


class BoundaryKind(str, Enum):
    ESSENTIAL = "essential0"  # homogeneous Dirichlet on the component
    NATURAL = "natural"  # traction-driven component


class TractionKind(str, Enum):
    NONE = "none"  # traction free
    INLET_PULSE = "inlet_pulse"  # -p_in(t) n with the cosine pulse


class BoundaryCondition(BaseModel):
    """Boundary condition of one tagged boundary segment."""
    normal: BoundaryKind = Field(BoundaryKind.ESSENTIAL, description="Condition on v.n.")
    tangential: BoundaryKind = Field(BoundaryKind.ESSENTIAL, description="Condition on the tangential trace.")
    traction: TractionKind = Field(TractionKind.NONE, description="Normal traction when the normal part is natural.")

    model_config = {"extra": "forbid", "use_enum_values": True}


class SolverConfig(BaseModel):
    """Linear solver settings."""
    tol: float = Field(1e-8, gt=0, lt=1, description="Relative reduction of the preconditioned residual.")
    maxit: int = Field(2000, gt=0, description="MinRes iteration limit.")
    backend: Literal["direct", "amg"] = Field("direct", description="Inverse used for the auxiliary and jump blocks.")
    velocity_block: Literal["exact", "auxiliary"] = Field("exact", description="Velocity block of the preconditioner.")
    method: Literal["minres", "direct"] = Field("minres", description="Krylov solve or a direct oracle solve.")
    amg_levels: int = Field(10, ge=1, description="Maximum V-cycle depth.")
    amg_coarse_size: int = Field(50, ge=1, description="Stop coarsening below this size.")

    model_config = {"extra": "forbid"}


class ParameterGrid(BaseModel):
    """Solid parameters of the manufactured case: mu_s = delta1 rho_s, lam_s = delta2 mu_s."""
    rho_s: List[float] = Field(default_factory=lambda: [1.0])
    delta1: List[float] = Field(default_factory=lambda: [1.0])
    delta2: List[float] = Field(default_factory=lambda: [1.0])

    model_config = {"extra": "forbid"}

    @field_validator("rho_s", "delta1", "delta2")
    @classmethod
    def positive_entries(cls, v):
        if not v or any(x <= 0 for x in v):
            raise ValueError("must be a non-empty list of positive numbers")
        return v

    def combinations(self):
        return [(r, d1, d2) for r in self.rho_s for d1 in self.delta1 for d2 in self.delta2]


class PulseSettings(BaseModel):
    p_max: float = Field(1.333e4, gt=0, description="Peak inlet pressure (dyne/cm^2).")
    t_max: float = Field(0.03, gt=0, description="Pulse duration (s).")
    samples: int = Field(200, ge=2, description="Equispaced line samples.")

    model_config = {"extra": "forbid"}


class CaseConfig(BaseModel):
    """Everything one run of the CLI needs."""
    experiment: Experiment = Experiment.SINGLE
    case: CaseKind = CaseKind.MANUFACTURED
    scheme: Scheme = Scheme.CN
    k: int = Field(1, ge=1, le=4, description="Velocity polynomial degree.")
    n: int = Field(10, ge=1, description="Cells per unit length for single and pulse runs.")
    meshes: List[int] = Field(default_factory=lambda: [10, 20, 40], description="Mesh sequence for converge.")
    dt: Union[Literal["h"], float] = Field("h", description="Time step, or 'h' for dt = 1/n.")
    final_time: float = Field(0.3, gt=0, description="Final time T.")
    alpha: float = Field(8.0, gt=0, description="HDG penalty factor.")
    bootstrap_cn: bool = Field(False, description="Start BDF3 with CN steps instead of exact data.")
    jobs: int = Field(1, ge=1, description="Parallel workers for parameter grids.")
    output_dir: str = Field("results", description="Directory for CSV output.")
    material: Optional[MaterialParams] = None
    grid: ParameterGrid = Field(default_factory=ParameterGrid)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    pulse: PulseSettings = Field(default_factory=PulseSettings)
    boundary: Dict[str, BoundaryCondition] = Field(default_factory=dict)

    model_config = {"extra": "forbid", "use_enum_values": False}

    @field_validator("dt")
    @classmethod
    def positive_step(cls, v):
        if v != "h" and not v > 0:
            raise ValueError("time step must be positive")
        return v

    @field_validator("meshes")
    @classmethod
    def valid_meshes(cls, v):
        if not v or any(n < 1 for n in v):
            raise ValueError("must list at least one mesh with n >= 1")
        return v

    def time_step(self, n: Optional[int] = None) -> float:
        return 1.0 / (n or self.n) if self.dt == "h" else float(self.dt)


EXPECTED_TAGS = {
    CaseKind.MANUFACTURED: {"fluid_exterior", "solid_exterior"},
    CaseKind.TRANSLATION: {"fluid_exterior", "solid_exterior"},
    CaseKind.PULSE: {"inlet", "outlet", "fluid_bottom", "solid_inout", "solid_top"},
}


def check_config(config: CaseConfig) -> List[str]:
    """Cross-field checks; returns every violation found."""
    errors = []
    meshes = config.meshes if config.experiment == Experiment.CONVERGE else [config.n]
    for n in meshes:
        dt = config.time_step(n)
        if config.final_time < dt * (1 - 1e-12):
            errors.append(f"final_time: T={config.final_time} is smaller than dt={dt} (n={n})")
    unknown = set(config.boundary) - EXPECTED_TAGS[config.case]
    if unknown:
        errors.append(f"boundary: unknown tags {sorted(unknown)} for case '{config.case.value}'")
    for tag, bc in config.boundary.items():
        if bc.traction != TractionKind.NONE.value and bc.normal != BoundaryKind.NATURAL.value:
            errors.append(f"boundary.{tag}: traction needs a natural normal condition")
    if config.scheme == Scheme.BDF3 and config.case == CaseKind.PULSE and not config.bootstrap_cn:
        errors.append("bootstrap_cn: BDF3 without an exact solution requires bootstrap_cn = true")
    if config.experiment == Experiment.PULSE2D and config.case != CaseKind.PULSE:
        errors.append(f"case: pulse2d needs case = 'pulse', got '{config.case.value}'")
    if config.experiment == Experiment.CONVERGE and config.case == CaseKind.PULSE:
        errors.append("case: converge needs a case with a closed-form solution")
    return errors


def _validation_messages(error: ValidationError) -> List[str]:
    return [f"{'.'.join(str(p) for p in e['loc']) or 'config'}: {e['msg']}" for e in error.errors()]


def build_config(data: dict) -> CaseConfig:
    """Validate a raw mapping; raises ConfigError carrying all messages."""
    try:
        config = CaseConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_validation_messages(e)) from e
    errors = check_config(config)
    if errors:
        raise ConfigError(errors)
    return config


def parse_config(path: Union[str, Path]) -> CaseConfig:
    """Read and validate a TOML case file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError([f"{path}: {e}"]) from e
    config = build_config(data)
    logger.info(f"Loaded {path.name}: experiment={config.experiment.value}, case={config.case.value}, "
                f"scheme={config.scheme.value}, k={config.k}")
    return config


# Named starting points
PRESETS = {
    "example1": {
        "experiment": "converge", "case": "manufactured", "scheme": "cn", "k": 1,
        "meshes": [10, 20, 40], "dt": "h", "final_time": 0.3,
        "grid": {"rho_s": [1.0], "delta1": [1.0], "delta2": [1.0]},
        "solver": {"tol": 1e-8},
    },
    "example1_bdf3": {
        "experiment": "converge", "case": "manufactured", "scheme": "bdf3", "k": 2,
        "meshes": [10, 20, 40], "dt": "h", "final_time": 0.3,
        "grid": {"rho_s": [1.0], "delta1": [1.0], "delta2": [1.0]},
        "solver": {"tol": 1e-8},
    },
    "example2": {
        "experiment": "pulse2d", "case": "pulse", "scheme": "cn", "k": 1, "n": 10,
        "dt": 1e-4, "final_time": 1.2e-2,
        "material": {"rho_f": 1.0, "mu_f": 0.035, "rho_s": 1.1, "mu_s": 0.575e6, "lam_s": 1.7e6, "beta_s": 4e6},
        "solver": {"tol": 1e-6},
    },
}


def get_preset(name: str) -> dict:
    """Raw preset mapping, falling back to example1."""
    return copy.deepcopy(PRESETS.get(name, PRESETS["example1"]))


def resolve_output_dir(cli_value: Optional[str] = None, config: Optional[CaseConfig] = None) -> Path:
    """FSIHDG_OUT beats --out, which beats the config file."""
    value = os.getenv(OUTPUT_ENV) or cli_value or (config.output_dir if config else "results")
    path = Path(value)
    path.mkdir(parents=True, exist_ok=True)
    return path


def log_level() -> str:
    return os.getenv(LOG_LEVEL_ENV, "INFO").upper()
