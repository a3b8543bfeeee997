"""
Problem definitions: geometry, boundary tags, boundary conditions, loads and
(when known) closed-form solutions.

- ManufacturedCase: smooth solution on a fluid box below a solid box, all
  exterior boundaries clamped; forcing and interface mismatch are derived
  in closed form.
- PulseCase: channel flow driven by a cosine pressure pulse at the inlet,
  with a spring-supported thin structure on top.
- TranslationCase: uniform rigid translation with traction-free
  boundaries; reproduced exactly by the discretisation.
"""
import logging
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from forms import MaterialParams
from mesh import Mesh, Rectangle, Region, build_structured_mesh, classify_boundary
from spaces import ESSENTIAL, NATURAL, FacetConstraint

logger = logging.getLogger(__name__)

# Geometric tolerance of the boundary predicates
EDGE_TOL = 1e-9

PULSE_MAX = 1.333e4   # dyne / cm^2
PULSE_DURATION = 0.03  # s

Traction = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _near(a, b):
    return np.abs(a - b) < EDGE_TOL


class Case:
    """Base problem: no loads, no exact solution, clamped boundaries."""
    name = "case"
    has_exact = False
    has_interface_traction = False

    def __init__(self, params: MaterialParams, boundary_conditions: Optional[Mapping[str, object]] = None):
        self.params = params
        self.boundary_conditions: Dict[str, object] = dict(self.default_boundary_conditions())
        if boundary_conditions:
            self.boundary_conditions.update(boundary_conditions)

    # geometry
    @property
    def rectangles(self):
        raise NotImplementedError

    def boundary_spec(self) -> Dict[str, Callable]:
        raise NotImplementedError

    def default_boundary_conditions(self) -> Dict[str, object]:
        return {tag: FacetConstraint() for tag in self.boundary_spec()}

    def build_mesh(self, n: int) -> Mesh:
        return classify_boundary(build_structured_mesh(self.rectangles, n), self.boundary_spec())

    def natural_normal_tags(self):
        """Tags whose normal component is traction-driven."""
        return [tag for tag, bc in self.boundary_conditions.items() if bc.normal == NATURAL]

    # loads
    def forcing(self, x, y, t, region) -> Optional[np.ndarray]:
        return None

    def interface_traction(self, x, y, t, normal) -> np.ndarray:
        return np.zeros((2,) + np.shape(x))

    def boundary_traction(self, tag: str, t: float) -> Optional[Traction]:
        return None

    # exact fields
    def velocity(self, x, y, t) -> np.ndarray:
        raise NotImplementedError(f"{self.name} has no closed-form velocity")

    def displacement(self, x, y, t) -> np.ndarray:
        raise NotImplementedError(f"{self.name} has no closed-form displacement")

    def pressure(self, x, y, t) -> np.ndarray:
        raise NotImplementedError(f"{self.name} has no closed-form pressure")


class ManufacturedCase(Case):
    """
    Smooth solution on (0,1)x(-1,0) fluid and (0,1)x(0,0.5) solid.

    u = sin(2t) w, eta = sin(t)^2 w, p = sin(2 pi x) sin(2 pi y) sin(t),
    with w = (sin(2 pi x)^2 sin(8 pi (y+1) / 3),
              -1.5 sin(4 pi x) sin(4 pi (y+1) / 3)^2), which is divergence free.
    """
    name = "manufactured"
    has_exact = True
    has_interface_traction = True

    KAPPA = 8.0 * np.pi / 3.0
    NU = 4.0 * np.pi / 3.0

    @classmethod
    def from_ratios(cls, rho_s: float, delta1: float, delta2: float, alpha: float = 8.0,
                    **kwargs) -> "ManufacturedCase":
        """mu_s = delta1 rho_s and lam_s = delta2 mu_s, unit fluid."""
        mu_s = delta1 * rho_s
        params = MaterialParams(rho_f=1.0, mu_f=1.0, rho_s=rho_s, mu_s=mu_s, lam_s=delta2 * mu_s, alpha=alpha)
        return cls(params, **kwargs)

    @property
    def rectangles(self):
        return [Rectangle(0.0, 1.0, -1.0, 0.0, Region.FLUID), Rectangle(0.0, 1.0, 0.0, 0.5, Region.SOLID)]

    def boundary_spec(self):
        return {
            "fluid_exterior": lambda x, y: y < -EDGE_TOL,
            "solid_exterior": lambda x, y: y > EDGE_TOL,
        }

    # time factors
    @staticmethod
    def _velocity_factor(t):
        return np.sin(2.0 * t), 2.0 * np.cos(2.0 * t)

    @staticmethod
    def _displacement_factor(t):
        return np.sin(t) ** 2

    # spatial profile and derivatives
    def profile(self, x, y) -> np.ndarray:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        w1 = np.sin(2 * np.pi * x) ** 2 * np.sin(self.KAPPA * (y + 1))
        w2 = -1.5 * np.sin(4 * np.pi * x) * np.sin(self.NU * (y + 1)) ** 2
        return np.stack([w1, w2])

    def profile_gradient(self, x, y) -> np.ndarray:
        """[i, j] = d w_i / d x_j."""
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        a, da = np.sin(2 * np.pi * x) ** 2, 2 * np.pi * np.sin(4 * np.pi * x)
        b, db = np.sin(self.KAPPA * (y + 1)), self.KAPPA * np.cos(self.KAPPA * (y + 1))
        c, dc = np.sin(4 * np.pi * x), 4 * np.pi * np.cos(4 * np.pi * x)
        e, de = np.sin(self.NU * (y + 1)) ** 2, self.NU * np.sin(2 * self.NU * (y + 1))
        return np.stack([np.stack([da * b, a * db]), np.stack([-1.5 * dc * e, -1.5 * c * de])])

    def profile_laplacian(self, x, y) -> np.ndarray:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        a, dda = np.sin(2 * np.pi * x) ** 2, 8 * np.pi ** 2 * np.cos(4 * np.pi * x)
        b = np.sin(self.KAPPA * (y + 1))
        c = np.sin(4 * np.pi * x)
        e, dde = np.sin(self.NU * (y + 1)) ** 2, 2 * self.NU ** 2 * np.cos(2 * self.NU * (y + 1))
        lap1 = dda * b - self.KAPPA ** 2 * a * b
        lap2 = -1.5 * (-16 * np.pi ** 2 * c * e + c * dde)
        return np.stack([lap1, lap2])

    def velocity(self, x, y, t):
        return self._velocity_factor(t)[0] * self.profile(x, y)

    def displacement(self, x, y, t):
        return self._displacement_factor(t) * self.profile(x, y)

    def pressure(self, x, y, t):
        return np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y) * np.sin(t)

    def pressure_gradient(self, x, y, t) -> np.ndarray:
        return np.sin(t) * 2 * np.pi * np.stack([np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y),
                                                 np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)])

    def fluid_stress(self, x, y, t) -> np.ndarray:
        g = self.profile_gradient(x, y)
        sym = g + np.swapaxes(g, 0, 1)
        p = self.pressure(x, y, t)
        eye = np.eye(2).reshape((2, 2) + (1,) * np.ndim(x))
        return self.params.mu_f * self._velocity_factor(t)[0] * sym - p * eye

    def solid_stress(self, x, y, t) -> np.ndarray:
        # div w = 0, so the Lame term drops out
        g = self.profile_gradient(x, y)
        return self.params.mu_s * self._displacement_factor(t) * (g + np.swapaxes(g, 0, 1))

    def forcing(self, x, y, t, region):
        w = self.profile(x, y)
        lap = self.profile_laplacian(x, y)
        speed, accel = self._velocity_factor(t)
        p = self.params
        if region == Region.FLUID:
            return p.rho_f * accel * w - p.mu_f * speed * lap + self.pressure_gradient(x, y, t)
        s = self._displacement_factor(t)
        return p.rho_s * accel * w - p.mu_s * s * lap + p.beta_s * s * w

    def interface_traction(self, x, y, t, normal):
        """(sigma_f - sigma_s) n_f on the interface."""
        stress = self.fluid_stress(x, y, t) - self.solid_stress(x, y, t)
        n = np.moveaxis(np.broadcast_to(normal, np.shape(x) + (2,)), -1, 0)
        return np.einsum("ij...,j...->i...", stress, n)


class PulseCase(Case):
    """
    Channel (0,6)x(0,0.5) below a structure (0,6)x(0.5,0.6), driven by
    p_in(t) = (p_max / 2)(1 - cos(2 pi t / t_max)) on the inlet for t <= t_max.
    """
    name = "pulse"

    def __init__(self, params: Optional[MaterialParams] = None, p_max: float = PULSE_MAX,
                 t_max: float = PULSE_DURATION, boundary_conditions=None):
        self.p_max = p_max
        self.t_max = t_max
        super().__init__(params or blood_vessel_params(), boundary_conditions)

    @property
    def rectangles(self):
        return [Rectangle(0.0, 6.0, 0.0, 0.5, Region.FLUID), Rectangle(0.0, 6.0, 0.5, 0.6, Region.SOLID)]

    def boundary_spec(self):
        return {
            "inlet": lambda x, y: _near(x, 0.0) & (y < 0.5),
            "outlet": lambda x, y: _near(x, 6.0) & (y < 0.5),
            "fluid_bottom": lambda x, y: _near(y, 0.0),
            "solid_inout": lambda x, y: (_near(x, 0.0) | _near(x, 6.0)) & (y > 0.5),
            "solid_top": lambda x, y: _near(y, 0.6),
        }

    def default_boundary_conditions(self):
        return {
            "inlet": FacetConstraint(NATURAL, ESSENTIAL, "inlet_pulse"),
            "outlet": FacetConstraint(NATURAL, ESSENTIAL),
            "fluid_bottom": FacetConstraint(ESSENTIAL, NATURAL),
            "solid_inout": FacetConstraint(ESSENTIAL, ESSENTIAL),
            "solid_top": FacetConstraint(NATURAL, ESSENTIAL),
        }

    def inlet_pressure(self, t: float) -> float:
        if t < 0 or t > self.t_max:
            return 0.0
        return 0.5 * self.p_max * (1.0 - np.cos(2.0 * np.pi * t / self.t_max))

    def boundary_traction(self, tag, t):
        bc = self.boundary_conditions.get(tag)
        if bc is None or bc.normal != NATURAL or bc.traction != "inlet_pulse":
            return None
        p_in = self.inlet_pressure(t)
        if p_in == 0.0:
            return None
        return lambda x, y, n: -p_in * np.moveaxis(np.broadcast_to(n, np.shape(x) + (2,)), -1, 0)


class TranslationCase(Case):
    """Rigid translation u = U, eta = t U, p = 0 on the manufactured geometry."""
    name = "translation"
    has_exact = True

    def __init__(self, params: MaterialParams, velocity=(1.0, 0.5), boundary_conditions=None):
        self.drift = np.asarray(velocity, dtype=float)
        super().__init__(params, boundary_conditions)

    @property
    def rectangles(self):
        return [Rectangle(0.0, 1.0, -1.0, 0.0, Region.FLUID), Rectangle(0.0, 1.0, 0.0, 0.5, Region.SOLID)]

    def boundary_spec(self):
        return {
            "fluid_exterior": lambda x, y: y < -EDGE_TOL,
            "solid_exterior": lambda x, y: y > EDGE_TOL,
        }

    def default_boundary_conditions(self):
        return {tag: FacetConstraint(NATURAL, NATURAL) for tag in self.boundary_spec()}

    def _const(self, x, scale=1.0):
        return scale * self.drift.reshape((2,) + (1,) * np.ndim(x)) * np.ones_like(np.asarray(x, dtype=float))

    def velocity(self, x, y, t):
        return self._const(x)

    def displacement(self, x, y, t):
        return self._const(x, t)

    def pressure(self, x, y, t):
        return np.zeros_like(np.asarray(x, dtype=float))

    def forcing(self, x, y, t, region):
        if region == Region.SOLID and self.params.beta_s > 0:
            return self._const(x, self.params.beta_s * t)
        return None


class UnforcedCase(Case):
    """Geometry and boundary conditions of another case with every load removed."""

    def __init__(self, base: Case):
        self.base = base
        self.name = f"{base.name}_unforced"
        super().__init__(base.params, base.boundary_conditions)

    @property
    def rectangles(self):
        return self.base.rectangles

    def boundary_spec(self):
        return self.base.boundary_spec()


def blood_vessel_params() -> MaterialParams:
    """Blood and vessel wall values in cgs units."""
    return MaterialParams(rho_f=1.0, mu_f=0.035, rho_s=1.1, mu_s=0.575e6, lam_s=1.7e6, beta_s=4e6)


CASES = {
    "manufactured": ManufacturedCase,
    "pulse": PulseCase,
    "translation": TranslationCase,
}
