import numpy as np
import pytest

from cases import ManufacturedCase, TranslationCase
from forms import MaterialParams
from mesh import Rectangle, Region, build_structured_mesh, mesh_from_triangles
from spaces import NATURAL, FacetConstraint, build_spaces

FREE = FacetConstraint(NATURAL, NATURAL)


@pytest.fixture
def unit_square():
    """Unit square split into two fluid triangles."""
    return build_structured_mesh([Rectangle(0.0, 1.0, 0.0, 1.0, Region.FLUID)], 1)


@pytest.fixture
def fluid_square():
    return build_structured_mesh([Rectangle(0.0, 1.0, 0.0, 1.0, Region.FLUID)], 4)


@pytest.fixture
def two_triangles():
    """One fluid and one solid triangle sharing the diagonal of the unit square."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    elements = np.array([[0, 1, 2], [0, 2, 3]])
    return mesh_from_triangles(vertices, elements, np.array([Region.FLUID, Region.SOLID]), h=1.0)


@pytest.fixture
def manufactured():
    return ManufacturedCase.from_ratios(1.0, 1.0, 1.0)


@pytest.fixture
def fsi_mesh(manufactured):
    return manufactured.build_mesh(2)


@pytest.fixture
def translation():
    return TranslationCase(MaterialParams())


def free_spaces(mesh, k):
    """Spaces without any boundary constraint."""
    return build_spaces(mesh, k, {tag: FREE for tag in mesh.boundary_tags})


def rng(seed=0):
    return np.random.default_rng(seed)
