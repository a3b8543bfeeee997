"""
Interface-fitted triangular meshes of one or two stacked rectangles.

Facets carry a global orientation: the tangent points from the lower to the
higher vertex index and the global normal is that tangent rotated clockwise.
Each element stores the sign of the global normal relative to its own
outward normal, so normal continuity across a facet is a shared coefficient.
"""
import logging
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Callable, Dict, Mapping, Optional, Sequence

import numpy as np

from errors import ClassificationError, GeometryError

logger = logging.getLogger(__name__)

# Lattice snapping tolerance for rectangle corners
LATTICE_TOL = 1e-9


class Region(IntEnum):
    """Material region of an element."""
    FLUID = 0
    SOLID = 1


class FacetKind(IntEnum):
    """Classification of a facet by its neighbours."""
    INTERIOR_FLUID = 0
    INTERIOR_SOLID = 1
    INTERFACE = 2
    BOUNDARY = 3


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned rectangle (x0, x1) x (y0, y1) filled with one region."""
    x0: float
    x1: float
    y0: float
    y1: float
    region: Region = Region.FLUID

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation with region tags and classified facets."""
    vertices: np.ndarray          # (nv, 2)
    elements: np.ndarray          # (nt, 3), counterclockwise
    regions: np.ndarray           # (nt,) Region values
    facets: np.ndarray            # (nf, 2), sorted vertex pairs
    facet_kinds: np.ndarray       # (nf,) FacetKind values
    facet_elements: np.ndarray    # (nf, 2), -1 where missing
    element_facets: np.ndarray    # (nt, 3), local facet i opposite vertex i
    element_signs: np.ndarray     # (nt, 3), +1 where the global normal points outward
    h: float                      # nominal cell size used in penalty and jump weights
    h_max: float                  # largest element diameter
    boundary_tags: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    @property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    @property
    def facet_lengths(self) -> np.ndarray:
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def facet_tangents(self) -> np.ndarray:
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        return d / self.facet_lengths[:, None]

    @property
    def facet_normals(self) -> np.ndarray:
        t = self.facet_tangents
        return np.column_stack([t[:, 1], -t[:, 0]])

    @property
    def facet_midpoints(self) -> np.ndarray:
        return self.vertices[self.facets].mean(axis=1)

    @property
    def boundary_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_kinds == FacetKind.BOUNDARY)

    @property
    def interface_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_kinds == FacetKind.INTERFACE)

    @property
    def interior_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_kinds != FacetKind.BOUNDARY)

    @property
    def fluid_elements(self) -> np.ndarray:
        return np.flatnonzero(self.regions == Region.FLUID)

    @property
    def solid_elements(self) -> np.ndarray:
        return np.flatnonzero(self.regions == Region.SOLID)

    def facets_tagged(self, *tags: str) -> np.ndarray:
        """Boundary facets carrying any of the given tags."""
        found = [self.boundary_tags[t] for t in tags if t in self.boundary_tags]
        if not found:
            return np.zeros(0, dtype=int)
        return np.sort(np.concatenate(found))

    def facet_tag_names(self) -> np.ndarray:
        """Per-facet tag name, empty for interior facets."""
        names = np.full(self.n_facets, "", dtype=object)
        for tag, ids in self.boundary_tags.items():
            names[ids] = tag
        return names

    def outward_normals(self, facets: np.ndarray) -> np.ndarray:
        """Outward normals of boundary facets with respect to their element."""
        elem = self.facet_elements[facets, 0]
        local = np.argmax(self.element_facets[elem] == facets[:, None], axis=1)
        sign = self.element_signs[elem, local]
        return self.facet_normals[facets] * sign[:, None]


def mesh_from_triangles(vertices: np.ndarray, elements: np.ndarray, regions: Optional[np.ndarray] = None,
                        h: Optional[float] = None) -> Mesh:
    """Build facet topology and orientation data for a given triangle list."""
    vertices = np.asarray(vertices, dtype=float)
    elements = np.array(elements, dtype=int)
    nt = len(elements)
    regions = np.zeros(nt, dtype=int) if regions is None else np.asarray(regions, dtype=int)

    p = vertices[elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    signed = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    scale = max(np.ptp(vertices, axis=0).max(), 1.0) ** 2
    if np.any(np.abs(signed) <= 1e-14 * scale):
        bad = np.flatnonzero(np.abs(signed) <= 1e-14 * scale)
        raise GeometryError(f"degenerate elements: {bad.tolist()}")
    flip = signed < 0
    elements[flip] = elements[flip][:, [0, 2, 1]]

    # local facet i is opposite local vertex i
    local_edges = elements[:, [[1, 2], [2, 0], [0, 1]]]
    pairs = np.sort(local_edges.reshape(-1, 2), axis=1)
    facets, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    element_facets = inverse.reshape(nt, 3)
    nf = len(facets)

    counts = np.bincount(inverse, minlength=nf)
    if np.any(counts > 2):
        raise GeometryError(f"non-manifold facets: {np.flatnonzero(counts > 2).tolist()}")

    owners = np.repeat(np.arange(nt), 3)
    order = np.argsort(inverse, kind="stable")
    fs, es = inverse[order], owners[order]
    first = np.r_[True, fs[1:] != fs[:-1]]
    facet_elements = -np.ones((nf, 2), dtype=int)
    facet_elements[fs[first], 0] = es[first]
    facet_elements[fs[~first], 1] = es[~first]

    tangent = vertices[facets[:, 1]] - vertices[facets[:, 0]]
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])
    midpoint = vertices[facets].mean(axis=1)
    centroid = vertices[elements].mean(axis=1)
    outward = np.einsum("eij,eij->ei", normal[element_facets],
                        midpoint[element_facets] - centroid[:, None, :])
    element_signs = np.where(outward > 0, 1, -1)

    kinds = np.full(nf, FacetKind.BOUNDARY, dtype=int)
    interior = facet_elements[:, 1] >= 0
    r0 = regions[facet_elements[:, 0]]
    r1 = regions[np.where(interior, facet_elements[:, 1], facet_elements[:, 0])]
    kinds[interior & (r0 == r1) & (r0 == Region.FLUID)] = FacetKind.INTERIOR_FLUID
    kinds[interior & (r0 == r1) & (r0 == Region.SOLID)] = FacetKind.INTERIOR_SOLID
    kinds[interior & (r0 != r1)] = FacetKind.INTERFACE

    boundary = np.flatnonzero(kinds == FacetKind.BOUNDARY)
    owner_region = regions[facet_elements[boundary, 0]]
    tags: Dict[str, np.ndarray] = {}
    fluid_b = boundary[owner_region == Region.FLUID]
    solid_b = boundary[owner_region == Region.SOLID]
    if len(fluid_b):
        tags["fluid_exterior"] = fluid_b
    if len(solid_b):
        tags["solid_exterior"] = solid_b

    edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    h_max = float(np.hypot(edges[..., 0], edges[..., 1]).max())

    return Mesh(
        vertices=vertices,
        elements=elements,
        regions=regions,
        facets=facets,
        facet_kinds=kinds,
        facet_elements=facet_elements,
        element_facets=element_facets,
        element_signs=element_signs,
        h=float(h) if h is not None else h_max,
        h_max=h_max,
        boundary_tags=tags,
    )


def _lattice(value: float, n: int) -> int:
    scaled = value * n
    snapped = int(round(scaled))
    if abs(scaled - snapped) > LATTICE_TOL * max(1.0, abs(scaled)):
        raise GeometryError(f"coordinate {value} is not a multiple of 1/{n}")
    return snapped


def _check_layout(rectangles: Sequence[Rectangle]) -> None:
    for r in rectangles:
        if r.x1 <= r.x0 or r.y1 <= r.y0:
            raise GeometryError(f"empty rectangle {r}")
    if len(rectangles) == 1:
        return
    if len(rectangles) != 2:
        raise GeometryError(f"expected one or two rectangles, got {len(rectangles)}")
    a, b = rectangles
    same_x = np.isclose(a.x0, b.x0) and np.isclose(a.x1, b.x1)
    same_y = np.isclose(a.y0, b.y0) and np.isclose(a.y1, b.y1)
    stacked = same_x and (np.isclose(a.y1, b.y0) or np.isclose(b.y1, a.y0))
    side = same_y and (np.isclose(a.x1, b.x0) or np.isclose(b.x1, a.x0))
    if not (stacked or side):
        raise GeometryError("rectangles must share one full edge")


def build_structured_mesh(rectangles: Sequence[Rectangle], n: int) -> Mesh:
    """
    Triangulate the union of rectangles with n cells per unit length.

    Every lattice cell is split along its lower-left to upper-right diagonal.
    """
    if n < 1:
        raise GeometryError(f"n must be >= 1, got {n}")
    _check_layout(rectangles)

    keys, cells, cell_regions = [], [], []
    for rect in rectangles:
        i0, i1 = _lattice(rect.x0, n), _lattice(rect.x1, n)
        j0, j1 = _lattice(rect.y0, n), _lattice(rect.y1, n)
        jj, ii = np.meshgrid(np.arange(j0, j1 + 1), np.arange(i0, i1 + 1), indexing="ij")
        keys.append(np.column_stack([jj.ravel(), ii.ravel()]))
        cj, ci = np.meshgrid(np.arange(j0, j1), np.arange(i0, i1), indexing="ij")
        cells.append(np.column_stack([cj.ravel(), ci.ravel()]))
        cell_regions.append(np.full(cj.size, int(rect.region)))

    # vertices ordered row by row (y first, then x)
    lattice = np.unique(np.vstack(keys), axis=0)
    vertices = np.column_stack([lattice[:, 1], lattice[:, 0]]) / float(n)
    lookup = {(int(j), int(i)): v for v, (j, i) in enumerate(lattice)}

    cells = np.vstack(cells)
    cell_regions = np.concatenate(cell_regions)
    v00 = np.array([lookup[(j, i)] for j, i in cells])
    v10 = np.array([lookup[(j, i + 1)] for j, i in cells])
    v11 = np.array([lookup[(j + 1, i + 1)] for j, i in cells])
    v01 = np.array([lookup[(j + 1, i)] for j, i in cells])
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    elements = np.empty((2 * len(cells), 3), dtype=int)
    elements[0::2] = lower
    elements[1::2] = upper
    regions = np.repeat(cell_regions, 2)

    mesh = mesh_from_triangles(vertices, elements, regions, h=1.0 / n)
    total = sum(r.area for r in rectangles)
    if abs(mesh.areas.sum() - total) > 1e-12 * total:
        raise GeometryError("element areas do not add up to the rectangle area")
    logger.info(f"Built mesh n={n}: {mesh.n_vertices} vertices, {mesh.n_elements} elements, "
                f"{mesh.n_facets} facets, {len(mesh.interface_facets)} interface facets")
    return mesh


BoundaryPredicate = Callable[[np.ndarray, np.ndarray], np.ndarray]


def classify_boundary(mesh: Mesh, boundary_spec: Mapping[str, BoundaryPredicate]) -> Mesh:
    """
    Tag every boundary facet with exactly one named segment.

    Predicates receive facet midpoint coordinates (x, y) as arrays and return
    a boolean mask.
    """
    boundary = mesh.boundary_facets
    mid = mesh.facet_midpoints[boundary]
    hits = np.zeros(len(boundary), dtype=int)
    tags: Dict[str, np.ndarray] = {}
    for name, predicate in boundary_spec.items():
        mask = np.asarray(predicate(mid[:, 0], mid[:, 1]), dtype=bool)
        hits += mask
        if mask.any():
            tags[name] = boundary[mask]

    untagged = boundary[hits == 0]
    doubled = boundary[hits > 1]
    if len(untagged) or len(doubled):
        parts = []
        if len(untagged):
            parts.append(f"untagged facets {untagged.tolist()}")
        if len(doubled):
            parts.append(f"facets tagged more than once {doubled.tolist()}")
        raise ClassificationError("; ".join(parts), facets=np.concatenate([untagged, doubled]))
    return replace(mesh, boundary_tags=tags)


def write_mesh(mesh: Mesh, path: Path) -> None:
    """Dump the mesh as plain text: vertices, elements and facets sections."""
    names = mesh.facet_tag_names()
    kind_names = {
        FacetKind.INTERIOR_FLUID: "interior_fluid",
        FacetKind.INTERIOR_SOLID: "interior_solid",
        FacetKind.INTERFACE: "interface",
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g}\n")
        f.write(f"elements {mesh.n_elements}\n")
        for (a, b, c), r in zip(mesh.elements, mesh.regions):
            f.write(f"{a} {b} {c} {Region(r).name.lower()}\n")
        f.write(f"facets {mesh.n_facets}\n")
        for i, (a, b) in enumerate(mesh.facets):
            kind = FacetKind(mesh.facet_kinds[i])
            label = names[i] if kind == FacetKind.BOUNDARY else kind_names[kind]
            f.write(f"{a} {b} {label}\n")
