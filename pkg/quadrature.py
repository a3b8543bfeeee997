"""
Quadrature rules on the reference triangle and the unit segment, plus the
shifted Legendre polynomials used as facet moment weights.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Points and positive weights with a guaranteed exactness degree."""
    points: np.ndarray   # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,)
    degree: int

    @property
    def size(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def segment_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1]; weights sum to 1."""
    n = degree // 2 + 1
    x, w = legendre.leggauss(n)
    return QuadratureRule(points=0.5 * (x + 1.0)[:, None], weights=0.5 * w, degree=degree)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """
    Collapsed Gauss rule on the triangle (0,0), (1,0), (0,1); weights sum to 1/2.

    The Duffy map y = v (1 - u) adds one degree in u through its Jacobian.
    """
    n = (degree + 3) // 2
    x, w = legendre.leggauss(n)
    s = 0.5 * (x + 1.0)
    ws = 0.5 * w
    u, v = np.meshgrid(s, s, indexing="ij")
    wu, wv = np.meshgrid(ws, ws, indexing="ij")
    points = np.column_stack([u.ravel(), (v * (1.0 - u)).ravel()])
    weights = (wu * wv * (1.0 - u)).ravel()
    return QuadratureRule(points=points, weights=weights, degree=degree)


def shifted_legendre(s: np.ndarray, degree: int) -> np.ndarray:
    """L_i(s) = P_i(2s - 1) for i <= degree, shape (*s.shape, degree + 1)."""
    return legendre.legvander(2.0 * np.asarray(s, dtype=float) - 1.0, degree)


def volume_degree(k: int) -> int:
    return 2 * k + 2


def facet_degree(k: int) -> int:
    return 2 * k + 1
