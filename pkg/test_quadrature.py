from math import factorial

import numpy as np
import pytest

from quadrature import segment_rule, shifted_legendre, triangle_rule


@pytest.mark.parametrize("degree", range(0, 11))
def test_segment_rule_exactness(degree):
    rule = segment_rule(degree)
    s = rule.points[:, 0]
    assert rule.weights.sum() == pytest.approx(1.0)
    for d in range(degree + 1):
        assert rule.weights @ s ** d == pytest.approx(1.0 / (d + 1), rel=1e-13)


@pytest.mark.parametrize("degree", range(0, 11))
def test_triangle_rule_exactness(degree):
    rule = triangle_rule(degree)
    x, y = rule.points[:, 0], rule.points[:, 1]
    assert rule.weights.sum() == pytest.approx(0.5)
    assert np.all(rule.weights > 0)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            assert rule.weights @ (x ** a * y ** b) == pytest.approx(exact, rel=1e-12)


def test_shifted_legendre_orthogonality():
    rule = segment_rule(12)
    leg = shifted_legendre(rule.points[:, 0], 5)
    gram = np.einsum("q,qi,qj->ij", rule.weights, leg, leg)
    np.testing.assert_allclose(gram, np.diag(1.0 / (2 * np.arange(6) + 1)), atol=1e-14)


def test_shifted_legendre_endpoints():
    leg = shifted_legendre(np.array([0.0, 1.0]), 3)
    np.testing.assert_allclose(leg[1], 1.0)
    np.testing.assert_allclose(leg[0], [1.0, -1.0, 1.0, -1.0])
