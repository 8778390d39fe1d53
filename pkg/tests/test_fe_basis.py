import numpy as np
import pytest

from edgctl.errors import CapabilityError
from edgctl.fe_basis import (EdgeBasis, SimplexBasis, edge_quadrature,
                             eval_simplex, eval_simplex_grad,
                             triangle_quadrature)


def _ref_points(rng, n):
    # uniform on the reference triangle by rejection
    pts = []
    while len(pts) < n:
        x, y = rng.random(2)
        if x + y <= 1.0:
            pts.append((x, y))
    return np.array(pts)


@pytest.mark.parametrize("degree", range(5))
def test_simplex_dim(degree):
    basis = SimplexBasis(degree)
    assert basis.dim == (degree + 1) * (degree + 2) // 2


@pytest.mark.parametrize("degree", range(5))
def test_simplex_spans_monomials(degree):
    basis = SimplexBasis(degree)
    rule = triangle_quadrature(2 * degree)
    vals = basis.eval(rule.points)
    rng = np.random.default_rng(3)
    check = _ref_points(rng, 20)
    check_vals = basis.eval(check)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            target = rule.points[:, 0] ** a * rule.points[:, 1] ** b
            # orthonormal basis: projection coefficients are plain moments
            coeff = np.einsum("iq,q,q->i", vals, target, rule.weights)
            recon = coeff @ check_vals
            assert np.abs(recon - check[:, 0] ** a * check[:, 1] ** b).max() \
                < 1e-12


def test_degree0_constant():
    basis = SimplexBasis(0)
    pts = np.array([[0.1, 0.2], [0.3, 0.5]])
    vals = basis.eval(pts)
    assert np.allclose(vals, vals[0, 0])
    assert np.allclose(basis.grad(pts), 0.0)


def test_degree1_vertex_values_nonsingular():
    basis = SimplexBasis(1)
    V = basis.eval(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    assert abs(np.linalg.det(V)) > 1e-8


@pytest.mark.parametrize("degree", range(1, 5))
def test_gradients_match_finite_differences(degree):
    basis = SimplexBasis(degree)
    rng = np.random.default_rng(11)
    pts = 0.1 + 0.6 * _ref_points(rng, 50)
    grads = eval_simplex_grad(basis, pts)
    h = 1e-6
    for c, e in ((0, np.array([h, 0.0])), (1, np.array([0.0, h]))):
        fd = (eval_simplex(basis, pts + e) - eval_simplex(basis, pts - e)) \
            / (2 * h)
        assert np.abs(grads[:, :, c] - fd).max() < 1e-6


def test_simplex_degree_cap():
    with pytest.raises(CapabilityError):
        SimplexBasis(5)


@pytest.mark.parametrize("exactness", range(0, 16))
def test_triangle_quadrature_invariants(exactness):
    rule = triangle_quadrature(exactness)
    assert np.all(rule.weights > 0)
    assert abs(rule.weights.sum() - 0.5) < 1e-14
    from math import factorial
    for a in range(exactness + 1):
        for b in range(exactness + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            got = np.sum(rule.weights * rule.points[:, 0] ** a
                         * rule.points[:, 1] ** b)
            assert abs(got - exact) < 1e-13 * max(1.0, abs(exact))


def test_triangle_quadrature_example():
    got = np.sum(triangle_quadrature(3).weights
                 * triangle_quadrature(3).points[:, 0] ** 2
                 * triangle_quadrature(3).points[:, 1])
    assert abs(got - 1.0 / 60.0) < 1e-14


@pytest.mark.parametrize("exactness", range(0, 16))
def test_edge_quadrature_gauss_property(exactness):
    rule = edge_quadrature(exactness)
    n = len(rule.points)
    assert abs(rule.weights.sum() - 1.0) < 1e-14
    # n Gauss points are exact through degree 2n-1
    for d in range(2 * n):
        got = np.sum(rule.weights * rule.points ** d)
        assert abs(got - 1.0 / (d + 1)) < 1e-14


def test_quadrature_capability_errors():
    with pytest.raises(CapabilityError):
        triangle_quadrature(101)
    with pytest.raises(CapabilityError):
        edge_quadrature(-1)


@pytest.mark.parametrize("degree", range(5))
def test_reference_mass_matrices_spd(degree):
    tri = SimplexBasis(degree)
    rule = triangle_quadrature(2 * degree)
    vals = tri.eval(rule.points)
    mass = np.einsum("iq,jq,q->ij", vals, vals, rule.weights)
    np.linalg.cholesky(mass)  # SPD iff this succeeds
    assert np.allclose(mass, np.eye(tri.dim), atol=1e-13)

    edge = EdgeBasis(degree)
    erule = edge_quadrature(2 * degree)
    evals = edge.eval(erule.points)
    emass = np.einsum("iq,jq,q->ij", evals, evals, erule.weights)
    np.linalg.cholesky(emass)


@pytest.mark.parametrize("degree", range(1, 5))
def test_edge_basis_nodal_with_endpoints(degree):
    basis = EdgeBasis(degree)
    assert basis.dim == degree + 1
    assert basis.nodes[0] == 0.0 and basis.nodes[-1] == 1.0
    vals = basis.eval(basis.nodes)
    assert np.allclose(vals, np.eye(basis.dim), atol=1e-12)
    # spans P^degree: reproduce monomials through interpolation
    t = np.linspace(0.07, 0.91, 13)
    for d in range(degree + 1):
        recon = (basis.nodes ** d) @ basis.eval(t)
        assert np.abs(recon - t ** d).max() < 1e-12
