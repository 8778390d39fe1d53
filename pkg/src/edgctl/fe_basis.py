"""Polynomial bases on the reference triangle/edge and quadrature rules.

Reference triangle: vertices (0,0), (1,0), (0,1), measure 1/2.
Reference edge: the interval [0,1].

Element bases are orthonormal modal bases expressed in monomials; the
orthogonalization is done in exact rational arithmetic so the reference
mass matrix is the identity to machine precision, which makes local L2
projections diagonal.  Edge (trace) bases are nodal Lagrange bases at
Gauss-Lobatto points: the endpoint values are degrees of freedom, so
inter-edge continuity can be imposed by sharing endpoint dofs.

Triangle quadrature is a collapsed Gauss-Legendre x Gauss-Jacobi(1,0)
product rule, exact for any requested total polynomial degree.  Edge
quadrature is Gauss-Legendre on [0,1].
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import factorial, isqrt, sqrt

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import CapabilityError

MAX_DEGREE = 4
MAX_EXACTNESS = 100


# -- quadrature ----------------------------------------------------------------


@dataclass(frozen=True)
class QuadRule:
    """Quadrature points/weights on a reference element.

    points: (n, 2) for triangles, (n,) for edges; weights sum to the
    reference measure; polynomials of total degree <= exactness are
    integrated exactly.
    """

    points: np.ndarray
    weights: np.ndarray
    exactness: int


@lru_cache(maxsize=None)
def triangle_quadrature(exactness: int) -> QuadRule:
    """Rule on the reference triangle, exact for total degree `exactness`.

    Built by collapsing a tensor rule on [0,1]^2 through the Duffy map
    (a, b) -> (a(1-b), b); the (1-b) Jacobian is absorbed into a
    Gauss-Jacobi rule, so all points are strictly interior and weights
    positive.
    """
    if exactness < 0 or exactness > MAX_EXACTNESS:
        raise CapabilityError(
            f"triangle quadrature supports exactness 0..{MAX_EXACTNESS}")
    n = (int(exactness) + 2) // 2  # 2n-1 >= exactness per direction
    xa, wa = roots_legendre(n)
    xa = 0.5 * (xa + 1.0)
    wa = 0.5 * wa
    xb, wb = roots_jacobi(n, 1.0, 0.0)  # weight (1-t) on [-1,1]
    xb = 0.5 * (xb + 1.0)
    wb = 0.25 * wb                      # includes the (1-b) Jacobian factor
    A, B = np.meshgrid(xa, xb, indexing="ij")
    pts = np.stack([(A * (1.0 - B)).ravel(), B.ravel()], axis=1)
    wts = np.outer(wa, wb).ravel()
    return QuadRule(points=pts, weights=wts, exactness=int(exactness))


@lru_cache(maxsize=None)
def edge_quadrature(exactness: int) -> QuadRule:
    """Gauss-Legendre rule on [0,1], exact for degree `exactness`."""
    if exactness < 0 or exactness > MAX_EXACTNESS:
        raise CapabilityError(
            f"edge quadrature supports exactness 0..{MAX_EXACTNESS}")
    n = (int(exactness) + 2) // 2
    x, w = roots_legendre(n)
    return QuadRule(points=0.5 * (x + 1.0), weights=0.5 * w,
                    exactness=int(exactness))


def assembly_exactness(k: int) -> int:
    """Default quadrature exactness used in assembly for degree-k fluxes.

    Products of two degree-(k+1) polynomials with a smooth non-polynomial
    coefficient cannot be integrated exactly; 2(k+2)+2 over-integrates
    them enough that the consistency error is negligible next to the
    discretization error.
    """
    return 2 * (k + 2) + 2


# -- simplex basis ---------------------------------------------------------------


def _monomial_exponents(degree):
    return [(d - b, b) for d in range(degree + 1) for b in range(d + 1)]


def _tri_moment(a, b):
    # integral of x^a y^b over the reference triangle
    return Fraction(factorial(a) * factorial(b), factorial(a + b + 2))


@lru_cache(maxsize=None)
def _orthonormal_coeffs(degree):
    exps = _monomial_exponents(degree)
    nm = len(exps)
    gram = [[_tri_moment(exps[i][0] + exps[j][0], exps[i][1] + exps[j][1])
             for j in range(nm)] for i in range(nm)]

    def dot(u, v):
        return sum(u[i] * gram[i][j] * v[j] for i in range(nm) for j in range(nm))

    basis = []
    for i in range(nm):
        v = [Fraction(0)] * nm
        v[i] = Fraction(1)
        for u in basis:
            c = dot(v, u) / dot(u, u)
            v = [vi - c * ui for vi, ui in zip(v, u)]
        basis.append(v)
    coeffs = np.array(
        [[float(vi) / sqrt(float(dot(v, v))) for vi in v] for v in basis])
    return coeffs, np.array(exps, dtype=np.int64)


class SimplexBasis:
    """Orthonormal modal basis for P^degree on the reference triangle."""

    descriptor = "orthonormal modal (monomial expansion, exact Gram-Schmidt)"

    def __init__(self, degree: int):
        if degree < 0 or degree > MAX_DEGREE:
            raise CapabilityError(
                f"simplex basis supports degree 0..{MAX_DEGREE}")
        self.degree = int(degree)
        self.dim = (degree + 1) * (degree + 2) // 2
        self._coeffs, self._exps = _orthonormal_coeffs(self.degree)

    def eval(self, pts) -> np.ndarray:
        """Basis values; shape (dim, npts)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        powers = (pts[:, 0][None, :] ** self._exps[:, 0][:, None]
                  * pts[:, 1][None, :] ** self._exps[:, 1][:, None])
        return self._coeffs @ powers

    def grad(self, pts) -> np.ndarray:
        """Reference-coordinate gradients; shape (dim, npts, 2)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        a = self._exps[:, 0][:, None]
        b = self._exps[:, 1][:, None]
        with np.errstate(invalid="ignore"):
            dx = np.where(a > 0, a * x[None, :] ** np.maximum(a - 1, 0)
                          * y[None, :] ** b, 0.0)
            dy = np.where(b > 0, b * x[None, :] ** a
                          * y[None, :] ** np.maximum(b - 1, 0), 0.0)
        return np.stack([self._coeffs @ dx, self._coeffs @ dy], axis=2)


def eval_simplex(basis: SimplexBasis, pts) -> np.ndarray:
    return basis.eval(pts)


def eval_simplex_grad(basis: SimplexBasis, pts) -> np.ndarray:
    return basis.grad(pts)


# -- edge basis ------------------------------------------------------------------


@lru_cache(maxsize=None)
def _lobatto_nodes(degree):
    if degree == 0:
        return np.array([0.5])
    if degree == 1:
        return np.array([0.0, 1.0])
    leg = np.polynomial.legendre.Legendre.basis(degree)
    interior = np.sort(leg.deriv().roots())
    return np.concatenate([[0.0], 0.5 * (interior + 1.0), [1.0]])


class EdgeBasis:
    """Nodal Lagrange basis for P^degree on [0,1] at Gauss-Lobatto nodes.

    For degree >= 1 the first/last dofs sit at the endpoints 0 and 1,
    which is what the trace-continuity bookkeeping relies on.
    """

    def __init__(self, degree: int):
        if degree < 0 or degree > MAX_DEGREE:
            raise CapabilityError(f"edge basis supports degree 0..{MAX_DEGREE}")
        self.degree = int(degree)
        self.dim = degree + 1
        self.nodes = _lobatto_nodes(self.degree)
        vand = self.nodes[:, None] ** np.arange(self.dim)[None, :]
        self._coeffs = np.linalg.inv(vand).T  # (dim, dim): basis i -> poly coeffs

    def eval(self, t) -> np.ndarray:
        """Basis values at parameters t in [0,1]; shape (dim, npts)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        powers = t[None, :] ** np.arange(self.dim)[:, None]
        return self._coeffs @ powers
