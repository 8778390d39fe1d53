"""Catalog of control-problem data and stabilization rules.

A ProblemSpec collects the diffusion coefficient eps, the control weight
gamma, the velocity field beta with its analytic divergence, the source
f, the tracking target y_d, and the rule producing the face
stabilization tau1.  The adjoint-side stabilization is always
tau2 = tau1 - beta.n, enforced pointwise, which is what makes the
discretize-then-optimize and optimize-then-discretize routes coincide.

All data callables are vectorized: they accept (..., 2) point arrays and
return scalar arrays (or (..., 2) for vector fields).

Catalog entries (unit square, gamma = 1, the same smooth velocity
beta = [-x1^2 sin x2, cos x1 e^{x2}] throughout):

* example1-high: eps=1, f=0, y_d=1 (smooth tracking target)
* example1-low:  eps=1, f=0, y_d=(x1^2+x2^2)^(-1/3) (corner singularity)
* example2:      eps=1e-6, f=x1 x2, y_d=1 (convection dominated)
* zero:          eps=1, f=0, y_d=0
* mms-trig:      boundary-value mode with manufactured state
                 y = sin(pi x1) sin(pi x2), g = 0
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError
from .fe_basis import assembly_exactness, edge_quadrature, triangle_quadrature
from .mesh import Mesh

Scalar = Callable[[np.ndarray], np.ndarray]
Vector = Callable[[np.ndarray], np.ndarray]


def _const(c):
    def fn(pts):
        pts = np.asarray(pts, dtype=float)
        return np.full(pts.shape[:-1], float(c))
    return fn


_TAU_SAMPLES = np.linspace(0.0, 1.0, 33)


def default_tau1_rule(beta):
    """Per-face constant tau1 = 1 + max ||beta|| over the closed face.

    The maximum is taken over a fixed uniform sampling of the segment
    (endpoints included), so tau1 is an intrinsic function of the face:
    both adjacent elements and every quadrature choice see the same
    value.  Guarantees tau2 = tau1 - beta.n >= 1 at every face point.

    A rule is a callable ``rule(va, vb) -> float`` of the face endpoints;
    the optional vectorized form ``rule.batch(va, vb)`` maps (F, 2) + (F, 2)
    endpoint arrays to (F,) values.
    """
    def rule(va, vb):
        va = np.asarray(va, dtype=float)
        vb = np.asarray(vb, dtype=float)
        pts = va[None, :] + _TAU_SAMPLES[:, None] * (vb - va)[None, :]
        return 1.0 + float(np.max(np.linalg.norm(beta(pts), axis=-1)))

    def batch(va, vb):
        va = np.asarray(va, dtype=float)
        vb = np.asarray(vb, dtype=float)
        pts = (va[:, None, :]
               + _TAU_SAMPLES[None, :, None] * (vb - va)[:, None, :])
        return 1.0 + np.linalg.norm(beta(pts), axis=-1).max(axis=1)

    rule.batch = batch
    return rule


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficients and data of one control (or state-only) problem."""

    name: str
    epsilon: float
    gamma: float
    beta: Vector
    div_beta: Scalar
    f: Scalar
    y_d: Scalar
    mode: str = "control"  # 'control' | 'state_only'
    tau1_rule: Callable = None
    boundary_data: Optional[Scalar] = None   # g, state_only mode
    exact_y: Optional[Scalar] = None
    exact_grad_y: Optional[Vector] = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        if self.gamma <= 0:
            raise ConfigurationError("gamma must be positive")
        if self.mode not in ("control", "state_only"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.tau1_rule is None:
            object.__setattr__(self, "tau1_rule", default_tau1_rule(self.beta))

    def exact_q(self, pts):
        """Exact flux -eps grad y for manufactured problems."""
        return -self.epsilon * self.exact_grad_y(pts)


def _beta_standard(pts):
    pts = np.asarray(pts, dtype=float)
    x1, x2 = pts[..., 0], pts[..., 1]
    return np.stack([-x1 ** 2 * np.sin(x2), np.cos(x1) * np.exp(x2)], axis=-1)


def _div_beta_standard(pts):
    pts = np.asarray(pts, dtype=float)
    x1, x2 = pts[..., 0], pts[..., 1]
    return -2.0 * x1 * np.sin(x2) + np.cos(x1) * np.exp(x2)


def _yd_corner_singular(pts):
    pts = np.asarray(pts, dtype=float)
    r2 = pts[..., 0] ** 2 + pts[..., 1] ** 2
    return r2 ** (-1.0 / 3.0)


def _mms_y(pts):
    pts = np.asarray(pts, dtype=float)
    return np.sin(np.pi * pts[..., 0]) * np.sin(np.pi * pts[..., 1])


def _mms_grad_y(pts):
    pts = np.asarray(pts, dtype=float)
    x1, x2 = pts[..., 0], pts[..., 1]
    return np.pi * np.stack(
        [np.cos(np.pi * x1) * np.sin(np.pi * x2),
         np.sin(np.pi * x1) * np.cos(np.pi * x2)], axis=-1)


def _mms_source(epsilon):
    def fn(pts):
        pts = np.asarray(pts, dtype=float)
        conv = np.sum(_beta_standard(pts) * _mms_grad_y(pts), axis=-1)
        return 2.0 * np.pi ** 2 * epsilon * _mms_y(pts) + conv
    return fn


CATALOG_NAMES = ("example1-high", "example1-low", "example2", "zero", "mms-trig")


def catalog(name: str) -> ProblemSpec:
    """Look up a problem by name; raises KeyError for unknown names."""
    common = dict(gamma=1.0, beta=_beta_standard, div_beta=_div_beta_standard)
    if name == "example1-high":
        return ProblemSpec(name=name, epsilon=1.0, f=_const(0.0),
                           y_d=_const(1.0), **common)
    if name == "example1-low":
        return ProblemSpec(name=name, epsilon=1.0, f=_const(0.0),
                           y_d=_yd_corner_singular, **common)
    if name == "example2":
        def f_xy(pts):
            pts = np.asarray(pts, dtype=float)
            return pts[..., 0] * pts[..., 1]
        return ProblemSpec(name=name, epsilon=1e-6, f=f_xy,
                           y_d=_const(1.0), **common)
    if name == "zero":
        return ProblemSpec(name=name, epsilon=1.0, f=_const(0.0),
                           y_d=_const(0.0), **common)
    if name == "mms-trig":
        eps = 1.0
        return ProblemSpec(name=name, epsilon=eps, f=_mms_source(eps),
                           y_d=_const(0.0), mode="state_only",
                           boundary_data=_const(0.0),
                           exact_y=_mms_y, exact_grad_y=_mms_grad_y, **common)
    raise KeyError(f"unknown problem {name!r}; available: {CATALOG_NAMES}")


def tau1_eval(spec: ProblemSpec, points, normals, face=None):
    """Stabilization pair (tau1, tau2) at sample points of one face.

    ``points``: (m, 2) samples on a single face; ``normals``: the outward
    normal, (2,) or (m, 2); ``face``: the (va, vb) endpoints of the face,
    defaulting to the chord between the first and last sample.  tau1 is
    the per-face constant produced by the spec's rule, tau2 = tau1 -
    beta.n pointwise.  Raises ConfigurationError if either loses
    positivity.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    normals = np.asarray(normals, dtype=float)
    if normals.ndim == 1:
        normals = np.broadcast_to(normals, points.shape)
    va, vb = face if face is not None else (points[0], points[-1])
    tau1_c = float(spec.tau1_rule(va, vb))
    tau1 = np.full(len(points), tau1_c)
    bn = np.sum(spec.beta(points) * normals, axis=-1)
    tau2 = tau1 - bn
    if tau1_c <= 0.0 or np.any(tau2 <= 0.0):
        raise ConfigurationError(
            f"stabilization not positive: tau1={tau1_c:g}, "
            f"min tau2={tau2.min():g}")
    return tau1, tau2


def validate_stabilization(spec: ProblemSpec, mesh: Mesh,
                           exactness: int | None = None) -> dict:
    """Check tau positivity at all face quadrature points of a mesh.

    Returns a report with the extreme tau values and the minimum of
    div beta over the volume quadrature points; a positive maximum of
    div beta is reported (the standing sign assumption of the analysis
    does not hold for the standard velocity field) but is not an error.
    """
    if exactness is None:
        exactness = assembly_exactness(1)
    erule = edge_quadrature(exactness)
    trule = triangle_quadrature(exactness)

    min_tau1 = np.inf
    min_tau2 = np.inf
    pts = mesh.vertices
    for rec in mesh.edges:
        va, vb = pts[rec.vertex_ids[0]], pts[rec.vertex_ids[1]]
        fp = va[None, :] + erule.points[:, None] * (vb - va)[None, :]
        for n in rec.normals:
            t1, t2 = tau1_eval(spec, fp, np.asarray(n), face=(va, vb))
            min_tau1 = min(min_tau1, float(t1.min()))
            min_tau2 = min(min_tau2, float(t2.min()))

    tri_pts = mesh.vertices[mesh.triangles]
    v0 = tri_pts[:, 0]
    J1 = tri_pts[:, 1] - v0
    J2 = tri_pts[:, 2] - v0
    qp = (v0[:, None, :] + trule.points[None, :, 0, None] * J1[:, None, :]
          + trule.points[None, :, 1, None] * J2[:, None, :])
    div_b = spec.div_beta(qp.reshape(-1, 2))
    return {
        "min_tau1": min_tau1,
        "min_tau2": min_tau2,
        "max_div_beta": float(div_b.max()),
        "div_beta_nonpositive": bool(div_b.max() <= 0.0),
    }
