"""Direct sparse solves of the monolithic and condensed systems.

Everything goes through sparse LU with partial pivoting (SuperLU); the
statements this package makes are about discretization error, so no
iterative machinery is involved.  Every solve computes the residual of
the monolithic equations at the returned coefficients (matrix-free for
condensed solves) and stores it on the bundle; conditioning trouble is
reported, never masked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import json
import numpy as np
import scipy.sparse.linalg as spla

from .assembly import (CondensedSystem, LinearSystem, apply_monolithic,
                       monolithic_layout, monolithic_rhs)
from .errors import SolverError
from .problems import ProblemSpec
from .spaces import SpaceSet


@dataclass
class SolutionBundle:
    """Coefficient vectors of the discrete unknowns.

    State-only solves fill only (q, y, yhat_o).  ``residual_rel`` is the
    monolithic residual relative to the rhs norm (absolute when the rhs
    vanishes).
    """

    q: np.ndarray
    y: np.ndarray
    p: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    yhat_o: Optional[np.ndarray] = None
    zhat_o: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    residual_rel: float = field(default=np.nan)
    rhs_norm: float = field(default=np.nan)

    def block(self, name):
        val = getattr(self, name)
        if val is None:
            raise KeyError(f"block {name!r} not present in this bundle")
        return val

    def has_block(self, name):
        return getattr(self, name, None) is not None

    def to_json(self) -> str:
        data = {}
        for name in ("q", "y", "p", "z", "yhat_o", "zhat_o", "u"):
            arr = getattr(self, name)
            if arr is not None:
                data[name] = arr.tolist()
        data["residual_rel"] = self.residual_rel
        return json.dumps(data)


@dataclass
class DiscreteSolution:
    """A solved discretization: spaces + problem + coefficient bundle."""

    spaces: SpaceSet
    spec: ProblemSpec
    bundle: SolutionBundle


def _relative_residual(rnorm, bnorm):
    return rnorm / bnorm if bnorm > 0 else rnorm


def _bundle_from_vector(x, layout, residual_rel, rhs_norm):
    parts = {name: x[off:off + size].copy() for name, off, size in layout}
    return SolutionBundle(residual_rel=residual_rel, rhs_norm=rhs_norm, **parts)


def solve_monolithic(system: LinearSystem) -> SolutionBundle:
    """LU solve of the full coupled system."""
    try:
        lu = spla.splu(system.matrix.tocsc())
    except RuntimeError as exc:
        raise SolverError(f"monolithic factorization failed: {exc}") from exc
    x = lu.solve(system.rhs)
    if not np.all(np.isfinite(x)):
        raise SolverError("monolithic solve produced non-finite values "
                          "(numerically singular factorization)")
    rnorm = np.linalg.norm(system.matrix @ x - system.rhs)
    bnorm = np.linalg.norm(system.rhs)
    return _bundle_from_vector(x, system.layout,
                               _relative_residual(rnorm, bnorm), bnorm)


def solve_condensed(cond: CondensedSystem) -> SolutionBundle:
    """Skeleton solve plus element-local recovery of (q, y, p, z).

    The residual reported is that of the *monolithic* equations at the
    recovered coefficients, evaluated matrix-free from the element
    blocks.
    """
    try:
        lu = spla.splu(cond.matrix.tocsc())
    except RuntimeError as exc:
        raise SolverError(f"skeleton factorization failed: {exc}") from exc
    t = lu.solve(cond.rhs)
    if not np.all(np.isfinite(t)):
        raise SolverError("skeleton solve produced non-finite values")

    layout, dim = monolithic_layout(cond.spaces)
    shift = dict((n, o) for n, o, _ in layout)["yhat_o"]
    x = np.zeros(dim)
    x[shift:shift + len(t)] = t
    for g in cond.groups:
        tl = t[g.trace_cols - shift]
        xl = g.AinvF - np.einsum("tij,tj->ti", g.AinvB, tl)
        x[g.local_cols] = xl

    rhs = monolithic_rhs(cond.groups, dim)
    rnorm = np.linalg.norm(apply_monolithic(cond.groups, x, dim) - rhs)
    bnorm = np.linalg.norm(rhs)
    return _bundle_from_vector(x, layout,
                               _relative_residual(rnorm, bnorm), bnorm)
