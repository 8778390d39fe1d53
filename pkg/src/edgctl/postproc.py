"""Norms, projections, nested-mesh error transfer, and field sampling.

Reference-solution errors follow the fine-quadrature transfer rule: the
squared difference is integrated with the quadrature of the *finer* mesh,
evaluating the coarse piecewise polynomial inside the coarse element
containing each fine element (well defined because the uniform meshes
are nested).  Boundary-control errors integrate edgewise over the fine
boundary skeleton.  Observed orders are reported per refinement step,
order_i = log2(err_{i-1} / err_i).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, UsageError
from .fe_basis import (EdgeBasis, SimplexBasis, assembly_exactness,
                       edge_quadrature, triangle_quadrature)
from .mesh import Mesh, locate_points
from .solver import DiscreteSolution
from .spaces import DofMap

FIELD_NAMES = ("y", "z", "qx", "qy", "px", "py")


# -- pointwise evaluation of the piecewise-polynomial fields ---------------------


def reference_coords(mesh: Mesh, tris, pts):
    """Pull physical points back to reference coordinates per triangle."""
    _, Jinv, _, v0 = mesh.jacobians()
    d = pts - v0[tris]
    return np.einsum("ndc,nd->nc", np.swapaxes(Jinv[tris], 1, 2), d)


def eval_scalar(mesh: Mesh, k: int, coeffs, tris, refpts):
    """Evaluate a W-field (element P^(k+1)) at per-triangle ref points."""
    basis = SimplexBasis(k + 1)
    vals = basis.eval(refpts)                    # (nbw, N)
    c = np.asarray(coeffs).reshape(len(mesh.triangles), basis.dim)
    return np.einsum("ni,in->n", c[tris], vals)

def eval_flux(mesh: Mesh, k: int, coeffs, tris, refpts):
    """Evaluate a V-field (element [P^k]^2) at per-triangle ref points."""
    basis = SimplexBasis(k)
    vals = basis.eval(refpts)                    # (nbk, N)
    c = np.asarray(coeffs).reshape(len(mesh.triangles), 2, basis.dim)
    return np.stack([np.einsum("ni,in->n", c[tris, 0], vals),
                     np.einsum("ni,in->n", c[tris, 1], vals)], axis=1)


def eval_edge_trace(mesh: Mesh, dofmap: DofMap, coeffs, edge_rows, t):
    """Evaluate an edge-space field at canonical parameters t per edge."""
    k1 = dofmap.dofs_per_entity - 1
    basis = EdgeBasis(k1)
    vals = basis.eval(t)                         # (nbm, N)
    c = np.asarray(coeffs)[dofmap.entity_dofs]   # (ne_sub, nbm)
    return np.einsum("ni,in->n", c[edge_rows], vals)


# -- L2 projections --------------------------------------------------------------


def l2_project(fn, dofmap: DofMap, exactness=None):
    """L2-orthogonal projection of a callable onto W or an edge space.

    Returns the flat coefficient vector.  W projections are element-local
    (the modal basis is orthonormal); edge-space projections assemble the
    skeleton mass matrix, which is non-diagonal for continuous variants.
    """
    mesh = dofmap.mesh
    if dofmap.space_kind == "W":
        nbw = dofmap.dofs_per_entity
        k = _degree_from_dim(nbw) - 1
        if exactness is None:
            exactness = assembly_exactness(k)
        rule = triangle_quadrature(exactness)
        basis = SimplexBasis(k + 1)
        vals = basis.eval(rule.points)
        J, _, _, v0 = mesh.jacobians()
        qp = (v0[:, None, :]
              + rule.points[None, :, 0, None] * J[:, None, :, 0]
              + rule.points[None, :, 1, None] * J[:, None, :, 1])
        coeffs = np.einsum("tq,iq,q->ti", fn(qp), vals, rule.weights)
        out = np.empty(dofmap.dim)
        out[dofmap.entity_dofs] = coeffs
        return out
    if dofmap.space_kind in ("M_o", "M_bnd"):
        k1 = dofmap.dofs_per_entity - 1
        if exactness is None:
            exactness = assembly_exactness(max(k1 - 1, 0))
        rule = edge_quadrature(exactness)
        basis = EdgeBasis(k1)
        vals = basis.eval(rule.points)           # (nbm, nq)
        eids = dofmap.entities
        va = mesh.vertices[mesh.edge_vertices[eids, 0]]
        vb = mesh.vertices[mesh.edge_vertices[eids, 1]]
        lens = mesh.edge_lengths[eids]
        fp = va[:, None, :] + rule.points[None, :, None] * (vb - va)[:, None, :]
        local_mass = np.einsum("aq,bq,q->ab", vals, vals, rule.weights)
        rows = np.repeat(dofmap.entity_dofs[:, :, None],
                         dofmap.dofs_per_entity, axis=2)
        cols = np.repeat(dofmap.entity_dofs[:, None, :],
                         dofmap.dofs_per_entity, axis=1)
        data = lens[:, None, None] * local_mass[None, :, :]
        mass = sp.coo_matrix(
            (data.ravel(), (rows.ravel(), cols.ravel())),
            shape=(dofmap.dim, dofmap.dim)).tocsc()
        rhs_loc = np.einsum("eq,aq,q->ea", fn(fp), vals, rule.weights) \
            * lens[:, None]
        rhs = np.zeros(dofmap.dim)
        np.add.at(rhs, dofmap.entity_dofs.ravel(), rhs_loc.ravel())
        import scipy.sparse.linalg as spla
        return spla.spsolve(mass, rhs)
    raise UsageError(f"cannot project onto space kind {dofmap.space_kind!r}")


def _degree_from_dim(dim):
    d = int((np.sqrt(8 * dim + 1) - 3) / 2 + 0.5)
    assert (d + 1) * (d + 2) // 2 == dim
    return d


# -- convergence orders and tables -----------------------------------------------


def convergence_orders(errors):
    """Per-step observed orders log2(err_{i-1}/err_i)."""
    errors = [float(e) for e in errors]
    if any(e <= 0 for e in errors):
        raise DomainError("observed orders need strictly positive errors")
    return [np.log2(errors[i - 1] / errors[i]) for i in range(1, len(errors))]


@dataclass
class ConvergenceTable:
    """Errors and observed orders per level for the tracked quantities."""

    levels: list
    h: list
    quantities: tuple
    errors: dict   # name -> list of errors, aligned with levels
    orders: dict   # name -> list, first entry None

    @classmethod
    def from_errors(cls, levels, h, errors):
        quantities = tuple(errors.keys())
        orders = {}
        for name, errs in errors.items():
            orders[name] = [None] + convergence_orders(errs)
        return cls(levels=list(levels), h=list(h), quantities=quantities,
                   errors={k: list(v) for k, v in errors.items()},
                   orders=orders)

    def final_order(self, name):
        return self.orders[name][-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        header = ["level", "h"]
        for name in self.quantities:
            header += [f"err_{name}", f"ord_{name}"]
        buf.write(",".join(header) + "\n")
        for i, lv in enumerate(self.levels):
            row = [str(lv), f"{self.h[i]:.12e}"]
            for name in self.quantities:
                row.append(f"{self.errors[name][i]:.12e}")
                o = self.orders[name][i]
                row.append("" if o is None else f"{o:.4f}")
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


# -- nested-mesh reference comparison --------------------------------------------

_QUANTITY_BLOCKS = (("q", "q"), ("p", "p"), ("y", "y"), ("z", "z"))


def _require_nested(coarse: DiscreteSolution, fine: DiscreteSolution):
    mc, mf = coarse.spaces.mesh, fine.spaces.mesh
    if mc.level is None or mf.level is None:
        raise UsageError("reference comparison needs uniform-square meshes "
                         "(same builder, nested levels)")
    if mc.level > mf.level:
        return fine, coarse
    return coarse, fine


def error_against_reference(coarse: DiscreteSolution, fine: DiscreteSolution,
                            exactness=None) -> dict:
    """Per-quantity L2 differences of two nested discrete solutions.

    Integrates on the finer mesh; symmetric in its arguments.  Returns a
    dict with the volume quantities present in both bundles and, when
    both carry a control, the boundary error 'u'.
    """
    coarse, fine = _require_nested(coarse, fine)
    mc, mf = coarse.spaces.mesh, fine.spaces.mesh
    kc, kf = coarse.spaces.k, fine.spaces.k
    if exactness is None:
        exactness = max(assembly_exactness(kc), assembly_exactness(kf))
    rule = triangle_quadrature(exactness)

    J, _, detJ, v0 = mf.jacobians()
    qp = (v0[:, None, :]
          + rule.points[None, :, 0, None] * J[:, None, :, 0]
          + rule.points[None, :, 1, None] * J[:, None, :, 1])   # (Tf, nq, 2)
    Tf, nq, _ = qp.shape
    w = rule.weights[None, :] * detJ[:, None]

    centroids = mf.vertices[mf.triangles].mean(axis=1)
    parents, _ = locate_points(mc, centroids)
    flat = qp.reshape(-1, 2)
    tris_f = np.repeat(np.arange(Tf), nq)
    tris_c = np.repeat(parents, nq)
    ref_f = reference_coords(mf, tris_f, flat)
    ref_c = reference_coords(mc, tris_c, flat)

    errors = {}
    for name, _blk in _QUANTITY_BLOCKS:
        if not (coarse.bundle.has_block(name) and fine.bundle.has_block(name)):
            continue
        if name in ("q", "p"):
            vf = eval_flux(mf, kf, fine.bundle.block(name), tris_f, ref_f)
            vc = eval_flux(mc, kc, coarse.bundle.block(name), tris_c, ref_c)
            diff2 = np.sum((vf - vc) ** 2, axis=1)
        else:
            vf = eval_scalar(mf, kf, fine.bundle.block(name), tris_f, ref_f)
            vc = eval_scalar(mc, kc, coarse.bundle.block(name), tris_c, ref_c)
            diff2 = (vf - vc) ** 2
        errors[name] = float(np.sqrt(np.sum(diff2.reshape(Tf, nq) * w)))

    if coarse.bundle.has_block("u") and fine.bundle.has_block("u"):
        errors["u"] = _boundary_error(coarse, fine, exactness)
    return errors


def _side_and_param(pts):
    """Classify unit-square boundary points: side id and arclength param."""
    x, y = pts[..., 0], pts[..., 1]
    side = np.full(x.shape, -1, dtype=np.int64)
    param = np.zeros_like(x)
    for sid, mask, par in ((0, np.isclose(y, 0.0), x),
                           (1, np.isclose(x, 1.0), y),
                           (2, np.isclose(y, 1.0), x),
                           (3, np.isclose(x, 0.0), y)):
        sel = mask & (side < 0)
        side[sel] = sid
        param[sel] = par[sel]
    if np.any(side < 0):
        raise UsageError("boundary point off the unit-square boundary")
    return side, param


def _boundary_edge_lookup(mesh: Mesh, dofmap: DofMap):
    """Map (side, cell index along side) -> row in the M_bnd entity list."""
    n = 2 ** mesh.level
    lookup = {}
    for row, e in enumerate(dofmap.entities):
        va, vb = mesh.edges[e].vertex_ids
        mid = 0.5 * (mesh.vertices[va] + mesh.vertices[vb])
        side, param = _side_and_param(mid[None, :])
        lookup[(int(side[0]), int(np.floor(param[0] * n)))] = row
    return lookup


def _boundary_error(coarse: DiscreteSolution, fine: DiscreteSolution,
                    exactness) -> float:
    mc, mf = coarse.spaces.mesh, fine.spaces.mesh
    rule = edge_quadrature(exactness)
    nc = 2 ** mc.level

    map_f = fine.spaces.M_bnd
    map_c = coarse.spaces.M_bnd
    eids = map_f.entities
    va = mf.vertices[mf.edge_vertices[eids, 0]]
    vb = mf.vertices[mf.edge_vertices[eids, 1]]
    lens = mf.edge_lengths[eids]
    fp = va[:, None, :] + rule.points[None, :, None] * (vb - va)[:, None, :]
    ne = len(rule.points)
    rows_f = np.repeat(np.arange(len(eids)), ne)
    uf = eval_edge_trace(mf, map_f, fine.bundle.block("u"), rows_f,
                         np.tile(rule.points, len(eids)))

    flat = fp.reshape(-1, 2)
    side, param = _side_and_param(flat)
    cell = np.clip(np.floor(param * nc).astype(np.int64), 0, nc - 1)
    lookup = _boundary_edge_lookup(mc, map_c)
    rows_c = np.array([lookup[(int(s), int(c))] for s, c in zip(side, cell)])
    eids_c = map_c.entities[rows_c]
    va_c = mc.vertices[mc.edge_vertices[eids_c, 0]]
    t_c = np.linalg.norm(flat - va_c, axis=1) / mc.edge_lengths[eids_c]
    uc = eval_edge_trace(mc, map_c, coarse.bundle.block("u"), rows_c, t_c)

    diff2 = (uf - uc).reshape(len(eids), ne) ** 2
    return float(np.sqrt(np.sum(diff2 * rule.weights[None, :]
                                * lens[:, None])))


def error_against_exact(sol: DiscreteSolution, exactness_bump=4) -> dict:
    """L2 errors of a state-only solution against the manufactured fields."""
    spec = sol.spec
    if spec.exact_y is None:
        raise UsageError("problem carries no exact solution")
    mesh, k = sol.spaces.mesh, sol.spaces.k
    rule = triangle_quadrature(assembly_exactness(k) + exactness_bump)
    J, _, detJ, v0 = mesh.jacobians()
    qp = (v0[:, None, :]
          + rule.points[None, :, 0, None] * J[:, None, :, 0]
          + rule.points[None, :, 1, None] * J[:, None, :, 1])
    T, nq, _ = qp.shape
    w = rule.weights[None, :] * detJ[:, None]
    tris = np.repeat(np.arange(T), nq)
    refp = np.tile(rule.points, (T, 1))

    yh = eval_scalar(mesh, k, sol.bundle.block("y"), tris, refp).reshape(T, nq)
    qh = eval_flux(mesh, k, sol.bundle.block("q"), tris, refp)
    yex = spec.exact_y(qp)
    qex = spec.exact_q(qp.reshape(-1, 2)).reshape(T, nq, 2)
    err_y = np.sqrt(np.sum((yh - yex) ** 2 * w))
    err_q = np.sqrt(np.sum(np.sum(
        (qh.reshape(T, nq, 2) - qex) ** 2, axis=2) * w))
    return {"y": float(err_y), "q": float(err_q)}


# -- field sampling ---------------------------------------------------------------


def sample_field(sol: DiscreteSolution, which: str, m: int):
    """Evaluate one field on an m x m uniform grid over the closed square.

    Returns (X, Y, values); points on element boundaries resolve to the
    lowest containing triangle id.
    """
    if which not in FIELD_NAMES:
        raise UsageError(f"unknown field {which!r}; expected {FIELD_NAMES}")
    mesh, k = sol.spaces.mesh, sol.spaces.k
    coords = np.linspace(0.0, 1.0, m)
    X, Y = np.meshgrid(coords, coords, indexing="xy")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    tris, _ = locate_points(mesh, pts)
    refp = reference_coords(mesh, tris, pts)
    if which in ("y", "z"):
        vals = eval_scalar(mesh, k, sol.bundle.block(which), tris, refp)
    else:
        comp = 0 if which[1] == "x" else 1
        vals = eval_flux(mesh, k, sol.bundle.block(which[0]), tris, refp)[:, comp]
    return X, Y, vals.reshape(m, m)


def field_csv(X, Y, values) -> str:
    buf = io.StringIO()
    buf.write("x,y,value\n")
    for xi, yi, vi in zip(X.ravel(), Y.ravel(), values.ravel()):
        buf.write(f"{xi:.12e},{yi:.12e},{vi:.12e}\n")
    return buf.getvalue()
