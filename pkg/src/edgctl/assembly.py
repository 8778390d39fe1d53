"""Element-local weak forms, global assembly, and static condensation.

The coupled first-order optimality system couples a state pair (q, y), an
adjoint pair (p, z), interior-skeleton traces (yhat, zhat) and the
boundary control u.  Per element the equations are, with stabilization
weights w1 = 1/|e| + tau1 and, pointwise, w2 = w1 - beta.n
(= 1/|e| + tau2):

  state flux:    eps^-1 (q, r) - (y, div r) + <yhat, r.n>_int + <u, r.n>_bnd = 0
  state:         -(q + beta y, grad w) - (y div beta, w) + <qhat.n, w>
                 + <beta.n yhat, w>_int + <beta.n u, w>_bnd = (f, w)
  adjoint flux:  eps^-1 (p, r) - (z, div r) + <zhat, r.n>_int = 0
  adjoint:       -(p - beta z, grad w) + <phat.n, w> - <beta.n zhat, w>_int
                 - (y, w) = -(y_d, w)

with numerical fluxes

  qhat.n = q.n + w1 (y - yhat)   [interior],  q.n + w1 (y - u)  [boundary]
  phat.n = p.n + w2 (z - zhat)   [interior],  p.n + w2 z        [boundary]

closed by flux continuity <qhat.n, mu> = <phat.n, mu> = 0 over both sides
of every interior edge and the optimality condition
gamma <u, mu> + <phat.n, mu> = 0 on boundary edges.

The element unknowns (q, y, p, z) eliminate element-by-element: the local
4-field matrix is block triangular (the state pair closes against its
traces, the adjoint pair additionally sees the local y), leaving a
skeleton system in [yhat | zhat | u] plus per-element affine recovery.

Elements are processed in batches grouped by their edge-kind signature so
all tensor contractions are vectorized; assembly order is fixed, hence
serial results are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import SolverError, StructuralError
from .fe_basis import (SimplexBasis, EdgeBasis, assembly_exactness,
                       edge_quadrature, triangle_quadrature)
from .problems import ProblemSpec
from .spaces import DofMap, SpaceSet

_REF_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass
class LinearSystem:
    """Sparse square operator, right-hand side, and block layout."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    layout: tuple  # ((name, offset, size), ...)

    def block_slice(self, name):
        for nm, off, size in self.layout:
            if nm == name:
                return slice(off, off + size)
        raise KeyError(name)


@dataclass
class LocalBlocks:
    """Dense element-local operator of one element.

    Rows/columns of ``A`` follow the local field layout given by
    ``field_slices``; ``B`` couples local fields to the element's trace
    slots, ``E``/``S`` are the skeleton-equation rows restricted to this
    element's side, ``F`` the local load.  ``local_cols``/``trace_cols``
    give the monolithic global indices of the local and trace slots.
    """

    elem: int
    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    S: np.ndarray
    F: np.ndarray
    field_slices: dict
    local_cols: np.ndarray
    trace_cols: np.ndarray


@dataclass
class CondensedSystem:
    """Skeleton operator over [yhat | zhat | u] plus element recovery."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    layout: tuple
    spaces: SpaceSet
    groups: list  # recovery data per element group

    @property
    def dim(self):
        return self.matrix.shape[0]


def full_edge_dofs(dofmap: DofMap, n_edges: int) -> np.ndarray:
    """(E, n_per_edge) lookup of global dofs, -1 off the map's skeleton."""
    out = np.full((n_edges, dofmap.dofs_per_entity), -1, dtype=np.int64)
    out[dofmap.entities] = dofmap.entity_dofs
    return out


# -- reference tables and geometric/primitive integrals -------------------------


class _Primitives:
    """All element-batched integrals the weak forms are built from."""

    def __init__(self, spaces: SpaceSet, spec: ProblemSpec, exactness=None):
        mesh, k = spaces.mesh, spaces.k
        self.spaces = spaces
        self.spec = spec
        if exactness is None:
            exactness = assembly_exactness(k)
        self.exactness = exactness

        bk = SimplexBasis(k)
        bw = SimplexBasis(k + 1)
        bm = EdgeBasis(k + 1)
        self.nbk, self.nbw, self.nbm = bk.dim, bw.dim, bm.dim

        vrule = triangle_quadrature(exactness)
        erule = edge_quadrature(exactness)
        Pk = bk.eval(vrule.points)                   # (nbk, nq)
        Pw = bw.eval(vrule.points)                   # (nbw, nq)
        Gk = bk.grad(vrule.points)                   # (nbk, nq, 2)
        Gw = bw.grad(vrule.points)                   # (nbw, nq, 2)

        J, Jinv, detJ, v0 = mesh.jacobians()
        self.detJ = detJ
        T = len(mesh.triangles)
        self.num_elems = T

        # physical gradients: g_phys[t,i,q,c] = sum_d g_ref[i,q,d] Jinv[t,d,c]
        Gk_p = np.einsum("iqd,tdc->tiqc", Gk, Jinv)
        Gw_p = np.einsum("iqd,tdc->tiqc", Gw, Jinv)

        qp = (v0[:, None, :]
              + vrule.points[None, :, 0, None] * J[:, None, :, 0]
              + vrule.points[None, :, 1, None] * J[:, None, :, 1])
        wv = vrule.weights
        beta_q = spec.beta(qp)                       # (T, nq, 2)
        divb_q = spec.div_beta(qp)                   # (T, nq)

        dv = wv[None, :] * detJ[:, None]             # (T, nq)
        self.Mk = np.einsum("iq,jq,tq->tij", Pk, Pk, dv)
        self.Mw = np.einsum("iq,jq,tq->tij", Pw, Pw, dv)
        # P_div[t,c,m,j] = int (d_c P^k_m) P^w_j
        self.P_div = np.einsum("tmqc,jq,tq->tcmj", Gk_p, Pw, dv)
        # P_gradw[t,c,m,j] = int P^k_m (d_c P^w_j)
        self.P_gradw = np.einsum("mq,tjqc,tq->tcmj", Pk, Gw_p, dv)
        # CONV[t,j,i] = int (beta . grad P^w_j) P^w_i
        self.CONV = np.einsum("tqc,tjqc,iq,tq->tji", beta_q, Gw_p, Pw, dv)
        self.DVB = np.einsum("tq,iq,jq,tq->tji", divb_q, Pw, Pw, dv)
        self.load_f = np.einsum("tq,jq,tq->tj", spec.f(qp), Pw, dv)
        self.load_yd = np.einsum("tq,jq,tq->tj", spec.y_d(qp), Pw, dv)

        # face tables: trace of volume bases on each local edge, for both
        # orientations relative to the canonical edge direction
        te = erule.points                            # (ne,)
        we = erule.weights
        self.ne = len(te)
        self.Mt = bm.eval(te)                        # (nbm, ne)
        Wtab = np.empty((3, 2, bw.dim, len(te)))
        Ktab = np.empty((3, 2, bk.dim, len(te)))
        for le in range(3):
            ra = _REF_CORNERS[(le + 1) % 3]
            rb = _REF_CORNERS[(le + 2) % 3]
            for si, s in enumerate((1, -1)):
                a, b = (ra, rb) if s == 1 else (rb, ra)
                pts = a[None, :] + te[:, None] * (b - a)[None, :]
                Wtab[le, si] = bw.eval(pts)
                Ktab[le, si] = bk.eval(pts)

        mesh_ev = mesh.edge_vertices
        self.face = []
        for le in range(3):
            eids = mesh.tri_edges[:, le]
            sgn = mesh.tri_edge_sign[:, le]
            length = mesh.edge_lengths[eids]
            normal = mesh.tri_edge_normals[:, le]    # (T, 2)
            va = mesh.vertices[mesh_ev[eids, 0]]
            vb = mesh.vertices[mesh_ev[eids, 1]]
            fp = va[:, None, :] + te[None, :, None] * (vb - va)[:, None, :]

            si = (sgn < 0).astype(np.int64)
            W = Wtab[le][si]                          # (T, nbw, ne)
            K = Ktab[le][si]                          # (T, nbk, ne)

            rule = spec.tau1_rule
            if hasattr(rule, "batch"):
                tau1 = np.asarray(rule.batch(va, vb), dtype=float)
            else:
                tau1 = np.array([float(rule(va[t], vb[t])) for t in range(T)])
            bn = np.sum(spec.beta(fp) * normal[:, None, :], axis=-1)  # (T, ne)
            w1 = 1.0 / length + tau1                  # (T,)
            w2 = w1[:, None] - bn                     # (T, ne)
            if np.any(tau1 <= 0) or np.any(w2 - 1.0 / length[:, None] <= 0):
                raise StructuralError("stabilization lost positivity on a face")

            ds = we[None, :] * length[:, None]        # (T, ne)
            Mtl = self.Mt
            face = {
                "edge": eids,
                "interior": mesh.edge_is_interior[eids],
                "normal": normal,
                "w1": w1,
                "FWW1": w1[:, None, None]
                        * np.einsum("tiq,tjq,tq->tij", W, W, ds),
                "FWW2": np.einsum("tq,tiq,tjq,tq->tij", w2, W, W, ds),
                "FWM1": w1[:, None, None]
                        * np.einsum("tjq,aq,tq->tja", W, Mtl, ds),
                "FWM2": np.einsum("tq,tjq,aq,tq->tja", w2, W, Mtl, ds),
                "FMM1": w1[:, None, None]
                        * np.einsum("aq,bq,tq->tab", Mtl, Mtl, ds),
                "FMM2": np.einsum("tq,aq,bq,tq->tab", w2, Mtl, Mtl, ds),
                "FMMu": np.einsum("aq,bq,tq->tab", Mtl, Mtl, ds),
                "FKW": np.einsum("tmq,tjq,tq->tmj", K, W, ds),
                "FKM": np.einsum("tmq,aq,tq->tma", K, Mtl, ds),
                "face_pts": fp,
            }
            self.face.append(face)


def _vec_index(nbk):
    """Local index of flux dof (component c, mode m) = c*nbk + m."""
    return lambda c, m: c * nbk + m


def _pair_blocks(prim, convection_sign):
    """Volume blocks of one (flux, scalar) pair.

    convection_sign=-1 builds the state pair (convection as
    -(beta y, grad w) - (y div beta, w)); +1 builds the adjoint pair
    (+(beta z, grad w), no divergence term).
    """
    T, nbk, nbw = prim.num_elems, prim.nbk, prim.nbw
    eps = prim.spec.epsilon
    nl = 2 * nbk + nbw
    A = np.zeros((T, nl, nl))
    # flux-flux mass
    for c in range(2):
        A[:, c * nbk:(c + 1) * nbk, c * nbk:(c + 1) * nbk] = prim.Mk / eps
    sc = slice(2 * nbk, nl)
    for c in range(2):
        rows = slice(c * nbk, (c + 1) * nbk)
        # -(scalar, div r): rows flux, cols scalar
        A[:, rows, sc] = -prim.P_div[:, c]
        # -(flux, grad w) + <flux.n, w>: rows scalar, cols flux
        A[:, sc, rows] = -np.swapaxes(prim.P_gradw[:, c], 1, 2)
    if convection_sign < 0:
        A[:, sc, sc] += -prim.CONV - prim.DVB
    else:
        A[:, sc, sc] += prim.CONV
    for f in prim.face:
        FWW = f["FWW1"] if convection_sign < 0 else f["FWW2"]
        A[:, sc, sc] += FWW
        for c in range(2):
            A[:, sc, slice(c * nbk, (c + 1) * nbk)] += \
                f["normal"][:, None, None, c] * np.swapaxes(f["FKW"], 1, 2)
    return A


class _Group:
    """Batched [A B; E S] blocks of all elements sharing one edge signature."""

    __slots__ = ("elems", "A", "B", "E", "S", "F", "local_cols", "trace_cols",
                 "trace_fields", "AinvB", "AinvF")

    def __init__(self, elems, A, B, E, S, F, local_cols, trace_cols,
                 trace_fields):
        self.elems = elems
        self.A, self.B, self.E, self.S, self.F = A, B, E, S, F
        self.local_cols = local_cols
        self.trace_cols = trace_cols
        self.trace_fields = trace_fields
        self.AinvB = None
        self.AinvF = None


def _control_groups(prim, mono_offsets):
    """Element groups of the full optimality system.

    Local field layout [q | y | p | z]; trace layout per element is
    [yhat slots | zhat slots | u slots] over its edges in local-edge
    order.  ``mono_offsets`` maps block name -> monolithic offset.
    """
    spaces = prim.spaces
    mesh = spaces.mesh
    nbk, nbw, nbm = prim.nbk, prim.nbw, prim.nbm
    T = prim.num_elems
    gamma = prim.spec.gamma

    A_state = _pair_blocks(prim, -1)
    A_adj = _pair_blocks(prim, +1)
    npair = 2 * nbk + nbw
    nloc = 2 * npair
    A = np.zeros((T, nloc, nloc))
    A[:, :npair, :npair] = A_state
    A[:, npair:, npair:] = A_adj
    # adjoint equation tracks the local state: -(y, w2)
    A[:, npair + 2 * nbk:, 2 * nbk:npair] = -prim.Mw

    F = np.zeros((T, nloc))
    F[:, 2 * nbk:npair] = prim.load_f
    F[:, npair + 2 * nbk:] = -prim.load_yd

    mo_dofs = full_edge_dofs(spaces.M_o, len(mesh.edges))
    mb_dofs = full_edge_dofs(spaces.M_bnd, len(mesh.edges))

    sig = tuple(prim.face[le]["interior"] for le in range(3))
    signature = sig[0].astype(int) * 4 + sig[1].astype(int) * 2 + sig[2].astype(int)

    v_dofs = spaces.V.entity_dofs
    w_dofs = spaces.W.entity_dofs
    local_cols_all = np.concatenate([
        mono_offsets["q"] + v_dofs, mono_offsets["y"] + w_dofs,
        mono_offsets["p"] + v_dofs, mono_offsets["z"] + w_dofs], axis=1)

    sq, sy = slice(0, 2 * nbk), slice(2 * nbk, npair)
    sp_, sz = slice(npair, npair + 2 * nbk), slice(npair + 2 * nbk, nloc)

    groups = []
    for code in np.unique(signature):
        els = np.nonzero(signature == code)[0]
        interior = [bool(code & (4 >> le)) for le in range(3)]
        n_int = sum(interior)
        n_bnd = 3 - n_int
        ntr = (2 * n_int + n_bnd) * nbm

        B = np.zeros((len(els), nloc, ntr))
        E = np.zeros((len(els), ntr, nloc))
        S = np.zeros((len(els), ntr, ntr))
        trace_cols = np.empty((len(els), ntr), dtype=np.int64)
        trace_fields = []

        col = 0
        # yhat slots
        for le in range(3):
            if not interior[le]:
                continue
            f = prim.face[le]
            cs = slice(col, col + nbm)
            nrm = f["normal"][els]
            FKM = f["FKM"][els]
            for c in range(2):
                B[:, c * nbk:(c + 1) * nbk, cs] = nrm[:, None, None, c] * FKM
                E[:, cs, c * nbk:(c + 1) * nbk] = \
                    nrm[:, None, None, c] * np.swapaxes(FKM, 1, 2)
            B[:, sy, cs] = -f["FWM2"][els]
            E[:, cs, sy] = np.swapaxes(f["FWM1"][els], 1, 2)
            S[:, cs, cs] = -f["FMM1"][els]
            trace_cols[:, cs] = mo_dofs[f["edge"][els]] + mono_offsets["yhat_o"]
            trace_fields += [("yhat_o", le)] * nbm
            col += nbm
        # zhat slots
        for le in range(3):
            if not interior[le]:
                continue
            f = prim.face[le]
            cs = slice(col, col + nbm)
            nrm = f["normal"][els]
            FKM = f["FKM"][els]
            for c in range(2):
                B[:, npair + c * nbk:npair + (c + 1) * nbk, cs] = \
                    nrm[:, None, None, c] * FKM
                E[:, cs, npair + c * nbk:npair + (c + 1) * nbk] = \
                    nrm[:, None, None, c] * np.swapaxes(FKM, 1, 2)
            B[:, sz, cs] = -f["FWM1"][els]
            E[:, cs, sz] = np.swapaxes(f["FWM2"][els], 1, 2)
            S[:, cs, cs] = -f["FMM2"][els]
            trace_cols[:, cs] = mo_dofs[f["edge"][els]] + mono_offsets["zhat_o"]
            trace_fields += [("zhat_o", le)] * nbm
            col += nbm
        # control slots (optimality rows live on boundary edges)
        for le in range(3):
            if interior[le]:
                continue
            f = prim.face[le]
            cs = slice(col, col + nbm)
            nrm = f["normal"][els]
            FKM = f["FKM"][els]
            for c in range(2):
                B[:, c * nbk:(c + 1) * nbk, cs] = nrm[:, None, None, c] * FKM
                E[:, cs, npair + c * nbk:npair + (c + 1) * nbk] = \
                    nrm[:, None, None, c] * np.swapaxes(FKM, 1, 2)
            B[:, sy, cs] = -f["FWM2"][els]
            E[:, cs, sz] = np.swapaxes(f["FWM2"][els], 1, 2)
            S[:, cs, cs] = gamma * f["FMMu"][els]
            trace_cols[:, cs] = mb_dofs[f["edge"][els]] + mono_offsets["u"]
            trace_fields += [("u", le)] * nbm
            col += nbm

        groups.append(_Group(
            elems=els, A=A[els], B=B, E=E, S=S, F=F[els],
            local_cols=local_cols_all[els], trace_cols=trace_cols,
            trace_fields=tuple(trace_fields)))
    return groups


def _state_groups(prim, mono_offsets, g_edge_coeffs):
    """Element groups of the single-PDE (state-only) system [q | y | yhat].

    ``g_edge_coeffs``: (n_boundary_edges, k+2) nodal coefficients of the
    edgewise projection of the boundary datum, indexed like M_bnd rows.
    """
    spaces = prim.spaces
    mesh = spaces.mesh
    nbk, nbw, nbm = prim.nbk, prim.nbw, prim.nbm
    npair = 2 * nbk + nbw

    A = _pair_blocks(prim, -1)
    F = np.zeros((prim.num_elems, npair))
    F[:, 2 * nbk:] = prim.load_f

    mo_dofs = full_edge_dofs(spaces.M_o, len(mesh.edges))
    bnd_row = np.full(len(mesh.edges), -1, dtype=np.int64)
    bnd_row[spaces.M_bnd.entities] = np.arange(len(spaces.M_bnd.entities))

    # boundary-data load: the known trace replaces the control slots
    for le in range(3):
        f = prim.face[le]
        bmask = ~f["interior"]
        if not np.any(bmask):
            continue
        els = np.nonzero(bmask)[0]
        g_loc = g_edge_coeffs[bnd_row[f["edge"][els]]]     # (m, nbm)
        nrm = f["normal"][els]
        FKM = f["FKM"][els]
        for c in range(2):
            F[els, c * nbk:(c + 1) * nbk] -= \
                nrm[:, None, c] * np.einsum("tma,ta->tm", FKM, g_loc)
        F[els, 2 * nbk:] += np.einsum("tja,ta->tj", f["FWM2"][els], g_loc)

    sig = tuple(prim.face[le]["interior"] for le in range(3))
    signature = sig[0].astype(int) * 4 + sig[1].astype(int) * 2 + sig[2].astype(int)
    v_dofs = spaces.V.entity_dofs
    w_dofs = spaces.W.entity_dofs
    local_cols_all = np.concatenate(
        [mono_offsets["q"] + v_dofs, mono_offsets["y"] + w_dofs], axis=1)
    sy = slice(2 * nbk, npair)

    groups = []
    for code in np.unique(signature):
        els = np.nonzero(signature == code)[0]
        interior = [bool(code & (4 >> le)) for le in range(3)]
        ntr = sum(interior) * nbm
        B = np.zeros((len(els), npair, ntr))
        E = np.zeros((len(els), ntr, npair))
        S = np.zeros((len(els), ntr, ntr))
        trace_cols = np.empty((len(els), ntr), dtype=np.int64)
        trace_fields = []
        col = 0
        for le in range(3):
            if not interior[le]:
                continue
            f = prim.face[le]
            cs = slice(col, col + nbm)
            nrm = f["normal"][els]
            FKM = f["FKM"][els]
            for c in range(2):
                B[:, c * nbk:(c + 1) * nbk, cs] = nrm[:, None, None, c] * FKM
                E[:, cs, c * nbk:(c + 1) * nbk] = \
                    nrm[:, None, None, c] * np.swapaxes(FKM, 1, 2)
            B[:, sy, cs] = -f["FWM2"][els]
            E[:, cs, sy] = np.swapaxes(f["FWM1"][els], 1, 2)
            S[:, cs, cs] = -f["FMM1"][els]
            trace_cols[:, cs] = mo_dofs[f["edge"][els]] + mono_offsets["yhat_o"]
            trace_fields += [("yhat_o", le)] * nbm
            col += nbm
        groups.append(_Group(
            elems=els, A=A[els], B=B, E=E, S=S, F=F[els],
            local_cols=local_cols_all[els], trace_cols=trace_cols,
            trace_fields=tuple(trace_fields)))
    return groups


# -- public assembly entry points ---------------------------------------------


def monolithic_layout(spaces: SpaceSet):
    dims = {"q": spaces.V.dim, "y": spaces.W.dim, "p": spaces.V.dim,
            "z": spaces.W.dim, "yhat_o": spaces.M_o.dim,
            "zhat_o": spaces.M_o.dim, "u": spaces.M_bnd.dim}
    layout, off = [], 0
    for name in ("q", "y", "p", "z", "yhat_o", "zhat_o", "u"):
        layout.append((name, off, dims[name]))
        off += dims[name]
    return tuple(layout), off


def state_only_layout(spaces: SpaceSet):
    layout, off = [], 0
    for name, size in (("q", spaces.V.dim), ("y", spaces.W.dim),
                       ("yhat_o", spaces.M_o.dim)):
        layout.append((name, off, size))
        off += size
    return tuple(layout), off


def _offsets(layout):
    return {name: off for name, off, _ in layout}


def _scatter(groups, dim):
    rows, cols, vals = [], [], []
    rhs = np.zeros(dim)
    for g in groups:
        all_cols = np.concatenate([g.local_cols, g.trace_cols], axis=1)
        m, nloc = g.local_cols.shape
        ntr = g.trace_cols.shape[1]
        n_all = nloc + ntr
        blk = np.zeros((m, n_all, n_all))
        blk[:, :nloc, :nloc] = g.A
        blk[:, :nloc, nloc:] = g.B
        blk[:, nloc:, :nloc] = g.E
        blk[:, nloc:, nloc:] = g.S
        r = np.repeat(all_cols[:, :, None], n_all, axis=2)
        c = np.repeat(all_cols[:, None, :], n_all, axis=1)
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(blk.ravel())
        np.add.at(rhs, g.local_cols.ravel(), g.F.ravel())
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim)).tocsr()
    return mat, rhs


def control_groups(spaces: SpaceSet, spec: ProblemSpec, exactness=None):
    """Grouped element operators of the coupled optimality system."""
    if spec.mode != "control":
        raise StructuralError("control system requires spec.mode == 'control'")
    prim = _Primitives(spaces, spec, exactness)
    layout, _ = monolithic_layout(spaces)
    return _control_groups(prim, _offsets(layout))


def assemble_global(spaces: SpaceSet, spec: ProblemSpec,
                    exactness=None) -> LinearSystem:
    """Monolithic sparse operator over [q | y | p | z | yhat | zhat | u]."""
    layout, dim = monolithic_layout(spaces)
    groups = control_groups(spaces, spec, exactness)
    mat, rhs = _scatter(groups, dim)
    return LinearSystem(matrix=mat, rhs=rhs, layout=layout)


def project_boundary_data(spaces: SpaceSet, g, exactness=None):
    """Edgewise L2 projection of g onto P^(k+1) of the boundary skeleton.

    Returns (n_boundary_edges, k+2) nodal coefficients ordered like the
    M_bnd entity list.
    """
    mesh, k = spaces.mesh, spaces.k
    if exactness is None:
        exactness = assembly_exactness(k)
    erule = edge_quadrature(exactness)
    bm = EdgeBasis(k + 1)
    Mt = bm.eval(erule.points)                        # (nbm, ne)
    mass = np.einsum("aq,bq,q->ab", Mt, Mt, erule.weights)
    eids = spaces.M_bnd.entities
    va = mesh.vertices[mesh.edge_vertices[eids, 0]]
    vb = mesh.vertices[mesh.edge_vertices[eids, 1]]
    fp = va[:, None, :] + erule.points[None, :, None] * (vb - va)[:, None, :]
    rhs = np.einsum("tq,aq,q->ta", g(fp), Mt, erule.weights)
    return np.linalg.solve(mass, rhs.T).T


def assemble_state_only(spaces: SpaceSet, spec: ProblemSpec, g=None,
                        exactness=None) -> LinearSystem:
    """Single-PDE system [q | y | yhat] with prescribed boundary trace.

    ``g`` defaults to the spec's boundary datum (state_only specs).  The
    datum enters through its edgewise L2 projection onto the boundary
    skeleton.
    """
    if g is None:
        if spec.boundary_data is None:
            raise StructuralError(
                "state-only assembly needs a boundary datum g")
        g = spec.boundary_data
    prim = _Primitives(spaces, spec, exactness)
    layout, dim = state_only_layout(spaces)
    g_coeffs = project_boundary_data(spaces, g, exactness)
    groups = _state_groups(prim, _offsets(layout), g_coeffs)
    mat, rhs = _scatter(groups, dim)
    return LinearSystem(matrix=mat, rhs=rhs, layout=layout)


def _factor_groups(groups):
    for g in groups:
        if g.AinvB is None:
            try:
                rhs = np.concatenate([g.B, g.F[:, :, None]], axis=2)
                sol = np.linalg.solve(g.A, rhs)
            except np.linalg.LinAlgError:
                for t in range(len(g.elems)):
                    if np.linalg.matrix_rank(g.A[t]) < g.A.shape[1]:
                        raise SolverError(
                            f"singular local block on element {g.elems[t]}"
                        ) from None
                raise
            g.AinvB = sol[:, :, :-1]
            g.AinvF = sol[:, :, -1]


def condense(spaces: SpaceSet, spec: ProblemSpec, exactness=None,
             groups=None) -> CondensedSystem:
    """Eliminate (q, y, p, z) element-locally; skeleton over [yhat|zhat|u].

    The skeleton block S of each element is corrected by -E A^-1 B, the
    right-hand side by -E A^-1 F; recovery data (A^-1 B, A^-1 F) is kept
    per element for back substitution.
    """
    if groups is None:
        groups = control_groups(spaces, spec, exactness)
    layout = (("yhat_o", 0, spaces.M_o.dim),
              ("zhat_o", spaces.M_o.dim, spaces.M_o.dim),
              ("u", 2 * spaces.M_o.dim, spaces.M_bnd.dim))
    dim = 2 * spaces.M_o.dim + spaces.M_bnd.dim
    mono, _ = monolithic_layout(spaces)
    shift = _offsets(mono)["yhat_o"]  # skeleton ids = monolithic ids - shift

    _factor_groups(groups)
    rows, cols, vals = [], [], []
    rhs = np.zeros(dim)
    for g in groups:
        Sc = g.S - np.einsum("tij,tjk->tik", g.E, g.AinvB)
        tc = g.trace_cols - shift
        n = tc.shape[1]
        rows.append(np.repeat(tc[:, :, None], n, axis=2).ravel())
        cols.append(np.repeat(tc[:, None, :], n, axis=1).ravel())
        vals.append(Sc.ravel())
        np.add.at(rhs, tc.ravel(),
                  -np.einsum("tij,tj->ti", g.E, g.AinvF).ravel())
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim)).tocsr()
    return CondensedSystem(matrix=mat, rhs=rhs, layout=layout,
                           spaces=spaces, groups=groups)


def assemble_local(elem: int, spaces: SpaceSet, spec: ProblemSpec,
                   exactness=None) -> LocalBlocks:
    """Dense local blocks of one element of the coupled system."""
    return local_blocks(spaces, spec, elems=[elem], exactness=exactness)[0]


def local_blocks(spaces: SpaceSet, spec: ProblemSpec, elems=None,
                 exactness=None) -> list:
    """LocalBlocks for the requested elements (default: all)."""
    groups = control_groups(spaces, spec, exactness)
    nbk = SimplexBasis(spaces.k).dim
    nbw = SimplexBasis(spaces.k + 1).dim
    npair = 2 * nbk + nbw
    field_slices = {
        "q": slice(0, 2 * nbk), "y": slice(2 * nbk, npair),
        "p": slice(npair, npair + 2 * nbk), "z": slice(npair + 2 * nbk, 2 * npair),
    }
    if elems is None:
        elems = range(len(spaces.mesh.triangles))
    wanted = {int(e): i for i, e in enumerate(elems)}
    out = [None] * len(wanted)
    for g in groups:
        for t, e in enumerate(g.elems):
            if int(e) in wanted:
                out[wanted[int(e)]] = LocalBlocks(
                    elem=int(e), A=g.A[t], B=g.B[t], E=g.E[t], S=g.S[t],
                    F=g.F[t], field_slices=field_slices,
                    local_cols=g.local_cols[t], trace_cols=g.trace_cols[t])
    return out


def apply_monolithic(groups, x, dim):
    """Matrix-free action of the monolithic operator (sum of local blocks)."""
    y = np.zeros(dim)
    for g in groups:
        xl = x[g.local_cols]
        xt = x[g.trace_cols]
        np.add.at(y, g.local_cols.ravel(),
                  (np.einsum("tij,tj->ti", g.A, xl)
                   + np.einsum("tij,tj->ti", g.B, xt)).ravel())
        np.add.at(y, g.trace_cols.ravel(),
                  (np.einsum("tij,tj->ti", g.E, xl)
                   + np.einsum("tij,tj->ti", g.S, xt)).ravel())
    return y


def monolithic_rhs(groups, dim):
    rhs = np.zeros(dim)
    for g in groups:
        np.add.at(rhs, g.local_cols.ravel(), g.F.ravel())
    return rhs


def operator_matrices_b1_b2(spaces: SpaceSet, spec: ProblemSpec,
                            exactness=None):
    """The two first-order-form operators as sparse matrices.

    Both act on [flux | scalar | interior trace] coefficient vectors;
    entry (test, trial).  The scalar rows use the divergence form of the
    flux term, all trace arguments run over the interior skeleton only,
    and boundary-control couplings are excluded.
    """
    prim = _Primitives(spaces, spec, exactness)
    mesh = spaces.mesh
    nbk, nbw, nbm = prim.nbk, prim.nbw, prim.nbm
    T = prim.num_elems
    eps = spec.epsilon

    dimV, dimW, dimMo = spaces.V.dim, spaces.W.dim, spaces.M_o.dim
    dim = dimV + dimW + dimMo
    v_dofs = spaces.V.entity_dofs
    w_dofs = dimV + spaces.W.entity_dofs
    mo_dofs = full_edge_dofs(spaces.M_o, len(mesh.edges))

    def scatter(blocks, rows_idx, cols_idx, acc):
        m, nr, nc = blocks.shape
        r = np.repeat(rows_idx[:, :, None], nc, axis=2).ravel()
        c = np.repeat(cols_idx[:, None, :], nr, axis=1).ravel()
        acc[0].append(r)
        acc[1].append(c)
        acc[2].append(blocks.ravel())

    out = []
    for which in (1, 2):
        acc = ([], [], [])
        # flux rows
        for c in range(2):
            rows = v_dofs[:, c * nbk:(c + 1) * nbk]
            scatter(prim.Mk / eps, rows, rows, acc)
            scatter(-prim.P_div[:, c], rows, w_dofs, acc)
        # scalar rows: divergence form of the flux term
        for c in range(2):
            cols = v_dofs[:, c * nbk:(c + 1) * nbk]
            scatter(np.swapaxes(prim.P_div[:, c], 1, 2), w_dofs, cols, acc)
        if which == 1:
            scatter(-prim.CONV - prim.DVB, w_dofs, w_dofs, acc)
        else:
            scatter(prim.CONV.copy(), w_dofs, w_dofs, acc)
        for f in prim.face:
            scatter(f["FWW1"] if which == 1 else f["FWW2"],
                    w_dofs, w_dofs, acc)
            ints = np.nonzero(f["interior"])[0]
            if len(ints) == 0:
                continue
            mrows = mo_dofs[f["edge"][ints]] + dimV + dimW
            nrm = f["normal"][ints]
            FKM = f["FKM"][ints]
            # trace appearing in flux/scalar rows
            for c in range(2):
                cols = v_dofs[ints, c * nbk:(c + 1) * nbk]
                scatter(nrm[:, None, None, c] * FKM, cols, mrows, acc)
            scatter(-(f["FWM2"][ints] if which == 1 else f["FWM1"][ints]),
                    w_dofs[ints], mrows, acc)
            # flux-continuity rows
            for c in range(2):
                cols = v_dofs[ints, c * nbk:(c + 1) * nbk]
                scatter(-nrm[:, None, None, c] * np.swapaxes(FKM, 1, 2),
                        mrows, cols, acc)
            scatter(-np.swapaxes(f["FWM1"][ints] if which == 1
                                 else f["FWM2"][ints], 1, 2),
                    mrows, w_dofs[ints], acc)
            scatter(f["FMM1"][ints] if which == 1 else f["FMM2"][ints],
                    mrows, mrows, acc)
        mat = sp.coo_matrix(
            (np.concatenate(acc[2]),
             (np.concatenate(acc[0]), np.concatenate(acc[1]))),
            shape=(dim, dim)).tocsr()
        out.append(mat)
    return out[0], out[1]


def dump_matrix(matrix, target) -> None:
    """Coordinate text dump: one ``row col value`` line per stored entry."""
    coo = matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))

    def write(fh):
        for i in order:
            fh.write(f"{coo.row[i]} {coo.col[i]} {coo.data[i]:.17g}\n")

    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        with open(target, "w") as fh:
            write(fh)
    else:
        write(target)
