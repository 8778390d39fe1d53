"""Independent oracles used by the test suite.

Everything here is deliberately written against the equations directly,
with plain per-element/per-point loops, independent of the vectorized
production assembly: these are the second route of every dual-route
check.
"""

import numpy as np

from edgctl.fe_basis import (EdgeBasis, SimplexBasis, edge_quadrature,
                             triangle_quadrature)
from edgctl.assembly import full_edge_dofs

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


# -- union-find dof counting ------------------------------------------------------


class DisjointSets:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[rj] = ri


def union_find_trace_dim(mesh, edge_ids, n_per_edge, continuous):
    """Number of trace dofs by brute-force merging of shared endpoints."""
    edge_ids = list(edge_ids)
    n = len(edge_ids) * n_per_edge
    dsu = DisjointSets(n)
    if continuous:
        by_vertex = {}
        for r, e in enumerate(edge_ids):
            va, vb = mesh.edges[e].vertex_ids
            for v, slot in ((va, 0), (vb, n_per_edge - 1)):
                node = r * n_per_edge + slot
                if v in by_vertex:
                    dsu.union(by_vertex[v], node)
                else:
                    by_vertex[v] = node
    return len({dsu.find(i) for i in range(n)})


# -- quadrature helpers -----------------------------------------------------------


def element_quad_points(mesh, elem, rule):
    verts = mesh.vertices[mesh.triangles[elem]]
    J = np.stack([verts[1] - verts[0], verts[2] - verts[0]], axis=1)
    qp = verts[0][None, :] + rule.points @ J.T
    detJ = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    return qp, rule.weights * detJ, J


def edge_geometry(mesh, elem, le):
    """Canonical endpoints, reference-edge map, normal, sign, length."""
    e = mesh.tri_edges[elem, le]
    rec = mesh.edges[e]
    s = mesh.tri_edge_sign[elem, le]
    va = mesh.vertices[rec.vertex_ids[0]]
    vb = mesh.vertices[rec.vertex_ids[1]]
    ra, rb = (REF[(le + 1) % 3], REF[(le + 2) % 3])
    if s < 0:
        ra, rb = rb, ra
    n = mesh.tri_edge_normals[elem, le]
    return e, rec, va, vb, ra, rb, n, rec.length


# -- independent element assembly -------------------------------------------------


def local_blocks_oracle(spaces, spec, elem, exactness):
    """Dense local blocks of one element, assembled by plain loops.

    Returns (A, B, E, S, F) with the same local layout as the production
    assembly: fields [q | y | p | z], traces [yhat | zhat | u] slots over
    local edges in ascending local-edge order.
    """
    mesh, k = spaces.mesh, spaces.k
    bk, bw, bm = SimplexBasis(k), SimplexBasis(k + 1), EdgeBasis(k + 1)
    nbk, nbw, nbm = bk.dim, bw.dim, bm.dim
    npair = 2 * nbk + nbw
    nloc = 2 * npair
    vrule = triangle_quadrature(exactness)
    erule = edge_quadrature(exactness)

    qp, dw, J = element_quad_points(mesh, elem, vrule)
    Jinv = np.linalg.inv(J)
    Pk = bk.eval(vrule.points)
    Pw = bw.eval(vrule.points)
    Gk = np.einsum("iqd,dc->iqc", bk.grad(vrule.points), Jinv)
    Gw = np.einsum("iqd,dc->iqc", bw.grad(vrule.points), Jinv)
    beta = spec.beta(qp)
    divb = spec.div_beta(qp)

    A = np.zeros((nloc, nloc))
    F = np.zeros(nloc)
    eps = spec.epsilon
    for c in range(2):
        for i in range(nbk):
            for j in range(nbk):
                m = np.sum(Pk[i] * Pk[j] * dw) / eps
                A[c * nbk + i, c * nbk + j] += m
                A[npair + c * nbk + i, npair + c * nbk + j] += m
        for i in range(nbk):
            for j in range(nbw):
                div_ij = np.sum(Gk[i, :, c] * Pw[j] * dw)
                grad_ij = np.sum(Pk[i] * Gw[j, :, c] * dw)
                A[c * nbk + i, 2 * nbk + j] += -div_ij
                A[npair + c * nbk + i, npair + 2 * nbk + j] += -div_ij
                A[2 * nbk + j, c * nbk + i] += -grad_ij
                A[npair + 2 * nbk + j, npair + c * nbk + i] += -grad_ij
    for i in range(nbw):
        for j in range(nbw):
            conv = np.sum((beta[:, 0] * Gw[j, :, 0] + beta[:, 1] * Gw[j, :, 1])
                          * Pw[i] * dw)
            dvb = np.sum(divb * Pw[i] * Pw[j] * dw)
            A[2 * nbk + j, 2 * nbk + i] += -conv - dvb
            A[npair + 2 * nbk + j, npair + 2 * nbk + i] += conv
            A[npair + 2 * nbk + j, 2 * nbk + i] += \
                -np.sum(Pw[i] * Pw[j] * dw)
        F[2 * nbk + i] = np.sum(spec.f(qp) * Pw[i] * dw)
        F[npair + 2 * nbk + i] = -np.sum(spec.y_d(qp) * Pw[i] * dw)

    # trace layout
    interior = [mesh.edges[mesh.tri_edges[elem, le]].kind == "interior"
                for le in range(3)]
    slots = []         # (field, le) per block of nbm columns
    for le in range(3):
        if interior[le]:
            slots.append(("yhat", le))
    for le in range(3):
        if interior[le]:
            slots.append(("zhat", le))
    for le in range(3):
        if not interior[le]:
            slots.append(("u", le))
    ntr = len(slots) * nbm
    B = np.zeros((nloc, ntr))
    E = np.zeros((ntr, nloc))
    S = np.zeros((ntr, ntr))

    Mt = bm.eval(erule.points)
    for si, (fieldname, le) in enumerate(slots):
        _, rec, va, vb, ra, rb, n, L = edge_geometry(mesh, elem, le)
        fp = va[None, :] + erule.points[:, None] * (vb - va)[None, :]
        rp = ra[None, :] + erule.points[:, None] * (rb - ra)[None, :]
        Wt = bw.eval(rp)
        Kt = bk.eval(rp)
        ds = erule.weights * L
        tau1 = spec.tau1_rule(va, vb)
        bn = np.sum(spec.beta(fp) * n[None, :], axis=-1)
        w1 = 1.0 / L + tau1
        w2 = w1 - bn
        cs = slice(si * nbm, (si + 1) * nbm)
        for a in range(nbm):
            for c in range(2):
                for m in range(nbk):
                    knm = n[c] * np.sum(Kt[m] * Mt[a] * ds)
                    if fieldname == "yhat":
                        B[c * nbk + m, si * nbm + a] += knm
                        E[si * nbm + a, c * nbk + m] += knm
                    elif fieldname == "zhat":
                        B[npair + c * nbk + m, si * nbm + a] += knm
                        E[si * nbm + a, npair + c * nbk + m] += knm
                    else:
                        B[c * nbk + m, si * nbm + a] += knm
                        E[si * nbm + a, npair + c * nbk + m] += knm
            for j in range(nbw):
                wm1 = np.sum(w1 * Wt[j] * Mt[a] * ds)
                wm2 = np.sum(w2 * Wt[j] * Mt[a] * ds)
                if fieldname == "yhat":
                    B[2 * nbk + j, si * nbm + a] += -wm2
                    E[si * nbm + a, 2 * nbk + j] += wm1
                elif fieldname == "zhat":
                    B[npair + 2 * nbk + j, si * nbm + a] += -wm1
                    E[si * nbm + a, npair + 2 * nbk + j] += wm2
                else:
                    B[2 * nbk + j, si * nbm + a] += -wm2
                    E[si * nbm + a, npair + 2 * nbk + j] += wm2
            for b in range(nbm):
                mm1 = np.sum(w1 * Mt[a] * Mt[b] * ds)
                mm2 = np.sum(w2 * Mt[a] * Mt[b] * ds)
                mmu = np.sum(Mt[a] * Mt[b] * ds)
                if fieldname == "yhat":
                    S[si * nbm + a, si * nbm + b] += -mm1
                elif fieldname == "zhat":
                    S[si * nbm + a, si * nbm + b] += -mm2
                else:
                    S[si * nbm + a, si * nbm + b] += spec.gamma * mmu

    # stabilized face terms of the scalar rows (all edges)
    for le in range(3):
        _, rec, va, vb, ra, rb, n, L = edge_geometry(mesh, elem, le)
        fp = va[None, :] + erule.points[:, None] * (vb - va)[None, :]
        rp = ra[None, :] + erule.points[:, None] * (rb - ra)[None, :]
        Wt = bw.eval(rp)
        Kt = bk.eval(rp)
        ds = erule.weights * L
        tau1 = spec.tau1_rule(va, vb)
        bn = np.sum(spec.beta(fp) * n[None, :], axis=-1)
        w1 = 1.0 / L + tau1
        w2 = w1 - bn
        for i in range(nbw):
            for j in range(nbw):
                A[2 * nbk + j, 2 * nbk + i] += np.sum(w1 * Wt[i] * Wt[j] * ds)
                A[npair + 2 * nbk + j, npair + 2 * nbk + i] += \
                    np.sum(w2 * Wt[i] * Wt[j] * ds)
            for c in range(2):
                for m in range(nbk):
                    knw = n[c] * np.sum(Kt[m] * Wt[i] * ds)
                    A[2 * nbk + i, c * nbk + m] += knw
                    A[npair + 2 * nbk + i, npair + c * nbk + m] += knw
    return A, B, E, S, F


# -- quadratic form oracle for the first-order operators ---------------------------


def energy_quadrature(spaces, spec, vecs, which, exactness):
    """Quadratic form of B1 (which=1) or B2 (which=2) at given vectors.

    Evaluates, per vector x = [flux | scalar | trace],

      eps^-1 ||v||^2  -  1/2 (div beta w, w)
      + sum over element faces of <(1/|e| + tau -/+ beta.n/2) d, d>

    with d = w - mu on interior faces, d = w on boundary faces, tau =
    tau1 for B1 (minus sign) and tau2 for B2 (plus sign), straight from
    field values at quadrature points.
    """
    vecs = np.atleast_2d(vecs)
    mesh, k = spaces.mesh, spaces.k
    nV, nW = spaces.V.dim, spaces.W.dim
    bk, bw, bm = SimplexBasis(k), SimplexBasis(k + 1), EdgeBasis(k + 1)
    vrule = triangle_quadrature(exactness)
    erule = edge_quadrature(exactness)
    T = len(mesh.triangles)
    nvec = len(vecs)
    totals = np.zeros(nvec)

    v = vecs[:, :nV].reshape(nvec, T, 2, bk.dim)
    w = vecs[:, nV:nV + nW].reshape(nvec, T, bw.dim)
    mu = vecs[:, nV + nW:]
    mo = full_edge_dofs(spaces.M_o, len(mesh.edges))
    Pk = bk.eval(vrule.points)
    Pw = bw.eval(vrule.points)
    Mt = bm.eval(erule.points)

    for t in range(T):
        qp, dw, _ = element_quad_points(mesh, t, vrule)
        vq = np.einsum("nci,iq->nqc", v[:, t], Pk)
        wq = np.einsum("ni,iq->nq", w[:, t], Pw)
        totals += np.sum(np.sum(vq ** 2, axis=2) * dw, axis=1) / spec.epsilon
        totals += -0.5 * np.sum(spec.div_beta(qp)[None, :] * wq ** 2 * dw,
                                axis=1)
        for le in range(3):
            e, rec, va, vb, ra, rb, n, L = edge_geometry(mesh, t, le)
            fp = va[None, :] + erule.points[:, None] * (vb - va)[None, :]
            rp = ra[None, :] + erule.points[:, None] * (rb - ra)[None, :]
            wq = np.einsum("ni,iq->nq", w[:, t], bw.eval(rp))
            tau1 = spec.tau1_rule(va, vb)
            bn = np.sum(spec.beta(fp) * n[None, :], axis=-1)
            tau = tau1 if which == 1 else tau1 - bn
            half = -0.5 if which == 1 else 0.5
            weight = 1.0 / L + tau + half * bn
            if rec.kind == "interior":
                muq = mu[:, mo[e]] @ Mt
                d = wq - muq
            else:
                d = wq
            totals += np.sum(weight[None, :] * d ** 2
                             * erule.weights[None, :], axis=1) * L
    return totals if len(totals) > 1 else float(totals[0])
