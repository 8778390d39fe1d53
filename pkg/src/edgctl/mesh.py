"""Triangulations of polygonal domains with a classified edge skeleton.

The mesh stores, besides vertices and triangles, one record per geometric
edge together with the element/edge adjacency needed by hybrid assembly:
which triangles see the edge, through which local edge, and with which
orientation relative to the canonical direction of the edge.

Conventions (fixed, relied upon everywhere else):

* triangles are counterclockwise vertex triples;
* local edge ``le`` of triangle ``(v0, v1, v2)`` is the edge opposite the
  local vertex ``le``, traversed ``(le+1)%3 -> (le+2)%3``;
* the canonical direction of an edge runs from the smaller to the larger
  vertex id; the per-triangle orientation sign is +1 when the triangle's
  traversal agrees with it;
* edges are numbered in lexicographic order of their canonical vertex
  pairs, so the numbering does not depend on triangle insertion order.

Uniform refinements of the unit square split every grid cell along the
same lower-left to upper-right diagonal, which makes consecutive levels
nested (each triangle is the union of four triangles of the next level).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, StructuralError

_LOCATE_TOL = 1e-12


@dataclass(frozen=True)
class EdgeRecord:
    """One geometric edge with its element adjacency.

    ``adjacency`` holds ``(triangle id, local edge index, orientation sign)``
    per adjacent triangle; ``normals`` holds the matching outward unit
    normals.  Interior edges have two entries, boundary edges one.
    """

    vertex_ids: tuple[int, int]
    kind: str
    adjacency: tuple[tuple[int, int, int], ...]
    length: float
    normals: tuple[tuple[float, float], ...]


class Mesh:
    """Conforming triangulation of a simply connected polygon.

    Parameters
    ----------
    vertices : (V, 2) array
    triangles : (T, 3) int array, counterclockwise vertex triples
    level : refinement level when produced by `build_uniform_square`,
        else None.

    All structural invariants (positive areas, 1-or-2 triangles per edge,
    Euler relation V - E + T = 1) are validated at construction time.
    """

    def __init__(self, vertices, triangles, level=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.level = level
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise StructuralError("vertices must be an (V, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise StructuralError("triangles must be a (T, 3) array")
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise StructuralError("triangle vertex id out of range")

        tri_pts = self.vertices[self.triangles]  # (T, 3, 2)
        d1 = tri_pts[:, 1] - tri_pts[:, 0]
        d2 = tri_pts[:, 2] - tri_pts[:, 0]
        cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if np.any(cross <= 0):
            bad = int(np.argmax(cross <= 0))
            raise StructuralError(
                f"triangle {bad} has non-positive signed area {0.5 * cross[bad]:g}"
            )
        self.areas = 0.5 * cross

        self._build_edges()
        self.h_global = float(
            max(rec.length for rec in self.edges)) if self.edges else 0.0

        n_int = int(np.count_nonzero(self.edge_is_interior))
        euler = len(self.vertices) - len(self.edges) + len(self.triangles)
        if euler != 1:
            raise StructuralError(
                f"Euler relation violated: V-E+T = {euler}, expected 1 "
                "(mesh not a simply connected polygon)"
            )
        self.num_interior_edges = n_int
        self.num_boundary_edges = len(self.edges) - n_int

    # -- construction helpers -------------------------------------------------

    def _build_edges(self):
        tris = self.triangles
        T = len(tris)
        # endpoints of local edge le: (le+1)%3 -> (le+2)%3
        a = np.stack([tris[:, 1], tris[:, 2], tris[:, 0]], axis=1).ravel()
        b = np.stack([tris[:, 2], tris[:, 0], tris[:, 1]], axis=1).ravel()
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        pairs = np.stack([lo, hi], axis=1)
        unique, inverse = np.unique(pairs, axis=0, return_inverse=True)
        E = len(unique)

        tri_edges = inverse.reshape(T, 3)
        tri_edge_sign = np.where(a <= b, 1, -1).reshape(T, 3)

        counts = np.bincount(inverse, minlength=E)
        if np.any(counts > 2):
            bad = int(np.argmax(counts > 2))
            raise StructuralError(
                f"edge {tuple(unique[bad])} adjacent to {counts[bad]} triangles"
            )

        pts = self.vertices
        lengths = np.linalg.norm(pts[unique[:, 1]] - pts[unique[:, 0]], axis=1)

        # outward normal of local edge le for a CCW triangle: rotate the
        # traversal direction by -90 degrees
        pa = pts[a].reshape(T, 3, 2)
        pb = pts[b].reshape(T, 3, 2)
        direc = pb - pa
        dlen = np.linalg.norm(direc, axis=2, keepdims=True)
        normals = np.stack([direc[:, :, 1], -direc[:, :, 0]], axis=2) / dlen

        adjacency: list[list[tuple[int, int, int]]] = [[] for _ in range(E)]
        edge_normals: list[list[tuple[float, float]]] = [[] for _ in range(E)]
        for t in range(T):
            for le in range(3):
                e = tri_edges[t, le]
                adjacency[e].append((t, le, int(tri_edge_sign[t, le])))
                edge_normals[e].append(
                    (float(normals[t, le, 0]), float(normals[t, le, 1])))

        self.edges = [
            EdgeRecord(
                vertex_ids=(int(unique[e, 0]), int(unique[e, 1])),
                kind="interior" if counts[e] == 2 else "boundary",
                adjacency=tuple(adjacency[e]),
                length=float(lengths[e]),
                normals=tuple(edge_normals[e]),
            )
            for e in range(E)
        ]
        self.edge_vertices = unique
        self.edge_lengths = lengths
        self.edge_is_interior = counts == 2
        self.tri_edges = tri_edges
        self.tri_edge_sign = tri_edge_sign
        self.tri_edge_normals = normals
        self.tri_edge_lengths = lengths[tri_edges]

    # -- geometry -------------------------------------------------------------

    def jacobians(self):
        """Affine maps reference->physical: returns (J, Jinv, det, v0)."""
        tri_pts = self.vertices[self.triangles]
        v0 = tri_pts[:, 0]
        J = np.stack([tri_pts[:, 1] - v0, tri_pts[:, 2] - v0], axis=2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        Jinv = np.empty_like(J)
        Jinv[:, 0, 0] = J[:, 1, 1]
        Jinv[:, 0, 1] = -J[:, 0, 1]
        Jinv[:, 1, 0] = -J[:, 1, 0]
        Jinv[:, 1, 1] = J[:, 0, 0]
        Jinv /= det[:, None, None]
        return J, Jinv, det, v0

    def barycentric(self, tri_ids, pts):
        """Barycentric coordinates of ``pts`` w.r.t. the given triangles."""
        tri_pts = self.vertices[self.triangles[tri_ids]]
        v0, v1, v2 = tri_pts[:, 0], tri_pts[:, 1], tri_pts[:, 2]
        d = pts - v0
        e1 = v1 - v0
        e2 = v2 - v0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        l1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
        l2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
        return np.stack([1.0 - l1 - l2, l1, l2], axis=1)


def build_uniform_square(level: int) -> Mesh:
    """Uniform triangulation of the unit square at the given level.

    A 2^level x 2^level grid of cells, each split along the lower-left to
    upper-right diagonal into two triangles (lower one first), so that
    meshes at consecutive levels are nested.
    """
    if level < 0 or int(level) != level:
        raise StructuralError("level must be a nonnegative integer")
    n = 2 ** int(level)
    coords = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(coords, coords, indexing="xy")
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return j * (n + 1) + i

    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    t = 0
    for j in range(n):
        for i in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris[t] = (v00, v10, v11)      # lower triangle (below diagonal)
            tris[t + 1] = (v00, v11, v01)  # upper triangle
            t += 2
    return Mesh(vertices, tris, level=int(level))


def classify_edges(mesh: Mesh):
    """Partition edge ids into (interior, boundary) by adjacency count."""
    counts = np.array([len(rec.adjacency) for rec in mesh.edges])
    if np.any((counts < 1) | (counts > 2)):
        bad = int(np.argmax((counts < 1) | (counts > 2)))
        raise StructuralError(f"edge {bad} adjacent to {counts[bad]} triangles")
    ids = np.arange(len(mesh.edges))
    return ids[counts == 2], ids[counts == 1]


def locate_points(mesh: Mesh, pts):
    """Vectorized point location: containing triangle + barycentrics.

    Points on element boundaries resolve to the lowest containing
    triangle id.  Raises DomainError if any point is outside the domain.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if mesh.level is not None:
        return _locate_uniform(mesh, pts)
    return _locate_scan(mesh, pts)


def locate_point(mesh: Mesh, x):
    """Locate a single point; returns (triangle id, barycentric (3,))."""
    tris, bary = locate_points(mesh, np.asarray(x, dtype=float)[None, :])
    return int(tris[0]), bary[0]


def _locate_uniform(mesh, pts):
    n = 2 ** mesh.level
    eps = _LOCATE_TOL
    out = (pts[:, 0] < -eps) | (pts[:, 0] > 1 + eps) | \
          (pts[:, 1] < -eps) | (pts[:, 1] > 1 + eps)
    if np.any(out):
        bad = pts[np.argmax(out)]
        raise DomainError(f"point {tuple(bad)} outside the unit square")

    gx = pts[:, 0] * n
    gy = pts[:, 1] * n
    i = np.clip(np.floor(gx).astype(np.int64), 0, n - 1)
    j = np.clip(np.floor(gy).astype(np.int64), 0, n - 1)
    fx = gx - i
    fy = gy - j
    tris = 2 * (j * n + i) + (fy > fx)

    # points within tolerance of a cell edge or the diagonal may belong to
    # a lower-numbered triangle; re-resolve those against all candidates
    tol = 4 * eps * n
    near = (fx < tol) | (fy < tol) | (np.abs(fy - fx) < tol) | \
           (fx > 1 - tol) | (fy > 1 - tol)
    if np.any(near):
        idx = np.nonzero(near)[0]
        for m in idx:
            best = None
            for jj in (j[m] - 1, j[m], j[m] + 1):
                for ii in (i[m] - 1, i[m], i[m] + 1):
                    if not (0 <= ii < n and 0 <= jj < n):
                        continue
                    for t in (2 * (jj * n + ii), 2 * (jj * n + ii) + 1):
                        lam = mesh.barycentric(np.array([t]), pts[m][None, :])[0]
                        if lam.min() >= -1e-10:
                            best = t if best is None else min(best, t)
            if best is not None:
                tris[m] = best
    bary = mesh.barycentric(tris, pts)
    return tris, np.clip(bary, 0.0, 1.0)


def _locate_scan(mesh, pts):
    tris = np.full(len(pts), -1, dtype=np.int64)
    all_ids = np.arange(len(mesh.triangles))
    for m, p in enumerate(pts):
        lam = mesh.barycentric(all_ids, np.repeat(p[None, :], len(all_ids), axis=0))
        inside = np.nonzero(lam.min(axis=1) >= -1e-10)[0]
        if len(inside) == 0:
            raise DomainError(f"point {tuple(p)} outside the domain")
        tris[m] = inside[0]
    bary = mesh.barycentric(tris, pts)
    return tris, np.clip(bary, 0.0, 1.0)


def dump_mesh(mesh: Mesh, target) -> None:
    """Write a plain-text mesh dump.

    One record per line: ``vertex x y``, ``triangle i j k``,
    ``edge i j kind``.
    """
    def write(fh):
        for v in mesh.vertices:
            fh.write(f"vertex {v[0]:.17g} {v[1]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"triangle {t[0]} {t[1]} {t[2]}\n")
        for rec in mesh.edges:
            fh.write(f"edge {rec.vertex_ids[0]} {rec.vertex_ids[1]} {rec.kind}\n")

    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        with open(target, "w") as fh:
            write(fh)
    else:
        write(target)


def mesh_dump_text(mesh: Mesh) -> str:
    buf = io.StringIO()
    dump_mesh(mesh, buf)
    return buf.getvalue()
