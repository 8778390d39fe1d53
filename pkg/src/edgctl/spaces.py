"""Degree-of-freedom maps for the four discrete spaces.

For flux degree k the spaces are

* V: per-element [P^k]^2 vector fluxes, fully discontinuous;
* W: per-element P^(k+1) scalars, fully discontinuous;
* M_o: edgewise P^(k+1) on the interior skeleton (trace unknowns);
* M_bnd: edgewise P^(k+1) on the boundary skeleton (the control).

The trace-continuity variant is what distinguishes the three methods:

* HDG: M_o and M_bnd edgewise discontinuous;
* EDG: both continuous (M_o across the closure of the interior skeleton,
  M_bnd around the closed boundary loop, corners included);
* IEDG: M_o continuous, M_bnd edgewise discontinuous.

M_o and M_bnd never share dofs: an interior-skeleton endpoint lying on
the domain boundary carries an M_o dof distinct from any control dof, so
the two trace fields couple only through the element equations.

Continuity is realized by keying each edge dof either to its endpoint
vertex ('v', vertex id) or to the edge interior ('e', edge id, slot) and
assigning one global index per distinct key, scanning edges in ascending
id order.  Discontinuous variants key everything to the edge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import CapabilityError
from .fe_basis import SimplexBasis
from .mesh import Mesh

SUPPORTED_DEGREES = (0, 1, 2)


class TraceVariant(Enum):
    EDG = "edg"
    IEDG = "iedg"
    HDG = "hdg"

    @classmethod
    def from_name(cls, name: str) -> "TraceVariant":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise CapabilityError(
                f"unknown method {name!r}; expected one of edg, iedg, hdg"
            ) from None

    @property
    def continuous_interior(self) -> bool:
        return self in (TraceVariant.EDG, TraceVariant.IEDG)

    @property
    def continuous_boundary(self) -> bool:
        return self is TraceVariant.EDG


@dataclass
class DofMap:
    """Entity-local to global index map for one discrete space.

    ``entity_dofs[i]`` lists the global indices of entity ``entities[i]``
    (elements for V/W, edges of the relevant skeleton for M spaces).
    """

    space_kind: str
    dim: int
    entities: np.ndarray
    entity_dofs: np.ndarray
    mesh: Mesh = field(repr=False)

    def entity_to_global(self, entity: int, local: int) -> int:
        row = np.searchsorted(self.entities, entity)
        if row >= len(self.entities) or self.entities[row] != entity:
            raise KeyError(f"entity {entity} not in {self.space_kind} map")
        return int(self.entity_dofs[row, local])

    @property
    def dofs_per_entity(self) -> int:
        return self.entity_dofs.shape[1]


@dataclass
class SpaceSet:
    """The four dof maps for one (mesh, variant, degree) choice."""

    mesh: Mesh
    variant: TraceVariant
    k: int
    V: DofMap
    W: DofMap
    M_o: DofMap
    M_bnd: DofMap

    def __iter__(self):
        return iter((self.V, self.W, self.M_o, self.M_bnd))

    @property
    def trace_dofs_per_edge(self) -> int:
        return self.k + 2


def _element_map(mesh, kind, n_local):
    T = len(mesh.triangles)
    dofs = np.arange(T * n_local, dtype=np.int64).reshape(T, n_local)
    return DofMap(space_kind=kind, dim=T * n_local,
                  entities=np.arange(T), entity_dofs=dofs, mesh=mesh)


def _edge_map(mesh, kind, edge_ids, n_per_edge, continuous):
    """Number edge dofs, sharing endpoint dofs between edges iff continuous.

    Local dof order on an edge follows the canonical parameterization
    (small vertex id -> large): slot 0 at t=0, slot n-1 at t=1.
    """
    keys = {}
    rows = np.empty((len(edge_ids), n_per_edge), dtype=np.int64)
    next_id = 0
    for r, e in enumerate(edge_ids):
        va, vb = mesh.edges[e].vertex_ids
        for slot in range(n_per_edge):
            if continuous and slot == 0:
                key = ("v", va)
            elif continuous and slot == n_per_edge - 1:
                key = ("v", vb)
            else:
                key = ("e", e, slot)
            if key not in keys:
                keys[key] = next_id
                next_id += 1
            rows[r, slot] = keys[key]
    return DofMap(space_kind=kind, dim=next_id,
                  entities=np.asarray(edge_ids, dtype=np.int64),
                  entity_dofs=rows, mesh=mesh)


def build_spaces(mesh: Mesh, variant: TraceVariant, k: int) -> SpaceSet:
    """Construct dof maps for V, W, M_o, M_bnd.

    Trace spaces carry edgewise P^(k+1); only k in {0, 1, 2} is supported.
    """
    if k not in SUPPORTED_DEGREES:
        raise CapabilityError(f"flux degree k={k} unsupported; k must be in "
                              f"{SUPPORTED_DEGREES}")
    if isinstance(variant, str):
        variant = TraceVariant.from_name(variant)

    nbk = SimplexBasis(k).dim
    nbw = SimplexBasis(k + 1).dim
    interior = np.nonzero(mesh.edge_is_interior)[0]
    boundary = np.nonzero(~mesh.edge_is_interior)[0]

    V = _element_map(mesh, "V", 2 * nbk)
    W = _element_map(mesh, "W", nbw)
    M_o = _edge_map(mesh, "M_o", interior, k + 2, variant.continuous_interior)
    M_bnd = _edge_map(mesh, "M_bnd", boundary, k + 2, variant.continuous_boundary)
    return SpaceSet(mesh=mesh, variant=variant, k=k,
                    V=V, W=W, M_o=M_o, M_bnd=M_bnd)


def dof_report(spaces: SpaceSet) -> dict:
    """Per-space and aggregate dof counts.

    ``monolithic`` counts all unknowns of the coupled optimality system
    (two fluxes, two scalars, two interior traces, one control);
    ``condensed`` is the skeleton system size after element elimination.
    """
    level = spaces.mesh.level
    return {
        "variant": spaces.variant.value,
        "k": spaces.k,
        "level": level,
        "dim_V": spaces.V.dim,
        "dim_W": spaces.W.dim,
        "dim_Mo": spaces.M_o.dim,
        "dim_Mbnd": spaces.M_bnd.dim,
        "monolithic": 2 * spaces.V.dim + 2 * spaces.W.dim
                      + 2 * spaces.M_o.dim + spaces.M_bnd.dim,
        "condensed": 2 * spaces.M_o.dim + spaces.M_bnd.dim,
    }


def dof_report_json(spaces: SpaceSet) -> str:
    return json.dumps(dof_report(spaces), indent=2, sort_keys=True)
