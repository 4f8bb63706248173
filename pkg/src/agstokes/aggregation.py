"""Cell aggregation: every cut cell is attached to an internal root cell.

Aggregates grow in rounds. In each round, every untouched cut cell that has a
touched facet neighbour (through a facet with a non-empty inside part) joins
the aggregate of the neighbour whose root centre is closest; ties go to the
smaller root index, then the smaller neighbour index. Updates are committed at
the end of the round, so the result does not depend on the visiting order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cutcell import CutDecomposition, decompose, facet_measure
from .geometry import CellClass, Classification
from .mesh import BackgroundMesh


class AggregationError(RuntimeError):
    pass


@dataclass
class AggregateMap:
    root_of_cell: np.ndarray  # -1 on external cells
    aggregate_id: np.ndarray  # -1 on external cells
    roots: np.ndarray  # root cell of each aggregate
    members: list  # sorted member cells per aggregate
    distance_cells: np.ndarray  # Chebyshev distance of each cell to its root (-1 external)
    root_mask: np.ndarray  # cells that may serve as roots
    outer_keys: np.ndarray  # doubled-lattice keys of outer VEFs
    n_rounds: int = 0
    owner_of_outer_vef: dict = field(default_factory=dict)

    @property
    def n_aggregates(self) -> int:
        return len(self.roots)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(m) for m in self.members], dtype=np.int64)

    @property
    def aggregate_diameter_cells(self) -> np.ndarray:
        return np.array([self.distance_cells[m].max() for m in self.members], dtype=np.int64)

    def non_singleton(self) -> np.ndarray:
        return np.flatnonzero(self.sizes > 1)


def _outer_keys(mesh, classification, root_mask):
    active = classification.cell_class != CellClass.EXTERNAL
    others = np.flatnonzero(active & ~root_mask)
    if others.size == 0:
        return np.zeros(0, dtype=np.int64)
    k_other = np.unique(mesh.cell_vef_keys(others).ravel())
    k_root = np.unique(mesh.cell_vef_keys(np.flatnonzero(root_mask)).ravel())
    return np.setdiff1d(k_other, k_root)


def cut_volume_fractions(mesh: BackgroundMesh, classification: Classification, decomposition=None) -> np.ndarray:
    """``eta_K = |K ∩ Ω_h| / |K|`` for every cell."""
    eta = np.where(classification.cell_class == CellClass.INTERNAL, 1.0, 0.0)
    if decomposition is None:
        decomposition = decompose(mesh, classification)
    for c, cc in decomposition.cells.items():
        eta[c] = cc.volume / mesh.cell_volume()
    return eta


def aggregate_cells(
    mesh: BackgroundMesh,
    classification: Classification,
    decomposition: CutDecomposition | None = None,
    eta0: float = 0.0,
) -> AggregateMap:
    """Build aggregates. With ``eta0 > 0`` cut cells with ``eta_K > eta0`` are roots too."""
    cls = classification.cell_class
    root_mask = cls == CellClass.INTERNAL
    if eta0 > 0:
        eta = cut_volume_fractions(mesh, classification, decomposition)
        root_mask = root_mask | ((cls == CellClass.CUT) & (eta > eta0))
    if not np.any(root_mask) and np.any(cls != CellClass.EXTERNAL):
        raise AggregationError("no internal cell to aggregate to; refine the mesh")

    root = np.full(mesh.n_cells, -1, dtype=np.int64)
    root[root_mask] = np.flatnonzero(root_mask)
    vv = classification.vertex_values
    centers = mesh.cell_center(np.arange(mesh.n_cells))
    nbrs = mesh.neighbor_table()
    pending = sorted(int(c) for c in np.flatnonzero((cls == CellClass.CUT) & ~root_mask))
    fm_cache: dict = {}

    def open_facet(cell, lf):
        key = mesh.facet_key(cell, lf)
        if key not in fm_cache:
            fm_cache[key] = facet_measure(mesh, vv, key) > 0
        return fm_cache[key]

    rounds = 0
    while pending:
        rounds += 1
        updates = {}
        for c in pending:
            best = None
            for lf in range(2 * mesh.dim):
                nb = int(nbrs[c, lf])
                if nb < 0 or root[nb] < 0 or not open_facet(c, lf):
                    continue
                r = int(root[nb])
                cand = (float(np.linalg.norm(centers[c] - centers[r])), r, nb)
                if best is None or cand < best:
                    best = cand
            if best is not None:
                updates[c] = best[1]
        if not updates:
            c = pending[0]
            raise AggregationError(
                f"cut cell {c} (ijk {mesh.cell_ijk(c).tolist()}) cannot reach an internal cell "
                "through facets intersecting the domain; refine the mesh"
            )
        for c, r in updates.items():
            root[c] = r
        pending = [c for c in pending if c not in updates]

    roots = np.unique(root[root >= 0])
    agg_id = np.full(mesh.n_cells, -1, dtype=np.int64)
    agg_id[root >= 0] = np.searchsorted(roots, root[root >= 0])
    order = np.argsort(agg_id, kind="stable")
    order = order[agg_id[order] >= 0]
    members = np.split(order, np.flatnonzero(np.diff(agg_id[order])) + 1) if order.size else []
    dist = np.full(mesh.n_cells, -1, dtype=np.int64)
    act = np.flatnonzero(root >= 0)
    if act.size:
        dist[act] = np.abs(mesh.cell_ijk(act) - mesh.cell_ijk(root[act])).max(axis=1)
    amap = AggregateMap(
        root_of_cell=root,
        aggregate_id=agg_id,
        roots=roots,
        members=[np.sort(m) for m in members],
        distance_cells=dist,
        root_mask=root_mask,
        outer_keys=_outer_keys(mesh, classification, root_mask),
        n_rounds=rounds,
    )
    return assign_outer_vef_owners(mesh, classification, amap)


def assign_outer_vef_owners(mesh: BackgroundMesh, classification: Classification, amap: AggregateMap) -> AggregateMap:
    """Map each outer VEF to the containing aggregate with fewest cells (ties: smaller root)."""
    sizes = amap.sizes
    owners = {}
    for key in amap.outer_keys:
        cells = mesh.cells_of_key(int(key))
        aggs = {int(amap.aggregate_id[c]) for c in cells if amap.aggregate_id[c] >= 0}
        if not aggs:
            raise AggregationError(f"outer VEF {mesh.key_to_vef(key)} is contained in no aggregate")
        owners[int(key)] = min(aggs, key=lambda a: (sizes[a], amap.roots[a]))
    amap.owner_of_outer_vef = owners
    return amap


def aggregate_statistics(amap: AggregateMap) -> dict:
    sizes = amap.sizes
    if sizes.size == 0:
        return {"n_aggregates": 0, "max_size": 0, "mean_size": 0.0, "max_root_distance": 0, "n_rounds": 0}
    return {
        "n_aggregates": int(len(sizes)),
        "max_size": int(sizes.max()),
        "mean_size": float(sizes.mean()),
        "max_root_distance": int(amap.distance_cells.max()),
        "n_rounds": int(amap.n_rounds),
    }
