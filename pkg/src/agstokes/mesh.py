"""
Uniform Cartesian background meshes.

Every topological entity (vertex, edge, face, cell) is addressed through a
"doubled lattice" coordinate ``c`` with ``c[a] in 0..2*n[a]``: an even entry
means the entity sits on the grid plane ``x[a] = origin[a] + (c[a] / 2) * h``,
an odd entry means it spans the cell interval ``(c[a] - 1) / 2`` along axis
``a``. The entity dimension is the number of odd entries.

Lexicographic numbering (x fastest) is used everywhere:

* cell ``(i, j[, k])``      -> ``i + n0 * (j + n1 * k)``
* vertex ``(i, j[, k])``    -> ``i + (n0 + 1) * (j + (n1 + 1) * k)``
* entity of dimension ``k`` -> ``offset(orientation) + lex(position)`` where the
  orientation is the sorted tuple of axes the entity extends along, the
  orientations of one dimension are ordered as ``itertools.combinations``,
  and ``position`` runs over a lattice of shape ``n[a]`` (extending axes) or
  ``n[a] + 1`` (other axes).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

BOUNDARY = -1


class VefId(NamedTuple):
    """Vertex/edge/face/cell identifier: entity dimension plus lexicographic index."""

    dim: int
    index: int


def _lex(coords, shape):
    """Lexicographic index with the first axis fastest."""
    coords = np.asarray(coords)
    idx = np.zeros(coords.shape[:-1], dtype=np.int64)
    stride = 1
    for a, s in enumerate(shape):
        idx = idx + coords[..., a] * stride
        stride *= s
    return idx


def _unlex(index, shape):
    index = np.asarray(index, dtype=np.int64)
    out = np.empty(index.shape + (len(shape),), dtype=np.int64)
    rem = index.copy()
    for a, s in enumerate(shape):
        out[..., a] = rem % s
        rem = rem // s
    return out


@dataclass(frozen=True)
class BackgroundMesh:
    """Uniform Cartesian grid of a box. Immutable; all queries are index arithmetic."""

    dim: int
    cells_per_axis: tuple
    origin: tuple
    box_lengths: tuple
    h: tuple = field(init=False)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        n = tuple(int(v) for v in self.cells_per_axis)
        if len(n) != self.dim or any(v < 1 for v in n):
            raise ValueError(f"cells_per_axis must hold {self.dim} positive integers, got {self.cells_per_axis}")
        L = tuple(float(v) for v in self.box_lengths)
        if len(L) != self.dim or any(not v > 0 for v in L):
            raise ValueError(f"box_lengths must hold {self.dim} positive lengths, got {self.box_lengths}")
        o = tuple(float(v) for v in self.origin)
        if len(o) != self.dim:
            raise ValueError(f"origin must have {self.dim} coordinates")
        h = tuple(Lv / nv for Lv, nv in zip(L, n))
        if max(h) - min(h) > 1e-12 * max(h):
            raise ValueError(f"only isotropic cells are supported, got cell sizes {h}")
        object.__setattr__(self, "cells_per_axis", n)
        object.__setattr__(self, "box_lengths", L)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "h", h)

    # ------------------------------------------------------------------ sizes
    @property
    def cell_size(self) -> float:
        return self.h[0]

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells_per_axis))

    @property
    def n_vertices(self) -> int:
        return int(np.prod([v + 1 for v in self.cells_per_axis]))

    @property
    def n_facets(self) -> int:
        return self.n_vefs(self.dim - 1)

    @property
    def doubled_shape(self) -> tuple:
        return tuple(2 * v + 1 for v in self.cells_per_axis)

    def orientations(self, k: int):
        return list(itertools.combinations(range(self.dim), k))

    def _orientation_shape(self, orient):
        return tuple(n if a in orient else n + 1 for a, n in enumerate(self.cells_per_axis))

    def n_vefs(self, k: int) -> int:
        return int(sum(np.prod(self._orientation_shape(o)) for o in self.orientations(k)))

    # ------------------------------------------------------------------ cells
    def _check_cells(self, cells):
        cells = np.asarray(cells, dtype=np.int64)
        if np.any(cells < 0) or np.any(cells >= self.n_cells):
            raise IndexError(f"cell index out of range [0, {self.n_cells})")
        return cells

    def cell_ijk(self, cells) -> np.ndarray:
        return _unlex(self._check_cells(cells), self.cells_per_axis)

    def cell_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=np.int64)
        if np.any(ijk < 0) or np.any(ijk >= np.array(self.cells_per_axis)):
            raise IndexError("cell coordinates out of range")
        return _lex(ijk, self.cells_per_axis)

    def cell_origin(self, cells) -> np.ndarray:
        return np.asarray(self.origin) + self.cell_ijk(cells) * self.cell_size

    def cell_center(self, cells) -> np.ndarray:
        return self.cell_origin(cells) + 0.5 * self.cell_size

    def cell_volume(self) -> float:
        return self.cell_size ** self.dim

    def cell_vertices(self, cells) -> np.ndarray:
        """Vertex indices of each cell, local vertices in lexicographic order (x fastest)."""
        ijk = self.cell_ijk(cells)
        local = np.array(list(itertools.product((0, 1), repeat=self.dim)))[:, ::-1]
        shape = tuple(v + 1 for v in self.cells_per_axis)
        return _lex(ijk[..., None, :] + local, shape)

    def vertex_coordinates(self, vertices=None) -> np.ndarray:
        shape = tuple(v + 1 for v in self.cells_per_axis)
        if vertices is None:
            vertices = np.arange(self.n_vertices)
        return np.asarray(self.origin) + _unlex(vertices, shape) * self.cell_size

    # ------------------------------------------------------------------ VEFs
    def key_to_vef(self, key) -> VefId:
        c = _unlex(int(key), self.doubled_shape)
        orient = tuple(int(a) for a in np.flatnonzero(c % 2 == 1))
        k = len(orient)
        offset = 0
        for o in self.orientations(k):
            if o == orient:
                break
            offset += int(np.prod(self._orientation_shape(o)))
        pos = np.where(c % 2 == 1, (c - 1) // 2, c // 2)
        return VefId(k, offset + int(_lex(pos, self._orientation_shape(orient))))

    def vef_to_key(self, vef: VefId) -> int:
        k, index = vef
        if not 0 <= k <= self.dim:
            raise ValueError(f"VEF dimension {k} outside 0..{self.dim}")
        for o in self.orientations(k):
            shape = self._orientation_shape(o)
            size = int(np.prod(shape))
            if index < size:
                pos = _unlex(index, shape)
                c = np.array([2 * p + 1 if a in o else 2 * p for a, p in enumerate(pos)])
                return int(_lex(c, self.doubled_shape))
            index -= size
        raise IndexError(f"VEF {vef} out of range")

    def cell_key(self, cells) -> np.ndarray:
        return _lex(2 * self.cell_ijk(cells) + 1, self.doubled_shape)

    def cells_of_key(self, key) -> list:
        """Cells whose closure contains the entity with the given doubled-lattice key."""
        c = _unlex(int(key), self.doubled_shape)
        choices = []
        for a, ca in enumerate(c):
            if ca % 2 == 1:
                choices.append([(ca - 1) // 2])
            else:
                choices.append([v for v in (ca // 2 - 1, ca // 2) if 0 <= v < self.cells_per_axis[a]])
        return sorted(int(_lex(np.array(ijk), self.cells_per_axis)) for ijk in itertools.product(*choices))

    def cell_vef_keys(self, cells) -> np.ndarray:
        """Doubled-lattice keys of all 3^d sub-entities of each cell (closure incl. the cell)."""
        base = 2 * self.cell_ijk(cells)
        local = np.array(list(itertools.product((0, 1, 2), repeat=self.dim)))[:, ::-1]
        return _lex(base[..., None, :] + local, self.doubled_shape)

    def vefs_of_cell(self, cell: int) -> dict:
        """Sub-VEFs of a cell grouped by dimension (vertices, edges[, faces]), deterministic order."""
        keys = self.cell_vef_keys(int(cell))
        out = {k: [] for k in range(self.dim)}
        for key in keys:
            vef = self.key_to_vef(key)
            if vef.dim < self.dim:
                out[vef.dim].append(vef)
        return out

    # ------------------------------------------------------------------ facets
    def facet_key(self, cell: int, local_facet: int) -> int:
        """Key of local facet ``2 * axis + side`` (order -x, +x, -y, +y[, -z, +z])."""
        axis, side = divmod(local_facet, 2)
        c = 2 * self.cell_ijk(int(cell)) + 1
        c[axis] += 1 if side else -1
        return int(_lex(c, self.doubled_shape))

    def cell_neighbors_through_facets(self, cell: int) -> list:
        """``(facet VefId, neighbor cell or BOUNDARY)`` in the order -x, +x, -y, +y[, -z, +z]."""
        ijk = self.cell_ijk(int(cell))
        out = []
        for lf in range(2 * self.dim):
            axis, side = divmod(lf, 2)
            nb = ijk.copy()
            nb[axis] += 1 if side else -1
            if 0 <= nb[axis] < self.cells_per_axis[axis]:
                other = int(_lex(nb, self.cells_per_axis))
            else:
                other = BOUNDARY
            out.append((self.key_to_vef(self.facet_key(cell, lf)), other))
        return out

    def neighbor_table(self) -> np.ndarray:
        """(n_cells, 2d) facet neighbours, ``BOUNDARY`` where the facet is on the box."""
        ijk = _unlex(np.arange(self.n_cells), self.cells_per_axis)
        out = np.full((self.n_cells, 2 * self.dim), BOUNDARY, dtype=np.int64)
        for lf in range(2 * self.dim):
            axis, side = divmod(lf, 2)
            nb = ijk.copy()
            nb[:, axis] += 1 if side else -1
            ok = (nb[:, axis] >= 0) & (nb[:, axis] < self.cells_per_axis[axis])
            out[ok, lf] = _lex(nb[ok], self.cells_per_axis)
        return out


def build_mesh(dim: int, cells_per_axis, origin=None, box_lengths=None) -> BackgroundMesh:
    """Build a uniform mesh; scalars are broadcast to every axis, the box defaults to the unit box."""
    if np.isscalar(cells_per_axis):
        cells_per_axis = (cells_per_axis,) * dim
    if origin is None:
        origin = (0.0,) * dim
    if box_lengths is None:
        box_lengths = (1.0,) * dim
    elif np.isscalar(box_lengths):
        box_lengths = (box_lengths,) * dim
    return BackgroundMesh(dim, tuple(cells_per_axis), tuple(origin), tuple(box_lengths))


def unit_box_mesh(dim: int, m: int) -> BackgroundMesh:
    """The ``2^m`` cells-per-direction mesh of the unit square/cube."""
    return build_mesh(dim, 2 ** m)


def local_vertex_offsets(dim: int) -> np.ndarray:
    """Unit-cube corner offsets in the lexicographic local-vertex order used by ``cell_vertices``."""
    return np.array(list(itertools.product((0, 1), repeat=dim)))[:, ::-1].astype(float)


