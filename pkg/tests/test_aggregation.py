"""Aggregation against brute-force oracles written without the mesh helpers."""

import itertools

import numpy as np
import pytest

from agstokes.aggregation import AggregationError, aggregate_cells, aggregate_statistics
from agstokes.cutcell import decompose
from agstokes.geometry import CellClass, circle_cavity, classify, everywhere, halfspace
from agstokes.mesh import build_mesh, unit_box_mesh


def _nudge(v):
    v = np.array(v, dtype=float)
    v[np.abs(v) < 1e-12] = -1e-12
    return v


class GridOracle:
    """Cells, vertices and sub-entities of an n^d grid by explicit coordinate tuples."""

    def __init__(self, dim, n, level_set):
        self.dim, self.n, self.h = dim, n, 1.0 / n
        self.cells = list(itertools.product(range(n), repeat=dim))  # tuples, x last in product order
        self.index = {c: sum(c[a] * n**a for a in range(dim)) for c in self.cells}
        verts = list(itertools.product(range(n + 1), repeat=dim))
        vals = _nudge(level_set.value(np.array(verts, dtype=float) * self.h))
        self.vval = dict(zip(verts, vals))

    def corners(self, cell):
        return [tuple(c + o for c, o in zip(cell, off)) for off in itertools.product((0, 1), repeat=self.dim)]

    def cls(self, cell):
        neg = [self.vval[v] < 0 for v in self.corners(cell)]
        return "int" if all(neg) else "ext" if not any(neg) else "cut"

    def facet_open(self, cell, axis, side):
        # the facet meets the domain with positive measure iff some corner is inside
        corners = [v for v in self.corners(cell) if v[axis] == cell[axis] + side]
        return any(self.vval[v] < 0 for v in corners)

    def center(self, cell):
        return (np.array(cell) + 0.5) * self.h

    def entities(self, cell):
        """Doubled-lattice coordinates of the closure of a cell."""
        return [tuple(2 * c + o for c, o in zip(cell, off)) for off in itertools.product((0, 1, 2), repeat=self.dim)]

    def key(self, ent):
        m = 2 * self.n + 1
        return sum(e * m**a for a, e in enumerate(ent))


def bfs_oracle(g: GridOracle):
    root = {c: c for c in g.cells if g.cls(c) == "int"}
    pending = sorted((c for c in g.cells if g.cls(c) == "cut"), key=g.index.get)
    while pending:
        touched = dict(root)
        new = {}
        for c in pending:
            cands = []
            for axis in range(g.dim):
                for side, step in ((0, -1), (1, 1)):
                    nb = list(c)
                    nb[axis] += step
                    nb = tuple(nb)
                    if nb not in touched or not g.facet_open(c, axis, side):
                        continue
                    r = touched[nb]
                    d = float(np.linalg.norm(g.center(c) - g.center(r)))
                    cands.append((d, g.index[r], g.index[nb], r))
            if cands:
                new[c] = min(cands)[3]
        assert new, "oracle: unreachable cut cell"
        root.update(new)
        pending = [c for c in pending if c not in new]
    return {g.index[c]: g.index[r] for c, r in root.items()}


def incidence_oracle(g: GridOracle, root_of):
    members = {}
    for c, r in root_of.items():
        members.setdefault(r, []).append(c)
    internal = {g.index[c] for c in g.cells if g.cls(c) == "int"}
    by_index = {v: k for k, v in g.index.items()}
    inside_root = set()
    for c in internal:
        inside_root.update(g.entities(by_index[c]))
    incidence = {}
    for c, r in root_of.items():
        for e in g.entities(by_index[c]):
            incidence.setdefault(e, set()).add(r)
    owners = {}
    for e, roots in incidence.items():
        if e in inside_root:
            continue
        owners[g.key(e)] = min(roots, key=lambda r: (len(members[r]), r))
    return owners


CASES = [
    ("circle8", 2, 8, circle_cavity()),
    ("halfspace4", 2, 4, halfspace(0, 0.6)),
    ("circle16", 2, 16, circle_cavity()),
    ("halfspace_y3d", 3, 4, halfspace(1, 0.55, 3)),
]


@pytest.mark.parametrize("name,dim,n,ls", CASES, ids=[c[0] for c in CASES])
def test_matches_bfs_and_incidence_oracles(name, dim, n, ls):
    mesh = build_mesh(dim, n)
    cl = classify(mesh, ls)
    amap = aggregate_cells(mesh, cl, decompose(mesh, cl))
    g = GridOracle(dim, n, ls)
    expected = bfs_oracle(g)
    got = {int(c): int(amap.root_of_cell[c]) for c in np.flatnonzero(amap.root_of_cell >= 0)}
    assert got == expected
    owners = {k: int(amap.roots[a]) for k, a in amap.owner_of_outer_vef.items()}
    assert owners == incidence_oracle(g, expected)


def test_halfspace_hand_executed():
    # x < 0.6 on 4x4: column 2 is cut and attaches to column 1
    mesh = unit_box_mesh(2, 2)
    cl = classify(mesh, halfspace(0, 0.6))
    amap = aggregate_cells(mesh, cl)
    ijk = mesh.cell_ijk(np.arange(mesh.n_cells))
    for c in np.flatnonzero(ijk[:, 0] == 2):
        assert amap.root_of_cell[c] == c - 1
    assert amap.n_aggregates == 8
    stats = aggregate_statistics(amap)
    assert stats["max_size"] == 2 and stats["max_root_distance"] == 1 and stats["n_rounds"] == 1


def test_invariants_circle():
    for m in (3, 4, 5):
        mesh = unit_box_mesh(2, m)
        cl = classify(mesh, circle_cavity())
        amap = aggregate_cells(mesh, cl)
        cls = cl.cell_class
        active = np.flatnonzero(cls != CellClass.EXTERNAL)
        # partition and root interiority
        allm = np.concatenate(amap.members)
        assert np.array_equal(np.sort(allm), active)
        assert np.all(cls[amap.roots] == CellClass.INTERNAL)
        for a, mem in enumerate(amap.members):
            assert np.sum(cls[mem] == CellClass.INTERNAL) == 1
            assert amap.roots[a] in mem
        assert np.all(amap.root_of_cell[cl.internal_cells] == cl.internal_cells)
        assert aggregate_statistics(amap)["max_root_distance"] <= 3


def test_deterministic():
    mesh = unit_box_mesh(2, 4)
    cl = classify(mesh, circle_cavity())
    a, b = aggregate_cells(mesh, cl), aggregate_cells(mesh, cl)
    assert np.array_equal(a.root_of_cell, b.root_of_cell)
    assert a.owner_of_outer_vef == b.owner_of_outer_vef


def test_no_cut_cells():
    mesh = unit_box_mesh(2, 2)
    amap = aggregate_cells(mesh, classify(mesh, everywhere()))
    assert amap.n_aggregates == mesh.n_cells
    assert amap.owner_of_outer_vef == {}
    s = aggregate_statistics(amap)
    assert s["max_size"] == 1 and s["max_root_distance"] == 0


def test_unreachable_cut_cell_raises():
    # a thin slab: every cell is cut, nothing is internal
    mesh = unit_box_mesh(2, 2)
    cl = classify(mesh, halfspace(0, 0.1))
    with pytest.raises(AggregationError):
        aggregate_cells(mesh, cl)


def test_eta0_promotes_large_cut_cells():
    mesh = unit_box_mesh(2, 3)
    cl = classify(mesh, circle_cavity())
    amap = aggregate_cells(mesh, cl, eta0=0.9)
    base = aggregate_cells(mesh, cl)
    assert amap.root_mask.sum() > base.root_mask.sum()
    assert amap.n_aggregates > base.n_aggregates
    # every aggregate still holds exactly one root-eligible cell
    for mem in amap.members:
        assert amap.root_mask[mem].sum() == 1
