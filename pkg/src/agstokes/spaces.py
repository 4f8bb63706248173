"""Finite element spaces on the active mesh.

Velocity: continuous nodal Q_q per component. In the aggregated space the
nodes owned by outer VEFs are constrained to the polynomial of the root cell
of the owning aggregate, using either the full Q_q basis of the root
("standard" extension) or the serendipity basis built on its boundary nodes.

Pressure: discontinuous polynomials of total degree q - 1, one polynomial per
aggregate (aggregated space) or per active cell (standard space), in the
scaled monomial basis ``((x - c) / h)^alpha`` centred at the root cell centre.

Shape functions are polynomials in the scaled cell coordinate
``t = (x - x_K) / h`` and can be evaluated anywhere, also outside the cell.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .aggregation import AggregateMap
from .geometry import Classification
from .mesh import BackgroundMesh, _lex, _unlex

SPACES = ("aggregated", "standard")
EXTENSIONS = ("standard", "serendipity")


class MonomialBasis:
    """Polynomial basis ``phi_b(t) = sum_j coeffs[j, b] t^exponents[j]`` in reference coordinates."""

    def __init__(self, exponents, coeffs=None, nodes=None, name=""):
        self.exponents = np.asarray(exponents, dtype=np.int64)
        self.dim = self.exponents.shape[1]
        n = len(self.exponents)
        self.coeffs = np.eye(n) if coeffs is None else np.asarray(coeffs, dtype=float)
        self.nodes = None if nodes is None else np.asarray(nodes, dtype=float)
        self.name = name

    @classmethod
    def nodal(cls, exponents, nodes, name=""):
        """Lagrange basis of the monomial span on the given unisolvent node set."""
        exponents = np.asarray(exponents)
        nodes = np.asarray(nodes, dtype=float)
        V = cls(exponents)._monomials(nodes)
        if V.shape[0] != V.shape[1]:
            raise ValueError(f"{len(nodes)} nodes for a span of dimension {len(exponents)}")
        cond = np.linalg.cond(V)
        if not np.isfinite(cond) or cond > 1e12:
            raise ValueError("node set is not unisolvent for the monomial span")
        return cls(exponents, np.linalg.inv(V), nodes, name)

    @property
    def n(self) -> int:
        return self.coeffs.shape[1]

    def _powers(self, t, shift=0):
        emax = int(self.exponents.max(initial=0))
        t = np.atleast_2d(np.asarray(t, dtype=float))
        pw = np.ones((emax + 1,) + t.shape)
        for e in range(1, emax + 1):
            pw[e] = pw[e - 1] * t
        return pw

    def _monomials(self, t, deriv=None):
        """Monomial values (np, nm); ``deriv`` is a per-axis derivative order tuple."""
        pw = self._powers(t)
        npts = pw.shape[1]
        out = np.ones((npts, len(self.exponents)))
        for a in range(self.dim):
            e = self.exponents[:, a]
            k = 0 if deriv is None else deriv[a]
            if k == 0:
                out *= pw[e, :, a].T
                continue
            fac = np.ones_like(e, dtype=float)
            for i in range(k):
                fac *= e - i
            ee = np.clip(e - k, 0, None)
            out *= (fac * pw[ee, :, a].T) * (e >= k)
        return out

    def values(self, t):
        return self._monomials(t) @ self.coeffs

    def gradients(self, t):
        """(np, nb, d) reference gradients."""
        g = [self._monomials(t, tuple(int(a == b) for b in range(self.dim))) @ self.coeffs for a in range(self.dim)]
        return np.stack(g, axis=-1)

    def laplacians(self, t):
        lap = 0.0
        for a in range(self.dim):
            lap = lap + self._monomials(t, tuple(2 * int(a == b) for b in range(self.dim))) @ self.coeffs
        return lap


def _lattice(dim, q):
    """Local node lattice (x fastest) of a Q_q cell, integer coordinates."""
    return np.array(list(itertools.product(range(q + 1), repeat=dim)))[:, ::-1]


def lagrange_basis(dim: int, q: int = 2) -> MonomialBasis:
    lat = _lattice(dim, q)
    return MonomialBasis.nodal(lat, lat / q, name=f"Q{q}")


def serendipity_local_nodes(dim: int, q: int = 2) -> np.ndarray:
    """Indices into the Q_q lattice of the nodes on cell vertices and edges."""
    lat = _lattice(dim, q)
    interior = (lat > 0) & (lat < q)
    return np.flatnonzero(interior.sum(axis=1) <= 1)


def serendipity_exponents(dim: int, q: int = 2) -> np.ndarray:
    """Monomials whose superlinear degree (sum of the exponents >= 2) is at most q."""
    out = [e[::-1] for e in itertools.product(range(q + 1), repeat=dim)]
    return np.array([e for e in out if sum(v for v in e if v >= 2) <= q])


def serendipity_basis(dim: int, q: int = 2) -> MonomialBasis:
    if q > 3:
        raise ValueError("serendipity extension is implemented for q <= 3")
    ids = serendipity_local_nodes(dim, q)
    nodes = _lattice(dim, q)[ids] / q
    exps = serendipity_exponents(dim, q)
    return MonomialBasis.nodal(exps, nodes, name=f"S{q}")


def pressure_basis(dim: int, degree: int = 1) -> MonomialBasis:
    """Monomials of total degree ``<= degree`` ordered 1, x, y[, z], ... (identity coefficients)."""
    exps = [e[::-1] for e in itertools.product(range(degree + 1), repeat=dim) if sum(e) <= degree]
    exps.sort(key=lambda e: (sum(e), [-v for v in e]))
    return MonomialBasis(np.array(exps), name=f"P{degree}")


# ---------------------------------------------------------------------------


@dataclass
class ConstraintTable:
    """Constrained node ``nodes[i]`` equals ``sum_j coeffs[i, j] * value(masters[i, j])``.

    Node ids are compact active-node indices; the same table applies to every
    velocity component.
    """

    nodes: np.ndarray
    masters: np.ndarray
    coeffs: np.ndarray

    def __len__(self):
        return len(self.nodes)

    def row_sums(self) -> np.ndarray:
        return self.coeffs.sum(axis=1)

    def as_dict(self) -> dict:
        return {int(a): list(zip(self.masters[i].tolist(), self.coeffs[i].tolist())) for i, a in enumerate(self.nodes)}


class DofHandler:
    """Velocity nodes, pressure groups and the free/constrained partition.

    Free system unknowns are ordered as: velocity component 0 at all free
    nodes, component 1, ..., then the pressure coefficients group by group.
    """

    def __init__(
        self,
        mesh: BackgroundMesh,
        classification: Classification,
        aggregates: AggregateMap | None = None,
        q: int = 2,
        space: str = "aggregated",
        extension: str = "standard",
    ):
        if space not in SPACES:
            raise ValueError(f"space must be one of {SPACES}, got {space!r}")
        if extension not in EXTENSIONS:
            raise ValueError(f"extension must be one of {EXTENSIONS}, got {extension!r}")
        if space == "aggregated" and aggregates is None:
            raise ValueError("the aggregated space needs an aggregate map")
        if q < 1:
            raise ValueError("q must be >= 1")
        self.mesh, self.classification, self.aggregates = mesh, classification, aggregates
        self.q, self.space, self.extension = q, space, extension
        d = mesh.dim
        self.dim = d
        self.velocity_basis = lagrange_basis(d, q)
        self.extension_basis = serendipity_basis(d, q) if extension == "serendipity" else self.velocity_basis
        self.extension_local = (
            serendipity_local_nodes(d, q) if extension == "serendipity" else np.arange(self.velocity_basis.n)
        )
        self.pres_basis = pressure_basis(d, q - 1)
        self.node_shape = tuple(q * n + 1 for n in mesh.cells_per_axis)

        self.active_cells = classification.active_cells
        if self.active_cells.size == 0:
            raise ValueError("the active mesh is empty")
        lat = self._cell_lattice_nodes(self.active_cells)
        self.node_lattice = np.unique(lat.ravel())
        self._compact = np.full(int(np.prod(self.node_shape)), -1, dtype=np.int64)
        self._compact[self.node_lattice] = np.arange(len(self.node_lattice))
        self._cell_nodes = np.full((mesh.n_cells, self.velocity_basis.n), -1, dtype=np.int64)
        self._cell_nodes[self.active_cells] = self._compact[lat]
        self.node_coords = np.asarray(mesh.origin) + _unlex(self.node_lattice, self.node_shape) * (mesh.cell_size / q)
        self.node_keys = self._owner_keys(self.node_lattice)

        if space == "aggregated":
            self.constrained = np.isin(self.node_keys, aggregates.outer_keys)
        else:
            self.constrained = np.zeros(len(self.node_lattice), dtype=bool)
        self.free_nodes = np.flatnonzero(~self.constrained)
        self.free_index = np.full(len(self.node_lattice), -1, dtype=np.int64)
        self.free_index[self.free_nodes] = np.arange(len(self.free_nodes))
        self.constraints = self._build_constraints() if space == "aggregated" else ConstraintTable(
            np.zeros(0, np.int64), np.zeros((0, 0), np.int64), np.zeros((0, 0))
        )

        # pressure groups
        if space == "aggregated":
            self.group_of_cell = aggregates.aggregate_id.copy()
            self.group_root = aggregates.roots.copy()
        else:
            self.group_of_cell = np.full(mesh.n_cells, -1, dtype=np.int64)
            self.group_of_cell[self.active_cells] = np.arange(len(self.active_cells))
            self.group_root = self.active_cells.copy()
        self.group_center = mesh.cell_center(self.group_root) if len(self.group_root) else np.zeros((0, d))

    # ------------------------------------------------------------ numbering
    def _cell_lattice_nodes(self, cells):
        ijk = self.mesh.cell_ijk(cells)
        local = _lattice(self.dim, self.q)
        return _lex(self.q * ijk[..., None, :] + local, self.node_shape)

    def _owner_keys(self, lattice_ids):
        I = _unlex(lattice_ids, self.node_shape)
        q = self.q
        c = np.where(I % q == 0, 2 * (I // q), 2 * (I // q) + 1)
        return _lex(c, self.mesh.doubled_shape)

    @property
    def n_nodes(self) -> int:
        return len(self.node_lattice)

    @property
    def n_free_nodes(self) -> int:
        return len(self.free_nodes)

    @property
    def n_pressure_per_group(self) -> int:
        return self.pres_basis.n

    @property
    def n_groups(self) -> int:
        return len(self.group_root)

    @property
    def n_velocity_free(self) -> int:
        return self.dim * self.n_free_nodes

    @property
    def n_pressure(self) -> int:
        return self.n_groups * self.n_pressure_per_group

    @property
    def n_free(self) -> int:
        return self.n_velocity_free + self.n_pressure

    @property
    def n_full(self) -> int:
        return self.dim * self.n_nodes + self.n_pressure

    def cell_nodes(self, cells) -> np.ndarray:
        """Compact node ids of the given active cells, local Q_q lattice order."""
        out = self._cell_nodes[np.asarray(cells)]
        if np.any(out < 0):
            raise KeyError("cell is not active")
        return out

    def pressure_dofs(self, cells) -> np.ndarray:
        g = self.group_of_cell[np.asarray(cells)]
        if np.any(g < 0):
            raise KeyError("cell is not active")
        npg = self.n_pressure_per_group
        return self.n_velocity_free + g[..., None] * npg + np.arange(npg)

    # ------------------------------------------------------------ constraints
    def _build_constraints(self) -> ConstraintTable:
        amap = self.aggregates
        cnodes = np.flatnonzero(self.constrained)
        if cnodes.size == 0:
            return ConstraintTable(cnodes, np.zeros((0, len(self.extension_local)), np.int64), np.zeros((0, 0)))
        owners = np.array([amap.owner_of_outer_vef[int(k)] for k in self.node_keys[cnodes]])
        roots = amap.roots[owners]
        if not np.all(amap.root_mask[roots]):
            raise RuntimeError("constraint owner root is not a root-eligible cell")
        t = (self.node_coords[cnodes] - self.mesh.cell_origin(roots)) / self.mesh.cell_size
        coeffs = self.extension_basis.values(t)
        masters = self.cell_nodes(roots)[:, self.extension_local]
        if np.any(self.constrained[masters]):
            raise RuntimeError("constraint master is itself constrained")
        return ConstraintTable(cnodes, masters, coeffs)

    def scalar_prolongation(self) -> sp.csr_matrix:
        """(n_nodes, n_free_nodes) map from free node values to all node values."""
        N, Nf = self.n_nodes, self.n_free_nodes
        rows = [self.free_nodes]
        cols = [np.arange(Nf)]
        vals = [np.ones(Nf)]
        ct = self.constraints
        if len(ct):
            rows.append(np.repeat(ct.nodes, ct.masters.shape[1]))
            cols.append(self.free_index[ct.masters].ravel())
            vals.append(ct.coeffs.ravel())
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, Nf))

    def prolongation(self) -> sp.csr_matrix:
        """(n_full, n_free) map: full ordering is component-major velocity at all nodes, then pressure."""
        Ps = self.scalar_prolongation()
        blocks = [Ps] * self.dim + [sp.identity(self.n_pressure, format="csr")]
        return sp.block_diag(blocks, format="csr")

    # ------------------------------------------------------------ vectors
    def interpolate_constrained(self, free_values) -> np.ndarray:
        """Free node values (Nf,) or (Nf, k) -> values at all active nodes."""
        free_values = np.asarray(free_values, dtype=float)
        if free_values.shape[0] != self.n_free_nodes:
            raise ValueError(f"expected {self.n_free_nodes} free values, got {free_values.shape[0]}")
        full = np.zeros((self.n_nodes,) + free_values.shape[1:])
        full[self.free_nodes] = free_values
        ct = self.constraints
        if len(ct):
            full[ct.nodes] = np.einsum("cm,cm...->c...", ct.coeffs, full[ct.masters])
        return full

    def split(self, x):
        """Free solution vector -> (velocity at all nodes (N, d), pressure coefficients (n_groups, np))."""
        x = np.asarray(x)
        Nf = self.n_free_nodes
        vel_free = x[: self.n_velocity_free].reshape(self.dim, Nf).T
        pres = x[self.n_velocity_free : self.n_free].reshape(self.n_groups, self.n_pressure_per_group)
        return self.interpolate_constrained(vel_free), pres

    def interpolate(self, velocity, pressure=None) -> np.ndarray:
        """Free vector from a velocity function (nodal interpolation) and a pressure function (L2 projection per group)."""
        x = np.zeros(self.n_free)
        u = np.asarray(velocity(self.node_coords[self.free_nodes]))
        x[: self.n_velocity_free] = u.T.ravel()
        if pressure is not None:
            x[self.n_velocity_free :] = self.project_pressure(pressure).ravel()
        return x

    def project_pressure(self, pressure, degree=6) -> np.ndarray:
        """Group-wise L2 projection of a pressure function over the active cells (cut cells clipped)."""
        from .cutcell import decompose, volume_rule

        dec = decompose(self.mesh, self.classification)
        npg = self.n_pressure_per_group
        M = np.zeros((self.n_groups, npg, npg))
        r = np.zeros((self.n_groups, npg))
        for c in self.active_cells:
            rule = volume_rule(dec, c, degree)
            g = self.group_of_cell[c]
            psi = self.pressure_values(c, rule.points)
            M[g] += psi.T @ (rule.weights[:, None] * psi)
            r[g] += psi.T @ (rule.weights * pressure(rule.points))
        return np.linalg.solve(M, r[..., None])[..., 0]

    # ------------------------------------------------------------ evaluation
    def reference_coords(self, cell, points):
        return (np.atleast_2d(points) - self.mesh.cell_origin(cell)) / self.mesh.cell_size

    def pressure_values(self, cell, points):
        g = self.group_of_cell[cell]
        if g < 0:
            raise KeyError(f"cell {cell} is not active")
        return self.pres_basis.values((np.atleast_2d(points) - self.group_center[g]) / self.mesh.cell_size)

    def evaluate_velocity(self, node_values, cell, points):
        """Value (np, d), gradient (np, d, d) [component, derivative] and Laplacian (np, d) on a cell."""
        nodes = self.cell_nodes(cell)
        U = np.asarray(node_values)[nodes]  # (nb, d)
        t = self.reference_coords(cell, points)
        h = self.mesh.cell_size
        phi = self.velocity_basis.values(t)
        dphi = self.velocity_basis.gradients(t) / h
        lap = self.velocity_basis.laplacians(t) / h**2
        return phi @ U, np.einsum("qbk,bc->qck", dphi, U), lap @ U

    def evaluate_pressure(self, pressure_coeffs, cell, points):
        """Value (np,) and gradient (np, d) of the pressure polynomial of the cell's group."""
        g = self.group_of_cell[cell]
        if g < 0:
            raise KeyError(f"cell {cell} is not active")
        t = (np.atleast_2d(points) - self.group_center[g]) / self.mesh.cell_size
        c = np.asarray(pressure_coeffs)[g]
        return self.pres_basis.values(t) @ c, np.einsum("qbk,b->qk", self.pres_basis.gradients(t), c) / self.mesh.cell_size
