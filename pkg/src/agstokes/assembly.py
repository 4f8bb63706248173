"""Assembly of the Nitsche-Stokes system on the (aggregated) mixed space.

With ``A = a + b + b - j``::

    a(u, v) = (grad u, grad v) - <d_n u, v> - <d_n v, u> + tau / h <u, v>
    b(v, q) = -(div v, q) + <v . n, q>

where ``<.,.>`` runs over the unfitted boundary and the Dirichlet box faces.
The stabilisation ``j`` penalises pressure jumps on the improper facets and,
for ``alg2``, the strong momentum residual on non-singleton aggregates. The
right-hand side contains the matching consistent data terms, so any exact
solution lying in the discrete space solves the discrete problem.

All velocity terms act component-wise, so the velocity block is
``kron(I_d, S)`` for a scalar operator ``S``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .aggregation import AggregateMap
from .cutcell import CutDecomposition, facet_measure, facet_rule, volume_rule, boundary_rule
from .geometry import CellClass, Classification
from .linalg import BlockLayout
from .mesh import BackgroundMesh
from .problems import StokesProblem
from .quadrature import tensor_rule
from .spaces import DofHandler

STABILIZATIONS = ("none", "alg2", "alg3")


@dataclass
class FormParameters:
    tau_nitsche: float = 40.0
    tau_j1: float = 0.01
    tau_j2: float = 0.01
    stabilization: str = "alg3"
    quad_degree: int = 6

    def __post_init__(self):
        if self.stabilization not in STABILIZATIONS:
            raise ValueError(f"stabilization must be one of {STABILIZATIONS}, got {self.stabilization!r}")
        if not self.tau_nitsche > 0:
            raise ValueError("tau_nitsche must be positive")
        if self.tau_j1 < 0 or self.tau_j2 < 0:
            raise ValueError("tau_j1 and tau_j2 must be non-negative")


@dataclass
class ImproperSets:
    facets: np.ndarray  # facet keys
    facet_cells: np.ndarray  # (n, 2): cell on the minus side, cell on the plus side
    aggregates: np.ndarray  # aggregates carrying the residual term (alg2)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, np.int64), np.zeros((0, 2), np.int64), np.zeros(0, np.int64))


def identify_improper_sets(
    mesh: BackgroundMesh,
    classification: Classification,
    aggregates: AggregateMap | None,
    stabilization: str,
    q: int = 2,
) -> ImproperSets:
    """Facets between distinct aggregates with at least one non-singleton side and ``|F ∩ Ω| > 0``.

    ``alg2`` also returns all non-singleton aggregates. ``alg3`` in 3D with
    ``q <= 2d - 3`` keeps only facets whose two roots do not share a facet.
    """
    if stabilization not in STABILIZATIONS:
        raise ValueError(f"stabilization must be one of {STABILIZATIONS}, got {stabilization!r}")
    if stabilization == "none" or aggregates is None:
        return ImproperSets.empty()
    sizes = aggregates.sizes
    agg = aggregates.aggregate_id
    nbrs = mesh.neighbor_table()
    keys, pairs = [], []
    for axis in range(mesh.dim):
        lf = 2 * axis + 1
        a = np.flatnonzero(agg >= 0)
        b = nbrs[a, lf]
        ok = b >= 0
        a, b = a[ok], b[ok]
        ok = (agg[b] >= 0) & (agg[a] != agg[b])
        a, b = a[ok], b[ok]
        ok = (sizes[agg[a]] > 1) | (sizes[agg[b]] > 1)
        for c0, c1 in zip(a[ok], b[ok]):
            key = mesh.facet_key(int(c0), lf)
            if facet_measure(mesh, classification.vertex_values, key) <= 0:
                continue
            if stabilization == "alg3" and mesh.dim == 3 and q <= 2 * mesh.dim - 3:
                r0, r1 = aggregates.root_of_cell[c0], aggregates.root_of_cell[c1]
                if np.abs(mesh.cell_ijk(r0) - mesh.cell_ijk(r1)).sum() == 1:
                    continue
            keys.append(key)
            pairs.append((int(c0), int(c1)))
    order = np.argsort(keys, kind="stable")
    facets = np.asarray(keys, dtype=np.int64)[order]
    facet_cells = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)[order]
    stab_aggs = np.flatnonzero(sizes > 1) if stabilization == "alg2" else np.zeros(0, np.int64)
    return ImproperSets(facets, facet_cells, stab_aggs)


@dataclass
class MixedSystem:
    """Free-DOF system ``matrix @ x = rhs`` plus what is needed to map ``x`` back to fields."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofs: DofHandler
    pressure_mean: np.ndarray  # integrals of the pressure basis over the domain
    has_multiplier: bool = False
    info: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def layout(self) -> BlockLayout:
        return BlockLayout(self.dofs.dim, self.dofs.n_free_nodes)

    def solution_part(self, x):
        """Drop the multiplier entry if present."""
        return np.asarray(x)[: self.dofs.n_free]


class _Triplets:
    def __init__(self):
        self.r, self.c, self.v = [], [], []

    def add(self, rows, cols, vals):
        rows, cols = np.broadcast_arrays(np.asarray(rows)[:, None], np.asarray(cols)[None, :])
        self.r.append(rows.ravel())
        self.c.append(cols.ravel())
        self.v.append(np.asarray(vals).ravel())

    def add_batch(self, rows, cols, vals):
        """rows (n, a), cols (n, b), vals (n, a, b) or (a, b) shared."""
        R = np.broadcast_to(rows[:, :, None], (len(rows), rows.shape[1], cols.shape[1]))
        C = np.broadcast_to(cols[:, None, :], R.shape)
        self.r.append(R.ravel())
        self.c.append(C.ravel())
        self.v.append(np.broadcast_to(vals, R.shape).ravel())

    def matrix(self, shape):
        if not self.r:
            return sp.csr_matrix(shape)
        return sp.csr_matrix(
            (np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))), shape=shape
        )


class _Assembler:
    def __init__(self, dofs, decomposition, improper, params, problem):
        self.dofs, self.dec, self.imp, self.prm, self.prob = dofs, decomposition, improper, params, problem
        self.mesh = dofs.mesh
        self.h = self.mesh.cell_size
        self.d = self.mesh.dim
        self.N = dofs.n_nodes
        self.Np = dofs.n_pressure
        self.npg = dofs.n_pressure_per_group
        self.S = _Triplets()
        self.B = [_Triplets() for _ in range(self.d)]
        self.C = _Triplets()
        self.ru = np.zeros((self.d, self.N))
        self.rp = np.zeros(self.Np)
        self.pmean = np.zeros(self.Np)
        cls = dofs.classification.cell_class
        self.stab_cells = np.zeros(self.mesh.n_cells, dtype=bool)
        if len(improper.aggregates):
            for a in improper.aggregates:
                self.stab_cells[dofs.aggregates.members[a]] = True

    # ---------------------------------------------------------------- helpers
    def _eval(self, cell, pts):
        dofs, h = self.dofs, self.h
        t = dofs.reference_coords(cell, pts)
        vb = dofs.velocity_basis
        g = dofs.group_of_cell[cell]
        tp = (pts - dofs.group_center[g]) / h
        return (
            vb.values(t),
            vb.gradients(t) / h,
            dofs.pres_basis.values(tp),
            dofs.pres_basis.gradients(tp) / h,
        )

    def _pdofs(self, cell):
        return self.dofs.group_of_cell[cell] * self.npg + np.arange(self.npg)

    def _volume(self, cell, pts, w, stab):
        d, h = self.d, self.h
        nodes = self.dofs.cell_nodes(cell)
        pd = self._pdofs(cell)
        phi, dphi, psi, dpsi = self._eval(cell, pts)
        K = np.einsum("q,qak,qbk->ab", w, dphi, dphi)
        fq = self.prob.f(pts)
        self.pmean[pd] += w @ psi
        for c in range(d):
            self.B[c].add(nodes, pd, -np.einsum("q,qa,qk->ak", w, dphi[:, :, c], psi))
            self.ru[c, nodes] += phi.T @ (w * fq[:, c])
        if stab:
            s = self.prm.tau_j2 * h**2
            t = self.dofs.reference_coords(cell, pts)
            lap = self.dofs.velocity_basis.laplacians(t) / h**2
            K = K - s * np.einsum("q,qa,qb->ab", w, lap, lap)
            for c in range(d):
                self.B[c].add(nodes, pd, s * np.einsum("q,qa,qk->ak", w, lap, dpsi[:, :, c]))
                self.ru[c, nodes] += s * lap.T @ (w * fq[:, c])
            self.C.add(pd, pd, -s * np.einsum("q,qkc,qlc->kl", w, dpsi, dpsi))
            self.rp[pd] -= s * np.einsum("q,qkc,qc->k", w, dpsi, fq)
        self.S.add(nodes, nodes, K)

    def _dirichlet(self, cell, pts, w, n, g):
        tau = self.prm.tau_nitsche / self.h
        nodes = self.dofs.cell_nodes(cell)
        pd = self._pdofs(cell)
        phi, dphi, psi, _ = self._eval(cell, pts)
        dn = np.einsum("qak,qk->qa", dphi, n)
        M = np.einsum("q,qa,qb->ab", w, phi, phi)
        Nt = np.einsum("q,qa,qb->ab", w, phi, dn)  # <d_n phi_b, phi_a>
        self.S.add(nodes, nodes, -Nt - Nt.T + tau * M)
        for c in range(self.d):
            self.B[c].add(nodes, pd, np.einsum("q,qa,qk->ak", w * n[:, c], phi, psi))
            self.ru[c, nodes] += (-dn + tau * phi).T @ (w * g[:, c])
        self.rp[pd] += psi.T @ (w * np.einsum("qc,qc->q", g, n))

    def _neumann(self, cell, pts, w, t):
        nodes = self.dofs.cell_nodes(cell)
        phi = self.dofs.velocity_basis.values(self.dofs.reference_coords(cell, pts))
        for c in range(self.d):
            self.ru[c, nodes] += phi.T @ (w * t[:, c])

    # ---------------------------------------------------------------- passes
    def internal_cells(self):
        dofs, d, h = self.dofs, self.d, self.h
        cls = dofs.classification.cell_class
        cells = np.flatnonzero(cls == CellClass.INTERNAL)
        if cells.size == 0:
            return
        ref_p, ref_w = tensor_rule(d, self.prm.quad_degree)
        w = ref_w * h**d
        vb = dofs.velocity_basis
        phi = vb.values(ref_p)
        dphi = vb.gradients(ref_p) / h
        tp = ref_p - 0.5
        own = np.allclose(dofs.group_center[dofs.group_of_cell[cells]], self.mesh.cell_center(cells))
        if not own:
            raise RuntimeError("internal cells must carry their own pressure polynomial")
        psi = dofs.pres_basis.values(tp)
        K = np.einsum("q,qak,qbk->ab", w, dphi, dphi)
        nodes = dofs.cell_nodes(cells)
        pd = dofs.group_of_cell[cells][:, None] * self.npg + np.arange(self.npg)
        plain = ~self.stab_cells[cells]
        self.S.add_batch(nodes[plain], nodes[plain], K)
        for c in range(d):
            Bc = -np.einsum("q,qa,qk->ak", w, dphi[:, :, c], psi)
            self.B[c].add_batch(nodes[plain], pd[plain], Bc)
        np.add.at(self.pmean, pd[plain], np.broadcast_to(w @ psi, pd[plain].shape))
        pc = cells[plain]
        pts = self.mesh.cell_origin(pc)[:, None, :] + h * ref_p[None]
        fq = self.prob.f(pts.reshape(-1, d)).reshape(len(pc), -1, d)
        for c in range(d):
            np.add.at(self.ru[c], nodes[plain], np.einsum("q,qa,nq->na", w, phi, fq[:, :, c]))
        for cell in cells[~plain]:
            self._volume(cell, self.mesh.cell_origin(cell) + h * ref_p, w, True)

    def cut_cells(self):
        deg = self.prm.quad_degree
        for cell in self.dofs.classification.cut_cells:
            rule = volume_rule(self.dec, cell, deg)
            if len(rule.weights):
                self._volume(cell, rule.points, rule.weights, self.stab_cells[cell])
            br = boundary_rule(self.dec, cell, deg)
            if len(br.weights):
                self._dirichlet(cell, br.points, br.weights, br.normals, self.prob.g(br.points))

    def box_faces(self):
        mesh, prob, deg = self.mesh, self.prob, self.prm.quad_degree
        active = self.dofs.active_cells
        ijk = mesh.cell_ijk(active)
        for face in range(2 * self.d):
            axis, side = divmod(face, 2)
            at = ijk[:, axis] == (mesh.cells_per_axis[axis] - 1 if side else 0)
            kind = prob.face_type(face)
            for cell in active[at]:
                key = mesh.facet_key(int(cell), face)
                rule = facet_rule(self.dec, key, deg)
                if not len(rule.weights):
                    continue
                n = rule.normals * (1.0 if side else -1.0)
                if kind == "dirichlet":
                    self._dirichlet(int(cell), rule.points, rule.weights, n, prob.dirichlet_face_data(rule.points))
                else:
                    self._neumann(int(cell), rule.points, rule.weights, prob.neumann_data(rule.points, n))

    def jumps(self):
        s = self.prm.tau_j1 * self.h
        if s == 0 or not len(self.imp.facets):
            return
        deg = self.prm.quad_degree
        for key, (c0, c1) in zip(self.imp.facets, self.imp.facet_cells):
            rule = facet_rule(self.dec, int(key), deg)
            psi0 = self._eval(c0, rule.points)[2]
            psi1 = self._eval(c1, rule.points)[2]
            J = np.concatenate([psi0, -psi1], axis=1)
            pd = np.concatenate([self._pdofs(c0), self._pdofs(c1)])
            self.C.add(pd, pd, -s * np.einsum("q,qa,qb->ab", rule.weights, J, J))

    def run(self):
        self.internal_cells()
        self.cut_cells()
        self.box_faces()
        self.jumps()
        N, Np, d = self.N, self.Np, self.d
        S = self.S.matrix((N, N))
        B = sp.vstack([b.matrix((N, Np)) for b in self.B], format="csr")
        C = self.C.matrix((Np, Np))
        return S, B, C, self.ru.ravel(), self.rp, self.pmean


def assemble(
    dofs: DofHandler,
    decomposition: CutDecomposition,
    improper: ImproperSets,
    params: FormParameters,
    problem: StokesProblem,
) -> MixedSystem:
    """Assemble and eliminate the constraints, giving the system on the free DOFs."""
    q = dofs.q
    if params.quad_degree < 2 * q:
        raise ValueError(f"quadrature degree {params.quad_degree} is below the minimum 2q = {2 * q}")
    if problem.dim != dofs.dim:
        raise ValueError("problem and mesh dimensions differ")
    S, B, C, ru, rp, pmean = _Assembler(dofs, decomposition, improper, params, problem).run()
    Ps = dofs.scalar_prolongation()
    d = dofs.dim
    Sf = (Ps.T @ S @ Ps).tocsr()
    Pv = sp.block_diag([Ps] * d, format="csr")
    Bf = (Pv.T @ B).tocsr()
    A = sp.bmat([[sp.kron(sp.identity(d), Sf), Bf], [Bf.T, C]], format="csr")
    A.sum_duplicates()
    A.eliminate_zeros()
    rhs = np.concatenate([Pv.T @ ru, rp])
    info = {"n_velocity_free": dofs.n_velocity_free, "n_pressure": dofs.n_pressure}
    return MixedSystem(A, rhs, dofs, pmean, False, info)


def apply_mean_constraint(system: MixedSystem, mode: str = "none", problem: StokesProblem | None = None) -> MixedSystem:
    """Optionally append a Lagrange multiplier enforcing a zero pressure mean."""
    if mode == "none":
        return system
    if mode != "lagrange_multiplier":
        raise ValueError(f"mode must be none or lagrange_multiplier, got {mode!r}")
    if system.has_multiplier:
        return system
    if problem is not None and not problem.pure_dirichlet:
        warnings.warn("Neumann faces fix the pressure; mean constraint not applied", RuntimeWarning, stacklevel=2)
        return system
    n = system.n
    m = np.zeros(n)
    m[system.dofs.n_velocity_free :] = system.pressure_mean
    col = sp.csr_matrix(m[:, None])
    A = sp.bmat([[system.matrix, col], [col.T, None]], format="csr")
    rhs = np.concatenate([system.rhs, [0.0]])
    return MixedSystem(A, rhs, system.dofs, system.pressure_mean, True, dict(system.info))
