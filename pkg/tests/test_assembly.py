import dataclasses
import itertools

import numpy as np
import pytest

from agstokes import AgFEMStokes
from agstokes.aggregation import aggregate_cells
from agstokes.assembly import FormParameters, ImproperSets, apply_mean_constraint, assemble, identify_improper_sets
from agstokes.cutcell import decompose
from agstokes.geometry import circle_cavity, classify, everywhere, halfspace, nowhere, sphere_cavity
from agstokes.mesh import unit_box_mesh
from agstokes.problems import lid_driven, manufactured_solution, patch_solution
from agstokes.spaces import DofHandler


def _build(dim, m, ls, problem, stabilization="alg3", space="aggregated", **kw):
    mesh = unit_box_mesh(dim, m)
    cl = classify(mesh, ls)
    dec = decompose(mesh, cl)
    amap = aggregate_cells(mesh, cl, dec) if space == "aggregated" else None
    dofs = DofHandler(mesh, cl, amap, 2, space, kw.pop("extension", "serendipity"))
    params = FormParameters(stabilization=stabilization, **kw)
    imp = identify_improper_sets(mesh, cl, amap, params.stabilization)
    return assemble(dofs, dec, imp, params, problem), imp


# ------------------------------------------------------------------ improper sets


def test_all_internal_has_no_improper_sets():
    mesh = unit_box_mesh(2, 2)
    cl = classify(mesh, everywhere())
    imp = identify_improper_sets(mesh, cl, aggregate_cells(mesh, cl), "alg2")
    assert len(imp.facets) == 0 and len(imp.aggregates) == 0


def test_halfspace_improper_facets_by_hand():
    # x < 0.6 on 4x4: columns 1 and 2 merge row-wise, column 0 stays singleton.
    # Stabilised: the 4 facets x = 1/4 plus the 3 + 3 horizontal facets inside columns 1 and 2.
    mesh = unit_box_mesh(2, 2)
    cl = classify(mesh, halfspace(0, 0.6))
    amap = aggregate_cells(mesh, cl)
    idx = lambda i, j: int(mesh.cell_index(np.array([i, j])))
    expect = {(idx(0, j), idx(1, j)) for j in range(4)}
    expect |= {(idx(i, j), idx(i, j + 1)) for i in (1, 2) for j in range(3)}
    for stab in ("alg2", "alg3"):
        imp = identify_improper_sets(mesh, cl, amap, stab)
        assert {tuple(map(int, p)) for p in imp.facet_cells} == expect
        assert sorted(imp.facets.tolist()) == sorted(mesh.facet_key(a, 1 if b == a + 1 else 3) for a, b in expect)
    assert len(identify_improper_sets(mesh, cl, amap, "alg2").aggregates) == 4
    assert len(identify_improper_sets(mesh, cl, amap, "alg3").aggregates) == 0


def test_alg3_2d_uses_alg2_facets():
    mesh = unit_box_mesh(2, 3)
    cl = classify(mesh, circle_cavity())
    amap = aggregate_cells(mesh, cl)
    a2 = identify_improper_sets(mesh, cl, amap, "alg2")
    a3 = identify_improper_sets(mesh, cl, amap, "alg3")
    assert np.array_equal(a2.facets, a3.facets)
    assert np.array_equal(a2.aggregates, np.flatnonzero(amap.sizes > 1))


def test_alg3_3d_filter_drops_facets():
    mesh = unit_box_mesh(3, 2)
    cl = classify(mesh, sphere_cavity())
    amap = aggregate_cells(mesh, cl)
    a2 = identify_improper_sets(mesh, cl, amap, "alg2")
    a3 = identify_improper_sets(mesh, cl, amap, "alg3")
    assert set(a3.facets.tolist()) < set(a2.facets.tolist())
    for c0, c1 in a3.facet_cells:
        r0, r1 = amap.root_of_cell[c0], amap.root_of_cell[c1]
        assert np.abs(mesh.cell_ijk(r0) - mesh.cell_ijk(r1)).sum() != 1


# ------------------------------------------------------------------ dense oracle

_L = [lambda t: 2 * (t - 0.5) * (t - 1), lambda t: -4 * t * (t - 1), lambda t: 2 * t * (t - 0.5)]
_dL = [lambda t: 4 * t - 3, lambda t: 4 - 8 * t, lambda t: 4 * t - 1]


def _dense_oracle(problem, tau=40.0):
    """Direct quadrature loops on the 2x2 grid of [0,1]^2; velocity nodes on the 5x5 lattice."""
    h = 0.5
    gp, gw = np.polynomial.legendre.leggauss(6)
    gp, gw = (gp + 1) / 2, gw / 2
    nn = 25
    S = np.zeros((nn, nn))
    B = np.zeros((2, nn, 12))
    ru = np.zeros((2, nn))
    rp = np.zeros(12)

    def shape(cell, x):
        o = np.array(cell) * h
        t = (x - o) / h
        vals, grads, ids = [], [], []
        for a, b in itertools.product(range(3), range(3)):  # a along x, b along y
            vals.append(_L[a](t[0]) * _L[b](t[1]))
            grads.append(np.array([_dL[a](t[0]) * _L[b](t[1]), _L[a](t[0]) * _dL[b](t[1])]) / h)
            ids.append((2 * cell[1] + b) * 5 + 2 * cell[0] + a)
        c = o + h / 2
        psi = np.array([1.0, (x[0] - c[0]) / h, (x[1] - c[1]) / h])
        return np.array(vals), np.array(grads), ids, psi

    for ci, cell in enumerate([(0, 0), (1, 0), (0, 1), (1, 1)]):
        pd = 3 * ci + np.arange(3)
        for (i, xi), (j, yj) in itertools.product(enumerate(gp), enumerate(gp)):
            x = (np.array(cell) + [xi, yj]) * h
            w = gw[i] * gw[j] * h * h
            phi, dphi, ids, psi = shape(cell, x)
            f = problem.f(x[None])[0]
            S[np.ix_(ids, ids)] += w * dphi @ dphi.T
            for c in range(2):
                B[c][np.ix_(ids, pd)] -= w * np.outer(dphi[:, c], psi)
                ru[c, ids] += w * phi * f[c]
        for face in range(4):
            axis, side = divmod(face, 2)
            if cell[axis] != side:
                continue
            n = np.zeros(2)
            n[axis] = 1.0 if side else -1.0
            for s, ws in zip(gp, gw):
                x = np.array(cell, dtype=float) * h
                x[axis] = side * 1.0
                x[1 - axis] += s * h
                w = ws * h
                phi, dphi, ids, psi = shape(cell, x)
                if problem.face_type(face) == "neumann":
                    t = problem.neumann_data(x[None], n[None])[0]
                    for c in range(2):
                        ru[c, ids] += w * phi * t[c]
                    continue
                g = problem.dirichlet_face_data(x[None])[0]
                dn = dphi @ n
                S[np.ix_(ids, ids)] += w * (-np.outer(phi, dn) - np.outer(dn, phi) + tau / h * np.outer(phi, phi))
                for c in range(2):
                    B[c][np.ix_(ids, pd)] += w * n[c] * np.outer(phi, psi)
                    ru[c, ids] += w * (-dn + tau / h * phi) * g[c]
                rp[pd] += w * psi * (g @ n)
    A = np.block([[np.kron(np.eye(2), S), np.vstack(B)], [np.vstack(B).T, np.zeros((12, 12))]])
    return A, np.concatenate([ru.ravel(), rp])


@pytest.mark.parametrize("problem", [manufactured_solution(2), lid_driven(2)], ids=["neumann", "dirichlet"])
def test_matches_dense_oracle_on_2x2(problem):
    # the same 6-point Gauss rule on both sides, so only round-off separates them
    system, _ = _build(2, 1, everywhere(), problem, quad_degree=11)
    dofs = system.dofs
    # map package ordering to the oracle's lattice ordering
    lat = np.rint(dofs.node_coords[dofs.free_nodes] / 0.25).astype(int)
    node = lat[:, 1] * 5 + lat[:, 0]
    cells = [int(dofs.mesh.cell_index(np.array(c))) for c in [(0, 0), (1, 0), (0, 1), (1, 1)]]
    grp = dofs.group_of_cell[cells]
    grp_order = np.empty(4, dtype=int)
    grp_order[grp] = np.arange(4)
    # perm[k] is the oracle index of package unknown k
    perm = np.concatenate([node, 25 + node, 50 + (3 * grp_order[:, None] + np.arange(3)).ravel()])
    A_ref, b_ref = _dense_oracle(problem)
    A = system.matrix.toarray()
    assert np.abs(A - A_ref[np.ix_(perm, perm)]).max() <= 1e-10 * np.abs(A_ref).max()
    assert np.abs(system.rhs - b_ref[perm]).max() <= 1e-10 * max(1.0, np.abs(b_ref).max())


# ------------------------------------------------------------------ consistency


@pytest.mark.parametrize("stab", ["alg2", "alg3"])
@pytest.mark.parametrize("ext", ["serendipity", "standard"])
def test_patch_test_2d(stab, ext):
    prob = patch_solution(2)
    est = AgFEMStokes(stabilization=stab, extension=ext, compute_condition=False)
    est.fit(unit_box_mesh(2, 4), circle_cavity(), prob)
    dofs = est.dofs_
    assert np.abs(est.velocity_nodes_ - prob.u(dofs.node_coords)).max() <= 1e-8
    assert np.abs(est.pressure_coeffs_ - dofs.project_pressure(prob.p)).max() <= 1e-8
    # residual of the exact DOF vector
    x = dofs.interpolate(prob.u, prob.p)
    A, b = est.system_.matrix, est.system_.rhs
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_patch_test_3d():
    prob = patch_solution(3)
    est = AgFEMStokes(compute_condition=False).fit(unit_box_mesh(3, 2), sphere_cavity(), prob)
    assert np.abs(est.velocity_nodes_ - prob.u(est.dofs_.node_coords)).max() <= 1e-8


def test_symmetry_and_shapes():
    for stab in ("none", "alg2", "alg3"):
        system, _ = _build(2, 4, circle_cavity(), manufactured_solution(2), stab)
        A = system.matrix
        assert abs(A - A.T).max() <= 1e-12 * abs(A).max()
        assert A.shape == (system.dofs.n_free,) * 2 == (len(system.rhs),) * 2


def test_velocity_block_coercive_and_jump_block_semidefinite():
    system, _ = _build(2, 4, circle_cavity(), manufactured_solution(2), "alg2")
    nv = system.dofs.n_velocity_free
    A = system.matrix.toarray()
    assert np.linalg.eigvalsh(A[:nv, :nv]).min() > 0
    C = A[nv:, nv:]
    assert np.linalg.eigvalsh(C).max() <= 1e-10 * np.abs(C).max()


def test_linear_pressure_has_no_jump_energy():
    system, imp = _build(2, 4, circle_cavity(), manufactured_solution(2), "alg3")
    assert len(imp.facets) > 0
    p = system.dofs.project_pressure(lambda x: 3 * x[:, 0] - x[:, 1] + 0.5).ravel()
    nv = system.dofs.n_velocity_free
    C = system.matrix[nv:, nv:]
    assert abs(p @ (C @ p)) <= 1e-12 * np.abs(p).max() ** 2 * abs(C).max() * len(p)


def test_zero_data_gives_zero_solution():
    prob = dataclasses.replace(lid_driven(2), face_types={}, f=lambda x: np.zeros_like(x))
    est = AgFEMStokes(compute_condition=False).fit(unit_box_mesh(2, 0), everywhere(), prob)
    assert np.abs(est.solution_).max() == 0.0


def test_divergence_closure_with_neumann_box():
    # b(v, 1) = -int_{box faces in Omega} v.n; v = (x, 0) gives -1 (only the face x = 1 contributes)
    system, _ = _build(2, 4, circle_cavity(), manufactured_solution(2))
    dofs = system.dofs
    v = dofs.interpolate(lambda x: np.stack([x[:, 0], 0 * x[:, 0]], axis=1))
    one = dofs.project_pressure(lambda x: np.ones(len(x))).ravel()
    nv = dofs.n_velocity_free
    assert v[:nv] @ (system.matrix[:nv, nv:] @ one) == pytest.approx(-1.0, abs=1e-10)


def test_constant_pressure_kernel_and_multiplier():
    prob = lid_driven(2)
    system, _ = _build(2, 4, circle_cavity(), prob)
    dofs = system.dofs
    nv = dofs.n_velocity_free
    one = np.zeros(system.n)
    one[nv:] = dofs.project_pressure(lambda x: np.ones(len(x))).ravel()
    r = system.matrix @ one
    assert np.abs(r[:nv]).max() <= 1e-10 * abs(system.matrix).max()
    assert apply_mean_constraint(system, "none") is system
    aug = apply_mean_constraint(system, "lagrange_multiplier", prob)
    assert aug.n == system.n + 1 and aug.has_multiplier


def test_multiplier_gives_zero_mean_pressure():
    base = patch_solution(2)
    shifted = dataclasses.replace(
        base, p=lambda x: base.p(x) + 5.0, face_types={f: "dirichlet" for f in range(4)}
    )
    est = AgFEMStokes(compute_condition=False).fit(unit_box_mesh(2, 3), circle_cavity(), shifted)
    assert est.system_.has_multiplier
    mean = est.system_.pressure_mean @ est.pressure_coeffs_.ravel()
    assert abs(mean) <= 1e-10
    # the circle is centred at x = 1/2 so 2x - 1 already has zero mean
    assert est.predict_pressure([[0.1, 0.1]])[0] == pytest.approx(-0.8, abs=1e-8)


def test_mean_constraint_refused_with_neumann_faces():
    system, _ = _build(2, 3, circle_cavity(), manufactured_solution(2))
    with pytest.warns(RuntimeWarning):
        out = apply_mean_constraint(system, "lagrange_multiplier", manufactured_solution(2))
    assert out is system


def test_assembly_errors():
    with pytest.raises(ValueError):
        _build(2, 3, circle_cavity(), manufactured_solution(2), quad_degree=3)
    with pytest.raises(ValueError):
        FormParameters(tau_nitsche=0.0)
    with pytest.raises(ValueError):
        FormParameters(stabilization="alg4")
    with pytest.raises(ValueError):
        _build(2, 2, nowhere(), manufactured_solution(2), space="standard")
    assert len(ImproperSets.empty().facets) == 0
