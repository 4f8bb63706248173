"""Estimator-style front end: configure, ``fit`` on a geometry and problem, then evaluate."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .aggregation import aggregate_cells, aggregate_statistics
from .assembly import STABILIZATIONS, FormParameters, apply_mean_constraint, assemble, identify_improper_sets
from .cutcell import decompose
from .geometry import LevelSet, classify
from .linalg import BACKENDS, estimate_condition_1norm, factorize, relative_residual
from .mesh import BackgroundMesh
from .problems import StokesProblem
from .spaces import EXTENSIONS, SPACES, DofHandler


def check_points(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValueError(f"expected points of shape (n, {dim}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("points must be finite")
    return X


class AgFEMStokes(BaseEstimator):
    """Unfitted Stokes solver with aggregated (or standard) Q_q / P_{q-1} elements.

    Parameters
    ----------
    order : int
        Velocity polynomial order q.
    space : {"aggregated", "standard"}
        ``standard`` uses all active cells without aggregation (baseline).
    extension : {"standard", "serendipity"}
        Basis used to extrapolate root polynomials to outer nodes.
    stabilization : {"none", "alg2", "alg3"}
        Pressure stabilisation; ignored by the standard space.
    tau_nitsche, tau_j1, tau_j2 : float
        Nitsche penalty, pressure-jump and residual stabilisation constants.
    eta0 : float
        Cut cells with volume fraction above ``eta0`` may act as roots (0 disables).
    quad_degree : int
        Polynomial degree of all quadrature rules.
    mean_constraint : {"auto", "none", "lagrange_multiplier"}
        ``auto`` adds a zero-mean pressure multiplier only when every box face is Dirichlet.
    compute_condition : bool
        Estimate the 1-norm condition number after the solve.
    solver : {"auto", "superlu", "schur"}
        Direct solver backend; ``auto`` uses block elimination for large systems.
    """

    def __init__(
        self,
        order=2,
        space="aggregated",
        extension="serendipity",
        stabilization="alg3",
        tau_nitsche=40.0,
        tau_j1=0.01,
        tau_j2=0.01,
        eta0=0.0,
        quad_degree=6,
        mean_constraint="auto",
        compute_condition=True,
        solver="auto",
    ):
        self.order = order
        self.space = space
        self.extension = extension
        self.stabilization = stabilization
        self.tau_nitsche = tau_nitsche
        self.tau_j1 = tau_j1
        self.tau_j2 = tau_j2
        self.eta0 = eta0
        self.quad_degree = quad_degree
        self.mean_constraint = mean_constraint
        self.compute_condition = compute_condition
        self.solver = solver

    def _validate_params(self):
        if not (isinstance(self.order, (int, np.integer)) and self.order >= 1):
            raise ValueError(f"order must be a positive integer, got {self.order!r}")
        if self.space not in SPACES:
            raise ValueError(f"space must be one of {SPACES}, got {self.space!r}")
        if self.extension not in EXTENSIONS:
            raise ValueError(f"extension must be one of {EXTENSIONS}, got {self.extension!r}")
        if self.stabilization not in STABILIZATIONS:
            raise ValueError(f"stabilization must be one of {STABILIZATIONS}, got {self.stabilization!r}")
        if self.mean_constraint not in ("auto", "none", "lagrange_multiplier"):
            raise ValueError(f"invalid mean_constraint {self.mean_constraint!r}")
        if self.solver not in BACKENDS:
            raise ValueError(f"solver must be one of {BACKENDS}, got {self.solver!r}")
        if not 0.0 <= self.eta0 < 1.0:
            raise ValueError("eta0 must lie in [0, 1)")

    def form_parameters(self) -> FormParameters:
        stab = self.stabilization if self.space == "aggregated" else "none"
        return FormParameters(self.tau_nitsche, self.tau_j1, self.tau_j2, stab, self.quad_degree)

    def fit(self, mesh: BackgroundMesh, level_set: LevelSet, problem: StokesProblem):
        """Discretise, assemble and solve. Fitted attributes end with an underscore."""
        self._validate_params()
        params = self.form_parameters()
        if problem.dim != mesh.dim:
            raise ValueError("problem and mesh dimensions differ")
        self.mesh_ = mesh
        self.problem_ = problem
        self.classification_ = classify(mesh, level_set)
        self.decomposition_ = decompose(mesh, self.classification_)
        self.aggregates_ = aggregate_cells(mesh, self.classification_, self.decomposition_, self.eta0)
        aggregated = self.space == "aggregated"
        self.dofs_ = DofHandler(
            mesh,
            self.classification_,
            self.aggregates_ if aggregated else None,
            self.order,
            self.space,
            self.extension,
        )
        self.improper_ = identify_improper_sets(
            mesh, self.classification_, self.aggregates_ if aggregated else None, params.stabilization, self.order
        )
        system = assemble(self.dofs_, self.decomposition_, self.improper_, params, problem)
        mode = self.mean_constraint
        if mode == "auto":
            mode = "lagrange_multiplier" if problem.pure_dirichlet else "none"
        self.system_ = apply_mean_constraint(system, mode, problem)
        fact = factorize(self.system_.matrix, self.solver, self.system_.layout)
        x = fact.solve(self.system_.rhs)
        self.residual_ = relative_residual(self.system_.matrix, x, self.system_.rhs)
        self.solution_ = self.system_.solution_part(x)
        self.condition_ = estimate_condition_1norm(self.system_.matrix, fact) if self.compute_condition else None
        self.velocity_nodes_, self.pressure_coeffs_ = self.dofs_.split(self.solution_)
        self.n_dofs_ = self.system_.n
        self.aggregate_stats_ = aggregate_statistics(self.aggregates_)
        return self

    # -------------------------------------------------------------- evaluation
    def _locate(self, X):
        mesh = self.mesh_
        ijk = np.floor((X - np.asarray(mesh.origin)) / mesh.cell_size).astype(np.int64)
        ijk = np.clip(ijk, 0, np.array(mesh.cells_per_axis) - 1)
        inside_box = np.all((X >= np.asarray(mesh.origin)) & (X <= np.asarray(mesh.origin) + mesh.box_lengths), axis=1)
        cells = mesh.cell_index(ijk)
        ok = inside_box & (self.dofs_.group_of_cell[cells] >= 0)
        return cells, ok

    def predict(self, X) -> np.ndarray:
        """Velocity at the points ``X``; NaN outside the active mesh."""
        check_is_fitted(self, "solution_")
        X = check_points(X, self.mesh_.dim)
        cells, ok = self._locate(X)
        out = np.full(X.shape, np.nan)
        for c in np.unique(cells[ok]):
            sel = ok & (cells == c)
            out[sel] = self.dofs_.evaluate_velocity(self.velocity_nodes_, int(c), X[sel])[0]
        return out

    def predict_pressure(self, X) -> np.ndarray:
        check_is_fitted(self, "solution_")
        X = check_points(X, self.mesh_.dim)
        cells, ok = self._locate(X)
        out = np.full(len(X), np.nan)
        for c in np.unique(cells[ok]):
            sel = ok & (cells == c)
            out[sel] = self.dofs_.evaluate_pressure(self.pressure_coeffs_, int(c), X[sel])[0]
        return out

    def condition_number(self) -> float:
        check_is_fitted(self, "solution_")
        if self.condition_ is None:
            self.condition_ = estimate_condition_1norm(self.system_.matrix)
        return self.condition_.kappa1_estimate

    def error_report(self, problem: StokesProblem | None = None):
        """Errors against the exact solution of ``problem`` (defaults to the fitted problem)."""
        from .experiments import compute_error_norms

        check_is_fitted(self, "solution_")
        return compute_error_norms(self, problem or self.problem_)
