"""Experiment drivers: convergence study, moving-domain sweep, demos, error norms and output files."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aggregation import cut_volume_fractions
from .estimator import AgFEMStokes
from .geometry import builtin_geometries, halfspace
from .mesh import _unlex, unit_box_mesh
from .problems import StokesProblem, lid_driven, manufactured_solution, patch_solution, poiseuille_channel
from .quadrature import tensor_rule
from .cutcell import volume_rule

log = logging.getLogger(__name__)

CONVERGENCE_HEADER = "m,h,n_dofs,errH1_u,errL2_u,errL2_p,kappa1,max_agg_dist"
MOVING_HEADER = "ell,eta_min,kappa1_std,kappa1_agg"


@dataclass
class ExperimentConfig:
    dim: int = 2
    levels: tuple = (3, 6)
    space: str = "aggregated"
    extension: str = "serendipity"
    stabilization: str = "alg3"
    tau_nitsche: float = 40.0
    tau_j1: float = 0.01
    tau_j2: float = 0.01
    eta0: float = 0.0
    geometry: str = ""
    problem: str = "manufactured"
    out: str = ""
    seed: int = 0
    m: int = 0  # moving sweep / demo mesh level (0: 5 in 2D, 4 in 3D)
    n_samples: int = 200
    ell_range: tuple = (0.35, 0.65)  # multiples of sqrt(dim)
    demo: str = "poiseuille"
    quad_degree: int = 6
    solver: str = "auto"

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        lo, hi = (int(v) for v in self.levels)
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid level range {self.levels}")
        self.levels = (lo, hi)

    def estimator(self, space=None, **overrides) -> AgFEMStokes:
        kw = dict(
            space=space or self.space,
            extension=self.extension,
            stabilization=self.stabilization,
            tau_nitsche=self.tau_nitsche,
            tau_j1=self.tau_j1,
            tau_j2=self.tau_j2,
            eta0=self.eta0,
            quad_degree=self.quad_degree,
            solver=self.solver,
        )
        kw.update(overrides)
        return AgFEMStokes(**kw)

    @property
    def mesh_level(self) -> int:
        return self.m or (5 if self.dim == 2 else 4)


def parse_levels(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    text = str(text).strip()
    for sep in ("..", ":", "-", ","):
        if sep in text:
            a, b = text.split(sep, 1)
            return int(a), int(b)
    return int(text), int(text)


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def config_from_mapping(values: dict) -> ExperimentConfig:
    """Build a config from strings/values, converting to the field types."""
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    kw = {}
    for k, v in values.items():
        if v is None:
            continue
        if k not in fields:
            raise ValueError(f"unknown configuration key {k!r}")
        default = fields[k].default
        if k == "levels":
            kw[k] = parse_levels(v)
        elif k == "ell_range":
            kw[k] = parse_levels_float(v)
        elif isinstance(default, bool):
            kw[k] = str(v).lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            kw[k] = int(v)
        elif isinstance(default, float):
            kw[k] = float(v)
        else:
            kw[k] = v
    return ExperimentConfig(**kw)


def parse_levels_float(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    a, b = str(text).replace("..", ",").split(",")
    return float(a), float(b)


def default_geometry(dim: int, moving: bool = False, ell=None):
    if moving:
        name = "moving_circle" if dim == 2 else "moving_sphere"
        return builtin_geometries(name, **({} if ell is None else {"ell": ell}))
    return builtin_geometries("circle_cavity" if dim == 2 else "sphere_cavity")


def make_problem(name: str, dim: int) -> StokesProblem:
    if name == "manufactured":
        return manufactured_solution(dim)
    if name == "patch":
        return patch_solution(dim)
    raise ValueError(f"unknown problem {name!r} (manufactured, patch)")


# ---------------------------------------------------------------------------
# error norms


@dataclass
class ErrorReport:
    errH1_u: float
    errL2_u: float
    errL2_p: float
    n_dofs: int = 0
    h: float = 0.0
    kappa1: float = float("nan")
    max_agg_dist: int = 0
    extra: dict = field(default_factory=dict)


def compute_error_norms(est: AgFEMStokes, problem: StokesProblem, degree: int | None = None) -> ErrorReport:
    """Velocity H1-seminorm and L2 errors and pressure L2 error over ``Ω_h``.

    The pressure error is measured after removing the mean difference when the
    pressure is only defined up to a constant (pure Dirichlet problems).
    """
    if not problem.has_exact:
        raise ValueError("the problem has no exact solution")
    dofs, mesh = est.dofs_, est.mesh_
    deg = degree or max(est.quad_degree, 2 * dofs.q + 2)
    d, h = mesh.dim, mesh.cell_size
    U, Pc = est.velocity_nodes_, est.pressure_coeffs_
    e1 = e0 = ep = 0.0
    pdiff_int = vol = 0.0
    # internal cells, batched on the reference rule
    cls = est.classification_
    cells = cls.internal_cells
    if cells.size:
        ref_p, ref_w = tensor_rule(d, deg)
        w = ref_w * h**d
        vb = dofs.velocity_basis
        phi, dphi = vb.values(ref_p), vb.gradients(ref_p) / h
        psi = dofs.pres_basis.values(ref_p - 0.5)
        for chunk in np.array_split(cells, max(1, len(cells) // 2000)):
            pts = mesh.cell_origin(chunk)[:, None, :] + h * ref_p[None]
            flat = pts.reshape(-1, d)
            Uc = U[dofs.cell_nodes(chunk)]  # (n, nb, d)
            uh = np.einsum("qb,nbc->nqc", phi, Uc)
            guh = np.einsum("qbk,nbc->nqck", dphi, Uc)
            ph = np.einsum("qk,nk->nq", psi, Pc[dofs.group_of_cell[chunk]])
            ue = problem.u(flat).reshape(uh.shape)
            ge = problem.grad_u(flat).reshape(guh.shape)
            pe = problem.p(flat).reshape(ph.shape)
            e0 += float(np.einsum("q,nqc->", w, (uh - ue) ** 2))
            e1 += float(np.einsum("q,nqck->", w, (guh - ge) ** 2))
            ep += float(np.einsum("q,nq->", w, (ph - pe) ** 2))
            pdiff_int += float(np.einsum("q,nq->", w, ph - pe))
            vol += w.sum() * len(chunk)
    for c in cls.cut_cells:
        rule = volume_rule(est.decomposition_, c, deg)
        if not len(rule.weights):
            continue
        x, w = rule.points, rule.weights
        uh, guh, _ = dofs.evaluate_velocity(U, int(c), x)
        ph = dofs.evaluate_pressure(Pc, int(c), x)[0]
        pe = problem.p(x)
        e0 += float(w @ np.sum((uh - problem.u(x)) ** 2, axis=1))
        e1 += float(w @ np.sum((guh - problem.grad_u(x)) ** 2, axis=(1, 2)))
        ep += float(w @ (ph - pe) ** 2)
        pdiff_int += float(w @ (ph - pe))
        vol += float(w.sum())
    if est.system_.has_multiplier and vol > 0:
        ep = max(ep - pdiff_int**2 / vol, 0.0)
    kappa = est.condition_.kappa1_estimate if est.condition_ is not None else float("nan")
    return ErrorReport(
        errH1_u=math.sqrt(e1),
        errL2_u=math.sqrt(e0),
        errL2_p=math.sqrt(ep),
        n_dofs=int(est.n_dofs_),
        h=float(h),
        kappa1=float(kappa),
        max_agg_dist=int(est.aggregate_stats_["max_root_distance"]),
        extra={"residual": est.residual_, "volume": vol},
    )


def fit_slope(h, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(h)``."""
    h, values = np.asarray(h, float), np.asarray(values, float)
    ok = np.isfinite(values) & (values > 0) & np.isfinite(h) & (h > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(h[ok]), np.log(values[ok]), 1)[0])


# ---------------------------------------------------------------------------
# CSV helpers


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_csv(path, header: str, rows: list, comments=()) -> str:
    lines = [header]
    keys = header.split(",")
    for row in rows:
        lines.append(",".join(_fmt(row[k]) for k in keys))
    lines.extend(f"# {c}" for c in comments)
    text = "\n".join(lines) + "\n"
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------------------
# drivers


def run_convergence(config: ExperimentConfig, level_set=None, problem: StokesProblem | None = None):
    """One row per mesh level; failed levels give NaN rows plus a comment line."""
    problem = problem or make_problem(config.problem, config.dim)
    geo = level_set or (
        builtin_geometries(config.geometry) if config.geometry else default_geometry(config.dim)
    )
    rows, comments = [], []
    lo, hi = config.levels
    for m in range(lo, hi + 1):
        mesh = unit_box_mesh(config.dim, m)
        try:
            est = config.estimator().fit(mesh, geo, problem)
            rep = compute_error_norms(est, problem)
            rows.append(
                {
                    "m": m,
                    "h": mesh.cell_size,
                    "n_dofs": rep.n_dofs,
                    "errH1_u": rep.errH1_u,
                    "errL2_u": rep.errL2_u,
                    "errL2_p": rep.errL2_p,
                    "kappa1": rep.kappa1,
                    "max_agg_dist": rep.max_agg_dist,
                }
            )
            log.info("level %d: %s", m, rows[-1])
        except Exception as exc:  # recorded, the study continues
            log.warning("level %d failed: %s", m, exc)
            rows.append(
                {"m": m, "h": mesh.cell_size, "n_dofs": 0, "errH1_u": np.nan, "errL2_u": np.nan,
                 "errL2_p": np.nan, "kappa1": np.nan, "max_agg_dist": -1}
            )
            comments.append(f"failed m={m}: {type(exc).__name__}: {exc}")
    text = write_csv(config.out, CONVERGENCE_HEADER, rows, comments)
    return rows, text


def moving_ells(config: ExperimentConfig) -> np.ndarray:
    lo, hi = config.ell_range
    return np.linspace(lo, hi, config.n_samples) * math.sqrt(config.dim)


def run_moving_domain(config: ExperimentConfig, ells=None, make_level_set=None):
    """Condition numbers of the standard and aggregated systems along the obstacle path."""
    problem = make_problem(config.problem, config.dim)
    mesh = unit_box_mesh(config.dim, config.mesh_level)
    ells = moving_ells(config) if ells is None else np.asarray(ells, float)
    rows, comments = [], []
    for ell in ells:
        geo = make_level_set(ell) if make_level_set else default_geometry(config.dim, moving=True, ell=ell)
        row = {"ell": float(ell), "eta_min": np.nan, "kappa1_std": np.nan, "kappa1_agg": np.nan}
        try:
            agg = config.estimator("aggregated").fit(mesh, geo, problem)
            eta = cut_volume_fractions(mesh, agg.classification_, agg.decomposition_)
            cut = agg.classification_.cut_cells
            row["eta_min"] = float(eta[cut].min()) if cut.size else 1.0
            row["kappa1_agg"] = agg.condition_.kappa1_estimate
            std = config.estimator("standard").fit(mesh, geo, problem)
            row["kappa1_std"] = std.condition_.kappa1_estimate
        except Exception as exc:
            comments.append(f"failed ell={ell:.17g}: {type(exc).__name__}: {exc}")
            log.warning("ell=%g failed: %s", ell, exc)
        rows.append(row)
    text = write_csv(config.out, MOVING_HEADER, rows, comments)
    return rows, text


def moving_control(config: ExperimentConfig):
    """Control run: a plane on a mesh line leaves no cut cells, so both spaces coincide."""
    problem = make_problem(config.problem, config.dim)
    mesh = unit_box_mesh(config.dim, config.mesh_level)
    geo = halfspace(axis=0, offset=1.0, dim=config.dim)
    problem = dataclasses.replace(problem, face_types={0: "dirichlet", 2: "dirichlet"})
    k = []
    for space in ("standard", "aggregated"):
        est = config.estimator(space).fit(mesh, geo, problem)
        k.append(est.condition_.kappa1_estimate)
    return tuple(k)


# ---------------------------------------------------------------------------
# demos and field export


def demo_setup(name: str, dim: int = 2):
    if name == "poiseuille":
        return poiseuille_channel(), halfspace(axis=1, offset=0.7, dim=2)
    if name == "zero_inflow":
        return poiseuille_channel(u_max=0.0), halfspace(axis=1, offset=0.7, dim=2)
    if name == "lid_driven":
        return lid_driven(dim), default_geometry(dim)
    raise ValueError(f"unknown demo {name!r} (poiseuille, zero_inflow, lid_driven)")


def sample_fields(est: AgFEMStokes):
    """Velocity magnitude and pressure at the velocity node lattice (zero off the active mesh)."""
    dofs, mesh = est.dofs_, est.mesh_
    shape = dofs.node_shape
    n_pts = int(np.prod(shape))
    speed = np.zeros(n_pts)
    pres = np.zeros(n_pts)
    speed[dofs.node_lattice] = np.linalg.norm(est.velocity_nodes_, axis=1)
    # pressure from the first active cell containing each node
    done = np.zeros(n_pts, dtype=bool)
    for c in dofs.active_cells:
        lat = dofs._cell_lattice_nodes(np.array([c]))[0]
        new = ~done[lat]
        if not np.any(new):
            continue
        pts = dofs.node_coords[dofs.cell_nodes(c)[new]]
        pres[lat[new]] = dofs.evaluate_pressure(est.pressure_coeffs_, int(c), pts)[0]
        done[lat[new]] = True
    pts = np.asarray(mesh.origin) + _unlex(np.arange(n_pts), shape) * (mesh.cell_size / dofs.q)
    return pts, speed, pres, shape


def write_vtk(path, points, shape, arrays: dict, title="agstokes fields"):
    """Legacy ASCII VTK STRUCTURED_GRID with scalar point data."""
    dims = list(shape) + [1] * (3 - len(shape))
    pts3 = np.zeros((len(points), 3))
    pts3[:, : points.shape[1]] = points
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET STRUCTURED_GRID"]
    lines.append("DIMENSIONS %d %d %d" % tuple(dims))
    lines.append(f"POINTS {len(points)} double")
    lines.extend("%.17g %.17g %.17g" % tuple(p) for p in pts3)
    lines.append(f"POINT_DATA {len(points)}")
    for name, vals in arrays.items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend("%.17g" % v for v in vals)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def boundary_flux(est: AgFEMStokes, face: int, degree: int = 6) -> float:
    """Outward flux of the discrete velocity through the inside part of a box face."""
    from .cutcell import facet_rule

    mesh, dofs = est.mesh_, est.dofs_
    axis, side = divmod(face, 2)
    active = dofs.active_cells
    ijk = mesh.cell_ijk(active)
    at = ijk[:, axis] == (mesh.cells_per_axis[axis] - 1 if side else 0)
    total = 0.0
    for c in active[at]:
        rule = facet_rule(est.decomposition_, mesh.facet_key(int(c), face), degree)
        if not len(rule.weights):
            continue
        u = dofs.evaluate_velocity(est.velocity_nodes_, int(c), rule.points)[0]
        total += (1.0 if side else -1.0) * float(rule.weights @ u[:, axis])
    return total


def run_demo(config: ExperimentConfig, out_path=None):
    problem, geo = demo_setup(config.demo, config.dim)
    mesh = unit_box_mesh(problem.dim, config.mesh_level)
    est = config.estimator().fit(mesh, geo, problem)
    pts, speed, pres, shape = sample_fields(est)
    path = out_path or config.out or f"{config.demo}.vtk"
    write_vtk(path, pts, shape, {"velocity_magnitude": speed, "pressure": pres})
    summary = {"demo": config.demo, "n_dofs": est.n_dofs_, "residual": est.residual_, "path": str(path)}
    if config.demo in ("poiseuille", "zero_inflow"):
        summary["inflow"] = -boundary_flux(est, 0)
        summary["outflow"] = boundary_flux(est, 1)
    return est, summary
