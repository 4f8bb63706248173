"""Implicit geometry: level sets, cell classification and the piecewise-linear boundary.

The physical domain is ``{x : psi(x) < 0}``. Vertex values with ``|psi| < 1e-12``
are nudged to ``-1e-12`` so the zero set never passes exactly through a mesh
vertex.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mesh import BackgroundMesh, _lex, _unlex

ZERO_NUDGE = 1e-12


class CellClass(enum.IntEnum):
    INTERNAL = 0
    CUT = 1
    EXTERNAL = 2


class GeometryResolutionError(ValueError):
    """The level set is not resolved by the mesh (e.g. two zeros on one edge)."""


@dataclass(frozen=True)
class LevelSet:
    """Signed scalar field; ``value`` and ``gradient`` take (n, d) points."""

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.value(np.atleast_2d(np.asarray(x, dtype=float)))


def _ball_cavity(name, radius, center):
    c = np.asarray(center, dtype=float)

    def value(x):
        return radius - np.linalg.norm(x - c, axis=1)

    def gradient(x):
        r = x - c
        nr = np.linalg.norm(r, axis=1, keepdims=True)
        return -r / np.where(nr > 0, nr, 1.0)

    return LevelSet(name, value, gradient, {"radius": radius, "center": tuple(c)})


def circle_cavity(radius=0.3, center=(0.5, 0.5)) -> LevelSet:
    return _ball_cavity("circle_cavity", radius, center)


def sphere_cavity(radius=0.3, center=(0.5, 0.5, 0.5)) -> LevelSet:
    return _ball_cavity("sphere_cavity", radius, center)


def moving_circle(ell=0.5 * np.sqrt(2.0), radius=0.225) -> LevelSet:
    """Circular obstacle whose center sits at distance ``ell`` from (0, 0) along the main diagonal."""
    c = np.full(2, ell / np.sqrt(2.0))
    ls = _ball_cavity("moving_circle", radius, c)
    ls.params["ell"] = ell
    return ls


def moving_sphere(ell=0.5 * np.sqrt(3.0), radius=0.2) -> LevelSet:
    c = np.full(3, ell / np.sqrt(3.0))
    ls = _ball_cavity("moving_sphere", radius, c)
    ls.params["ell"] = ell
    return ls


def halfspace(axis=0, offset=0.5, dim=2) -> LevelSet:
    """Domain ``{x[axis] < offset}``."""
    axis = {"x": 0, "y": 1, "z": 2}.get(axis, axis)

    def value(x):
        return x[:, axis] - offset

    def gradient(x):
        g = np.zeros_like(x)
        g[:, axis] = 1.0
        return g

    return LevelSet("halfspace", value, gradient, {"axis": axis, "offset": offset, "dim": dim})


def everywhere(dim=2) -> LevelSet:
    """Whole box inside (constant ``psi = -1``)."""
    return LevelSet("everywhere", lambda x: -np.ones(len(x)), lambda x: np.zeros_like(x), {"dim": dim})


def nowhere(dim=2) -> LevelSet:
    return LevelSet("nowhere", lambda x: np.ones(len(x)), lambda x: np.zeros_like(x), {"dim": dim})


def union_of_ball_cavities(centers, radii, name="spheres") -> LevelSet:
    """Fluid outside a set of balls: ``psi = max_i (r_i - |x - c_i|)``."""
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)

    def _all(x):
        d = np.linalg.norm(x[:, None, :] - centers[None], axis=2)
        return radii[None] - d, d

    def value(x):
        return _all(x)[0].max(axis=1)

    def gradient(x):
        v, d = _all(x)
        k = v.argmax(axis=1)
        r = x - centers[k]
        return -r / np.maximum(d[np.arange(len(x)), k], 1e-300)[:, None]

    return LevelSet(name, value, gradient, {"centers": centers.tolist(), "radii": radii.tolist()})


_BUILTINS = {
    "circle_cavity": circle_cavity,
    "sphere_cavity": sphere_cavity,
    "moving_circle": moving_circle,
    "moving_sphere": moving_sphere,
    "halfspace": halfspace,
}


def builtin_geometries(name: str, **params) -> LevelSet:
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ValueError(f"unknown geometry {name!r}; valid names: {', '.join(sorted(_BUILTINS))}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# classification


@dataclass
class Classification:
    mesh: BackgroundMesh
    vertex_values: np.ndarray
    cell_class: np.ndarray
    level_set_name: str = ""
    _outer: np.ndarray = field(default=None, repr=False)

    @property
    def internal_cells(self):
        return np.flatnonzero(self.cell_class == CellClass.INTERNAL)

    @property
    def cut_cells(self):
        return np.flatnonzero(self.cell_class == CellClass.CUT)

    @property
    def external_cells(self):
        return np.flatnonzero(self.cell_class == CellClass.EXTERNAL)

    @property
    def active_cells(self):
        return np.flatnonzero(self.cell_class != CellClass.EXTERNAL)

    def counts(self) -> dict:
        return {c.name: int(np.sum(self.cell_class == c)) for c in CellClass}

    def outer_vef_keys(self) -> np.ndarray:
        """Sorted doubled-lattice keys of VEFs touching a cut cell but no internal cell."""
        if self._outer is None:
            cut_keys = np.unique(self.mesh.cell_vef_keys(self.cut_cells).ravel())
            in_keys = np.unique(self.mesh.cell_vef_keys(self.internal_cells).ravel())
            self._outer = np.setdiff1d(cut_keys, in_keys)
        return self._outer

    def vef_flag(self, key: int) -> str:
        """``'interior'``, ``'outer'`` or ``'external'`` for the VEF with the given key."""
        classes = self.cell_class[self.mesh.cells_of_key(key)]
        if np.any(classes == CellClass.INTERNAL):
            return "interior"
        if np.any(classes == CellClass.CUT):
            return "outer"
        return "external"


def _nudged_values(values):
    values = np.array(values, dtype=float)
    values[np.abs(values) < ZERO_NUDGE] = -ZERO_NUDGE
    return values


def _check_double_cuts(mesh, level_set, vvals):
    """Edges with equal endpoint signs but an opposite-sign midpoint cannot be represented."""
    n = np.array(mesh.cells_per_axis)
    vshape = tuple(n + 1)
    h = mesh.cell_size
    for axis in range(mesh.dim):
        shape = tuple(v if a == axis else v + 1 for a, v in enumerate(n))
        pos = _unlex(np.arange(int(np.prod(shape))), shape)
        end = pos.copy()
        end[:, axis] += 1
        s0 = vvals[_lex(pos, vshape)] < 0
        s1 = vvals[_lex(end, vshape)] < 0
        same = s0 == s1
        if not np.any(same):
            continue
        mid = np.asarray(mesh.origin) + (pos[same] + 0.5 * np.eye(mesh.dim)[axis]) * h
        smid = _nudged_values(level_set.value(mid)) < 0
        bad = np.flatnonzero(smid != s0[same])
        if bad.size:
            p = mid[bad[0]]
            raise GeometryResolutionError(
                f"level set {level_set.name!r} has two zeros on the edge centred at {p.tolist()}; refine the mesh"
            )


def classify(mesh: BackgroundMesh, level_set: LevelSet, check_double_cuts: bool = True) -> Classification:
    """Classify every cell as INTERNAL, CUT or EXTERNAL from nudged vertex values."""
    coords = mesh.vertex_coordinates()
    raw = np.asarray(level_set.value(coords), dtype=float)
    bad = np.flatnonzero(~np.isfinite(raw))
    if bad.size:
        v = int(bad[0])
        raise ValueError(f"level set {level_set.name!r} is not finite at vertex {v} {coords[v].tolist()}")
    vvals = _nudged_values(raw)
    if check_double_cuts:
        _check_double_cuts(mesh, level_set, vvals)
    signs = vvals[mesh.cell_vertices(np.arange(mesh.n_cells))] < 0
    cls = np.full(mesh.n_cells, CellClass.CUT, dtype=np.int8)
    cls[signs.all(axis=1)] = CellClass.INTERNAL
    cls[(~signs).all(axis=1)] = CellClass.EXTERNAL
    return Classification(mesh, vvals, cls, level_set.name)


def reconstruct_interface(mesh: BackgroundMesh, level_set: LevelSet, classification: Classification) -> dict:
    """Piecewise-linear boundary per cut cell: ``{cell: (elements, unit_normals)}``.

    Elements are segments (n, 2, 2) in 2D and triangles (n, 3, 3) in 3D;
    normals point out of the domain.
    """
    from .cutcell import decompose

    dec = decompose(mesh, classification)
    return {c: (cc.interface, cc.normals) for c, cc in dec.cells.items()}
