"""Cut-cell decomposition and quadrature on ``K ∩ Ω_h``, ``Γ_h ∩ K`` and ``F ∩ Ω_h``.

Within a cut cell the domain is approximated by the convex polytope spanned by
the inside vertices and the edge zeros of the linear edge interpolant of psi.
In 2D that polytope is the "walk polygon" obtained by visiting the cell
boundary; in 3D it is the convex hull of the same points. Both are split into
simplices from their centroid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .geometry import CellClass, Classification
from .mesh import BackgroundMesh, _lex, _unlex, local_vertex_offsets
from .quadrature import map_simplices, tensor_rule

# local vertices of the unit square in counter-clockwise order (lexicographic ids)
_SQUARE_CCW = (0, 1, 3, 2)
_MERGE_TOL = 1e-10


class DegenerateCutError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray | None = None

    @property
    def measure(self) -> float:
        return float(self.weights.sum())

    def integrate(self, values) -> np.ndarray:
        return np.tensordot(self.weights, np.asarray(values), axes=(0, 0))


@dataclass
class CutCell:
    """Sub-polytope of one cut cell.

    ``simplices`` (n, d+1, d) cover ``K ∩ Ω_h``; ``interface`` holds segments
    (2D) or triangles (3D) on ``Γ_h`` with outward ``normals``; ``facets``
    maps the local facet ``2 * axis + side`` to its clipped pieces.
    """

    cell: int
    origin: np.ndarray
    h: float
    simplices: np.ndarray
    interface: np.ndarray
    normals: np.ndarray
    facets: dict = field(default_factory=dict)

    @property
    def volume(self) -> float:
        return float(_measures(self.simplices).sum())

    @property
    def interface_measure(self) -> float:
        return float(_measures(self.interface).sum())

    def facet_measure(self, local_facet: int) -> float:
        return float(_measures(self.facets[local_facet]).sum())


def _measures(simplices):
    from .quadrature import simplex_measure

    if len(simplices) == 0:
        return np.zeros(0)
    return simplex_measure(simplices)


def _crossing(p0, p1, s0, s1):
    t = s0 / (s0 - s1)
    if not 0.0 < t < 1.0:
        raise DegenerateCutError(f"edge zero at parameter {t} coincides with a vertex")
    return p0 + t * (p1 - p0)


def _walk(points, values):
    """Clip a convex polygon (vertices in cyclic order) to ``values < 0``.

    Returns the clipped vertex list and a flag per vertex telling whether it is
    an edge zero (True) or an original vertex (False).
    """
    out, is_cut = [], []
    k = len(points)
    for i in range(k):
        j = (i + 1) % k
        if values[i] < 0:
            out.append(points[i])
            is_cut.append(False)
        if (values[i] < 0) != (values[j] < 0):
            out.append(_crossing(points[i], points[j], values[i], values[j]))
            is_cut.append(True)
    return out, is_cut


def _fan(points):
    """Simplices fanning a convex polygon (2D) from its vertex centroid."""
    pts = np.asarray(points)
    c = pts.mean(axis=0)
    k = len(pts)
    tri = np.array([[c, pts[i], pts[(i + 1) % k]] for i in range(k)])
    return tri


def _square_facet_points(origin, h, axis, side):
    """Corners of a cell facet in cyclic order and their local vertex ids (3D)."""
    offs = local_vertex_offsets(3)
    ids = [v for v in range(8) if offs[v, axis] == side]
    other = [a for a in range(3) if a != axis]
    # order the 4 corners cyclically in the (other[0], other[1]) plane
    key = {(0, 0): 0, (1, 0): 1, (1, 1): 2, (0, 1): 3}
    ids.sort(key=lambda v: key[(int(offs[v, other[0]]), int(offs[v, other[1]]))])
    return origin + offs[ids] * h, ids


def _clip_facet(corners, values):
    """Clipped pieces of a facet: segments (1, 2, 2) in 2D, triangles (n, 3, 3) in 3D."""
    d = corners.shape[1]
    if d == 2:
        a, b = corners
        sa, sb = values
        if sa < 0 and sb < 0:
            return np.array([[a, b]])
        if sa >= 0 and sb >= 0:
            return np.zeros((0, 2, 2))
        x = _crossing(a, b, sa, sb)
        return np.array([[a, x]]) if sa < 0 else np.array([[x, b]])
    pts, _ = _walk(corners, values)
    if len(pts) < 3:
        return np.zeros((0, 3, 3))
    p0 = pts[0]
    return np.array([[p0, pts[i], pts[i + 1]] for i in range(1, len(pts) - 1)])


def _facet_corners(origin, h, dim, lf):
    axis, side = divmod(lf, 2)
    if dim == 2:
        offs = local_vertex_offsets(2)
        ids = [v for v in range(4) if offs[v, axis] == side]
        return origin + offs[ids] * h, ids
    return _square_facet_points(origin, h, axis, side)


def _orient_normals(elements, inner_point):
    """Unit normals of segments/triangles pointing away from ``inner_point``."""
    d = elements.shape[2]
    if d == 2:
        t = elements[:, 1] - elements[:, 0]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
    else:
        n = np.cross(elements[:, 1] - elements[:, 0], elements[:, 2] - elements[:, 0])
    nn = np.linalg.norm(n, axis=1, keepdims=True)
    n = n / np.where(nn > 0, nn, 1.0)
    flip = np.einsum("ij,ij->i", n, elements.mean(axis=1) - inner_point) < 0
    n[flip] *= -1
    return n


def _decompose_2d(origin, h, values):
    offs = local_vertex_offsets(2)
    corners = origin + offs[list(_SQUARE_CCW)] * h
    vals = values[list(_SQUARE_CCW)]
    poly, is_cut = _walk(corners, vals)
    poly = np.asarray(poly)
    k = len(poly)
    if k < 3:
        raise DegenerateCutError("cut polygon has fewer than three vertices")
    simplices = _fan(poly)
    segs = [[poly[i], poly[(i + 1) % k]] for i in range(k) if is_cut[i] and is_cut[(i + 1) % k]]
    interface = np.array(segs).reshape(-1, 2, 2)
    normals = _orient_normals(interface, poly.mean(axis=0)) if len(interface) else np.zeros((0, 2))
    return simplices, interface, normals


def _decompose_3d(origin, h, values):
    offs = local_vertex_offsets(3)
    verts = origin + offs * h
    inside = values < 0
    pts = [verts[v] for v in range(8) if inside[v]]
    tol = _MERGE_TOL * h
    for a in range(3):
        for v in range(8):
            if offs[v, a] != 0:
                continue
            w = v + (1 << a)
            if inside[v] == inside[w]:
                continue
            x = _crossing(verts[v], verts[w], values[v], values[w])
            inner = verts[v] if inside[v] else verts[w]
            if np.linalg.norm(x - inner) > tol:
                pts.append(x)
    pts = np.asarray(pts)
    empty = (np.zeros((0, 4, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3)))
    if len(pts) < 4:
        return empty
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return empty  # flat: zero volume
    c = pts[hull.vertices].mean(axis=0)
    tris = pts[hull.simplices]
    tets = np.concatenate([np.broadcast_to(c, (len(tris), 1, 3)), tris], axis=1)
    on_face = np.zeros(len(tris), dtype=bool)
    lo, hi = origin, origin + h
    for a in range(3):
        on_face |= np.all(np.abs(tris[:, :, a] - lo[a]) < tol, axis=1)
        on_face |= np.all(np.abs(tris[:, :, a] - hi[a]) < tol, axis=1)
    interface = tris[~on_face]
    normals = hull.equations[~on_face, :3]
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return tets, interface, normals


def decompose_cut_cell(cell_origin, h, vertex_values, cell: int = -1) -> CutCell:
    """Decompose one cell given its origin, size and the 2^d lexicographic vertex values."""
    origin = np.asarray(cell_origin, dtype=float)
    values = np.asarray(vertex_values, dtype=float)
    dim = origin.size
    if values.shape != (2**dim,):
        raise ValueError(f"expected {2**dim} vertex values, got {values.shape}")
    if dim == 2:
        simplices, interface, normals = _decompose_2d(origin, h, values)
    elif dim == 3:
        simplices, interface, normals = _decompose_3d(origin, h, values)
    else:
        raise ValueError(f"unsupported dimension {dim}")
    facets = {}
    for lf in range(2 * dim):
        corners, ids = _facet_corners(origin, h, dim, lf)
        facets[lf] = _clip_facet(corners, values[ids])
    return CutCell(cell, origin, float(h), simplices, interface, normals, facets)


@dataclass
class CutDecomposition:
    mesh: BackgroundMesh
    classification: Classification
    cells: dict

    def __contains__(self, cell):
        return int(cell) in self.cells

    def __getitem__(self, cell) -> CutCell:
        return self.cells[int(cell)]


def decompose(mesh: BackgroundMesh, classification: Classification) -> CutDecomposition:
    cut = classification.cut_cells
    verts = mesh.cell_vertices(cut)
    origins = mesh.cell_origin(cut)
    vv = classification.vertex_values
    cells = {
        int(c): decompose_cut_cell(origins[i], mesh.cell_size, vv[verts[i]], int(c)) for i, c in enumerate(cut)
    }
    return CutDecomposition(mesh, classification, cells)


def volume_rule(decomposition: CutDecomposition, cell: int, degree: int) -> QuadratureRule:
    """Rule on ``K ∩ Ω_h``: mapped simplex rules on cut cells, tensor Gauss on internal cells."""
    mesh = decomposition.mesh
    cls = decomposition.classification.cell_class[cell]
    if cls == CellClass.EXTERNAL:
        d = mesh.dim
        return QuadratureRule(np.zeros((0, d)), np.zeros(0))
    if cls == CellClass.INTERNAL:
        ref_p, ref_w = tensor_rule(mesh.dim, degree)
        h = mesh.cell_size
        return QuadratureRule(mesh.cell_origin(cell) + h * ref_p, ref_w * h**mesh.dim)
    pts, wts = map_simplices(decomposition[cell].simplices, degree)
    return QuadratureRule(pts, wts)


def boundary_rule(decomposition: CutDecomposition, cell: int, degree: int) -> QuadratureRule:
    """Rule on ``Γ_h ∩ K`` with the outward unit normal attached to every point."""
    cc = decomposition[cell]
    d = decomposition.mesh.dim
    if len(cc.interface) == 0:
        return QuadratureRule(np.zeros((0, d)), np.zeros(0), np.zeros((0, d)))
    pts, wts = map_simplices(cc.interface, degree)
    nq = len(wts) // len(cc.interface)
    return QuadratureRule(pts, wts, np.repeat(cc.normals, nq, axis=0))


def facet_geometry(mesh: BackgroundMesh, key: int):
    """Normal axis, corner coordinates (cyclic order) and vertex ids of the facet with the given key."""
    c = _unlex(int(key), mesh.doubled_shape)
    odd = c % 2 == 1
    if odd.sum() != mesh.dim - 1:
        raise ValueError(f"key {key} is not a facet")
    axis = int(np.flatnonzero(~odd)[0])
    base = np.where(odd, (c - 1) // 2, c // 2)
    if mesh.dim == 2:
        t = 1 - axis
        lat = np.array([base, base + np.eye(2, dtype=int)[t]])
    else:
        a, b = [x for x in range(3) if x != axis]
        ea, eb = np.eye(3, dtype=int)[a], np.eye(3, dtype=int)[b]
        lat = np.array([base, base + ea, base + ea + eb, base + eb])
    vids = _lex(lat, tuple(n + 1 for n in mesh.cells_per_axis))
    return axis, np.asarray(mesh.origin) + lat * mesh.cell_size, vids


def facet_pieces(mesh: BackgroundMesh, vertex_values, key: int) -> np.ndarray:
    """Clipped sub-simplices of ``F ∩ Ω_h``; depends only on the facet's own vertex values."""
    _, corners, vids = facet_geometry(mesh, key)
    return _clip_facet(corners, np.asarray(vertex_values)[vids])


def facet_measure(mesh: BackgroundMesh, vertex_values, key: int) -> float:
    return float(_measures(facet_pieces(mesh, vertex_values, key)).sum())


def facet_rule(decomposition_or_mesh, key: int, degree: int, vertex_values=None) -> QuadratureRule:
    """Rule on ``F ∩ Ω_h``; the full facet when uncut. Normal: +e_axis."""
    if isinstance(decomposition_or_mesh, CutDecomposition):
        mesh = decomposition_or_mesh.mesh
        vertex_values = decomposition_or_mesh.classification.vertex_values
    else:
        mesh = decomposition_or_mesh
    axis, corners, vids = facet_geometry(mesh, key)
    vals = np.asarray(vertex_values)[vids]
    d = mesh.dim
    if np.all(vals < 0):
        ref_p, ref_w = tensor_rule(d - 1, degree)
        h = mesh.cell_size
        tang = [a for a in range(d) if a != axis]
        pts = np.repeat(corners[:1], len(ref_w), axis=0)
        pts[:, tang] += h * ref_p
        wts = ref_w * h ** (d - 1)
    else:
        pts, wts = map_simplices(_clip_facet(corners, vals), degree)
    normal = np.zeros((len(wts), d))
    normal[:, axis] = 1.0
    return QuadratureRule(pts, wts, normal)


def total_measures(mesh: BackgroundMesh, classification: Classification, decomposition=None):
    """``(|Ω_h|, |Γ_h|)`` summed over the mesh."""
    if decomposition is None:
        decomposition = decompose(mesh, classification)
    vol = len(classification.internal_cells) * mesh.cell_volume()
    vol += sum(cc.volume for cc in decomposition.cells.values())
    area = sum(cc.interface_measure for cc in decomposition.cells.values())
    return vol, area
