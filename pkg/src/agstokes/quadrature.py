"""Reference quadrature rules: tensor Gauss-Legendre on [0,1]^d and collapsed Gauss-Jacobi on simplices.

Simplex rules are conical products (Duffy collapse of the unit cube) with
Gauss-Jacobi weights absorbing the collapse Jacobian, so all weights are
positive and every point is strictly inside the simplex.
"""

from __future__ import annotations

import functools

import numpy as np
from scipy.special import roots_jacobi

MAX_SIMPLEX_DEGREE = 8
MAX_TENSOR_POINTS = 6


class QuadratureDegreeError(ValueError):
    pass


def _points_for_degree(degree: int) -> int:
    return max(1, (int(degree) + 2) // 2)


@functools.lru_cache(maxsize=None)
def gauss_jacobi_01(n: int, alpha: int = 0):
    """Gauss-Jacobi rule on [0, 1] for the weight ``(1 - t)^alpha``."""
    x, w = roots_jacobi(n, alpha, 0)
    return (1.0 + x) / 2.0, w / 2.0 ** (alpha + 1)


@functools.lru_cache(maxsize=None)
def tensor_rule(dim: int, degree: int):
    """Gauss rule on the unit cube exact to ``degree`` per axis. Points lexicographic (x fastest)."""
    if degree < 0:
        raise QuadratureDegreeError("degree must be non-negative")
    n = _points_for_degree(degree)
    if n > MAX_TENSOR_POINTS:
        raise QuadratureDegreeError(f"tensor rule degree {degree} needs {n} > {MAX_TENSOR_POINTS} points per axis")
    x, w = gauss_jacobi_01(n, 0)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    pts = np.stack([g.ravel(order="F") for g in grids], axis=-1)
    wts = np.prod(np.stack([g.ravel(order="F") for g in wgrids], axis=-1), axis=1)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


@functools.lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int):
    """Rule on the reference simplex (vertices 0, e_1, ..., e_d) exact for total degree ``degree``."""
    if degree < 0 or degree > MAX_SIMPLEX_DEGREE:
        raise QuadratureDegreeError(f"simplex degree must lie in 0..{MAX_SIMPLEX_DEGREE}, got {degree}")
    n = _points_for_degree(degree)
    if dim == 1:
        return tensor_rule(1, degree)
    u, wu = gauss_jacobi_01(n, 0)
    v, wv = gauss_jacobi_01(n, 1)
    if dim == 2:
        U, V = np.meshgrid(u, v, indexing="ij")
        W = np.outer(wu, wv)
        pts = np.stack([U * (1 - V), V], axis=-1).reshape(-1, 2)
        wts = W.ravel()
    elif dim == 3:
        s, ws = gauss_jacobi_01(n, 2)
        U, V, S = np.meshgrid(u, v, s, indexing="ij")
        W = wu[:, None, None] * wv[None, :, None] * ws[None, None, :]
        pts = np.stack([U * (1 - V) * (1 - S), V * (1 - S), S], axis=-1).reshape(-1, 3)
        wts = W.ravel()
    else:
        raise ValueError(f"unsupported simplex dimension {dim}")
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def map_simplices(vertices: np.ndarray, degree: int):
    """Push the reference rule onto a batch of simplices.

    ``vertices`` has shape (n_simplices, k + 1, d) for k-simplices embedded in
    R^d (k = d for volumes, k = d - 1 for surfaces). Returns points
    (n_simplices * nq, d) and weights scaled by the k-dimensional measure.
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.size == 0:
        d = vertices.shape[-1] if vertices.ndim == 3 else 0
        return np.zeros((0, d)), np.zeros(0)
    k = vertices.shape[1] - 1
    ref_pts, ref_wts = simplex_rule(k, degree)
    edges = vertices[:, 1:, :] - vertices[:, :1, :]  # (ns, k, d)
    pts = vertices[:, None, 0, :] + np.einsum("qk,skd->sqd", ref_pts, edges)
    meas = simplex_measure(vertices)
    wts = meas[:, None] * ref_wts[None, :] * _reference_simplex_volume_inv(k)
    return pts.reshape(-1, vertices.shape[2]), wts.ravel()


def _reference_simplex_volume_inv(k: int) -> float:
    return float(np.prod(np.arange(1, k + 1)))


def simplex_measure(vertices: np.ndarray) -> np.ndarray:
    """k-dimensional measure of k-simplices embedded in R^d (Gram determinant)."""
    vertices = np.asarray(vertices, dtype=float)
    k = vertices.shape[1] - 1
    edges = vertices[:, 1:, :] - vertices[:, :1, :]
    if k == vertices.shape[2]:
        det = np.abs(np.linalg.det(edges)) if k > 1 else np.abs(edges[:, 0, 0])
    else:
        gram = np.einsum("ski,sli->skl", edges, edges)
        det = np.sqrt(np.clip(np.linalg.det(gram), 0.0, None)) if k > 1 else np.sqrt(gram[:, 0, 0])
    return det / _reference_simplex_volume_inv(k)
