"""Sparse direct solves and 1-norm condition estimation.

Two exact backends are available. ``superlu`` factors the whole matrix after a
nested-dissection ordering. ``schur`` exploits the ``kron(I_d, S)`` velocity
block of the mixed system: only the scalar ``S`` is factored sparsely and the
(small) pressure Schur complement is formed and factored densely. It needs far
less memory than a full LU of 3D systems with ~10^5 unknowns.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

try:
    import pymetis
except ImportError:  # pragma: no cover - exercised only without the optional ordering package
    pymetis = None

BACKENDS = ("auto", "superlu", "schur")
# ``auto`` switches to the block backend for large 3D systems whose dense
# pressure Schur complement stays within a few GB
AUTO_SCHUR_SIZE = 60_000
AUTO_SCHUR_MAX_PRESSURE = 20_000
_SCHUR_CHUNK = 500


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


@dataclass(frozen=True)
class ConditionReport:
    kappa1_estimate: float
    norm1: float
    inv_norm1_estimate: float
    n: int


@dataclass(frozen=True)
class BlockLayout:
    """Leading ``dim * n_scalar`` unknowns carry ``kron(I_dim, S)``; the rest is the pressure block."""

    dim: int
    n_scalar: int

    @property
    def n_velocity(self) -> int:
        return self.dim * self.n_scalar


def _check_square(matrix):
    A = sp.csc_matrix(matrix, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A.data)):
        raise ValueError("matrix has non-finite entries")
    return A


def fill_reducing_order(A) -> np.ndarray | None:
    """METIS nested dissection of the symmetrised pattern, or None if unavailable."""
    if pymetis is None or A.shape[0] < 3:
        return None
    G = (abs(A) + abs(A.T)).tocsr()
    G.setdiag(0)
    G.eliminate_zeros()
    if G.nnz == 0:
        return None
    perm, _ = pymetis.nested_dissection(adjacency=pymetis.CSRAdjacency(G.indptr, G.indices))
    return np.asarray(perm, dtype=np.int64)


_DENSE_LOCATE_SIZE = 4000


def _locate_singular_column(A):
    """Best-effort column index of a zero pivot (SuperLU does not report it)."""
    A = sp.csc_matrix(A)
    empty = np.flatnonzero(np.diff(A.indptr) == 0)
    if empty.size:
        return int(empty[0])
    if A.shape[0] > _DENSE_LOCATE_SIZE:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, _ = sla.lu_factor(A.toarray(), check_finite=False)
    zero = np.flatnonzero(np.diag(lu) == 0)
    return int(zero[0]) if zero.size else None


class _SparseLU:
    """``A[p][:, p] = L U`` with a symmetric fill-reducing permutation and threshold pivoting."""

    def __init__(self, A, pivot_threshold: float = 0.01):
        self.n = A.shape[0]
        self.perm = fill_reducing_order(A)
        try:
            if self.perm is None:
                self._lu = spla.splu(A, permc_spec="COLAMD")
            else:
                Ap = A[self.perm][:, self.perm].tocsc()
                self._lu = spla.splu(
                    Ap, permc_spec="NATURAL", diag_pivot_thresh=pivot_threshold, options={"SymmetricMode": True}
                )
        except RuntimeError as exc:
            raise SingularMatrixError(f"LU factorization failed: {exc}", _locate_singular_column(A)) from exc
        diag = self._lu.U.diagonal()
        bad = np.flatnonzero((diag == 0) | ~np.isfinite(diag))
        if bad.size:
            col = int(self._lu.perm_c[bad[0]])
            if self.perm is not None:
                col = int(self.perm[col])
            raise SingularMatrixError(f"matrix is singular to working precision (zero pivot at column {col})", col)
        self.min_abs_pivot = float(np.abs(diag).min()) if diag.size else 1.0
        self.nnz = int(self._lu.nnz)

    def solve(self, b, transpose: bool = False):
        b = np.asarray(b, dtype=float)
        trans = "T" if transpose else "N"
        if self.perm is None:
            return self._lu.solve(b, trans=trans)
        x = np.empty_like(b)
        x[self.perm] = self._lu.solve(np.ascontiguousarray(b[self.perm]), trans=trans)
        return x


def _prefer_schur(n: int, layout: BlockLayout | None) -> bool:
    # in 2D nested dissection keeps the sparse LU cheap; in 3D its fill dominates
    if layout is None or layout.dim != 3 or n <= AUTO_SCHUR_SIZE:
        return False
    return n - layout.n_velocity <= AUTO_SCHUR_MAX_PRESSURE


class Factorization:
    """Exact factorization of a square sparse matrix; read-only after construction.

    ``backend="superlu"`` is a plain sparse LU. ``backend="schur"`` requires
    ``layout`` and eliminates the velocity block through one scalar factor.
    """

    def __init__(self, matrix, backend: str = "auto", layout: BlockLayout | None = None, pivot_threshold: float = 0.01):
        if backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")
        A = _check_square(matrix)
        self.n = A.shape[0]
        if backend == "auto":
            backend = "schur" if _prefer_schur(self.n, layout) else "superlu"
        if backend == "schur" and layout is None:
            raise ValueError("the schur backend needs the block layout of the system")
        self.backend = backend
        if backend == "superlu":
            self._lu = _SparseLU(A, pivot_threshold)
            self.min_abs_pivot = self._lu.min_abs_pivot
            self.nnz = self._lu.nnz
        else:
            self._setup_schur(A, layout, pivot_threshold)

    def _setup_schur(self, A, layout, pivot_threshold):
        d, ns = layout.dim, layout.n_scalar
        nv = layout.n_velocity
        if nv > self.n:
            raise ValueError("block layout larger than the matrix")
        A = A.tocsr()
        S = A[:ns, :ns].tocsc()
        diff = A[:nv, :nv] - sp.kron(sp.identity(d), S, format="csr")
        diff.eliminate_zeros()
        if diff.nnz:
            raise ValueError("velocity block is not kron(I_d, S); use the superlu backend")
        del diff
        self._layout = layout
        # a symmetric S keeps its nested-dissection structure under diagonal pivoting
        asym = abs(S - S.T).max() if S.nnz else 0.0
        sym = asym <= 1e-12 * (abs(S).max() if S.nnz else 1.0)
        self._S = _SparseLU(S, 0.0 if sym else pivot_threshold)
        self._A = A
        self._B1 = A[:nv, nv:].tocsc()
        self._B2t = A[nv:, :nv].tocsr()
        # Fortran order lets the dense LU work in place
        sigma = np.asfortranarray(A[nv:, nv:].toarray())
        npr = self.n - nv
        for c in range(d):
            B1c = self._B1[c * ns : (c + 1) * ns]
            B2c = self._B2t[:, c * ns : (c + 1) * ns]
            for j0 in range(0, npr, _SCHUR_CHUNK):
                X = self._S.solve(B1c[:, j0 : j0 + _SCHUR_CHUNK].toarray())
                sigma[:, j0 : j0 + _SCHUR_CHUNK] -= B2c @ X
        if npr:
            self._sigma = sla.lu_factor(sigma, overwrite_a=True, check_finite=False)
            diag = np.abs(np.diag(self._sigma[0]))
            if np.any(diag == 0) or not np.all(np.isfinite(diag)):
                col = int(nv + np.flatnonzero((diag == 0) | ~np.isfinite(diag))[0])
                raise SingularMatrixError(f"Schur complement is singular (zero pivot at column {col})", col)
            self.min_abs_pivot = float(min(self._S.min_abs_pivot, diag.min()))
        else:
            self._sigma = None
            self.min_abs_pivot = self._S.min_abs_pivot
        self.nnz = self._S.nnz * d + npr * npr

    def _velocity_solve(self, f, transpose):
        d, ns = self._layout.dim, self._layout.n_scalar
        F = f.reshape((d, ns) + f.shape[1:])
        cols = np.moveaxis(F, 0, 1).reshape(ns, -1)
        X = self._S.solve(cols, transpose).reshape((ns, d) + f.shape[1:])
        return np.moveaxis(X, 1, 0).reshape(f.shape)

    def solve(self, b, transpose: bool = False):
        b = np.asarray(b, dtype=float)
        if self.backend == "superlu":
            return self._lu.solve(b, transpose)
        x = self._schur_solve(b, transpose)
        # one step of iterative refinement
        A = self._A.T if transpose else self._A
        return x + self._schur_solve(b - A @ x, transpose)

    def _schur_solve(self, b, transpose):
        nv = self._layout.n_velocity
        f, g = b[:nv], b[nv:]
        # A = [[K, B1], [B2t, C]] and A^T = [[K^T, B2t^T], [B1^T, C^T]]
        left, right = (self._B2t.T, self._B1.T) if transpose else (self._B1, self._B2t)
        kf = self._velocity_solve(f, transpose)
        if self._sigma is None:
            return kf
        y = sla.lu_solve(self._sigma, g - right @ kf, trans=1 if transpose else 0, check_finite=False)
        x = kf - self._velocity_solve(left @ y, transpose)
        return np.concatenate([x, y])


def factorize(matrix, backend: str = "auto", layout: BlockLayout | None = None) -> Factorization:
    return Factorization(matrix, backend, layout)


def factorize_and_solve(matrix, rhs, backend: str = "auto", layout: BlockLayout | None = None):
    """Solve ``matrix @ x = rhs``; returns ``(x, factorization)``."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != sp.csr_matrix(matrix).shape[0]:
        raise ValueError("rhs size does not match the matrix")
    fact = Factorization(matrix, backend, layout)
    return fact.solve(rhs), fact


def relative_residual(matrix, x, rhs) -> float:
    r = matrix @ x - rhs
    nb = np.linalg.norm(rhs)
    return float(np.linalg.norm(r) / (nb if nb > 0 else 1.0))


def norm1(matrix) -> float:
    """Exact 1-norm: largest absolute column sum."""
    A = sp.csc_matrix(matrix)
    if A.shape[1] == 0:
        return 0.0
    return float(np.asarray(abs(A).sum(axis=0)).max())


def inverse_norm1_estimate(solve, solve_transpose, n: int, max_sweeps: int = 5) -> float:
    """Hager-Higham lower bound of ``||A^{-1}||_1`` (block size 1, LAPACK xLACON-style).

    Every candidate is ``||A^{-1} v||_1 / ||v||_1`` for some ``v``, so the
    result never exceeds the true norm.
    """
    if n == 0:
        return 0.0
    x = np.full(n, 1.0 / n)
    y = solve(x)
    est = float(np.abs(y).sum())
    if n == 1:
        return est
    xi = np.where(y >= 0, 1.0, -1.0)
    z = solve_transpose(xi)
    j = int(np.argmax(np.abs(z)))
    for _ in range(1, max_sweeps):
        x = np.zeros(n)
        x[j] = 1.0
        y = solve(x)
        est_old = est
        est = float(np.abs(y).sum())
        xi_new = np.where(y >= 0, 1.0, -1.0)
        if np.array_equal(xi_new, xi) or est <= est_old:
            est = max(est, est_old)
            break
        xi = xi_new
        z = solve_transpose(xi)
        j_old = j
        j = int(np.argmax(np.abs(z)))
        if np.abs(z[j]) <= np.abs(z[j_old]) or j == j_old:
            break
    # alternating-sign extra vector
    i = np.arange(n)
    x = (-1.0) ** i * (1.0 + i / (n - 1))
    alt = float(np.abs(solve(x)).sum() / np.abs(x).sum())
    return max(est, alt)


def _refined_solver(matrix, factorization: Factorization, steps: int = 2):
    """Solve with residuals in extended precision.

    The estimate is a norm of computed solutions; plain float64 solves carry
    a relative error near kappa * eps, which could push it above the true
    norm on ill-conditioned systems.
    """
    A = sp.csr_matrix(matrix).astype(np.longdouble)

    def solve(b):
        x = factorization.solve(b)
        bl = np.asarray(b, dtype=np.longdouble)
        for _ in range(steps):
            r = bl - A @ x.astype(np.longdouble)
            x = (x.astype(np.longdouble) + factorization.solve(np.asarray(r, dtype=float))).astype(float)
        return x

    return solve


def estimate_condition_1norm(matrix, factorization: Factorization | None = None, max_sweeps: int = 5) -> ConditionReport:
    if factorization is None:
        factorization = Factorization(matrix)
    n = factorization.n
    a = norm1(matrix)
    inv = inverse_norm1_estimate(
        _refined_solver(matrix, factorization), lambda v: factorization.solve(v, transpose=True), n, max_sweeps
    )
    return ConditionReport(a * inv, a, inv, n)
