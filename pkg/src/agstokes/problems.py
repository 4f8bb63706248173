"""Problem data: body force, boundary data and (optionally) the exact solution.

Box faces are numbered ``2 * axis + side`` (-x, +x, -y, +y[, -z, +z]). A face is
either ``"neumann"`` (prescribed traction ``grad(u) n - p n``) or
``"dirichlet"`` (velocity imposed weakly with Nitsche's method). The unfitted
boundary is always Dirichlet.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Field = Callable[[np.ndarray], np.ndarray]


@dataclass
class StokesProblem:
    dim: int
    f: Field
    g: Field  # Dirichlet velocity on the unfitted boundary
    face_types: dict = field(default_factory=dict)  # face -> "neumann" | "dirichlet"; default neumann
    traction: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    face_velocity: Optional[Field] = None  # Dirichlet data on box faces, defaults to g
    u: Optional[Field] = None
    grad_u: Optional[Field] = None  # (n, d, d) [component, derivative]
    p: Optional[Field] = None
    grad_p: Optional[Field] = None
    name: str = "custom"

    def face_type(self, face: int) -> str:
        t = self.face_types.get(face, "neumann")
        if t not in ("neumann", "dirichlet"):
            raise ValueError(f"face type must be neumann or dirichlet, got {t!r}")
        return t

    @property
    def pure_dirichlet(self) -> bool:
        return all(self.face_type(f) == "dirichlet" for f in range(2 * self.dim))

    def neumann_data(self, x, n):
        if self.traction is not None:
            return self.traction(x, n)
        if self.grad_u is None or self.p is None:
            return np.zeros_like(x)
        return np.einsum("qij,qj->qi", self.grad_u(x), n) - self.p(x)[:, None] * n

    def dirichlet_face_data(self, x):
        return (self.face_velocity or self.g)(x)

    @property
    def has_exact(self) -> bool:
        return self.u is not None and self.grad_u is not None and self.p is not None


def _from_exact(dim, u, grad_u, lap_u, p, grad_p, name, **kw) -> StokesProblem:
    def f(x):
        return -lap_u(x) + grad_p(x)

    return StokesProblem(dim=dim, f=f, g=u, u=u, grad_u=grad_u, p=p, grad_p=grad_p, name=name, **kw)


def _rotation_data(dim):
    if dim == 2:
        M = np.array([[0.0, -1.0], [1.0, 0.0]])
        c = np.array([0.5, 0.3])
    elif dim == 3:
        M = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
        c = np.array([-0.5, -0.3, -0.5])
    else:
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    return M, c


def manufactured_solution(dim: int = 2) -> StokesProblem:
    """Unit-speed rotating flow ``u = w / |w|`` with ``w = M x + c`` (M skew) and ``p = x^3 y^3``."""
    M, c = _rotation_data(dim)
    M2 = M @ M
    trM2 = np.trace(M2)

    def _w(x):
        w = x @ M.T + c
        return w, np.linalg.norm(w, axis=1)

    def u(x):
        w, s = _w(x)
        return w / s[:, None]

    def grad_u(x):
        w, s = _w(x)
        a = w @ M  # M^T w
        return M[None] / s[:, None, None] - w[:, :, None] * a[:, None, :] / s[:, None, None] ** 3

    def lap_u(x):
        w, s = _w(x)
        a2 = np.sum((w @ M) ** 2, axis=1)
        return w * (trM2 / s**3 + 3 * a2 / s**5)[:, None] + 2 * (w @ M2.T) / s[:, None] ** 3

    def p(x):
        return x[:, 0] ** 3 * x[:, 1] ** 3

    def grad_p(x):
        g = np.zeros_like(x)
        g[:, 0] = 3 * x[:, 0] ** 2 * x[:, 1] ** 3
        g[:, 1] = 3 * x[:, 0] ** 3 * x[:, 1] ** 2
        return g

    prob = _from_exact(dim, u, grad_u, lap_u, p, grad_p, f"manufactured{dim}d")
    prob.lap_u = lap_u
    return prob


def patch_solution(dim: int = 2) -> StokesProblem:
    """Solution inside the discrete space: ``u = (y, x)`` (2D) or ``(y, z, x)`` (3D), ``p = 2x - 1``."""
    perm = [1, 0] if dim == 2 else [1, 2, 0]
    G = np.zeros((dim, dim))
    G[np.arange(dim), perm] = 1.0

    def u(x):
        return x[:, perm].copy()

    def grad_u(x):
        return np.broadcast_to(G, (len(x), dim, dim)).copy()

    def lap_u(x):
        return np.zeros_like(x)

    def p(x):
        return 2 * x[:, 0] - 1

    def grad_p(x):
        g = np.zeros_like(x)
        g[:, 0] = 2.0
        return g

    return _from_exact(dim, u, grad_u, lap_u, p, grad_p, f"patch{dim}d")


def poiseuille_channel(height: float = 0.7, u_max: float = 1.0) -> StokesProblem:
    """2D channel ``0 < y < height``: parabolic inflow at x=0, no-slip at y=0 and the cut wall, free outflow at x=1.

    The exact solution is quadratic/linear and therefore lies in the Q2/P1 space.
    """
    a = height
    G = 8 * u_max / a**2

    def u(x):
        out = np.zeros_like(x)
        out[:, 0] = 4 * u_max * x[:, 1] * (a - x[:, 1]) / a**2
        return out

    def grad_u(x):
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 1] = 4 * u_max * (a - 2 * x[:, 1]) / a**2
        return out

    def p(x):
        return G * (1 - x[:, 0])

    def grad_p(x):
        g = np.zeros_like(x)
        g[:, 0] = -G
        return g

    def f(x):
        return np.zeros_like(x)

    def traction(x, n):
        return np.zeros_like(x)

    return StokesProblem(
        dim=2,
        f=f,
        g=u,
        face_types={0: "dirichlet", 1: "neumann", 2: "dirichlet", 3: "dirichlet"},
        traction=traction,
        u=u,
        grad_u=grad_u,
        p=p,
        grad_p=grad_p,
        name="poiseuille",
    )


def lid_driven(dim: int = 2, lid_speed: float = 1.0) -> StokesProblem:
    """All box faces Dirichlet: tangential velocity on the top face (+y), no-slip elsewhere."""

    def g(x):
        return np.zeros_like(x)

    def face_velocity(x):
        out = np.zeros_like(x)
        out[np.isclose(x[:, 1], 1.0), 0] = lid_speed
        return out

    return StokesProblem(
        dim=dim,
        f=lambda x: np.zeros_like(x),
        g=g,
        face_types={f: "dirichlet" for f in range(2 * dim)},
        face_velocity=face_velocity,
        name="lid_driven",
    )
