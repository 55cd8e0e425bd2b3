"""
Taylor-Hood P2-P1 discretization on triangles.

Every form is assembled through sparse "evaluation operators" that map a
coefficient vector to values or derivatives at all quadrature points of the
mesh. A bilinear form with a pointwise weight then reduces to
``G1.T @ diag(quad_weights * weight) @ G2``, which keeps the assembly
vectorized and makes the discrete identities (mass, curl-curl, cubic term)
hold with the very same quadrature rule on both sides.

Velocity dofs are blocked by component: ``[u1 at all P2 nodes, u2 at all P2
nodes]``. Pressure dofs are the mesh vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh


# -- quadrature -----------------------------------------------------------

@dataclass(frozen=True)
class Quadrature:
    """Barycentric points and weights on the reference triangle (area 1/2)."""

    points: np.ndarray   # (nq, 3) barycentric coordinates
    weights: np.ndarray  # (nq,)
    degree: int


def dunavant5() -> Quadrature:
    """The 7-point rule exact for polynomials of total degree 5."""
    s15 = np.sqrt(15.0)
    a1 = (6.0 - s15) / 21.0
    a2 = (6.0 + s15) / 21.0
    w0 = 9.0 / 80.0
    w1 = (155.0 - s15) / 2400.0
    w2 = (155.0 + s15) / 2400.0
    pts = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [w0]
    for a, w in ((a1, w1), (a2, w2)):
        b = 1.0 - 2.0 * a
        pts += [(b, a, a), (a, b, a), (a, a, b)]
        wts += [w, w, w]
    return Quadrature(np.array(pts), np.array(wts), 5)


# -- reference basis ------------------------------------------------------

# local P2 node order: vertices 0, 1, 2 then midpoints of (0,1), (1,2), (2,0)
_EDGE_LOCAL = ((0, 1), (1, 2), (2, 0))


def p2_values(bary: np.ndarray) -> np.ndarray:
    """P2 basis values at barycentric points, shape (npts, 6)."""
    lam = np.atleast_2d(bary)
    out = np.empty((len(lam), 6))
    for i in range(3):
        out[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
    for k, (i, j) in enumerate(_EDGE_LOCAL):
        out[:, 3 + k] = 4.0 * lam[:, i] * lam[:, j]
    return out


def p2_bary_gradients(bary: np.ndarray) -> np.ndarray:
    """d(phi_a)/d(lambda_i) at barycentric points, shape (npts, 6, 3)."""
    lam = np.atleast_2d(bary)
    out = np.zeros((len(lam), 6, 3))
    for i in range(3):
        out[:, i, i] = 4.0 * lam[:, i] - 1.0
    for k, (i, j) in enumerate(_EDGE_LOCAL):
        out[:, 3 + k, i] = 4.0 * lam[:, j]
        out[:, 3 + k, j] = 4.0 * lam[:, i]
    return out


def barycentric_gradients(mesh: Mesh) -> np.ndarray:
    """Physical gradients of the barycentric coordinates, shape (nt, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    det = 2.0 * mesh.areas
    g = np.empty((mesh.n_triangles, 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        g[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / det
        g[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / det
    return g


# -- dof maps and fields --------------------------------------------------

@dataclass
class DofMap:
    """Degree-of-freedom layout of one space.

    ``element_dofs`` lists the global dofs of each triangle; for the velocity
    space the 12 local dofs are the 6 P2 nodes of component 1 followed by the
    same nodes of component 2.
    """

    kind: str  # "velocity-P2-2comp" | "pressure-P1"
    n_dofs: int
    element_dofs: np.ndarray
    dirichlet_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        d = np.asarray(self.dirichlet_dofs, dtype=np.int64)
        if d.size and (d.min() < 0 or d.max() >= self.n_dofs):
            raise ValueError("Dirichlet dof outside the dof range")
        if len(np.unique(d)) != len(d):
            raise ValueError("duplicate Dirichlet dofs")
        self.dirichlet_dofs = d


@dataclass
class Field:
    """Coefficient vector on a dof map."""

    dofmap: DofMap
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != (self.dofmap.n_dofs,):
            raise ValueError(
                f"expected {self.dofmap.n_dofs} coefficients, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("field has non-finite coefficients")
        self.coefficients = c


class TaylorHoodSpace:
    """P2 velocity / P1 pressure spaces on a mesh with quadrature operators.

    Parameters
    ----------
    mesh : Mesh
    dirichlet_tags : tuple of str
        Boundary tags whose velocity nodes are constrained.
    """

    def __init__(self, mesh: Mesh, dirichlet_tags=("inflow", "wall", "obstacle"),
                 quadrature: Quadrature | None = None):
        self.mesh = mesh
        self.quad = dunavant5() if quadrature is None else quadrature
        nv, nt = mesh.n_vertices, mesh.n_triangles
        self.n_nodes = mesh.n_p2_nodes
        self.elem_nodes = np.hstack([mesh.triangles, nv + mesh.tri_edges])  # (nt, 6)
        self.dirichlet_tags = tuple(dirichlet_tags)
        dnodes = mesh.boundary_nodes(self.dirichlet_tags)
        self.velocity = DofMap(
            "velocity-P2-2comp", 2 * self.n_nodes,
            np.hstack([self.elem_nodes, self.elem_nodes + self.n_nodes]),
            np.concatenate([dnodes, dnodes + self.n_nodes]),
        )
        self.pressure = DofMap("pressure-P1", nv, mesh.triangles.copy())

        nq = len(self.quad.weights)
        self.nq = nq
        self.n_qp = nt * nq
        area = mesh.areas
        self.qweights = (2.0 * area[:, None] * self.quad.weights[None, :]).ravel()
        lam = self.quad.points
        p = mesh.vertices[mesh.triangles]
        self.qpoints = np.einsum("qi,tid->tqd", lam, p).reshape(-1, 2)

        phi = p2_values(lam)                        # (nq, 6)
        dphi_dlam = p2_bary_gradients(lam)          # (nq, 6, 3)
        glam = barycentric_gradients(mesh)          # (nt, 3, 2)
        dphi = np.einsum("qai,tid->tqad", dphi_dlam, glam)  # (nt, nq, 6, 2)
        self._phi_ref = phi
        self._dphi = dphi
        self._curlvec = np.concatenate([-dphi[..., 1], dphi[..., 0]], axis=2)  # (nt, nq, 12)
        self._qw = self.qweights.reshape(nt, nq)

        rows = np.repeat(np.arange(self.n_qp), 6)
        cols = np.repeat(self.elem_nodes, nq, axis=0).ravel()
        shape = (self.n_qp, self.n_nodes)
        self.V2 = _csr(phi[None].repeat(nt, 0).ravel(), rows, cols, shape)
        self.Dx2 = _csr(dphi[..., 0].ravel(), rows, cols, shape)
        self.Dy2 = _csr(dphi[..., 1].ravel(), rows, cols, shape)
        rows1 = np.repeat(np.arange(self.n_qp), 3)
        cols1 = np.repeat(mesh.triangles, nq, axis=0).ravel()
        self.V1 = _csr(np.tile(lam, (nt, 1)).ravel(), rows1, cols1, (self.n_qp, nv))
        # curl u = d(u2)/dx - d(u1)/dy ; div u = d(u1)/dx + d(u2)/dy
        self.Curl = sp.hstack([-self.Dy2, self.Dx2], format="csr")
        self.Div = sp.hstack([self.Dx2, self.Dy2], format="csr")
        self.Val = (sp.hstack([self.V2, sp.csr_matrix(self.V2.shape)], format="csr"),
                    sp.hstack([sp.csr_matrix(self.V2.shape), self.V2], format="csr"))

    # sizes
    @property
    def n_velocity(self) -> int:
        return self.velocity.n_dofs

    @property
    def n_pressure(self) -> int:
        return self.pressure.n_dofs

    @property
    def area(self) -> float:
        return float(self.qweights.sum())

    # interpolation
    def interpolate_velocity(self, func) -> np.ndarray:
        """Nodal P2 interpolant of ``func(x, y) -> (u1, u2)``."""
        nodes = self.mesh.p2_nodes
        u1, u2 = func(nodes[:, 0], nodes[:, 1])
        return np.concatenate([np.broadcast_to(u1, len(nodes)),
                               np.broadcast_to(u2, len(nodes))]).astype(float)

    def interpolate_pressure(self, func) -> np.ndarray:
        v = self.mesh.vertices
        return np.broadcast_to(func(v[:, 0], v[:, 1]), len(v)).astype(float)

    # evaluation at quadrature points
    def velocity_at_qp(self, u: np.ndarray) -> np.ndarray:
        n = self.n_nodes
        return np.column_stack([self.V2 @ u[:n], self.V2 @ u[n:]])

    def velocity_gradient_at_qp(self, u: np.ndarray) -> np.ndarray:
        """(n_qp, 2, 2) array of d(u_i)/d(x_j)."""
        n = self.n_nodes
        g = np.empty((self.n_qp, 2, 2))
        for i, ui in enumerate((u[:n], u[n:])):
            g[:, i, 0] = self.Dx2 @ ui
            g[:, i, 1] = self.Dy2 @ ui
        return g

    def curl_at_qp(self, u: np.ndarray) -> np.ndarray:
        return self.Curl @ u

    def pressure_at_qp(self, p: np.ndarray) -> np.ndarray:
        return self.V1 @ p

    def integrate(self, values: np.ndarray) -> float:
        return float(self.qweights @ values)

    def load_vector(self, fq: np.ndarray) -> np.ndarray:
        """Velocity load ``(f, v)`` for body-force values (n_qp, 2) at quadrature points."""
        wf = self.qweights[:, None] * fq
        return np.concatenate([self.V2.T @ wf[:, 0], self.V2.T @ wf[:, 1]])

    # evaluation anywhere inside one triangle
    def eval_velocity_in_element(self, u: np.ndarray, element: int, xy: np.ndarray):
        """Value and gradient of the velocity interpolant at points of one triangle.

        Returns ``(values (k, 2), grads (k, 2, 2))``.
        """
        xy = np.atleast_2d(xy)
        tri = self.mesh.vertices[self.mesh.triangles[element]]
        T = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
        ref = np.linalg.solve(T, (xy - tri[0]).T).T
        lam = np.column_stack([1.0 - ref.sum(axis=1), ref])
        phi = p2_values(lam)
        glam = barycentric_gradients(self.mesh)[element]
        dphi = np.einsum("kai,id->kad", p2_bary_gradients(lam), glam)
        nodes = self.elem_nodes[element]
        c = np.column_stack([u[nodes], u[nodes + self.n_nodes]])  # (6, 2)
        return phi @ c, np.einsum("kad,ac->kcd", dphi, c)


def _csr(data, rows, cols, shape) -> sp.csr_matrix:
    m = sp.csr_matrix((data, (rows, cols)), shape=shape)
    m.sum_duplicates()
    m.sort_indices()
    return m


def _canonical(m) -> sp.csr_matrix:
    m = sp.csr_matrix(m)
    m.sum_duplicates()
    m.sort_indices()
    return m


def _weighted(G1, w, G2) -> sp.csr_matrix:
    A = G1.T @ sp.diags(w) @ G2
    if G1 is G2:
        # sparse products do not sum in a symmetric order; make it exact
        A = 0.5 * (A + A.T)
    return _canonical(A)


def _blockdiag2(m) -> sp.csr_matrix:
    return _canonical(sp.block_diag([m, m], format="csr"))


# -- operations -----------------------------------------------------------

def curl2d(space: TaylorHoodSpace, u: np.ndarray, element: int, qp: int) -> float:
    """Scalar curl of the P2 velocity at quadrature point ``qp`` of ``element``."""
    d = space._dphi[element, qp]  # (6, 2)
    nodes = space.elem_nodes[element]
    u1, u2 = u[nodes], u[nodes + space.n_nodes]
    return float(d[:, 0] @ u2 - d[:, 1] @ u1)


def assemble_mass(space: TaylorHoodSpace) -> sp.csr_matrix:
    """Velocity mass matrix; ``u @ M @ u`` is the squared L2 norm."""
    return _blockdiag2(_weighted(space.V2, space.qweights, space.V2))


def assemble_stiffness(space: TaylorHoodSpace) -> sp.csr_matrix:
    """Velocity stiffness matrix; ``u @ K @ u = int |grad u|^2``."""
    w = space.qweights
    k = _weighted(space.Dx2, w, space.Dx2) + _weighted(space.Dy2, w, space.Dy2)
    return _blockdiag2(k)


def assemble_weighted_curlcurl(space: TaylorHoodSpace, weight) -> sp.csr_matrix:
    """Matrix of ``(weight * curl u, curl v)``.

    ``weight`` is a scalar or an array with one nonnegative value per
    quadrature point.
    """
    wt = np.broadcast_to(np.asarray(weight, dtype=float), (space.n_qp,))
    if not np.all(np.isfinite(wt)):
        raise ValueError("curl-curl weight must be finite")
    if np.any(wt < 0.0):
        raise ValueError("curl-curl weight must be nonnegative")
    return _weighted(space.Curl, space.qweights * wt, space.Curl)


def assemble_divergence(space: TaylorHoodSpace) -> sp.csr_matrix:
    """``B[r, j] = int r * div(phi_j)``, pressure rows by velocity columns."""
    return _weighted(space.V1, space.qweights, space.Div)


def assemble_pressure_mass_vector(space: TaylorHoodSpace) -> np.ndarray:
    """Integrals of the P1 basis functions."""
    return space.V1.T @ space.qweights


def assemble_convection(space: TaylorHoodSpace, w: np.ndarray) -> sp.csr_matrix:
    """Plain convection matrix ``N[v, u] = int (w . grad u) . v``."""
    wq = space.velocity_at_qp(w)
    adv = space.Dx2.multiply(wq[:, :1]) + space.Dy2.multiply(wq[:, 1:])
    return _blockdiag2(_weighted(space.V2, space.qweights, sp.csr_matrix(adv)))


def assemble_convection_skew(space: TaylorHoodSpace, w: np.ndarray) -> sp.csr_matrix:
    """Skew-symmetric convection ``C(w) = (N(w) - N(w).T) / 2``."""
    n = assemble_convection(space, w)
    return _canonical(0.5 * (n - n.T))


def local_weighted_curlcurl(space: TaylorHoodSpace, weight) -> np.ndarray:
    """Element matrices of ``(weight * curl u, curl v)``, shape (nt, 12, 12)."""
    ww = space._qw * np.broadcast_to(weight, (space.n_qp,)).reshape(space._qw.shape)
    c = space._curlvec
    return np.matmul(c.transpose(0, 2, 1), ww[:, :, None] * c)


def local_convection_skew(space: TaylorHoodSpace, w: np.ndarray) -> np.ndarray:
    """Element matrices of the skew-symmetric convection form, shape (nt, 12, 12)."""
    wq = space.velocity_at_qp(w).reshape(space.mesh.n_triangles, space.nq, 2)
    adv = np.einsum("tqd,tqbd->tqb", wq, space._dphi)
    n = np.einsum("tq,qa,tqb->tab", space._qw, space._phi_ref, adv, optimize=True)
    skew = 0.5 * (n - n.transpose(0, 2, 1))
    out = np.zeros((len(n), 12, 12))
    out[:, :6, :6] = skew
    out[:, 6:, 6:] = skew
    return out


def apply_dirichlet(A, b: np.ndarray, dofs, values) -> tuple[sp.csr_matrix, np.ndarray]:
    """Eliminate Dirichlet dofs symmetrically.

    Constrained rows and columns are replaced by the identity and the known
    values are lifted into the right-hand side, so the solution reproduces
    them exactly and a symmetric system stays symmetric.
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if values.shape != dofs.shape:
        raise ValueError(
            f"{len(dofs)} Dirichlet dofs but {values.size} prescribed values")
    if not np.all(np.isfinite(values)):
        raise ValueError("Dirichlet values must be finite")
    A = sp.csr_matrix(A)
    n = A.shape[0]
    g = np.zeros(n)
    g[dofs] = values
    free = np.ones(n)
    free[dofs] = 0.0
    Pf = sp.diags(free)
    Ac = Pf @ A @ Pf + sp.diags(1.0 - free)
    bc = free * (np.asarray(b, dtype=float) - A @ g) + g
    return _canonical(Ac), bc
