"""Linear-triangle FEM for the local heat equation with backward Euler stepping.

Consistent mass, element-wise exact stiffness, Dirichlet conditions by row
replacement (the interface rows stay identity rows so the coupled one-step
block structure is preserved).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .geometry import TAG_DIRICHLET, TAG_INTERFACE, TriMesh
from .linalg import sparse_factor


class FemError(RuntimeError):
    pass


@dataclass
class FemSystem:
    mesh: TriMesh
    alpha: float
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    interface_nodes: np.ndarray
    dirichlet_nodes: np.ndarray

    @property
    def n(self) -> int:
        return self.mesh.n_nodes

    @property
    def constrained(self) -> np.ndarray:
        return np.concatenate([self.interface_nodes, self.dirichlet_nodes])


def element_matrices(p: np.ndarray, alpha: float):
    """Stiffness and mass of one linear triangle with vertex coords p (3, 2)."""
    b = np.array([p[1, 1] - p[2, 1], p[2, 1] - p[0, 1], p[0, 1] - p[1, 1]])
    c = np.array([p[2, 0] - p[1, 0], p[0, 0] - p[2, 0], p[1, 0] - p[0, 0]])
    area = 0.5 * (
        (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
    )
    if area <= 0:
        raise FemError("degenerate or misoriented element")
    ke = alpha * (np.outer(b, b) + np.outer(c, c)) / (4.0 * area)
    me = area / 12.0 * (np.ones((3, 3)) + np.eye(3))
    return ke, me


def assemble_fem(mesh: TriMesh, alpha: float) -> FemSystem:
    """Vectorized global assembly of consistent mass and stiffness."""
    p = mesh.nodes[mesh.tris]  # (Ne, 3, 2)
    b = np.stack([p[:, 1, 1] - p[:, 2, 1], p[:, 2, 1] - p[:, 0, 1], p[:, 0, 1] - p[:, 1, 1]], axis=1)
    c = np.stack([p[:, 2, 0] - p[:, 1, 0], p[:, 0, 0] - p[:, 2, 0], p[:, 1, 0] - p[:, 0, 0]], axis=1)
    area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    if np.any(area <= 0):
        k = int(np.argmin(area))
        raise FemError(f"degenerate element {k} with area {area[k]:.3e}")
    ke = alpha * (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4.0 * area)[:, None, None]
    me = (np.ones((3, 3)) + np.eye(3))[None, :, :] * (area / 12.0)[:, None, None]
    rows = np.repeat(mesh.tris, 3, axis=1).ravel()
    cols = np.tile(mesh.tris, (1, 3)).ravel()
    n = mesh.n_nodes
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    M = sp.coo_matrix((me.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    M.sum_duplicates()
    return FemSystem(
        mesh=mesh, alpha=alpha, mass=M, stiffness=K,
        interface_nodes=np.where(mesh.node_tags == TAG_INTERFACE)[0],
        dirichlet_nodes=np.where(mesh.node_tags == TAG_DIRICHLET)[0],
    )


def load_vector(mesh: TriMesh, f, t: float) -> np.ndarray:
    """∫ f psi_i via the 3-edge-midpoint rule (exact for quadratic f)."""
    p = mesh.nodes[mesh.tris]
    area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    mids = 0.5 * (p + np.roll(p, -1, axis=1))  # midpoint of edge (i, i+1)
    fm = f(mids[:, :, 0], mids[:, :, 1], t)  # (Ne, 3)
    # psi_i is 1/2 on the two adjacent edge midpoints, 0 on the opposite one
    contrib = (area / 3.0)[:, None] * 0.5 * (fm + np.roll(fm, 1, axis=1))
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.tris.ravel(), contrib.ravel())
    return out


def step_matrix(system: FemSystem, dt: float) -> sp.csr_matrix:
    """Backward-Euler matrix with constrained rows replaced by identity."""
    n = system.n
    K = (system.mass / dt + system.stiffness).tolil()
    for i in system.constrained:
        K.rows[i] = [int(i)]
        K.data[i] = [1.0]
    return K.tocsr()


class FemStepper:
    """Prefactored backward-Euler stepper."""

    def __init__(self, system: FemSystem, dt: float):
        self.system = system
        self.dt = dt
        self.matrix = step_matrix(system, dt)
        self.lu = sparse_factor(self.matrix)

    def rhs(self, u_prev: np.ndarray, load: np.ndarray,
            interface_values: np.ndarray, dirichlet_values: np.ndarray) -> np.ndarray:
        r = self.system.mass @ u_prev / self.dt + load
        r[self.system.interface_nodes] = interface_values
        r[self.system.dirichlet_nodes] = dirichlet_values
        return r

    def step(self, u_prev, load, interface_values, dirichlet_values) -> np.ndarray:
        return self.lu.solve(self.rhs(u_prev, load, interface_values, dirichlet_values))


def fem_step(system: FemSystem, u_prev: np.ndarray, f, dirichlet_fn, dt: float,
             t_next: float, interface_fn=None) -> np.ndarray:
    """One backward-Euler step with callable data (standalone-solver surface)."""
    stepper = FemStepper(system, dt)
    load = load_vector(system.mesh, f, t_next)
    xd = system.mesh.nodes[system.dirichlet_nodes]
    dvals = dirichlet_fn(xd[:, 0], xd[:, 1], t_next)
    if interface_fn is None:
        interface_fn = dirichlet_fn
    xi = system.mesh.nodes[system.interface_nodes]
    ivals = interface_fn(xi[:, 0], xi[:, 1], t_next) if len(xi) else np.zeros(0)
    return stepper.step(u_prev, load, ivals, np.asarray(dvals, float))


class MeshLocator:
    """Deterministic point location: nearest centroids first, full scan fallback."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.centroids = mesh.nodes[mesh.tris].mean(axis=1)
        self.tree = cKDTree(self.centroids)

    def locate(self, x) -> tuple[int, np.ndarray]:
        x = np.asarray(x, float)
        k = min(16, len(self.centroids))
        dist, cand = self.tree.query(x, k=k)
        cand = np.atleast_1d(cand)
        dist = np.atleast_1d(dist)
        # deterministic tie-break for points on shared edges
        order = sorted(range(len(cand)), key=lambda i: (round(float(dist[i]), 12), int(cand[i])))
        for oi in order:
            ti = int(cand[oi])
            lam = self._bary(ti, x)
            if lam.min() >= -1e-10:
                return ti, lam
        for ti in range(len(self.mesh.tris)):
            lam = self._bary(ti, x)
            if lam.min() >= -1e-10:
                return ti, lam
        raise FemError(f"point {tuple(x)} outside the mesh")

    def _bary(self, ti: int, x) -> np.ndarray:
        p = self.mesh.nodes[self.mesh.tris[ti]]
        T = np.column_stack([p[1] - p[0], p[2] - p[0]])
        ab = np.linalg.solve(T, x - p[0])
        return np.array([1.0 - ab[0] - ab[1], ab[0], ab[1]])


def evaluate_local(mesh: TriMesh, values: np.ndarray, x, locator: MeshLocator | None = None):
    """Barycentric value and element-wise constant gradient at x."""
    loc = locator or MeshLocator(mesh)
    ti, lam = loc.locate(x)
    tri = mesh.tris[ti]
    val = float(lam @ values[tri])
    p = mesh.nodes[tri]
    T = np.column_stack([p[1] - p[0], p[2] - p[0]])
    Tinv = np.linalg.inv(T)
    g1, g2 = Tinv[0], Tinv[1]  # gradients of the barycentric coordinates
    grads = np.vstack([-(g1 + g2), g1, g2])
    return val, values[tri] @ grads
