"""Interface transfer operators between the local mesh and the nonlocal cloud.

Four maps tie the two solvers together:

  G_n, G_t   one-sided quadratic MLS over local nodal values giving the
             normal derivative / trace at a collar projection point; the
             Robin datum passed to the nonlocal solver is (G_n + beta G_t) U_l
  Sigma_1    the alpha V_delta scaling plus xbar evaluation on collar rows
             (lives inside the assembled nonlocal system's trace block)
  Sigma_2    quadratic MLS over collar nonlocal values giving Dirichlet
             values at the local interface nodes

The full Robin loading of the nonlocal right-hand side (including the
corner-row source terms) is assembled as matrices R0 + beta R1 + beta^2 R2
acting on the complete local nodal vector, so amplification analysis and
time stepping share one operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import gmls
from .fem import MeshLocator
from .geometry import TriMesh
from .nonlocal_heat import NonlocalSystem

# How the Robin datum is read off the finite element solution: "element"
# uses the containing element's nodal interpolation and its constant
# gradient (first-order accurate normal derivative, the behavior the
# coupled experiments reproduce); "mls" uses one-sided quadratic moving
# least squares over nearby nodes (reproduces quadratics exactly).
ROBIN_EXTRACTION = "element"


@dataclass
class TransferOperators:
    g_n: sp.csr_matrix  # (n_collar_rows, n_local)
    g_t: sp.csr_matrix
    sigma2: sp.csr_matrix  # (n_local, n_nonlocal), rows only at interface nodes
    r0: sp.csr_matrix  # Robin loading: rhs_nl = (r0 + b r1 + b^2 r2) @ U_l
    r1: sp.csr_matrix
    r2: sp.csr_matrix
    collar_order: np.ndarray  # nonlocal row index per G row
    radius: float
    sigma2_grown: int = 0


def _local_rows(nodes, tree, x, radius, want):
    idx = np.asarray(tree.query_ball_point(np.asarray(x, float), radius), dtype=int)
    return idx, gmls.mls_rows(nodes, idx, x, radius, want)


def _element_rows(mesh, locator, x, want):
    """Interpolation/derivative rows from the element containing x."""
    ti, lam = locator.locate(x)
    tri = mesh.tris[ti]
    p = mesh.nodes[tri]
    T = np.column_stack([p[1] - p[0], p[2] - p[0]])
    Tinv = np.linalg.inv(T)
    g1, g2 = Tinv[0], Tinv[1]
    grads = np.vstack([-(g1 + g2), g1, g2])  # (3, 2) barycentric gradients
    rows = {}
    for key in want:
        if key == "val":
            rows[key] = lam
        elif key == "dx":
            rows[key] = grads[:, 0]
        elif key == "dy":
            rows[key] = grads[:, 1]
        elif key in ("dxx", "dxy", "dyy"):
            rows[key] = np.zeros(3)  # piecewise-linear: no curvature
        else:
            raise ValueError(f"unknown element row {key!r}")
    return tri, rows


def build_robin_extraction(mesh: TriMesh, nlsys: NonlocalSystem, radius: float | None = None,
                           h_local: float | None = None, extraction: str = "mls"):
    """(G_n, G_t) rows at every regular-collar projection point.

    Defaults to the quadratic MLS extraction, which reproduces the normal
    derivative and trace of quadratics sampled on local nodes.
    """
    ops = build_transfer(mesh, nlsys, radius=radius, h_local=h_local,
                         extraction=extraction)
    return ops.g_n, ops.g_t


def build_dirichlet_trace(nlsys: NonlocalSystem, mesh: TriMesh) -> sp.csr_matrix:
    """Sigma_2: MLS (quadratic basis, support delta) over collar values."""
    return build_transfer(mesh, nlsys).sigma2


def build_sigma1(nlsys: NonlocalSystem) -> sp.csr_matrix:
    """The assembled Robin trace block (alpha V-scaled xbar evaluations)."""
    return nlsys.s1


def build_transfer(mesh: TriMesh, nlsys: NonlocalSystem, radius: float | None = None,
                   h_local: float | None = None,
                   extraction: str | None = None) -> TransferOperators:
    cloud = nlsys.cloud
    delta = cloud.delta
    if h_local is None:
        h_local = cloud.h
    if radius is None:
        radius = max(delta, 3.0 * h_local)
    if extraction is None:
        extraction = ROBIN_EXTRACTION
    nodes = mesh.nodes
    tree = cKDTree(nodes)
    locator = MeshLocator(mesh) if extraction == "element" else None
    n_local = mesh.n_nodes
    n_nl = nlsys.n
    a = nlsys.alpha

    def extract(x, want):
        if extraction == "element":
            return _element_rows(mesh, locator, x, want)
        return _local_rows(nodes, tree, x, radius, want)

    rows_gn, rows_gt = [], []
    r0_r, r0_c, r0_v = [], [], []
    r1_r, r1_c, r1_v = [], [], []
    r2_r, r2_c, r2_v = [], [], []
    order = []

    def acc(lists, i, idx, vals):
        lists[0].append(np.full(len(idx), i))
        lists[1].append(idx)
        lists[2].append(vals)

    for k, cr in enumerate(nlsys.collar_rows):
        idx, rows = extract(cr.xbar, ("val", "dx", "dy"))
        gn = cr.normal[0] * rows["dx"] + cr.normal[1] * rows["dy"]
        gt = rows["val"]
        rows_gn.append((k, idx, gn))
        rows_gt.append((k, idx, gt))
        order.append(cr.index)
        acc((r0_r, r0_c, r0_v), cr.index, idx, a * cr.v * gn)
        acc((r1_r, r1_c, r1_v), cr.index, idx, a * cr.v * gt)

    for cr in nlsys.corner_rows:
        st_t, ct_t = np.sin(cr.theta), np.cos(cr.theta)
        idx1, rows1 = extract(cr.xbar1, ("val", "dx", "dy", "dxx", "dxy", "dyy"))
        idx2, rows2 = extract(cr.xbar2, ("val", "dx", "dy", "dxx", "dxy", "dyy"))

        def dn(rows, n):
            return n[0] * rows["dx"] + n[1] * rows["dy"]

        def dp(rows, p):
            return p[0] * rows["dx"] + p[1] * rows["dy"]

        def phn(rows, p, n):
            # p^T H n of the MLS quadratic
            return (
                p[0] * n[0] * rows["dxx"]
                + (p[0] * n[1] + p[1] * n[0]) * rows["dxy"]
                + p[1] * n[1] * rows["dyy"]
            )

        gn1, gt1 = dn(rows1, cr.n1), rows1["val"]
        gn2, gt2 = dn(rows2, cr.n2), rows2["val"]
        # data terms 2 alpha (Jd1 g1 + Jd2 g2) with g = du/dn + beta u
        acc((r0_r, r0_c, r0_v), cr.index, idx1, 2.0 * a * cr.jd1 * gn1)
        acc((r0_r, r0_c, r0_v), cr.index, idx2, 2.0 * a * cr.jd2 * gn2)
        acc((r1_r, r1_c, r1_v), cr.index, idx1, 2.0 * a * cr.jd1 * gt1)
        acc((r1_r, r1_c, r1_v), cr.index, idx2, 2.0 * a * cr.jd2 * gt2)
        # mixed-derivative source gp_coef (dg1/dp1 - dg2/dp2)
        acc((r0_r, r0_c, r0_v), cr.index, idx1, cr.gp_coef * phn(rows1, cr.p1, cr.n1))
        acc((r0_r, r0_c, r0_v), cr.index, idx2, -cr.gp_coef * phn(rows2, cr.p2, cr.n2))
        acc((r1_r, r1_c, r1_v), cr.index, idx1, cr.gp_coef * dp(rows1, cr.p1))
        acc((r1_r, r1_c, r1_v), cr.index, idx2, -cr.gp_coef * dp(rows2, cr.p2))
        if cr.gb_coef != 0.0:
            c = -cr.gb_coef * (ct_t / st_t + 1.0 / st_t)
            acc((r1_r, r1_c, r1_v), cr.index, idx1, c * gn1)
            acc((r1_r, r1_c, r1_v), cr.index, idx2, c * gn2)
            acc((r2_r, r2_c, r2_v), cr.index, idx1, c * gt1)
            acc((r2_r, r2_c, r2_v), cr.index, idx2, c * gt2)

    # Sigma_2 rows: collar MLS at every local interface node
    collar_idx = cloud.indices(1)
    collar_tree = cKDTree(cloud.points[collar_idx])
    s2_r, s2_c, s2_v = [], [], []
    grown = 0
    for j in mesh.interface_nodes():
        xj = nodes[j]
        sel = collar_tree.query_ball_point(xj, delta)
        rad = delta
        if len(sel) < gmls.Q_BASIS:
            sel = collar_tree.query_ball_point(xj, 1.5 * delta)
            rad = 1.5 * delta
            grown += 1
            if len(sel) < gmls.Q_BASIS:
                raise gmls.UnisolvencyError(
                    f"interface node {j} at {tuple(xj)} has {len(sel)} collar points"
                )
        gidx = collar_idx[np.asarray(sel, dtype=int)]
        rows = gmls.mls_rows(cloud.points, gidx, xj, rad, ("val",))
        acc((s2_r, s2_c, s2_v), j, gidx, rows["val"])

    def to_csr(trip, shape):
        r, c, v = trip
        if not r:
            return sp.csr_matrix(shape)
        return sp.coo_matrix(
            (np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=shape
        ).tocsr()

    n_rows = len(nlsys.collar_rows)
    gn_m = sp.lil_matrix((n_rows, n_local))
    gt_m = sp.lil_matrix((n_rows, n_local))
    for k, idx, vals in rows_gn:
        gn_m[k, idx] = vals
    for k, idx, vals in rows_gt:
        gt_m[k, idx] = vals

    return TransferOperators(
        g_n=gn_m.tocsr(), g_t=gt_m.tocsr(),
        sigma2=to_csr((s2_r, s2_c, s2_v), (n_local, n_nl)),
        r0=to_csr((r0_r, r0_c, r0_v), (n_nl, n_local)),
        r1=to_csr((r1_r, r1_c, r1_v), (n_nl, n_local)),
        r2=to_csr((r2_r, r2_c, r2_v), (n_nl, n_local)),
        collar_order=np.asarray(order, dtype=int),
        radius=radius, sigma2_grown=grown,
    )


def robin_loading(ops: TransferOperators, beta: float) -> sp.csr_matrix:
    return (ops.r0 + beta * ops.r1 + beta * beta * ops.r2).tocsr()
