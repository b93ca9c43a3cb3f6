"""Generalized moving least squares: stencils, reconstructions, quadrature rows.

A quadratic (m = 2) polynomial is fit around each point over its horizon
neighborhood with weight (1 - r/delta)^4.  Applying an integral functional
to the reconstruction basis turns integral operators into sparse rows:

    row = D P (P^T D P)^{-1} m,     m_q = functional(psi_q)

with psi the monomial basis centered at the stencil point and scaled by
delta (Gram conditioning independent of h).  The same machinery evaluates
moving-least-squares values/derivatives at off-cloud points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as kern

Q_BASIS = 6  # quadratic basis size in 2D


class UnisolvencyError(RuntimeError):
    pass


def basis_eval(z: np.ndarray) -> np.ndarray:
    """Scaled monomials [1, X, Y, X^2, XY, Y^2] at z (already scaled)."""
    z = np.atleast_2d(z)
    return np.column_stack([
        np.ones(len(z)), z[:, 0], z[:, 1],
        z[:, 0] ** 2, z[:, 0] * z[:, 1], z[:, 1] ** 2,
    ])


def weight_fn(r: np.ndarray, radius: float) -> np.ndarray:
    w = 1.0 - r / radius
    return np.where(r <= radius, w**4, 0.0)


@dataclass
class Stencil:
    center_index: int
    center: np.ndarray
    neighbors: np.ndarray  # global indices, includes the center itself
    scale: float
    weights: np.ndarray
    coef_map: np.ndarray  # (k, Q): D P (P^T D P)^{-1}
    cond: float


def build_stencil(points: np.ndarray, tree, i: int, delta: float,
                  cond_warn: float = 1e8, warn=None) -> Stencil:
    """Assemble the horizon stencil of point i with Gram conditioning check."""
    x = points[i]
    idx = np.asarray(sorted(tree.query_ball_point(x, delta * (1 - 1e-12))), dtype=int)
    if len(idx) < Q_BASIS:
        raise UnisolvencyError(
            f"stencil of point {i} at {tuple(x)} has {len(idx)} < {Q_BASIS} neighbors"
        )
    z = (points[idx] - x) / delta
    r = np.linalg.norm(points[idx] - x, axis=1)
    w = weight_fn(r, delta)
    P = basis_eval(z)
    DP = w[:, None] * P
    G = P.T @ DP
    cond = float(np.linalg.cond(G))
    if not np.isfinite(cond) or cond > 1e14:
        raise UnisolvencyError(f"singular GMLS Gram at point {i} (cond {cond:.2e})")
    if cond > cond_warn and warn is not None:
        warn(f"ill-conditioned GMLS Gram at point {i}: cond {cond:.2e}")
    coef_map = np.linalg.solve(G, DP.T).T  # (k, Q)
    return Stencil(center_index=i, center=x, neighbors=idx, scale=delta,
                   weights=w, coef_map=coef_map, cond=cond)


def reconstruction_coeffs(st: Stencil, values: np.ndarray) -> np.ndarray:
    """Polynomial coefficients (scaled basis at the stencil center)."""
    return st.coef_map.T @ values


def apply_moments(st: Stencil, m: np.ndarray) -> np.ndarray:
    """Sparse-row weights over st.neighbors realizing the functional m."""
    return st.coef_map @ np.asarray(m, dtype=float)


def interior_moments(kernel: kern.KernelSpec) -> np.ndarray:
    """m_q = 2 * ∫_{B(x, delta)} J_delta(|y-x|)(psi_q(y) - psi_q(x)) dy (full ball)."""
    d = kernel.delta
    m = np.zeros(Q_BASIS)
    m[3] = 2.0 / d**2
    m[5] = 2.0 / d**2
    return m


def basis_exterior_moments(kernel: kern.KernelSpec, x, region,
                           rtol: float = 1e-13) -> np.ndarray:
    """2 * ∫_{B \\ Omega} J psi_q(y) dy via the clipped-moment engine."""
    d = kernel.delta
    x = np.asarray(x, float)
    moms = [
        kern.QuadMoment.constant(0.0),  # psi_0 - psi_0(x) == 0
        kern.QuadMoment.linear((1.0 / d, 0.0)),
        kern.QuadMoment.linear((0.0, 1.0 / d)),
        kern.QuadMoment.outer((1.0 / d, 0.0), (1.0 / d, 0.0)),
        kern.QuadMoment.outer((1.0 / d, 0.0), (0.0, 1.0 / d)),
        kern.QuadMoment.outer((0.0, 1.0 / d), (0.0, 1.0 / d)),
    ]
    return 2.0 * kern.exterior_moments(kernel, x, region, moms, rtol=rtol)


def basis_halfplane_moments(kernel: kern.KernelSpec, n, s: float) -> np.ndarray:
    """Closed-form counterpart of basis_exterior_moments for a half-plane cap."""
    d = kernel.delta
    n = np.asarray(n, float)
    p = np.array([n[1], -n[0]])
    i0, i1, i2n, i2p = kern.halfplane_frame_integrals(d, s)
    m = np.zeros(Q_BASIS)
    m[1] = n[0] * i1 / d
    m[2] = n[1] * i1 / d
    m[3] = (n[0] ** 2 * i2n + p[0] ** 2 * i2p) / d**2
    m[4] = (n[0] * n[1] * i2n + p[0] * p[1] * i2p) / d**2
    m[5] = (n[1] ** 2 * i2n + p[1] ** 2 * i2p) / d**2
    return 2.0 * m


def quadrature_row_interior(st: Stencil, kernel: kern.KernelSpec,
                            ext_moments: np.ndarray | None = None) -> np.ndarray:
    """Row approximating 2∫_{B ∩ Omega} J (u(y) - u(x_i)) dy.

    ``ext_moments`` (from basis_exterior_moments) clips the ball to the
    domain; omit it for interior points whose ball does not exit.
    """
    m = interior_moments(kernel)
    if ext_moments is not None:
        m = m - ext_moments
    return apply_moments(st, m)


def contour_moments(st: Stencil, ckernel: kern.ContourKernelSpec,
                    contour_fn, horizon: float, n_half: int = 16) -> np.ndarray:
    """m_q = 2 ∫_{-d}^{d} H_d(|l|)(psi_q(x_l) - psi_q(x_i)) dl along a contour."""
    l, wh = ckernel.gauss_nodes(horizon, n_half)
    pts = np.array([contour_fn(li) for li in l])
    z = (pts - st.center) / st.scale
    psi = basis_eval(z)
    psi0 = np.zeros(Q_BASIS)
    psi0[0] = 1.0
    return 2.0 * ((psi - psi0).T @ wh)


def quadrature_row_contour(st: Stencil, ckernel: kern.ContourKernelSpec,
                           contour_fn, horizon: float) -> np.ndarray:
    """Row approximating 2 ∫ H(|l|)(u(x_l) - u(x_i)) dl ~ [u]_pp."""
    return apply_moments(st, contour_moments(st, ckernel, contour_fn, horizon))


# ---------------------------------------------------------------------------
# Moving least squares evaluation at arbitrary points
# ---------------------------------------------------------------------------


def mls_rows(points: np.ndarray, neighbor_idx: np.ndarray, x, radius: float,
             want=("val",)) -> dict:
    """MLS rows at x over the given neighbor set (quadratic basis).

    Returns rows keyed by "val", "dx", "dy", "dxx", "dxy", "dyy"; each row w
    satisfies w @ u(neighbors) ~ the corresponding derivative of u at x,
    exactly for quadratics.
    """
    x = np.asarray(x, float)
    neighbor_idx = np.asarray(neighbor_idx, dtype=int)
    if len(neighbor_idx) < Q_BASIS:
        raise UnisolvencyError(
            f"MLS at {tuple(x)}: only {len(neighbor_idx)} points in radius {radius}"
        )
    pts = points[neighbor_idx]
    z = (pts - x) / radius
    r = np.linalg.norm(pts - x, axis=1)
    w = weight_fn(r, radius)
    if np.all(w <= 0):
        raise UnisolvencyError(f"MLS at {tuple(x)}: all weights vanish")
    P = basis_eval(z)
    DP = w[:, None] * P
    G = P.T @ DP
    try:
        coef_map = np.linalg.solve(G, DP.T)  # (Q, k)
    except np.linalg.LinAlgError as exc:
        raise UnisolvencyError(f"MLS Gram singular at {tuple(x)}") from exc
    rows = {}
    s = radius
    for key in want:
        if key == "val":
            rows[key] = coef_map[0]
        elif key == "dx":
            rows[key] = coef_map[1] / s
        elif key == "dy":
            rows[key] = coef_map[2] / s
        elif key == "dxx":
            rows[key] = 2.0 * coef_map[3] / s**2
        elif key == "dxy":
            rows[key] = coef_map[4] / s**2
        elif key == "dyy":
            rows[key] = 2.0 * coef_map[5] / s**2
        else:
            raise ValueError(f"unknown MLS row {key!r}")
    return rows


def mls_evaluate(points: np.ndarray, values: np.ndarray, tree, x,
                 radius: float, with_gradient: bool = False):
    """MLS value (and optional gradient) of scattered data at x."""
    idx = np.asarray(tree.query_ball_point(np.asarray(x, float), radius), dtype=int)
    want = ("val", "dx", "dy") if with_gradient else ("val",)
    rows = mls_rows(points, idx, x, radius, want)
    val = float(rows["val"] @ values[idx])
    if not with_gradient:
        return val
    grad = np.array([rows["dx"] @ values[idx], rows["dy"] @ values[idx]])
    return val, grad
