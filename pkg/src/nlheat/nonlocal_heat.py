"""Nonlocal heat subproblem: assembly and backward-Euler stepping.

Row types over the point cloud:

  interior      du/dt - alpha * 2∫_B J (u(y) - u(x)) dy = f
  collar        Q du/dt - alpha [2∫_{B∩Omega} J (u(y)-u(x)) dy
                            + 2 M ∫ H (u(x_l)-u(x)) dl]
                            + alpha beta V u(xbar) = Q f + alpha V g(xbar)
  corner        the two-segment variant with coefficients D1, D2, Q^c and
                boundary evaluations at the two per-segment projections
  Dirichlet     identity row (volume constraint / pinned point)

The correction coefficients are moments of the kernel over the part of the
horizon ball outside the domain; u(xbar) is realized as a quadratic MLS row
over collar values, which keeps the one-step block structure of the coupled
scheme intact.  Everything beta-dependent is kept in a separate trace block
S1 so systems at many Robin coefficients share one assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import gmls
from . import kernels as kern
from .geometry import COLLAR_INTERFACE, INTERIOR, ConstrainedRegion, PointCloud
from .linalg import sparse_factor

# corner-row constants: the contour coefficient multiplying
# alpha (D_a - D_b) [u]_pp, and the handling of the beta-weighted part of the
# mixed-derivative source:
#   "trace"    beta d u/d p at the two projections enters the system matrix
#              through MLS gradient rows (exactly beta-linear, reproduces
#              quadratics)
#   "derived"  transported to boundary data, full G_p coefficient
#   "display"  transported to boundary data with the extra cot(theta) factor
CORNER_CONTOUR_FACTOR = 1.0
CORNER_BETA_MODE = "trace"


@dataclass
class CollarRow:
    index: int
    q: float
    v: float
    m: float
    s: float
    kappa: float
    xbar: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    trace_idx: np.ndarray
    trace_row: np.ndarray
    trace_grown: bool = False


@dataclass
class CornerRow:
    index: int
    qc: float
    d1: float
    d2: float
    jd1: float  # ∫_ext J d1 dy
    jd2: float
    jd1d2: float
    theta: float
    xbar1: np.ndarray
    xbar2: np.ndarray
    n1: np.ndarray
    p1: np.ndarray
    n2: np.ndarray
    p2: np.ndarray
    gp_coef: float  # multiplies dg1/dp1 - dg2/dp2
    gb_coef: float  # multiplies -beta (cot + 1/sin)(g1 + g2)
    trace1_idx: np.ndarray
    trace1_row: np.ndarray
    trace2_idx: np.ndarray
    trace2_row: np.ndarray


@dataclass
class CollarCoefficients:
    q: float
    v: float
    m: float


@dataclass
class NonlocalSystem:
    cloud: PointCloud
    kernel: kern.KernelSpec
    ckernel: kern.ContourKernelSpec
    alpha: float
    beta: float
    mass: np.ndarray  # (N,) lumped diagonal: 1 / Q / Q^c
    a0: sp.csr_matrix  # beta-independent stiffness
    s1: sp.csr_matrix  # Robin trace block (multiplied by beta)
    dirichlet: np.ndarray
    collar_rows: list = field(default_factory=list)
    corner_rows: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.cloud.n

    def matrix(self, dt: float, beta: float | None = None) -> sp.csr_matrix:
        """Backward-Euler matrix mass/dt + A0 + beta*S1 with identity Dirichlet rows."""
        b = self.beta if beta is None else beta
        n = self.n
        K = sp.diags(self.mass / dt) + self.a0 + b * self.s1
        K = K.tolil()
        for i in self.dirichlet:
            K.rows[i] = [int(i)]
            K.data[i] = [1.0]
        return K.tocsr()

    def with_beta(self, beta: float) -> "NonlocalSystem":
        out = NonlocalSystem(**{**self.__dict__, "beta": beta})
        return out


# ---------------------------------------------------------------------------
# Collar coefficients
# ---------------------------------------------------------------------------


def frame_channel_moments(kernel, x, domain, n, p, rtol=3e-14):
    """Exterior moments (I0, In, Ip, Inn, Ipp, Inp) in the projection frame."""
    d = kernel.delta
    n = np.asarray(n, float)
    p = np.asarray(p, float)
    moms = [
        kern.QuadMoment.constant(d * d),
        kern.QuadMoment.linear(d * n),
        kern.QuadMoment.linear(d * p),
        kern.QuadMoment.outer(n, n),
        kern.QuadMoment.outer(p, p),
        kern.QuadMoment.outer(n, p),
    ]
    raw = kern.exterior_moments(kernel, x, domain, moms, rtol=rtol)
    return np.array([raw[0] / d**2, raw[1] / d, raw[2] / d, raw[3], raw[4], raw[5]])


def _flat_frame_channels(kernel, s, n):
    i0, i1, i2n, i2p = kern.halfplane_frame_integrals(kernel.delta, s)
    return np.array([i0, i1, 0.0, i2n, i2p, 0.0])


def collar_from_channels(ch, s, kappa) -> CollarCoefficients:
    """Q, V, M from frame-channel exterior moments."""
    i0, i_n, i_p, i_nn, i_pp, i_np = ch
    q = 1.0 - (i_nn - 2.0 * s * i_n)
    m = i_pp - i_nn + 2.0 * s * i_n
    v = 2.0 * i_n - m * kappa
    return CollarCoefficients(q=float(q), v=float(v), m=float(m))


def exterior_region(domain, delta):
    """True-exterior description: the domain complement minus its Dirichlet collar."""
    if domain.dirichlet_pieces:
        return ConstrainedRegion(domain, delta)
    return domain


def _fast_cap(domain, region, x, delta):
    """Half-plane cap data when the true exterior in B(x, delta) is exactly one cap."""
    cap = domain.flat_cap(x, delta)
    if cap is None:
        return None
    if isinstance(region, ConstrainedRegion):
        for c in region._endpoints:
            if np.linalg.norm(np.asarray(x) - c) < 2.0 * delta + 1e-12:
                return None
    return cap


def compute_collar_coefficients(proj, kernel, domain, rtol=3e-14) -> CollarCoefficients:
    """Q, V, M for a collar point from its interface projection."""
    region = exterior_region(domain, kernel.delta)
    cap = _fast_cap(domain, region, proj.x, kernel.delta)
    if cap is not None and kernel.family == "J1_constant":
        ch = _flat_frame_channels(kernel, cap[0], cap[1])
    else:
        ch = frame_channel_moments(kernel, proj.x, region, proj.normal, proj.tangent, rtol)
    return collar_from_channels(ch, proj.s, proj.kappa)


def _basis_from_channels(kernel, ch, n, p):
    """Exterior basis moments 2∫ J psi_q dy from frame channels (q >= 1)."""
    d = kernel.delta
    i0, i_n, i_p, i_nn, i_pp, i_np = ch
    ex = np.array([e for e in np.eye(2)])
    m = np.zeros(gmls.Q_BASIS)
    for k, e in ((1, ex[0]), (2, ex[1])):
        m[k] = ((e @ n) * i_n + (e @ p) * i_p) / d
    pairs = {3: (0, 0), 4: (0, 1), 5: (1, 1)}
    for k, (a, b) in pairs.items():
        ea, eb = ex[a], ex[b]
        m[k] = (
            (ea @ n) * (eb @ n) * i_nn
            + (ea @ p) * (eb @ p) * i_pp
            + ((ea @ n) * (eb @ p) + (ea @ p) * (eb @ n)) * i_np
        ) / d**2
    return 2.0 * m


def compute_corner_coefficients(cproj, kernel, domain, x, rtol=3e-14):
    """Moments of the two-segment (corner) exterior Taylor frame.

    Returns (D1, D2, Qc, Jd1, Jd2, Jd1d2, basis_ext) where the D/Q values
    follow the corner formulation and basis_ext is the clipped-row input.
    """
    d = kernel.delta
    w1, w2 = cproj.w1, cproj.w2
    t = cproj.corner.theta
    # all channels at O(1) scale: the d_i covectors give O(delta) values on the cap
    moms = [
        kern.QuadMoment.constant(d * d),
        kern.QuadMoment.linear(d * w1),
        kern.QuadMoment.linear(d * w2),
        kern.QuadMoment.outer(w1, w1),
        kern.QuadMoment.outer(w2, w2),
        kern.QuadMoment.outer(w1, w2),
        # global basis channels (scaled monomials, constant excluded)
        kern.QuadMoment.linear((1.0, 0.0)),
        kern.QuadMoment.linear((0.0, 1.0)),
        kern.QuadMoment.outer((1.0, 0.0), (1.0, 0.0)),
        kern.QuadMoment.outer((1.0, 0.0), (0.0, 1.0)),
        kern.QuadMoment.outer((0.0, 1.0), (0.0, 1.0)),
    ]
    raw = kern.exterior_moments(kernel, x, domain, moms, rtol=rtol)
    jd1 = raw[1] / d
    jd2 = raw[2] / d
    jd11 = raw[3]
    jd22 = raw[4]
    jd1d2 = raw[5]
    d1 = jd11 - 2.0 * cproj.s1 * jd1
    d2c = jd22 - 2.0 * cproj.s2 * jd2
    da = max(d1, d2c)
    qc = 1.0 - da + jd1d2 * np.cos(t)
    basis = np.zeros(gmls.Q_BASIS)
    basis[1] = 2.0 * raw[6] / d
    basis[2] = 2.0 * raw[7] / d
    basis[3] = 2.0 * raw[8] / d**2
    basis[4] = 2.0 * raw[9] / d**2
    basis[5] = 2.0 * raw[10] / d**2
    return d1, d2c, qc, jd1, jd2, jd1d2, basis


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def _trace_row(points, collar_idx, collar_tree, xbar, delta, want=("val",)):
    """MLS rows at xbar over collar points (radius delta, one growth)."""
    idx = collar_tree.query_ball_point(xbar, delta)
    grown = False
    if len(idx) < gmls.Q_BASIS:
        idx = collar_tree.query_ball_point(xbar, 1.5 * delta)
        grown = True
        if len(idx) < gmls.Q_BASIS:
            raise gmls.UnisolvencyError(f"trace at {tuple(xbar)}: {len(idx)} collar points")
    gidx = collar_idx[np.asarray(idx, dtype=int)]
    radius = delta if not grown else 1.5 * delta
    rows = gmls.mls_rows(points, gidx, xbar, radius, want)
    return gidx, rows, grown


def assemble_nonlocal(
    cloud: PointCloud,
    kernel: kern.KernelSpec,
    ckernel: kern.ContourKernelSpec,
    alpha: float,
    beta: float = 0.0,
    corner_contour_factor: float = CORNER_CONTOUR_FACTOR,
    corner_beta_mode: str = CORNER_BETA_MODE,
) -> NonlocalSystem:
    pts = cloud.points
    n = cloud.n
    delta = cloud.delta
    domain = cloud.domain
    region = exterior_region(domain, delta)
    tree = cKDTree(pts)
    collar_idx = cloud.indices(COLLAR_INTERFACE)
    collar_tree = cKDTree(pts[collar_idx]) if len(collar_idx) else None
    dirichlet = cloud.dirichlet_indices
    is_dirichlet = np.zeros(n, dtype=bool)
    is_dirichlet[dirichlet] = True

    mass = np.ones(n)
    rows_a, cols_a, vals_a = [], [], []
    rows_s, cols_s, vals_s = [], [], []
    collar_rows: list[CollarRow] = []
    corner_rows: list[CornerRow] = []
    warnings: list[str] = []
    m_full = gmls.interior_moments(kernel)
    cache: dict = {}

    def scatter(acc_r, acc_c, acc_v, i, idx, row):
        acc_r.append(np.full(len(idx), i))
        acc_c.append(idx)
        acc_v.append(row)

    for i in range(n):
        if is_dirichlet[i]:
            continue
        st = gmls.build_stencil(pts, tree, i, delta, warn=warnings.append)
        x = pts[i]
        if cloud.labels[i] == INTERIOR:
            row = st.coef_map @ m_full
            scatter(rows_a, cols_a, vals_a, i, st.neighbors, -alpha * row)
            continue

        proj = domain.project_to_interface(x, delta)
        if proj.corner is not None:
            cp = proj.corner
            d1, d2, qc, jd1, jd2, jd1d2, basis_ext = compute_corner_coefficients(
                cp, kernel, region, x
            )
            mass[i] = qc
            w_clip = st.coef_map @ (m_full - basis_ext)
            scatter(rows_a, cols_a, vals_a, i, st.neighbors, -alpha * w_clip)
            # contour along the branch with the larger D coefficient
            if d1 > d2:
                p_dir, horizon, db = cp.p1, cp.delta1, d2
            else:
                p_dir, horizon, db = cp.p2, cp.delta2, d1
            cont = gmls.quadrature_row_contour(
                st, ckernel, lambda l: x + l * p_dir, horizon
            )
            coef = corner_contour_factor * alpha * (max(d1, d2) - db)
            scatter(rows_a, cols_a, vals_a, i, st.neighbors, coef * cont)
            t = cp.corner.theta
            st_t, ct_t = np.sin(t), np.cos(t)
            e_half = jd1d2  # E = 2 * jd1d2
            gp_coef = alpha * (e_half / st_t - db * (ct_t / st_t))
            if corner_beta_mode == "trace":
                gb_coef = 0.0
                want = ("val", "dx", "dy")
            elif corner_beta_mode == "derived":
                gb_coef = gp_coef
                want = ("val",)
            elif corner_beta_mode == "display":
                gb_coef = alpha * (ct_t / st_t) * (e_half / st_t - db)
                want = ("val",)
            else:
                raise ValueError(f"unknown corner beta mode {corner_beta_mode!r}")
            i1, r1, _ = _trace_row(pts, collar_idx, collar_tree, cp.xbar1, delta, want)
            i2, r2, _ = _trace_row(pts, collar_idx, collar_tree, cp.xbar2, delta, want)
            scatter(rows_s, cols_s, vals_s, i, i1, 2.0 * alpha * jd1 * r1["val"])
            scatter(rows_s, cols_s, vals_s, i, i2, 2.0 * alpha * jd2 * r2["val"])
            if corner_beta_mode == "trace":
                # beta * gp_coef * (du/dp1(xbar1) - du/dp2(xbar2)) joins the
                # Robin trace block, keeping the system exactly beta-linear
                dp1 = cp.p1[0] * r1["dx"] + cp.p1[1] * r1["dy"]
                dp2 = cp.p2[0] * r2["dx"] + cp.p2[1] * r2["dy"]
                scatter(rows_s, cols_s, vals_s, i, i1, gp_coef * dp1)
                scatter(rows_s, cols_s, vals_s, i, i2, -gp_coef * dp2)
            corner_rows.append(CornerRow(
                index=i, qc=qc, d1=d1, d2=d2, jd1=jd1, jd2=jd2, jd1d2=jd1d2,
                theta=t, xbar1=cp.xbar1, xbar2=cp.xbar2,
                n1=cp.n1, p1=cp.p1, n2=cp.n2, p2=cp.p2,
                gp_coef=gp_coef, gb_coef=gb_coef,
                trace1_idx=i1, trace1_row=r1["val"], trace2_idx=i2, trace2_row=r2["val"],
            ))
            continue

        # regular collar row; frame moments cached by congruence where possible
        key, flip = None, False
        if domain.shape == "disk":
            key = ("disk", round(np.linalg.norm(x - np.asarray(domain.params["center"])), 12))
        elif domain.shape == "square" and abs(proj.normal[0]) == 1.0:
            # mirror symmetry about the horizontal midline: odd-in-tangent
            # channels flip sign in the upper half
            lo, hi = domain.params["lo"], domain.params["hi"]
            dy = min(x[1] - lo[1], hi[1] - x[1])
            flip = x[1] > 0.5 * (lo[1] + hi[1])
            key = ("sq", round(proj.s, 12), round(dy, 12))
        cap = _fast_cap(domain, region, x, delta)
        if cap is not None and kernel.family == "J1_constant":
            ch = _flat_frame_channels(kernel, cap[0], cap[1])
        elif key is not None and key in cache:
            ch = cache[key].copy()
            if flip:
                ch[2] = -ch[2]
                ch[5] = -ch[5]
        else:
            ch = frame_channel_moments(kernel, x, region, proj.normal, proj.tangent)
            if key is not None:
                canon = ch.copy()
                if flip:
                    canon[2] = -canon[2]
                    canon[5] = -canon[5]
                cache[key] = canon
        coeffs = collar_from_channels(ch, proj.s, proj.kappa)
        mass[i] = coeffs.q
        basis_ext = _basis_from_channels(kernel, ch, proj.normal, proj.tangent)
        w_clip = st.coef_map @ (m_full - basis_ext)
        cont = gmls.quadrature_row_contour(st, ckernel, proj.contour_point, delta)
        row = w_clip + coeffs.m * cont
        i_p, i_np = ch[2], ch[5]
        if abs(i_p) > 1e-14 or abs(i_np) > 1e-14:
            # asymmetric exterior cap (data junctions, near-corner regions):
            # restore the odd tangential moments from the reconstruction so
            # the row stays exact for quadratics
            nrm, tng = proj.normal, proj.tangent
            m_dp = np.array([0.0, tng[0], tng[1], 0.0, 0.0, 0.0]) / delta
            m_dnp = np.array([
                0.0, 0.0, 0.0,
                2.0 * nrm[0] * tng[0],
                nrm[0] * tng[1] + nrm[1] * tng[0],
                2.0 * nrm[1] * tng[1],
            ]) / delta**2
            row = row + 2.0 * st.coef_map @ (i_p * m_dp + i_np * m_dnp)
        scatter(rows_a, cols_a, vals_a, i, st.neighbors, -alpha * row)
        ti, tr, grown = _trace_row(pts, collar_idx, collar_tree, proj.xbar, delta)
        scatter(rows_s, cols_s, vals_s, i, ti, alpha * coeffs.v * tr["val"])
        collar_rows.append(CollarRow(
            index=i, q=coeffs.q, v=coeffs.v, m=coeffs.m, s=proj.s,
            kappa=proj.kappa, xbar=proj.xbar, normal=proj.normal,
            tangent=proj.tangent, trace_idx=ti, trace_row=tr["val"], trace_grown=grown,
        ))

    def to_csr(rows, cols, vals):
        if not rows:
            return sp.csr_matrix((n, n))
        m = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        ).tocsr()
        m.sum_duplicates()
        return m

    return NonlocalSystem(
        cloud=cloud, kernel=kernel, ckernel=ckernel, alpha=alpha, beta=beta,
        mass=mass, a0=to_csr(rows_a, cols_a, vals_a), s1=to_csr(rows_s, cols_s, vals_s),
        dirichlet=dirichlet, collar_rows=collar_rows, corner_rows=corner_rows,
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# Right-hand sides and stepping
# ---------------------------------------------------------------------------


def assemble_rhs(system: NonlocalSystem, data, t: float, beta: float | None = None,
                 u_prev: np.ndarray | None = None, dt: float | None = None) -> np.ndarray:
    """Load vector at time t.

    ``data`` provides f(x, y, t), g(x, y, t, nx, ny) (Robin datum at the
    given beta), gp (its tangential derivative), and u_dirichlet(x, y, t).
    The previous state/mass terms are added when u_prev and dt are given.
    """
    b = system.beta if beta is None else beta
    pts = system.cloud.points
    n = system.n
    rhs = np.zeros(n)
    labels = system.cloud.labels
    interior_like = np.ones(n, dtype=bool)
    interior_like[system.dirichlet] = False
    f_all = data.f(pts[:, 0], pts[:, 1], t)
    rhs[interior_like] = (system.mass * f_all)[interior_like]
    a = system.alpha
    for cr in system.collar_rows:
        g = data.g(cr.xbar[0], cr.xbar[1], t, cr.normal[0], cr.normal[1])
        rhs[cr.index] += a * cr.v * g
    for cr in system.corner_rows:
        g1 = data.g(cr.xbar1[0], cr.xbar1[1], t, cr.n1[0], cr.n1[1])
        g2 = data.g(cr.xbar2[0], cr.xbar2[1], t, cr.n2[0], cr.n2[1])
        gp1 = data.gp(cr.xbar1[0], cr.xbar1[1], t, cr.n1[0], cr.n1[1], cr.p1[0], cr.p1[1])
        gp2 = data.gp(cr.xbar2[0], cr.xbar2[1], t, cr.n2[0], cr.n2[1], cr.p2[0], cr.p2[1])
        st_t, ct_t = np.sin(cr.theta), np.cos(cr.theta)
        rhs[cr.index] += (
            2.0 * a * (cr.jd1 * g1 + cr.jd2 * g2)
            + cr.gp_coef * (gp1 - gp2)
            - b * cr.gb_coef * (ct_t / st_t + 1.0 / st_t) * (g1 + g2)
        )
    xd = pts[system.dirichlet]
    rhs[system.dirichlet] = data.u_dirichlet(xd[:, 0], xd[:, 1], t)
    if u_prev is not None:
        rhs[interior_like] += (system.mass * u_prev)[interior_like] / dt
    return rhs


class NonlocalStepper:
    """Prefactored backward-Euler stepper at fixed (dt, beta)."""

    def __init__(self, system: NonlocalSystem, dt: float, beta: float | None = None):
        self.system = system
        self.dt = dt
        self.beta = system.beta if beta is None else beta
        self.matrix = system.matrix(dt, self.beta)
        self.lu = sparse_factor(self.matrix)

    def step(self, u_prev: np.ndarray, data, t_next: float) -> np.ndarray:
        rhs = assemble_rhs(self.system, data, t_next, self.beta, u_prev, self.dt)
        return self.lu.solve(rhs)


def step_backward_euler(system: NonlocalSystem, u_prev: np.ndarray, data,
                        t_next: float, dt: float, beta: float | None = None) -> np.ndarray:
    return NonlocalStepper(system, dt, beta).step(u_prev, data, t_next)
