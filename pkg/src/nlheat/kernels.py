"""Radial 2D kernels, the 1D contour kernel, and clipped-ball moment integrals.

The 2D kernel family is the rescaled form J_delta(r) = delta^-4 J(r/delta)
with second-moment normalization  ∫_{R^2} J(|z|) |z|^2 dz = 2,  so that the
nonlocal diffusion operator reproduces the Laplacian as delta -> 0.  Two
profiles are provided:

    J1: constant   4/(pi delta^4)          for r <= delta
    J2: 1/r type   3/(pi delta^3 r)        for 0 < r <= delta

The 1D contour kernel is H_delta(r) = delta^-3 H(r/delta) with
∫_R H(|z|) z^2 dz = 1; the constant profile H = 3/2 on [0,1] is used, for
which C_H = ∫ H dz = 3.

Moment integrals over B(x, delta) clipped against a domain exterior are
computed by per-ray exact radial integration (the moments are quadratic
polynomials, and both kernel profiles integrate in closed form along a ray)
combined with adaptive Gauss panels in the angle.  Half-plane caps for the
constant kernel additionally have closed forms, used as a fast path and as
an independent oracle in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_GL15 = np.polynomial.legendre.leggauss(15)
_GL7 = np.polynomial.legendre.leggauss(7)


class QuadratureError(RuntimeError):
    pass


class KernelEvalError(ValueError):
    pass


def _check_second_moment_2d(spec) -> float:
    # polar: ∫ J(|z|)|z|^2 dz = 2*pi*∫_0^delta J(r) r^3 dr
    xs, ws = np.polynomial.legendre.leggauss(80)
    r = 0.5 * spec.delta * (xs + 1.0)
    w = 0.5 * spec.delta * ws
    vals = np.array([spec.eval(max(ri, 1e-300)) for ri in r])
    return 2.0 * np.pi * float(np.sum(w * vals * r**3))


@dataclass(frozen=True)
class KernelSpec:
    """2D radial kernel J_delta with compact support delta."""

    family: str  # "J1_constant" | "J2_inverse_r"
    delta: float

    def __post_init__(self):
        if self.family not in ("J1_constant", "J2_inverse_r"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.delta <= 0:
            raise ValueError("horizon delta must be positive")
        m2 = _check_second_moment_2d(self)
        if abs(m2 - 2.0) > 1e-10:
            raise ValueError(f"kernel second moment {m2!r} != 2")

    def eval(self, r: float) -> float:
        if r < 0:
            raise KernelEvalError("radius must be nonnegative")
        if r > self.delta:
            return 0.0
        if self.family == "J1_constant":
            return 4.0 / (np.pi * self.delta**4)
        if r == 0.0:
            raise KernelEvalError(
                "J2 is singular at r = 0; use radially integrated forms instead"
            )
        return 3.0 / (np.pi * self.delta**3 * r)

    def ball_integral(self) -> float:
        """∫_{B(0,delta)} J_delta dy (finite for both profiles)."""
        if self.family == "J1_constant":
            return 4.0 / self.delta**2
        return 6.0 / self.delta**2

    def ray_segment_integrals(self, t0, t1, deg: int):
        """∫_{t0}^{t1} J(r) r^{k+1} dr for k = 0..deg, vectorized in (t0, t1).

        The extra factor r is the polar Jacobian; both profiles are exact.
        """
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        out = []
        if self.family == "J1_constant":
            c = 4.0 / (np.pi * self.delta**4)
            for k in range(deg + 1):
                p = k + 2
                out.append(c * (t1**p - t0**p) / p)
        else:
            c = 3.0 / (np.pi * self.delta**3)
            for k in range(deg + 1):
                p = k + 1
                out.append(c * (t1**p - t0**p) / p)
        return np.stack(out, axis=-1)


def eval_j(spec: KernelSpec, r: float) -> float:
    return spec.eval(r)


@dataclass(frozen=True)
class ContourKernelSpec:
    """1D contour kernel H_delta; constant profile H = 3/2 on [0, 1]."""

    family: str = "H_constant"
    delta: float = 1.0
    c_h: float = field(default=3.0, init=False)

    def __post_init__(self):
        if self.family != "H_constant":
            raise ValueError(f"unknown contour kernel family {self.family!r}")
        if self.delta <= 0:
            raise ValueError("horizon delta must be positive")

    def eval(self, r: float, delta: float | None = None) -> float:
        """H_delta(|r|); an override horizon supports truncated corner contours."""
        d = self.delta if delta is None else delta
        if r < 0:
            r = -r
        if r > d:
            return 0.0
        return 1.5 / d**3

    def gauss_nodes(self, delta: float | None = None, n_half: int = 16):
        """Nodes/weights of H_d(|l|) dl on [-d, d], n_half Gauss points per half."""
        d = self.delta if delta is None else delta
        xs, ws = np.polynomial.legendre.leggauss(n_half)
        lp = 0.5 * d * (xs + 1.0)
        wp = 0.5 * d * ws
        l = np.concatenate([-lp[::-1], lp])
        w = np.concatenate([wp[::-1], wp])
        h = np.full_like(l, 1.5 / d**3)
        return l, w * h


def eval_h(spec: ContourKernelSpec, r: float) -> float:
    return spec.eval(r)


# ---------------------------------------------------------------------------
# Quadratic moment descriptors: m(y) = c + b.(y-x) + (y-x)^T A (y-x)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadMoment:
    c: float
    b: tuple  # (2,)
    a: tuple  # ((2,2)) symmetric

    @staticmethod
    def constant(c=1.0):
        return QuadMoment(c, (0.0, 0.0), ((0.0, 0.0), (0.0, 0.0)))

    @staticmethod
    def linear(b):
        return QuadMoment(0.0, (float(b[0]), float(b[1])), ((0.0, 0.0), (0.0, 0.0)))

    @staticmethod
    def outer(u, v):
        """Moment (u.(y-x)) (v.(y-x)) as a symmetric quadratic form."""
        a = 0.5 * (np.outer(u, v) + np.outer(v, u))
        return QuadMoment(0.0, (0.0, 0.0), tuple(map(tuple, a)))


def _moment_coeffs(moments, phis):
    """Per-angle radial polynomial coefficients (c, b.e, e^T A e)."""
    e = np.stack([np.cos(phis), np.sin(phis)], axis=-1)  # (nphi, 2)
    c0 = np.array([m.c for m in moments])
    bs = np.array([m.b for m in moments])  # (nm, 2)
    As = np.array([m.a for m in moments])  # (nm, 2, 2)
    c1 = e @ bs.T  # (nphi, nm)
    c2 = np.einsum("pi,mij,pj->pm", e, As, e)
    return c0, c1, c2


def ball_moment(kernel: KernelSpec, moments) -> np.ndarray:
    """∫_{B(x,delta)} J_delta(|y-x|) m(y) dy over the full ball (closed form)."""
    out = np.empty(len(moments))
    j0 = kernel.ball_integral()
    for i, m in enumerate(moments):
        a = np.asarray(m.a)
        out[i] = m.c * j0 + a[0, 0] + a[1, 1]  # ∫J z_k^2 = 1, odd/cross vanish
    return out


# ---------------------------------------------------------------------------
# Generic clipped-exterior engine
# ---------------------------------------------------------------------------


def exterior_moments(
    kernel: KernelSpec,
    x,
    region,
    moments,
    rtol: float = 1e-13,
    atol: float = 1e-15,
    max_panels: int = 20000,
) -> np.ndarray:
    """∫_{B(x,delta) \\ Omega} J_delta(|y-x|) m(y) dy for each quadratic moment.

    ``region`` provides ``ray_crossings(x, phis, delta) -> (nphi, k)`` boundary
    crossing parameters (padded with delta) and vectorized ``contains(points)``;
    the exterior along each ray is recovered by midpoint membership tests
    between consecutive crossings.  Radial integration is exact; the angle is
    integrated by adaptive 15/7 Gauss panels.  Raises QuadratureError if the
    panel budget is exhausted before reaching tolerance.
    """
    x = np.asarray(x, dtype=float)
    delta = kernel.delta
    nm = len(moments)

    def f_batch(phis):
        # vector integrand over angles: (nphi, nm)
        cross = region.ray_crossings(x, phis, delta)  # (nphi, k) in [0, delta]
        nphi = len(phis)
        breaks = np.concatenate(
            [np.zeros((nphi, 1)), cross, np.full((nphi, 1), delta)], axis=1
        )
        breaks = np.sort(np.clip(breaks, 0.0, delta), axis=1)
        t0 = breaks[:, :-1]
        t1 = breaks[:, 1:]
        live = (t1 - t0) > 1e-15 * delta  # padding collapses most segments
        rr, cc = np.nonzero(live)
        tm = 0.5 * (t0[rr, cc] + t1[rr, cc])
        e = np.stack([np.cos(phis), np.sin(phis)], axis=-1)
        mids = x[None, :] + tm[:, None] * e[rr]
        outside = np.zeros_like(live)
        outside[rr, cc] = ~region.contains(mids)
        c0, c1, c2 = _moment_coeffs(moments, phis)  # (nm,), (nphi,nm), (nphi,nm)
        # radial integrals per segment for powers 0..2: (nphi, nseg, 3)
        seg = kernel.ray_segment_integrals(t0, t1, 2)
        seg = np.where(outside[:, :, None], seg, 0.0)
        s0 = seg[:, :, 0].sum(axis=1)
        s1 = seg[:, :, 1].sum(axis=1)
        s2 = seg[:, :, 2].sum(axis=1)
        # NOTE: c1, c2 vary with phi but not with the segment because moments
        # are polynomials in y; segment sums factor out.
        return c0[None, :] * s0[:, None] + c1 * s1[:, None] + c2 * s2[:, None]

    seeds = np.asarray(region.seed_angles(x, delta), dtype=float) % (2 * np.pi)
    grid = np.unique(np.concatenate([np.linspace(0.0, 2 * np.pi, 9), np.sort(seeds)]))
    panels = [(grid[i], grid[i + 1]) for i in range(len(grid) - 1) if grid[i + 1] > grid[i] + 1e-14]

    total = np.zeros(nm)
    n_done = 0
    a = np.array([p[0] for p in panels])
    b = np.array([p[1] for p in panels])
    fscale = 0.0
    nodes = np.concatenate([_GL15[0], _GL7[0]])
    while len(a):
        nb = len(a)
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        phis = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
        f = f_batch(phis).reshape(nb, 22, nm)
        fscale = max(fscale, float(np.abs(f).max(initial=0.0)))
        i15 = np.einsum("g,bgm->bm", _GL15[1], f[:, :15]) * half[:, None]
        i7 = np.einsum("g,bgm->bm", _GL7[1], f[:, 15:]) * half[:, None]
        err = np.abs(i15 - i7).max(axis=1)
        # width-proportional budget plus a roundoff floor so panels containing
        # a kink cannot race quadrature noise forever
        tol_panel = ((atol + rtol) / (2 * np.pi) + 64 * np.finfo(float).eps * fscale) * (b - a)
        ok = (err <= tol_panel) | ((b - a) < 1e-10)
        total += i15[ok].sum(axis=0)
        n_done += nb
        if n_done > max_panels:
            worst = float(err[~ok].max()) if np.any(~ok) else 0.0
            raise QuadratureError(
                f"clipped-moment quadrature stalled; achieved {worst:.2e}"
            )
        a_bad, b_bad = a[~ok], b[~ok]
        m_bad = 0.5 * (a_bad + b_bad)
        a = np.concatenate([a_bad, m_bad])
        b = np.concatenate([m_bad, b_bad])
    return total


# ---------------------------------------------------------------------------
# Half-plane caps (constant kernel): closed forms
# ---------------------------------------------------------------------------


def halfplane_frame_integrals(delta: float, s: float):
    """Closed-form J1 integrals over the cap {(y-x).n >= s} of B(x, delta).

    Returns (I0, I1, I2n, I2p) =
        ∫J, ∫J z_n, ∫J z_n^2, ∫J z_p^2     with z = y - x.
    Odd-in-z_p moments vanish by symmetry.
    """
    if s >= delta:
        return 0.0, 0.0, 0.0, 0.0
    s = max(s, 0.0)
    a = np.sqrt(delta**2 - s**2)
    psi0 = np.arccos(min(1.0, s / delta))
    pd4 = np.pi * delta**4
    i0 = 4.0 / pd4 * (delta**2 * psi0 - s * a)
    i1 = 8.0 * a**3 / (3.0 * pd4)
    i2n = (delta**4 * psi0 + delta**2 * s * a - 2 * s**3 * a) / pd4
    i2p = (delta**4 * psi0 - delta**2 * s * a - (2.0 / 3.0) * s * a**3) / pd4
    return float(i0), float(i1), float(i2n), float(i2p)


def halfplane_moments(kernel: KernelSpec, x, n, s: float, moments) -> np.ndarray:
    """Closed-form exterior moments when the clipped region is an exact half-plane cap.

    Only the constant kernel has the simple closed form used here.
    """
    if kernel.family != "J1_constant":
        raise ValueError("half-plane closed forms are implemented for J1 only")
    n = np.asarray(n, dtype=float)
    p = np.array([n[1], -n[0]])
    i0, i1, i2n, i2p = halfplane_frame_integrals(kernel.delta, s)
    out = np.empty(len(moments))
    for k, m in enumerate(moments):
        b = np.asarray(m.b)
        a = np.asarray(m.a)
        out[k] = (
            m.c * i0
            + (b @ n) * i1
            + (n @ a @ n) * i2n
            + (p @ a @ p) * i2p
            # cross term ∫ J z_n z_p = 0 by symmetry
        )
    return out


# Named moment selectors for the public clipped-moment surface.
def frame_moment(selector: str, n, p, xbar_minus_x, d_frames=None) -> QuadMoment:
    """Build the quadratic moment named by ``selector``.

    Selectors: "one", "zn" ((y-x).n), "zp_sq", "znbar_sq" (|(y-xbar).n|^2),
    "d1", "d2", "half_d1_sq", "half_d2_sq", "d1d2", "sxn_d1", "sxn_d2".
    Corner selectors require ``d_frames = (w1, w2)`` with d_i = w_i.(y-x).
    """
    n = np.asarray(n, dtype=float)
    p = np.asarray(p, dtype=float)
    dxb = np.asarray(xbar_minus_x, dtype=float)
    s = float(dxb @ n)
    if selector == "one":
        return QuadMoment.constant(1.0)
    if selector == "zn":
        return QuadMoment.linear(n)
    if selector == "zp_sq":
        return QuadMoment.outer(p, p)
    if selector == "znbar_sq":
        # ((y-x).n - s)^2 = z_n^2 - 2 s z_n + s^2
        q = QuadMoment.outer(n, n)
        return QuadMoment(s * s, tuple(-2.0 * s * n), q.a)
    if d_frames is None:
        raise ValueError(f"selector {selector!r} needs corner d-frames")
    w1, w2 = (np.asarray(w, dtype=float) for w in d_frames)
    if selector == "d1":
        return QuadMoment.linear(w1)
    if selector == "d2":
        return QuadMoment.linear(w2)
    if selector == "half_d1_sq":
        q = QuadMoment.outer(w1, w1)
        return QuadMoment(0.0, (0.0, 0.0), tuple(tuple(0.5 * v for v in row) for row in q.a))
    if selector == "half_d2_sq":
        q = QuadMoment.outer(w2, w2)
        return QuadMoment(0.0, (0.0, 0.0), tuple(tuple(0.5 * v for v in row) for row in q.a))
    if selector == "d1d2":
        return QuadMoment.outer(w1, w2)
    if selector == "sxn_d1":
        return QuadMoment.linear(s * w1)
    if selector == "sxn_d2":
        return QuadMoment.linear(s * w2)
    raise ValueError(f"unknown moment selector {selector!r}")


def clipped_moment(
    kernel: KernelSpec,
    x,
    region,
    selector: str,
    n=(1.0, 0.0),
    p=None,
    xbar_minus_x=(0.0, 0.0),
    d_frames=None,
    rtol: float = 1e-13,
) -> float:
    """Single clipped-ball moment over B(x, delta) \\ Omega (engine path)."""
    n = np.asarray(n, dtype=float)
    if p is None:
        p = np.array([n[1], -n[0]])
    m = frame_moment(selector, n, p, xbar_minus_x, d_frames)
    return float(exterior_moments(kernel, x, region, [m], rtol=rtol)[0])
