"""Test domains, point clouds, boundary projections, and snapped triangulations.

Supported nonlocal subdomains: an axis-aligned square with one interface
side, a disk, and a cross (union of two axis-aligned boxes, non-convex with
right-angle corners).  Local subdomains are a rectangle sharing one side
with the nonlocal square, or a box with a disk/cross hole whose hole
boundary is the coupling interface.

All shapes are analytic: signed distances, projections, curvatures, and
ray-boundary crossings are exact.  Point clouds are unperturbed Cartesian
lattices (quasi-uniform, deterministic counts); local meshes are structured
lattices with nodes near a curved interface snapped onto it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


class GeometryError(ValueError):
    pass


def _rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------------------
# Boundary pieces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinePiece:
    """Oriented straight boundary piece with outward unit normal."""

    p0: tuple
    p1: tuple
    normal: tuple

    def as_arrays(self):
        return np.asarray(self.p0, float), np.asarray(self.p1, float), np.asarray(self.normal, float)

    def nearest(self, x):
        p0, p1, n = self.as_arrays()
        d = p1 - p0
        L = np.linalg.norm(d)
        t = float(np.clip((np.asarray(x) - p0) @ d / L**2, 0.0, 1.0))
        foot = p0 + t * d
        return foot, float(np.linalg.norm(np.asarray(x) - foot))


@dataclass(frozen=True)
class ArcPiece:
    """Full-circle boundary piece (the only arcs needed are complete circles)."""

    center: tuple
    radius: float

    def nearest(self, x):
        c = np.asarray(self.center, float)
        v = np.asarray(x, float) - c
        r = np.linalg.norm(v)
        if r == 0.0:
            foot = c + np.array([self.radius, 0.0])
        else:
            foot = c + v * (self.radius / r)
        return foot, abs(self.radius - r)


@dataclass(frozen=True)
class Corner:
    """Interface corner with the rigid motion to the canonical frame.

    Canonical frame: corner at the origin, segment 1 along the negative
    x-axis with exterior normal n1 = (0, 1), segment 2 leaving the corner
    along p2 = (-cos t, -sin t); the interior occupies the wedge of polar
    angles (pi, pi + t) where t is the interior angle.
    """

    point: tuple
    theta: float
    rotation: float  # world -> canonical rotation angle
    seg1: int  # piece indices of the two adjacent segments (canonical labels)
    seg2: int
    seg1_len: float
    seg2_len: float

    @property
    def R(self):
        return _rot(self.rotation)

    def frames(self):
        t = self.theta
        RT = self.R.T
        n1 = RT @ np.array([0.0, 1.0])
        p1 = RT @ np.array([1.0, 0.0])
        n2 = RT @ np.array([np.sin(t), -np.cos(t)])
        p2 = RT @ np.array([-np.cos(t), -np.sin(t)])
        return n1, p1, n2, p2


@dataclass
class CornerProjection:
    """Per-point geometric data for the corner-collar formulation."""

    corner: Corner
    xbar1: np.ndarray
    xbar2: np.ndarray
    s1: float  # (xbar1 - x) . n1, signed
    s2: float
    n1: np.ndarray
    p1: np.ndarray
    n2: np.ndarray
    p2: np.ndarray
    w1: np.ndarray  # d1 = w1 . (y - x)
    w2: np.ndarray
    concave: bool
    delta1: float  # truncated contour horizons along p1 / p2
    delta2: float


@dataclass
class BoundaryProjection:
    """Orthogonal projection of a collar point onto the interface."""

    x: np.ndarray
    xbar: np.ndarray
    s: float
    normal: np.ndarray
    tangent: np.ndarray  # clockwise to the normal
    kappa: float
    piece_index: int
    arc_center: np.ndarray | None = None
    arc_radius: float | None = None
    corner: CornerProjection | None = None

    def contour_point(self, l: float) -> np.ndarray:
        """Point at signed arclength l along the level set through x."""
        if self.arc_center is None:
            return self.x + l * self.tangent
        v = self.x - self.arc_center
        r = np.linalg.norm(v)
        phi0 = np.arctan2(v[1], v[0])
        # tangent orientation fixes the sense of increasing arclength
        sgn = np.sign(np.cross(v / r, self.tangent)) or 1.0
        phi = phi0 + sgn * l / r
        return self.arc_center + r * np.array([np.cos(phi), np.sin(phi)])


def contour_point(proj: BoundaryProjection, l: float) -> np.ndarray:
    return proj.contour_point(l)


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------


def _box_sdf(pts, lo, hi):
    """Signed distance to an axis-aligned box; negative inside."""
    pts = np.atleast_2d(pts)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    d = np.maximum(lo - pts, pts - hi)
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
    inside = np.minimum(np.max(d, axis=1), 0.0)
    return outside + inside


def _ray_line_crossings(x, phis, axis, value):
    """Ray parameter where x + t e(phi) crosses {y[axis] = value}; inf if parallel."""
    e = np.cos(phis) if axis == 0 else np.sin(phis)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (value - x[axis]) / e
    t = np.where(np.abs(e) < 1e-300, np.inf, t)
    return t


@dataclass
class DomainSpec:
    """Analytic domain description (shape + role + interface data)."""

    shape: str
    role: str  # "nonlocal" | "local"
    params: dict = field(default_factory=dict)
    interface_pieces: list = field(default_factory=list)
    dirichlet_pieces: list = field(default_factory=list)
    corners: list = field(default_factory=list)
    pinned_points: list = field(default_factory=list)

    # -- membership -----------------------------------------------------
    def signed_distance(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        if self.shape in ("square", "rectangle"):
            return _box_sdf(pts, self.params["lo"], self.params["hi"])
        if self.shape == "disk":
            c = np.asarray(self.params["center"], float)
            return np.linalg.norm(pts - c, axis=1) - self.params["radius"]
        if self.shape == "cross":
            b1, b2 = self._cross_boxes()
            return np.minimum(_box_sdf(pts, *b1), _box_sdf(pts, *b2))
        if self.shape in ("box_minus_disk", "box_minus_cross"):
            outer = _box_sdf(pts, self.params["lo"], self.params["hi"])
            hole = self.hole_domain().signed_distance(pts)
            return np.maximum(outer, -hole)
        raise GeometryError(f"unknown shape {self.shape!r}")

    def contains(self, pts, tol: float = 1e-12) -> np.ndarray:
        return self.signed_distance(pts) <= tol

    def _cross_boxes(self):
        w = self.params["half_width"]
        L = self.params["half_length"]
        return ((-L, -w), (L, w)), ((-w, -L), (w, L))

    def hole_domain(self) -> "DomainSpec":
        if self.shape == "box_minus_disk":
            return nonlocal_disk(self.params["center"], self.params["radius"])
        if self.shape == "box_minus_cross":
            return nonlocal_cross(self.params["half_width"], self.params["half_length"])
        raise GeometryError("domain has no hole")

    # -- interface queries ------------------------------------------------
    def dist_to_interface(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        d = np.full(len(pts), np.inf)
        for piece in self.interface_pieces:
            if isinstance(piece, LinePiece):
                p0, p1, _ = piece.as_arrays()
                seg = p1 - p0
                L2 = seg @ seg
                t = np.clip((pts - p0) @ seg / L2, 0.0, 1.0)
                foot = p0 + t[:, None] * seg
                d = np.minimum(d, np.linalg.norm(pts - foot, axis=1))
            else:
                c = np.asarray(piece.center, float)
                d = np.minimum(d, np.abs(np.linalg.norm(pts - c, axis=1) - piece.radius))
        return d

    def dist_to_dirichlet(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        d2 = np.full(len(pts), np.inf)
        for piece in self.dirichlet_pieces:
            p0, p1, _ = piece.as_arrays()
            seg = p1 - p0
            t = np.clip((pts - p0) @ seg / (seg @ seg), 0.0, 1.0)
            dx = pts - (p0 + t[:, None] * seg)
            d2 = np.minimum(d2, dx[:, 0] ** 2 + dx[:, 1] ** 2)
        return np.sqrt(d2)

    def project_to_interface(self, x, delta: float | None = None) -> BoundaryProjection:
        """Nearest-point projection onto the interface; ties resolved by
        lowest piece index.  If ``delta`` is given and a corner lies within
        that distance, corner data is attached."""
        x = np.asarray(x, float)
        best = None
        best_d = np.inf
        for k, piece in enumerate(self.interface_pieces):
            foot, d = piece.nearest(x)
            if best is None or d < best_d * (1.0 - 1e-12) - 1e-15:
                best, best_d = (k, foot), d
        if best is None:
            raise GeometryError("domain has no interface pieces")
        k, foot = best
        piece = self.interface_pieces[k]
        if isinstance(piece, LinePiece):
            n = np.asarray(piece.normal, float)
            kappa = 0.0
            arc_c, arc_r = None, None
        else:
            c = np.asarray(piece.center, float)
            v = x - c
            r = np.linalg.norm(v)
            n = v / r if r > 0 else np.array([1.0, 0.0])
            kappa = 1.0 / piece.radius
            arc_c, arc_r = c, piece.radius
        p = np.array([n[1], -n[0]])  # clockwise to n
        s = float(np.linalg.norm(foot - x))
        proj = BoundaryProjection(
            x=x, xbar=foot, s=s, normal=n, tangent=p, kappa=kappa,
            piece_index=k, arc_center=arc_c, arc_radius=arc_r,
        )
        if delta is not None:
            corner = self.corner_near(x, delta)
            if corner is not None:
                proj.corner = self.corner_projection(x, corner, delta)
        return proj

    def corner_near(self, x, delta: float):
        x = np.asarray(x, float)
        for corner in self.corners:
            if np.linalg.norm(x - np.asarray(corner.point)) < delta:
                return corner
        return None

    def corner_projection(self, x, corner: Corner, delta: float) -> CornerProjection:
        x = np.asarray(x, float)
        c = np.asarray(corner.point, float)
        n1, p1, n2, p2 = corner.frames()
        xc = corner.R @ (x - c)  # canonical coordinates relative to the corner
        t = corner.theta
        # feet of perpendiculars onto the two segment lines (canonical):
        # line 1 is the x-axis (segment on x <= 0); line 2 passes through the
        # origin along p2.
        f1c = np.array([xc[0], 0.0])
        tau2 = np.array([-np.cos(t), -np.sin(t)])
        f2c = (xc @ tau2) * tau2
        on1 = -corner.seg1_len - 1e-12 <= f1c[0] <= 1e-12
        on2 = -1e-12 <= xc @ tau2 <= corner.seg2_len + 1e-12
        RT = corner.R.T
        xbar1 = c + RT @ f1c if on1 else c.copy()
        xbar2 = c + RT @ f2c if on2 else c.copy()
        concave = t > np.pi
        # covectors of the exterior-cap Taylor frame: y - x = d1 n1 + d2 n2
        st = np.sin(t)
        w1 = RT @ np.array([np.cos(t) / st, 1.0])
        w2 = RT @ np.array([1.0 / st, 0.0])
        d1 = self._contour_horizon(x, p1, delta)
        d2 = self._contour_horizon(x, p2, delta)
        return CornerProjection(
            corner=corner, xbar1=xbar1, xbar2=xbar2,
            s1=float((xbar1 - x) @ n1), s2=float((xbar2 - x) @ n2),
            n1=n1, p1=p1, n2=n2, p2=p2, w1=w1, w2=w2,
            concave=concave, delta1=d1, delta2=d2,
        )

    def _contour_horizon(self, x, direction, delta: float) -> float:
        """Largest symmetric horizon along +-direction staying inside the domain."""
        lim = delta
        for sgn in (1.0, -1.0):
            phis = np.array([np.arctan2(sgn * direction[1], sgn * direction[0])])
            cross = self.ray_crossings(x, phis, delta)[0]
            cand = np.concatenate([cross, [delta]])
            mids = 0.5 * (np.concatenate([[0.0], np.sort(cand)])[:-1] + np.sort(cand))
            pts = x[None, :] + mids[:, None] * (sgn * np.asarray(direction))[None, :]
            inside = self.contains(pts)
            exit_t = delta
            srt = np.sort(cand)
            for i, ok in enumerate(inside):
                if not ok:
                    exit_t = srt[i - 1] if i > 0 else 0.0
                    break
            lim = min(lim, exit_t)
        return lim if lim > 1e-9 * delta else delta

    # -- ray machinery for the moment engine -------------------------------
    def ray_crossings(self, x, phis, delta: float) -> np.ndarray:
        """Candidate boundary-crossing parameters along x + t e(phi), t in (0, delta).

        Returns an (nphi, k) array padded with delta; exactness is not needed
        because segment membership is decided by midpoint tests.
        """
        x = np.asarray(x, float)
        phis = np.asarray(phis, float)
        cands = []
        if self.shape in ("square", "rectangle"):
            lo, hi = self.params["lo"], self.params["hi"]
            for axis, val in ((0, lo[0]), (0, hi[0]), (1, lo[1]), (1, hi[1])):
                cands.append(_ray_line_crossings(x, phis, axis, val))
        elif self.shape == "disk":
            c = np.asarray(self.params["center"], float)
            R = self.params["radius"]
            e = np.stack([np.cos(phis), np.sin(phis)], axis=-1)
            v = x - c
            b = e @ v
            disc = b**2 - (v @ v - R**2)
            ok = disc >= 0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            cands.append(np.where(ok, -b - sq, np.inf))
            cands.append(np.where(ok, -b + sq, np.inf))
        elif self.shape == "cross":
            w = self.params["half_width"]
            L = self.params["half_length"]
            for axis, val in (
                (0, -L), (0, L), (0, -w), (0, w),
                (1, -L), (1, L), (1, -w), (1, w),
            ):
                cands.append(_ray_line_crossings(x, phis, axis, val))
        else:
            raise GeometryError(f"ray crossings unsupported for shape {self.shape!r}")
        t = np.stack(cands, axis=-1)
        t = np.where((t > 1e-14) & (t < delta), t, delta)
        return t

    def seed_angles(self, x, delta: float) -> np.ndarray:
        """Feature directions that subdivide the angular integrand smoothly."""
        x = np.asarray(x, float)
        seeds = [0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi]
        feats = []
        if self.shape in ("square", "rectangle"):
            lo, hi = self.params["lo"], self.params["hi"]
            feats = [(lo[0], lo[1]), (lo[0], hi[1]), (hi[0], lo[1]), (hi[0], hi[1])]
        elif self.shape == "cross":
            feats = [np.asarray(c.point) for c in self.corners]
        elif self.shape == "disk":
            c = np.asarray(self.params["center"], float)
            R = self.params["radius"]
            rho = np.linalg.norm(x - c)
            if rho > 0:
                # angles where the circle exit distance equals delta (integrand kink)
                co = (R**2 - rho**2 - delta**2) / (2 * delta * rho)
                if -1.0 <= co <= 1.0:
                    base = np.arctan2((x - c)[1], (x - c)[0])
                    a = np.arccos(co)
                    seeds += [base + np.pi - a, base + np.pi + a]
        for fpt in feats:
            v = np.asarray(fpt, float) - x
            if 0 < np.linalg.norm(v) < 2 * delta:
                seeds.append(np.arctan2(v[1], v[0]))
        return np.asarray(seeds)

    def flat_cap(self, x, delta: float):
        """(s, n) if the exterior within B(x, delta) is exactly one half-plane cap."""
        x = np.asarray(x, float)
        faces = self._flat_faces()
        if faces is None:
            return None
        hits = []
        for k, (p0, p1, n) in enumerate(faces):
            s = float((x - p0) @ n)  # signed: negative inside
            if -delta < s <= 0.0:
                hits.append((k, -s))
        if len(hits) != 1:
            return None
        k, s = hits[0]
        p0, p1, n = faces[k]
        a = np.sqrt(max(delta**2 - s**2, 0.0))
        tau = (p1 - p0) / np.linalg.norm(p1 - p0)
        u = float((x - p0) @ tau)
        span = np.linalg.norm(p1 - p0)
        if u < a or u > span - a:
            return None
        # every other face must stay out of reach
        for kk, (q0, q1, _) in enumerate(faces):
            if kk == k:
                continue
            seg = q1 - q0
            t = np.clip((x - q0) @ seg / (seg @ seg), 0.0, 1.0)
            if np.linalg.norm(x - (q0 + t * seg)) < delta:
                return None
        return s, n

    def _flat_faces(self):
        if self.shape in ("square", "rectangle"):
            lo = np.asarray(self.params["lo"], float)
            hi = np.asarray(self.params["hi"], float)
            return [
                (np.array([lo[0], lo[1]]), np.array([hi[0], lo[1]]), np.array([0.0, -1.0])),
                (np.array([hi[0], lo[1]]), np.array([hi[0], hi[1]]), np.array([1.0, 0.0])),
                (np.array([hi[0], hi[1]]), np.array([lo[0], hi[1]]), np.array([0.0, 1.0])),
                (np.array([lo[0], hi[1]]), np.array([lo[0], lo[1]]), np.array([-1.0, 0.0])),
            ]
        if self.shape == "cross":
            return [
                (np.asarray(p.p0, float), np.asarray(p.p1, float), np.asarray(p.normal, float))
                for p in self.interface_pieces
            ]
        return None

    def feature_size(self) -> float:
        if self.shape == "cross":
            return self.params["half_width"]
        if self.shape == "disk":
            return self.params["radius"]
        if self.shape in ("square", "rectangle"):
            lo, hi = self.params["lo"], self.params["hi"]
            return min(hi[0] - lo[0], hi[1] - lo[1])
        return np.inf


# ---------------------------------------------------------------------------
# Domain constructors
# ---------------------------------------------------------------------------


def nonlocal_square(lo=(0.0, 0.0), hi=(1.0, 1.0), interface_side="right") -> DomainSpec:
    """Axis box with a Robin/Neumann interface on one side, Dirichlet elsewhere."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    sides = {
        "right": LinePiece((hi[0], lo[1]), (hi[0], hi[1]), (1.0, 0.0)),
        "left": LinePiece((lo[0], hi[1]), (lo[0], lo[1]), (-1.0, 0.0)),
        "top": LinePiece((hi[0], hi[1]), (lo[0], hi[1]), (0.0, 1.0)),
        "bottom": LinePiece((lo[0], lo[1]), (hi[0], lo[1]), (0.0, -1.0)),
    }
    if interface_side not in sides:
        raise GeometryError(f"unknown side {interface_side!r}")
    iface = [sides[interface_side]]
    diri = [sides[s] for s in ("right", "left", "top", "bottom") if s != interface_side]
    return DomainSpec(
        shape="square", role="nonlocal",
        params={"lo": tuple(lo), "hi": tuple(hi)},
        interface_pieces=iface, dirichlet_pieces=diri,
    )


def nonlocal_disk(center=(0.0, 0.0), radius=1.0, pin=None) -> DomainSpec:
    dom = DomainSpec(
        shape="disk", role="nonlocal",
        params={"center": tuple(center), "radius": float(radius)},
        interface_pieces=[ArcPiece(tuple(center), float(radius))],
    )
    if pin is not None:
        dom.pinned_points.append(tuple(pin))
    return dom


def _cross_pieces(w: float, L: float):
    # counter-clockwise starting at (L, -w); normals point outward
    verts = [
        (L, -w), (L, w), (w, w), (w, L), (-w, L), (-w, w),
        (-L, w), (-L, -w), (-w, -w), (-w, -L), (w, -L), (w, -w),
    ]
    pieces = []
    m = len(verts)
    for i in range(m):
        p0 = np.asarray(verts[i], float)
        p1 = np.asarray(verts[(i + 1) % m], float)
        tau = (p1 - p0) / np.linalg.norm(p1 - p0)
        n = np.array([tau[1], -tau[0]])  # outward for CCW orientation
        pieces.append(LinePiece(tuple(p0), tuple(p1), tuple(n)))
    return verts, pieces


def nonlocal_cross(half_width=0.5, half_length=1.0, pin=None) -> DomainSpec:
    w, L = float(half_width), float(half_length)
    verts, pieces = _cross_pieces(w, L)
    dom = DomainSpec(
        shape="cross", role="nonlocal",
        params={"half_width": w, "half_length": L},
        interface_pieces=pieces,
    )
    m = len(verts)
    for i in range(m):
        c = np.asarray(verts[i], float)
        prev = pieces[(i - 1) % m]
        nxt = pieces[i]
        dom.corners.append(_make_corner(dom, c, (i - 1) % m, i, prev, nxt))
    if pin is not None:
        dom.pinned_points.append(tuple(pin))
    return dom


def _make_corner(dom: DomainSpec, c, idx_a: int, idx_b: int, piece_a: LinePiece, piece_b: LinePiece) -> Corner:
    """Canonicalize a corner: label segments so the CCW sweep from segment 1's
    ray direction by the interior angle reaches segment 2's ray direction."""
    def ray_dir(piece):
        p0, p1, _ = piece.as_arrays()
        if np.linalg.norm(p0 - c) < 1e-12:
            return (p1 - p0) / np.linalg.norm(p1 - p0), np.linalg.norm(p1 - p0)
        return (p0 - p1) / np.linalg.norm(p1 - p0), np.linalg.norm(p1 - p0)

    ea, la = ray_dir(piece_a)
    eb, lb = ray_dir(piece_b)
    pa = np.arctan2(ea[1], ea[0])
    pb = np.arctan2(eb[1], eb[0])
    for (e1, l1, i1, phi1), (e2, l2, i2, phi2) in (
        ((ea, la, idx_a, pa), (eb, lb, idx_b, pb)),
        ((eb, lb, idx_b, pb), (ea, la, idx_a, pa)),
    ):
        theta = (phi2 - phi1) % (2 * np.pi)
        bis = phi1 + 0.5 * theta
        probe = np.asarray(c, float) + 1e-7 * np.array([np.cos(bis), np.sin(bis)])
        if dom.contains(probe[None, :])[0]:
            corner = Corner(
                point=tuple(np.asarray(c, float)), theta=float(theta),
                rotation=float(np.pi - phi1), seg1=i1, seg2=i2,
                seg1_len=float(l1), seg2_len=float(l2),
            )
            n1, _, n2, _ = corner.frames()
            # frame convention check against the stored outward normals
            piece1 = dom.interface_pieces[i1]
            piece2 = dom.interface_pieces[i2]
            assert np.allclose(n1, piece1.normal, atol=1e-9), "corner frame mismatch"
            assert np.allclose(n2, piece2.normal, atol=1e-9), "corner frame mismatch"
            return corner
    raise GeometryError("could not orient corner")


def local_rectangle(lo=(1.0, 0.0), hi=(2.0, 1.0), interface_side="left") -> DomainSpec:
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    sides = {
        "right": LinePiece((hi[0], lo[1]), (hi[0], hi[1]), (1.0, 0.0)),
        "left": LinePiece((lo[0], hi[1]), (lo[0], lo[1]), (-1.0, 0.0)),
        "top": LinePiece((hi[0], hi[1]), (lo[0], hi[1]), (0.0, 1.0)),
        "bottom": LinePiece((lo[0], lo[1]), (hi[0], lo[1]), (0.0, -1.0)),
    }
    iface = [sides[interface_side]]
    diri = [sides[s] for s in ("right", "left", "top", "bottom") if s != interface_side]
    return DomainSpec(
        shape="rectangle", role="local",
        params={"lo": tuple(lo), "hi": tuple(hi), "interface_side": interface_side},
        interface_pieces=iface, dirichlet_pieces=diri,
    )


def local_box_minus_disk(lo=(-2.0, -2.0), hi=(2.0, 2.0), center=(0.0, 0.0), radius=1.0) -> DomainSpec:
    dom = DomainSpec(
        shape="box_minus_disk", role="local",
        params={"lo": tuple(lo), "hi": tuple(hi), "center": tuple(center), "radius": float(radius)},
        interface_pieces=[ArcPiece(tuple(center), float(radius))],
    )
    dom.dirichlet_pieces = _box_perimeter_pieces(lo, hi)
    return dom


def local_box_minus_cross(lo=(-2.0, -2.0), hi=(2.0, 2.0), half_width=0.5, half_length=1.0) -> DomainSpec:
    _, pieces = _cross_pieces(float(half_width), float(half_length))
    dom = DomainSpec(
        shape="box_minus_cross", role="local",
        params={"lo": tuple(lo), "hi": tuple(hi),
                "half_width": float(half_width), "half_length": float(half_length)},
        interface_pieces=pieces,
    )
    dom.dirichlet_pieces = _box_perimeter_pieces(lo, hi)
    return dom


def _box_perimeter_pieces(lo, hi):
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    return [
        LinePiece((lo[0], lo[1]), (hi[0], lo[1]), (0.0, -1.0)),
        LinePiece((hi[0], lo[1]), (hi[0], hi[1]), (1.0, 0.0)),
        LinePiece((hi[0], hi[1]), (lo[0], hi[1]), (0.0, 1.0)),
        LinePiece((lo[0], hi[1]), (lo[0], lo[1]), (-1.0, 0.0)),
    ]


def domain_from_config(text: str) -> DomainSpec:
    """Parse a key = value domain description (see README for keys)."""
    kv = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise GeometryError(f"bad config line {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v

    def fpair(key, default):
        if key not in kv:
            return default
        a, b = kv[key].split()
        return (float(a), float(b))

    shape = kv.get("shape")
    if shape == "square":
        return nonlocal_square(fpair("corner_lo", (0, 0)), fpair("corner_hi", (1, 1)),
                               kv.get("interface_side", "right"))
    if shape == "disk":
        pin = fpair("pin", None)
        return nonlocal_disk(fpair("center", (0, 0)), float(kv.get("radius", 1.0)), pin)
    if shape == "cross":
        pin = fpair("pin", None)
        return nonlocal_cross(float(kv.get("half_width", 0.5)),
                              float(kv.get("half_length", 1.0)), pin)
    if shape == "rectangle":
        return local_rectangle(fpair("corner_lo", (1, 0)), fpair("corner_hi", (2, 1)),
                               kv.get("interface_side", "left"))
    if shape == "box_minus_disk":
        return local_box_minus_disk(fpair("corner_lo", (-2, -2)), fpair("corner_hi", (2, 2)),
                                    fpair("center", (0, 0)), float(kv.get("radius", 1.0)))
    if shape == "box_minus_cross":
        return local_box_minus_cross(fpair("corner_lo", (-2, -2)), fpair("corner_hi", (2, 2)),
                                     float(kv.get("half_width", 0.5)),
                                     float(kv.get("half_length", 1.0)))
    raise GeometryError(f"unknown shape {shape!r}")


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------

class ConstrainedRegion:
    """Nonlocal domain together with its Dirichlet collar.

    Collar rows integrate real kernel interactions over this region (every
    point of it carries a solution value or Dirichlet data); the surface
    correction moments are taken only over the remaining true exterior.
    """

    def __init__(self, domain: DomainSpec, collar_width: float):
        self.domain = domain
        self.collar_width = collar_width
        seen = {}
        for piece in domain.dirichlet_pieces:
            p0, p1, _ = piece.as_arrays()
            for q in (p0, p1):
                seen[(round(q[0], 12), round(q[1], 12))] = q
        self._endpoints = list(seen.values())

    def contains(self, pts, tol: float = 1e-12) -> np.ndarray:
        inside = self.domain.contains(pts, tol)
        if not self.domain.dirichlet_pieces:
            return inside
        return inside | (self.domain.dist_to_dirichlet(pts) <= self.collar_width + tol)

    def ray_crossings(self, x, phis, delta: float) -> np.ndarray:
        cands = [self.domain.ray_crossings(x, phis, delta)]
        x = np.asarray(x, float)
        phis = np.asarray(phis, float)
        e = np.stack([np.cos(phis), np.sin(phis)], axis=-1)
        w = self.collar_width
        for piece in self.domain.dirichlet_pieces:
            p0, p1, n = piece.as_arrays()
            # only the outer offset line can bound the collar region
            den = e @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                t = ((p0 - x) @ n + w) / den
            t = np.where(np.abs(den) < 1e-300, np.inf, t)
            cands.append(t[:, None])
        for c in self._endpoints:
            v = x - c
            b = e @ v
            disc = b**2 - (v @ v - w**2)
            ok = disc >= 0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            cands.append(np.where(ok, -b - sq, np.inf)[:, None])
            cands.append(np.where(ok, -b + sq, np.inf)[:, None])
        t = np.concatenate(cands, axis=1)
        return np.where((t > 1e-14) & (t < delta), t, delta)

    def seed_angles(self, x, delta: float) -> np.ndarray:
        seeds = list(self.domain.seed_angles(x, delta))
        x = np.asarray(x, float)
        for c in self._endpoints:
            v = np.asarray(c) - x
            rho = np.linalg.norm(v)
            if 0 < rho < 2 * delta + self.collar_width:
                base = np.arctan2(v[1], v[0])
                seeds.append(base)
                if rho > self.collar_width:
                    # rays tangent to the endpoint circle: sqrt-kinks of the integrand
                    half = np.arcsin(min(1.0, self.collar_width / rho))
                    seeds.extend([base - half, base + half])
        return np.asarray(seeds)


INTERIOR, COLLAR_INTERFACE, COLLAR_DIRICHLET = 0, 1, 2


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 2)
    h: float
    delta: float
    labels: np.ndarray  # (N,) int
    domain: DomainSpec
    pin_indices: np.ndarray  # extra Dirichlet-pinned point indices
    fill_distance: float

    @property
    def n(self) -> int:
        return len(self.points)

    def indices(self, label: int) -> np.ndarray:
        return np.where(self.labels == label)[0]

    @property
    def dirichlet_indices(self) -> np.ndarray:
        idx = set(self.indices(COLLAR_DIRICHLET).tolist()) | set(self.pin_indices.tolist())
        return np.array(sorted(idx), dtype=int)

    @property
    def unknown_indices(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.dirichlet_indices] = False
        return np.where(mask)[0]


def generate_point_cloud(domain: DomainSpec, h: float, delta: float, warn=None) -> PointCloud:
    """Cartesian lattice clipped to the nonlocal domain plus its Dirichlet collar."""
    if domain.role != "nonlocal":
        raise GeometryError("point clouds are generated for nonlocal domains")
    if h <= 0:
        raise GeometryError("h must be positive")
    if delta < 2.0 * h - 1e-12:
        raise GeometryError(f"stencil-deficient horizon: delta/h = {delta / h:.3f} < 2")
    if delta > domain.feature_size() + 1e-12 and warn is not None:
        warn(f"horizon {delta} exceeds the minimal feature size {domain.feature_size()}")

    pts_probe = np.array([[0.0, 0.0]])
    lo, hi = _domain_bbox(domain)
    i0 = int(np.floor((lo[0] - delta) / h)) - 1
    i1 = int(np.ceil((hi[0] + delta) / h)) + 1
    j0 = int(np.floor((lo[1] - delta) / h)) - 1
    j1 = int(np.ceil((hi[1] + delta) / h)) + 1
    xs = np.arange(i0, i1 + 1) * h
    ys = np.arange(j0, j1 + 1) * h
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])

    tol = 1e-9 * max(1.0, h)
    sdf = domain.signed_distance(pts)
    inside = sdf <= tol
    d_iface = domain.dist_to_interface(pts)
    labels = np.full(len(pts), -1, dtype=int)
    labels[inside] = np.where(d_iface[inside] <= delta + 1e-12, COLLAR_INTERFACE, INTERIOR)
    if domain.dirichlet_pieces:
        d_diri = domain.dist_to_dirichlet(pts)
        outside_collar = (~inside) & (d_diri <= delta + 1e-12)
        labels[outside_collar] = COLLAR_DIRICHLET
    keep = labels >= 0
    pts = pts[keep]
    labels = labels[keep]
    if len(pts) == 0:
        raise GeometryError("empty domain at this resolution")

    tree = cKDTree(pts)
    dist, _ = tree.query(pts, k=2)
    fill = float(dist[:, 1].max())

    pins = []
    for pin in domain.pinned_points:
        _, idx = tree.query(np.asarray(pin, float))
        pins.append(int(idx))
    del pts_probe
    return PointCloud(points=pts, h=h, delta=delta, labels=labels, domain=domain,
                      pin_indices=np.array(sorted(set(pins)), dtype=int), fill_distance=fill)


def _domain_bbox(domain: DomainSpec):
    if domain.shape in ("square", "rectangle"):
        return np.asarray(domain.params["lo"], float), np.asarray(domain.params["hi"], float)
    if domain.shape == "disk":
        c = np.asarray(domain.params["center"], float)
        r = domain.params["radius"]
        return c - r, c + r
    if domain.shape == "cross":
        L = domain.params["half_length"]
        return np.array([-L, -L]), np.array([L, L])
    lo = np.asarray(domain.params["lo"], float)
    hi = np.asarray(domain.params["hi"], float)
    return lo, hi


# ---------------------------------------------------------------------------
# Triangulations (local side)
# ---------------------------------------------------------------------------

TAG_INTERIOR, TAG_INTERFACE, TAG_DIRICHLET = 0, 1, 2


@dataclass
class TriMesh:
    nodes: np.ndarray  # (Nn, 2)
    tris: np.ndarray  # (Ne, 3) CCW
    node_tags: np.ndarray  # (Nn,)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def areas(self) -> np.ndarray:
        p = self.nodes[self.tris]
        return 0.5 * np.abs(
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
        )

    def interface_nodes(self) -> np.ndarray:
        return np.where(self.node_tags == TAG_INTERFACE)[0]

    def dirichlet_nodes(self) -> np.ndarray:
        return np.where(self.node_tags == TAG_DIRICHLET)[0]


def generate_mesh(domain: DomainSpec, h: float) -> TriMesh:
    """Boundary-snapped structured triangulation of a local domain."""
    if domain.role != "local":
        raise GeometryError("meshes are generated for local domains")
    lo = np.asarray(domain.params["lo"], float)
    hi = np.asarray(domain.params["hi"], float)
    nx = int(round((hi[0] - lo[0]) / h))
    ny = int(round((hi[1] - lo[1]) / h))
    if abs(nx * h - (hi[0] - lo[0])) > 1e-9 or abs(ny * h - (hi[1] - lo[1])) > 1e-9:
        raise GeometryError("h must divide the box dimensions")
    xs = lo[0] + np.arange(nx + 1) * h
    ys = lo[1] + np.arange(ny + 1) * h
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    has_hole = domain.shape in ("box_minus_disk", "box_minus_cross")
    tol = 1e-9 * max(1.0, h)
    on_iface = np.zeros(len(nodes), dtype=bool)
    if has_hole:
        hole = domain.hole_domain()
        sdf = hole.signed_distance(nodes)
        # h/sqrt(2) reach guarantees cells crossed by the interface always get
        # their vertices pulled onto it (area error O(h^2), no inversions)
        snap = np.abs(sdf) <= h / np.sqrt(2.0) + 1e-12
        for i in np.where(snap)[0]:
            best = None
            best_d = np.inf
            for piece in domain.interface_pieces:
                foot, d = piece.nearest(nodes[i])
                if d < best_d:
                    best, best_d = foot, d
            nodes[i] = best
        sdf = hole.signed_distance(nodes)
        on_iface = np.abs(sdf) <= tol
    elif domain.shape == "rectangle":
        piece = domain.interface_pieces[0]
        p0, p1, _ = piece.as_arrays()
        seg = p1 - p0
        t = np.clip((nodes - p0) @ seg / (seg @ seg), 0.0, 1.0)
        foot = p0 + t[:, None] * seg
        on_iface = np.linalg.norm(nodes - foot, axis=1) <= tol

    def nid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            tris.append([a, b, c])
            tris.append([a, c, d])
    tris = np.asarray(tris, dtype=int)

    if has_hole:
        hole = domain.hole_domain()
        cent = nodes[tris].mean(axis=1)
        keep = hole.signed_distance(cent) > 0
        vert_inside = hole.signed_distance(nodes) < -tol
        keep &= ~vert_inside[tris].any(axis=1)
        tris = tris[keep]

    # orientation and degeneracy
    p = nodes[tris]
    area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 1, 1] - p[:, 0, 1]
    ) * (p[:, 2, 0] - p[:, 0, 0])
    flip = area2 < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    good = np.abs(area2) > 1e-12 * h * h
    tris = tris[good]

    used = np.unique(tris)
    remap = -np.ones(len(nodes), dtype=int)
    remap[used] = np.arange(len(used))
    nodes = nodes[used]
    on_iface = on_iface[used]
    tris = remap[tris]

    tags = np.zeros(len(nodes), dtype=int)
    on_outer = (
        (np.abs(nodes[:, 0] - lo[0]) <= tol) | (np.abs(nodes[:, 0] - hi[0]) <= tol)
        | (np.abs(nodes[:, 1] - lo[1]) <= tol) | (np.abs(nodes[:, 1] - hi[1]) <= tol)
    )
    if domain.shape == "rectangle":
        side = domain.params.get("interface_side", "left")
        # outer-boundary (Dirichlet) tagging wins at the two shared corners
        tags[on_iface] = TAG_INTERFACE
        corner_mask = on_iface & (
            (np.abs(nodes[:, 1] - lo[1]) <= tol) | (np.abs(nodes[:, 1] - hi[1]) <= tol)
        )
        if side in ("top", "bottom"):
            corner_mask = on_iface & (
                (np.abs(nodes[:, 0] - lo[0]) <= tol) | (np.abs(nodes[:, 0] - hi[0]) <= tol)
            )
        tags[on_outer & ~on_iface] = TAG_DIRICHLET
        tags[corner_mask] = TAG_DIRICHLET
    else:
        tags[on_outer] = TAG_DIRICHLET
        tags[on_iface] = TAG_INTERFACE
    return TriMesh(nodes=nodes, tris=tris, node_tags=tags)


def save_mesh(mesh: TriMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_nodes} {len(mesh.tris)}\n")
        for i, (xy, tag) in enumerate(zip(mesh.nodes, mesh.node_tags)):
            fh.write(f"{i} {xy[0]:.17g} {xy[1]:.17g} {int(tag)}\n")
        for k, tri in enumerate(mesh.tris):
            fh.write(f"{k} {tri[0]} {tri[1]} {tri[2]}\n")


def load_mesh(path) -> TriMesh:
    with open(path) as fh:
        header = fh.readline().split()
        nn, ne = int(header[0]), int(header[1])
        nodes = np.empty((nn, 2))
        tags = np.empty(nn, dtype=int)
        for _ in range(nn):
            parts = fh.readline().split()
            i = int(parts[0])
            nodes[i] = (float(parts[1]), float(parts[2]))
            tags[i] = int(parts[3])
        tris = np.empty((ne, 3), dtype=int)
        for _ in range(ne):
            parts = fh.readline().split()
            tris[int(parts[0])] = [int(parts[1]), int(parts[2]), int(parts[3])]
    return TriMesh(nodes=nodes, tris=tris, node_tags=tags)
