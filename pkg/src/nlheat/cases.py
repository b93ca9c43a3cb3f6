"""Manufactured cases for the convergence, patch, and coupling experiments.

Each case carries the analytic limit on the nonlocal side (with gradient and
Hessian, from which the Robin datum g = beta*u + du/dn and its tangential
derivative are composed), the loadings, and the Dirichlet data; coupled
cases add the local-side solution and loading.  A consistency test suite
checks every registered case against its own PDE.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import geometry as geom


@dataclass
class ManufacturedCase:
    name: str
    alpha_nl: float
    u0: Callable  # (x, y, t) -> analytic local limit of the nonlocal solution
    grad_u0: Callable  # -> (ux, uy)
    hess_u0: Callable  # -> (uxx, uxy, uyy)
    f_nl: Callable
    u_dirichlet_nl: Callable
    u_ic: Callable
    alpha_l: float | None = None
    u_l: Callable | None = None
    f_l: Callable | None = None
    u_dirichlet_l: Callable | None = None

    @property
    def coupled(self) -> bool:
        return self.alpha_l is not None


@dataclass
class CaseBoundaryData:
    """Adapter giving the nonlocal solver its loads and Robin data at fixed beta."""

    case: ManufacturedCase
    beta: float

    def f(self, x, y, t):
        return self.case.f_nl(x, y, t)

    def g(self, x, y, t, nx, ny):
        ux, uy = self.case.grad_u0(x, y, t)
        return self.beta * self.case.u0(x, y, t) + nx * ux + ny * uy

    def gp(self, x, y, t, nx, ny, px, py):
        ux, uy = self.case.grad_u0(x, y, t)
        uxx, uxy, uyy = self.case.hess_u0(x, y, t)
        hn_x = uxx * nx + uxy * ny
        hn_y = uxy * nx + uyy * ny
        return self.beta * (px * ux + py * uy) + px * hn_x + py * hn_y

    def u_dirichlet(self, x, y, t):
        return self.case.u_dirichlet_nl(x, y, t)


def _zero(x, y, t=0.0):
    return np.zeros_like(np.asarray(x, dtype=float))


def _trig_case(name, tau, dtau, alpha_nl, alpha_l=None, f_l_extra=None):
    """u = tau(t) sin(x) cos(y) on both sides; f from the heat equation."""
    sc = lambda x, y: np.sin(x) * np.cos(y)

    def u0(x, y, t):
        return tau(t) * sc(x, y)

    def grad(x, y, t):
        return tau(t) * np.cos(x) * np.cos(y), -tau(t) * np.sin(x) * np.sin(y)

    def hess(x, y, t):
        return (-tau(t) * sc(x, y), -tau(t) * np.cos(x) * np.sin(y), -tau(t) * sc(x, y))

    def f_nl(x, y, t):
        return (dtau(t) + 2.0 * alpha_nl * tau(t)) * sc(x, y)

    case = ManufacturedCase(
        name=name, alpha_nl=alpha_nl, u0=u0, grad_u0=grad, hess_u0=hess,
        f_nl=f_nl, u_dirichlet_nl=u0, u_ic=lambda x, y: u0(x, y, 0.0),
    )
    if alpha_l is not None:
        case.alpha_l = alpha_l
        case.u_l = u0
        if f_l_extra is None:
            case.f_l = lambda x, y, t: (dtau(t) + 2.0 * alpha_l * tau(t)) * sc(x, y)
        else:
            case.f_l = f_l_extra
        case.u_dirichlet_l = u0
    return case


def _poly_patch_case(name, degree, alpha_nl, alpha_l=None):
    """Steady patch solutions u = x or u = x^2 with matching data."""
    if degree == 1:
        u = lambda x, y, t: np.asarray(x, dtype=float) + 0.0 * np.asarray(t)
        grad = lambda x, y, t: (np.ones_like(np.asarray(x, float)), _zero(x, y))
        hess = lambda x, y, t: (_zero(x, y), _zero(x, y), _zero(x, y))
        f_nl = lambda x, y, t: _zero(x, y)
        f_l = lambda x, y, t: _zero(x, y)
    elif degree == 2:
        u = lambda x, y, t: np.asarray(x, dtype=float) ** 2 + 0.0 * np.asarray(t)
        grad = lambda x, y, t: (2.0 * np.asarray(x, float), _zero(x, y))
        hess = lambda x, y, t: (2.0 * np.ones_like(np.asarray(x, float)), _zero(x, y), _zero(x, y))
        f_nl = lambda x, y, t: -2.0 * alpha_nl * np.ones_like(np.asarray(x, float))
        f_l = lambda x, y, t: -2.0 * (alpha_l or 1.0) * np.ones_like(np.asarray(x, float))
    else:
        raise ValueError("patch degree must be 1 or 2")
    case = ManufacturedCase(
        name=name, alpha_nl=alpha_nl, u0=u, grad_u0=grad, hess_u0=hess,
        f_nl=f_nl, u_dirichlet_nl=u, u_ic=lambda x, y: u(x, y, 0.0),
    )
    if alpha_l is not None:
        case.alpha_l = alpha_l
        case.u_l = u
        case.f_l = f_l
        case.u_dirichlet_l = u
    return case


def _line_hetero_b() -> ManufacturedCase:
    """Nonlocal limit t x^4 against local t (3x^2 - 2x), alpha = (1, 2)."""
    u0 = lambda x, y, t: t * np.asarray(x, float) ** 4
    grad = lambda x, y, t: (4.0 * t * np.asarray(x, float) ** 3, _zero(x, y))
    hess = lambda x, y, t: (12.0 * t * np.asarray(x, float) ** 2, _zero(x, y), _zero(x, y))
    f_nl = lambda x, y, t: np.asarray(x, float) ** 2 * (np.asarray(x, float) ** 2 - 12.0 * t)
    u_l = lambda x, y, t: t * (3.0 * np.asarray(x, float) ** 2 - 2.0 * np.asarray(x, float))
    f_l = lambda x, y, t: 3.0 * np.asarray(x, float) ** 2 - 2.0 * np.asarray(x, float) - 12.0 * t
    return ManufacturedCase(
        name="ltn-line/heteroB", alpha_nl=1.0, u0=u0, grad_u0=grad, hess_u0=hess,
        f_nl=f_nl, u_dirichlet_nl=u0, u_ic=lambda x, y: _zero(x, y),
        alpha_l=2.0, u_l=u_l, f_l=f_l, u_dirichlet_l=u_l,
    )


def _circle_hetero_b() -> ManufacturedCase:
    """Nonlocal limit t r^2 against local t (r^4 + 1)/2, alpha = (1, 10)."""
    r2 = lambda x, y: np.asarray(x, float) ** 2 + np.asarray(y, float) ** 2
    u0 = lambda x, y, t: t * r2(x, y)
    grad = lambda x, y, t: (2.0 * t * np.asarray(x, float), 2.0 * t * np.asarray(y, float))
    two = lambda x: 2.0 * np.ones_like(np.asarray(x, float))
    hess = lambda x, y, t: (t * two(x), _zero(x, y), t * two(x))
    f_nl = lambda x, y, t: r2(x, y) - 4.0 * t
    u_l = lambda x, y, t: t * (r2(x, y) ** 2 + 1.0) / 2.0
    f_l = lambda x, y, t: (r2(x, y) ** 2 + 1.0) / 2.0 - 80.0 * t * r2(x, y)
    return ManufacturedCase(
        name="ltn-circle/heteroB", alpha_nl=1.0, u0=u0, grad_u0=grad, hess_u0=hess,
        f_nl=f_nl, u_dirichlet_nl=u0, u_ic=lambda x, y: _zero(x, y),
        alpha_l=10.0, u_l=u_l, f_l=f_l, u_dirichlet_l=u_l,
    )


# experiment geometry defaults: (ratio delta/h, dt coefficient in dt = c h^2)
EXPERIMENT_DEFAULTS = {
    "bc-square": (3.9, 100.0),
    "bc-circle": (3.9, 100.0),
    "bc-cross": (3.5, 100.0),
    "ltn-line": (3.9, 10.0),
    "ltn-circle": (3.9, 10.0),
    "ltn-cross": (3.5, 100.0),
    "patch-square": (3.9, 100.0),
    "patch-line": (3.9, 10.0),
}


def nl_domain_for(exp_id: str) -> geom.DomainSpec:
    if exp_id in ("bc-square", "ltn-line", "patch-square", "patch-line"):
        return geom.nonlocal_square()
    if exp_id in ("bc-circle", "ltn-circle"):
        return geom.nonlocal_disk(pin=(0.0, -1.0))
    if exp_id in ("bc-cross", "ltn-cross"):
        return geom.nonlocal_cross(pin=(-1.0, -0.5))
    raise KeyError(f"unknown experiment id {exp_id!r}")


def local_domain_for(exp_id: str) -> geom.DomainSpec | None:
    if exp_id in ("ltn-line", "patch-line"):
        return geom.local_rectangle()
    if exp_id == "ltn-circle":
        return geom.local_box_minus_disk()
    if exp_id == "ltn-cross":
        return geom.local_box_minus_cross()
    return None


def registry_case(exp_id: str, variant: str = "homogeneous") -> ManufacturedCase:
    """Exact manufactured data for every experiment/variant pair."""
    t1 = (lambda t: t, lambda t: np.ones_like(np.asarray(t, float)))
    t2 = (lambda t: np.asarray(t, float) ** 2, lambda t: 2.0 * np.asarray(t, float))
    key = (exp_id, variant)
    if exp_id in ("bc-square", "bc-circle", "bc-cross"):
        if variant != "homogeneous":
            raise KeyError(f"{exp_id} has only the homogeneous variant")
        return _trig_case(f"{exp_id}/homogeneous", *t2, alpha_nl=1.0)
    if exp_id == "ltn-line":
        if variant == "homogeneous":
            return _trig_case("ltn-line/homogeneous", *t1, alpha_nl=1.0, alpha_l=1.0)
        if variant == "heteroA":
            return _trig_case("ltn-line/heteroA", *t1, alpha_nl=1.0, alpha_l=2.0)
        if variant == "heteroB":
            return _line_hetero_b()
    if exp_id == "ltn-circle":
        if variant == "homogeneous":
            return _trig_case("ltn-circle/homogeneous", *t1, alpha_nl=1.0, alpha_l=1.0)
        if variant == "heteroA":
            return _trig_case("ltn-circle/heteroA", *t1, alpha_nl=1.0, alpha_l=10.0)
        if variant == "heteroB":
            return _circle_hetero_b()
    if exp_id == "ltn-cross":
        if variant == "homogeneous":
            return _trig_case("ltn-cross/homogeneous", *t2, alpha_nl=1.0, alpha_l=1.0)
        if variant in ("heteroA", "hetero"):
            # u = t^2 sin x cos y with alpha_l = 0.1:
            # f_l = 2t sin x cos y + 0.2 t^2 sin x cos y
            sc = lambda x, y: np.sin(x) * np.cos(y)
            f_l = lambda x, y, t: (2.0 * t + 0.2 * t**2) * sc(x, y)
            return _trig_case("ltn-cross/hetero", *t2, alpha_nl=1.0, alpha_l=0.1,
                              f_l_extra=f_l)
    if exp_id == "patch-square":
        if variant == "linear":
            return _poly_patch_case("patch-square/linear", 1, alpha_nl=1.0)
        if variant == "quadratic":
            return _poly_patch_case("patch-square/quadratic", 2, alpha_nl=1.0)
    if exp_id == "patch-line":
        if variant == "linear":
            return _poly_patch_case("patch-line/linear", 1, alpha_nl=1.0, alpha_l=1.0)
        if variant == "quadratic":
            return _poly_patch_case("patch-line/quadratic", 2, alpha_nl=1.0, alpha_l=1.0)
    raise KeyError(f"unknown case {key!r}")


def case_variants(exp_id: str) -> list[str]:
    if exp_id.startswith("bc-"):
        return ["homogeneous"]
    if exp_id == "ltn-cross":
        return ["homogeneous", "heteroA"]
    if exp_id.startswith("ltn-"):
        return ["homogeneous", "heteroA", "heteroB"]
    if exp_id.startswith("patch-"):
        return ["linear", "quadratic"]
    raise KeyError(f"unknown experiment id {exp_id!r}")


def all_experiment_ids() -> list[str]:
    return list(EXPERIMENT_DEFAULTS)
